//! Per-frame input bundles and their JSON Lines file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, CorrespondenceSet, Point2};
use crate::FrameId;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("frame alignment: {0}")]
    Alignment(String),
}

/// Ground truth in camera coordinates. Velocity is the difference between
/// this frame's center and the previous frame's (zero on the first frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame: FrameId,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub vx: f64,
    pub vy: f64,
}

impl GroundTruth {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// One line of a correspondence file: `pairs` rows are `[sx, sy, dx, dy]`
/// with the source in the reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceRecord {
    pub frame: FrameId,
    pub ref_frame: FrameId,
    pub pairs: Vec<[f64; 4]>,
}

impl CorrespondenceRecord {
    pub fn correspondences(&self) -> CorrespondenceSet {
        self.pairs
            .iter()
            .map(|p| (Point2::new(p[0], p[1]), Point2::new(p[2], p[3])))
            .collect()
    }

    pub fn from_set(frame: FrameId, ref_frame: FrameId, set: &CorrespondenceSet) -> Self {
        Self {
            frame,
            ref_frame,
            pairs: set
                .pairs
                .iter()
                .map(|(s, d)| [s.x, s.y, d.x, d.y])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub frame_id: FrameId,
    pub ref_frame: FrameId,
    pub correspondences: CorrespondenceSet,
    pub ground_truth: Option<GroundTruth>,
}

/// Joins correspondence and ground-truth streams frame by frame. Frames must
/// be consecutive; ground truth, when given, must cover the same frames.
pub fn assemble(
    correspondences: &[CorrespondenceRecord],
    ground_truth: Option<&[GroundTruth]>,
) -> Result<Vec<SequenceRecord>, FormatError> {
    if let Some(gt) = ground_truth {
        if gt.len() != correspondences.len() {
            return Err(FormatError::Alignment(format!(
                "{} correspondence records but {} ground-truth records",
                correspondences.len(),
                gt.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(correspondences.len());
    for (i, c) in correspondences.iter().enumerate() {
        if i > 0 && c.frame != correspondences[i - 1].frame + 1 {
            return Err(FormatError::Alignment(format!(
                "frame {} follows frame {}",
                c.frame,
                correspondences[i - 1].frame
            )));
        }
        let gt = match ground_truth {
            Some(g) if g[i].frame != c.frame => {
                return Err(FormatError::Alignment(format!(
                    "ground truth frame {} where {} expected",
                    g[i].frame, c.frame
                )))
            }
            Some(g) => Some(g[i]),
            None => None,
        };
        out.push(SequenceRecord {
            frame_id: c.frame,
            ref_frame: c.ref_frame,
            correspondences: c.correspondences(),
            ground_truth: gt,
        });
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| FormatError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FormatError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| FormatError::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FormatError> {
    let io_err = |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| FormatError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
