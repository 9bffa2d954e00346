//! Planar projective geometry: homographies between a reference frame and a
//! later frame, and the box projection used to carry object state between
//! reference and camera coordinates.

mod dlt;
mod ransac;

pub use dlt::dlt_homography;
pub use ransac::{ransac_homography, RansacConfig, RansacReport};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this magnitude the bottom-right entry is treated as zero when
/// choosing the canonical scale of a homography.
pub const CANONICAL_H33_EPS: f64 = 1e-12;

/// Default invertibility tolerance on the canonical matrix determinant.
pub const DEFAULT_DET_EPS: f64 = 1e-12;

/// Projective divisions with `|w|` below this are points at infinity.
pub const W_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("point maps to infinity (w = {w:e})")]
    PointAtInfinity { w: f64 },
    #[error("homography is not invertible (|det| = {det:e})")]
    NotInvertible { det: f64 },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("box size must be positive, got {w} x {h}")]
    InvalidSize { w: f64, h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned box given by its center and size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = ((self.x + self.w / 2.0).min(other.x + other.w / 2.0)
            - (self.x - self.w / 2.0).max(other.x - other.w / 2.0))
        .max(0.0);
        let iy = ((self.y + self.h / 2.0).min(other.y + other.h / 2.0)
            - (self.y - self.h / 2.0).max(other.y - other.h / 2.0))
        .max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// A 3x3 projective map stored in canonical scale.
///
/// The canonical representative has `m[(2,2)] == 1` whenever that entry is
/// non-negligible, and otherwise unit Frobenius norm with a positive first
/// nonzero entry, so two homographies describing the same map compare equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        Self::with_det_eps(m, DEFAULT_DET_EPS)
    }

    pub fn with_det_eps(m: Matrix3<f64>, det_eps: f64) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let m = canonicalize(m).ok_or(GeometryError::NotInvertible { det: 0.0 })?;
        let det = m.determinant();
        if !(det.abs() > det_eps) {
            return Err(GeometryError::NotInvertible { det });
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    /// Rotation by `angle` radians and uniform `scale` about the origin,
    /// followed by a translation.
    pub fn similarity(angle: f64, scale: f64, tx: f64, ty: f64) -> Result<Self, GeometryError> {
        let (s, c) = angle.sin_cos();
        Self::new(Matrix3::new(
            scale * c,
            -scale * s,
            tx,
            scale * s,
            scale * c,
            ty,
            0.0,
            0.0,
            1.0,
        ))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self.m.try_inverse().ok_or(GeometryError::NotInvertible {
            det: self.m.determinant(),
        })?;
        Self::new(inv)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        Self::new(self.m * other.m)
    }

    pub fn apply(&self, p: Point2) -> Result<Point2, GeometryError> {
        apply_homography(self, p)
    }

    /// Square root of the absolute Jacobian determinant at `p`: the local
    /// isotropic scale factor of the map.
    pub fn local_scale(&self, p: Point2) -> Result<f64, GeometryError> {
        let m = &self.m;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        if w.abs() < W_EPS {
            return Err(GeometryError::PointAtInfinity { w });
        }
        let q = apply_homography(self, p)?;
        let j00 = (m[(0, 0)] - q.x * m[(2, 0)]) / w;
        let j01 = (m[(0, 1)] - q.x * m[(2, 1)]) / w;
        let j10 = (m[(1, 0)] - q.y * m[(2, 0)]) / w;
        let j11 = (m[(1, 1)] - q.y * m[(2, 1)]) / w;
        Ok((j00 * j11 - j01 * j10).abs().sqrt())
    }

    /// Largest absolute entry-wise difference between canonical forms.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.m - other.m).amax()
    }
}

fn canonicalize(m: Matrix3<f64>) -> Option<Matrix3<f64>> {
    let h33 = m[(2, 2)];
    if h33.abs() > CANONICAL_H33_EPS {
        return Some(m / h33);
    }
    let norm = m.norm();
    if norm == 0.0 {
        return None;
    }
    let mut m = m / norm;
    // row-major scan for the sign convention
    let first = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|rc| m[rc])
        .find(|v| v.abs() > CANONICAL_H33_EPS)?;
    if first < 0.0 {
        m = -m;
    }
    Some(m)
}

/// Background correspondences: `src` in the reference frame, `dst` in the
/// frame being decoupled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(Point2, Point2)>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Point2, Point2)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            pairs: indices.iter().map(|&i| self.pairs[i]).collect(),
        }
    }
}

impl FromIterator<(Point2, Point2)> for CorrespondenceSet {
    fn from_iter<I: IntoIterator<Item = (Point2, Point2)>>(iter: I) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2, GeometryError> {
    if !p.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let m = &h.m;
    let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    if w.abs() < W_EPS {
        return Err(GeometryError::PointAtInfinity { w });
    }
    let x = (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w;
    let y = (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w;
    Ok(Point2::new(x, y))
}

/// Projects a box's center and four corners through `h`.
///
/// The returned width is the mean length of the two projected horizontal
/// edges, the height the mean of the two projected vertical edges.
pub fn project_box(
    h: &Homography,
    center: Point2,
    w: f64,
    h_box: f64,
) -> Result<(Point2, f64, f64), GeometryError> {
    if !(w > 0.0 && h_box > 0.0) {
        return Err(GeometryError::InvalidSize { w, h: h_box });
    }
    let (hw, hh) = (w / 2.0, h_box / 2.0);
    let c = apply_homography(h, center)?;
    let tl = apply_homography(h, Point2::new(center.x - hw, center.y - hh))?;
    let tr = apply_homography(h, Point2::new(center.x + hw, center.y - hh))?;
    let br = apply_homography(h, Point2::new(center.x + hw, center.y + hh))?;
    let bl = apply_homography(h, Point2::new(center.x - hw, center.y + hh))?;
    let width = 0.5 * (tl.distance(&tr) + bl.distance(&br));
    let height = 0.5 * (tl.distance(&bl) + tr.distance(&br));
    if !(width > 0.0 && height > 0.0) {
        return Err(GeometryError::InvalidSize {
            w: width,
            h: height,
        });
    }
    Ok((c, width, height))
}

/// Convenience wrapper over [`project_box`] for [`BBox`] values.
pub fn project_bbox(h: &Homography, b: &BBox) -> Result<BBox, GeometryError> {
    let (c, w, hh) = project_box(h, b.center(), b.w, b.h)?;
    Ok(BBox::new(c.x, c.y, w, hh))
}
