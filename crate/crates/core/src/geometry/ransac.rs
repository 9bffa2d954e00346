use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dlt::has_collinear_triple;
use super::{apply_homography, dlt_homography, CorrespondenceSet, Homography, Point2};

/// Refit rounds on the consensus set after the sampling phase.
const MAX_REFITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// Upper bound on sampling rounds.
    pub iterations: usize,
    /// Reprojection error (px) below which a pair supports a model.
    pub inlier_threshold: f64,
    /// Fewer supporters than this and no homography is reported.
    pub min_inliers: usize,
    /// Outlier ratios above this also report no homography.
    pub max_outlier_ratio: f64,
    /// Probability of having drawn one all-inlier sample at which sampling
    /// may stop early. Set to 1.0 to always run `iterations` rounds.
    pub confidence: f64,
    /// Base seed; the pipeline derives a per-frame stream from it.
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold: 3.0,
            min_inliers: 8,
            max_outlier_ratio: 0.7,
            confidence: 0.999,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacReport {
    pub homography: Option<Homography>,
    pub inlier_count: usize,
    pub outlier_ratio: f64,
    pub mean_inlier_reprojection_error: f64,
    pub iterations_run: usize,
    pub inliers: Vec<usize>,
}

impl RansacReport {
    fn empty() -> Self {
        Self {
            homography: None,
            inlier_count: 0,
            outlier_ratio: 1.0,
            mean_inlier_reprojection_error: 0.0,
            iterations_run: 0,
            inliers: Vec::new(),
        }
    }
}

fn reprojection_error(h: &Homography, src: Point2, dst: Point2) -> f64 {
    match apply_homography(h, src) {
        Ok(p) => p.distance(&dst),
        Err(_) => f64::INFINITY,
    }
}

fn consensus(h: &Homography, pairs: &CorrespondenceSet, threshold: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut err_sum = 0.0;
    for (i, &(s, d)) in pairs.pairs.iter().enumerate() {
        let e = reprojection_error(h, s, d);
        if e < threshold {
            inliers.push(i);
            err_sum += e;
        }
    }
    (inliers, err_sum)
}

fn required_iterations(inlier_fraction: f64, confidence: f64, cap: usize) -> usize {
    if confidence >= 1.0 {
        return cap;
    }
    let w4 = inlier_fraction.powi(4);
    if w4 >= 1.0 {
        return 1;
    }
    if w4 <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w4).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Robust homography fit: minimal 4-point samples scored by inlier count
/// (ties broken by summed inlier error), followed by least-squares refits on
/// the consensus set until it stops changing.
///
/// The report carries no homography when there are no pairs, when fewer than
/// `min_inliers` support the best model, or when the outlier ratio exceeds
/// `max_outlier_ratio`. Callers treat that as "camera motion unknown".
pub fn ransac_homography<R: Rng + ?Sized>(
    pairs: &CorrespondenceSet,
    cfg: &RansacConfig,
    rng: &mut R,
) -> RansacReport {
    let n = pairs.len();
    if n < 4 {
        return RansacReport {
            outlier_ratio: if n == 0 { 0.0 } else { 1.0 },
            ..RansacReport::empty()
        };
    }

    let mut best: Option<(Homography, Vec<usize>, f64)> = None;
    let mut budget = cfg.iterations.max(1);
    let mut it = 0;
    while it < budget {
        it += 1;
        let sample = index::sample(rng, n, 4).into_vec();
        let src: Vec<Point2> = sample.iter().map(|&i| pairs.pairs[i].0).collect();
        if has_collinear_triple(&src) {
            continue;
        }
        let Ok(h) = dlt_homography(&pairs.subset(&sample)) else {
            continue;
        };
        let (inliers, err) = consensus(&h, pairs, cfg.inlier_threshold);
        let better = match &best {
            None => true,
            Some((_, bi, be)) => {
                inliers.len() > bi.len() || (inliers.len() == bi.len() && err < *be)
            }
        };
        if better {
            budget = budget.min(required_iterations(
                inliers.len() as f64 / n as f64,
                cfg.confidence,
                cfg.iterations.max(1),
            ));
            best = Some((h, inliers, err));
        }
    }

    let Some((mut h, mut inliers, _)) = best else {
        return RansacReport {
            iterations_run: it,
            ..RansacReport::empty()
        };
    };

    for _ in 0..MAX_REFITS {
        if inliers.len() < 4 {
            break;
        }
        let Ok(refit) = dlt_homography(&pairs.subset(&inliers)) else {
            break;
        };
        let (next, _) = consensus(&refit, pairs, cfg.inlier_threshold);
        if next.len() < inliers.len() {
            break;
        }
        let stable = next == inliers;
        h = refit;
        inliers = next;
        if stable {
            break;
        }
    }

    let (inliers, err_sum) = consensus(&h, pairs, cfg.inlier_threshold);
    let inlier_count = inliers.len();
    let outlier_ratio = 1.0 - inlier_count as f64 / n as f64;
    let mean_err = if inlier_count > 0 {
        err_sum / inlier_count as f64
    } else {
        0.0
    };
    let accepted = inlier_count >= cfg.min_inliers && outlier_ratio <= cfg.max_outlier_ratio;
    RansacReport {
        homography: accepted.then_some(h),
        inlier_count,
        outlier_ratio,
        mean_inlier_reprojection_error: mean_err,
        iterations_run: it,
        inliers,
    }
}
