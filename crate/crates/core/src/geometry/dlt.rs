use nalgebra::{DMatrix, Matrix3};

use super::{CorrespondenceSet, GeometryError, Homography, Point2};

/// Ratio of the second-smallest to the largest singular value of the design
/// matrix below which the solution is not unique.
const RANK_TOL: f64 = 1e-10;

/// Area tolerance for collinearity, relative to the squared span of the
/// point set.
pub(crate) const COLLINEAR_TOL: f64 = 1e-6;

/// Least-squares homography from 4 or more correspondences.
///
/// Both point sets are conditioned first: translated so their centroid is at
/// the origin and scaled so the mean distance from it is √2. The algebraic
/// system `dst × (H src) = 0` is then solved by SVD and the conditioning is
/// undone.
pub fn dlt_homography(pairs: &CorrespondenceSet) -> Result<Homography, GeometryError> {
    let n = pairs.len();
    if n < 4 {
        return Err(GeometryError::InsufficientData { needed: 4, got: n });
    }
    if pairs
        .pairs
        .iter()
        .any(|(s, d)| !s.is_finite() || !d.is_finite())
    {
        return Err(GeometryError::NonFinite);
    }
    if n == 4 {
        let src: Vec<Point2> = pairs.pairs.iter().map(|p| p.0).collect();
        let dst: Vec<Point2> = pairs.pairs.iter().map(|p| p.1).collect();
        if has_collinear_triple(&src) || has_collinear_triple(&dst) {
            return Err(GeometryError::Degenerate);
        }
    }

    let (src_n, t_src) = normalize(pairs.pairs.iter().map(|p| p.0))?;
    let (dst_n, t_dst) = normalize(pairs.pairs.iter().map(|p| p.1))?;

    // pad to at least 9 rows so the SVD returns a full right basis
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(GeometryError::Degenerate)?;
    let sv = &svd.singular_values;
    // singular values come sorted in decreasing order
    let (min_idx, _) = sv.argmin();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if sorted[0] <= 0.0 || sorted[7] / sorted[0] < RANK_TOL {
        return Err(GeometryError::Degenerate);
    }
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let t_dst_inv = t_dst.try_inverse().ok_or(GeometryError::Degenerate)?;
    Homography::new(t_dst_inv * hn * t_src).map_err(|e| match e {
        GeometryError::NotInvertible { .. } => GeometryError::Degenerate,
        other => other,
    })
}

fn normalize(
    points: impl Iterator<Item = Point2>,
) -> Result<(Vec<Point2>, Matrix3<f64>), GeometryError> {
    let pts: Vec<Point2> = points.collect();
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0) {
        return Err(GeometryError::Degenerate);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let out = pts
        .iter()
        .map(|p| Point2::new(s * (p.x - cx), s * (p.y - cy)))
        .collect();
    Ok((out, t))
}

/// True if any three of the points are collinear within
/// `COLLINEAR_TOL * span²`, where span is the bounding-box diagonal.
pub(crate) fn has_collinear_triple(points: &[Point2]) -> bool {
    let (mut lo_x, mut lo_y) = (f64::INFINITY, f64::INFINITY);
    let (mut hi_x, mut hi_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo_x = lo_x.min(p.x);
        lo_y = lo_y.min(p.y);
        hi_x = hi_x.max(p.x);
        hi_y = hi_y.max(p.y);
    }
    let span2 = (hi_x - lo_x).powi(2) + (hi_y - lo_y).powi(2);
    let tol = COLLINEAR_TOL * span2;
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let area2 = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                if 0.5 * area2.abs() <= tol {
                    return true;
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_homography;
    use proptest::prelude::*;

    fn pairs_through(h: &Homography, src: &[Point2]) -> CorrespondenceSet {
        src.iter()
            .map(|&p| (p, apply_homography(h, p).unwrap()))
            .collect()
    }

    fn unit_square() -> Vec<Point2> {
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn unit_square_identity() {
        let h = dlt_homography(&pairs_through(&Homography::identity(), &unit_square())).unwrap();
        assert!(h.max_abs_diff(&Homography::identity()) < 1e-9);
    }

    #[test]
    fn recovers_affine_map() {
        let a =
            Homography::new(Matrix3::new(1.3, 0.4, 12.0, -0.2, 0.9, -7.5, 0.0, 0.0, 1.0)).unwrap();
        let src = vec![
            Point2::new(10.0, 20.0),
            Point2::new(300.0, 15.0),
            Point2::new(280.0, 240.0),
            Point2::new(25.0, 200.0),
        ];
        let h = dlt_homography(&pairs_through(&a, &src)).unwrap();
        let rel = h.max_abs_diff(&a) / a.matrix().amax();
        assert!(rel < 1e-9, "relative error {rel}");
    }

    #[test]
    fn three_pairs_is_insufficient() {
        let src = &unit_square()[..3];
        assert_eq!(
            dlt_homography(&pairs_through(&Homography::identity(), src)),
            Err(GeometryError::InsufficientData { needed: 4, got: 3 })
        );
    }

    #[test]
    fn collinear_minimal_sample_is_degenerate() {
        let src = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(2.0, 2.0),
            Point2::new(0.0, 5.0),
        ];
        assert_eq!(
            dlt_homography(&pairs_through(&Homography::identity(), &src)),
            Err(GeometryError::Degenerate)
        );
    }

    #[test]
    fn all_points_on_a_line_is_degenerate() {
        let src: Vec<Point2> = (0..8)
            .map(|i| Point2::new(i as f64, 2.0 * i as f64))
            .collect();
        assert_eq!(
            dlt_homography(&pairs_through(&Homography::identity(), &src)),
            Err(GeometryError::Degenerate)
        );
    }

    proptest! {
        #[test]
        fn exact_recovery_from_noise_free_pairs(
            angle in -0.8f64..0.8, scale in 0.5f64..2.0,
            tx in -80.0f64..80.0, ty in -80.0f64..80.0,
            p1 in -5e-4f64..5e-4, p2 in -5e-4f64..5e-4,
            seed_pts in proptest::collection::vec((0.0f64..640.0, 0.0f64..480.0), 6..30),
        ) {
            let mut m = *Homography::similarity(angle, scale, tx, ty).unwrap().matrix();
            m[(2, 0)] = p1;
            m[(2, 1)] = p2;
            let truth = Homography::new(m).unwrap();
            let src: Vec<Point2> = seed_pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            prop_assume!(!has_collinear_triple(&src[..4]));
            let h = dlt_homography(&pairs_through(&truth, &src)).unwrap();
            prop_assert!(h.max_abs_diff(&truth) < 1e-6, "diff {}", h.max_abs_diff(&truth));
        }
    }
}
