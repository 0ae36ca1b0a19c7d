//! Core two-view geometry.
//!
//! A correspondence pairs a keypoint and its local affine frame in one image
//! with the matched keypoint and frame in the other. The frame matrix embeds
//! position and local structure into a single 3×3 affine map; the local
//! transform of a correspondence is the map carrying one side onto the other.
//! Everything downstream (compatibility scores, ground-truth labeling) is
//! built from these plus epipolar distances against an essential matrix.
//!
//! All coordinates are camera-normalized (focal length 1), so thresholds
//! such as the 1e-4 labeling threshold are meaningful without knowing image
//! dimensions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Determinant magnitude below which a frame is rejected as degenerate.
pub const FRAME_DET_EPS: f64 = 1e-9;

/// Homogeneous depth magnitude below which a projection is undefined.
pub const PROJECTION_EPS: f64 = 1e-12;

/// Squared epipolar-line direction norm below which one side of the
/// symmetric epipolar distance is undefined (norm below 1e-12).
pub const EPIPOLAR_DIR_EPS_SQ: f64 = 1e-24;

/// Default ground-truth labeling threshold on the symmetric epipolar distance.
pub const DEFAULT_LABEL_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate affine frame (|det| = {det:.3e} <= {FRAME_DET_EPS:.0e})")]
    DegenerateFrame { det: f64 },
    #[error("projection at infinity (homogeneous depth {depth:.3e})")]
    ProjectionAtInfinity { depth: f64 },
    #[error("both epipolar line directions degenerate")]
    DegenerateEpipolar,
    #[error("matrix is not a valid essential matrix: {reason}")]
    InvalidEssential { reason: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
}

/// A 2D point in camera-normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// The 2×2 local affine matrix attached to a keypoint, describing the shape
/// of the local patch around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFrame {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl AffineFrame {
    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0)
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > FRAME_DET_EPS
    }

    pub fn is_finite(&self) -> bool {
        [self.a11, self.a12, self.a21, self.a22]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Matrix product `self * other`.
    pub fn compose(&self, other: &AffineFrame) -> AffineFrame {
        AffineFrame::new(
            self.a11 * other.a11 + self.a12 * other.a21,
            self.a11 * other.a12 + self.a12 * other.a22,
            self.a21 * other.a11 + self.a22 * other.a21,
            self.a21 * other.a12 + self.a22 * other.a22,
        )
    }

    pub fn apply(&self, p: &Point2) -> Point2 {
        Point2::new(
            self.a11 * p.x + self.a12 * p.y,
            self.a21 * p.x + self.a22 * p.y,
        )
    }
}

/// A matched keypoint pair with per-side local affine frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub kp: Point2,
    pub frame: AffineFrame,
    pub kp_prime: Point2,
    pub frame_prime: AffineFrame,
}

impl Correspondence {
    pub fn new(
        kp: Point2,
        frame: AffineFrame,
        kp_prime: Point2,
        frame_prime: AffineFrame,
    ) -> Self {
        Self {
            kp,
            frame,
            kp_prime,
            frame_prime,
        }
    }

    /// Checks the type invariants: finite coordinates, invertible frames.
    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.kp.is_finite()
            && self.kp_prime.is_finite()
            && self.frame.is_finite()
            && self.frame_prime.is_finite())
        {
            return Err(GeomError::NonFinite {
                what: "correspondence",
            });
        }
        for f in [&self.frame, &self.frame_prime] {
            if !f.is_invertible() {
                return Err(GeomError::DegenerateFrame { det: f.det() });
            }
        }
        Ok(())
    }

    /// The correspondence as the concatenated 4-vector (x, y, x', y').
    pub fn as_vec4(&self) -> [f64; 4] {
        [self.kp.x, self.kp.y, self.kp_prime.x, self.kp_prime.y]
    }
}

/// A 3×3 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [f64; 9]);

impl Mat3 {
    pub fn identity() -> Self {
        Mat3([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[3 * r + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.0[3 * r + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += self.get(r, k) * other.get(k, c);
                }
                out[3 * r + c] = s;
            }
        }
        Mat3(out)
    }

    pub fn mul_vec(&self, v: &[f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
        ]
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = self.0;
        for v in &mut out {
            *v *= s;
        }
        Mat3(out)
    }

    pub fn to_nalgebra(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_row_slice(&self.0)
    }

    pub fn from_nalgebra(m: &nalgebra::Matrix3<f64>) -> Mat3 {
        Mat3([
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ])
    }
}

/// Per-correspondence binary labels; `true` marks an inlier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector(pub Vec<bool>);

impl LabelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_positives(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn inlier_ratio(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.count_positives() as f64 / self.0.len() as f64
        }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }

    pub fn from_u8(v: &[u8]) -> Self {
        LabelVector(v.iter().map(|&b| b != 0).collect())
    }
}

/// The frame matrix T = [[A, k], [0, 1]] embedding a frame and keypoint.
pub fn frame_matrix(frame: &AffineFrame, kp: &Point2) -> Result<Mat3, GeomError> {
    if !frame.is_invertible() {
        return Err(GeomError::DegenerateFrame { det: frame.det() });
    }
    Ok(Mat3([
        frame.a11, frame.a12, kp.x, frame.a21, frame.a22, kp.y, 0.0, 0.0, 1.0,
    ]))
}

/// The local transform H = T' T⁻¹ of a correspondence: the affine map
/// carrying the first side's position and local structure onto the second's.
pub fn local_transform(c: &Correspondence) -> Result<Mat3, GeomError> {
    let det = c.frame.det();
    if det.abs() <= FRAME_DET_EPS {
        return Err(GeomError::DegenerateFrame { det });
    }
    if !c.frame_prime.is_invertible() {
        return Err(GeomError::DegenerateFrame {
            det: c.frame_prime.det(),
        });
    }
    // T⁻¹ for an affine T = [[A, k],[0,1]] is [[A⁻¹, -A⁻¹k],[0,1]]; composing
    // with T' keeps the bottom row exactly (0, 0, 1).
    let inv = AffineFrame::new(
        c.frame.a22 / det,
        -c.frame.a12 / det,
        -c.frame.a21 / det,
        c.frame.a11 / det,
    );
    let lin = c.frame_prime.compose(&inv);
    let shift = inv.apply(&c.kp); // A⁻¹ k
    let tx = c.kp_prime.x - lin.a11 * c.kp.x - lin.a12 * c.kp.y;
    let ty = c.kp_prime.y - lin.a21 * c.kp.x - lin.a22 * c.kp.y;
    // tx, ty equal k' - (A' A⁻¹) k, A' (A⁻¹ k) written to avoid the
    // intermediate matrix product: both forms agree to rounding.
    let _ = shift;
    Ok(Mat3([
        lin.a11, lin.a12, tx, lin.a21, lin.a22, ty, 0.0, 0.0, 1.0,
    ]))
}

/// Applies a 3×3 map to a point and dehomogenizes.
pub fn project(h: &Mat3, p: &Point2) -> Result<Point2, GeomError> {
    let v = h.mul_vec(&[p.x, p.y, 1.0]);
    if v[2].abs() <= PROJECTION_EPS {
        return Err(GeomError::ProjectionAtInfinity { depth: v[2] });
    }
    Ok(Point2::new(v[0] / v[2], v[1] / v[2]))
}

/// The reprojection error e_j(c_i): how far c_j's local transform moves
/// c_i's keypoint from where c_i's own transform puts it.
pub fn reprojection_error(c_i: &Correspondence, c_j: &Correspondence) -> Result<f64, GeomError> {
    let h_i = local_transform(c_i)?;
    let h_j = local_transform(c_j)?;
    let p_j = project(&h_j, &c_i.kp)?;
    let p_i = project(&h_i, &c_i.kp)?;
    Ok(p_j.distance(&p_i))
}

/// A 3×3 essential matrix with unit Frobenius norm, rank 2, and two equal
/// nonzero singular values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssentialMatrix(Mat3);

impl EssentialMatrix {
    /// Builds E = [t]ₓ R from a relative pose and normalizes to unit
    /// Frobenius norm. `rot` must be a rotation matrix and `t` nonzero.
    pub fn from_pose(rot: &Mat3, t: &[f64; 3]) -> Result<Self, GeomError> {
        let t_norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        if t_norm < 1e-12 {
            return Err(GeomError::InvalidEssential {
                reason: "zero translation".into(),
            });
        }
        let tx = Mat3([0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0]);
        let e = tx.mul(rot);
        let n = e.frobenius_norm();
        Ok(EssentialMatrix(e.scale(1.0 / n)))
    }

    /// Projects an arbitrary 3×3 matrix onto the essential manifold: singular
    /// values become (σ, σ, 0) with σ the mean of the top two, then the
    /// result is scaled to unit Frobenius norm.
    pub fn project(m: &Mat3) -> Result<Self, GeomError> {
        if !m.is_finite() {
            return Err(GeomError::NonFinite { what: "matrix" });
        }
        let svd = nalgebra::SVD::new(m.to_nalgebra(), true, true);
        let u = svd.u.ok_or_else(|| GeomError::InvalidEssential {
            reason: "svd failed".into(),
        })?;
        let v_t = svd.v_t.ok_or_else(|| GeomError::InvalidEssential {
            reason: "svd failed".into(),
        })?;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap()
        });
        let (s0, s1) = (
            svd.singular_values[order[0]],
            svd.singular_values[order[1]],
        );
        let sigma = 0.5 * (s0 + s1);
        if sigma <= 1e-300 {
            return Err(GeomError::InvalidEssential {
                reason: "zero matrix".into(),
            });
        }
        // Rebuild with sorted singular vectors and (σ, σ, 0); the Frobenius
        // norm is then σ√2, so dividing normalizes exactly.
        let mut e = nalgebra::Matrix3::<f64>::zeros();
        for idx in 0..2 {
            let col = u.column(order[idx]);
            let row = v_t.row(order[idx]);
            for r in 0..3 {
                for c in 0..3 {
                    e[(r, c)] += sigma * col[r] * row[c];
                }
            }
        }
        let e = e / (sigma * std::f64::consts::SQRT_2);
        Ok(EssentialMatrix(Mat3::from_nalgebra(&e)))
    }

    /// Validates an already-normalized matrix without changing any entry, so
    /// stored matrices round-trip bit-exactly.
    pub fn from_raw_validated(m: Mat3) -> Result<Self, GeomError> {
        if !m.is_finite() {
            return Err(GeomError::NonFinite { what: "matrix" });
        }
        let frob = m.frobenius_norm();
        if (frob - 1.0).abs() > 1e-9 {
            return Err(GeomError::InvalidEssential {
                reason: format!("Frobenius norm {frob} != 1"),
            });
        }
        if m.det().abs() > 1e-6 {
            return Err(GeomError::InvalidEssential {
                reason: format!("determinant {:.3e} too large", m.det()),
            });
        }
        let svd = nalgebra::SVD::new(m.to_nalgebra(), false, false);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if (s[0] - s[1]).abs() > 1e-6 {
            return Err(GeomError::InvalidEssential {
                reason: format!("unequal singular values {} vs {}", s[0], s[1]),
            });
        }
        Ok(EssentialMatrix(m))
    }

    pub fn as_mat3(&self) -> &Mat3 {
        &self.0
    }
}

/// Symmetric epipolar distance of a correspondence under an essential matrix:
/// r² (1/‖l₁,₂‖² + 1/‖l'₁,₂‖²) with r = [k';1]ᵀ E [k;1], l = E [k;1],
/// l' = Eᵀ [k';1].
///
/// If exactly one epipolar line direction is degenerate, the distance falls
/// back to the defined side; if both are degenerate the distance is undefined.
pub fn symmetric_epipolar_distance(
    e: &EssentialMatrix,
    c: &Correspondence,
) -> Result<f64, GeomError> {
    let m = e.as_mat3();
    let x = [c.kp.x, c.kp.y, 1.0];
    let xp = [c.kp_prime.x, c.kp_prime.y, 1.0];
    let l = m.mul_vec(&x);
    let lp = m.transpose().mul_vec(&xp);
    let r = xp[0] * l[0] + xp[1] * l[1] + xp[2] * l[2];
    let n1 = l[0] * l[0] + l[1] * l[1];
    let n2 = lp[0] * lp[0] + lp[1] * lp[1];
    let ok1 = n1 > EPIPOLAR_DIR_EPS_SQ;
    let ok2 = n2 > EPIPOLAR_DIR_EPS_SQ;
    if !ok1 && !ok2 {
        return Err(GeomError::DegenerateEpipolar);
    }
    let r2 = r * r;
    let mut d = 0.0;
    if ok1 {
        d += r2 / n1;
    }
    if ok2 {
        d += r2 / n2;
    }
    Ok(d)
}

/// Labels each correspondence by thresholding its symmetric epipolar
/// distance: 1 iff distance < threshold. Degenerate correspondences get 0.
pub fn label_set(
    set: &[Correspondence],
    e_gt: &EssentialMatrix,
    threshold: f64,
) -> LabelVector {
    LabelVector(
        set.iter()
            .map(|c| match symmetric_epipolar_distance(e_gt, c) {
                Ok(d) => d < threshold,
                Err(_) => false,
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn corr(
        k: (f64, f64),
        a: [f64; 4],
        kp: (f64, f64),
        ap: [f64; 4],
    ) -> Correspondence {
        Correspondence::new(
            Point2::new(k.0, k.1),
            AffineFrame::new(a[0], a[1], a[2], a[3]),
            Point2::new(kp.0, kp.1),
            AffineFrame::new(ap[0], ap[1], ap[2], ap[3]),
        )
    }

    const I: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

    #[test]
    fn frame_matrix_identity_case() {
        let t = frame_matrix(&AffineFrame::identity(), &Point2::new(0.0, 0.0)).unwrap();
        assert_eq!(t, Mat3::identity());
    }

    #[test]
    fn frame_matrix_block_placement() {
        let t = frame_matrix(
            &AffineFrame::new(2.0, 0.0, 0.0, 2.0),
            &Point2::new(1.0, 1.0),
        )
        .unwrap();
        assert_eq!(t.0, [2.0, 0.0, 1.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0]);

        let t = frame_matrix(
            &AffineFrame::new(1.0, 2.0, 3.0, 4.0),
            &Point2::new(5.0, 6.0),
        )
        .unwrap();
        assert_eq!(t.0, [1.0, 2.0, 5.0, 3.0, 4.0, 6.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn frame_matrix_rejects_degenerate() {
        let err = frame_matrix(
            &AffineFrame::new(1.0, 2.0, 2.0, 4.0),
            &Point2::new(0.0, 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, GeomError::DegenerateFrame { .. }));
    }

    #[test]
    fn local_transform_identity_when_sides_match() {
        let c = corr((0.3, -0.2), [1.5, 0.2, -0.1, 0.9], (0.3, -0.2), [1.5, 0.2, -0.1, 0.9]);
        let h = local_transform(&c).unwrap();
        for (i, v) in h.0.iter().enumerate() {
            let want = Mat3::identity().0[i];
            assert_abs_diff_eq!(*v, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn local_transform_hand_oracles() {
        // T = I, T' = [[2I, (1,1)],[0,1]]: H = T'.
        let c = corr((0.0, 0.0), I, (1.0, 1.0), [2.0, 0.0, 0.0, 2.0]);
        let h = local_transform(&c).unwrap();
        assert_eq!(h.0, [2.0, 0.0, 1.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0]);

        // T = [[I, (1,0)],[0,1]], T' = I: H = T⁻¹ = [[I, (-1,0)],[0,1]].
        let c = corr((1.0, 0.0), I, (0.0, 0.0), I);
        let h = local_transform(&c).unwrap();
        assert_eq!(h.0, [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn local_transform_bottom_row_is_affine() {
        let c = corr((0.7, 0.1), [0.8, 0.3, -0.2, 1.1], (-0.4, 0.5), [1.2, -0.7, 0.4, 0.6]);
        let h = local_transform(&c).unwrap();
        assert_eq!(h.get(2, 0), 0.0);
        assert_eq!(h.get(2, 1), 0.0);
        assert_eq!(h.get(2, 2), 1.0);
    }

    #[test]
    fn project_cases() {
        let p = project(&Mat3::identity(), &Point2::new(3.0, -2.0)).unwrap();
        assert_eq!(p, Point2::new(3.0, -2.0));

        let h = Mat3([2.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 2.0]);
        let p = project(&h, &Point2::new(1.0, 1.0)).unwrap();
        assert_eq!(p, Point2::new(1.0, 2.0));

        let h = Mat3([1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let p = project(&h, &Point2::new(0.0, 0.0)).unwrap();
        assert_eq!(p, Point2::new(-1.0, 0.0));
    }

    #[test]
    fn project_at_infinity() {
        let h = Mat3([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let err = project(&h, &Point2::new(1.0, 1.0)).unwrap_err();
        assert!(matches!(err, GeomError::ProjectionAtInfinity { .. }));
    }

    #[test]
    fn reprojection_error_self_is_zero() {
        let c = corr((0.2, 0.4), [1.1, 0.0, 0.2, 0.9], (0.5, -0.1), [0.7, 0.1, 0.0, 1.3]);
        assert_eq!(reprojection_error(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn reprojection_error_consistent_pair_is_zero() {
        // Both correspondences realize the same global affine map
        // H = [[2I, (1,1)],[0,1]].
        let c_i = corr((0.0, 0.0), I, (1.0, 1.0), [2.0, 0.0, 0.0, 2.0]);
        let c_j = corr((1.0, 0.0), I, (3.0, 1.0), [2.0, 0.0, 0.0, 2.0]);
        assert_abs_diff_eq!(reprojection_error(&c_i, &c_j).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(reprojection_error(&c_j, &c_i).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reprojection_error_inconsistent_pair() {
        let c_i = corr((0.0, 0.0), I, (1.0, 1.0), [2.0, 0.0, 0.0, 2.0]);
        let c_j = corr((1.0, 0.0), I, (0.0, 0.0), I);
        // Hand oracle: H_i[k_i] = (1,1), H_j[k_i] = (-1,0): e = √5.
        assert_abs_diff_eq!(
            reprojection_error(&c_i, &c_j).unwrap(),
            5.0_f64.sqrt(),
            epsilon = 1e-12
        );
        // H_j[k_j] = (0,0), H_i[k_j] = (3,1): e = √10.
        assert_abs_diff_eq!(
            reprojection_error(&c_j, &c_i).unwrap(),
            10.0_f64.sqrt(),
            epsilon = 1e-12
        );
    }

    fn sample_essential() -> EssentialMatrix {
        // Rotation about y by 0.3 rad, translation (1, 0.2, 0.1).
        let (s, c) = (0.3_f64.sin(), 0.3_f64.cos());
        let rot = Mat3([c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c]);
        EssentialMatrix::from_pose(&rot, &[1.0, 0.2, 0.1]).unwrap()
    }

    #[test]
    fn epipolar_distance_zero_for_point_on_line() {
        let e = sample_essential();
        let m = e.as_mat3();
        // Pick kp, then choose kp_prime on the epipolar line l = E [kp;1]:
        // a point with [kp';1]·l = 0.
        let kp = Point2::new(0.2, -0.1);
        let l = m.mul_vec(&[kp.x, kp.y, 1.0]);
        // Solve l0 x + l1 y + l2 = 0 with x = 0.3.
        let x = 0.3;
        let y = -(l[0] * x + l[2]) / l[1];
        let c = corr((kp.x, kp.y), I, (x, y), I);
        let d = symmetric_epipolar_distance(&e, &c).unwrap();
        assert!(d < 1e-24, "d = {d}");
    }

    /// Independent re-implementation with nalgebra.
    fn epipolar_oracle(e: &EssentialMatrix, c: &Correspondence) -> f64 {
        let m = e.as_mat3().to_nalgebra();
        let x = nalgebra::Vector3::new(c.kp.x, c.kp.y, 1.0);
        let xp = nalgebra::Vector3::new(c.kp_prime.x, c.kp_prime.y, 1.0);
        let l = m * x;
        let lp = m.transpose() * xp;
        let r = xp.dot(&l);
        r * r * (1.0 / (l.x * l.x + l.y * l.y) + 1.0 / (lp.x * lp.x + lp.y * lp.y))
    }

    #[test]
    fn epipolar_distance_matches_oracle() {
        let e = sample_essential();
        let pts = [
            ((0.1, 0.2), (-0.3, 0.4)),
            ((-0.5, 0.0), (0.2, 0.2)),
            ((0.33, -0.21), (0.41, 0.05)),
        ];
        for (a, b) in pts {
            let c = corr(a, I, b, I);
            let d = symmetric_epipolar_distance(&e, &c).unwrap();
            assert_abs_diff_eq!(d, epipolar_oracle(&e, &c), epsilon = 1e-15);
            assert!(d >= 0.0);
        }
    }

    #[test]
    fn label_set_thresholding() {
        let e = sample_essential();
        let m = e.as_mat3();
        let kp = Point2::new(0.2, -0.1);
        let l = m.mul_vec(&[kp.x, kp.y, 1.0]);
        let x = 0.3;
        let y = -(l[0] * x + l[2]) / l[1];
        let on_line = corr((kp.x, kp.y), I, (x, y), I);
        let off_line = corr((kp.x, kp.y), I, (x, y + 0.2), I);
        let labels = label_set(&[on_line, off_line], &e, DEFAULT_LABEL_THRESHOLD);
        assert_eq!(labels.as_slice(), &[true, false]);
    }

    #[test]
    fn label_set_boundary_excluded() {
        let e = sample_essential();
        let c = corr((0.2, -0.1), I, (0.7, 0.4), I);
        let d = symmetric_epipolar_distance(&e, &c).unwrap();
        // With the threshold set exactly at the distance the label must be 0.
        let labels = label_set(&[c], &e, d);
        assert_eq!(labels.as_slice(), &[false]);
    }

    #[test]
    fn label_set_monotone_in_threshold() {
        let e = sample_essential();
        let set: Vec<Correspondence> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.37;
                corr(
                    (t.sin() * 0.4, t.cos() * 0.4),
                    I,
                    ((t * 1.7).sin() * 0.4, (t * 2.3).cos() * 0.4),
                    I,
                )
            })
            .collect();
        let lo = label_set(&set, &e, 1e-5);
        let hi = label_set(&set, &e, 1e-2);
        for (a, b) in lo.as_slice().iter().zip(hi.as_slice()) {
            assert!(!a || *b, "enlarging the threshold flipped a 1 to 0");
        }
    }

    #[test]
    fn essential_from_pose_satisfies_constraints() {
        let e = sample_essential();
        let m = e.as_mat3();
        assert_abs_diff_eq!(m.frobenius_norm(), 1.0, epsilon = 1e-12);
        assert!(m.det().abs() < 1e-12);
        let svd = nalgebra::SVD::new(m.to_nalgebra(), false, false);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_abs_diff_eq!(s[0], s[1], epsilon = 1e-9);
        assert!(s[2].abs() < 1e-9);
    }

    #[test]
    fn essential_projection_recovers_manifold() {
        let noisy = Mat3([0.5, -0.1, 0.3, 0.2, 0.4, -0.6, 0.1, 0.8, 0.05]);
        let e = EssentialMatrix::project(&noisy).unwrap();
        let m = e.as_mat3();
        assert_abs_diff_eq!(m.frobenius_norm(), 1.0, epsilon = 1e-12);
        assert!(m.det().abs() < 1e-9);
        EssentialMatrix::from_raw_validated(*m).unwrap();
    }

    #[test]
    fn from_raw_validated_preserves_bits() {
        let e = sample_essential();
        let revalidated = EssentialMatrix::from_raw_validated(*e.as_mat3()).unwrap();
        assert_eq!(e.as_mat3().0, revalidated.as_mat3().0);
    }
}
