//! Rotations, Euler angles, circular angle arithmetic, similarity
//! alignment and pinhole projection.
//!
//! Angles are degrees everywhere in the public API. The Euler convention is
//! the intrinsic composition `R = Rx(pitch) · Ry(yaw) · Rz(roll)` acting on
//! column vectors in an x-right, y-down, z-forward camera frame. Yaw is the
//! middle axis, so the decomposition is singular at `|yaw| = 90`.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|cos yaw|` below this is treated as gimbal lock.
pub const GIMBAL_EPS: f64 = 1e-7;
/// Orthonormality tolerance accepted by [`RotationMatrix::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;
/// Minimum camera-frame depth accepted by [`project_points`].
pub const MIN_DEPTH: f64 = 1e-6;

/// Head orientation in degrees. Yaw covers the full circle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerPose {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl EulerPose {
    pub const ZERO: EulerPose = EulerPose {
        pitch: 0.0,
        yaw: 0.0,
        roll: 0.0,
    };

    pub fn new(pitch: f64, yaw: f64, roll: f64) -> Self {
        Self { pitch, yaw, roll }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.pitch, self.yaw, self.roll]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Checks pitch and roll lie in `[-90, 90]` and yaw in `[-180, 180]`.
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64, lim: f64| v.is_finite() && v.abs() <= lim;
        if !ok(self.pitch, 90.0) || !ok(self.roll, 90.0) || !ok(self.yaw, 180.0) {
            return Err(Error::OutOfRange(format!(
                "pose (pitch {}, yaw {}, roll {}) outside pitch/roll [-90, 90], yaw [-180, 180]",
                self.pitch, self.yaw, self.roll
            )));
        }
        Ok(())
    }
}

/// Result of an Euler decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub pose: EulerPose,
    /// Set when `|cos yaw| < GIMBAL_EPS`; roll was fixed to zero and the
    /// free angle absorbed into pitch, which may then leave `(-90, 90)`.
    pub gimbal: bool,
}

/// A proper rotation: orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let err = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidRotation(format!(
                "‖RᵀR − I‖ = {err:.3e}, det = {det:.9}"
            )));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix known to be a rotation by construction.
    #[cfg(test)]
    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_matrix(pose: EulerPose) -> RotationMatrix {
    RotationMatrix(rot_x(pose.pitch) * rot_y(pose.yaw) * rot_z(pose.roll))
}

/// Splits a rotation into pitch-yaw-roll, choosing the branch with pitch and
/// roll inside `(-90, 90)` so that yaw carries the full circle.
pub fn matrix_to_euler(r: &RotationMatrix) -> Result<Decomposition> {
    let m = RotationMatrix::new(r.0)?.0;
    let cos_yaw = m[(0, 0)].hypot(m[(0, 1)]);
    if cos_yaw < GIMBAL_EPS {
        let yaw = if m[(0, 2)] >= 0.0 { 90.0 } else { -90.0 };
        let pitch = m[(2, 1)].atan2(m[(1, 1)]).to_degrees();
        return Ok(Decomposition {
            pose: EulerPose::new(wrap_angle_unchecked(pitch), yaw, 0.0),
            gimbal: true,
        });
    }
    // Branch with cos(yaw) > 0.
    let p0 = (-m[(1, 2)]).atan2(m[(2, 2)]).to_degrees();
    let r0 = (-m[(0, 1)]).atan2(m[(0, 0)]).to_degrees();
    let y0 = m[(0, 2)].atan2(cos_yaw).to_degrees();
    // Equivalent branch with cos(yaw) < 0.
    let flip = |a: f64| if a > 0.0 { a - 180.0 } else { a + 180.0 };
    let (p1, r1, y1) = (flip(p0), flip(r0), wrap_angle_unchecked(180.0 - y0));
    let spread0 = p0.abs().max(r0.abs());
    let spread1 = p1.abs().max(r1.abs());
    let pose = if spread0 <= spread1 {
        EulerPose::new(p0, wrap_angle_unchecked(y0), r0)
    } else {
        EulerPose::new(p1, y1, r1)
    };
    Ok(Decomposition {
        pose,
        gimbal: false,
    })
}

fn wrap_angle_unchecked(a: f64) -> f64 {
    let r = a - 360.0 * ((a + 180.0) / 360.0).floor();
    if r <= -180.0 {
        r + 360.0
    } else if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Maps an angle into `(-180, 180]`.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite(format!("angle {a}")));
    }
    Ok(wrap_angle_unchecked(a))
}

/// Geodesic distance on the circle, in `[0, 180]`.
pub fn angular_abs_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

/// Ordered 3D points in world units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet(pub Vec<Vector3<f64>>);

impl LandmarkSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self(points)
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Self {
        Self(rows.iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.0.iter().sum();
        sum / self.0.len().max(1) as f64
    }

    pub fn select(&self, indices: &[usize]) -> LandmarkSet {
        LandmarkSet(indices.iter().map(|&i| self.0[i]).collect())
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> LandmarkSet {
        LandmarkSet(self.0.iter().map(|p| t.apply(p)).collect())
    }

    pub fn max_pairwise_distance(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.0.iter().enumerate() {
            for b in &self.0[i + 1..] {
                best = best.max((a - b).norm());
            }
        }
        best
    }
}

/// `x ↦ scale · R · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation.0 * p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        Self {
            scale: inv_s,
            rotation: rt,
            translation: -(inv_s * (rt.0 * self.translation)),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.scale * self.rotation.0));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Closed-form similarity alignment (Horn's unit-quaternion method).
///
/// Returns the transform minimizing `Σ‖s·R·src_i + t − dst_i‖²`. The
/// rotation is the dominant eigenvector of Horn's 4×4 matrix; the scale is
/// the least-squares optimum given that rotation.
pub fn horn_align(src: &LandmarkSet, dst: &LandmarkSet) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::CountMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let (cs, cd) = (src.centroid(), dst.centroid());
    let a: Vec<Vector3<f64>> = src.0.iter().map(|p| p - cs).collect();
    let b: Vec<Vector3<f64>> = dst.0.iter().map(|p| p - cd).collect();

    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (p, q) in a.iter().zip(&b) {
        cov += p * q.transpose();
        spread += p * p.transpose();
    }
    let sq_norm_a: f64 = a.iter().map(|p| p.norm_squared()).sum();
    let eig = SymmetricEigen::new(spread).eigenvalues;
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    if sq_norm_a <= f64::EPSILON || ev[1] <= 1e-12 * ev[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "source points are coincident or collinear".into(),
        ));
    }

    let (sxx, sxy, sxz) = (cov[(0, 0)], cov[(0, 1)], cov[(0, 2)]);
    let (syx, syy, syz) = (cov[(1, 0)], cov[(1, 1)], cov[(1, 2)]);
    let (szx, szy, szz) = (cov[(2, 0)], cov[(2, 1)], cov[(2, 2)]);
    #[rustfmt::skip]
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz,  syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,       -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let best = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(best).normalize();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    #[rustfmt::skip]
    let rot = Matrix3::new(
        w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z),         2.0 * (x * z + w * y),
        2.0 * (y * x + w * z),         w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
        2.0 * (z * x - w * y),         2.0 * (z * y + w * x),         w * w - x * x - y * y + z * z,
    );
    let dot: f64 = a.iter().zip(&b).map(|(p, q)| q.dot(&(rot * p))).sum();
    let scale = dot / sq_norm_a;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate(format!("non-positive scale {scale}")));
    }
    let translation = cd - scale * (rot * cs);
    Ok(SimilarityTransform {
        scale,
        rotation: RotationMatrix(rot),
        translation,
    })
}

/// Pinhole camera. Extrinsics map world points into the camera frame:
/// `X_cam = R · X_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn with_extrinsics(mut self, rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        self.rotation = rotation;
        self.translation = translation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Validation(format!(
                "camera intrinsics invalid: fx {}, fy {}, cx {}, cy {}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        RotationMatrix::new(self.rotation.0)?;
        Ok(())
    }

    /// Extrinsic matrix as a 4×4 homogeneous transform.
    pub fn extrinsic(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.0);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p + self.translation
    }

    /// Inverse of [`CameraModel::to_camera`].
    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0.transpose() * (p - self.translation)
    }

    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        )
    }
}

/// Projects world points to pixels; fails on any point at or behind the
/// camera plane.
pub fn project_points(cam: &CameraModel, pts: &LandmarkSet) -> Result<Vec<Vector2<f64>>> {
    pts.0
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let pc = cam.to_camera(p);
            if !(pc.z > MIN_DEPTH) {
                return Err(Error::BehindCamera { index, depth: pc.z });
            }
            Ok(cam.project_camera_point(&pc))
        })
        .collect()
}
