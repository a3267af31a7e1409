//! Rotation-group primitives.
//!
//! Rotations are plain 3×3 matrices checked for orthonormality on
//! construction. The logarithm is restricted to the principal branch away
//! from π; callers in this crate only ever see limit-clamped joint angles,
//! whose relative rotations stay well inside that branch.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Orthonormality and determinant tolerance for [`Rotation::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Below this angle the logarithm switches to its first-order series.
pub const SMALL_ANGLE: f64 = 1e-7;
/// Angles within this distance of π are refused by the logarithm.
pub const PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if !ortho.is_finite() || ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::NotARotation(ortho.max((det - 1.0).abs())));
        }
        Ok(Rotation(m))
    }

    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Rotation by `|v|` radians about `v / |v|`.
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        let angle = v.norm();
        if angle == 0.0 {
            return Rotation::identity();
        }
        rodrigues(&(v / angle), angle)
    }

    /// Intrinsic roll-pitch-yaw as used by URDF: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        let rx = rodrigues(&Vector3::x(), roll);
        let ry = rodrigues(&Vector3::y(), pitch);
        let rz = rodrigues(&Vector3::z(), yaw);
        rz * ry * rx
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Principal logarithm as a rotation vector.
    pub fn log(&self) -> Result<Vector3<f64>> {
        log_matrix(&self.0)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    axis: Vector3<f64>,
    angle: f64,
}

impl AxisAngle {
    /// `axis` must be unit length (within 1e-12) and `angle` in `[0, π]`.
    pub fn new(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        if (axis.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!("axis norm {} is not 1", axis.norm())));
        }
        if !(0.0..=PI).contains(&angle) {
            return Err(Error::InvalidParams(format!("angle {angle} outside [0, pi]")));
        }
        Ok(AxisAngle { axis, angle })
    }

    pub fn axis(&self) -> &Vector3<f64> {
        &self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.axis * self.angle
    }
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

pub fn exp_so3(a: &AxisAngle) -> Rotation {
    rodrigues(&a.axis, a.angle)
}

/// `I + sin(t)[k] + (1 - cos(t))[k]^2` for a unit axis `k`; any real angle.
pub(crate) fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Rotation {
    let k = skew(axis);
    let (s, c) = angle.sin_cos();
    Rotation(Matrix3::identity() + k * s + k * k * (1.0 - c))
}

pub fn log_so3(r: &Rotation) -> Result<Vector3<f64>> {
    log_matrix(&r.0)
}

fn log_matrix(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    // 2 sin(t) * axis
    let v = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin2 = v.norm();
    let cos2 = m.trace() - 1.0;
    let theta = sin2.atan2(cos2);
    if (theta - PI).abs() <= PI_MARGIN {
        return Err(Error::NearPiSingularity(theta));
    }
    if theta < SMALL_ANGLE {
        return Ok(v * 0.5);
    }
    Ok(v * (theta / sin2))
}

/// Length of the shortest path between two rotations under the bi-invariant metric.
pub fn geodesic_distance(r1: &Rotation, r2: &Rotation) -> Result<f64> {
    Ok(log_matrix(&(r1.0.transpose() * r2.0))?.norm())
}

/// Distance between two angles of the same revolute joint.
///
/// For a shared axis the relative rotation is a rotation by `q2 - q` about
/// that axis, so the geodesic distance collapses to an absolute difference.
pub fn joint_distance(q: f64, q2: f64) -> f64 {
    (q - q2).abs()
}

/// Frobenius inner product `<a, b> = tr(a^T b)`.
pub fn frobenius(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Orthogonal projection of an ambient gradient onto the tangent space at `r`:
/// `r * skew_part(r^T grad)`.
pub fn project_to_tangent(grad: &Matrix3<f64>, r: &Rotation) -> Matrix3<f64> {
    let a = r.0.transpose() * grad;
    r.0 * ((a - a.transpose()) * 0.5)
}

/// Component of `grad` along the admissible direction `r * skew(axis)` of a
/// revolute joint.
pub fn axis_tangent_component(grad: &Matrix3<f64>, r: &Rotation, axis: &Vector3<f64>) -> f64 {
    frobenius(grad, &(r.0 * skew(axis)))
}

/// Inverse of the left Jacobian of SO(3) at rotation vector `phi`.
///
/// Maps world-frame angular velocity to the rate of change of `log(R)`.
pub(crate) fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() - k * 0.5 + k * k * (1.0 / 12.0);
    }
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() - k * 0.5 + k * k * coeff
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn skew_examples() {
        let m = skew(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(m, Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let m = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(m, Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        assert_eq!(m, -m.transpose());
        let w = Vector3::new(-0.5, 4.0, 1.5);
        assert_eq!(m * w, Vector3::new(1.0, 2.0, 3.0).cross(&w));
    }

    #[test]
    fn exp_examples() {
        let r = exp_so3(&AxisAngle::new(Vector3::z(), PI / 2.0).unwrap());
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(close(r.matrix(), &expected, 1e-15));

        let axis = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        let r = exp_so3(&AxisAngle::new(axis, 0.0).unwrap());
        assert_eq!(*r.matrix(), Matrix3::identity());

        // Hand expansion about x: [[1,0,0],[0,c,-s],[0,s,c]].
        let r = exp_so3(&AxisAngle::new(Vector3::x(), 0.3).unwrap());
        assert!((r.matrix()[(2, 2)] - 0.3f64.cos()).abs() < 1e-15);
        assert!((r.matrix()[(2, 1)] - 0.3f64.sin()).abs() < 1e-15);
        assert!(Rotation::new(*r.matrix()).is_ok());
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rotation::identity()).unwrap(), Vector3::zeros());
        let r = exp_so3(&AxisAngle::new(Vector3::z(), 0.7).unwrap());
        let w = log_so3(&r).unwrap();
        assert!((w - Vector3::new(0.0, 0.0, 0.7)).norm() < 1e-15);
    }

    #[test]
    fn log_refuses_near_pi() {
        let r = exp_so3(&AxisAngle::new(Vector3::y(), PI).unwrap());
        assert!(matches!(log_so3(&r), Err(Error::NearPiSingularity(_))));
        let r = exp_so3(&AxisAngle::new(Vector3::y(), PI - 5e-7).unwrap());
        assert!(matches!(log_so3(&r), Err(Error::NearPiSingularity(_))));
    }

    #[test]
    fn rejects_non_rotations() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(Rotation::new(m), Err(Error::NotARotation(_))));
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::new(reflect).is_err());
    }

    #[test]
    fn small_angle_branch() {
        let v = Vector3::new(3e-9, -1e-8, 2e-9);
        let r = Rotation::from_rotation_vector(&v);
        assert!((log_so3(&r).unwrap() - v).norm() < 1e-20);
    }

    #[test]
    fn geodesic_examples() {
        let r = exp_so3(&AxisAngle::new(Vector3::x(), 1.0).unwrap());
        assert_eq!(geodesic_distance(&r, &r).unwrap(), 0.0);
        let r = exp_so3(&AxisAngle::new(Vector3::z(), 1.2).unwrap());
        let d = geodesic_distance(&Rotation::identity(), &r).unwrap();
        assert!((d - 1.2).abs() < 1e-15);
    }

    #[test]
    fn joint_distance_examples() {
        assert!((joint_distance(0.3, -0.2) - 0.5).abs() < 1e-15);
        assert_eq!(joint_distance(0.4, 0.4), 0.0);
    }

    #[test]
    fn tangent_component_examples() {
        let r = exp_so3(&AxisAngle::new(Vector3::y(), 0.4).unwrap());
        let axis = Vector3::new(0.0, 0.6, 0.8);
        assert_eq!(axis_tangent_component(&Matrix3::zeros(), &r, &axis), 0.0);
        let g = r.matrix() * skew(&axis);
        assert!((axis_tangent_component(&g, &r, &axis) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn left_jacobian_inverse_matches_finite_differences() {
        // d/dt log(exp(t w) R) at t = 0 equals Jl^-1(log R) w.
        let phi = Vector3::new(0.4, -0.9, 0.3);
        let r = Rotation::from_rotation_vector(&phi);
        let w = Vector3::new(0.2, 0.5, -0.7);
        let h = 1e-6;
        let plus = (Rotation::from_rotation_vector(&(w * h)) * r).log().unwrap();
        let minus = (Rotation::from_rotation_vector(&(w * -h)) * r).log().unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let analytic = left_jacobian_inverse(&phi) * w;
        assert!((fd - analytic).norm() < 1e-8, "{fd} vs {analytic}");
    }

    fn unit_axis() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-4)
            .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(axis in unit_axis(), angle in 0.0..(PI - 0.01)) {
            let a = AxisAngle::new(axis, angle).unwrap();
            let r = exp_so3(&a);
            let w = log_so3(&r).unwrap();
            prop_assert!((w - a.rotation_vector()).norm() <= 1e-9);
            let back_axis = if w.norm() > 0.0 { w.normalize() } else { axis };
            let back = exp_so3(&AxisAngle::new(back_axis, w.norm()).unwrap());
            prop_assert!(close(back.matrix(), r.matrix(), 1e-9));
        }

        #[test]
        fn geodesic_symmetric_and_bi_invariant(
            a1 in unit_axis(), t1 in 0.0..3.0f64,
            a2 in unit_axis(), t2 in 0.0..3.0f64,
            ag in unit_axis(), tg in 0.0..3.0f64,
        ) {
            let r1 = exp_so3(&AxisAngle::new(a1, t1).unwrap());
            let r2 = exp_so3(&AxisAngle::new(a2, t2).unwrap());
            let g = exp_so3(&AxisAngle::new(ag, tg).unwrap());
            if let (Ok(d12), Ok(d21)) = (geodesic_distance(&r1, &r2), geodesic_distance(&r2, &r1)) {
                prop_assert!((d12 - d21).abs() <= 1e-9);
                let dg = geodesic_distance(&(g * r1), &(g * r2)).unwrap();
                prop_assert!((dg - d12).abs() <= 1e-9);
                prop_assert!((0.0..=PI).contains(&d12));
            }
        }
    }
}
