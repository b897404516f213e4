//! Rigid-body types on SO(3) and SE(3).
//!
//! Rotations are stored as unit quaternions, renormalized and canonicalized to
//! `w >= 0` after every operation. Tangent vectors are ordered rotation first:
//! a [`Twist`] is `(omega, rho)` with `omega` in radians and `rho` in meters.
//!
//! Update convention: scan registration perturbs poses on the left,
//! `P <- exp(delta) * P`, so increments are expressed in the world frame.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;

/// `log` refuses rotations closer than this to pi.
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;

// Below this angle the closed-form coefficients are replaced by Taylor series.
const SMALL_ANGLE: f64 = 0.05;

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit-quaternion rotation with `w >= 0`.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from raw quaternion coefficients, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::canonical(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::canonical(q)
    }

    /// Rotation about the z axis by `angle` radians.
    pub fn rotz(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, 0.0, angle))
    }

    /// Nearest rotation to an approximately orthonormal matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        // direct extraction is exact for orthonormal input; the iteration
        // then cleans up matrices that were rounded when written to text
        let guess = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        Self::canonical(UnitQuaternion::from_matrix_eps(m, 1e-12, 100, guess))
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        let mut raw = q.into_inner();
        let n = raw.norm();
        raw /= n;
        if raw.w < 0.0 {
            raw = -raw;
        }
        Rotation(UnitQuaternion::new_unchecked(raw))
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// `(w, x, y, z)`
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Self::canonical(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Self::canonical(self.0.inverse())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0.transform_vector(v)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        2.0 * q.imag().norm().atan2(q.w)
    }

    /// Exponential map from a rotation vector.
    pub fn exp(omega: &Vec3) -> Rotation {
        let theta = omega.norm();
        let half = 0.5 * theta;
        let (w, s) = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            // sin(theta/2)/theta
            (half.cos(), 0.5 - t2 / 48.0 + t2 * t2 / 3840.0)
        } else {
            (half.cos(), half.sin() / theta)
        };
        Self::canonical(UnitQuaternion::new_unchecked(Quaternion::new(
            w,
            s * omega.x,
            s * omega.y,
            s * omega.z,
        )))
    }

    /// Logarithm map to a rotation vector with norm in `[0, pi]`.
    pub fn log(&self) -> Vec3 {
        let q = self.0.quaternion();
        let v = q.imag();
        let n = v.norm();
        if n < 1e-10 {
            // atan2(n, w)/n ~ (1 - n^2/(3 w^2)) / w
            let w = q.w;
            v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w))
        } else {
            v * (2.0 * n.atan2(q.w) / n)
        }
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        write!(f, "Rotation(w={w}, x={x}, y={y}, z={z})")
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rigid transform in SE(3). Maps points from a local frame into a parent frame:
/// `apply(p, x) = R x + t`.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose::new(Rotation::identity(), Vec3::new(x, y, z))
    }

    pub fn rotz(angle: f64) -> Self {
        Pose::new(Rotation::rotz(angle), Vec3::zeros())
    }

    /// `apply(compose(a, b), p) == apply(a, apply(b, p))`
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose {
            translation: -rotation.apply(&self.translation),
            rotation,
        }
    }

    pub fn apply(&self, point: &Vec3) -> Vec3 {
        self.rotation.apply(point) + self.translation
    }

    /// Relative pose `inverse(self) * other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn exp(twist: &Twist) -> Pose {
        let omega = twist.rotation();
        let rho = twist.translation();
        Pose {
            rotation: Rotation::exp(&omega),
            translation: so3_left_jacobian(&omega) * rho,
        }
    }

    /// Inverse of [`Pose::exp`]. Fails when the rotation angle is within
    /// [`LOG_ANGLE_MARGIN`] of pi.
    pub fn log(&self) -> Result<Twist> {
        let angle = self.rotation.angle();
        if angle >= std::f64::consts::PI - LOG_ANGLE_MARGIN {
            return Err(Error::DegenerateRotation { angle });
        }
        let omega = self.rotation.log();
        let rho = so3_left_jacobian_inv(&omega) * self.translation;
        Ok(Twist::new(omega, rho))
    }

    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Homogeneous 4x4 matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 3x4 `[R | t]`, the layout of KITTI pose files.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = self.rotation.matrix();
        let t = self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Pose {
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Pose::new(Rotation::from_matrix(&r), Vec3::new(v[3], v[7], v[11]))
    }

    /// Adjoint in `(omega, rho)` ordering: `exp(Ad(T) xi) = T exp(xi) T^-1`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation.matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&self.translation) * r));
        ad
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.wxyz().iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.translation;
        let [w, x, y, z] = self.rotation.wxyz();
        write!(f, "Pose(t=[{}, {}, {}], q=[{w}, {x}, {y}, {z}])", t.x, t.y, t.z)
    }
}

/// Tangent-space increment `(omega, rho)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist(pub Vec6);

impl Twist {
    pub fn new(omega: Vec3, rho: Vec3) -> Self {
        Twist(Vec6::new(omega.x, omega.y, omega.z, rho.x, rho.y, rho.z))
    }

    pub fn zero() -> Self {
        Twist(Vec6::zeros())
    }

    pub fn rotation(&self) -> Vec3 {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(omega: &Vec3) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + w * a + w * w * b
}

/// Inverse of the left Jacobian of SO(3).
pub fn so3_left_jacobian_inv(omega: &Vec3) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    let e = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - w * 0.5 + w * w * e
}

// Off-diagonal block of the SE(3) left Jacobian.
fn se3_q_block(omega: &Vec3, rho: &Vec3) -> Matrix3<f64> {
    let theta = omega.norm();
    let p = hat(omega);
    let r = hat(rho);
    let t2 = theta * theta;
    let (c1, c2, c3) = if theta < SMALL_ANGLE {
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

/// Left Jacobian of SE(3) in `(omega, rho)` ordering.
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let omega = xi.rotation();
    let j = so3_left_jacobian(&omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_q_block(&omega, &xi.translation()));
    out
}

/// Inverse of the left Jacobian of SE(3).
pub fn se3_left_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let omega = xi.rotation();
    let jinv = so3_left_jacobian_inv(&omega);
    let q = se3_q_block(&omega, &xi.translation());
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-jinv * q * jinv));
    out
}

/// Inverse of the right Jacobian of SE(3): `log(exp(xi) exp(d)) ~ xi + Jr^-1(xi) d`.
pub fn se3_right_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    se3_left_jacobian_inv(&Twist(-xi.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.translation - b.translation).norm() < tol && a.between(b).angle() < tol
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose::new(Rotation::from_wxyz(0.9, 0.1, -0.3, 0.2), Vec3::new(1.0, -2.0, 0.5));
        assert!(close(&Pose::identity().compose(&p), &p, 1e-12));
        assert!(close(&p.compose(&p.inverse()), &Pose::identity(), 1e-9));
    }

    #[test]
    fn pure_translations_add() {
        let c = Pose::from_translation(1.0, 0.0, 0.0).compose(&Pose::from_translation(0.0, 2.0, 0.0));
        assert_eq!(c.translation, Vec3::new(1.0, 2.0, 0.0));
        assert_eq!(c.angle(), 0.0);
    }

    #[test]
    fn inverse_examples() {
        assert!(close(&Pose::identity().inverse(), &Pose::identity(), 1e-15));
        let inv = Pose::from_translation(3.0, 4.0, 0.0).inverse();
        assert_eq!(inv.translation, Vec3::new(-3.0, -4.0, 0.0));
        assert!(close(&Pose::rotz(FRAC_PI_2).inverse(), &Pose::rotz(-FRAC_PI_2), 1e-12));
    }

    #[test]
    fn apply_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().apply(&p), p);
        let r = Pose::rotz(FRAC_PI_2).apply(&Vec3::new(1.0, 0.0, 0.0));
        assert!((r - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
        let t = Pose::from_translation(0.0, 0.0, 5.0).apply(&Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(t, Vec3::new(1.0, 1.0, 6.0));
    }

    #[test]
    fn exp_log_of_zero() {
        assert!(close(&Pose::exp(&Twist::zero()), &Pose::identity(), 1e-15));
        assert_eq!(Pose::identity().log().unwrap(), Twist::zero());
    }

    #[test]
    fn exp_about_z_matches_rodrigues() {
        let theta: f64 = 0.1;
        let p = Pose::exp(&Twist::new(Vec3::new(0.0, 0.0, theta), Vec3::zeros()));
        // Rodrigues: R = I + sin(t) K + (1 - cos(t)) K^2 for unit axis K = hat(z).
        let k = hat(&Vec3::z());
        let rodrigues = Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos());
        assert!((p.rotation.matrix() - rodrigues).abs().max() < 1e-12);
        assert_eq!(p.translation, Vec3::zeros());
    }

    #[test]
    fn log_near_pi_is_rejected() {
        let p = Pose::new(Rotation::from_wxyz(0.0, 0.0, 0.0, 1.0), Vec3::zeros());
        assert!(matches!(p.log(), Err(Error::DegenerateRotation { .. })));
    }

    #[test]
    fn canonical_hemisphere() {
        let r = Rotation::from_wxyz(-0.5, 0.5, 0.5, 0.5);
        assert!(r.wxyz()[0] >= 0.0);
        let n: f64 = r.wxyz().iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_conjugates_exp() {
        let t = Pose::new(Rotation::from_wxyz(0.8, 0.2, 0.4, -0.1), Vec3::new(0.3, -1.0, 2.0));
        let xi = Twist(Vec6::new(0.1, -0.2, 0.05, 0.4, 0.1, -0.3));
        let lhs = Pose::exp(&Twist(t.adjoint() * xi.0));
        let rhs = t.compose(&Pose::exp(&xi)).compose(&t.inverse());
        assert!(close(&lhs, &rhs, 1e-12));
    }
}
