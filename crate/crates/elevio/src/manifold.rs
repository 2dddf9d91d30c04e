//! SO(3) algebra and small-angle-safe maps used throughout the filter.
//!
//! Rotations are Hamilton unit quaternions; the error state uses a right
//! perturbation `R * Exp(dtheta)`, so all Jacobians here follow that
//! convention.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Rotation = UnitQuaternion<f64>;

/// Below this angle (rad) the closed forms switch to series expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix such that `skew(v) * u == v.cross(&u)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map so(3) -> SO(3).
pub fn exp_so3(omega: &Vec3) -> Rotation {
    let angle = omega.norm();
    let (w, k) = if angle < SMALL_ANGLE {
        // cos(a/2) and sin(a/2)/a to second order
        (1.0 - angle * angle / 8.0, 0.5 - angle * angle / 48.0)
    } else {
        let half = 0.5 * angle;
        (half.cos(), half.sin() / angle)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, k * omega.x, k * omega.y, k * omega.z))
}

/// Logarithm map SO(3) -> so(3); the result has norm <= pi.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let q = r.quaternion();
    // Pick the representative with non-negative scalar part so the angle
    // comes out in [0, pi].
    let (w, v) = if q.w >= 0.0 {
        (q.w, Vec3::new(q.i, q.j, q.k))
    } else {
        (-q.w, -Vec3::new(q.i, q.j, q.k))
    };
    let vn = v.norm();
    if vn < SMALL_ANGLE {
        // theta = 2 atan2(vn, w) ~ 2 vn / w; axis = v / vn
        v * (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w))
    } else {
        let angle = 2.0 * vn.atan2(w);
        v * (angle / vn)
    }
}

/// Right Jacobian of SO(3): `Exp(theta + d) ~ Exp(theta) * Exp(Jr(theta) d)`.
pub fn right_jacobian_so3(theta: &Vec3) -> Mat3 {
    let t = theta.norm();
    let s = skew(theta);
    if t < SMALL_ANGLE {
        Mat3::identity() - 0.5 * s + (s * s) / 6.0
    } else {
        let t2 = t * t;
        Mat3::identity() - ((1.0 - t.cos()) / t2) * s + ((t - t.sin()) / (t2 * t)) * (s * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_axis_angle(rng: &mut StdRng, max_angle: f64) -> Vec3 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        axis * rng.random_range(1e-6..max_angle)
    }

    #[test]
    fn skew_matches_cross_product() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        let u = Vec3::new(4.0, 5.0, 6.0);
        assert_abs_diff_eq!(skew(&v) * u, Vec3::new(-3.0, 6.0, -3.0), epsilon = 0.0);
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn skew_is_antisymmetric_for_random_vectors() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let v = Vec3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let sum = skew(&v) + skew(&v).transpose();
            assert_eq!(sum, Mat3::zeros());
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_so3(&Vec3::zeros()), Rotation::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = exp_so3(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let rotated = r * Vec3::new(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(rotated, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn exp_log_round_trip_on_random_rotations() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let theta = random_axis_angle(&mut rng, std::f64::consts::PI - 1e-3);
            let r = exp_so3(&theta);
            let back = exp_so3(&log_so3(&r));
            assert!(
                (r.to_rotation_matrix().into_inner() - back.to_rotation_matrix().into_inner())
                    .norm()
                    < 1e-10
            );
            assert_abs_diff_eq!(log_so3(&r), theta, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(log_so3(&Rotation::identity()), Vec3::zeros());
    }

    #[test]
    fn log_round_trip_below_pi() {
        let theta = Vec3::new(0.1, -0.2, 0.3);
        assert_abs_diff_eq!(log_so3(&exp_so3(&theta)), theta, epsilon = 1e-10);
    }

    #[test]
    fn log_of_half_turn_about_x() {
        // Independent construction of the 180 deg rotation from its matrix.
        let m = Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let r = Rotation::from_rotation_matrix(&nalgebra::Rotation3::from_matrix(&m));
        let l = log_so3(&r);
        assert_abs_diff_eq!(l.norm(), std::f64::consts::PI, epsilon = 1e-9);
        assert!(l.x.abs() > l.y.abs().max(l.z.abs()));
    }

    #[test]
    fn right_jacobian_at_zero_is_identity() {
        assert_eq!(right_jacobian_so3(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn right_jacobian_finite_difference_property() {
        // || Log(Exp(theta)^-1 Exp(theta + d)) - Jr(theta) d || small for small d.
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let theta = random_axis_angle(&mut rng, 2.0);
            let delta = random_axis_angle(&mut rng, 1.0).normalize() * 1e-4;
            let lhs = log_so3(&(exp_so3(&theta).inverse() * exp_so3(&(theta + delta))));
            let rhs = right_jacobian_so3(&theta) * delta;
            assert!((lhs - rhs).norm() <= 1e-6, "lhs {lhs:?} rhs {rhs:?}");
        }
    }

    #[test]
    fn right_jacobian_symmetric_part_is_contracting() {
        // Eigenvalues of the symmetric part stay in (0, 1] for a quarter turn.
        let a = right_jacobian_so3(&Vec3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        let sym = 0.5 * (a + a.transpose());
        let eig = sym.symmetric_eigenvalues();
        for i in 0..3 {
            assert!(eig[i] > 0.0 && eig[i] <= 1.0 + 1e-12, "eig {}", eig[i]);
        }
    }

    proptest! {
        #[test]
        fn exp_log_round_trip_prop(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                                   scale in 1e-6f64..3.0) {
            let v = Vec3::new(x, y, z);
            prop_assume!(v.norm() > 1e-9);
            let theta = v.normalize() * scale.min(std::f64::consts::PI - 1e-3);
            let r = exp_so3(&theta);
            prop_assert!((log_so3(&r) - theta).norm() < 1e-10);
            prop_assert!((r.norm() - 1.0).abs() < 1e-12);
        }
    }
}
