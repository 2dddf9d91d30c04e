//! Nominal filter state, 18-dim error-state layout, covariance helpers and
//! the noise/extrinsic parameter blocks.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::manifold::{exp_so3, log_so3, Rotation, Vec3};

/// Dimension of the error state.
pub const STATE_DIM: usize = 18;

/// Error-state block offsets. The ordering
/// `[dp(3), dtheta(3), dv(3), dba(3), dbw(3), dp_ez, dv_ez, da_ez]`
/// is fixed across the whole crate.
pub const DP: usize = 0;
pub const DTHETA: usize = 3;
pub const DV: usize = 6;
pub const DBA: usize = 9;
pub const DBW: usize = 12;
pub const DPEZ: usize = 15;
pub const DVEZ: usize = 16;
pub const DAEZ: usize = 17;

pub type ErrorState = SVector<f64, STATE_DIM>;
pub type Covariance = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Estimator mode. Transitions happen only through the mode manager.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Ordinary operation: the local frame is the world frame and the
    /// elevator scalars are exact zeros.
    Inertial,
    /// Inside a moving elevator: the pose is relative to the cabin-local
    /// frame and the transport scalars evolve.
    NonInertial,
}

/// Full nominal state. Gravity is fixed at initialization and never
/// estimated; the mode flag selects which propagation blocks are active.
#[derive(Clone, Debug)]
pub struct FilterState {
    /// IMU position in the elevator-local (or world) frame, m.
    pub p: Vec3,
    /// IMU attitude relative to the elevator-local frame.
    pub q: Rotation,
    /// IMU velocity in the elevator-local frame, m/s.
    pub v: Vec3,
    /// Accelerometer bias, m/s^2.
    pub ba: Vec3,
    /// Gyroscope bias, rad/s.
    pub bw: Vec3,
    /// Elevator vertical displacement, m.
    pub p_ez: f64,
    /// Elevator vertical velocity, m/s.
    pub v_ez: f64,
    /// Elevator vertical acceleration, m/s^2.
    pub a_ez: f64,
    /// Gravity in the world frame, m/s^2. Constant for the run.
    pub gravity: Vec3,
    pub mode: Mode,
}

impl FilterState {
    /// State right after static alignment: everything zero except gravity
    /// (pointing down) and the identity attitude.
    pub fn default_state(gravity_mag: f64) -> Self {
        FilterState {
            p: Vec3::zeros(),
            q: Rotation::identity(),
            v: Vec3::zeros(),
            ba: Vec3::zeros(),
            bw: Vec3::zeros(),
            p_ez: 0.0,
            v_ez: 0.0,
            a_ez: 0.0,
            gravity: Vec3::new(0.0, 0.0, -gravity_mag),
            mode: Mode::Inertial,
        }
    }

    /// Global IMU position: local relative position lifted by the elevator
    /// displacement. In inertial mode this is just `p`.
    pub fn compose_global_position(&self) -> Vec3 {
        self.p + self.p_ez * Vec3::z()
    }

    /// Generalized addition: vector blocks add, the rotation composes a
    /// right perturbation `q * Exp(dtheta)`.
    pub fn boxplus(&self, delta: &ErrorState) -> FilterState {
        let mut out = self.clone();
        out.p += delta.fixed_rows::<3>(DP).into_owned();
        let mut q = self.q * exp_so3(&delta.fixed_rows::<3>(DTHETA).into_owned());
        q.renormalize();
        out.q = q;
        out.v += delta.fixed_rows::<3>(DV).into_owned();
        out.ba += delta.fixed_rows::<3>(DBA).into_owned();
        out.bw += delta.fixed_rows::<3>(DBW).into_owned();
        out.p_ez += delta[DPEZ];
        out.v_ez += delta[DVEZ];
        out.a_ez += delta[DAEZ];
        out
    }

    /// Generalized subtraction: `y.boxplus(&x.boxminus(&y)) == x`.
    pub fn boxminus(&self, other: &FilterState) -> ErrorState {
        let mut delta = ErrorState::zeros();
        delta
            .fixed_rows_mut::<3>(DP)
            .copy_from(&(self.p - other.p));
        delta
            .fixed_rows_mut::<3>(DTHETA)
            .copy_from(&log_so3(&(other.q.inverse() * self.q)));
        delta
            .fixed_rows_mut::<3>(DV)
            .copy_from(&(self.v - other.v));
        delta
            .fixed_rows_mut::<3>(DBA)
            .copy_from(&(self.ba - other.ba));
        delta
            .fixed_rows_mut::<3>(DBW)
            .copy_from(&(self.bw - other.bw));
        delta[DPEZ] = self.p_ez - other.p_ez;
        delta[DVEZ] = self.v_ez - other.v_ez;
        delta[DAEZ] = self.a_ez - other.a_ez;
        delta
    }
}

/// Continuous-time process-noise intensities plus measurement noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Accelerometer white noise, (m/s^2)^2 / Hz.
    pub sigma_a_sq: f64,
    /// Gyroscope white noise, (rad/s)^2 / Hz.
    pub sigma_w_sq: f64,
    /// Accelerometer bias random walk, (m/s^2)^2 * Hz.
    pub sigma_ba_sq: f64,
    /// Gyroscope bias random walk, (rad/s)^2 * Hz.
    pub sigma_bw_sq: f64,
    /// Elevator-acceleration random walk, (m/s^2)^2 * Hz.
    pub sigma_ae_sq: f64,
    /// Per-point LiDAR range noise variance, m^2.
    pub r_lidar: f64,
    /// Exit zero-state observation variances for [v_ez, a_ez].
    pub r_zupt: [f64; 2],
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sigma_a_sq: 4e-6,
            sigma_w_sq: 4e-8,
            sigma_ba_sq: 1e-8,
            sigma_bw_sq: 1e-10,
            sigma_ae_sq: 2.0,
            r_lidar: 0.05 * 0.05,
            r_zupt: [1e-5, 1e-4],
        }
    }
}

/// Pre-calibrated LiDAR-to-IMU extrinsics.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Extrinsics {
    pub r_l_i: Rotation,
    pub p_l_i: Vec3,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Extrinsics {
            r_l_i: Rotation::identity(),
            p_l_i: Vec3::new(0.0, 0.0, 0.08),
        }
    }
}

impl Extrinsics {
    /// LiDAR point expressed in the IMU frame.
    pub fn to_imu(&self, p_l: &Vec3) -> Vec3 {
        self.r_l_i * p_l + self.p_l_i
    }
}

/// Force exact symmetry: `(P + P^T) / 2`.
pub fn symmetrize(p: &mut Covariance) {
    *p = 0.5 * (*p + p.transpose());
}

/// Largest absolute asymmetry `max |P_ij - P_ji|`.
pub fn max_asymmetry(p: &Covariance) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..STATE_DIM {
        for j in (i + 1)..STATE_DIM {
            worst = worst.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue(p: &Covariance) -> f64 {
    let sym = 0.5 * (p + p.transpose());
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Debug hook run after every covariance write: finite, symmetric within
/// 1e-9 and numerically PSD (min eigenvalue >= -1e-12).
pub fn debug_validate(p: &Covariance) {
    if cfg!(debug_assertions) {
        debug_assert!(p.iter().all(|x| x.is_finite()), "covariance not finite");
        debug_assert!(
            max_asymmetry(p) < 1e-9,
            "covariance asymmetric: {}",
            max_asymmetry(p)
        );
        debug_assert!(
            min_eigenvalue(p) >= -1e-12,
            "covariance indefinite: min eig {}",
            min_eigenvalue(p)
        );
    }
}
