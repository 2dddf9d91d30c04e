//! Nominal IMU propagation and linearized covariance propagation.
//!
//! In non-inertial mode the elevator transport block (vertical
//! displacement/velocity/acceleration) evolves as a constant-acceleration
//! chain and couples into the relative position/velocity errors; in
//! inertial mode those couplings, the transport dynamics and the
//! elevator-acceleration noise channel are all disabled.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{exp_so3, skew, Vec3};
use crate::state::{
    debug_validate, symmetrize, Covariance, FilterState, Mode, NoiseParams, DAEZ, DBA, DBW, DP,
    DPEZ, DTHETA, DV, DVEZ, STATE_DIM,
};

/// Process-noise dimension: accel(3) + gyro(3) + accel bias walk(3) +
/// gyro bias walk(3) + elevator accel walk(1).
pub const NOISE_DIM: usize = 13;

/// Largest IMU interval integrated blindly; anything longer is a data gap.
pub const MAX_IMU_DT: f64 = 0.05;

/// One IMU record: specific force and angular rate in the body frame.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ImuSample {
    /// Timestamp, s.
    pub t: f64,
    /// Specific force, m/s^2.
    pub acc: Vec3,
    /// Angular rate, rad/s.
    pub gyr: Vec3,
}

/// Discrete-time error transition, noise injection and noise covariance.
#[derive(Clone, Debug)]
pub struct TransitionMatrices {
    pub f_x: Covariance,
    pub f_w: SMatrix<f64, STATE_DIM, NOISE_DIM>,
    /// Diagonal of the discretized process-noise covariance.
    pub q_w: SMatrix<f64, NOISE_DIM, 1>,
}

/// Effective relative acceleration in the elevator-local frame:
/// `R (a_m - b_a) + g - a_ez e3`. In inertial mode the transport term is
/// not part of the model at all, so the state degenerates to standard
/// strapdown kinematics.
pub fn effective_relative_accel(x: &FilterState, u: &ImuSample) -> Vec3 {
    let base = x.q * (u.acc - x.ba) + x.gravity;
    match x.mode {
        Mode::NonInertial => base - x.a_ez * Vec3::z(),
        Mode::Inertial => base,
    }
}

fn check_dt(t: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::NonMonotonicTime { t, dt });
    }
    if dt > MAX_IMU_DT {
        return Err(Error::DataGap {
            t,
            dt,
            max: MAX_IMU_DT,
        });
    }
    Ok(())
}

/// Zero-order-hold discrete propagation of the nominal state.
///
/// Biases and the elevator acceleration are held constant over the
/// interval; in inertial mode the elevator scalars stay exact zeros.
pub fn propagate_nominal(x: &FilterState, u: &ImuSample, dt: f64) -> Result<FilterState> {
    check_dt(u.t, dt)?;
    let a = effective_relative_accel(x, u);
    let mut out = x.clone();
    out.p = x.p + x.v * dt + 0.5 * a * dt * dt;
    let mut q = x.q * exp_so3(&((u.gyr - x.bw) * dt));
    q.renormalize();
    out.q = q;
    out.v = x.v + a * dt;
    if x.mode == Mode::NonInertial {
        out.p_ez = x.p_ez + x.v_ez * dt + 0.5 * x.a_ez * dt * dt;
        out.v_ez = x.v_ez + x.a_ez * dt;
    }
    Ok(out)
}

/// Discrete error-state transition and noise-injection matrices, with the
/// elevator blocks masked in inertial mode.
pub fn build_transition(
    x: &FilterState,
    u: &ImuSample,
    dt: f64,
    noise: &NoiseParams,
) -> TransitionMatrices {
    let a_hat = u.acc - x.ba;
    let w_hat = u.gyr - x.bw;
    let r = x.q.to_rotation_matrix().into_inner();
    let r_skew_a = r * skew(&a_hat);

    let mut f_x = Covariance::identity();
    f_x.fixed_view_mut::<3, 3>(DP, DTHETA)
        .copy_from(&(-0.5 * dt * dt * r_skew_a));
    f_x.fixed_view_mut::<3, 3>(DP, DV)
        .copy_from(&(dt * nalgebra::Matrix3::identity()));
    f_x.fixed_view_mut::<3, 3>(DP, DBA)
        .copy_from(&(-0.5 * dt * dt * r));
    f_x.fixed_view_mut::<3, 3>(DTHETA, DTHETA)
        .copy_from(&exp_so3(&(-w_hat * dt)).to_rotation_matrix().into_inner());
    f_x.fixed_view_mut::<3, 3>(DTHETA, DBW)
        .copy_from(&(-dt * nalgebra::Matrix3::identity()));
    f_x.fixed_view_mut::<3, 3>(DV, DTHETA)
        .copy_from(&(-dt * r_skew_a));
    f_x.fixed_view_mut::<3, 3>(DV, DBA).copy_from(&(-dt * r));

    let mut f_w = SMatrix::<f64, STATE_DIM, NOISE_DIM>::zeros();
    f_w.fixed_view_mut::<3, 3>(DTHETA, 3)
        .copy_from(&(-nalgebra::Matrix3::identity()));
    f_w.fixed_view_mut::<3, 3>(DV, 0).copy_from(&(-r));
    f_w.fixed_view_mut::<3, 3>(DBA, 6)
        .copy_from(&nalgebra::Matrix3::identity());
    f_w.fixed_view_mut::<3, 3>(DBW, 9)
        .copy_from(&nalgebra::Matrix3::identity());

    if x.mode == Mode::NonInertial {
        // Transport coupling into the relative kinematics plus the
        // constant-acceleration transport chain itself.
        f_x[(DP + 2, DAEZ)] = -0.5 * dt * dt;
        f_x[(DV + 2, DAEZ)] = -dt;
        f_x[(DPEZ, DVEZ)] = dt;
        f_x[(DPEZ, DAEZ)] = 0.5 * dt * dt;
        f_x[(DVEZ, DAEZ)] = dt;
        f_w[(DAEZ, 12)] = 1.0;
    }

    let mut q_w = SMatrix::<f64, NOISE_DIM, 1>::zeros();
    for i in 0..3 {
        q_w[i] = noise.sigma_a_sq * dt;
        q_w[3 + i] = noise.sigma_w_sq * dt;
        q_w[6 + i] = noise.sigma_ba_sq * dt;
        q_w[9 + i] = noise.sigma_bw_sq * dt;
    }
    q_w[12] = if x.mode == Mode::NonInertial {
        noise.sigma_ae_sq * dt
    } else {
        0.0
    };

    TransitionMatrices { f_x, f_w, q_w }
}

/// `P <- F_x P F_x^T + F_w Q_w F_w^T`, re-symmetrized.
pub fn propagate_covariance(p: &Covariance, m: &TransitionMatrices) -> Covariance {
    let mut out = m.f_x * p * m.f_x.transpose();
    // F_w Q F_w^T with diagonal Q.
    let mut fq = m.f_w;
    for c in 0..NOISE_DIM {
        for r in 0..STATE_DIM {
            fq[(r, c)] *= m.q_w[c];
        }
    }
    out += fq * m.f_w.transpose();
    symmetrize(&mut out);
    debug_validate(&out);
    out
}
