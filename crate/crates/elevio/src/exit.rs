//! Exit-time handling: zero-state update on the transport velocity and
//! acceleration, re-anchoring of the elevator displacement into the
//! relative position, and the covariance reset that returns the filter to
//! inertial operation.

use nalgebra::{Matrix2, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Vec3;
use crate::state::{
    debug_validate, symmetrize, Covariance, ErrorState, FilterState, Mode, DAEZ, DPEZ, DVEZ,
    STATE_DIM,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExitConfig {
    /// Observation variances of the zero-state pseudo-measurement on
    /// [v_ez, a_ez].
    pub r_zupt: [f64; 2],
    /// Diagonal reinjected for [p_ez, v_ez, a_ez] after the reset.
    pub reset_prior_diag: [f64; 3],
}

impl Default for ExitConfig {
    fn default() -> Self {
        ExitConfig {
            r_zupt: [1e-5, 1e-4],
            reset_prior_diag: [1e-6, 1e-6, 1e-6],
        }
    }
}

/// EKF update with the pseudo-measurement `v_ez = 0, a_ez = 0`.
///
/// The physical rest of the cabin suppresses the accumulated vertical
/// drift through the cross-covariance structure: every state correlated
/// with the transport velocity gets corrected too.
pub fn zero_state_update(
    x: &FilterState,
    p: &Covariance,
    cfg: &ExitConfig,
) -> Result<(FilterState, Covariance)> {
    debug_assert_eq!(x.mode, Mode::NonInertial, "exit update outside a ride");
    // H selects [v_ez, a_ez]; residual drives both to zero.
    let residual = nalgebra::Vector2::new(-x.v_ez, -x.a_ez);
    let mut h = SMatrix::<f64, 2, STATE_DIM>::zeros();
    h[(0, DVEZ)] = 1.0;
    h[(1, DAEZ)] = 1.0;
    let r = Matrix2::from_diagonal(&nalgebra::Vector2::new(cfg.r_zupt[0], cfg.r_zupt[1]));
    let s = h * p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular innovation in exit update".into()))?;
    let k = p * h.transpose() * s_inv;
    let delta: ErrorState = k * residual;
    let out = x.boxplus(&delta);
    let i_kh = Covariance::identity() - k * h;
    let mut p_out = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    symmetrize(&mut p_out);
    debug_validate(&p_out);
    Ok((out, p_out))
}

/// Absorb the elevator displacement into the relative position and zero
/// the transport scalars. The composed global position is unchanged and
/// the filter returns to inertial mode.
pub fn reanchor(x: &FilterState) -> FilterState {
    let mut out = x.clone();
    out.p = x.p + x.p_ez * Vec3::z();
    out.p_ez = 0.0;
    out.v_ez = 0.0;
    out.a_ez = 0.0;
    out.mode = Mode::Inertial;
    out
}

/// Zero the elevator cross-covariance and reinject small diagonal priors,
/// so ride-accumulated transport uncertainty cannot leak into subsequent
/// inertial navigation.
pub fn reset_covariance(p: &Covariance, cfg: &ExitConfig) -> Covariance {
    let mut out = *p;
    for i in DPEZ..STATE_DIM {
        for j in 0..STATE_DIM {
            out[(i, j)] = 0.0;
            out[(j, i)] = 0.0;
        }
    }
    out[(DPEZ, DPEZ)] = cfg.reset_prior_diag[0];
    out[(DVEZ, DVEZ)] = cfg.reset_prior_diag[1];
    out[(DAEZ, DAEZ)] = cfg.reset_prior_diag[2];
    debug_validate(&out);
    out
}
