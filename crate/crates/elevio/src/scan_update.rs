//! Point-to-plane correspondence construction and the iterated
//! error-state Kalman update.
//!
//! The residual only constrains the pose relative to the registration
//! frame: its Jacobian is zero on everything past the attitude block, so
//! the elevator transport states are touched exclusively through
//! cross-covariance. The update runs in information form; with `m` points
//! the per-iteration cost stays at one 18x18 factorization regardless of
//! `m`.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{right_jacobian_so3, skew, Vec3};
use crate::mapping::MapIndex;
use crate::state::{
    debug_validate, symmetrize, Covariance, ErrorState, Extrinsics, FilterState, NoiseParams,
    DTHETA, STATE_DIM,
};

/// One LiDAR sweep. Points are in the LiDAR frame; `offsets` are optional
/// per-point sampling times relative to `t_end` (non-positive).
#[derive(Clone, Debug)]
pub struct Scan {
    pub t_end: f64,
    pub points: Vec<Vec3>,
    pub offsets: Option<Vec<f64>>,
}

/// A valid point-to-plane correspondence.
#[derive(Clone, Debug)]
pub struct PlaneMatch {
    /// Unit plane normal in the registration frame.
    pub normal: Vec3,
    /// A point on the plane (the neighbour centroid).
    pub anchor: Vec3,
    /// The scan point expressed in the IMU frame.
    pub point_body: Vec3,
}

/// Outcome bookkeeping for one scan update.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    pub iterations: usize,
    pub matched: usize,
    pub attempted: usize,
    pub mean_abs_residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanUpdateConfig {
    /// Neighbours per correspondence.
    pub k_neighbors: usize,
    /// Max point-plane distance for the fit to stay valid, m.
    pub plane_threshold: f64,
    /// Iteration cap.
    pub kappa_max: usize,
    /// Convergence threshold on the state increment norm.
    pub epsilon: f64,
    /// Fewer matches than this is a degenerate update.
    pub min_matches: usize,
    /// Range gate for scan points, m.
    pub min_range: f64,
    pub max_range: f64,
    /// Residual gate applied when re-associating after the first pass, m.
    pub residual_gate: f64,
    /// Points whose nearest map neighbour is farther than this have no
    /// usable correspondence and are skipped, m.
    pub max_correspondence: f64,
}

impl Default for ScanUpdateConfig {
    fn default() -> Self {
        ScanUpdateConfig {
            k_neighbors: 5,
            plane_threshold: 0.1,
            kappa_max: 5,
            epsilon: 1e-4,
            min_matches: 10,
            min_range: 0.5,
            max_range: 100.0,
            residual_gate: 0.3,
            max_correspondence: 1.0,
        }
    }
}

/// Reject near-collinear neighbourhoods: the mid eigenvalue must carry at
/// least this share of the largest.
const MIN_MID_EIGENVALUE_RATIO: f64 = 1e-3;
/// Reject thick neighbourhoods (e.g. sets straddling a corner): the
/// out-of-plane eigenvalue must stay well below the in-plane spread.
const MAX_THICKNESS_RATIO: f64 = 0.1;

/// Least-squares plane through the neighbours: normal is the smallest
/// eigenvector of the centered scatter. Returns `None` when the points
/// are near-collinear, not thin enough to be one plane, or any of them
/// sits farther than `threshold` from the fitted plane.
pub fn fit_plane(neighbors: &[Vec3], threshold: f64) -> Option<(Vec3, Vec3)> {
    if neighbors.len() < 3 {
        return None;
    }
    let n = neighbors.len() as f64;
    let centroid = neighbors.iter().sum::<Vec3>() / n;
    let mut scatter = nalgebra::Matrix3::zeros();
    for p in neighbors {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    scatter /= n;
    let eig = nalgebra::SymmetricEigen::new(scatter);
    // Order eigenpairs ascending.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let (l_min, l_mid, l_max) = (
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    );
    if l_max <= 0.0 || l_mid < MIN_MID_EIGENVALUE_RATIO * l_max {
        return None;
    }
    if l_min > MAX_THICKNESS_RATIO * l_mid {
        return None;
    }
    let normal = eig.eigenvectors.column(idx[0]).normalize();
    let normal = Vec3::new(normal.x, normal.y, normal.z);
    for p in neighbors {
        if normal.dot(&(p - centroid)).abs() > threshold {
            return None;
        }
    }
    Some((normal, centroid))
}

/// Point-to-plane residual `u^T (R (R_L p_L + t_L) + p - q)`.
pub fn point_residual(x: &FilterState, ext: &Extrinsics, m: &PlaneMatch, p_l: &Vec3) -> f64 {
    let p_i = ext.to_imu(p_l);
    m.normal.dot(&(x.q * p_i + x.p - m.anchor))
}

/// Residual Jacobian row `[u^T, -u^T R [p_I]_x, 0_{1x12}]` in the fixed
/// error-state ordering.
pub fn point_jacobian(
    x: &FilterState,
    ext: &Extrinsics,
    m: &PlaneMatch,
    p_l: &Vec3,
) -> SMatrix<f64, 1, STATE_DIM> {
    let p_i = ext.to_imu(p_l);
    let r = x.q.to_rotation_matrix().into_inner();
    let mut h = SMatrix::<f64, 1, STATE_DIM>::zeros();
    h.fixed_view_mut::<1, 3>(0, 0)
        .copy_from(&m.normal.transpose());
    h.fixed_view_mut::<1, 3>(0, DTHETA)
        .copy_from(&(-(m.normal.transpose() * r * skew(&p_i))));
    h
}

struct Association {
    /// Information contribution of the matched rows (top-left 6x6 block).
    a6: SMatrix<f64, 6, 6>,
    /// `H^T R^-1 r` over the matched rows (top 6 entries).
    b6: SMatrix<f64, 6, 1>,
    matched: usize,
    abs_residual_sum: f64,
}

fn associate(
    x: &FilterState,
    body_points: &[Vec3],
    map: &MapIndex,
    cfg: &ScanUpdateConfig,
    noise: &NoiseParams,
    apply_residual_gate: bool,
) -> Association {
    let r_inv = 1.0 / noise.r_lidar;
    let rot = x.q.to_rotation_matrix().into_inner();
    let mut out = Association {
        a6: SMatrix::zeros(),
        b6: SMatrix::zeros(),
        matched: 0,
        abs_residual_sum: 0.0,
    };
    for p_i in body_points {
        let p_reg = x.q * p_i + x.p;
        let Ok(neighbors) = map.knn(&p_reg, cfg.k_neighbors) else {
            continue;
        };
        if neighbors[0].1 > cfg.max_correspondence {
            continue;
        }
        let pts: Vec<Vec3> = neighbors.iter().map(|(p, _)| *p).collect();
        let Some((normal, anchor)) = fit_plane(&pts, cfg.plane_threshold) else {
            continue;
        };
        let residual = normal.dot(&(p_reg - anchor));
        if apply_residual_gate && residual.abs() > cfg.residual_gate {
            continue;
        }
        // h6 = [u^T, -u^T R [p_I]_x]
        let mut h6 = SMatrix::<f64, 1, 6>::zeros();
        h6.fixed_view_mut::<1, 3>(0, 0).copy_from(&normal.transpose());
        h6.fixed_view_mut::<1, 3>(0, 3)
            .copy_from(&(-(normal.transpose() * rot * skew(p_i))));
        out.a6 += h6.transpose() * h6 * r_inv;
        out.b6 += h6.transpose() * (residual * r_inv);
        out.matched += 1;
        out.abs_residual_sum += residual.abs();
    }
    out
}

/// Sparse 18x18 product `M = Jinv * P * Jinv^T` where `Jinv` is identity
/// except for `block` on the attitude rows/cols.
fn jinv_sandwich(p: &Covariance, block: &nalgebra::Matrix3<f64>) -> Covariance {
    let mut m = *p;
    let rows = block * m.fixed_view::<3, STATE_DIM>(DTHETA, 0);
    m.fixed_view_mut::<3, STATE_DIM>(DTHETA, 0).copy_from(&rows);
    let cols = m.fixed_view::<STATE_DIM, 3>(0, DTHETA) * block.transpose();
    m.fixed_view_mut::<STATE_DIM, 3>(0, DTHETA).copy_from(&cols);
    m
}

/// Iterated error-state update against the plane map.
///
/// Each iteration re-associates, stacks the residuals, and applies the
/// gain `K = (H^T R^-1 H + P~^-1)^-1 H^T R^-1` with the prior covariance
/// mapped to the current linearization point through the manifold
/// correction `J`. The posterior covariance uses the Joseph form.
pub fn ieskf_update(
    x_bar: &FilterState,
    p_prior: &Covariance,
    scan: &Scan,
    map: &MapIndex,
    ext: &Extrinsics,
    noise: &NoiseParams,
    cfg: &ScanUpdateConfig,
) -> Result<(FilterState, Covariance, UpdateReport)> {
    let attempted = scan.points.len();
    let body_points: Vec<Vec3> = scan
        .points
        .iter()
        .filter(|p| {
            let r = p.norm();
            r >= cfg.min_range && r <= cfg.max_range
        })
        .map(|p| ext.to_imu(p))
        .collect();

    let mut x = x_bar.clone();
    let mut report = UpdateReport {
        attempted,
        ..Default::default()
    };
    let mut posterior = *p_prior;

    for kappa in 0..cfg.kappa_max {
        let assoc = associate(&x, &body_points, map, cfg, noise, kappa > 0);
        if assoc.matched < cfg.min_matches {
            return Err(Error::DegenerateUpdate {
                matched: assoc.matched,
                attempted,
                min: cfg.min_matches,
            });
        }
        report.matched = assoc.matched;
        report.mean_abs_residual = assoc.abs_residual_sum / assoc.matched as f64;
        report.iterations = kappa + 1;

        let d = x.boxminus(x_bar);
        let dtheta = d.fixed_rows::<3>(DTHETA).into_owned();
        // J = diag(I, A(dtheta)^-T, I) so Jinv has A(dtheta)^T in the
        // attitude block.
        let jinv_block = right_jacobian_so3(&dtheta).transpose();
        let p_tilde = jinv_sandwich(p_prior, &jinv_block);
        let chol_pt = nalgebra::Cholesky::new(p_tilde)
            .ok_or_else(|| Error::Numerical("prior covariance not positive definite".into()))?;
        let pt_inv = chol_pt.inverse();

        let mut info = pt_inv;
        for r in 0..6 {
            for c in 0..6 {
                info[(r, c)] += assoc.a6[(r, c)];
            }
        }
        let chol_a = nalgebra::Cholesky::new(info)
            .ok_or_else(|| Error::Numerical("information matrix not positive definite".into()))?;
        let inv_a = chol_a.inverse();

        let mut b_full = ErrorState::zeros();
        b_full.fixed_rows_mut::<6>(0).copy_from(&assoc.b6);
        let k_r = inv_a * b_full;
        let i_kh = inv_a * pt_inv;

        let mut jinv_d = d;
        let mapped = jinv_block * d.fixed_rows::<3>(DTHETA);
        jinv_d.fixed_rows_mut::<3>(DTHETA).copy_from(&mapped);

        let delta: ErrorState = -k_r - i_kh * jinv_d;
        let x_next = x.boxplus(&delta);
        let change = x_next.boxminus(&x).norm();
        x = x_next;

        // Joseph-form posterior with the J-mapped prior:
        // (I-KH) P~ (I-KH)^T + K R K^T, with K R K^T = A^-1 Hinfo A^-T.
        let mut h_full = Covariance::zeros();
        h_full.fixed_view_mut::<6, 6>(0, 0).copy_from(&assoc.a6);
        posterior = i_kh * p_tilde * i_kh.transpose() + inv_a * h_full * inv_a.transpose();
        symmetrize(&mut posterior);

        if change < cfg.epsilon {
            report.converged = true;
            break;
        }
    }

    debug_validate(&posterior);
    Ok((x, posterior, report))
}
