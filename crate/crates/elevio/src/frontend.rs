//! Scan preprocessing: validity filtering, feedback-adaptive voxel
//! downsampling and optional constant-velocity undistortion.
//!
//! The voxel size follows a proportional feedback law
//! `v' = v * (N / N_target)^(1/alpha)` clamped to `[v_min, v_max]`, which
//! keeps the downsampled point count near the target through the large
//! scale jumps between open floors and a closed cabin.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{exp_so3, Vec3};
use crate::scan_update::Scan;
use crate::state::{Extrinsics, FilterState};

/// Feedback state of the adaptive voxel filter.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveVoxelState {
    /// Current voxel edge length, m.
    pub v: f64,
    /// Target point count per scan.
    pub n_target: usize,
    /// Effective-dimension exponent of the feedback law.
    pub alpha: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for AdaptiveVoxelState {
    fn default() -> Self {
        AdaptiveVoxelState {
            v: 0.2,
            n_target: 2000,
            alpha: 1.2,
            v_min: 0.05,
            v_max: 0.8,
        }
    }
}

/// Preprocessing switches.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    /// Points closer than this are dropped, m.
    pub min_range: f64,
    /// Points farther than this are dropped, m.
    pub max_range: f64,
    /// Constant-velocity undistortion of per-point offsets.
    pub undistort: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            min_range: 0.1,
            max_range: 100.0,
            undistort: false,
        }
    }
}

fn voxel_key(p: &Vec3, v: f64) -> (i64, i64, i64) {
    (
        (p.x / v).floor() as i64,
        (p.y / v).floor() as i64,
        (p.z / v).floor() as i64,
    )
}

/// Keep one representative per occupied voxel: the member point nearest
/// the centroid of that voxel's points, ties broken by lowest
/// lexicographic coordinate. Output is sorted by voxel key, so the result
/// does not depend on input order.
pub fn voxel_downsample(points: &[Vec3], v: f64) -> Vec<Vec3> {
    assert!(v > 0.0, "voxel size must be positive");
    let mut cells: HashMap<(i64, i64, i64), (Vec3, Vec<usize>)> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let e = cells
            .entry(voxel_key(p, v))
            .or_insert_with(|| (Vec3::zeros(), Vec::new()));
        e.0 += p;
        e.1.push(i);
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    keys.iter()
        .map(|k| {
            let (sum, members) = &cells[k];
            let centroid = sum / members.len() as f64;
            let mut best = points[members[0]];
            let mut best_d = (best - centroid).norm_squared();
            for &i in &members[1..] {
                let p = points[i];
                let d = (p - centroid).norm_squared();
                if d < best_d || (d == best_d && (p.x, p.y, p.z) < (best.x, best.y, best.z)) {
                    best = p;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// One step of the proportional feedback law. `n == 0` halves the voxel
/// size (the strongest shrink the law is allowed).
pub fn adapt_voxel(s: &AdaptiveVoxelState, n: usize) -> AdaptiveVoxelState {
    let factor = if n == 0 {
        0.5
    } else {
        (n as f64 / s.n_target as f64).powf(1.0 / s.alpha)
    };
    let mut out = s.clone();
    out.v = (s.v * factor).clamp(s.v_min, s.v_max);
    out
}

/// Constant-velocity undistortion: each point is moved from its sampling
/// pose to the scan-end pose using the current velocity and the last
/// body rate.
fn undistort_points(scan: &Scan, x: &FilterState, ext: &Extrinsics, omega: &Vec3) -> Vec<Vec3> {
    let Some(offsets) = &scan.offsets else {
        return scan.points.clone();
    };
    let r_end = x.q;
    scan.points
        .iter()
        .zip(offsets.iter())
        .map(|(p, &dt)| {
            // Pose at sampling time relative to the scan-end pose.
            let r_j = x.q * exp_so3(&(omega * dt));
            let p_j = x.p + x.v * dt;
            let world = r_j * ext.to_imu(p) + p_j;
            let imu_end = r_end.inverse() * (world - x.p);
            ext.r_l_i.inverse() * (imu_end - ext.p_l_i)
        })
        .collect()
}

/// Full preprocessing: NaN/range filtering, optional undistortion, voxel
/// downsampling at the current adaptive size, then one feedback step.
///
/// `motion` supplies the propagated state, extrinsics and last body rate
/// when undistortion is enabled.
pub fn preprocess(
    scan: &Scan,
    s: &AdaptiveVoxelState,
    opts: &PreprocessOptions,
    motion: Option<(&FilterState, &Extrinsics, &Vec3)>,
) -> Result<(Scan, AdaptiveVoxelState)> {
    let mut work = scan.clone();
    if opts.undistort {
        if let Some((state, ext, omega)) = motion {
            work.points = undistort_points(&work, state, ext, omega);
        }
    }
    let kept: Vec<Vec3> = work
        .points
        .iter()
        .filter(|p| {
            let r = p.norm();
            p.iter().all(|c| c.is_finite()) && r > opts.min_range && r <= opts.max_range
        })
        .copied()
        .collect();
    let down = voxel_downsample(&kept, s.v);
    if down.is_empty() {
        return Err(Error::EmptyScan { t: scan.t_end });
    }
    let next = adapt_voxel(s, down.len());
    Ok((
        Scan {
            t_end: scan.t_end,
            points: down,
            offsets: None,
        },
        next,
    ))
}
