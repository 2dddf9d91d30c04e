//! Trajectory evaluation: terminal vertical error, return-to-origin
//! error, detection counts and vertical RMSE against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{GroundTruthRecord, TrajectoryRecord};
use crate::state::Mode;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    /// Estimated terminal height (displacement from the first record).
    pub z_end: f64,
    pub z_ref: Option<f64>,
    /// Terminal vertical error `z_end - z_ref`.
    pub e_z: Option<f64>,
    pub delta_z_est: f64,
    pub delta_z_gt: Option<f64>,
    /// Return/ride height error `|delta_z_est - delta_z_gt|`.
    pub e_ret: Option<f64>,
    pub rides_gt: usize,
    pub entry_detected: usize,
    pub exit_detected: usize,
    pub false_flags: usize,
    /// `detected/annotated` entry counter.
    pub detection: String,
    pub vertical_rmse: Option<f64>,
}

fn flag_times(traj: &[TrajectoryRecord], flag: &str) -> Vec<f64> {
    traj.iter()
        .filter(|r| r.flags.split(';').any(|f| f == flag))
        .map(|r| r.t)
        .collect()
}

/// Door-closed intervals from the ground-truth mode column.
fn gt_intervals(gt: &[GroundTruthRecord]) -> Vec<(f64, f64)> {
    let mut intervals = Vec::new();
    let mut start: Option<f64> = None;
    for row in gt {
        match (row.mode, start) {
            (Mode::NonInertial, None) => start = Some(row.t),
            (Mode::Inertial, Some(s)) => {
                intervals.push((s, row.t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        intervals.push((s, gt.last().map(|r| r.t).unwrap_or(s)));
    }
    intervals
}

fn count_detections(flags: &[f64], intervals: &[(f64, f64)]) -> (usize, usize) {
    let mut hit = vec![false; intervals.len()];
    let mut false_flags = 0;
    for &t in flags {
        match intervals.iter().position(|&(a, b)| t >= a && t <= b) {
            Some(i) if !hit[i] => hit[i] = true,
            _ => false_flags += 1,
        }
    }
    (hit.iter().filter(|&&h| h).count(), false_flags)
}

/// Evaluate a trajectory against ground truth and/or a reference height.
pub fn evaluate(
    traj: &[TrajectoryRecord],
    gt: Option<&[GroundTruthRecord]>,
    z_ref: Option<f64>,
) -> Result<Metrics> {
    if traj.is_empty() {
        return Err(Error::Parse("empty trajectory".into()));
    }
    if gt.is_none() && z_ref.is_none() {
        return Err(Error::MissingReference);
    }
    let z_first = traj.first().unwrap().p.z;
    let z_end = traj.last().unwrap().p.z;
    let delta_z_est = z_end - z_first;

    let mut metrics = Metrics {
        z_end,
        z_ref,
        e_z: z_ref.map(|r| z_end - r),
        delta_z_est,
        delta_z_gt: None,
        e_ret: None,
        rides_gt: 0,
        entry_detected: 0,
        exit_detected: 0,
        false_flags: 0,
        detection: String::new(),
        vertical_rmse: None,
    };

    if let Some(gt) = gt {
        if gt.is_empty() {
            return Err(Error::Parse("empty ground truth".into()));
        }
        // Align by timestamp: displacements measured from the first
        // matched pair.
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        let mut j = 0usize;
        for r in traj {
            while j < gt.len() && gt[j].t < r.t - 1e-9 {
                j += 1;
            }
            if j < gt.len() && (gt[j].t - r.t).abs() < 1e-9 {
                pairs.push((r.p.z, gt[j].p.z));
            }
        }
        if pairs.is_empty() {
            return Err(Error::Parse("no matching timestamps in ground truth".into()));
        }
        let (z0_est, z0_gt) = pairs[0];
        let delta_z_gt = pairs.last().unwrap().1 - z0_gt;
        let delta_est_matched = pairs.last().unwrap().0 - z0_est;
        metrics.delta_z_gt = Some(delta_z_gt);
        metrics.e_ret = Some((delta_est_matched - delta_z_gt).abs());
        if metrics.e_z.is_none() {
            metrics.z_ref = Some(delta_z_gt);
            metrics.e_z = Some(delta_est_matched - delta_z_gt);
        }
        let sum_sq: f64 = pairs
            .iter()
            .map(|&(ze, zg)| {
                let err = (ze - z0_est) - (zg - z0_gt);
                err * err
            })
            .sum();
        metrics.vertical_rmse = Some((sum_sq / pairs.len() as f64).sqrt());

        let intervals = gt_intervals(gt);
        metrics.rides_gt = intervals.len();
        let (entry_hits, entry_false) = count_detections(&flag_times(traj, "entry"), &intervals);
        let (exit_hits, exit_false) = count_detections(&flag_times(traj, "exit"), &intervals);
        metrics.entry_detected = entry_hits;
        metrics.exit_detected = exit_hits;
        metrics.false_flags = entry_false + exit_false;
        metrics.detection = format!("{}/{}", entry_hits, intervals.len());
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{Rotation, Vec3};

    fn traj_row(t: f64, z: f64, mode: Mode, flags: &str) -> TrajectoryRecord {
        TrajectoryRecord {
            t,
            p: Vec3::new(0.0, 0.0, z),
            q: Rotation::identity(),
            p_ez: 0.0,
            v_ez: 0.0,
            a_ez: 0.0,
            mode,
            flags: flags.to_string(),
        }
    }

    fn gt_row(t: f64, z: f64, mode: Mode) -> GroundTruthRecord {
        GroundTruthRecord {
            t,
            p: Vec3::new(0.0, 0.0, z),
            q: Rotation::identity(),
            p_ez: 0.0,
            v_ez: 0.0,
            a_ez: 0.0,
            mode,
        }
    }

    #[test]
    fn terminal_error_against_reference_height() {
        let traj = vec![
            traj_row(0.0, 0.0, Mode::Inertial, ""),
            traj_row(1.0, 0.002, Mode::Inertial, ""),
        ];
        let m = evaluate(&traj, None, Some(0.0)).unwrap();
        assert_eq!(m.e_z, Some(0.002));
    }

    #[test]
    fn return_error_against_ground_truth() {
        let traj = vec![
            traj_row(0.0, 0.0, Mode::Inertial, ""),
            traj_row(1.0, 6.01, Mode::Inertial, ""),
        ];
        let gt = vec![gt_row(0.0, 0.4, Mode::Inertial), gt_row(1.0, 6.4, Mode::Inertial)];
        let m = evaluate(&traj, Some(&gt), None).unwrap();
        assert!((m.e_ret.unwrap() - 0.01).abs() < 1e-12);
        assert!((m.delta_z_gt.unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn detection_counter_format() {
        let traj = vec![
            traj_row(0.0, 0.0, Mode::Inertial, ""),
            traj_row(1.0, 0.0, Mode::NonInertial, "entry"),
            traj_row(2.0, 0.0, Mode::NonInertial, ""),
            traj_row(3.0, 0.0, Mode::Inertial, "exit"),
            traj_row(10.0, 0.0, Mode::Inertial, ""),
        ];
        let mut gt: Vec<GroundTruthRecord> = Vec::new();
        gt.push(gt_row(0.0, 0.0, Mode::Inertial));
        for k in 1..=3 {
            gt.push(gt_row(k as f64, 0.0, Mode::NonInertial));
        }
        gt.push(gt_row(4.0, 0.0, Mode::Inertial));
        // A second annotated ride that went undetected.
        for k in 6..=8 {
            gt.push(gt_row(k as f64, 0.0, Mode::NonInertial));
        }
        gt.push(gt_row(9.0, 0.0, Mode::Inertial));
        gt.push(gt_row(10.0, 0.0, Mode::Inertial));
        let m = evaluate(&traj, Some(&gt), None).unwrap();
        assert_eq!(m.rides_gt, 2);
        assert_eq!(m.detection, "1/2");
        assert_eq!(m.false_flags, 0);
    }

    #[test]
    fn flags_outside_intervals_are_false_positives() {
        let traj = vec![
            traj_row(0.0, 0.0, Mode::Inertial, "entry"),
            traj_row(5.0, 0.0, Mode::Inertial, ""),
        ];
        let gt = vec![
            gt_row(0.0, 0.0, Mode::Inertial),
            gt_row(1.0, 0.0, Mode::NonInertial),
            gt_row(2.0, 0.0, Mode::NonInertial),
            gt_row(3.0, 0.0, Mode::Inertial),
            gt_row(5.0, 0.0, Mode::Inertial),
        ];
        let m = evaluate(&traj, Some(&gt), None).unwrap();
        assert_eq!(m.false_flags, 1);
        assert_eq!(m.entry_detected, 0);
    }

    #[test]
    fn missing_reference_is_an_error() {
        let traj = vec![traj_row(0.0, 0.0, Mode::Inertial, "")];
        assert!(matches!(
            evaluate(&traj, None, None),
            Err(Error::MissingReference)
        ));
    }
}
