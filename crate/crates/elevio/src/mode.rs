//! Elevator mode manager: raises the entry flag from LiDAR spatial
//! confinement and the exit flag from a variance finite-state machine
//! over the estimated transport velocity.

use std::collections::VecDeque;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan_update::Scan;

/// Robust maximum depth: nearest-rank percentile of the horizontal point
/// distances `sqrt(x^2 + y^2)` in the body frame.
pub fn robust_max_depth(scan: &Scan, percentile: f64, min_points: usize) -> Result<f64> {
    let mut radii: Vec<f64> = scan
        .points
        .iter()
        .filter(|p| p.iter().all(|c| c.is_finite()))
        .map(|p| (p.x * p.x + p.y * p.y).sqrt())
        .collect();
    if radii.len() < min_points {
        return Err(Error::InsufficientPoints {
            have: radii.len(),
            need: min_points,
        });
    }
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Nearest-rank: smallest value with at least `percentile` of the mass
    // at or below it. The tiny slack keeps exact products like 0.94*100
    // from rounding up.
    let rank = (percentile * radii.len() as f64 - 1e-9).ceil() as usize;
    Ok(radii[rank.clamp(1, radii.len()) - 1])
}

/// Entry detector: the depth metric must stay below the cabin threshold
/// continuously for the full confirmation window.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EntryDetector {
    /// Cabin-size threshold, m.
    pub d_th: f64,
    /// Confirmation duration, s.
    pub dt_door: f64,
    /// Depth percentile.
    pub percentile: f64,
    /// Minimum valid points per scan.
    pub min_points: usize,
    #[serde(skip)]
    below_since: Option<f64>,
}

impl Default for EntryDetector {
    fn default() -> Self {
        EntryDetector {
            d_th: 3.0,
            dt_door: 2.0,
            percentile: 0.94,
            min_points: 50,
            below_since: None,
        }
    }
}

impl EntryDetector {
    /// Feed one depth observation; returns true when the flag fires.
    /// Any violation resets the timer.
    pub fn update(&mut self, d_max: f64, t: f64) -> bool {
        if d_max < self.d_th {
            let since = *self.below_since.get_or_insert(t);
            if t - since >= self.dt_door {
                self.below_since = None;
                return true;
            }
        } else {
            self.below_since = None;
        }
        false
    }

    pub fn reset(&mut self) {
        self.below_since = None;
    }
}

/// Phases of one elevator cycle as seen by the velocity variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitPhase {
    Idle,
    Peak1,
    Cruise,
    Peak2,
    ConfirmStop,
}

/// Exit detector: tracks acceleration/cruise/deceleration through the
/// sliding-window variance of the estimated vertical transport velocity
/// and confirms the stop once variance and mean stay small.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExitFsm {
    /// Sliding window span, s.
    pub window: f64,
    /// Variance above this marks an acceleration/deceleration peak.
    pub var_peak: f64,
    /// Variance below this marks quiet motion.
    pub var_quiet: f64,
    /// |mean velocity| below this counts as stopped, m/s.
    pub v_stop: f64,
    /// Quiet-and-stopped dwell before the flag fires, s.
    pub t_confirm: f64,
    #[serde(skip)]
    pub phase: ExitPhase,
    #[serde(skip)]
    samples: VecDeque<(f64, f64)>,
    #[serde(skip)]
    confirm_since: Option<f64>,
}

impl Default for ExitFsm {
    fn default() -> Self {
        ExitFsm {
            window: 0.5,
            var_peak: 4e-3,
            var_quiet: 2e-3,
            v_stop: 0.05,
            t_confirm: 0.9,
            phase: ExitPhase::Idle,
            samples: VecDeque::new(),
            confirm_since: None,
        }
    }
}

impl ExitFsm {
    fn window_stats(&self) -> Option<(f64, f64)> {
        let k = self.samples.len();
        if k < 4 {
            return None;
        }
        let mean = self.samples.iter().map(|(_, v)| v).sum::<f64>() / k as f64;
        let var = self
            .samples
            .iter()
            .map(|(_, v)| (v - mean) * (v - mean))
            .sum::<f64>()
            / k as f64;
        Some((var, mean))
    }

    /// Feed one velocity estimate; returns true when the exit flag fires.
    /// Fires at most once, then resets to idle.
    pub fn update(&mut self, v_ez: f64, t: f64) -> bool {
        self.samples.push_back((t, v_ez));
        while let Some(&(t0, _)) = self.samples.front() {
            if t - t0 > self.window {
                self.samples.pop_front();
            } else {
                break;
            }
        }
        let Some((var, mean)) = self.window_stats() else {
            return false;
        };
        match self.phase {
            ExitPhase::Idle => {
                if var > self.var_peak {
                    self.phase = ExitPhase::Peak1;
                }
            }
            ExitPhase::Peak1 => {
                if var < self.var_quiet {
                    self.phase = ExitPhase::Cruise;
                }
            }
            ExitPhase::Cruise => {
                if var > self.var_peak {
                    self.phase = ExitPhase::Peak2;
                }
            }
            ExitPhase::Peak2 => {
                if var < self.var_quiet && mean.abs() < self.v_stop {
                    self.phase = ExitPhase::ConfirmStop;
                    self.confirm_since = Some(t);
                }
            }
            ExitPhase::ConfirmStop => {
                if var < self.var_quiet && mean.abs() < self.v_stop {
                    if t - self.confirm_since.unwrap_or(t) >= self.t_confirm {
                        self.reset();
                        return true;
                    }
                } else {
                    self.phase = ExitPhase::Peak2;
                    self.confirm_since = None;
                }
            }
        }
        false
    }

    pub fn reset(&mut self) {
        self.phase = ExitPhase::Idle;
        self.samples.clear();
        self.confirm_since = None;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriggerKind {
    Entry,
    Exit,
}

/// Manual trigger channel mirroring an operator-published flag, parsed
/// from lines of `t_seconds entry|exit`.
#[derive(Clone, Debug, Default)]
pub struct ManualTriggers {
    events: Vec<(f64, TriggerKind)>,
    cursor: usize,
}

impl ManualTriggers {
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut events = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let t: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("trigger line {}: bad time", lineno + 1)))?;
            let kind = match parts.next() {
                Some("entry") => TriggerKind::Entry,
                Some("exit") => TriggerKind::Exit,
                other => {
                    return Err(Error::Parse(format!(
                        "trigger line {}: expected entry|exit, got {:?}",
                        lineno + 1,
                        other
                    )))
                }
            };
            events.push((t, kind));
        }
        events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(ManualTriggers { events, cursor: 0 })
    }

    /// Pop the next trigger due at or before `t`, if any.
    pub fn due(&mut self, t: f64) -> Option<TriggerKind> {
        if self.cursor < self.events.len() && self.events[self.cursor].0 <= t {
            let kind = self.events[self.cursor].1;
            self.cursor += 1;
            Some(kind)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Vec3;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn scan_of(points: Vec<Vec3>) -> Scan {
        Scan {
            t_end: 0.0,
            points,
            offsets: None,
        }
    }

    #[test]
    fn depth_of_uniform_ring() {
        let pts: Vec<Vec3> = (0..100)
            .map(|i| {
                let a = i as f64 * 0.0628;
                Vec3::new(2.0 * a.cos(), 2.0 * a.sin(), 0.3)
            })
            .collect();
        let d = robust_max_depth(&scan_of(pts), 0.94, 50).unwrap();
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn depth_ignores_outliers_above_percentile() {
        let mut pts: Vec<Vec3> = (0..94).map(|_| Vec3::new(1.0, 0.0, 0.0)).collect();
        pts.extend((0..6).map(|_| Vec3::new(50.0, 0.0, 0.0)));
        let d = robust_max_depth(&scan_of(pts), 0.94, 50).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn depth_order_statistics_on_uniform_radii() {
        let mut rng = StdRng::seed_from_u64(71);
        let pts: Vec<Vec3> = (0..20_000)
            .map(|_| {
                let r = rng.random_range(0.0..10.0);
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Vec3::new(r * a.cos(), r * a.sin(), 0.0)
            })
            .collect();
        let d = robust_max_depth(&scan_of(pts), 0.94, 50).unwrap();
        assert!((d - 9.4).abs() < 0.1, "d = {d}");
    }

    #[test]
    fn depth_is_order_insensitive() {
        let mut rng = StdRng::seed_from_u64(72);
        let mut pts: Vec<Vec3> = (0..300)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let a = robust_max_depth(&scan_of(pts.clone()), 0.94, 50).unwrap();
        pts.reverse();
        let b = robust_max_depth(&scan_of(pts), 0.94, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn depth_needs_enough_points() {
        let pts: Vec<Vec3> = (0..49).map(|_| Vec3::new(1.0, 0.0, 0.0)).collect();
        assert!(matches!(
            robust_max_depth(&scan_of(pts), 0.94, 50),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn entry_fires_after_sustained_confinement() {
        let mut det = EntryDetector::default();
        let mut fired = false;
        for k in 0..=20 {
            fired |= det.update(1.5, k as f64 * 0.1);
        }
        assert!(fired);
    }

    #[test]
    fn entry_timer_resets_on_single_violation() {
        let mut det = EntryDetector::default();
        for k in 0..19 {
            assert!(!det.update(1.5, k as f64 * 0.1)); // 1.9 s below
        }
        assert!(!det.update(3.5, 1.9)); // one frame above resets
        for k in 0..19 {
            assert!(!det.update(1.5, 2.0 + k as f64 * 0.1));
        }
        assert!(det.update(1.5, 4.0)); // fresh 2.0 s window completes
    }

    #[test]
    fn entry_threshold_is_strict() {
        let mut det = EntryDetector::default();
        let mut fired = false;
        for k in 0..=20 {
            fired |= det.update(2.9, k as f64 * 0.1);
        }
        assert!(fired);
        // Exactly at the threshold never counts as inside.
        let mut det = EntryDetector::default();
        for k in 0..=40 {
            assert!(!det.update(3.0, k as f64 * 0.1));
        }
    }

    /// Trapezoid velocity profile with additive noise, fed at 10 Hz.
    fn trapezoid_velocity(t: f64, a: f64, t_acc: f64, t_cruise: f64) -> f64 {
        let v_max = a * t_acc;
        if t < 0.0 {
            0.0
        } else if t < t_acc {
            a * t
        } else if t < t_acc + t_cruise {
            v_max
        } else if t < 2.0 * t_acc + t_cruise {
            v_max - a * (t - t_acc - t_cruise)
        } else {
            0.0
        }
    }

    #[test]
    fn exit_fires_once_shortly_after_stop() {
        let mut rng = StdRng::seed_from_u64(73);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut fsm = ExitFsm::default();
        let (a, t_acc, t_cruise) = (1.0, 1.5, 4.0);
        let t_stop = 2.0 * t_acc + t_cruise;
        let mut flags = Vec::new();
        for k in 0..200 {
            let t = k as f64 * 0.1;
            let v = trapezoid_velocity(t, a, t_acc, t_cruise) + noise.sample(&mut rng);
            if fsm.update(v, t) {
                flags.push(t);
            }
        }
        assert_eq!(flags.len(), 1, "flags at {flags:?}");
        assert!(flags[0] > t_stop, "flagged before the stop");
        assert!(flags[0] - t_stop < 1.5, "flag {} s after stop", flags[0] - t_stop);
    }

    #[test]
    fn exit_never_fires_on_constant_zero() {
        let mut fsm = ExitFsm::default();
        for k in 0..600 {
            assert!(!fsm.update(0.0, k as f64 * 0.1));
        }
    }

    #[test]
    fn exit_requires_second_peak() {
        // Single acceleration then endless cruise: no flag.
        let mut fsm = ExitFsm::default();
        for k in 0..2000 {
            let t = k as f64 * 0.1;
            let v = if t < 1.5 { t } else { 1.5 };
            assert!(!fsm.update(v, t));
        }
        assert_eq!(fsm.phase, ExitPhase::Cruise);
    }

    #[test]
    fn exit_detects_slow_and_fast_profiles() {
        // Bounds of the randomized-ride envelope the detector must cover.
        for &(a, travel) in &[(0.5, 3.0), (1.2, 3.0), (0.5, 24.0), (1.2, 24.0)] {
            let v_max = 1.0f64;
            let t_acc = v_max / a;
            let d_acc = v_max * v_max / (2.0 * a);
            let t_cruise = (travel - 2.0 * d_acc) / v_max;
            assert!(t_cruise > 0.0);
            let t_stop = 2.0 * t_acc + t_cruise;
            let mut rng = StdRng::seed_from_u64((a * 100.0) as u64 + travel as u64);
            let noise = Normal::new(0.0, 0.015).unwrap();
            let mut fsm = ExitFsm::default();
            let mut flags = Vec::new();
            for k in 0..((t_stop + 6.0) * 10.0) as usize {
                let t = k as f64 * 0.1;
                let v = trapezoid_velocity(t, a, t_acc, t_cruise) + noise.sample(&mut rng);
                if fsm.update(v, t) {
                    flags.push(t);
                }
            }
            assert_eq!(flags.len(), 1, "a={a} travel={travel}: flags {flags:?}");
            assert!(flags[0] > t_stop && flags[0] - t_stop < 2.0);
        }
    }

    #[test]
    fn manual_triggers_parse_and_drain_in_order() {
        let text = "3.5 entry\n# comment\n10.25 exit\n";
        let mut trig = ManualTriggers::parse(std::io::Cursor::new(text)).unwrap();
        assert_eq!(trig.due(3.0), None);
        assert_eq!(trig.due(3.6), Some(TriggerKind::Entry));
        assert_eq!(trig.due(9.0), None);
        assert_eq!(trig.due(11.0), Some(TriggerKind::Exit));
        assert_eq!(trig.due(99.0), None);
    }

    #[test]
    fn manual_triggers_reject_garbage() {
        assert!(ManualTriggers::parse(std::io::Cursor::new("abc entry\n")).is_err());
        assert!(ManualTriggers::parse(std::io::Cursor::new("1.0 sideways\n")).is_err());
    }
}
