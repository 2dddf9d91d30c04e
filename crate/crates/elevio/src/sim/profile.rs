//! Piecewise-constant-acceleration motion profiles: the vertical elevator
//! trapezoid and straight-line robot moves reuse the same machinery.

use serde::{Deserialize, Serialize};

/// One constant-acceleration span.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub duration: f64,
    pub accel: f64,
}

/// Symmetric trapezoidal velocity profile covering `travel` metres
/// (triangular when `v_max` is unreachable). Starts and ends at rest;
/// the double integral equals `travel` exactly.
pub fn trapezoid_profile(travel: f64, a_max: f64, v_max: f64) -> Vec<ProfileSegment> {
    assert!(a_max > 0.0 && v_max > 0.0, "profile limits must be positive");
    if travel == 0.0 {
        return Vec::new();
    }
    let dir = travel.signum();
    let d = travel.abs();
    let d_acc = v_max * v_max / (2.0 * a_max);
    if 2.0 * d_acc >= d {
        let v_peak = (a_max * d).sqrt();
        let t_acc = v_peak / a_max;
        vec![
            ProfileSegment {
                duration: t_acc,
                accel: dir * a_max,
            },
            ProfileSegment {
                duration: t_acc,
                accel: -dir * a_max,
            },
        ]
    } else {
        let t_acc = v_max / a_max;
        let t_cruise = (d - 2.0 * d_acc) / v_max;
        vec![
            ProfileSegment {
                duration: t_acc,
                accel: dir * a_max,
            },
            ProfileSegment {
                duration: t_cruise,
                accel: 0.0,
            },
            ProfileSegment {
                duration: t_acc,
                accel: -dir * a_max,
            },
        ]
    }
}

pub fn profile_duration(segments: &[ProfileSegment]) -> f64 {
    segments.iter().map(|s| s.duration).sum()
}

/// Analytic evaluation at `tau` seconds from profile start: returns
/// (distance, velocity, acceleration). Beyond the end the profile holds
/// its terminal distance at rest.
pub fn eval_profile(segments: &[ProfileSegment], tau: f64) -> (f64, f64, f64) {
    let mut d = 0.0;
    let mut v = 0.0;
    let mut remaining = tau.max(0.0);
    for seg in segments {
        if remaining < seg.duration {
            let t = remaining;
            return (d + v * t + 0.5 * seg.accel * t * t, v + seg.accel * t, seg.accel);
        }
        let t = seg.duration;
        d += v * t + 0.5 * seg.accel * t * t;
        v += seg.accel * t;
        remaining -= t;
    }
    (d, 0.0, 0.0)
}

pub fn profile_travel(segments: &[ProfileSegment]) -> f64 {
    eval_profile(segments, profile_duration(segments) + 1.0).0
}
