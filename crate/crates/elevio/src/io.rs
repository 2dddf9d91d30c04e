//! File formats: JSON-lines sensor sequences, trajectory CSV and
//! ground-truth CSV. Floats are written with the shortest round-trip
//! representation, so identical runs produce byte-identical files.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{Rotation, Vec3};
use crate::propagation::ImuSample;
use crate::scan_update::Scan;
use crate::state::Mode;

/// One time-stamped sensor event.
#[derive(Clone, Debug)]
pub enum Event {
    Imu(ImuSample),
    Scan(Scan),
}

impl Event {
    pub fn t(&self) -> f64 {
        match self {
            Event::Imu(u) => u.t,
            Event::Scan(s) => s.t_end,
        }
    }

    /// Sort key implementing the "IMU before scan on ties" rule.
    fn order_key(&self) -> (f64, u8) {
        match self {
            Event::Imu(u) => (u.t, 0),
            Event::Scan(s) => (s.t_end, 1),
        }
    }
}

/// Stable time ordering with IMU-before-scan ties.
pub fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| a.order_key().partial_cmp(&b.order_key()).unwrap());
}

#[derive(Serialize, Deserialize)]
struct ImuRec {
    acc: [f64; 3],
    gyr: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ScanRec {
    points: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct EventRec {
    t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    imu: Option<ImuRec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scan: Option<ScanRec>,
}

pub fn write_sequence<W: Write>(mut w: W, events: &[Event]) -> Result<()> {
    for e in events {
        let rec = match e {
            Event::Imu(u) => EventRec {
                t: u.t,
                imu: Some(ImuRec {
                    acc: [u.acc.x, u.acc.y, u.acc.z],
                    gyr: [u.gyr.x, u.gyr.y, u.gyr.z],
                }),
                scan: None,
            },
            Event::Scan(s) => EventRec {
                t: s.t_end,
                imu: None,
                scan: Some(ScanRec {
                    points: s.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
                }),
            },
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_sequence<R: BufRead>(r: R) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRec = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("sequence line {}: {e}", lineno + 1)))?;
        match (rec.imu, rec.scan) {
            (Some(u), None) => events.push(Event::Imu(ImuSample {
                t: rec.t,
                acc: Vec3::new(u.acc[0], u.acc[1], u.acc[2]),
                gyr: Vec3::new(u.gyr[0], u.gyr[1], u.gyr[2]),
            })),
            (None, Some(s)) => events.push(Event::Scan(Scan {
                t_end: rec.t,
                points: s
                    .points
                    .iter()
                    .map(|p| Vec3::new(p[0], p[1], p[2]))
                    .collect(),
                offsets: None,
            })),
            _ => {
                return Err(Error::Parse(format!(
                    "sequence line {}: exactly one of imu/scan required",
                    lineno + 1
                )))
            }
        }
    }
    Ok(events)
}

/// One odometry output row, written per scan update.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    /// Composed global position.
    pub p: Vec3,
    pub q: Rotation,
    pub p_ez: f64,
    pub v_ez: f64,
    pub a_ez: f64,
    pub mode: Mode,
    /// Flags raised while processing this scan ("entry", "exit" or "").
    pub flags: String,
}

pub const TRAJECTORY_HEADER: &str = "t,px,py,pz,qw,qx,qy,qz,p_ez,v_ez,a_ez,mode,flags";

pub fn write_trajectory<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in records {
        let q = r.q.quaternion();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.p.x,
            r.p.y,
            r.p.z,
            q.w,
            q.i,
            q.j,
            q.k,
            r.p_ez,
            r.v_ez,
            r.a_ez,
            match r.mode {
                Mode::Inertial => 0,
                Mode::NonInertial => 1,
            },
            r.flags,
        )?;
    }
    Ok(())
}

fn parse_f64(field: Option<&str>, what: &str, lineno: usize) -> Result<f64> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("line {lineno}: bad {what}")))
}

pub fn read_trajectory<R: BufRead>(r: R) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut f = line.split(',');
        let t = parse_f64(f.next(), "t", lineno)?;
        let px = parse_f64(f.next(), "px", lineno)?;
        let py = parse_f64(f.next(), "py", lineno)?;
        let pz = parse_f64(f.next(), "pz", lineno)?;
        let qw = parse_f64(f.next(), "qw", lineno)?;
        let qx = parse_f64(f.next(), "qx", lineno)?;
        let qy = parse_f64(f.next(), "qy", lineno)?;
        let qz = parse_f64(f.next(), "qz", lineno)?;
        let p_ez = parse_f64(f.next(), "p_ez", lineno)?;
        let v_ez = parse_f64(f.next(), "v_ez", lineno)?;
        let a_ez = parse_f64(f.next(), "a_ez", lineno)?;
        let mode = match f.next() {
            Some("0") => Mode::Inertial,
            Some("1") => Mode::NonInertial,
            other => return Err(Error::Parse(format!("line {lineno}: bad mode {other:?}"))),
        };
        let flags = f.next().unwrap_or("").to_string();
        out.push(TrajectoryRecord {
            t,
            p: Vec3::new(px, py, pz),
            q: Rotation::new_normalize(nalgebra::Quaternion::new(qw, qx, qy, qz)),
            p_ez,
            v_ez,
            a_ez,
            mode,
            flags,
        });
    }
    Ok(out)
}

/// One ground-truth row, aligned with the scan timestamps.
#[derive(Clone, Debug)]
pub struct GroundTruthRecord {
    pub t: f64,
    pub p: Vec3,
    pub q: Rotation,
    pub p_ez: f64,
    pub v_ez: f64,
    pub a_ez: f64,
    pub mode: Mode,
}

pub const GROUND_TRUTH_HEADER: &str = "t,px,py,pz,qw,qx,qy,qz,p_ez,v_ez,a_ez,mode";

pub fn write_ground_truth<W: Write>(mut w: W, records: &[GroundTruthRecord]) -> Result<()> {
    writeln!(w, "{GROUND_TRUTH_HEADER}")?;
    for r in records {
        let q = r.q.quaternion();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.p.x,
            r.p.y,
            r.p.z,
            q.w,
            q.i,
            q.j,
            q.k,
            r.p_ez,
            r.v_ez,
            r.a_ez,
            match r.mode {
                Mode::Inertial => 0,
                Mode::NonInertial => 1,
            },
        )?;
    }
    Ok(())
}

pub fn read_ground_truth<R: BufRead>(r: R) -> Result<Vec<GroundTruthRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut f = line.split(',');
        let t = parse_f64(f.next(), "t", lineno)?;
        let px = parse_f64(f.next(), "px", lineno)?;
        let py = parse_f64(f.next(), "py", lineno)?;
        let pz = parse_f64(f.next(), "pz", lineno)?;
        let qw = parse_f64(f.next(), "qw", lineno)?;
        let qx = parse_f64(f.next(), "qx", lineno)?;
        let qy = parse_f64(f.next(), "qy", lineno)?;
        let qz = parse_f64(f.next(), "qz", lineno)?;
        let p_ez = parse_f64(f.next(), "p_ez", lineno)?;
        let v_ez = parse_f64(f.next(), "v_ez", lineno)?;
        let a_ez = parse_f64(f.next(), "a_ez", lineno)?;
        let mode = match f.next() {
            Some("0") => Mode::Inertial,
            Some("1") => Mode::NonInertial,
            other => return Err(Error::Parse(format!("line {lineno}: bad mode {other:?}"))),
        };
        out.push(GroundTruthRecord {
            t,
            p: Vec3::new(px, py, pz),
            q: Rotation::new_normalize(nalgebra::Quaternion::new(qw, qx, qy, qz)),
            p_ez,
            v_ez,
            a_ez,
            mode,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_round_trip() {
        let events = vec![
            Event::Imu(ImuSample {
                t: 0.0,
                acc: Vec3::new(0.0, 0.0, 9.81),
                gyr: Vec3::new(0.001, -0.002, 0.0),
            }),
            Event::Scan(Scan {
                t_end: 0.1,
                points: vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.5, 0.25, 0.125)],
                offsets: None,
            }),
        ];
        let mut buf = Vec::new();
        write_sequence(&mut buf, &events).unwrap();
        let back = read_sequence(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.len(), 2);
        match (&back[0], &back[1]) {
            (Event::Imu(u), Event::Scan(s)) => {
                assert_eq!(u.acc, Vec3::new(0.0, 0.0, 9.81));
                assert_eq!(s.points[1], Vec3::new(-1.5, 0.25, 0.125));
            }
            _ => panic!("wrong event kinds"),
        }
        // Byte-identical on re-serialization.
        let mut buf2 = Vec::new();
        write_sequence(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn event_ordering_puts_imu_before_scan_on_ties() {
        let mut events = vec![
            Event::Scan(Scan {
                t_end: 0.1,
                points: vec![],
                offsets: None,
            }),
            Event::Imu(ImuSample {
                t: 0.1,
                acc: Vec3::zeros(),
                gyr: Vec3::zeros(),
            }),
        ];
        sort_events(&mut events);
        assert!(matches!(events[0], Event::Imu(_)));
    }

    #[test]
    fn trajectory_round_trip() {
        let records = vec![TrajectoryRecord {
            t: 1.25,
            p: Vec3::new(0.5, -0.25, 3.0),
            q: Rotation::identity(),
            p_ez: 3.0,
            v_ez: -0.001,
            a_ez: 0.0,
            mode: Mode::NonInertial,
            flags: "exit".to_string(),
        }];
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &records).unwrap();
        let back = read_trajectory(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back, records);
    }
}
