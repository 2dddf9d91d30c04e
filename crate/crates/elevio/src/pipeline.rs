//! End-to-end estimation loop: static initialization, time-ordered event
//! dispatch, mode switching and the exit sequence, producing one odometry
//! record per scan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exit::{reanchor, reset_covariance, zero_state_update, ExitConfig};
use crate::frontend::{preprocess, AdaptiveVoxelState, PreprocessOptions};
use crate::io::{Event, TrajectoryRecord};
use crate::manifold::{Rotation, Vec3};
use crate::mapping::{project_to_local, project_to_world, WorldMap};
use crate::mode::{robust_max_depth, EntryDetector, ExitFsm, ManualTriggers, TriggerKind};
use crate::propagation::{build_transition, propagate_covariance, propagate_nominal, ImuSample};
use crate::scan_update::{ieskf_update, Scan, ScanUpdateConfig, UpdateReport};
use crate::state::{
    max_asymmetry, min_eigenvalue, Covariance, Extrinsics, FilterState, Mode, NoiseParams, DAEZ,
    DBA, DBW, DP, DPEZ, DTHETA, DV, DVEZ,
};

/// Initial covariance diagonal, grouped by block.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct InitCovariance {
    pub pos: f64,
    pub att: f64,
    pub vel: f64,
    pub ba: f64,
    pub bw: f64,
    pub elevator: [f64; 3],
}

impl Default for InitCovariance {
    fn default() -> Self {
        InitCovariance {
            pos: 1e-8,
            att: 1e-5,
            vel: 1e-6,
            ba: 1e-4,
            bw: 1e-6,
            elevator: [1e-6, 1e-6, 1e-6],
        }
    }
}

impl InitCovariance {
    pub fn build(&self) -> Covariance {
        let mut p = Covariance::zeros();
        for i in 0..3 {
            p[(DP + i, DP + i)] = self.pos;
            p[(DTHETA + i, DTHETA + i)] = self.att;
            p[(DV + i, DV + i)] = self.vel;
            p[(DBA + i, DBA + i)] = self.ba;
            p[(DBW + i, DBW + i)] = self.bw;
        }
        p[(DPEZ, DPEZ)] = self.elevator[0];
        p[(DVEZ, DVEZ)] = self.elevator[1];
        p[(DAEZ, DAEZ)] = self.elevator[2];
        p
    }
}

/// Complete run configuration; every module block has usable defaults.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub gravity_mag: GravityMag,
    pub init_sample_count: InitSamples,
    /// Max spread of accelerometer norms tolerated as "static", m/s^2.
    pub init_accel_spread: InitSpread,
    pub init_cov: InitCovariance,
    pub noise: NoiseParams,
    pub extrinsics: Extrinsics,
    pub scan_update: ScanUpdateConfig,
    pub exit: ExitConfig,
    pub entry_detector: EntryDetector,
    pub exit_fsm: ExitFsm,
    pub voxel: AdaptiveVoxelState,
    pub preprocess: PreprocessOptions,
    /// Map insert-dedup grid resolution, m.
    pub map_resolution: MapResolution,
    /// Consecutive degenerate updates tolerated before aborting.
    pub max_degenerate_streak: DegenerateStreak,
    /// Track covariance health (symmetry / min eigenvalue) every step.
    pub validate_covariance: bool,
    /// Ablation: skip the exit-time zero-state update.
    pub disable_zupt: bool,
    /// Ablation: fixed-resolution voxel instead of the adaptive law.
    pub disable_adaptive: bool,
    pub fixed_voxel: FixedVoxel,
    /// Ablation: never leave inertial mode.
    pub disable_elevator_mode: bool,
}

macro_rules! newtype_default {
    ($name:ident, $ty:ty, $value:expr) => {
        #[derive(Clone, Copy, Debug, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $ty);
        impl Default for $name {
            fn default() -> Self {
                $name($value)
            }
        }
    };
}

newtype_default!(GravityMag, f64, 9.81);
newtype_default!(InitSamples, usize, 100);
newtype_default!(InitSpread, f64, 0.1);
newtype_default!(MapResolution, f64, 0.1);
newtype_default!(DegenerateStreak, usize, 10);
newtype_default!(FixedVoxel, f64, 0.2);

/// Summary of one run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub imu_samples: usize,
    pub scans: usize,
    pub updates: usize,
    pub degenerate_updates: usize,
    pub empty_scans: usize,
    pub propagations: usize,
    pub entry_flags: Vec<f64>,
    pub exit_flags: Vec<f64>,
    pub init_time: Option<f64>,
    pub aborted: Option<String>,
    /// Health stats, populated when `validate_covariance` is on.
    pub worst_asymmetry: f64,
    pub min_eigenvalue_seen: f64,
    pub health_checks: usize,
    pub last_update: Option<UpdateReport>,
}

/// Average the initial static window into gyro bias and a gravity-aligned
/// attitude (minimal rotation, yaw-free).
pub fn static_init(samples: &[ImuSample], cfg: &RunConfig) -> Result<FilterState> {
    if samples.len() < cfg.init_sample_count.0 {
        return Err(Error::InsufficientPoints {
            have: samples.len(),
            need: cfg.init_sample_count.0,
        });
    }
    let norms: Vec<f64> = samples.iter().map(|u| u.acc.norm()).collect();
    let spread = norms.iter().cloned().fold(f64::MIN, f64::max)
        - norms.iter().cloned().fold(f64::MAX, f64::min);
    if spread > cfg.init_accel_spread.0 {
        return Err(Error::NotStatic { spread });
    }
    let n = samples.len() as f64;
    let acc_mean = samples.iter().map(|u| u.acc).sum::<Vec3>() / n;
    let gyr_mean = samples.iter().map(|u| u.gyr).sum::<Vec3>() / n;

    let mut x = FilterState::default_state(cfg.gravity_mag.0);
    let minus_a = -acc_mean.normalize();
    let g_dir = x.gravity.normalize();
    x.q = Rotation::rotation_between(&minus_a, &g_dir).unwrap_or_else(|| {
        // Anti-parallel: any horizontal axis gives the minimal rotation.
        Rotation::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI)
    });
    x.bw = gyr_mean;
    Ok(x)
}

/// Live estimation state. Cloneable, so a run can be checkpointed at any
/// event boundary and replayed.
#[derive(Clone)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub state: Option<FilterState>,
    pub cov: Covariance,
    init_buf: Vec<ImuSample>,
    last_imu_t: Option<f64>,
    last_gyr: Vec3,
    global_map: WorldMap,
    cabin_map: Option<WorldMap>,
    voxel: AdaptiveVoxelState,
    entry: EntryDetector,
    exit_fsm: ExitFsm,
    triggers: ManualTriggers,
    degenerate_streak: usize,
    pub trajectory: Vec<TrajectoryRecord>,
    pub report: RunReport,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        Pipeline::with_triggers(cfg, ManualTriggers::default())
    }

    pub fn with_triggers(cfg: RunConfig, triggers: ManualTriggers) -> Self {
        let mut voxel = cfg.voxel.clone();
        if cfg.disable_adaptive {
            voxel.v = cfg.fixed_voxel.0;
        }
        Pipeline {
            cov: cfg.init_cov.build(),
            voxel,
            entry: cfg.entry_detector.clone(),
            exit_fsm: cfg.exit_fsm.clone(),
            global_map: WorldMap::new(cfg.map_resolution.0),
            cabin_map: None,
            init_buf: Vec::new(),
            last_imu_t: None,
            last_gyr: Vec3::zeros(),
            degenerate_streak: 0,
            trajectory: Vec::new(),
            report: RunReport {
                min_eigenvalue_seen: f64::INFINITY,
                ..Default::default()
            },
            state: None,
            triggers,
            cfg,
        }
    }

    pub fn initialized(&self) -> bool {
        self.state.is_some()
    }

    fn check_health(&mut self) {
        if self.cfg.validate_covariance {
            let asym = max_asymmetry(&self.cov);
            let eig = min_eigenvalue(&self.cov);
            self.report.worst_asymmetry = self.report.worst_asymmetry.max(asym);
            self.report.min_eigenvalue_seen = self.report.min_eigenvalue_seen.min(eig);
            self.report.health_checks += 1;
        }
    }

    fn handle_imu(&mut self, u: &ImuSample) -> Result<()> {
        self.report.imu_samples += 1;
        self.last_gyr = u.gyr;
        if self.state.is_none() {
            self.init_buf.push(*u);
            if self.init_buf.len() >= self.cfg.init_sample_count.0 {
                let x = static_init(&self.init_buf, &self.cfg)?;
                self.state = Some(x);
                self.report.init_time = Some(u.t);
                self.last_imu_t = Some(u.t);
                self.init_buf.clear();
            }
            return Ok(());
        }
        let last_t = self.last_imu_t.expect("initialized implies last_imu_t");
        let dt = u.t - last_t;
        let x = self.state.as_ref().unwrap();
        let next = propagate_nominal(x, u, dt)?;
        let m = build_transition(x, u, dt, &self.cfg.noise);
        self.cov = propagate_covariance(&self.cov, &m);
        self.state = Some(next);
        self.last_imu_t = Some(u.t);
        self.report.propagations += 1;
        self.check_health();
        Ok(())
    }

    /// Insert a registered scan into whichever map is active. The cabin
    /// map stays frozen at its seed: the enclosed geometry does not
    /// change during a ride, and accreting points at wobbling estimated
    /// poses would let the registration anchor itself drift.
    fn insert_scan(&mut self, scan: &Scan) {
        let x = self.state.as_ref().unwrap();
        if x.mode == Mode::NonInertial {
            return;
        }
        let ext = &self.cfg.extrinsics;
        let pts: Vec<Vec3> = scan
            .points
            .iter()
            .map(|p| project_to_world(x, ext, p))
            .collect();
        self.global_map.insert_filtered(&pts);
    }

    fn enter_elevator_mode(&mut self, scan: &Scan) {
        {
            let x = self.state.as_mut().unwrap();
            x.mode = Mode::NonInertial;
        }
        let x = self.state.as_ref().unwrap();
        // Seed the cabin-local registration map from the current scan.
        let mut cabin = WorldMap::new(self.cfg.map_resolution.0);
        let pts: Vec<Vec3> = scan
            .points
            .iter()
            .map(|p| project_to_local(x, &self.cfg.extrinsics, p))
            .collect();
        cabin.insert_filtered(&pts);
        self.cabin_map = Some(cabin);
        self.exit_fsm.reset();
        self.entry.reset();
    }

    fn run_exit_sequence(&mut self, scan: &Scan) -> Result<()> {
        let x = self.state.as_ref().unwrap().clone();
        let (x, p) = if self.cfg.disable_zupt {
            (x, self.cov)
        } else {
            zero_state_update(&x, &self.cov, &self.cfg.exit)?
        };
        let x = reanchor(&x);
        self.cov = reset_covariance(&p, &self.cfg.exit);
        self.state = Some(x);
        self.cabin_map = None;
        self.entry.reset();
        self.exit_fsm.reset();
        self.check_health();
        // Seed the (possibly unvisited) floor in the global map so the
        // next scans have reference geometry.
        self.insert_scan(scan);
        Ok(())
    }

    fn handle_scan(&mut self, raw: &Scan) -> Result<()> {
        self.report.scans += 1;
        if self.state.is_none() {
            return Ok(());
        }
        if self.cfg.disable_adaptive {
            self.voxel.v = self.cfg.fixed_voxel.0;
        }
        let motion_state = self.state.as_ref().unwrap().clone();
        let motion = (
            &motion_state,
            &self.cfg.extrinsics,
            &self.last_gyr,
        );
        let (scan, next_voxel) =
            match preprocess(raw, &self.voxel, &self.cfg.preprocess, Some((motion.0, motion.1, motion.2))) {
                Ok(out) => out,
                Err(Error::EmptyScan { .. }) => {
                    self.report.empty_scans += 1;
                    return Ok(());
                }
                Err(e) => return Err(e),
            };
        if !self.cfg.disable_adaptive {
            self.voxel = next_voxel;
        }

        let mut flags: Vec<&str> = Vec::new();
        let mode_before = self.state.as_ref().unwrap().mode;
        let active_map_len = match mode_before {
            Mode::NonInertial => self.cabin_map.as_ref().map_or(0, |m| m.index.len()),
            Mode::Inertial => self.global_map.index.len(),
        };

        if active_map_len < self.cfg.scan_update.k_neighbors.max(self.cfg.scan_update.min_matches)
        {
            // Map seeding: nothing to register against yet.
            self.insert_scan(&scan);
        } else {
            let x_bar = self.state.as_ref().unwrap().clone();
            let map = match mode_before {
                Mode::NonInertial => &self.cabin_map.as_ref().unwrap().index,
                Mode::Inertial => &self.global_map.index,
            };
            match ieskf_update(
                &x_bar,
                &self.cov,
                &scan,
                map,
                &self.cfg.extrinsics,
                &self.cfg.noise,
                &self.cfg.scan_update,
            ) {
                Ok((x, p, rep)) => {
                    self.state = Some(x);
                    self.cov = p;
                    self.report.updates += 1;
                    self.report.last_update = Some(rep);
                    self.degenerate_streak = 0;
                    self.check_health();
                    self.insert_scan(&scan);
                }
                Err(Error::DegenerateUpdate { .. }) => {
                    self.report.degenerate_updates += 1;
                    self.degenerate_streak += 1;
                    if self.degenerate_streak > self.cfg.max_degenerate_streak.0 {
                        return Err(Error::DegenerateUpdate {
                            matched: 0,
                            attempted: scan.points.len(),
                            min: self.cfg.scan_update.min_matches,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }

        // Mode management (entry on every preprocessed scan in inertial
        // mode; exit FSM stepped once per update in non-inertial mode).
        let manual = self.triggers.due(scan.t_end);
        let mode_now = self.state.as_ref().unwrap().mode;
        if !self.cfg.disable_elevator_mode {
            if mode_now == Mode::Inertial {
                let auto = match robust_max_depth(
                    &scan,
                    self.entry.percentile,
                    self.entry.min_points,
                ) {
                    Ok(d_max) => self.entry.update(d_max, scan.t_end),
                    Err(_) => false,
                };
                if auto || manual == Some(TriggerKind::Entry) {
                    self.enter_elevator_mode(&scan);
                    flags.push("entry");
                    self.report.entry_flags.push(scan.t_end);
                }
            } else {
                let v_ez = self.state.as_ref().unwrap().v_ez;
                let auto = self.exit_fsm.update(v_ez, scan.t_end);
                if auto || manual == Some(TriggerKind::Exit) {
                    self.run_exit_sequence(&scan)?;
                    flags.push("exit");
                    self.report.exit_flags.push(scan.t_end);
                }
            }
        }

        let x = self.state.as_ref().unwrap();
        self.trajectory.push(TrajectoryRecord {
            t: scan.t_end,
            p: x.compose_global_position(),
            q: x.q,
            p_ez: x.p_ez,
            v_ez: x.v_ez,
            a_ez: x.a_ez,
            mode: x.mode,
            flags: flags.join(";"),
        });
        Ok(())
    }

    pub fn step(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::Imu(u) => self.handle_imu(u),
            Event::Scan(s) => self.handle_scan(s),
        }
    }

    pub fn global_map(&self) -> &WorldMap {
        &self.global_map
    }

    pub fn voxel_state(&self) -> &AdaptiveVoxelState {
        &self.voxel
    }
}

/// Outcome of a full run; `report.aborted` carries the abort diagnostic
/// and the partial trajectory is preserved.
pub struct RunOutcome {
    pub trajectory: Vec<TrajectoryRecord>,
    pub report: RunReport,
}

/// Fold the event sequence through the pipeline.
pub fn run(events: &[Event], cfg: RunConfig, triggers: ManualTriggers) -> RunOutcome {
    let mut pipeline = Pipeline::with_triggers(cfg, triggers);
    for event in events {
        if let Err(e) = pipeline.step(event) {
            pipeline.report.aborted = Some(e.to_string());
            break;
        }
    }
    RunOutcome {
        trajectory: pipeline.trajectory,
        report: pipeline.report,
    }
}
