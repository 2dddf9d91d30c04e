//! Deterministic multi-floor elevator simulator: world geometry, elevator
//! and robot motion, IMU/LiDAR synthesis and controlled model
//! perturbations, with ground truth aligned to the sensor stream.

pub mod profile;
pub mod world;

use nalgebra::Rotation3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Event, GroundTruthRecord};
use crate::manifold::{Rotation, Vec3};
use crate::propagation::ImuSample;
use crate::scan_update::Scan;
use crate::state::{Extrinsics, Mode};

use profile::{eval_profile, profile_duration, trapezoid_profile, ProfileSegment};
use world::{build_surfaces, ray_pattern, raycast_scan, BuildingDims, SceneState};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CorridorSpec {
    fn default() -> Self {
        CorridorSpec {
            length: 10.0,
            width: 4.0,
            height: 2.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CabinSpec {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    pub door_width: f64,
    pub door_height: f64,
}

impl Default for CabinSpec {
    fn default() -> Self {
        CabinSpec {
            width: 1.6,
            depth: 1.4,
            height: 2.2,
            door_width: 0.9,
            door_height: 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSpec {
    pub a_max: f64,
    pub v_max: f64,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec {
            a_max: 1.0,
            v_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RideSpec {
    pub to_floor: usize,
    /// Explicit door-close time; auto-scheduled after the previous ride
    /// when absent.
    #[serde(default)]
    pub door_close_at: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveSpec {
    /// Earliest start time.
    pub at: f64,
    pub to: [f64; 2],
    pub speed: f64,
    pub accel: f64,
}

impl Default for MoveSpec {
    fn default() -> Self {
        MoveSpec {
            at: 0.0,
            to: [0.0, 0.0],
            speed: 0.6,
            accel: 0.8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotSpec {
    pub start: [f64; 2],
    /// Sensor height above the supporting floor, m.
    pub z_offset: f64,
    pub moves: Vec<MoveSpec>,
}

impl Default for RobotSpec {
    fn default() -> Self {
        RobotSpec {
            start: [-0.7, 0.0],
            z_offset: 0.4,
            moves: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub imu_rate: f64,
    pub scan_rate: f64,
    pub azimuth_count: usize,
    pub elevation_count: usize,
    pub elevation_span_deg: f64,
    pub range_noise_std: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            imu_rate: 200.0,
            scan_rate: 10.0,
            azimuth_count: 360,
            elevation_count: 16,
            elevation_span_deg: 45.0,
            range_noise_std: 0.01,
            min_range: 0.05,
            max_range: 100.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuSpec {
    /// Per-sample noise standard deviations at `imu_rate`.
    pub accel_noise_std: f64,
    pub gyro_noise_std: f64,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
}

impl Default for ImuSpec {
    fn default() -> Self {
        ImuSpec {
            accel_noise_std: 0.015,
            gyro_noise_std: 0.002,
            accel_bias: [0.0, 0.0, 0.0],
            gyro_bias: [0.002, -0.001, 0.0015],
        }
    }
}

/// Controlled model-mismatch magnitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    /// Gravity-axis drift accumulated per ride, deg (linear in time
    /// across each ride).
    pub gravity_drift_deg_per_ride: f64,
    /// Cabin geometry and transport-axis tilt, deg.
    pub cabin_pitch_deg: f64,
    /// Initial gravity misalignment injected during startup, deg.
    pub init_misalign_deg: f64,
    /// Window over which the misalignment acts on the accelerometer, s.
    pub misalign_window: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            gravity_drift_deg_per_ride: 0.0,
            cabin_pitch_deg: 0.0,
            init_misalign_deg: 0.0,
            misalign_window: 1.0,
        }
    }
}

/// Full scenario description, serializable as the CLI scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub seed: u64,
    pub num_floors: usize,
    pub floor_height: f64,
    pub start_floor: usize,
    pub gravity_mag: f64,
    pub corridor: CorridorSpec,
    pub cabin: CabinSpec,
    pub profile: ProfileSpec,
    pub rides: Vec<RideSpec>,
    /// First auto-scheduled door close, s.
    pub first_close: f64,
    /// Dwell between a door opening and the next auto-scheduled close, s.
    pub dwell: f64,
    /// Door close to motion start, s.
    pub depart_delay: f64,
    /// Motion stop to door open, s.
    pub door_open_delay: f64,
    pub robot: RobotSpec,
    pub sensor: SensorSpec,
    pub imu: ImuSpec,
    pub extrinsics: Extrinsics,
    pub perturbation: PerturbationConfig,
    /// Extra time simulated after the last event, s.
    pub tail: f64,
    /// Optional lower bound on the total duration, s.
    pub duration: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 7,
            num_floors: 8,
            floor_height: 3.0,
            start_floor: 0,
            gravity_mag: 9.81,
            corridor: CorridorSpec::default(),
            cabin: CabinSpec::default(),
            profile: ProfileSpec::default(),
            rides: Vec::new(),
            first_close: 6.0,
            dwell: 5.0,
            depart_delay: 2.5,
            door_open_delay: 3.0,
            robot: RobotSpec::default(),
            sensor: SensorSpec::default(),
            imu: ImuSpec::default(),
            extrinsics: Extrinsics::default(),
            perturbation: PerturbationConfig::default(),
            tail: 6.0,
            duration: None,
        }
    }
}

impl Scenario {
    /// Robot parked in the cabin, one ride up to `to_floor`.
    pub fn single_ride(to_floor: usize) -> Self {
        Scenario {
            rides: vec![RideSpec {
                to_floor,
                door_close_at: None,
            }],
            ..Default::default()
        }
    }

    /// Robot parked in the cabin, visiting the given floors in order.
    pub fn ride_sequence(floors: &[usize]) -> Self {
        Scenario {
            rides: floors
                .iter()
                .map(|&f| RideSpec {
                    to_floor: f,
                    door_close_at: None,
                })
                .collect(),
            ..Default::default()
        }
    }

    /// Overwrite the perturbation block.
    pub fn with_perturbations(mut self, cfg: PerturbationConfig) -> Self {
        self.perturbation = cfg;
        self
    }

    pub fn compile(&self) -> Result<Compiled> {
        Compiled::new(self)
    }
}

#[derive(Clone, Debug)]
pub struct RideTiming {
    pub from_floor: usize,
    pub to_floor: usize,
    pub close: f64,
    pub depart: f64,
    pub arrive: f64,
    pub open: f64,
    pub segments: Vec<ProfileSegment>,
}

#[derive(Clone, Debug)]
struct CompiledMove {
    start: f64,
    end: f64,
    origin: [f64; 2],
    dir: [f64; 2],
    segments: Vec<ProfileSegment>,
}

/// Scenario with the derived timeline, ready for sampling.
#[derive(Clone, Debug)]
pub struct Compiled {
    pub scenario: Scenario,
    pub rides: Vec<RideTiming>,
    moves: Vec<CompiledMove>,
    pub duration: f64,
    dims: BuildingDims,
    base_elevation: f64,
    transport_axis: Vec3,
}

/// Instantaneous ground truth.
#[derive(Clone, Debug)]
pub struct TruthSample {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub q: Rotation,
    pub omega: Vec3,
    /// Transport displacement/velocity/acceleration vectors.
    pub transport_d: Vec3,
    pub transport_v: Vec3,
    pub transport_a: Vec3,
    pub gravity: Vec3,
    pub mode: Mode,
}

impl Compiled {
    fn new(s: &Scenario) -> Result<Self> {
        if s.num_floors == 0 {
            return Err(Error::Config("need at least one floor".into()));
        }
        if s.start_floor >= s.num_floors {
            return Err(Error::Config("start floor outside the building".into()));
        }
        let dims = BuildingDims {
            num_floors: s.num_floors,
            floor_height: s.floor_height,
            corridor_length: s.corridor.length,
            corridor_width: s.corridor.width,
            corridor_height: s.corridor.height,
            cabin_width: s.cabin.width,
            cabin_depth: s.cabin.depth,
            cabin_height: s.cabin.height,
            door_width: s.cabin.door_width,
            door_height: s.cabin.door_height,
        };
        if !(s.robot.z_offset > 0.05 && s.robot.z_offset < s.cabin.height - 0.05) {
            return Err(Error::Config("robot sensor height outside free space".into()));
        }

        // Ride timeline.
        let mut rides = Vec::new();
        let mut from = s.start_floor;
        let mut prev_open = -f64::INFINITY;
        for (i, ride) in s.rides.iter().enumerate() {
            if ride.to_floor >= s.num_floors {
                return Err(Error::Config(format!("ride {i}: floor out of range")));
            }
            if ride.to_floor == from {
                return Err(Error::Config(format!("ride {i}: zero travel")));
            }
            let auto = if i == 0 {
                s.first_close
            } else {
                prev_open + s.dwell
            };
            let close = ride.door_close_at.unwrap_or(auto);
            if close < auto - 1e-9 {
                return Err(Error::Config(format!(
                    "ride {i}: door closes at {close} before the cabin is ready at {auto}"
                )));
            }
            let travel = (ride.to_floor as f64 - from as f64) * s.floor_height;
            let segments = trapezoid_profile(travel, s.profile.a_max, s.profile.v_max);
            let depart = close + s.depart_delay;
            let arrive = depart + profile_duration(&segments);
            let open = arrive + s.door_open_delay;
            rides.push(RideTiming {
                from_floor: from,
                to_floor: ride.to_floor,
                close,
                depart,
                arrive,
                open,
                segments,
            });
            from = ride.to_floor;
            prev_open = open;
        }

        // Robot move timeline.
        let mut moves = Vec::new();
        let mut pos = s.robot.start;
        let mut cursor = 0.0;
        for m in &s.robot.moves {
            if !(m.speed > 0.0 && m.accel > 0.0) {
                return Err(Error::Config("move needs positive speed and accel".into()));
            }
            let dx = m.to[0] - pos[0];
            let dy = m.to[1] - pos[1];
            let dist = (dx * dx + dy * dy).sqrt();
            let start = m.at.max(cursor);
            if dist < 1e-12 {
                continue;
            }
            let segments = trapezoid_profile(dist, m.accel, m.speed);
            let end = start + profile_duration(&segments);
            moves.push(CompiledMove {
                start,
                end,
                origin: pos,
                dir: [dx / dist, dy / dist],
                segments,
            });
            pos = m.to;
            cursor = end;
        }

        let auto_duration = rides
            .last()
            .map(|r| r.open)
            .unwrap_or(0.0)
            .max(moves.last().map(|m| m.end).unwrap_or(0.0))
            + s.tail;
        let duration = s.duration.unwrap_or(0.0).max(auto_duration);

        let pitch = s.perturbation.cabin_pitch_deg.to_radians();
        let transport_axis = Rotation3::from_axis_angle(&Vec3::y_axis(), pitch) * Vec3::z();

        let compiled = Compiled {
            scenario: s.clone(),
            rides,
            moves,
            duration,
            dims,
            base_elevation: s.start_floor as f64 * s.floor_height,
            transport_axis,
        };
        compiled.validate_geometry()?;
        Ok(compiled)
    }

    fn in_cabin(&self, xy: [f64; 2]) -> bool {
        let margin = 0.05;
        xy[0] > -self.dims.cabin_depth + margin
            && xy[0] < -margin
            && xy[1].abs() < self.dims.cabin_width / 2.0 - margin
    }

    fn in_corridor(&self, xy: [f64; 2]) -> bool {
        let margin = 0.05;
        xy[0] > margin
            && xy[0] < self.dims.corridor_length - margin
            && xy[1].abs() < self.dims.corridor_width / 2.0 - margin
    }

    fn validate_geometry(&self) -> Result<()> {
        let spawn = self.scenario.robot.start;
        if !self.in_cabin(spawn) && !self.in_corridor(spawn) {
            return Err(Error::Config(format!(
                "robot spawn {spawn:?} is inside a wall"
            )));
        }
        // The robot must be aboard whenever the door is closed.
        for ride in &self.rides {
            let mut t = ride.close;
            while t <= ride.open {
                let xy = self.robot_xy(t).0;
                if !self.in_cabin(xy) {
                    return Err(Error::Config(format!(
                        "robot at {xy:?} outside the cabin at t = {t} during a ride"
                    )));
                }
                t += 0.05;
            }
        }
        Ok(())
    }

    /// Scalar transport state along the (possibly tilted) axis.
    pub fn transport_scalar(&self, t: f64) -> (f64, f64, f64) {
        let mut d = 0.0;
        for ride in &self.rides {
            if t < ride.depart {
                break;
            }
            let (dd, v, a) = eval_profile(&ride.segments, t - ride.depart);
            if t < ride.arrive {
                return (d + dd, v, a);
            }
            d += profile::profile_travel(&ride.segments);
        }
        (d, 0.0, 0.0)
    }

    /// Completed rides plus the progress of the active one, for the
    /// gravity-drift schedule.
    fn ride_progress(&self, t: f64) -> f64 {
        let mut progress = 0.0;
        for ride in &self.rides {
            if t >= ride.arrive {
                progress += 1.0;
            } else if t > ride.depart {
                progress += (t - ride.depart) / (ride.arrive - ride.depart);
                break;
            } else {
                break;
            }
        }
        progress
    }

    pub fn door_closed(&self, t: f64) -> bool {
        self.rides.iter().any(|r| t >= r.close && t < r.open)
    }

    fn parked_floor(&self, t: f64) -> usize {
        let mut floor = self.scenario.start_floor;
        for ride in &self.rides {
            if t >= ride.open {
                floor = ride.to_floor;
            }
        }
        floor
    }

    fn robot_xy(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let mut pos = self.scenario.robot.start;
        for m in &self.moves {
            if t < m.start {
                break;
            }
            let (d, v, a) = eval_profile(&m.segments, t - m.start);
            if t < m.end {
                return (
                    [m.origin[0] + m.dir[0] * d, m.origin[1] + m.dir[1] * d],
                    [m.dir[0] * v, m.dir[1] * v],
                    [m.dir[0] * a, m.dir[1] * a],
                );
            }
            let total = profile::profile_travel(&m.segments);
            pos = [m.origin[0] + m.dir[0] * total, m.origin[1] + m.dir[1] * total];
        }
        (pos, [0.0, 0.0], [0.0, 0.0])
    }

    pub fn gravity_at(&self, t: f64) -> Vec3 {
        let drift = self
            .scenario
            .perturbation
            .gravity_drift_deg_per_ride
            .to_radians()
            * self.ride_progress(t);
        let base = Vec3::new(0.0, 0.0, -self.scenario.gravity_mag);
        if drift == 0.0 {
            base
        } else {
            Rotation3::from_axis_angle(&Vec3::x_axis(), drift) * base
        }
    }

    pub fn truth_at(&self, t: f64) -> TruthSample {
        let (xy, v_xy, a_xy) = self.robot_xy(t);
        let (d, v, a) = self.transport_scalar(t);
        let transport_d = self.transport_axis * d;
        let transport_v = self.transport_axis * v;
        let transport_a = self.transport_axis * a;
        let p = Vec3::new(
            xy[0] + transport_d.x,
            xy[1] + transport_d.y,
            self.base_elevation + self.scenario.robot.z_offset + transport_d.z,
        );
        TruthSample {
            p,
            v: Vec3::new(v_xy[0] + transport_v.x, v_xy[1] + transport_v.y, transport_v.z),
            a: Vec3::new(a_xy[0] + transport_a.x, a_xy[1] + transport_a.y, transport_a.z),
            q: Rotation::identity(),
            omega: Vec3::zeros(),
            transport_d,
            transport_v,
            transport_a,
            gravity: self.gravity_at(t),
            mode: if self.door_closed(t) {
                Mode::NonInertial
            } else {
                Mode::Inertial
            },
        }
    }

    fn scene_at(&self, t: f64) -> SceneState {
        let (d, _, _) = self.transport_scalar(t);
        let closed = self.door_closed(t);
        SceneState {
            cabin_elevation: self.base_elevation,
            transport: self.transport_axis * d,
            cabin_pitch: self.scenario.perturbation.cabin_pitch_deg.to_radians(),
            cabin_door_closed: closed,
            open_hall_floor: if closed {
                None
            } else {
                Some(self.parked_floor(t))
            },
        }
    }
}

/// Specific-force model: what an ideal accelerometer reports for a body
/// with world acceleration `a_world` and attitude `q` under `gravity`.
pub fn specific_force(q: &Rotation, a_world: &Vec3, gravity: &Vec3) -> Vec3 {
    q.inverse() * (a_world - gravity)
}

/// Deterministic sequence + ground-truth generation.
pub fn generate(scenario: &Scenario) -> Result<(Vec<Event>, Vec<GroundTruthRecord>)> {
    let compiled = scenario.compile()?;
    let s = &compiled.scenario;
    let mut rng = ChaCha12Rng::seed_from_u64(s.seed);
    let acc_noise = Normal::new(0.0, s.imu.accel_noise_std)
        .map_err(|e| Error::Config(format!("bad accel noise: {e}")))?;
    let gyr_noise = Normal::new(0.0, s.imu.gyro_noise_std)
        .map_err(|e| Error::Config(format!("bad gyro noise: {e}")))?;
    let rng_noise = Normal::new(0.0, s.sensor.range_noise_std)
        .map_err(|e| Error::Config(format!("bad range noise: {e}")))?;
    let accel_bias = Vec3::new(s.imu.accel_bias[0], s.imu.accel_bias[1], s.imu.accel_bias[2]);
    let gyro_bias = Vec3::new(s.imu.gyro_bias[0], s.imu.gyro_bias[1], s.imu.gyro_bias[2]);
    let misalign = Rotation3::from_axis_angle(
        &Vec3::x_axis(),
        s.perturbation.init_misalign_deg.to_radians(),
    );
    let pattern = ray_pattern(
        s.sensor.azimuth_count,
        s.sensor.elevation_count,
        s.sensor.elevation_span_deg,
    );

    let n_imu = (compiled.duration * s.sensor.imu_rate).floor() as usize + 1;
    let n_scan = (compiled.duration * s.sensor.scan_rate).floor() as usize + 1;
    let mut events = Vec::with_capacity(n_imu + n_scan);
    let mut truth_rows = Vec::with_capacity(n_scan);

    let mut i_imu = 0usize;
    let mut i_scan = 0usize;
    while i_imu < n_imu || i_scan < n_scan {
        let t_imu = i_imu as f64 / s.sensor.imu_rate;
        let t_scan = i_scan as f64 / s.sensor.scan_rate;
        // IMU first on ties.
        if i_imu < n_imu && (i_scan >= n_scan || t_imu <= t_scan) {
            let truth = compiled.truth_at(t_imu);
            let mut force = specific_force(&truth.q, &truth.a, &truth.gravity);
            if s.perturbation.init_misalign_deg != 0.0 && t_imu <= s.perturbation.misalign_window {
                force = misalign * force;
            }
            let acc = force
                + accel_bias
                + Vec3::new(
                    acc_noise.sample(&mut rng),
                    acc_noise.sample(&mut rng),
                    acc_noise.sample(&mut rng),
                );
            let gyr = truth.omega
                + gyro_bias
                + Vec3::new(
                    gyr_noise.sample(&mut rng),
                    gyr_noise.sample(&mut rng),
                    gyr_noise.sample(&mut rng),
                );
            events.push(Event::Imu(ImuSample { t: t_imu, acc, gyr }));
            i_imu += 1;
        } else {
            let truth = compiled.truth_at(t_scan);
            let surfaces = build_surfaces(&compiled.dims, &compiled.scene_at(t_scan));
            let sensor_pos = truth.p + truth.q * s.extrinsics.p_l_i;
            let sensor_rot = truth.q * s.extrinsics.r_l_i;
            let points = raycast_scan(
                &surfaces,
                &sensor_pos,
                &sensor_rot,
                &pattern,
                s.sensor.min_range,
                s.sensor.max_range,
                || rng_noise.sample(&mut rng),
            );
            events.push(Event::Scan(Scan {
                t_end: t_scan,
                points,
                offsets: None,
            }));
            truth_rows.push(GroundTruthRecord {
                t: t_scan,
                p: truth.p,
                q: truth.q,
                p_ez: truth.transport_d.z,
                v_ez: truth.transport_v.z,
                a_ez: truth.transport_a.z,
                mode: truth.mode,
            });
            i_scan += 1;
        }
    }
    Ok((events, truth_rows))
}
