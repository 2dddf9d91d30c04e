//! Rectangular-surface world model and exhaustive ray casting.
//!
//! The building is a stack of corridors joined to an elevator shaft; the
//! cabin is a watertight box (when its door panel is present) translated
//! by the transport displacement and optionally tilted by the cabin-pitch
//! perturbation.

use nalgebra::Rotation3;

use crate::manifold::{Rotation, Vec3};

/// A parallelogram patch: `origin + a*u + b*v`, `a, b` in [0, 1].
#[derive(Clone, Debug)]
pub struct Rect {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl Rect {
    pub fn new(origin: Vec3, u: Vec3, v: Vec3) -> Self {
        Rect { origin, u, v }
    }

    /// Nearest positive ray parameter, if the ray hits the patch.
    /// Rays parallel to the plane produce no return.
    pub fn intersect(&self, ray_origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<f64> {
        let n = self.u.cross(&self.v);
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.origin - ray_origin)) / denom;
        if t < t_min {
            return None;
        }
        let hit = ray_origin + dir * t - self.origin;
        let a = hit.dot(&self.u) / self.u.norm_squared();
        let b = hit.dot(&self.v) / self.v.norm_squared();
        if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
            Some(t)
        } else {
            None
        }
    }
}

/// Static building dimensions.
#[derive(Clone, Debug)]
pub struct BuildingDims {
    pub num_floors: usize,
    pub floor_height: f64,
    pub corridor_length: f64,
    pub corridor_width: f64,
    pub corridor_height: f64,
    pub cabin_width: f64,
    pub cabin_depth: f64,
    pub cabin_height: f64,
    pub door_width: f64,
    pub door_height: f64,
}

/// Instantaneous scene state needed to build the surface list.
#[derive(Clone, Copy, Debug)]
pub struct SceneState {
    /// Cabin floor elevation at rest (start-floor base), m.
    pub cabin_elevation: f64,
    /// Transport displacement vector (tilted when the cabin pitch
    /// perturbation is active).
    pub transport: Vec3,
    /// Cabin/transport tilt about the y axis, rad.
    pub cabin_pitch: f64,
    /// Cabin door panel present.
    pub cabin_door_closed: bool,
    /// Floor whose hall doorway is open (cabin parked there, door open).
    pub open_hall_floor: Option<usize>,
}

pub fn build_surfaces(dims: &BuildingDims, scene: &SceneState) -> Vec<Rect> {
    let mut rects = Vec::with_capacity(16 + dims.num_floors * 10);
    let h = dims.floor_height;
    let hc = dims.corridor_height;
    let (l, w) = (dims.corridor_length, dims.corridor_width);
    let (cw, cd, ch) = (dims.cabin_width, dims.cabin_depth, dims.cabin_height);
    let (dw, dh) = (dims.door_width, dims.door_height);
    let shaft_depth = cd + 0.3;
    let shaft_width = cw + 0.4;
    let shaft_top = dims.num_floors as f64 * h + 1.0;

    let x = Vec3::x();
    let y = Vec3::y();
    let z = Vec3::z();

    for f in 0..dims.num_floors {
        let z0 = f as f64 * h;
        // Floor, ceiling, side walls, far wall.
        rects.push(Rect::new(Vec3::new(0.0, -w / 2.0, z0), x * l, y * w));
        rects.push(Rect::new(Vec3::new(0.0, -w / 2.0, z0 + hc), x * l, y * w));
        rects.push(Rect::new(Vec3::new(0.0, -w / 2.0, z0), x * l, z * hc));
        rects.push(Rect::new(Vec3::new(0.0, w / 2.0, z0), x * l, z * hc));
        rects.push(Rect::new(Vec3::new(l, -w / 2.0, z0), y * w, z * hc));
        // End wall at x = 0 with the elevator doorway cut out.
        rects.push(Rect::new(
            Vec3::new(0.0, -w / 2.0, z0),
            y * (w / 2.0 - dw / 2.0),
            z * hc,
        ));
        rects.push(Rect::new(
            Vec3::new(0.0, dw / 2.0, z0),
            y * (w / 2.0 - dw / 2.0),
            z * hc,
        ));
        rects.push(Rect::new(
            Vec3::new(0.0, -dw / 2.0, z0 + dh),
            y * dw,
            z * (hc - dh),
        ));
        // Band between this corridor's ceiling and the next floor.
        rects.push(Rect::new(
            Vec3::new(0.0, -w / 2.0, z0 + hc),
            y * w,
            z * (h - hc),
        ));
        // Hall door panel unless the cabin sits here with an open door.
        if scene.open_hall_floor != Some(f) {
            rects.push(Rect::new(Vec3::new(0.0, -dw / 2.0, z0), y * dw, z * dh));
        }
    }

    // Shaft walls, pit and cap.
    rects.push(Rect::new(
        Vec3::new(-shaft_depth, -shaft_width / 2.0, -0.3),
        y * shaft_width,
        z * (shaft_top + 0.3),
    ));
    rects.push(Rect::new(
        Vec3::new(-shaft_depth, -shaft_width / 2.0, -0.3),
        x * shaft_depth,
        z * (shaft_top + 0.3),
    ));
    rects.push(Rect::new(
        Vec3::new(-shaft_depth, shaft_width / 2.0, -0.3),
        x * shaft_depth,
        z * (shaft_top + 0.3),
    ));
    rects.push(Rect::new(
        Vec3::new(-shaft_depth, -shaft_width / 2.0, -0.3),
        x * shaft_depth,
        y * shaft_width,
    ));
    rects.push(Rect::new(
        Vec3::new(-shaft_depth, -shaft_width / 2.0, shaft_top),
        x * shaft_depth,
        y * shaft_width,
    ));

    // Cabin box, tilted about its base centre when the pitch
    // perturbation is active.
    let e = scene.cabin_elevation;
    let mut cabin: Vec<Rect> = vec![
        Rect::new(Vec3::new(-cd, -cw / 2.0, e), x * cd, y * cw),
        Rect::new(Vec3::new(-cd, -cw / 2.0, e + ch), x * cd, y * cw),
        Rect::new(Vec3::new(-cd, -cw / 2.0, e), y * cw, z * ch),
        Rect::new(Vec3::new(-cd, -cw / 2.0, e), x * cd, z * ch),
        Rect::new(Vec3::new(-cd, cw / 2.0, e), x * cd, z * ch),
        // Front face strips around the cabin doorway.
        Rect::new(Vec3::new(0.0, -cw / 2.0, e), y * (cw / 2.0 - dw / 2.0), z * ch),
        Rect::new(Vec3::new(0.0, dw / 2.0, e), y * (cw / 2.0 - dw / 2.0), z * ch),
        Rect::new(Vec3::new(0.0, -dw / 2.0, e + dh), y * dw, z * (ch - dh)),
    ];
    if scene.cabin_door_closed {
        cabin.push(Rect::new(Vec3::new(0.0, -dw / 2.0, e), y * dw, z * dh));
    }
    if scene.cabin_pitch != 0.0 {
        let rot = Rotation3::from_axis_angle(&Vec3::y_axis(), scene.cabin_pitch);
        let pivot = Vec3::new(-cd / 2.0, 0.0, e);
        for r in &mut cabin {
            r.origin = pivot + rot * (r.origin - pivot);
            r.u = rot * r.u;
            r.v = rot * r.v;
        }
    }
    for r in &mut cabin {
        r.origin += scene.transport;
    }
    rects.extend(cabin);
    rects
}

/// Sensor ray pattern in the sensor frame.
pub fn ray_pattern(azimuth_count: usize, elevation_count: usize, span_deg: f64) -> Vec<Vec3> {
    let span = span_deg.to_radians();
    let mut dirs = Vec::with_capacity(azimuth_count * elevation_count);
    for e in 0..elevation_count {
        let phi = if elevation_count == 1 {
            0.0
        } else {
            -span + 2.0 * span * e as f64 / (elevation_count - 1) as f64
        };
        for a in 0..azimuth_count {
            let theta = std::f64::consts::TAU * a as f64 / azimuth_count as f64;
            dirs.push(Vec3::new(
                phi.cos() * theta.cos(),
                phi.cos() * theta.sin(),
                phi.sin(),
            ));
        }
    }
    dirs
}

/// Exhaustive nearest-hit cast of one ray against all surfaces.
pub fn cast_ray(surfaces: &[Rect], origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for s in surfaces {
        if let Some(t) = s.intersect(origin, dir, t_min) {
            if t <= t_max && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    }
    best
}

/// Cast the full pattern from a sensor pose, producing sensor-frame points.
pub fn raycast_scan(
    surfaces: &[Rect],
    sensor_pos: &Vec3,
    sensor_rot: &Rotation,
    pattern: &[Vec3],
    t_min: f64,
    t_max: f64,
    mut range_noise: impl FnMut() -> f64,
) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(pattern.len());
    for d in pattern {
        let world_dir = sensor_rot * d;
        if let Some(t) = cast_ray(surfaces, sensor_pos, &world_dir, t_min, t_max) {
            let r = t + range_noise();
            if r > t_min {
                pts.push(d * r);
            }
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_ray_hits_wall_plane() {
        let wall = Rect::new(Vec3::new(2.0, -1.0, -1.0), Vec3::y() * 2.0, Vec3::z() * 2.0);
        let t = wall
            .intersect(&Vec3::zeros(), &Vec3::x(), 0.0)
            .expect("hit");
        assert_abs_diff_eq!(t, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let wall = Rect::new(Vec3::new(2.0, -1.0, -1.0), Vec3::y() * 2.0, Vec3::z() * 2.0);
        assert!(wall.intersect(&Vec3::zeros(), &Vec3::y(), 0.0).is_none());
    }

    #[test]
    fn ray_outside_patch_misses() {
        let wall = Rect::new(Vec3::new(2.0, -1.0, -1.0), Vec3::y() * 2.0, Vec3::z() * 2.0);
        assert!(wall
            .intersect(&Vec3::new(0.0, 5.0, 0.0), &Vec3::x(), 0.0)
            .is_none());
    }

    fn test_dims() -> BuildingDims {
        BuildingDims {
            num_floors: 3,
            floor_height: 3.0,
            corridor_length: 10.0,
            corridor_width: 4.0,
            corridor_height: 2.5,
            cabin_width: 1.6,
            cabin_depth: 1.4,
            cabin_height: 2.2,
            door_width: 0.9,
            door_height: 2.0,
        }
    }

    #[test]
    fn closed_cabin_is_watertight() {
        let dims = test_dims();
        let scene = SceneState {
            cabin_elevation: 0.0,
            transport: Vec3::zeros(),
            cabin_pitch: 0.0,
            cabin_door_closed: true,
            open_hall_floor: None,
        };
        let surfaces = build_surfaces(&dims, &scene);
        let origin = Vec3::new(-0.7, 0.0, 0.4);
        let diag = (dims.cabin_width.powi(2) + dims.cabin_depth.powi(2) + dims.cabin_height.powi(2))
            .sqrt();
        for d in ray_pattern(90, 9, 45.0) {
            let t = cast_ray(&surfaces, &origin, &d, 0.01, 1000.0).expect("every ray must hit");
            assert!(t <= diag + 1e-9, "ray escaped the cabin: t = {t}");
        }
    }

    #[test]
    fn open_door_reveals_the_corridor() {
        let dims = test_dims();
        let scene = SceneState {
            cabin_elevation: 0.0,
            transport: Vec3::zeros(),
            cabin_pitch: 0.0,
            cabin_door_closed: false,
            open_hall_floor: Some(0),
        };
        let surfaces = build_surfaces(&dims, &scene);
        let origin = Vec3::new(-0.7, 0.0, 0.4);
        // Straight out the door: hits the corridor far wall.
        let t = cast_ray(&surfaces, &origin, &Vec3::x(), 0.01, 1000.0).unwrap();
        assert_abs_diff_eq!(t, dims.corridor_length + 0.7, epsilon = 1e-9);
    }

    #[test]
    fn hall_panel_blocks_other_floors() {
        let dims = test_dims();
        let scene = SceneState {
            cabin_elevation: 0.0,
            transport: Vec3::zeros(),
            cabin_pitch: 0.0,
            cabin_door_closed: false,
            open_hall_floor: Some(0),
        };
        let surfaces = build_surfaces(&dims, &scene);
        // Robot in floor-1 corridor looking at the shaft: the hall door
        // panel is present there.
        let origin = Vec3::new(1.2, 0.0, 3.0 + 0.4);
        let t = cast_ray(&surfaces, &origin, &(-Vec3::x()), 0.01, 1000.0).unwrap();
        assert_abs_diff_eq!(t, 1.2, epsilon = 1e-9);
    }

    #[test]
    fn raycast_matches_independent_min_scan() {
        // Independent oracle: re-derive the minimum over surfaces with a
        // plain plane-intersection formula.
        let dims = test_dims();
        let scene = SceneState {
            cabin_elevation: 0.0,
            transport: Vec3::new(0.0, 0.0, 3.7),
            cabin_pitch: 0.0,
            cabin_door_closed: true,
            open_hall_floor: None,
        };
        let surfaces = build_surfaces(&dims, &scene);
        let origin = Vec3::new(3.0, 0.5, 0.5);
        for d in ray_pattern(64, 8, 40.0) {
            let got = cast_ray(&surfaces, &origin, &d, 0.05, 1000.0);
            let mut expect: Option<f64> = None;
            for s in &surfaces {
                let n = s.u.cross(&s.v);
                let denom = n.dot(&d);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = n.dot(&(s.origin - origin)) / denom;
                if t < 0.05 {
                    continue;
                }
                let hit = origin + d * t - s.origin;
                let a = hit.dot(&s.u) / s.u.norm_squared();
                let b = hit.dot(&s.v) / s.v.norm_squared();
                if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
                    expect = Some(expect.map_or(t, |e: f64| e.min(t)));
                }
            }
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn tilted_cabin_rotates_surfaces() {
        let dims = test_dims();
        let pitch = 3.0f64.to_radians();
        let scene = SceneState {
            cabin_elevation: 0.0,
            transport: Vec3::zeros(),
            cabin_pitch: pitch,
            cabin_door_closed: true,
            open_hall_floor: None,
        };
        let surfaces = build_surfaces(&dims, &scene);
        // Away from the tilt pivot so the floor height actually changes.
        let origin = Vec3::new(-1.2, 0.0, 0.5);
        let t = cast_ray(&surfaces, &origin, &(-Vec3::z()), 0.01, 10.0).unwrap();
        assert!((t - 0.5).abs() > 1e-4, "tilt had no effect: t = {t}");
        assert!((t - 0.5).abs() < 0.1);
    }
}
