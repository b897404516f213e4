//! Ray-cast multi-ring LiDAR simulator over a ground plane, axis-aligned boxes
//! and vertical poles, with a few predefined trajectories.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{LidarPoint, RawScan};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    /// Entry distance of a ray starting outside the box.
    fn hit(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let t1 = (self.min[a] - o[a]) / d[a];
            let t2 = (self.max[a] - o[a]) / d[a];
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }

    fn center_xy(&self) -> (f64, f64, f64) {
        let cx = 0.5 * (self.min.x + self.max.x);
        let cy = 0.5 * (self.min.y + self.max.y);
        let r = 0.5 * ((self.max.x - self.min.x).hypot(self.max.y - self.min.y));
        (cx, cy, r)
    }
}

/// Vertical cylinder standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pole {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
}

impl Pole {
    fn hit(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let (dx, dy) = (o.x - self.x, o.y - self.y);
        let a = d.x * d.x + d.y * d.y;
        if a < 1e-15 {
            return None;
        }
        let b = 2.0 * (dx * d.x + dy * d.y);
        let c = dx * dx + dy * dy - self.radius * self.radius;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let t = (-b - disc.sqrt()) / (2.0 * a);
        let z = o.z + t * d.z;
        (t > 0.0 && (0.0..=self.height).contains(&z)).then_some(t)
    }
}

/// Ground plane at `z = 0` plus obstacles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct World {
    pub boxes: Vec<Aabb>,
    pub poles: Vec<Pole>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Ground,
    Building,
    Pole,
}

impl World {
    fn cast(&self, o: &Vec3, d: &Vec3, boxes: &[usize], poles: &[usize]) -> Option<(f64, Surface)> {
        let mut best: Option<(f64, Surface)> = None;
        let mut consider = |t: f64, s: Surface| {
            if best.is_none_or(|b| t < b.0) {
                best = Some((t, s));
            }
        };
        if d.z < 0.0 {
            consider(-o.z / d.z, Surface::Ground);
        }
        for &i in boxes {
            if let Some(t) = self.boxes[i].hit(o, d) {
                consider(t, Surface::Building);
            }
        }
        for &i in poles {
            if let Some(t) = self.poles[i].hit(o, d) {
                consider(t, Surface::Pole);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub num_lasers: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub azimuth_step_deg: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Mounting height above the ground, meters.
    pub height: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            num_lasers: 32,
            min_elevation_deg: -24.8,
            max_elevation_deg: 2.0,
            azimuth_step_deg: 0.5,
            min_range: 1.0,
            max_range: 80.0,
            height: 1.8,
        }
    }
}

impl SensorModel {
    /// Laser elevations at the centres of equal bins over the elevation span,
    /// so ring indices survive reconstruction from point elevation.
    pub fn elevations_deg(&self) -> Vec<f64> {
        let bin = (self.max_elevation_deg - self.min_elevation_deg) / self.num_lasers as f64;
        (0..self.num_lasers)
            .map(|i| self.min_elevation_deg + (i as f64 + 0.5) * bin)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryShape {
    /// Closed loop around a square block with rounded corners.
    SquareLoop,
    /// Straight drive through two identical rooms 60 m apart in a world that
    /// repeats every 60 m.
    AliasedRooms,
    /// Straight drive along a street.
    Line,
}

impl FromStr for TrajectoryShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square_loop" => Ok(TrajectoryShape::SquareLoop),
            "aliased_rooms" => Ok(TrajectoryShape::AliasedRooms),
            "line" => Ok(TrajectoryShape::Line),
            other => Err(Error::Config(format!("unknown synthetic shape {other:?}"))),
        }
    }
}

impl TrajectoryShape {
    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryShape::SquareLoop => "square_loop",
            TrajectoryShape::AliasedRooms => "aliased_rooms",
            TrajectoryShape::Line => "line",
        }
    }
}

/// Room spacing of the aliased world, meters.
pub const ROOM_SPACING: f64 = 60.0;

/// Parameters of a synthetic run, written `shape[:key=value,...]`, for
/// example `square_loop:frames=400,noise=0.02`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub shape: TrajectoryShape,
    pub frames: usize,
    /// Range noise standard deviation, meters.
    pub noise: f64,
    /// Poles per 100 m of path.
    pub density: f64,
    pub seed: u64,
    /// Side length of the square loop, meters.
    pub size: f64,
    /// Distance travelled per frame on open paths, meters.
    pub step: f64,
    /// Time-varying heading perturbation amplitude, radians.
    pub wobble: f64,
    /// Times the square loop is travelled; the last frame lands on the first
    /// when this is a whole number.
    pub laps: f64,
}

impl WorldSpec {
    pub fn new(shape: TrajectoryShape) -> Self {
        let base = WorldSpec {
            shape,
            frames: 400,
            noise: 0.02,
            density: 10.0,
            seed: 1,
            size: 100.0,
            step: 0.5,
            wobble: 0.0,
            laps: 1.0,
        };
        match shape {
            TrajectoryShape::SquareLoop => base,
            TrajectoryShape::AliasedRooms => WorldSpec {
                frames: 256,
                step: 0.34,
                ..base
            },
            TrajectoryShape::Line => WorldSpec { frames: 50, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.noise >= 0.0
            && self.density >= 0.0
            && self.size > 40.0
            && self.step > 0.0
            && self.laps > 0.0
            && self.noise.is_finite()
            && self.wobble.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid synthetic world parameters".into()))
        }
    }
}

impl FromStr for WorldSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (shape, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = WorldSpec::new(shape.trim().parse()?);
        for item in rest.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in synthetic spec, got {item:?}")))?;
            let bad = || Error::Config(format!("invalid value {value:?} for synthetic key {key:?}"));
            let float = || value.parse::<f64>().map_err(|_| bad());
            match key {
                "frames" => spec.frames = value.parse().map_err(|_| bad())?,
                "noise" => spec.noise = float()?,
                "density" => spec.density = float()?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "size" => spec.size = float()?,
                "step" => spec.step = float()?,
                "wobble" => spec.wobble = float()?,
                "laps" => spec.laps = float()?,
                _ => return Err(Error::Config(format!("unknown synthetic key {key:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for WorldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:frames={},noise={},density={},seed={},size={},step={},wobble={},laps={}",
            self.shape.name(),
            self.frames,
            self.noise,
            self.density,
            self.seed,
            self.size,
            self.step,
            self.wobble,
            self.laps
        )
    }
}

/// A world, a sensor and the sensor's world-frame poses, one per frame.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub world: World,
    pub sensor: SensorModel,
    pub world_poses: Vec<Pose>,
}

fn planar_pose(x: f64, y: f64, yaw: f64, height: f64) -> Pose {
    Pose::new(Rotation::rotz(yaw), Vec3::new(x, y, height))
}

fn building(x0: f64, x1: f64, y0: f64, y1: f64, height: f64) -> Aabb {
    Aabb::new(Vec3::new(x0.min(x1), y0.min(y1), 0.0), Vec3::new(x0.max(x1), y0.max(y1), height))
}

// Row of buildings along the x axis between `from` and `to`, front face at
// `y = front`, extending away from the street in direction `side` (+1 / -1).
fn street_row(rng: &mut ChaCha8Rng, from: f64, to: f64, front: f64, side: f64) -> Vec<Aabb> {
    let mut out = Vec::new();
    let mut x = from + rng.random_range(0.0..4.0);
    while x < to {
        let len = rng.random_range(6.0_f64..16.0).min(to - x);
        if len < 3.0 {
            break;
        }
        let depth = rng.random_range(5.0..12.0);
        let setback = rng.random_range(0.0..3.0);
        let height = rng.random_range(3.0..14.0);
        let y0 = front + side * setback;
        out.push(building(x, x + len, y0, y0 + side * depth, height));
        x += len + rng.random_range(2.5..7.0);
    }
    out
}

fn street_poles(rng: &mut ChaCha8Rng, from: f64, to: f64, density: f64, offset: f64) -> Vec<Pole> {
    let count = ((to - from) * density / 100.0).round() as usize;
    (0..count)
        .map(|i| {
            let slot = (to - from) / count as f64;
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            Pole {
                x: from + slot * (i as f64 + rng.random_range(0.2..0.8)),
                y: side * (offset + rng.random_range(0.0..1.5)),
                radius: rng.random_range(0.1..0.25),
                height: rng.random_range(3.0..7.0),
            }
        })
        .collect()
}

fn rotate_aabb_quarter(b: &Aabb, quarter: usize, origin: (f64, f64)) -> Aabb {
    let rot = |x: f64, y: f64| -> (f64, f64) {
        let (mut x, mut y) = (x, y);
        for _ in 0..quarter {
            (x, y) = (-y, x);
        }
        (x + origin.0, y + origin.1)
    };
    let (ax, ay) = rot(b.min.x, b.min.y);
    let (bx, by) = rot(b.max.x, b.max.y);
    building(ax, bx, ay, by, b.max.z)
}

impl SyntheticWorld {
    pub fn new(spec: WorldSpec) -> Self {
        let sensor = SensorModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (world, world_poses) = match spec.shape {
            TrajectoryShape::SquareLoop => square_loop(&spec, &sensor, &mut rng),
            TrajectoryShape::AliasedRooms => aliased_rooms(&spec, &sensor, &mut rng),
            TrajectoryShape::Line => line(&spec, &sensor, &mut rng),
        };
        SyntheticWorld {
            spec,
            world,
            sensor,
            world_poses,
        }
    }

    pub fn len(&self) -> usize {
        self.world_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.world_poses.is_empty()
    }

    /// Sensor poses relative to the first frame.
    pub fn ground_truth(&self) -> Vec<Pose> {
        let Some(first) = self.world_poses.first() else {
            return Vec::new();
        };
        let inv = first.inverse();
        self.world_poses.iter().map(|p| inv.compose(p)).collect()
    }

    /// Simulated scan of frame `frame` in the sensor frame. Points are ordered
    /// by ring, then by azimuth from -180 degrees.
    pub fn scan(&self, frame: usize) -> RawScan {
        let pose = self.world_poses[frame];
        let origin = pose.translation;
        let reach = self.sensor.max_range;
        let boxes: Vec<usize> = (0..self.world.boxes.len())
            .filter(|&i| {
                let (cx, cy, r) = self.world.boxes[i].center_xy();
                (cx - origin.x).hypot(cy - origin.y) - r < reach
            })
            .collect();
        let poles: Vec<usize> = (0..self.world.poles.len())
            .filter(|&i| {
                let p = &self.world.poles[i];
                (p.x - origin.x).hypot(p.y - origin.y) - p.radius < reach
            })
            .collect();

        let seed = self.spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (frame as u64).wrapping_add(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = (self.spec.noise > 0.0).then(|| Normal::new(0.0, self.spec.noise).expect("finite sigma"));
        let columns = (360.0 / self.sensor.azimuth_step_deg).round() as usize;
        let mut points = Vec::new();
        for (ring, elevation) in self.sensor.elevations_deg().into_iter().enumerate() {
            let (se, ce) = elevation.to_radians().sin_cos();
            for c in 0..columns {
                let azimuth = -PI + c as f64 * TAU / columns as f64;
                let local = Vec3::new(ce * azimuth.cos(), ce * azimuth.sin(), se);
                let dir = pose.rotation.apply(&local);
                let Some((t, surface)) = self.world.cast(&origin, &dir, &boxes, &poles) else {
                    continue;
                };
                let range = t + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                if !(self.sensor.min_range..=self.sensor.max_range).contains(&range) {
                    continue;
                }
                let intensity = match surface {
                    Surface::Ground => 0.2,
                    Surface::Building => 0.6,
                    Surface::Pole => 0.9,
                };
                points.push(LidarPoint {
                    position: local * range,
                    intensity,
                    ring: ring as u16,
                });
            }
        }
        RawScan {
            points,
            frame_index: frame,
        }
    }
}

/// Scans and ground-truth poses (relative to the first frame) for `spec`.
pub fn generate_world(spec: &WorldSpec) -> (Vec<RawScan>, Vec<Pose>) {
    let world = SyntheticWorld::new(spec.clone());
    let scans = (0..world.len()).map(|i| world.scan(i)).collect();
    (scans, world.ground_truth())
}

fn wobble(spec: &WorldSpec, i: usize) -> f64 {
    spec.wobble * (i as f64 * 0.13).sin()
}

fn square_loop(spec: &WorldSpec, sensor: &SensorModel, rng: &mut ChaCha8Rng) -> (World, Vec<Pose>) {
    let side = spec.size;
    let radius = 20.0;
    let straight = side - 2.0 * radius;
    let perimeter = 4.0 * straight + TAU * radius;
    let step = if spec.frames > 1 {
        spec.laps * perimeter / (spec.frames - 1) as f64
    } else {
        0.0
    };

    // Counter-clockwise around [0, side]^2, starting mid-way along the bottom edge.
    let point_at = |s: f64| -> (f64, f64, f64) {
        let quarter_len = straight + FRAC_PI_2 * radius;
        let s = s.rem_euclid(perimeter);
        let q = ((s / quarter_len).floor() as usize).min(3);
        let u = s - q as f64 * quarter_len;
        // local frame: bottom edge from (side/2, 0) heading +x, then the corner arc
        let (x, y, yaw) = if u < straight / 2.0 {
            (side / 2.0 + u, 0.0, 0.0)
        } else if u < straight / 2.0 + FRAC_PI_2 * radius {
            let a = (u - straight / 2.0) / radius;
            (side - radius + radius * a.sin(), radius - radius * a.cos(), a)
        } else {
            let v = u - straight / 2.0 - FRAC_PI_2 * radius;
            (side, radius + v, FRAC_PI_2)
        };
        // rotate quarter q about the square centre
        let c = side / 2.0;
        let (mut dx, mut dy) = (x - c, y - c);
        for _ in 0..q {
            (dx, dy) = (-dy, dx);
        }
        (c + dx, c + dy, yaw + q as f64 * FRAC_PI_2)
    };
    let poses = (0..spec.frames)
        .map(|i| {
            let (x, y, yaw) = point_at(i as f64 * step);
            planar_pose(x, y, yaw + wobble(spec, i), sensor.height)
        })
        .collect();

    // Buildings along the bottom street, replicated to the other three sides
    // with fresh randomness.
    let mut world = World::default();
    let centre = (side / 2.0, side / 2.0);
    for q in 0..4 {
        let half = side / 2.0;
        // street along local x from -half to half at local y = -half
        let mut local = World::default();
        local.boxes.extend(street_row(rng, -half - 12.0, half + 12.0, -half - 8.0, -1.0));
        local.boxes.extend(street_row(rng, -half + radius + 4.0, half - radius - 4.0, -half + 8.0, 1.0));
        let mut poles = street_poles(rng, -half + radius, half - radius, spec.density, 4.0);
        for p in &mut poles {
            p.y -= half;
        }
        for b in &local.boxes {
            world.boxes.push(rotate_aabb_quarter(b, q, centre));
        }
        for p in poles {
            let (mut x, mut y) = (p.x, p.y);
            for _ in 0..q {
                (x, y) = (-y, x);
            }
            world.poles.push(Pole {
                x: x + centre.0,
                y: y + centre.1,
                ..p
            });
        }
    }
    (world, poses)
}

fn room(cx: f64) -> Vec<Aabb> {
    let (hx, hy, wall, height, door) = (5.0, 4.0, 0.3, 3.0, 1.0);
    vec![
        building(cx - hx, cx + hx, hy - wall, hy, height),
        building(cx - hx, cx + hx, -hy, -hy + wall, height),
        building(cx - hx, cx - hx + wall, -hy + wall, -door, height),
        building(cx - hx, cx - hx + wall, door, hy - wall, height),
        building(cx + hx - wall, cx + hx, -hy + wall, -door, height),
        building(cx + hx - wall, cx + hx, door, hy - wall, height),
        // inner furniture so the room has its own edges
        building(cx - 2.0, cx - 1.2, 2.0, 3.0, 1.2),
        building(cx + 1.5, cx + 3.0, -3.0, -2.2, 0.9),
    ]
}

fn aliased_rooms(spec: &WorldSpec, sensor: &SensorModel, rng: &mut ChaCha8Rng) -> (World, Vec<Pose>) {
    let mut world = World::default();
    world.boxes.extend(room(0.0));
    world.boxes.extend(room(ROOM_SPACING));
    // one period of street furniture, repeated so every place x looks like x + 60
    let mut row = street_row(rng, 6.0, ROOM_SPACING - 6.0, 12.0, 1.0);
    row.extend(street_row(rng, 6.0, ROOM_SPACING - 6.0, -12.0, -1.0));
    let poles = street_poles(rng, 8.0, ROOM_SPACING - 8.0, spec.density.max(8.0), 5.0);
    for period in -2..=3 {
        let shift = period as f64 * ROOM_SPACING;
        for b in &row {
            world.boxes.push(Aabb::new(b.min + Vec3::new(shift, 0.0, 0.0), b.max + Vec3::new(shift, 0.0, 0.0)));
        }
        for p in &poles {
            world.poles.push(Pole { x: p.x + shift, ..*p });
        }
    }
    let start = -12.0;
    let poses = (0..spec.frames)
        .map(|i| planar_pose(start + i as f64 * spec.step, 0.0, wobble(spec, i), sensor.height))
        .collect();
    (world, poses)
}

fn line(spec: &WorldSpec, sensor: &SensorModel, rng: &mut ChaCha8Rng) -> (World, Vec<Pose>) {
    let length = spec.frames as f64 * spec.step;
    let mut world = World::default();
    world.boxes.extend(street_row(rng, -40.0, length + 40.0, 9.0, 1.0));
    world.boxes.extend(street_row(rng, -40.0, length + 40.0, -9.0, -1.0));
    world.poles.extend(street_poles(rng, -20.0, length + 20.0, spec.density.max(10.0), 4.5));
    let poses = (0..spec.frames)
        .map(|i| planar_pose(i as f64 * spec.step, 0.0, wobble(spec, i), sensor.height))
        .collect();
    (world, poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        let s: WorldSpec = "square_loop:frames=40,noise=0,seed=3".parse().unwrap();
        assert_eq!(s.shape, TrajectoryShape::SquareLoop);
        assert_eq!((s.frames, s.noise, s.seed), (40, 0.0, 3));
        assert!("triangle".parse::<WorldSpec>().is_err());
        assert!("line:frames".parse::<WorldSpec>().is_err());
        assert!("line:colour=red".parse::<WorldSpec>().is_err());
    }

    #[test]
    fn square_loop_closes() {
        let w = SyntheticWorld::new("square_loop:frames=400".parse().unwrap());
        let gt = w.ground_truth();
        assert_eq!(gt.len(), 400);
        assert_eq!(gt[0], Pose::identity());
        let last = gt[399];
        assert!(last.translation.norm() < 1e-9);
        assert!(last.angle() < 1e-9);
        // every step along the path is the same length
        let step = (gt[1].translation - gt[0].translation).norm();
        for w in gt.windows(2) {
            assert!(((w[1].translation - w[0].translation).norm() - step).abs() < 0.02);
        }
    }

    #[test]
    fn static_noise_free_frames_are_identical() {
        let mut w = SyntheticWorld::new("line:frames=2,noise=0".parse().unwrap());
        w.world_poses[1] = w.world_poses[0];
        assert_eq!(w.scan(0).points, w.scan(1).points);
    }

    #[test]
    fn pole_returns_lie_on_the_surface() {
        let spec: WorldSpec = "line:frames=1,noise=0".parse().unwrap();
        let mut w = SyntheticWorld::new(spec);
        w.world = World {
            boxes: vec![],
            poles: vec![Pole {
                x: 6.0,
                y: 2.0,
                radius: 0.2,
                height: 5.0,
            }],
        };
        let pose = w.world_poses[0];
        let scan = w.scan(0);
        let on_pole: Vec<_> = scan.points.iter().filter(|p| p.intensity == 0.9).collect();
        assert!(on_pole.len() > 10);
        for p in on_pole {
            let g = pose.apply(&p.position);
            let radial = (g.x - 6.0).hypot(g.y - 2.0);
            assert!((radial - 0.2).abs() < 1e-9, "{radial}");
        }
    }

    #[test]
    fn rings_are_labelled_in_order() {
        let w = SyntheticWorld::new("line:frames=1".parse().unwrap());
        let scan = w.scan(0);
        assert!(scan.points.windows(2).all(|p| p[0].ring <= p[1].ring));
        assert!(scan.points.iter().all(|p| (p.ring as usize) < w.sensor.num_lasers));
    }
}
