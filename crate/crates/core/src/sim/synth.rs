//! Synthetic LiDAR-like scenes: parametric object surfaces, a ground
//! plane, static clutter objects and a moving target.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{BBox3D, BoxSize, Point3, PointCloud, RigidTransform, Vec3};
use crate::math::{cos, exp, sin, sqrt, PI, TAU};

/// Deterministic sub-seed for stream `(tag, index)` of `seed`.
pub fn derive_seed(seed: u64, tag: u32, index: u32) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(tag) << 32) | u64::from(index));
    rng.next_u64()
}

fn stream(seed: u64, tag: u32, index: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

const TAG_OBJECT: u32 = 1;
const TAG_MOTION: u32 = 2;
const TAG_GROUND: u32 = 3;
const TAG_CLUTTER: u32 = 4;
const TAG_NOISE: u32 = 5;
const TAG_DROPOUT: u32 = 6;

/// Minimum number of surface samples per object.
pub const MIN_OBJECT_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Shape {
    CuboidShell,
    #[default]
    CarLike,
    Cylinder,
}

impl Shape {
    pub fn as_str(&self) -> &'static str {
        match self {
            Shape::CuboidShell => "cuboid_shell",
            Shape::CarLike => "car_like",
            Shape::Cylinder => "cylinder",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cuboid_shell" => Ok(Shape::CuboidShell),
            "car_like" => Ok(Shape::CarLike),
            "cylinder" => Ok(Shape::Cylinder),
            other => Err(Error::Unknown {
                kind: "shape",
                value: other.into(),
            }),
        }
    }
}

/// A sampleable surface patch.
#[derive(Debug, Clone, Copy)]
enum Patch {
    /// Axis-aligned rectangle: fixed `axis` at `value`, spanning the two
    /// other axes over `lo..hi` (in axis order).
    Rect {
        axis: usize,
        value: f64,
        lo: [f64; 2],
        hi: [f64; 2],
    },
    /// Disc in the plane `y = value` centred at `(cx, cz)`.
    DiscY {
        value: f64,
        cx: f64,
        cz: f64,
        r: f64,
    },
    /// Lateral surface of a vertical cylinder.
    Tube { r: f64, z0: f64, z1: f64 },
    /// Horizontal disc of a vertical cylinder.
    DiscZ { r: f64, z: f64 },
}

impl Patch {
    fn area(&self) -> f64 {
        match *self {
            Patch::Rect { lo, hi, .. } => (hi[0] - lo[0]) * (hi[1] - lo[1]),
            Patch::DiscY { r, .. } | Patch::DiscZ { r, .. } => PI * r * r,
            Patch::Tube { r, z0, z1 } => TAU * r * (z1 - z0),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point3 {
        match *self {
            Patch::Rect {
                axis,
                value,
                lo,
                hi,
            } => {
                let u = rng.random_range(lo[0]..=hi[0]);
                let v = rng.random_range(lo[1]..=hi[1]);
                match axis {
                    0 => Point3::new(value, u, v),
                    1 => Point3::new(u, value, v),
                    _ => Point3::new(u, v, value),
                }
            }
            Patch::DiscY { value, cx, cz, r } => {
                let (dx, dz) = disc_sample(rng, r);
                Point3::new(cx + dx, value, cz + dz)
            }
            Patch::DiscZ { r, z } => {
                let (dx, dy) = disc_sample(rng, r);
                Point3::new(dx, dy, z)
            }
            Patch::Tube { r, z0, z1 } => {
                let a = rng.random_range(0.0..TAU);
                Point3::new(r * cos(a), r * sin(a), rng.random_range(z0..=z1))
            }
        }
    }
}

fn disc_sample<R: Rng>(rng: &mut R, r: f64) -> (f64, f64) {
    let rho = r * sqrt(rng.random_range(0.0..=1.0));
    let a = rng.random_range(0.0..TAU);
    (rho * cos(a), rho * sin(a))
}

fn cuboid_patches(x: [f64; 2], y: [f64; 2], z: [f64; 2], out: &mut Vec<Patch>) {
    for value in x {
        out.push(Patch::Rect {
            axis: 0,
            value,
            lo: [y[0], z[0]],
            hi: [y[1], z[1]],
        });
    }
    for value in y {
        out.push(Patch::Rect {
            axis: 1,
            value,
            lo: [x[0], z[0]],
            hi: [x[1], z[1]],
        });
    }
    for value in z {
        out.push(Patch::Rect {
            axis: 2,
            value,
            lo: [x[0], y[0]],
            hi: [x[1], y[1]],
        });
    }
}

fn patches(shape: Shape, s: &BoxSize) -> Vec<Patch> {
    let (hl, hw, hh) = (s.l / 2.0, s.w / 2.0, s.h / 2.0);
    let mut out = Vec::new();
    match shape {
        Shape::CuboidShell => cuboid_patches([-hl, hl], [-hw, hw], [-hh, hh], &mut out),
        Shape::CarLike => {
            // Lower body, a cabin set towards the rear, and wheels on the
            // sides whose arches differ front to rear.
            let body_bottom = -hh + 0.15 * s.h;
            let body_top = -hh + 0.6 * s.h;
            let body_w = 0.9 * hw;
            cuboid_patches(
                [-hl, hl],
                [-body_w, body_w],
                [body_bottom, body_top],
                &mut out,
            );
            cuboid_patches(
                [-0.4 * s.l, 0.15 * s.l],
                [-0.8 * hw, 0.8 * hw],
                [body_top, hh],
                &mut out,
            );
            let wheels = [(0.32 * s.l, 0.15 * s.h), (-0.3 * s.l, 0.19 * s.h)];
            for (cx, r) in wheels {
                let r = r.min(0.15 * s.l);
                for value in [-hw, hw] {
                    out.push(Patch::DiscY {
                        value,
                        cx,
                        cz: -hh + r,
                        r,
                    });
                }
            }
        }
        Shape::Cylinder => {
            let r = hl.min(hw);
            out.push(Patch::Tube { r, z0: -hh, z1: hh });
            out.push(Patch::DiscZ { r, z: -hh });
            out.push(Patch::DiscZ { r, z: hh });
        }
    }
    out
}

/// Area-weighted surface sample of `shape` fitted to `size`, centred at the
/// origin of its canonical frame with `x` along the heading.
pub fn synth_object(shape: Shape, size: &BoxSize, n: usize, seed: u64) -> Result<PointCloud> {
    if n < MIN_OBJECT_POINTS {
        return Err(Error::invalid("object_points", "must be at least 50"));
    }
    let patches = patches(shape, size);
    let cumulative: Vec<f64> = patches
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p.area();
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().unwrap_or(&0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let u = rng.random_range(0.0..total);
            let k = cumulative
                .iter()
                .position(|c| u < *c)
                .unwrap_or(patches.len() - 1);
            patches[k].sample(&mut rng)
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Scene and motion parameters of a synthetic sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub frames: usize,
    pub shape: Shape,
    pub size: BoxSize,
    pub object_points: usize,
    /// Target number of points per frame in the viewing window (object,
    /// clutter and ground together).
    pub scene_points: usize,
    /// Mean forward displacement per frame (m).
    pub speed: f64,
    /// Standard deviation of the per-frame speed perturbation (m).
    pub speed_jitter: f64,
    /// Upper bound on the per-frame displacement (m).
    pub max_speed: f64,
    /// Mean yaw change per frame (rad).
    pub yaw_rate: f64,
    /// Standard deviation of the per-frame yaw perturbation (rad).
    pub yaw_jitter: f64,
    /// Hard bound on the per-frame yaw change (rad).
    pub yaw_rate_limit: f64,
    /// Per-point Gaussian noise (m).
    pub noise_sigma: f64,
    /// Clutter points near the target, relative to `object_points`.
    pub clutter_ratio: f64,
    /// Strength of range-dependent point dropout; 0 disables it.
    pub dropout: f64,
    /// Half-size of the square window around the target kept per frame (m).
    pub view_radius: f64,
    /// Gap between the box bottom and the ground plane (m).
    pub ground_gap: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            shape: Shape::CarLike,
            size: BoxSize {
                l: 4.0,
                w: 1.8,
                h: 1.5,
            },
            object_points: 800,
            scene_points: 2000,
            speed: 0.5,
            speed_jitter: 0.1,
            max_speed: 0.8,
            yaw_rate: 0.0,
            yaw_jitter: 0.02,
            yaw_rate_limit: 5.0 * PI / 180.0,
            noise_sigma: 0.01,
            clutter_ratio: 0.3,
            dropout: 0.0,
            view_radius: 6.0,
            ground_gap: 0.05,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, bool, &'static str); 10] = [
            ("frames", self.frames >= 2, "must be at least 2"),
            (
                "object_points",
                self.object_points >= MIN_OBJECT_POINTS,
                "must be at least 50",
            ),
            (
                "speed",
                self.speed >= 0.0 && self.speed <= self.max_speed,
                "must lie in [0, max_speed]",
            ),
            (
                "speed_jitter",
                self.speed_jitter >= 0.0,
                "must be non-negative",
            ),
            ("yaw_jitter", self.yaw_jitter >= 0.0, "must be non-negative"),
            (
                "yaw_rate",
                self.yaw_rate.abs() <= self.yaw_rate_limit,
                "must not exceed yaw_rate_limit",
            ),
            (
                "noise_sigma",
                self.noise_sigma >= 0.0,
                "must be non-negative",
            ),
            (
                "clutter_ratio",
                self.clutter_ratio >= 0.0,
                "must be non-negative",
            ),
            ("dropout", self.dropout >= 0.0, "must be non-negative"),
            ("view_radius", self.view_radius > 0.0, "must be positive"),
        ];
        for (name, ok, reason) in checks {
            if !ok {
                return Err(Error::invalid(name, reason));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    /// World-frame point clouds.
    pub frames: Vec<PointCloud>,
    pub gt_boxes: Vec<BBox3D>,
    pub object_size: BoxSize,
    pub seed: u64,
}

/// Ground-truth trajectory: constant velocity along the heading with
/// bounded, seeded speed and yaw perturbations.
pub fn synth_trajectory(cfg: &SequenceConfig, seed: u64) -> Result<Vec<BBox3D>> {
    cfg.validate()?;
    let mut rng = stream(seed, TAG_MOTION, 0);
    let unit = Normal::new(0.0, 1.0).map_err(|_| Error::invalid("normal", "bad parameters"))?;
    let start_heading = rng.random_range(-PI..PI);
    let bearing = rng.random_range(-PI..PI);
    let range = rng.random_range(6.0..12.0);
    let mut center = Vec3::new(range * cos(bearing), range * sin(bearing), cfg.size.h / 2.0);
    let mut heading = start_heading;
    let mut boxes = Vec::with_capacity(cfg.frames);
    boxes.push(BBox3D::new(center, cfg.size, heading)?);
    for _ in 1..cfg.frames {
        let step = (cfg.speed + cfg.speed_jitter * unit.sample(&mut rng)).clamp(0.0, cfg.max_speed);
        let yaw = (cfg.yaw_rate + cfg.yaw_jitter * unit.sample(&mut rng))
            .clamp(-cfg.yaw_rate_limit, cfg.yaw_rate_limit);
        heading += yaw;
        center += Vec3::new(cos(heading), sin(heading), 0.0) * step;
        boxes.push(BBox3D::new(center, cfg.size, heading)?);
    }
    Ok(boxes)
}

struct Clutter {
    pose: RigidTransform,
    points: PointCloud,
}

fn synth_clutter(cfg: &SequenceConfig, boxes: &[BBox3D], seed: u64) -> Result<Vec<Clutter>> {
    let per_object = libm::round(cfg.clutter_ratio * cfg.object_points as f64) as usize;
    if per_object == 0 {
        return Ok(Vec::new());
    }
    let mut rng = stream(seed, TAG_CLUTTER, 0);
    let mut out = Vec::new();
    // One clutter object roughly every 3 m of path, alternating sides.
    let mut travelled = f64::INFINITY;
    let mut side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    for (k, b) in boxes.iter().enumerate() {
        if k > 0 {
            travelled += (b.center - boxes[k - 1].center).norm();
        }
        if travelled < 3.0 {
            continue;
        }
        travelled = 0.0;
        let lateral = side * (cfg.size.w / 2.0 + rng.random_range(0.8..1.8));
        side = -side;
        let forward = rng.random_range(-1.0..1.0);
        let local = Vec3::new(forward, lateral, 0.0);
        let shape = if rng.random_bool(0.5) {
            Shape::CuboidShell
        } else {
            Shape::Cylinder
        };
        let size = BoxSize::new(
            rng.random_range(0.4..1.2),
            rng.random_range(0.4..1.0),
            rng.random_range(0.6..1.6),
        )?;
        let world = b.pose().apply(&Point3::from(local)).coords;
        let center = Vec3::new(world.x, world.y, size.h / 2.0);
        let pose = RigidTransform::from_yaw(rng.random_range(-PI..PI), center);
        let points = synth_object(
            shape,
            &size,
            per_object.max(MIN_OBJECT_POINTS),
            rng.next_u64(),
        )?;
        out.push(Clutter { pose, points });
    }
    Ok(out)
}

fn synth_ground(
    cfg: &SequenceConfig,
    boxes: &[BBox3D],
    clutter_points: usize,
    seed: u64,
) -> Vec<Point3> {
    let window = 2.0 * cfg.view_radius;
    let per_frame = cfg
        .scene_points
        .saturating_sub(cfg.object_points + clutter_points);
    if per_frame == 0 {
        return Vec::new();
    }
    let density = per_frame as f64 / (window * window);
    let r = cfg.view_radius;
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for b in boxes {
        x0 = x0.min(b.center.x - r);
        x1 = x1.max(b.center.x + r);
        y0 = y0.min(b.center.y - r);
        y1 = y1.max(b.center.y + r);
    }
    let count = libm::round(density * (x1 - x0) * (y1 - y0)) as usize;
    let mut rng = stream(seed, TAG_GROUND, 0);
    let z = -cfg.ground_gap;
    (0..count)
        .map(|_| Point3::new(rng.random_range(x0..=x1), rng.random_range(y0..=y1), z))
        .collect()
}

fn in_window(p: &Point3, center: &Vec3, r: f64) -> bool {
    (p.x - center.x).abs() <= r && (p.y - center.y).abs() <= r
}

/// Builds a full sequence. The object, clutter and ground samples are drawn
/// once; per frame the object is moved to its ground-truth pose, noise and
/// dropout are applied and the scene is cropped to the viewing window.
pub fn synth_sequence(cfg: &SequenceConfig, seed: u64) -> Result<SyntheticSequence> {
    let boxes = synth_trajectory(cfg, seed)?;
    let object = synth_object(
        cfg.shape,
        &cfg.size,
        cfg.object_points,
        derive_seed(seed, TAG_OBJECT, 0),
    )?;
    let clutter = synth_clutter(cfg, &boxes, seed)?;
    let clutter_points = if clutter.is_empty() {
        0
    } else {
        libm::round(cfg.clutter_ratio * cfg.object_points as f64) as usize
    };
    let ground = synth_ground(cfg, &boxes, clutter_points, seed);
    let static_points: Vec<Point3> = clutter
        .iter()
        .flat_map(|c| c.points.points.iter().map(|p| c.pose.apply(p)))
        .chain(ground.iter().copied())
        .collect();
    let noise = if cfg.noise_sigma > 0.0 {
        Some(
            Normal::new(0.0, cfg.noise_sigma)
                .map_err(|_| Error::invalid("noise_sigma", "bad value"))?,
        )
    } else {
        None
    };

    let mut frames = Vec::with_capacity(boxes.len());
    for (t, b) in boxes.iter().enumerate() {
        let pose = b.pose();
        let mut pts: Vec<Point3> = object.points.iter().map(|p| pose.apply(p)).collect();
        pts.extend(
            static_points
                .iter()
                .filter(|p| in_window(p, &b.center, cfg.view_radius)),
        );
        if let Some(noise) = &noise {
            let mut rng = stream(seed, TAG_NOISE, t as u32);
            for p in pts.iter_mut() {
                *p += Vec3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                );
            }
        }
        if cfg.dropout > 0.0 {
            let mut rng = stream(seed, TAG_DROPOUT, t as u32);
            pts.retain(|p| {
                let range = sqrt(p.x * p.x + p.y * p.y);
                rng.random_bool(exp(-cfg.dropout * range / 10.0).clamp(0.0, 1.0))
            });
        }
        frames.push(PointCloud::new(pts));
    }
    Ok(SyntheticSequence {
        frames,
        gt_boxes: boxes,
        object_size: cfg.size,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::crop;
    use crate::math::wrap_angle;

    fn size() -> BoxSize {
        BoxSize::new(4.0, 1.8, 1.5).unwrap()
    }

    #[test]
    fn shape_names() {
        for s in [Shape::CuboidShell, Shape::CarLike, Shape::Cylinder] {
            assert_eq!(s.as_str().parse::<Shape>().unwrap(), s);
        }
        assert!("sphere".parse::<Shape>().is_err());
    }

    #[test]
    fn cuboid_points_on_surface() {
        let s = size();
        let c = synth_object(Shape::CuboidShell, &s, 500, 3).unwrap();
        for p in &c.points {
            let gaps = [
                (p.x.abs() - s.l / 2.0).abs(),
                (p.y.abs() - s.w / 2.0).abs(),
                (p.z.abs() - s.h / 2.0).abs(),
            ];
            assert!(gaps.iter().any(|g| *g < 1e-9));
            assert!(
                p.x.abs() <= s.l / 2.0 + 1e-9
                    && p.y.abs() <= s.w / 2.0 + 1e-9
                    && p.z.abs() <= s.h / 2.0 + 1e-9
            );
        }
        assert!(synth_object(Shape::CuboidShell, &s, 49, 3).is_err());
    }

    #[test]
    fn objects_are_seeded_and_fit_box() {
        let s = size();
        let b = BBox3D::new(Vec3::zeros(), s, 0.0).unwrap();
        for shape in [Shape::CuboidShell, Shape::CarLike, Shape::Cylinder] {
            let a = synth_object(shape, &s, 300, 11).unwrap();
            assert_eq!(a, synth_object(shape, &s, 300, 11).unwrap());
            assert_ne!(a, synth_object(shape, &s, 300, 12).unwrap());
            assert!(a.points.iter().all(|p| b.contains(p, 0.0)));
        }
    }

    #[test]
    fn car_is_front_rear_asymmetric() {
        let c = synth_object(Shape::CarLike, &size(), 4000, 5).unwrap();
        let mean = |front: bool| {
            let sel: Vec<&Point3> = c.points.iter().filter(|p| (p.x > 0.0) == front).collect();
            sel.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / sel.len() as f64
        };
        let (f, r) = (mean(true), mean(false));
        // Mirror the rear half and compare: heights differ because of the cabin.
        assert!((f.z - r.z).abs() > 0.05, "{f:?} {r:?}");
    }

    #[test]
    fn static_scene_frames_identical() {
        let cfg = SequenceConfig {
            speed: 0.0,
            speed_jitter: 0.0,
            yaw_jitter: 0.0,
            noise_sigma: 0.0,
            clutter_ratio: 0.0,
            frames: 4,
            ..Default::default()
        };
        let seq = synth_sequence(&cfg, 9).unwrap();
        assert_eq!(seq.frames.len(), 4);
        for f in &seq.frames[1..] {
            assert_eq!(f, &seq.frames[0]);
        }
        assert_eq!(seq, synth_sequence(&cfg, 9).unwrap());
    }

    #[test]
    fn motion_is_bounded() {
        let cfg = SequenceConfig {
            yaw_jitter: 0.5,
            speed_jitter: 0.5,
            ..Default::default()
        };
        let gate = crate::feat::GateConfig::default();
        for seed in 0..10 {
            let boxes = synth_trajectory(&cfg, seed).unwrap();
            for w in boxes.windows(2) {
                let dyaw = wrap_angle(w[1].heading() - w[0].heading());
                assert!(dyaw.abs() <= cfg.yaw_rate_limit + 1e-12);
                let step = (w[1].center - w[0].center).norm();
                assert!(step <= cfg.max_speed + 1e-12);
                // Displacement in the previous box frame stays inside the gate.
                let local = w[0].world_to_canonical().apply(&Point3::from(w[1].center));
                assert!(gate.distance(&Point3::origin(), &local) <= 1.0);
            }
        }
    }

    #[test]
    fn frames_contain_target() {
        let seq = synth_sequence(&SequenceConfig::default(), 4).unwrap();
        assert_eq!(seq.frames.len(), seq.gt_boxes.len());
        for (f, b) in seq.frames.iter().zip(&seq.gt_boxes) {
            let inside = crop(f, b, 0.0).unwrap().len();
            assert!(inside > 700, "{inside}");
            assert!(f.len() > 1500 && f.len() < 2600, "{}", f.len());
        }
    }
}
