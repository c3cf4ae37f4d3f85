//! Procedural outdoor scenes: a ground ring, vertical poles, planar walls and
//! box-shaped vehicles around a sensor at the origin.
//!
//! Each scan draws its own sensor height and intensity gain, so a handful of
//! labelled scans does not cover the whole scene distribution.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PointScan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Ground,
    Pole,
    Wall,
    Vehicle,
}

impl ClassKind {
    /// Class ids beyond the four primitives reuse the primitives cyclically
    /// with a shifted intensity.
    pub fn of_class(class: usize) -> ClassKind {
        match class % 4 {
            0 => ClassKind::Ground,
            1 => ClassKind::Pole,
            2 => ClassKind::Wall,
            _ => ClassKind::Vehicle,
        }
    }

    fn share(self) -> f64 {
        match self {
            ClassKind::Ground => 0.40,
            ClassKind::Pole => 0.12,
            ClassKind::Wall => 0.26,
            ClassKind::Vehicle => 0.22,
        }
    }

    fn intensity(self) -> f64 {
        match self {
            ClassKind::Ground => 0.25,
            ClassKind::Pole => 0.55,
            ClassKind::Wall => 0.40,
            ClassKind::Vehicle => 0.70,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub num_classes: usize,
    pub points_per_scan: usize,
    /// Nominal sensor height above the ground plane (m).
    pub sensor_height: f64,
    /// Per-scan uniform jitter applied to `sensor_height` (m).
    pub sensor_height_jitter: f64,
    /// Vertical spread of ground returns (m).
    pub ground_band: f64,
    pub ground_radius_min: f64,
    pub ground_radius_max: f64,
    pub pole_radius: f64,
    pub pole_height: f64,
    pub pole_distance_min: f64,
    pub pole_distance_max: f64,
    pub wall_distance_min: f64,
    pub wall_distance_max: f64,
    pub wall_height: f64,
    pub wall_length: f64,
    /// Vehicle box (length, width, height) in meters.
    pub vehicle_size: [f64; 3],
    pub vehicle_distance_min: f64,
    pub vehicle_distance_max: f64,
    pub intensity_sigma: f64,
    /// Per-scan multiplicative intensity gain drawn from `1 ± jitter`.
    pub intensity_gain_jitter: f64,
    pub noise_sigma: f64,
    pub num_features: usize,
    /// Amplitude of the class signature carried by feature channels past the
    /// first; 0 makes them pure noise around 0.5.
    pub signature_spread: f64,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            num_classes: 4,
            points_per_scan: 512,
            sensor_height: 1.8,
            sensor_height_jitter: 0.4,
            ground_band: 0.08,
            ground_radius_min: 2.5,
            ground_radius_max: 35.0,
            pole_radius: 0.2,
            pole_height: 4.0,
            pole_distance_min: 4.0,
            pole_distance_max: 20.0,
            wall_distance_min: 10.0,
            wall_distance_max: 28.0,
            wall_height: 3.5,
            wall_length: 30.0,
            vehicle_size: [4.2, 1.8, 1.5],
            vehicle_distance_min: 5.0,
            vehicle_distance_max: 22.0,
            intensity_sigma: 0.12,
            intensity_gain_jitter: 0.35,
            noise_sigma: 0.03,
            num_features: 1,
            signature_spread: 0.0,
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn with_seed(&self, seed: u64) -> SceneConfig {
        SceneConfig {
            rng_seed: seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.points_per_scan == 0 {
            return fail("points_per_scan must be positive".into());
        }
        if self.points_per_scan < self.num_classes {
            return fail(format!(
                "{} points cannot cover {} classes",
                self.points_per_scan, self.num_classes
            ));
        }
        if self.num_features == 0 {
            return fail("num_features must be positive".into());
        }
        let ordered = [
            (self.ground_radius_min, self.ground_radius_max, "ground_radius"),
            (self.pole_distance_min, self.pole_distance_max, "pole_distance"),
            (self.wall_distance_min, self.wall_distance_max, "wall_distance"),
            (self.vehicle_distance_min, self.vehicle_distance_max, "vehicle_distance"),
        ];
        for (lo, hi, name) in ordered {
            if !(lo > 0.0 && hi >= lo) {
                return fail(format!("{name}: need 0 < min <= max, got [{lo}, {hi}]"));
            }
        }
        let positive = [
            (self.sensor_height, "sensor_height"),
            (self.pole_radius, "pole_radius"),
            (self.pole_height, "pole_height"),
            (self.wall_height, "wall_height"),
            (self.wall_length, "wall_length"),
            (self.vehicle_size[0], "vehicle_size"),
            (self.vehicle_size[1], "vehicle_size"),
            (self.vehicle_size[2], "vehicle_size"),
        ];
        for (v, name) in positive {
            if !(v > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        let nonneg = [
            (self.sensor_height_jitter, "sensor_height_jitter"),
            (self.ground_band, "ground_band"),
            (self.intensity_sigma, "intensity_sigma"),
            (self.signature_spread, "signature_spread"),
            (self.intensity_gain_jitter, "intensity_gain_jitter"),
            (self.noise_sigma, "noise_sigma"),
        ];
        for (v, name) in nonneg {
            if !(v >= 0.0) {
                return fail(format!("{name} must be non-negative"));
            }
        }
        if self.sensor_height_jitter >= self.sensor_height {
            return fail("sensor_height_jitter must be below sensor_height".into());
        }
        Ok(())
    }

    /// Points per class: proportional shares, at least one each, remainder to class 0.
    fn class_counts(&self) -> Vec<usize> {
        let shares: Vec<f64> = (0..self.num_classes)
            .map(|c| ClassKind::of_class(c).share())
            .collect();
        let total: f64 = shares.iter().sum();
        let mut counts: Vec<usize> = shares
            .iter()
            .map(|s| ((s / total) * self.points_per_scan as f64).floor().max(1.0) as usize)
            .collect();
        let mut assigned: usize = counts.iter().sum();
        while assigned > self.points_per_scan {
            let big = (0..counts.len()).max_by_key(|&c| (counts[c], usize::MAX - c)).unwrap();
            counts[big] -= 1;
            assigned -= 1;
        }
        counts[0] += self.points_per_scan - assigned;
        counts
    }
}

struct Layout {
    ground_z: f64,
    gain: f64,
    poles: Vec<(f64, f64)>,
    /// Wall: foot point direction, distance.
    walls: Vec<(f64, f64)>,
    /// Vehicle: centre x, y, yaw.
    vehicles: Vec<(f64, f64, f64)>,
}

fn polar(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> (f64, f64) {
    let r = rng.random_range(lo..=hi);
    let phi = rng.random_range(-PI..PI);
    (r * phi.cos(), r * phi.sin())
}

fn layout(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Layout {
    let height = cfg.sensor_height
        + if cfg.sensor_height_jitter > 0.0 {
            rng.random_range(-cfg.sensor_height_jitter..=cfg.sensor_height_jitter)
        } else {
            0.0
        };
    let gain = 1.0
        + if cfg.intensity_gain_jitter > 0.0 {
            rng.random_range(-cfg.intensity_gain_jitter..=cfg.intensity_gain_jitter)
        } else {
            0.0
        };
    let n_poles = rng.random_range(3..=6);
    let poles = (0..n_poles)
        .map(|_| polar(rng, cfg.pole_distance_min, cfg.pole_distance_max))
        .collect();
    let n_walls = rng.random_range(1..=2);
    let walls = (0..n_walls)
        .map(|_| {
            (
                rng.random_range(-PI..PI),
                rng.random_range(cfg.wall_distance_min..=cfg.wall_distance_max),
            )
        })
        .collect();
    let n_vehicles = rng.random_range(2..=4);
    let vehicles = (0..n_vehicles)
        .map(|_| {
            let (x, y) = polar(rng, cfg.vehicle_distance_min, cfg.vehicle_distance_max);
            (x, y, rng.random_range(-PI..PI))
        })
        .collect();
    Layout {
        ground_z: -height,
        gain,
        poles,
        walls,
        vehicles,
    }
}

fn sample_point(kind: ClassKind, cfg: &SceneConfig, lay: &Layout, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match kind {
        ClassKind::Ground => {
            // Returns thin out with distance, as on a spinning sensor.
            let u: f64 = rng.random();
            let r = cfg.ground_radius_min + (cfg.ground_radius_max - cfg.ground_radius_min) * u * u;
            let phi = rng.random_range(-PI..PI);
            let dz = if cfg.ground_band > 0.0 {
                rng.random_range(-cfg.ground_band..=cfg.ground_band)
            } else {
                0.0
            };
            [r * phi.cos(), r * phi.sin(), lay.ground_z + dz]
        }
        ClassKind::Pole => {
            let (cx, cy) = lay.poles[rng.random_range(0..lay.poles.len())];
            let theta = rng.random_range(-PI..PI);
            let z = lay.ground_z + rng.random_range(0.0..=cfg.pole_height);
            [
                cx + cfg.pole_radius * theta.cos(),
                cy + cfg.pole_radius * theta.sin(),
                z,
            ]
        }
        ClassKind::Wall => {
            let (dir, dist) = lay.walls[rng.random_range(0..lay.walls.len())];
            let t = rng.random_range(-0.5..=0.5) * cfg.wall_length;
            let (nx, ny) = (dir.cos(), dir.sin());
            let z = lay.ground_z + rng.random_range(0.0..=cfg.wall_height);
            [dist * nx - t * ny, dist * ny + t * nx, z]
        }
        ClassKind::Vehicle => {
            let (cx, cy, yaw) = lay.vehicles[rng.random_range(0..lay.vehicles.len())];
            let [len, wid, hgt] = cfg.vehicle_size;
            // Pick a face weighted by area: four sides plus the roof.
            let side_a = len * hgt;
            let side_b = wid * hgt;
            let roof = len * wid;
            let pick = rng.random_range(0.0..(2.0 * side_a + 2.0 * side_b + roof));
            let (lx, ly, lz) = if pick < 2.0 * side_a {
                let sign = if pick < side_a { 1.0 } else { -1.0 };
                (rng.random_range(-0.5..=0.5) * len, sign * wid / 2.0, rng.random_range(0.0..=hgt))
            } else if pick < 2.0 * side_a + 2.0 * side_b {
                let sign = if pick < 2.0 * side_a + side_b { 1.0 } else { -1.0 };
                (sign * len / 2.0, rng.random_range(-0.5..=0.5) * wid, rng.random_range(0.0..=hgt))
            } else {
                (rng.random_range(-0.5..=0.5) * len, rng.random_range(-0.5..=0.5) * wid, hgt)
            };
            let (s, c) = yaw.sin_cos();
            [
                cx + c * lx - s * ly,
                cy + s * lx + c * ly,
                lay.ground_z + 0.25 + lz,
            ]
        }
    }
}

/// Mean of feature channel `k >= 1` for `class`, before the scan gain.
fn signature(class: usize, k: usize, spread: f64) -> f64 {
    // Golden-angle phases keep the class patterns far from collinear.
    0.5 + spread * ((class as f64 + 1.0) * k as f64 * 2.399_963).sin()
}

/// Generates a fully labelled scan. A pure function of `cfg`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<PointScan> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let lay = layout(cfg, &mut rng);
    let counts = cfg.class_counts();
    let position_noise = Normal::new(0.0, cfg.noise_sigma).unwrap();
    let intensity_noise = Normal::new(0.0, cfg.intensity_sigma).unwrap();

    let mut points: Vec<([f32; 3], Vec<f32>, u16)> = Vec::with_capacity(cfg.points_per_scan);
    for (class, &count) in counts.iter().enumerate() {
        let kind = ClassKind::of_class(class);
        let base = kind.intensity() + 0.08 * (class / 4) as f64;
        for _ in 0..count {
            let mut p = sample_point(kind, cfg, &lay, &mut rng);
            for c in p.iter_mut() {
                *c += position_noise.sample(&mut rng);
            }
            let mut pf = [p[0] as f32, p[1] as f32, p[2] as f32];
            if pf == [0.0; 3] {
                pf[0] = f32::EPSILON;
            }
            let mut feats = Vec::with_capacity(cfg.num_features);
            let intensity = (lay.gain * base + intensity_noise.sample(&mut rng)).clamp(0.0, 1.5);
            feats.push(intensity as f32);
            for k in 1..cfg.num_features {
                let mean = lay.gain * signature(class, k, cfg.signature_spread);
                feats.push((mean + intensity_noise.sample(&mut rng)).clamp(0.0, 1.5) as f32);
            }
            points.push((pf, feats, class as u16));
        }
    }
    points.shuffle(&mut rng);

    let mut positions = Vec::with_capacity(points.len());
    let mut features = Vec::with_capacity(points.len() * cfg.num_features);
    let mut labels = Vec::with_capacity(points.len());
    for (p, f, l) in points {
        positions.push(p);
        features.extend(f);
        labels.push(l);
    }
    PointScan::new(positions, features, cfg.num_features, labels, cfg.num_classes)
}
