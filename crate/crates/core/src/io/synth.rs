//! Seeded synthetic bundles with analytic ground truth.
//!
//! Fibers follow an analytic centerline (line, planar arc or helix), offset
//! inside a tube, optionally fanned, and jittered. Channels are a baseline plus
//! an optional raised-cosine lesion plus noise.
//!
//! Random stream: one `ChaCha8Rng` (rand_chacha 0.3) seeded with
//! `seed_from_u64(seed)`. Uniform draws are `(next_u64 >> 11) * 2^-53`.
//! Normal draws use Box–Muller, one normal per pair of uniforms:
//! `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`. Draw order, per fiber in index order:
//! two uniforms for the tube offset (radius, angle), one uniform for the fan
//! coordinate, then three normals per vertex (x, y, z jitter, only when the
//! jitter std is positive), then one normal per vertex for every channel with
//! positive noise, channels in sorted name order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{FiberBundle, FiberStreamline};
use crate::error::{Error, Result};
use crate::Vec3;

/// Sub-steps per vertex interval when integrating the fan displacement.
const FAN_SUBSTEPS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Centerline {
    Line {
        start: [f64; 3],
        end: [f64; 3],
    },
    /// Arc in the plane `z = center.z`, counter-clockwise for positive sweep.
    Arc {
        center: [f64; 3],
        radius: f64,
        start_deg: f64,
        sweep_deg: f64,
    },
    /// `(r cos t, r sin t, pitch t / 2 pi)` for `t` in `[0, 2 pi turns]`.
    Helix {
        radius: f64,
        pitch: f64,
        turns: f64,
    },
}

/// Centerline point, unit tangent and two unit normals at arc fraction `s`.
struct Frame {
    point: Vec3,
    tangent: Vec3,
    n1: Vec3,
    n2: Vec3,
}

impl Centerline {
    pub fn length(&self) -> f64 {
        match self {
            Centerline::Line { start, end } => (Vec3::from(*end) - Vec3::from(*start)).norm(),
            Centerline::Arc {
                radius, sweep_deg, ..
            } => radius * sweep_deg.to_radians().abs(),
            Centerline::Helix {
                radius,
                pitch,
                turns,
            } => turns * (2.0 * PI * radius).hypot(*pitch),
        }
    }

    pub fn point(&self, s: f64) -> Vec3 {
        self.frame(s).point
    }

    pub fn tangent(&self, s: f64) -> Vec3 {
        self.frame(s).tangent
    }

    fn frame(&self, s: f64) -> Frame {
        match self {
            Centerline::Line { start, end } => {
                let (a, b) = (Vec3::from(*start), Vec3::from(*end));
                let t = (b - a).normalize();
                // least-aligned axis gives a well-conditioned perpendicular
                let axis = if t.x.abs() <= t.y.abs() && t.x.abs() <= t.z.abs() {
                    Vec3::x()
                } else if t.y.abs() <= t.z.abs() {
                    Vec3::y()
                } else {
                    Vec3::z()
                };
                let n1 = (axis - t * t.dot(&axis)).normalize();
                Frame {
                    point: a + (b - a) * s,
                    tangent: t,
                    n1,
                    n2: t.cross(&n1),
                }
            }
            Centerline::Arc {
                center,
                radius,
                start_deg,
                sweep_deg,
            } => {
                let sweep = sweep_deg.to_radians();
                let th = start_deg.to_radians() + sweep * s;
                let radial = Vec3::new(th.cos(), th.sin(), 0.0);
                let t = Vec3::new(-th.sin(), th.cos(), 0.0) * sweep.signum();
                Frame {
                    point: Vec3::from(*center) + radial * *radius,
                    tangent: t,
                    n1: radial,
                    n2: Vec3::z(),
                }
            }
            Centerline::Helix {
                radius,
                pitch,
                turns,
            } => {
                let th = 2.0 * PI * turns * s;
                let c = pitch / (2.0 * PI);
                let t = Vec3::new(-radius * th.sin(), radius * th.cos(), c).normalize();
                let n1 = Vec3::new(-th.cos(), -th.sin(), 0.0);
                Frame {
                    point: Vec3::new(radius * th.cos(), radius * th.sin(), c * th),
                    tangent: t,
                    n1,
                    n2: t.cross(&n1),
                }
            }
        }
    }
}

/// Raised-cosine bump of full width `width` centred at `center` (arc fraction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center: f64,
    pub width: f64,
    pub delta: f64,
}

impl Lesion {
    /// `delta * (1 + cos(2 pi (s - center) / width)) / 2` inside the support.
    pub fn bump(&self, s: f64) -> f64 {
        let x = s - self.center;
        if x.abs() > self.width / 2.0 {
            0.0
        } else {
            self.delta * 0.5 * (1.0 + (2.0 * PI * x / self.width).cos())
        }
    }

    /// Samples of an `m`-point profile inside the full-width-half-maximum band.
    pub fn core_samples(&self, m: usize) -> Vec<usize> {
        (0..m)
            .filter(|&i| (i as f64 / (m - 1) as f64 - self.center).abs() <= self.width / 4.0)
            .collect()
    }

    /// Samples of an `m`-point profile inside the bump's support.
    pub fn support_samples(&self, m: usize) -> Vec<usize> {
        (0..m)
            .filter(|&i| (i as f64 / (m - 1) as f64 - self.center).abs() <= self.width / 2.0)
            .collect()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.width > 0.0 && self.width <= 1.0) || !(0.0..=1.0).contains(&self.center) {
            return Err(Error::InvalidArgument(format!(
                "{what} lesion needs center in [0, 1] and width in (0, 1]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub baseline: f64,
    /// Per-vertex Gaussian noise std.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion: Option<Lesion>,
}

impl ChannelSpec {
    pub fn constant(baseline: f64) -> Self {
        Self {
            baseline,
            noise_std: 0.0,
            lesion: None,
        }
    }

    pub fn clean_value(&self, s: f64) -> f64 {
        self.baseline + self.lesion.map_or(0.0, |l| l.bump(s))
    }
}

fn default_vertices() -> usize {
    100
}

fn default_clean_samples() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub centerline: Centerline,
    pub fiber_count: usize,
    #[serde(default = "default_vertices")]
    pub vertices_per_fiber: usize,
    /// Fiber offsets are uniform in a disk of this radius (mm).
    pub tube_radius: f64,
    /// Each fiber is tilted by `u * fan_angle_deg`, `u` uniform in [-1, 1],
    /// within the plane of the first normal; the fan pivots at mid-tract.
    #[serde(default)]
    pub fan_angle_deg: f64,
    /// Extra, localized fan angle (degrees, in `delta`); pivots at its center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan_lesion: Option<Lesion>,
    /// Per-vertex coordinate jitter std (mm).
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub channels: BTreeMap<String, ChannelSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Samples of the clean analytic profile in the ground-truth record.
    #[serde(default = "default_clean_samples")]
    pub clean_samples: usize,
}

impl SyntheticSpec {
    /// Straight bundle along +x with the given channels and no fan or noise.
    pub fn straight(name: &str, length: f64, fiber_count: usize, tube_radius: f64) -> Self {
        Self {
            name: name.into(),
            centerline: Centerline::Line {
                start: [0.0; 3],
                end: [length, 0.0, 0.0],
            },
            fiber_count,
            vertices_per_fiber: default_vertices(),
            tube_radius,
            fan_angle_deg: 0.0,
            fan_lesion: None,
            noise_std: 0.0,
            channels: BTreeMap::new(),
            seed: 0,
            clean_samples: default_clean_samples(),
        }
    }

    pub fn with_channel(mut self, name: &str, spec: ChannelSpec) -> Self {
        self.channels.insert(name.into(), spec);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fiber_count < 1 {
            return Err(Error::InvalidArgument("fiber_count must be >= 1".into()));
        }
        if !(self.tube_radius > 0.0) {
            return Err(Error::InvalidArgument("tube_radius must be > 0".into()));
        }
        if self.vertices_per_fiber < 2 || self.clean_samples < 2 {
            return Err(Error::InvalidArgument(
                "vertices_per_fiber and clean_samples must be >= 2".into(),
            ));
        }
        if !(self.centerline.length() > 0.0) {
            return Err(Error::InvalidArgument("centerline has zero length".into()));
        }
        if !(self.fan_angle_deg.abs() < 90.0) || self.noise_std < 0.0 {
            return Err(Error::InvalidArgument(
                "fan angle must be below 90 degrees and noise std >= 0".into(),
            ));
        }
        if let Some(l) = &self.fan_lesion {
            l.validate("fan")?;
            if !(self.fan_angle_deg.abs() + l.delta.abs() < 90.0) {
                return Err(Error::InvalidArgument(
                    "total fan angle must stay below 90 degrees".into(),
                ));
            }
        }
        for (name, c) in &self.channels {
            if let Some(l) = &c.lesion {
                l.validate(name)?;
            }
            if c.noise_std < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name}: noise std must be >= 0"
                )));
            }
        }
        Ok(())
    }

    /// Local fan angle (radians) of a fiber with fan coordinate `u` at arc fraction `s`.
    fn fan_angle(&self, u: f64, s: f64) -> f64 {
        let extra = self.fan_lesion.map_or(0.0, |l| l.bump(s));
        u * (self.fan_angle_deg + extra).to_radians()
    }

    fn fan_pivot(&self) -> f64 {
        self.fan_lesion.map_or(0.5, |l| l.center)
    }

    /// Mean of `cos(fan angle)` over `fan` coordinates at arc fraction `s`.
    fn mean_cos(&self, fan: &[f64], s: f64) -> f64 {
        fan.iter().map(|&u| self.fan_angle(u, s).cos()).sum::<f64>() / fan.len() as f64
    }
}

/// Analytic per-sample values the pipeline should recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub name: String,
    pub arc_length: f64,
    pub arc_fraction: Vec<f64>,
    /// Clean fiber-flux density. Exact for line and arc centerlines; tube
    /// offsets of a helix tilt slightly against it.
    pub ffd: Vec<f64>,
    /// Clean channel values (no flux weighting).
    pub scalar: BTreeMap<String, Vec<f64>>,
    /// Clean flux-weighted channel values.
    pub ffdd: BTreeMap<String, Vec<f64>>,
    /// Fan coordinate in [-1, 1] drawn for each fiber.
    pub fan: Vec<f64>,
}

struct Stream(ChaCha8Rng);

impl Stream {
    fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

/// Fan displacement along the first normal, in mm, at each arc fraction of `s`.
fn fan_offsets(spec: &SyntheticSpec, u: f64, s: &[f64], length: f64) -> Vec<f64> {
    if u == 0.0 || (spec.fan_angle_deg == 0.0 && spec.fan_lesion.is_none()) {
        return vec![0.0; s.len()];
    }
    let slope = |x: f64| spec.fan_angle(u, x).tan() * length;
    let integrate = |a: f64, b: f64| -> f64 {
        // composite Simpson
        let n = 2 * FAN_SUBSTEPS;
        let h = (b - a) / n as f64;
        let mut acc = slope(a) + slope(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * slope(a + k as f64 * h);
        }
        acc * h / 3.0
    };
    let pivot = spec.fan_pivot();
    let k = s.partition_point(|&x| x < pivot);
    let mut out = vec![0.0; s.len()];
    let mut acc = 0.0;
    let mut prev = pivot;
    for i in k..s.len() {
        acc += integrate(prev, s[i]);
        out[i] = acc;
        prev = s[i];
    }
    acc = 0.0;
    prev = pivot;
    for i in (0..k).rev() {
        acc -= integrate(s[i], prev);
        out[i] = acc;
        prev = s[i];
    }
    out
}

/// Draws a bundle from `spec` together with its analytic ground truth.
pub fn generate_bundle(spec: &SyntheticSpec) -> Result<(FiberBundle, GroundTruth)> {
    spec.validate()?;
    let mut rng = Stream(ChaCha8Rng::seed_from_u64(spec.seed));
    let n = spec.vertices_per_fiber;
    let length = spec.centerline.length();
    let s: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let frames: Vec<Frame> = s.iter().map(|&x| spec.centerline.frame(x)).collect();
    let clean: BTreeMap<&str, Vec<f64>> = spec
        .channels
        .iter()
        .map(|(name, c)| (name.as_str(), s.iter().map(|&x| c.clean_value(x)).collect()))
        .collect();

    let mut fibers = Vec::with_capacity(spec.fiber_count);
    let mut fan = Vec::with_capacity(spec.fiber_count);
    for _ in 0..spec.fiber_count {
        let r = spec.tube_radius * rng.uniform().sqrt();
        let phi = 2.0 * PI * rng.uniform();
        let (a, b) = (r * phi.cos(), r * phi.sin());
        let u = 2.0 * rng.uniform() - 1.0;
        fan.push(u);
        let lateral = fan_offsets(spec, u, &s, length);
        let mut vertices: Vec<Vec3> = frames
            .iter()
            .zip(&lateral)
            .map(|(f, h)| f.point + f.n1 * (a + h) + f.n2 * b)
            .collect();
        if spec.noise_std > 0.0 {
            for v in vertices.iter_mut() {
                *v += Vec3::new(rng.normal(), rng.normal(), rng.normal()) * spec.noise_std;
            }
        }
        let mut scalars = BTreeMap::new();
        for (name, c) in &spec.channels {
            let mut values = clean[name.as_str()].clone();
            if c.noise_std > 0.0 {
                for v in values.iter_mut() {
                    *v += c.noise_std * rng.normal();
                }
            }
            if name == "FA" {
                values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
            scalars.insert(name.clone(), values);
        }
        fibers.push(FiberStreamline::new(vertices, scalars)?);
    }
    let bundle = FiberBundle::new(spec.name.clone(), fibers)?;

    let m = spec.clean_samples;
    let arc_fraction: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let ffd: Vec<f64> = arc_fraction
        .iter()
        .map(|&x| spec.mean_cos(&fan, x))
        .collect();
    let scalar: BTreeMap<String, Vec<f64>> = spec
        .channels
        .iter()
        .map(|(name, c)| {
            (
                name.clone(),
                arc_fraction.iter().map(|&x| c.clean_value(x)).collect(),
            )
        })
        .collect();
    let ffdd = scalar
        .iter()
        .map(|(name, v)| {
            (
                name.clone(),
                v.iter().zip(&ffd).map(|(a, b)| a * b).collect(),
            )
        })
        .collect();
    Ok((
        bundle,
        GroundTruth {
            name: spec.name.clone(),
            arc_length: length,
            arc_fraction,
            ffd,
            scalar,
            ffdd,
            fan,
        },
    ))
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<SyntheticSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SyntheticSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn ground_truth_json(truth: &GroundTruth) -> Result<String> {
    let mut s = serde_json::to_string_pretty(truth)?;
    s.push('\n');
    Ok(s)
}
