//! Fiber-flux density (FFD) and fiber-flux diffusion density (FFDD) on planar
//! cross-sections of a bundle, and tract profiles along its mean fiber.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bundle::{FiberBundle, MeanFiber};
use crate::error::{Error, Result};
use crate::Vec3;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50;
/// Auto radius = this factor times the RMS distance of the initial crossings.
pub const AUTO_RADIUS_FACTOR: f64 = 3.0;

/// What a profile entry measures.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Measure {
    /// Geometry-only fiber-flux density.
    Ffd,
    /// Flux weighted by a diffusivity channel.
    Ffdd(String),
    /// Plain mean of a channel over the cross-section, no flux weighting.
    Scalar(String),
}

impl Measure {
    pub fn channel(&self) -> Option<&str> {
        match self {
            Measure::Ffd => None,
            Measure::Ffdd(c) | Measure::Scalar(c) => Some(c),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Ffd => f.write_str("FFD"),
            Measure::Ffdd(c) => f.write_str(c),
            Measure::Scalar(c) => write!(f, "mean:{c}"),
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::InvalidArgument("empty channel name".into()));
        }
        Ok(match s {
            "FFD" => Measure::Ffd,
            _ => match s.strip_prefix("mean:") {
                Some(c) if !c.is_empty() => Measure::Scalar(c.to_string()),
                Some(_) => return Err(Error::InvalidArgument(format!("bad channel `{s}`"))),
                None => Measure::Ffdd(s.to_string()),
            },
        })
    }
}

/// A plane through `point` with unit `normal`, truncated to a disk of `radius`
/// (`f64::INFINITY` for an unbounded plane).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuttingPlane {
    point: Vec3,
    normal: Vec3,
    radius: f64,
}

impl CuttingPlane {
    pub fn new(point: Vec3, normal: Vec3, radius: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument(
                "plane normal must be non-zero".into(),
            ));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "plane radius {radius} must be > 0"
            )));
        }
        Ok(Self {
            point,
            normal: normal / n,
            radius,
        })
    }

    pub fn unbounded(point: Vec3, normal: Vec3) -> Result<Self> {
        Self::new(point, normal, f64::INFINITY)
    }

    pub fn point(&self) -> Vec3 {
        self.point
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn with_normal(&self, normal: Vec3) -> Self {
        Self { normal, ..*self }
    }
}

/// Crossings of a bundle with a plane, at most one per fiber.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaneIntersections {
    pub points: Vec<Vec3>,
    pub tangents: Vec<Vec3>,
    pub scalars: BTreeMap<String, Vec<f64>>,
    pub fibers: Vec<usize>,
}

impl PlaneIntersections {
    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn tangent_sum(&self) -> Vec3 {
        self.tangents.iter().sum()
    }
}

/// Finds where each fiber crosses `plane`.
///
/// A segment crosses when its endpoints fall on different sides under the
/// half-open rule `d <= 0` vs `d > 0`, so a vertex lying exactly on the plane
/// is counted once. Tangents are the normalized segment direction; scalars are
/// interpolated linearly. Only crossings within the plane radius are kept and,
/// per fiber, the one nearest to the plane point wins.
pub fn plane_intersections(bundle: &FiberBundle, plane: &CuttingPlane) -> PlaneIntersections {
    let channels = bundle.channel_names();
    let mut out = PlaneIntersections {
        scalars: channels
            .iter()
            .map(|c| (c.to_string(), Vec::new()))
            .collect(),
        ..Default::default()
    };
    for (index, fiber) in bundle.fibers().iter().enumerate() {
        let verts = fiber.vertices();
        let mut best: Option<(f64, usize, f64, Vec3)> = None;
        let mut d_prev = (verts[0] - plane.point).dot(&plane.normal);
        for k in 1..verts.len() {
            let d = (verts[k] - plane.point).dot(&plane.normal);
            if (d_prev <= 0.0) != (d <= 0.0) {
                let t = d_prev / (d_prev - d);
                let x = verts[k - 1] + (verts[k] - verts[k - 1]) * t;
                let dist = (x - plane.point).norm();
                if dist <= plane.radius && best.is_none_or(|b| dist < b.0) {
                    best = Some((dist, k - 1, t, x));
                }
            }
            d_prev = d;
        }
        if let Some((_, seg, t, x)) = best {
            out.points.push(x);
            out.tangents.push((verts[seg + 1] - verts[seg]).normalize());
            out.fibers.push(index);
            for c in &channels {
                let values = fiber.channel(c).expect("bundle channels are uniform");
                let v = values[seg] + t * (values[seg + 1] - values[seg]);
                out.scalars.get_mut(*c).unwrap().push(v);
            }
        }
    }
    out
}

/// A descriptor value: signed magnitude along a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfddVector {
    pub magnitude: f64,
    pub direction: Vec3,
}

impl FfddVector {
    pub fn vector(&self) -> Vec3 {
        self.direction * self.magnitude
    }

    /// Linear interpolation of magnitude and direction, direction renormalized.
    pub fn lerp(&self, other: &Self, w: f64) -> Self {
        let magnitude = self.magnitude + w * (other.magnitude - self.magnitude);
        let d = self.direction + (other.direction - self.direction) * w;
        let direction = if d.norm() > 1e-12 {
            d.normalize()
        } else if w < 0.5 {
            self.direction
        } else {
            other.direction
        };
        Self {
            magnitude,
            direction,
        }
    }
}

fn nonempty<'a>(
    xs: &'a PlaneIntersections,
    plane: &CuttingPlane,
) -> Result<&'a PlaneIntersections> {
    if xs.is_empty() {
        Err(Error::EmptyCrossSection {
            point: plane.point,
            sample: None,
        })
    } else {
        Ok(xs)
    }
}

/// Mean of `tangent . normal` over the crossings.
pub fn ffd_at(bundle: &FiberBundle, plane: &CuttingPlane) -> Result<FfddVector> {
    let xs = plane_intersections(bundle, plane);
    ffd_from(nonempty(&xs, plane)?, plane)
}

/// Mean of `scalar * (tangent . normal)` over the crossings.
pub fn ffdd_at(bundle: &FiberBundle, plane: &CuttingPlane, channel: &str) -> Result<FfddVector> {
    if !bundle.has_channel(channel) {
        return Err(Error::UnknownChannel(channel.to_string()));
    }
    let xs = plane_intersections(bundle, plane);
    ffdd_from(nonempty(&xs, plane)?, plane, channel)
}

/// Plain mean of a channel over the crossings, oriented along the plane normal.
pub fn scalar_mean_at(
    bundle: &FiberBundle,
    plane: &CuttingPlane,
    channel: &str,
) -> Result<FfddVector> {
    if !bundle.has_channel(channel) {
        return Err(Error::UnknownChannel(channel.to_string()));
    }
    let xs = plane_intersections(bundle, plane);
    scalar_from(nonempty(&xs, plane)?, plane, channel)
}

pub fn evaluate(
    bundle: &FiberBundle,
    plane: &CuttingPlane,
    measure: &Measure,
) -> Result<FfddVector> {
    match measure {
        Measure::Ffd => ffd_at(bundle, plane),
        Measure::Ffdd(c) => ffdd_at(bundle, plane, c),
        Measure::Scalar(c) => scalar_mean_at(bundle, plane, c),
    }
}

fn ffd_from(xs: &PlaneIntersections, plane: &CuttingPlane) -> Result<FfddVector> {
    let n = plane.normal;
    let sum: f64 = xs.tangents.iter().map(|t| t.dot(&n)).sum();
    Ok(FfddVector {
        magnitude: sum / xs.count() as f64,
        direction: n,
    })
}

fn ffdd_from(xs: &PlaneIntersections, plane: &CuttingPlane, channel: &str) -> Result<FfddVector> {
    let values = xs
        .scalars
        .get(channel)
        .ok_or_else(|| Error::UnknownChannel(channel.to_string()))?;
    let n = plane.normal;
    let sum: f64 = xs
        .tangents
        .iter()
        .zip(values)
        .map(|(t, s)| s * t.dot(&n))
        .sum();
    Ok(FfddVector {
        magnitude: sum / xs.count() as f64,
        direction: n,
    })
}

fn scalar_from(xs: &PlaneIntersections, plane: &CuttingPlane, channel: &str) -> Result<FfddVector> {
    let values = xs
        .scalars
        .get(channel)
        .ok_or_else(|| Error::UnknownChannel(channel.to_string()))?;
    Ok(FfddVector {
        magnitude: values.iter().sum::<f64>() / values.len() as f64,
        direction: plane.normal,
    })
}

fn evaluate_from(
    xs: &PlaneIntersections,
    plane: &CuttingPlane,
    measure: &Measure,
) -> Result<FfddVector> {
    match measure {
        Measure::Ffd => ffd_from(xs, plane),
        Measure::Ffdd(c) => ffdd_from(xs, plane, c),
        Measure::Scalar(c) => scalar_from(xs, plane, c),
    }
}

/// Truncation radius of the cutting plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusPolicy {
    /// `AUTO_RADIUS_FACTOR` times the RMS distance from the plane point of the
    /// crossings found with an unbounded plane at the initial normal.
    Auto,
    Unbounded,
    Fixed(f64),
}

impl FromStr for RadiusPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(RadiusPolicy::Auto),
            "unbounded" | "inf" => Ok(RadiusPolicy::Unbounded),
            _ => match s.parse::<f64>() {
                Ok(r) if r > 0.0 => Ok(RadiusPolicy::Fixed(r)),
                _ => Err(Error::InvalidArgument(format!(
                    "radius must be `auto`, `unbounded` or a positive number, got `{s}`"
                ))),
            },
        }
    }
}

impl fmt::Display for RadiusPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadiusPolicy::Auto => f.write_str("auto"),
            RadiusPolicy::Unbounded => f.write_str("unbounded"),
            RadiusPolicy::Fixed(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneSearch {
    pub radius: RadiusPolicy,
    /// Convergence threshold on the angle between successive normals (rad).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PlaneSearch {
    fn default() -> Self {
        Self {
            radius: RadiusPolicy::Auto,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub plane: CuttingPlane,
    pub intersections: PlaneIntersections,
    /// Number of iterations in which the normal moved by at least `tol`.
    pub iterations: usize,
    pub converged: bool,
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 form stays accurate for tiny angles
    a.cross(b).norm().atan2(a.dot(b))
}

/// Resolves a radius policy at `point` for an initial `normal`.
pub fn resolve_radius(
    bundle: &FiberBundle,
    point: Vec3,
    normal: Vec3,
    policy: RadiusPolicy,
) -> Result<f64> {
    match policy {
        RadiusPolicy::Unbounded => Ok(f64::INFINITY),
        RadiusPolicy::Fixed(r) if r > 0.0 => Ok(r),
        RadiusPolicy::Fixed(r) => Err(Error::InvalidArgument(format!("radius {r} must be > 0"))),
        RadiusPolicy::Auto => {
            let xs = plane_intersections(bundle, &CuttingPlane::unbounded(point, normal)?);
            if xs.is_empty() {
                return Err(Error::EmptyCrossSection {
                    point,
                    sample: None,
                });
            }
            let ms = xs
                .points
                .iter()
                .map(|x| (x - point).norm_squared())
                .sum::<f64>()
                / xs.count() as f64;
            let r = AUTO_RADIUS_FACTOR * ms.sqrt();
            // every crossing sits exactly on `point`
            Ok(if r > 0.0 { r } else { f64::INFINITY })
        }
    }
}

/// Orients the cutting plane at `point` to maximize fiber flux.
///
/// Fixed-point iteration: intersect, replace the normal by the normalized mean
/// of the crossing tangents (sign kept towards `init`), repeat until successive
/// normals differ by less than `tol` radians or `max_iter` is reached. For a
/// fixed crossing set the mean tangent direction is the flux maximizer, so the
/// returned normal is a stationary point.
pub fn optimize_plane_normal(
    bundle: &FiberBundle,
    point: Vec3,
    init: Vec3,
    search: &PlaneSearch,
) -> Result<PlaneFit> {
    if !(search.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be > 0".into()));
    }
    let init = init
        .try_normalize(0.0)
        .ok_or_else(|| Error::InvalidArgument("initial normal must be non-zero".into()))?;
    let radius = resolve_radius(bundle, point, init, search.radius)?;
    let mut plane = CuttingPlane::new(point, init, radius)?;
    let mut iterations = 0;
    loop {
        let xs = plane_intersections(bundle, &plane);
        let sum = xs.tangent_sum();
        if xs.is_empty() || sum.norm() == 0.0 {
            return Err(Error::EmptyCrossSection {
                point,
                sample: None,
            });
        }
        let mut next = sum.normalize();
        if next.dot(&init) < 0.0 {
            next = -next;
        }
        if angle_between(&plane.normal, &next) < search.tol {
            return Ok(PlaneFit {
                plane,
                intersections: xs,
                iterations,
                converged: true,
            });
        }
        if iterations == search.max_iter {
            return Ok(PlaneFit {
                plane,
                intersections: xs,
                iterations,
                converged: false,
            });
        }
        plane = plane.with_normal(next);
        iterations += 1;
    }
}

/// What to do when a sample point has no crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyPolicy {
    Fail,
    /// Fill from the neighbouring valid entries (linear in sample index).
    #[default]
    Interpolate,
}

impl FromStr for EmptyPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fail" => Ok(EmptyPolicy::Fail),
            "interpolate" => Ok(EmptyPolicy::Interpolate),
            _ => Err(Error::InvalidArgument(format!(
                "empty policy must be `fail` or `interpolate`, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for EmptyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmptyPolicy::Fail => "fail",
            EmptyPolicy::Interpolate => "interpolate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProfileConfig {
    pub search: PlaneSearch,
    pub empty: EmptyPolicy,
}

/// Ordered descriptor values along a bundle's mean fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct TractProfile {
    entries: Vec<FfddVector>,
    arc_positions: Vec<f64>,
    bundle_name: String,
    measure: Measure,
    arc_length: f64,
}

impl TractProfile {
    pub fn new(
        entries: Vec<FfddVector>,
        arc_positions: Vec<f64>,
        bundle_name: impl Into<String>,
        measure: Measure,
        arc_length: f64,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("profile has no entries".into()));
        }
        if entries.len() != arc_positions.len() {
            return Err(Error::LengthMismatch(entries.len(), arc_positions.len()));
        }
        if arc_positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "arc positions must be strictly increasing".into(),
            ));
        }
        if let Some(e) = entries
            .iter()
            .find(|e| !e.magnitude.is_finite() || (e.direction.norm() - 1.0).abs() > 1e-9)
        {
            return Err(Error::InvalidArgument(format!(
                "profile entry must have finite magnitude and unit direction: {e:?}"
            )));
        }
        Ok(Self {
            entries,
            arc_positions,
            bundle_name: bundle_name.into(),
            measure,
            arc_length,
        })
    }

    /// Profile with arc positions `m / (M - 1)`.
    pub fn uniform(
        entries: Vec<FfddVector>,
        bundle_name: impl Into<String>,
        measure: Measure,
        arc_length: f64,
    ) -> Result<Self> {
        let arc = uniform_positions(entries.len());
        Self::new(entries, arc, bundle_name, measure, arc_length)
    }

    pub fn entries(&self) -> &[FfddVector] {
        &self.entries
    }

    pub fn arc_positions(&self) -> &[f64] {
        &self.arc_positions
    }

    pub fn bundle_name(&self) -> &str {
        &self.bundle_name
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn arc_length(&self) -> f64 {
        self.arc_length
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.magnitude).collect()
    }

    pub fn vectors(&self) -> Vec<Vec3> {
        self.entries.iter().map(FfddVector::vector).collect()
    }

    /// Entry at a fractional sample index, clamped to `[0, M-1]`.
    pub fn interpolate_at(&self, index: f64) -> FfddVector {
        let last = self.entries.len() - 1;
        let x = index.clamp(0.0, last as f64);
        let i = (x.floor() as usize).min(last);
        if i == last {
            return self.entries[last];
        }
        self.entries[i].lerp(&self.entries[i + 1], x - i as f64)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.bundle_name = name.into();
        self
    }
}

pub(crate) fn uniform_positions(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![0.0];
    }
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileDiagnostics {
    /// Sample indices filled by interpolation after an empty cross-section.
    pub filled: Vec<usize>,
    /// Sample indices where the normal search hit `max_iter`.
    pub unconverged: Vec<usize>,
}

/// Descriptor values at every sample point of `mean`, each on a plane whose
/// normal is optimized starting from the mean-fiber tangent.
pub fn tract_profile(
    bundle: &FiberBundle,
    mean: &MeanFiber,
    measure: &Measure,
    config: &ProfileConfig,
) -> Result<(TractProfile, ProfileDiagnostics)> {
    if let Some(c) = measure.channel() {
        if !bundle.has_channel(c) {
            return Err(Error::UnknownChannel(c.to_string()));
        }
    }
    let results: Vec<Result<Option<(FfddVector, bool)>>> = mean
        .samples()
        .par_iter()
        .zip(mean.tangents().par_iter())
        .enumerate()
        .map(
            |(m, (p, t))| match optimize_plane_normal(bundle, *p, *t, &config.search) {
                Ok(fit) => {
                    let v = evaluate_from(&fit.intersections, &fit.plane, measure)?;
                    Ok(Some((v, fit.converged)))
                }
                Err(Error::EmptyCrossSection { point, .. }) => match config.empty {
                    EmptyPolicy::Fail => Err(Error::EmptyCrossSection {
                        point,
                        sample: Some(m),
                    }),
                    EmptyPolicy::Interpolate => Ok(None),
                },
                Err(e) => Err(e),
            },
        )
        .collect();

    let mut slots = Vec::with_capacity(results.len());
    let mut diag = ProfileDiagnostics::default();
    for (m, r) in results.into_iter().enumerate() {
        let slot = r?;
        if let Some((_, false)) = slot {
            diag.unconverged.push(m);
        }
        if slot.is_none() {
            diag.filled.push(m);
        }
        slots.push(slot.map(|s| s.0));
    }
    if !diag.filled.is_empty() {
        log::warn!(
            "{}: {} empty cross-sections filled by interpolation: {:?}",
            bundle.name(),
            diag.filled.len(),
            diag.filled
        );
    }
    if !diag.unconverged.is_empty() {
        log::warn!(
            "{}: plane normal search did not converge at samples {:?}",
            bundle.name(),
            diag.unconverged
        );
    }
    let entries = fill_gaps(&slots).ok_or(Error::EmptyCrossSection {
        point: mean.samples()[0],
        sample: Some(0),
    })?;
    let profile =
        TractProfile::uniform(entries, bundle.name(), measure.clone(), mean.arc_length())?;
    Ok((profile, diag))
}

fn fill_gaps(slots: &[Option<FfddVector>]) -> Option<Vec<FfddVector>> {
    let valid: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].is_some()).collect();
    if valid.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(slots.len());
    for (i, s) in slots.iter().enumerate() {
        if let Some(v) = s {
            out.push(*v);
            continue;
        }
        let right = valid.partition_point(|&v| v < i);
        let filled = match (right.checked_sub(1).map(|l| valid[l]), valid.get(right)) {
            (Some(l), Some(&r)) => {
                let w = (i - l) as f64 / (r - l) as f64;
                slots[l].unwrap().lerp(&slots[r].unwrap(), w)
            }
            (Some(l), None) => slots[l].unwrap(),
            (None, Some(&r)) => slots[r].unwrap(),
            (None, None) => unreachable!(),
        };
        out.push(filled);
    }
    Some(out)
}
