//! Fiber bundle geometry: streamlines, cosine-series mean fibers and
//! equidistant arc-length sampling.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::Vec3;

pub const DEFAULT_DEGREE: usize = 20;
pub const DEFAULT_SAMPLES: usize = 100;

/// Dense evaluation points per output sample used for arc-length inversion.
const ARC_TABLE_OVERSAMPLING: usize = 10;
/// Lower bound on the table size; keeps the trapezoid error well below 1e-6 of the length.
const MIN_ARC_TABLE: usize = 8192;

/// A single tractography streamline with per-vertex scalar channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberStreamline {
    vertices: Vec<Vec3>,
    scalars: BTreeMap<String, Vec<f64>>,
}

impl FiberStreamline {
    pub fn new(vertices: Vec<Vec3>, scalars: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::InvalidStreamline(format!(
                "need at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(i) = vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidStreamline(format!(
                "vertex {i} is not finite"
            )));
        }
        if let Some(i) = vertices.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::InvalidStreamline(format!(
                "vertices {i} and {} coincide",
                i + 1
            )));
        }
        for (name, values) in &scalars {
            if values.len() != vertices.len() {
                return Err(Error::InvalidStreamline(format!(
                    "channel `{name}` has {} values for {} vertices",
                    values.len(),
                    vertices.len()
                )));
            }
            if name == "FA" {
                if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::InvalidStreamline(format!(
                        "FA value {v} outside [0, 1]"
                    )));
                }
            } else if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidStreamline(format!(
                    "channel `{name}` has non-finite values"
                )));
            }
        }
        Ok(Self { vertices, scalars })
    }

    pub fn from_vertices(vertices: Vec<Vec3>) -> Result<Self> {
        Self::new(vertices, BTreeMap::new())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn scalars(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.scalars
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.scalars.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Head-to-tail vector.
    pub fn endpoint_vector(&self) -> Vec3 {
        self.vertices[self.vertices.len() - 1] - self.vertices[0]
    }

    pub fn reversed(&self) -> Self {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        let scalars = self
            .scalars
            .iter()
            .map(|(k, v)| {
                let mut v = v.clone();
                v.reverse();
                (k.clone(), v)
            })
            .collect();
        Self { vertices, scalars }
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            scalars: self.scalars.clone(),
        }
    }

    /// Normalized cumulative chord-length parameters in [0, 1].
    pub fn chord_parameters(&self) -> Result<Vec<f64>> {
        let mut params = Vec::with_capacity(self.vertices.len());
        let mut acc = 0.0;
        params.push(0.0);
        for w in self.vertices.windows(2) {
            acc += (w[1] - w[0]).norm();
            params.push(acc);
        }
        if acc <= 0.0 || !acc.is_finite() {
            return Err(Error::DegenerateFiber);
        }
        for p in params.iter_mut() {
            *p /= acc;
        }
        let last = params.len() - 1;
        params[last] = 1.0;
        Ok(params)
    }
}

/// A named set of streamlines sharing the same scalar channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberBundle {
    name: String,
    fibers: Vec<FiberStreamline>,
}

impl FiberBundle {
    pub fn new(name: impl Into<String>, fibers: Vec<FiberStreamline>) -> Result<Self> {
        let Some(first) = fibers.first() else {
            return Err(Error::InvalidBundle("bundle has no fibers".into()));
        };
        let names: Vec<&String> = first.scalars.keys().collect();
        for (i, f) in fibers.iter().enumerate().skip(1) {
            if !f.scalars.keys().eq(names.iter().copied()) {
                return Err(Error::InvalidBundle(format!(
                    "fiber {i} channels {:?} differ from fiber 0 channels {:?}",
                    f.scalars.keys().collect::<Vec<_>>(),
                    names
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            fibers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fibers(&self) -> &[FiberStreamline] {
        &self.fibers
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.fibers[0].scalars.keys().map(String::as_str).collect()
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.fibers[0].scalars.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self {
            name: self.name.clone(),
            fibers: self.fibers.iter().map(|f| f.translated(offset)).collect(),
        }
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            name: self.name.clone(),
            fibers: self
                .fibers
                .iter()
                .map(|fib| FiberStreamline {
                    vertices: fib.vertices.iter().map(&f).collect(),
                    scalars: fib.scalars.clone(),
                })
                .collect(),
        }
    }

    /// Applies `f` to every value of one scalar channel.
    pub fn map_channel(&self, channel: &str, f: impl Fn(f64) -> f64) -> Result<Self> {
        if !self.has_channel(channel) {
            return Err(Error::UnknownChannel(channel.to_string()));
        }
        let fibers = self
            .fibers
            .iter()
            .map(|fib| {
                let mut scalars = fib.scalars.clone();
                if let Some(v) = scalars.get_mut(channel) {
                    v.iter_mut().for_each(|x| *x = f(*x));
                }
                FiberStreamline::new(fib.vertices.clone(), scalars)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: self.name.clone(),
            fibers,
        })
    }
}

/// Flips fibers so every head-to-tail vector agrees with the first fiber's.
///
/// A fiber whose endpoint vector is exactly orthogonal to the reference keeps
/// its original order.
pub fn reorient_bundle(bundle: &FiberBundle) -> FiberBundle {
    let reference = bundle.fibers[0].endpoint_vector();
    let fibers = bundle
        .fibers
        .iter()
        .map(|f| {
            if f.endpoint_vector().dot(&reference) < 0.0 {
                f.reversed()
            } else {
                f.clone()
            }
        })
        .collect();
    FiberBundle {
        name: bundle.name.clone(),
        fibers,
    }
}

/// Per-axis coefficients of `sum_k c_k cos(k pi u)`, u in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSeries {
    coefficients: [Vec<f64>; 3],
}

impl CosineSeries {
    pub fn new(coefficients: [Vec<f64>; 3]) -> Result<Self> {
        let n = coefficients[0].len();
        if n < 2 || coefficients.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument(
                "cosine series needs K+1 >= 2 coefficients on each of 3 axes".into(),
            ));
        }
        Ok(Self { coefficients })
    }

    pub fn degree(&self) -> usize {
        self.coefficients[0].len() - 1
    }

    pub fn coefficients(&self) -> &[Vec<f64>; 3] {
        &self.coefficients
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.coefficients[axis]
    }

    pub fn eval(&self, u: f64) -> Vec3 {
        let mut out = Vec3::zeros();
        for k in 0..=self.degree() {
            let c = (k as f64 * PI * u).cos();
            for axis in 0..3 {
                out[axis] += self.coefficients[axis][k] * c;
            }
        }
        out
    }

    pub fn derivative(&self, u: f64) -> Vec3 {
        let mut out = Vec3::zeros();
        for k in 1..=self.degree() {
            let w = k as f64 * PI;
            let s = -w * (w * u).sin();
            for axis in 0..3 {
                out[axis] += self.coefficients[axis][k] * s;
            }
        }
        out
    }

    pub fn second_derivative(&self, u: f64) -> Vec3 {
        let mut out = Vec3::zeros();
        for k in 1..=self.degree() {
            let w = k as f64 * PI;
            let c = -w * w * (w * u).cos();
            for axis in 0..3 {
                out[axis] += self.coefficients[axis][k] * c;
            }
        }
        out
    }

    /// Unit tangent at `u`. Every cosine series has zero velocity at u = 0 and
    /// u = 1, so stationary points fall back to the limiting direction given by
    /// the second derivative.
    pub fn unit_tangent(&self, u: f64) -> Option<Vec3> {
        let d = self.derivative(u);
        let scale = self
            .coefficients
            .iter()
            .flat_map(|c| c.iter().skip(1))
            .fold(0.0_f64, |m, c| m.max(c.abs()))
            .max(f64::MIN_POSITIVE);
        if d.norm() > 1e-9 * scale {
            return Some(d.normalize());
        }
        let dd = self.second_derivative(u);
        if dd.norm() > 1e-12 * scale {
            let sign = if u < 0.5 { 1.0 } else { -1.0 };
            return Some(sign * dd.normalize());
        }
        let h = 1e-6;
        let (a, b) = if u < 0.5 { (u, u + h) } else { (u - h, u) };
        let chord = self.eval(b) - self.eval(a);
        (chord.norm() > 0.0).then(|| chord.normalize())
    }

    fn mean_of(series: &[CosineSeries]) -> Self {
        let n = series[0].degree() + 1;
        let count = series.len() as f64;
        let mut coefficients = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for s in series {
            for (acc, c) in coefficients.iter_mut().zip(&s.coefficients) {
                acc.iter_mut().zip(c).for_each(|(a, c)| *a += c);
            }
        }
        for axis in coefficients.iter_mut() {
            axis.iter_mut().for_each(|c| *c /= count);
        }
        Self { coefficients }
    }
}

/// Least-squares cosine-series fit of a streamline against its normalized
/// cumulative chord-length parameterization.
pub fn fit_cosine_series(fiber: &FiberStreamline, degree: usize) -> Result<CosineSeries> {
    let params = fiber.chord_parameters()?;
    fit_cosine_series_at(&fiber.vertices, &params, degree)
}

/// Least-squares cosine-series fit of `points` at explicit parameters in [0, 1].
pub fn fit_cosine_series_at(
    points: &[Vec3],
    params: &[f64],
    degree: usize,
) -> Result<CosineSeries> {
    if degree < 1 {
        return Err(Error::InvalidArgument("series degree must be >= 1".into()));
    }
    if points.len() != params.len() {
        return Err(Error::LengthMismatch(points.len(), params.len()));
    }
    let n = params.len();
    let terms = degree + 1;
    if n < terms {
        return Err(Error::RankDeficient(format!(
            "{n} vertices cannot determine {terms} coefficients"
        )));
    }

    let basis = DMatrix::from_fn(n, terms, |i, k| (k as f64 * PI * params[i]).cos());
    let chol = basis
        .tr_mul(&basis)
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("normal equations are not positive definite".into()))?;
    let (lo, hi) = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| {
            (lo.min(d.abs()), hi.max(d.abs()))
        });
    if !(lo > 0.0) || lo / hi < 1e-7 {
        return Err(Error::RankDeficient(format!(
            "normal equations are numerically singular (pivot ratio {:.3e})",
            lo / hi
        )));
    }

    let mut coefficients: [Vec<f64>; 3] = Default::default();
    for (axis, out) in coefficients.iter_mut().enumerate() {
        let rhs = DVector::from_iterator(n, points.iter().map(|v| v[axis]));
        *out = chol.solve(&basis.tr_mul(&rhs)).iter().copied().collect();
    }
    Ok(CosineSeries { coefficients })
}

/// Representative curve of a bundle, sampled at equal arc-length spacing.
#[derive(Debug, Clone)]
pub struct MeanFiber {
    series: CosineSeries,
    samples: Vec<Vec3>,
    tangents: Vec<Vec3>,
    arc_length: f64,
    // monotone table (series parameter, cumulative arc length)
    table_params: Vec<f64>,
    table_arc: Vec<f64>,
}

impl MeanFiber {
    /// Reparameterizes `series` by arc length and takes `samples` equidistant points.
    pub fn from_series(series: CosineSeries, samples: usize) -> Result<Self> {
        if samples < 2 {
            return Err(Error::InvalidArgument("need at least 2 samples".into()));
        }
        let dense = (ARC_TABLE_OVERSAMPLING * samples).max(MIN_ARC_TABLE);
        let table_params: Vec<f64> = (0..dense).map(|j| j as f64 / (dense - 1) as f64).collect();
        let speeds: Vec<f64> = table_params
            .iter()
            .map(|&u| series.derivative(u).norm())
            .collect();
        let mut table_arc = Vec::with_capacity(dense);
        table_arc.push(0.0);
        for j in 1..dense {
            let h = table_params[j] - table_params[j - 1];
            let prev = table_arc[j - 1];
            table_arc.push(prev + 0.5 * h * (speeds[j] + speeds[j - 1]));
        }
        let arc_length = table_arc[dense - 1];
        if !(arc_length > 0.0) {
            return Err(Error::DegenerateFiber);
        }

        let mut mean = Self {
            series,
            samples: Vec::with_capacity(samples),
            tangents: Vec::with_capacity(samples),
            arc_length,
            table_params,
            table_arc,
        };
        for m in 0..samples {
            let s = m as f64 / (samples - 1) as f64;
            let (p, t) = mean.sample_at(s)?;
            mean.samples.push(p);
            mean.tangents.push(t);
        }
        Ok(mean)
    }

    pub fn series(&self) -> &CosineSeries {
        &self.series
    }

    pub fn samples(&self) -> &[Vec3] {
        &self.samples
    }

    pub fn tangents(&self) -> &[Vec3] {
        &self.tangents
    }

    pub fn arc_length(&self) -> f64 {
        self.arc_length
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Series parameter at arc-length fraction `s` (monotone linear inverse lookup).
    pub fn parameter_at(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfRange(s));
        }
        let target = s * self.arc_length;
        let j = self.table_arc.partition_point(|&a| a <= target);
        if j == 0 {
            return Ok(0.0);
        }
        if j >= self.table_arc.len() {
            return Ok(1.0);
        }
        let (a0, a1) = (self.table_arc[j - 1], self.table_arc[j]);
        let (u0, u1) = (self.table_params[j - 1], self.table_params[j]);
        let w = if a1 > a0 {
            (target - a0) / (a1 - a0)
        } else {
            0.0
        };
        Ok(u0 + w * (u1 - u0))
    }

    /// Point and unit tangent at arc-length fraction `s`.
    pub fn sample_at(&self, s: f64) -> Result<(Vec3, Vec3)> {
        let u = self.parameter_at(s)?;
        let tangent = self.series.unit_tangent(u).ok_or(Error::DegenerateFiber)?;
        Ok((self.series.eval(u), tangent))
    }
}

/// Mean fiber of a consistently oriented bundle: average of per-fiber
/// cosine-series coefficients, resampled at `samples` equidistant points.
pub fn mean_fiber(bundle: &FiberBundle, degree: usize, samples: usize) -> Result<MeanFiber> {
    let fits: Vec<CosineSeries> = bundle
        .fibers
        .par_iter()
        .enumerate()
        .map(|(index, f)| {
            fit_cosine_series(f, degree).map_err(|e| Error::Fiber {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    MeanFiber::from_series(CosineSeries::mean_of(&fits), samples)
}
