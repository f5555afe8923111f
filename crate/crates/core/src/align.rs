//! Symmetric alignment of two tract profiles.
//!
//! The inverse-speed map `F(i, j) = |J_a(i) - J_b(j)| + lambda` is solved for
//! the arrival time `T` of a front started at `(0, 0)` with a first-order
//! fast-marching scheme; the alignment path is recovered by normalized
//! gradient descent on `T` from the far corner with step `epsilon`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use crate::descriptor::TractProfile;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA_FRACTION: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Floor applied when a relative lambda evaluates to zero.
const MIN_LAMBDA: f64 = 1e-12;
const STALL_LIMIT: usize = 10;

/// Regularization of the dissimilarity grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// Fraction of the mean off-diagonal (i != j) dissimilarity.
    Relative(f64),
    Absolute(f64),
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Relative(DEFAULT_LAMBDA_FRACTION)
    }
}

impl FromStr for Lambda {
    type Err = Error;

    /// `0.3` is absolute; `rel:0.1` is relative.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad lambda `{s}`"));
        if let Some(r) = s.strip_prefix("rel:") {
            let v: f64 = r.parse().map_err(|_| bad())?;
            if v > 0.0 {
                return Ok(Lambda::Relative(v));
            }
        } else if let Ok(v) = s.parse::<f64>() {
            if v > 0.0 {
                return Ok(Lambda::Absolute(v));
            }
        }
        Err(bad())
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Relative(v) => write!(f, "rel:{v}"),
            Lambda::Absolute(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub lambda: Lambda,
    pub epsilon: f64,
    /// Samples of the resampled path; `None` uses the longer profile's length.
    pub samples: Option<usize>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::default(),
            epsilon: DEFAULT_EPSILON,
            samples: None,
        }
    }
}

/// Row-major `rows x cols` grid indexed by `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("grid must be non-empty".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch(values.len(), rows * cols));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self::new(rows, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i)).expect("same size")
    }

    /// Bilinear interpolation at a continuous position, clamped to the grid.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let (i0, i1, wx) = cell(x, self.rows);
        let (j0, j1, wy) = cell(y, self.cols);
        let a = self.get(i0, j0) * (1.0 - wy) + self.get(i0, j1) * wy;
        let b = self.get(i1, j0) * (1.0 - wy) + self.get(i1, j1) * wy;
        a * (1.0 - wx) + b * wx
    }
}

fn cell(x: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let x = x.clamp(0.0, (n - 1) as f64);
    let i0 = (x.floor() as usize).min(n - 2);
    (i0, i0 + 1, x - i0 as f64)
}

/// Inverse-speed map between two profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityGrid {
    grid: Grid,
    lambda: f64,
    lengths: (f64, f64),
}

impl DissimilarityGrid {
    /// Wraps an explicit inverse-speed grid; every value must be >= lambda > 0.
    pub fn new(grid: Grid, lambda: f64, lengths: (f64, f64)) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda {lambda} must be > 0"
            )));
        }
        if grid
            .values
            .iter()
            .any(|v| !(*v >= lambda) || !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "dissimilarity values must be finite and >= lambda".into(),
            ));
        }
        Ok(Self {
            grid,
            lambda,
            lengths,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Physical arc lengths (mm) of the two axes; metadata only.
    pub fn lengths(&self) -> (f64, f64) {
        self.lengths
    }
}

/// `F(i, j) = |J_a(i) - J_b(j)| + lambda` over all sample pairs.
pub fn dissimilarity_grid(
    a: &TractProfile,
    b: &TractProfile,
    lambda: Lambda,
) -> Result<DissimilarityGrid> {
    if a.measure() != b.measure() {
        return Err(Error::ChannelMismatch(
            a.measure().to_string(),
            b.measure().to_string(),
        ));
    }
    let va = a.vectors();
    let vb = b.vectors();
    let raw = Grid::from_fn(va.len(), vb.len(), |i, j| (va[i] - vb[j]).norm())?;
    let lambda = match lambda {
        Lambda::Absolute(l) => l,
        Lambda::Relative(frac) => {
            let (sum, count) = (0..raw.rows)
                .flat_map(|i| (0..raw.cols).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .fold((0.0, 0usize), |(s, c), (i, j)| (s + raw.get(i, j), c + 1));
            let mean = if count > 0 { sum / count as f64 } else { 0.0 };
            (frac * mean).max(MIN_LAMBDA)
        }
    };
    let grid = Grid {
        values: raw.values.iter().map(|d| d + lambda).collect(),
        ..raw
    };
    DissimilarityGrid::new(grid, lambda, (a.arc_length(), b.arc_length()))
}

/// Arrival times of a front started at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    times: Grid,
    order: Vec<usize>,
}

impl DistanceMap {
    pub fn times(&self) -> &Grid {
        &self.times
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.times.get(i, j)
    }

    /// Flat indices `i * cols + j` in the order nodes were frozen.
    pub fn acceptance_order(&self) -> &[usize] {
        &self.order
    }
}

#[derive(PartialEq)]
struct Trial(f64, usize);

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time, ties broken by index for determinism
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// First-order upwind fast marching on a unit-spaced grid, source `(0, 0)`.
///
/// A trial node with frozen neighbours `a` (best along i) and `b` (best along
/// j) and inverse speed `f` takes `(a + b + sqrt(2f^2 - (a - b)^2)) / 2` when
/// `|a - b| < f`, otherwise `min(a, b) + f`.
pub fn fmm_solve(grid: &DissimilarityGrid) -> DistanceMap {
    let g = &grid.grid;
    let (rows, cols) = (g.rows, g.cols);
    let n = rows * cols;
    let mut t = vec![f64::INFINITY; n];
    let mut frozen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();
    t[0] = 0.0;
    heap.push(Trial(0.0, 0));

    while let Some(Trial(time, k)) = heap.pop() {
        if frozen[k] || time > t[k] {
            continue;
        }
        frozen[k] = true;
        order.push(k);
        let (i, j) = (k / cols, k % cols);
        let neighbours = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ];
        for (ni, nj) in neighbours {
            if ni >= rows || nj >= cols {
                continue;
            }
            let nk = ni * cols + nj;
            if frozen[nk] {
                continue;
            }
            let best = |ii: usize, jj: usize| -> f64 {
                if ii < rows && jj < cols && frozen[ii * cols + jj] {
                    t[ii * cols + jj]
                } else {
                    f64::INFINITY
                }
            };
            let a = best(ni.wrapping_sub(1), nj).min(best(ni + 1, nj));
            let b = best(ni, nj.wrapping_sub(1)).min(best(ni, nj + 1));
            let f = g.values[nk];
            let candidate = if (a - b).abs() < f {
                (a + b + (2.0 * f * f - (a - b) * (a - b)).sqrt()) / 2.0
            } else {
                a.min(b) + f
            };
            if candidate < t[nk] {
                t[nk] = candidate;
                heap.push(Trial(candidate, nk));
            }
        }
    }
    DistanceMap {
        times: Grid {
            rows,
            cols,
            values: t,
        },
        order,
    }
}

/// Node gradients: central differences inside, one-sided at the borders.
fn node_gradients(t: &Grid) -> (Grid, Grid) {
    let d = |n: usize, idx: usize, at: &dyn Fn(usize) -> f64| -> f64 {
        if n == 1 {
            0.0
        } else if idx == 0 {
            at(1) - at(0)
        } else if idx == n - 1 {
            at(n - 1) - at(n - 2)
        } else {
            (at(idx + 1) - at(idx - 1)) / 2.0
        }
    };
    let gi = Grid::from_fn(t.rows, t.cols, |i, j| d(t.rows, i, &|k| t.get(k, j))).unwrap();
    let gj = Grid::from_fn(t.rows, t.cols, |i, j| d(t.cols, j, &|k| t.get(i, k))).unwrap();
    (gi, gj)
}

/// Descends `T` from `(rows-1, cols-1)` to the origin in steps of length
/// `epsilon` along the normalized, bilinearly interpolated gradient.
/// When that step fails to lower `T` the best of the backward axis and
/// diagonal moves is taken instead.
///
/// The returned raw path runs from `(0, 0)` to the far corner.
pub fn backtrack_path(tmap: &DistanceMap, epsilon: f64) -> Result<Vec<[f64; 2]>> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must lie in (0, 1)"
        )));
    }
    let t = &tmap.times;
    let (imax, jmax) = ((t.rows - 1) as f64, (t.cols - 1) as f64);
    let (gi, gj) = node_gradients(t);
    let mut pos = [imax, jmax];
    let mut path = vec![pos];
    let stop = std::f64::consts::SQRT_2 * epsilon;
    let max_steps = ((4.0 * (imax + jmax + 2.0)) / epsilon).ceil() as usize;
    let mut current = t.bilinear(pos[0], pos[1]);
    let mut stalls = 0;
    let mut steps = 0;

    while pos[0].hypot(pos[1]) > stop {
        if steps >= max_steps {
            return Err(Error::StalledDescent { at: pos, steps });
        }
        steps += 1;
        let g = [gi.bilinear(pos[0], pos[1]), gj.bilinear(pos[0], pos[1])];
        let norm = g[0].hypot(g[1]);
        if !(norm > 0.0) {
            return Err(Error::StalledDescent { at: pos, steps });
        }
        let step = |d: [f64; 2]| {
            let p = [
                (pos[0] - epsilon * d[0]).clamp(0.0, imax),
                (pos[1] - epsilon * d[1]).clamp(0.0, jmax),
            ];
            (p, t.bilinear(p[0], p[1]))
        };
        let (mut cand, mut next) = step([g[0] / norm, g[1] / norm]);
        if next >= current {
            // the gradient step overshot a narrow valley; try the axis and diagonal moves instead
            let h = std::f64::consts::FRAC_1_SQRT_2;
            if let Some((p, v)) = [[1.0, 0.0], [0.0, 1.0], [h, h]]
                .into_iter()
                .map(step)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .filter(|(_, v)| *v < current)
            {
                (cand, next) = (p, v);
            }
        }
        pos = cand;
        if next < current {
            stalls = 0;
        } else {
            stalls += 1;
            if stalls >= STALL_LIMIT {
                return Err(Error::StalledDescent { at: pos, steps });
            }
        }
        current = next;
        path.push(pos);
    }
    path.push([0.0, 0.0]);
    path.reverse();
    Ok(path)
}

/// Monotone correspondence between two sample-index axes.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    samples: Vec<[f64; 2]>,
    step: f64,
    extent: (usize, usize),
}

impl AlignmentPath {
    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    /// Descent step used to trace the raw path.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Grid dimensions `(M1, M2)` of the two profiles.
    pub fn extent(&self) -> (usize, usize) {
        self.extent
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Coordinates scaled to `[0, 1]` per axis.
    pub fn normalized(&self) -> Vec<[f64; 2]> {
        let sx = (self.extent.0.max(2) - 1) as f64;
        let sy = (self.extent.1.max(2) - 1) as f64;
        self.samples
            .iter()
            .map(|p| [p[0] / sx, p[1] / sy])
            .collect()
    }

    /// Total polyline length in grid units.
    pub fn length(&self) -> f64 {
        cumulative_length(&self.samples)
            .last()
            .copied()
            .unwrap_or(0.0)
    }

    pub fn transposed(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|p| [p[1], p[0]]).collect(),
            step: self.step,
            extent: (self.extent.1, self.extent.0),
        }
    }
}

pub(crate) fn cumulative_length(points: &[[f64; 2]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (k, p) in points.iter().enumerate() {
        if k > 0 {
            let q = points[k - 1];
            acc += (p[0] - q[0]).hypot(p[1] - q[1]);
        }
        out.push(acc);
    }
    out
}

/// Resamples a raw path at `m` points equally spaced in path length.
///
/// Endpoints are kept exactly and each coordinate is made non-decreasing by a
/// running maximum.
pub fn resample_path(raw: &[[f64; 2]], m: usize, step: f64) -> Result<AlignmentPath> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    if m < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 path samples".into(),
        ));
    }
    let first = raw[0];
    let last = raw[raw.len() - 1];
    let cum = cumulative_length(raw);
    let total = cum[cum.len() - 1];
    let mut samples = Vec::with_capacity(m);
    for k in 0..m {
        let p = if k == 0 {
            first
        } else if k == m - 1 {
            last
        } else if total == 0.0 {
            first
        } else {
            let target = total * k as f64 / (m - 1) as f64;
            let idx = cum.partition_point(|&c| c < target).clamp(1, raw.len() - 1);
            let (c0, c1) = (cum[idx - 1], cum[idx]);
            let w = if c1 > c0 {
                (target - c0) / (c1 - c0)
            } else {
                0.0
            };
            let (a, b) = (raw[idx - 1], raw[idx]);
            [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]
        };
        samples.push(p);
    }
    for k in 1..m {
        for axis in 0..2 {
            let prev = samples[k - 1][axis];
            let cur = &mut samples[k][axis];
            *cur = cur.max(prev).min(last[axis].max(prev));
        }
    }
    let extent = (last[0].round() as usize + 1, last[1].round() as usize + 1);
    Ok(AlignmentPath {
        samples,
        step,
        extent,
    })
}

/// Two profiles resampled along their common alignment path.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub path: AlignmentPath,
    pub a: TractProfile,
    pub b: TractProfile,
    pub lambda: f64,
}

/// Grid, fast marching, backtracking and resampling in one call.
pub fn align_profiles(
    a: &TractProfile,
    b: &TractProfile,
    config: &AlignConfig,
) -> Result<Alignment> {
    let grid = dissimilarity_grid(a, b, config.lambda)?;
    let tmap = fmm_solve(&grid);
    let raw = backtrack_path(&tmap, config.epsilon)?;
    let m = config.samples.unwrap_or(a.len().max(b.len()));
    let path = resample_path(&raw, m, config.epsilon)?;
    let pick = |p: &TractProfile, axis: usize| -> Result<TractProfile> {
        let entries = path
            .samples
            .iter()
            .map(|s| p.interpolate_at(s[axis]))
            .collect();
        TractProfile::uniform(
            entries,
            p.bundle_name(),
            p.measure().clone(),
            p.arc_length(),
        )
    };
    Ok(Alignment {
        a: pick(a, 0)?,
        b: pick(b, 1)?,
        lambda: grid.lambda(),
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{FfddVector, Measure};
    use crate::Vec3;

    fn constant(rows: usize, cols: usize, f: f64) -> DissimilarityGrid {
        DissimilarityGrid::new(Grid::from_fn(rows, cols, |_, _| f).unwrap(), f, (1.0, 1.0)).unwrap()
    }

    fn profile(mags: &[f64]) -> TractProfile {
        let e = mags
            .iter()
            .map(|&m| FfddVector {
                magnitude: m,
                direction: Vec3::x(),
            })
            .collect();
        TractProfile::uniform(e, "p", Measure::Ffdd("FA".into()), 10.0).unwrap()
    }

    #[test]
    fn two_by_two_corner_is_quadratic_root() {
        let t = fmm_solve(&constant(2, 2, 1.0));
        assert_eq!(t.get(0, 0), 0.0);
        assert_eq!(t.get(0, 1), 1.0);
        assert_eq!(t.get(1, 0), 1.0);
        assert!((t.get(1, 1) - (2.0 + 2f64.sqrt()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_entry_grid() {
        let g =
            dissimilarity_grid(&profile(&[0.7]), &profile(&[0.4]), Lambda::Absolute(0.05)).unwrap();
        assert_eq!(g.grid().rows(), 1);
        assert!((g.grid().get(0, 0) - 0.35).abs() < 1e-15);
    }

    #[test]
    fn identical_profiles_have_lambda_diagonal() {
        let p = profile(&[0.1, 0.5, 0.2, 0.9]);
        let g = dissimilarity_grid(&p, &p, Lambda::Absolute(0.02)).unwrap();
        for i in 0..4 {
            assert_eq!(g.grid().get(i, i), 0.02);
        }
    }

    #[test]
    fn relative_lambda_floor_when_profiles_constant() {
        let p = profile(&[0.5; 6]);
        let g = dissimilarity_grid(&p, &p, Lambda::default()).unwrap();
        assert!(g.lambda() > 0.0);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let a = profile(&[0.5, 0.6]);
        let b = TractProfile::uniform(a.entries().to_vec(), "b", Measure::Ffd, 1.0).unwrap();
        assert!(matches!(
            dissimilarity_grid(&a, &b, Lambda::default()),
            Err(Error::ChannelMismatch(..))
        ));
    }

    #[test]
    fn degenerate_two_row_grid_follows_free_axis() {
        let t = fmm_solve(&constant(2, 30, 1.0));
        let raw = backtrack_path(&t, 0.05).unwrap();
        let path = resample_path(&raw, 30, 0.05).unwrap();
        for w in path.samples().windows(2) {
            assert!(w[1][0] >= w[0][0] && w[1][1] >= w[0][1]);
        }
        assert_eq!(*path.samples().last().unwrap(), [1.0, 29.0]);
    }

    #[test]
    fn resample_diagonal_uniformly() {
        let raw: Vec<[f64; 2]> = (0..=40)
            .map(|k| [k as f64 / 10.0, k as f64 / 10.0])
            .collect();
        let p = resample_path(&raw, 5, 0.1).unwrap();
        let n = p.normalized();
        for (k, q) in n.iter().enumerate() {
            let e = k as f64 / 4.0;
            assert!(
                (q[0] - e).abs() < 1e-12 && (q[1] - e).abs() < 1e-12,
                "{q:?}"
            );
        }
        let again = resample_path(p.samples(), 5, 0.1).unwrap();
        for (a, b) in again.samples().iter().zip(p.samples()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_l_path_midpoint_is_corner() {
        let raw = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0]];
        let p = resample_path(&raw, 3, 0.1).unwrap();
        assert_eq!(p.samples()[1], [4.0, 0.0]);
    }

    #[test]
    fn resample_clips_backtracking() {
        let raw = [[0.0, 0.0], [2.0, 1.0], [1.5, 2.0], [3.0, 3.0]];
        let p = resample_path(&raw, 9, 0.1).unwrap();
        for w in p.samples().windows(2) {
            assert!(w[1][0] >= w[0][0] && w[1][1] >= w[0][1]);
        }
    }

    #[test]
    fn lambda_parsing() {
        assert_eq!("0.2".parse::<Lambda>().unwrap(), Lambda::Absolute(0.2));
        assert_eq!("rel:0.1".parse::<Lambda>().unwrap(), Lambda::Relative(0.1));
        assert!("0".parse::<Lambda>().is_err());
        assert!("rel:x".parse::<Lambda>().is_err());
    }

    #[test]
    fn bad_epsilon_rejected() {
        let t = fmm_solve(&constant(3, 3, 1.0));
        assert!(backtrack_path(&t, 0.0).is_err());
        assert!(backtrack_path(&t, 1.5).is_err());
    }
}
