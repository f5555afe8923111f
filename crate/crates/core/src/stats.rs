//! Pairwise and group-wise along-tract analysis.

use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::align::{align_profiles, cumulative_length, AlignConfig, AlignmentPath};
use crate::bundle::MeanFiber;
use crate::descriptor::{FfddVector, Measure, TractProfile};
use crate::error::{Error, Result};
use crate::Vec3;

pub const DEFAULT_FDR_Q: f64 = 0.05;
/// A reference vector is flagged as cancelled when its norm falls below this
/// fraction of the mean input norm.
pub const CANCELLATION_FRACTION: f64 = 0.1;

fn same_shape(a: &TractProfile, b: &TractProfile) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.measure() != b.measure() {
        return Err(Error::ChannelMismatch(
            a.measure().to_string(),
            b.measure().to_string(),
        ));
    }
    Ok(())
}

/// `|J_a(m) - J_b(m)|` for each aligned sample.
pub fn pairwise_dissimilarity(a: &TractProfile, b: &TractProfile) -> Result<Vec<f64>> {
    same_shape(a, b)?;
    Ok(a.vectors()
        .iter()
        .zip(b.vectors())
        .map(|(x, y)| (x - y).norm())
        .collect())
}

/// Trapezoidal integral of the pointwise dissimilarity over the path length.
pub fn global_dissimilarity(
    a: &TractProfile,
    b: &TractProfile,
    path: &AlignmentPath,
) -> Result<f64> {
    let d = pairwise_dissimilarity(a, b)?;
    if d.len() != path.len() {
        return Err(Error::LengthMismatch(d.len(), path.len()));
    }
    let cum = cumulative_length(path.samples());
    Ok((1..d.len())
        .map(|k| 0.5 * (d[k] + d[k - 1]) * (cum[k] - cum[k - 1]))
        .sum())
}

/// Pointwise mean of a cohort's profiles and mean-fiber samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub profile: TractProfile,
    pub fiber: Vec<Vec3>,
    /// Samples where the mean vector nearly cancels.
    pub cancelled: Vec<bool>,
}

/// Arithmetic mean of the profile vectors and of the mean-fiber points.
pub fn reference_profile(cohort: &[(TractProfile, MeanFiber)]) -> Result<Reference> {
    let Some((first, first_fiber)) = cohort.first() else {
        return Err(Error::InvalidArgument("empty cohort".into()));
    };
    let m = first.len();
    for (p, f) in cohort {
        same_shape(first, p)?;
        if f.len() != first_fiber.len() {
            return Err(Error::LengthMismatch(first_fiber.len(), f.len()));
        }
    }
    let n = cohort.len() as f64;
    let mut entries = Vec::with_capacity(m);
    let mut cancelled = Vec::with_capacity(m);
    for k in 0..m {
        let sum: Vec3 = cohort.iter().map(|(p, _)| p.entries()[k].vector()).sum();
        let mean_norm = cohort
            .iter()
            .map(|(p, _)| p.entries()[k].magnitude.abs())
            .sum::<f64>()
            / n;
        let mean = sum / n;
        let norm = mean.norm();
        cancelled.push(norm < CANCELLATION_FRACTION * mean_norm);
        let direction = if norm > 0.0 {
            mean / norm
        } else {
            // zero vector: keep a unit direction for the profile invariant
            cohort[0].0.entries()[k].direction
        };
        entries.push(FfddVector {
            magnitude: norm,
            direction,
        });
    }
    let fiber = (0..first_fiber.len())
        .map(|k| cohort.iter().map(|(_, f)| f.samples()[k]).sum::<Vec3>() / n)
        .collect();
    let arc_length = cohort.iter().map(|(p, _)| p.arc_length()).sum::<f64>() / n;
    let profile = TractProfile::new(
        entries,
        first.arc_positions().to_vec(),
        "reference",
        first.measure().clone(),
        arc_length,
    )?;
    Ok(Reference {
        profile,
        fiber,
        cancelled,
    })
}

/// Aligns `subject` to `reference` and reads it back at every reference sample.
///
/// The alignment path is interpolated as a function of the reference axis;
/// runs where the reference coordinate stalls are collapsed to their mean
/// subject coordinate.
pub fn map_to_reference(
    reference: &TractProfile,
    subject: &TractProfile,
    config: &AlignConfig,
) -> Result<(TractProfile, AlignmentPath)> {
    let alignment = align_profiles(reference, subject, config)?;
    let path = alignment.path;
    let mut knots: Vec<(f64, f64, usize)> = Vec::new();
    for s in path.samples() {
        match knots.last_mut() {
            Some(last) if last.0 == s[0] => {
                last.1 += s[1];
                last.2 += 1;
            }
            _ => knots.push((s[0], s[1], 1)),
        }
    }
    let knots: Vec<(f64, f64)> = knots.iter().map(|k| (k.0, k.1 / k.2 as f64)).collect();
    let entries = (0..reference.len())
        .map(|m| subject.interpolate_at(interp_knots(&knots, m as f64)))
        .collect();
    let mapped = TractProfile::new(
        entries,
        reference.arc_positions().to_vec(),
        subject.bundle_name(),
        subject.measure().clone(),
        subject.arc_length(),
    )?;
    Ok((mapped, path))
}

fn interp_knots(knots: &[(f64, f64)], x: f64) -> f64 {
    let k = knots.partition_point(|p| p.0 < x);
    if k == 0 {
        return knots[0].1;
    }
    if k == knots.len() {
        return knots[k - 1].1;
    }
    let (x0, y0) = knots[k - 1];
    let (x1, y1) = knots[k];
    y0 + (x - x0) / (x1 - x0) * (y1 - y0)
}

/// Standardized profile of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAtlas {
    pub reference_profile: TractProfile,
    pub reference_fiber: Vec<Vec3>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub cohort_size: usize,
}

impl GroupAtlas {
    pub fn measure(&self) -> &Measure {
        self.reference_profile.measure()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn arc_positions(&self) -> &[f64] {
        self.reference_profile.arc_positions()
    }
}

/// Mean and unbiased standard deviation of aligned magnitudes.
pub fn mean_std(profiles: &[TractProfile]) -> (Vec<f64>, Vec<f64>) {
    let m = profiles[0].len();
    let n = profiles.len() as f64;
    let mut mean = vec![0.0; m];
    let mut std = vec![0.0; m];
    for k in 0..m {
        let mu = profiles
            .iter()
            .map(|p| p.entries()[k].magnitude)
            .sum::<f64>()
            / n;
        let ss = profiles
            .iter()
            .map(|p| (p.entries()[k].magnitude - mu).powi(2))
            .sum::<f64>();
        mean[k] = mu;
        std[k] = if profiles.len() > 1 {
            (ss / (n - 1.0)).sqrt()
        } else {
            0.0
        };
    }
    (mean, std)
}

/// Maps every profile onto `reference` (in parallel, results in input order).
pub fn align_cohort(
    reference: &TractProfile,
    profiles: &[&TractProfile],
    config: &AlignConfig,
) -> Result<Vec<TractProfile>> {
    profiles
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            map_to_reference(reference, p, config)
                .map(|r| r.0)
                .map_err(|e| Error::Subject {
                    index,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Single-pass atlas: reference from the raw joint parameterization, one
/// alignment round, pointwise magnitude statistics.
pub fn build_atlas(
    cohort: &[(TractProfile, MeanFiber)],
    config: &AlignConfig,
) -> Result<(GroupAtlas, Vec<TractProfile>)> {
    if cohort.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "atlas needs at least 2 subjects, got {}",
            cohort.len()
        )));
    }
    let reference = reference_profile(cohort)?;
    let profiles: Vec<&TractProfile> = cohort.iter().map(|c| &c.0).collect();
    let aligned = align_cohort(&reference.profile, &profiles, config)?;
    let (mean, std) = mean_std(&aligned);
    Ok((
        GroupAtlas {
            reference_profile: reference.profile,
            reference_fiber: reference.fiber,
            mean,
            std,
            cohort_size: cohort.len(),
        },
        aligned,
    ))
}

/// Deviation from an atlas in units of its standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    /// `None` where the atlas std is zero.
    pub z_scores: Vec<Option<f64>>,
    pub arc_positions: Vec<f64>,
}

impl AnomalyMap {
    pub fn max_abs(&self) -> Option<(usize, f64)> {
        self.z_scores
            .iter()
            .enumerate()
            .filter_map(|(i, z)| z.map(|z| (i, z.abs())))
            .fold(None, |best, (i, z)| match best {
                Some((_, b)) if b >= z => best,
                _ => Some((i, z)),
            })
    }
}

/// `z(m) = (J_subject(m) - mean(m)) / std(m)` on signed magnitudes.
pub fn zscore_profile(subject: &TractProfile, atlas: &GroupAtlas) -> Result<AnomalyMap> {
    if subject.len() != atlas.len() {
        return Err(Error::LengthMismatch(subject.len(), atlas.len()));
    }
    let z_scores = subject
        .entries()
        .iter()
        .zip(atlas.mean.iter().zip(&atlas.std))
        .map(|(e, (mu, sd))| (*sd > 0.0).then(|| (e.magnitude - mu) / sd))
        .collect();
    Ok(AnomalyMap {
        z_scores,
        arc_positions: atlas.arc_positions().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TTestKind {
    /// Pooled-variance Student t, `n_a + n_b - 2` degrees of freedom.
    #[default]
    Pooled,
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    Welch,
}

/// Two-sample t statistic and two-tailed p value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    /// Both samples have zero variance.
    pub degenerate: bool,
}

/// Two-tailed tail probability of Student's t: `I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn student_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

pub fn two_sample_ttest(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(
            "each group needs at least 2 observations".into(),
        ));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ssa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let ssb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    let diff = ma - mb;
    let (se2, df) = match kind {
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            ((ssa + ssb) / df * (1.0 / na + 1.0 / nb), df)
        }
        TTestKind::Welch => {
            let va = ssa / (na - 1.0) / na;
            let vb = ssb / (nb - 1.0) / nb;
            let df = if va + vb > 0.0 {
                (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
            } else {
                na + nb - 2.0
            };
            (va + vb, df)
        }
    };
    if se2 == 0.0 {
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            p,
            df,
            degenerate: true,
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTest {
        t,
        p: student_two_tailed(t, df),
        df,
        degenerate: false,
    })
}

/// Benjamini–Hochberg adjusted values and step-up decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrResult {
    pub q_values: Vec<f64>,
    pub significant: Vec<bool>,
}

/// Benjamini–Hochberg step-up at level `q`.
///
/// Rejects the hypotheses with the `k` smallest p values, where `k` is the
/// largest rank with `p_(k) <= k q / M`. Adjusted values are the running
/// minimum of `M p_(i) / i` from the largest rank down, capped at 1.
pub fn fdr_correct(p_values: &[f64], q: f64) -> Result<FdrResult> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "p value {p} outside [0, 1]"
        )));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));

    let mut cutoff = 0;
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] <= (rank + 1) as f64 * q / m as f64 {
            cutoff = rank + 1;
        }
    }
    let mut significant = vec![false; m];
    for &i in &order[..cutoff] {
        significant[i] = true;
    }

    let mut q_values = vec![0.0; m];
    let mut running = 1.0_f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        // m / rank >= 1, so only rounding could push the adjusted value below p
        let adjusted = (p_values[i] * m as f64 / (rank + 1) as f64).max(p_values[i]);
        running = running.min(adjusted);
        q_values[i] = running;
    }
    Ok(FdrResult {
        q_values,
        significant,
    })
}

/// Pointwise group comparison of aligned profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseStats {
    pub t_statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    pub q_values: Vec<f64>,
    pub significant: Vec<bool>,
    /// Points where both groups have zero variance.
    pub degenerate: Vec<bool>,
    pub arc_positions: Vec<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub fdr_level: f64,
}

pub fn pointwise_ttest(
    group_a: &[TractProfile],
    group_b: &[TractProfile],
    kind: TTestKind,
    fdr_level: f64,
) -> Result<PointwiseStats> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "each group needs at least 2 subjects (got {} and {})",
            group_a.len(),
            group_b.len()
        )));
    }
    let first = &group_a[0];
    for p in group_a.iter().chain(group_b) {
        same_shape(first, p)?;
    }
    let m = first.len();
    let mut t_statistics = Vec::with_capacity(m);
    let mut p_values = Vec::with_capacity(m);
    let mut degenerate = Vec::with_capacity(m);
    for k in 0..m {
        let a: Vec<f64> = group_a.iter().map(|p| p.entries()[k].magnitude).collect();
        let b: Vec<f64> = group_b.iter().map(|p| p.entries()[k].magnitude).collect();
        let test = two_sample_ttest(&a, &b, kind)?;
        t_statistics.push(test.t);
        p_values.push(test.p);
        degenerate.push(test.degenerate);
    }
    let fdr = fdr_correct(&p_values, fdr_level)?;
    Ok(PointwiseStats {
        t_statistics,
        p_values,
        q_values: fdr.q_values,
        significant: fdr.significant,
        degenerate,
        arc_positions: first.arc_positions().to_vec(),
        n_a: group_a.len(),
        n_b: group_b.len(),
        fdr_level,
    })
}
