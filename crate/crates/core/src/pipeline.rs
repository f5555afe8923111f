//! End-to-end runs shared by the command-line tool and the tests.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::align::{align_profiles, AlignConfig, Alignment, Lambda, DEFAULT_EPSILON};
use crate::bundle::{
    mean_fiber, reorient_bundle, FiberBundle, MeanFiber, DEFAULT_DEGREE, DEFAULT_SAMPLES,
};
use crate::descriptor::{
    tract_profile, EmptyPolicy, Measure, PlaneSearch, ProfileConfig, ProfileDiagnostics,
    RadiusPolicy, TractProfile, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::io::load_bundle;
use crate::stats::{
    align_cohort, global_dissimilarity, pairwise_dissimilarity, pointwise_ttest, reference_profile,
    PointwiseStats, Reference, TTestKind, DEFAULT_FDR_Q,
};

/// Every tunable of a run, with the library defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Channel name, or `FFD` for the geometry-only descriptor.
    pub channel: String,
    /// Profile the plain cross-section mean of `channel` instead of FFDD.
    pub plain: bool,
    pub degree: usize,
    pub samples: usize,
    pub lambda: Lambda,
    pub epsilon: f64,
    pub radius: RadiusPolicy,
    pub tol: f64,
    pub max_iter: usize,
    pub empty: EmptyPolicy,
    pub fdr_q: f64,
    pub ttest: TTestKind,
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            channel: "FA".into(),
            plain: false,
            degree: DEFAULT_DEGREE,
            samples: DEFAULT_SAMPLES,
            lambda: Lambda::default(),
            epsilon: DEFAULT_EPSILON,
            radius: RadiusPolicy::Auto,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            empty: EmptyPolicy::Interpolate,
            fdr_q: DEFAULT_FDR_Q,
            ttest: TTestKind::Pooled,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn measure(&self) -> Result<Measure> {
        match (self.channel.as_str(), self.plain) {
            ("FFD", true) => Err(Error::InvalidArgument(
                "--plain needs a scalar channel, not FFD".into(),
            )),
            ("FFD", false) => Ok(Measure::Ffd),
            (c, true) => Ok(Measure::Scalar(c.to_string())),
            (c, false) => c.parse(),
        }
    }

    pub fn profile_config(&self) -> ProfileConfig {
        ProfileConfig {
            search: PlaneSearch {
                radius: self.radius,
                tol: self.tol,
                max_iter: self.max_iter,
            },
            empty: self.empty,
        }
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            lambda: self.lambda,
            epsilon: self.epsilon,
            samples: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 || self.samples < 2 {
            return Err(Error::InvalidArgument(
                "degree must be >= 1 and samples >= 2".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument("epsilon must lie in (0, 1)".into()));
        }
        if !(self.tol > 0.0) || self.max_iter < 1 {
            return Err(Error::InvalidArgument(
                "tol must be > 0 and max-iter >= 1".into(),
            ));
        }
        if !(self.fdr_q > 0.0 && self.fdr_q < 1.0) {
            return Err(Error::InvalidArgument("fdr-q must lie in (0, 1)".into()));
        }
        self.measure().map(|_| ())
    }

    /// Metadata echoed into every output.
    pub fn to_json(&self) -> Value {
        json!({
            "channel": self.channel,
            "plain": self.plain,
            "degree": self.degree,
            "samples": self.samples,
            "lambda": self.lambda.to_string(),
            "epsilon": self.epsilon,
            "radius": self.radius.to_string(),
            "tol": self.tol,
            "max_iter": self.max_iter,
            "empty": self.empty.to_string(),
            "fdr_q": self.fdr_q,
            "ttest": match self.ttest {
                TTestKind::Pooled => "pooled",
                TTestKind::Welch => "welch",
            },
            "seed": self.seed,
        })
    }
}

/// Mean fiber and profile of one bundle (fibers reoriented first).
pub fn profile_bundle(
    bundle: &FiberBundle,
    config: &RunConfig,
) -> Result<(TractProfile, MeanFiber, ProfileDiagnostics)> {
    let measure = config.measure()?;
    if let Some(c) = measure.channel() {
        if !bundle.has_channel(c) {
            return Err(Error::UnknownChannel(c.to_string()));
        }
    }
    let oriented = reorient_bundle(bundle);
    let mean = mean_fiber(&oriented, config.degree, config.samples)?;
    let (profile, diag) = tract_profile(&oriented, &mean, &measure, &config.profile_config())?;
    Ok((profile, mean, diag))
}

/// Profiles of every bundle, in input order; failures name the subject.
pub fn profile_cohort(
    bundles: &[FiberBundle],
    config: &RunConfig,
) -> Result<Vec<(TractProfile, MeanFiber)>> {
    bundles
        .par_iter()
        .enumerate()
        .map(|(index, b)| {
            profile_bundle(b, config)
                .map(|(p, m, _)| (p, m))
                .map_err(|e| Error::Subject {
                    index,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// `*.bundle` files of a directory in lexicographic order.
pub fn cohort_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "bundle") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .bundle files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// Loads every bundle of a cohort directory, parsing files concurrently.
pub fn load_cohort(dir: &Path) -> Result<Vec<FiberBundle>> {
    cohort_files(dir)?.par_iter().map(load_bundle).collect()
}

/// Two profiles aligned to each other.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub alignment: Alignment,
    /// Pointwise dissimilarity along the alignment path.
    pub pointwise: Vec<f64>,
    /// Its integral over the path length.
    pub global: f64,
}

pub fn compare_profiles(
    a: &TractProfile,
    b: &TractProfile,
    config: &RunConfig,
) -> Result<Comparison> {
    let alignment = align_profiles(a, b, &config.align_config())?;
    let pointwise = pairwise_dissimilarity(&alignment.a, &alignment.b)?;
    let global = global_dissimilarity(&alignment.a, &alignment.b, &alignment.path)?;
    Ok(Comparison {
        alignment,
        pointwise,
        global,
    })
}

/// Group comparison on a common reference built from both cohorts.
#[derive(Debug, Clone)]
pub struct GroupComparison {
    pub reference: Reference,
    pub aligned_a: Vec<TractProfile>,
    pub aligned_b: Vec<TractProfile>,
    pub stats: PointwiseStats,
}

pub fn group_stats(
    a: &[(TractProfile, MeanFiber)],
    b: &[(TractProfile, MeanFiber)],
    config: &RunConfig,
) -> Result<GroupComparison> {
    let joint: Vec<(TractProfile, MeanFiber)> = a.iter().chain(b).cloned().collect();
    let reference = reference_profile(&joint)?;
    let align = config.align_config();
    let pa: Vec<&TractProfile> = a.iter().map(|c| &c.0).collect();
    let pb: Vec<&TractProfile> = b.iter().map(|c| &c.0).collect();
    let aligned_a = align_cohort(&reference.profile, &pa, &align)?;
    let aligned_b = align_cohort(&reference.profile, &pb, &align).map_err(|e| match e {
        Error::Subject { index, source } => Error::Subject {
            index: index + a.len(),
            source,
        },
        e => e,
    })?;
    let stats = pointwise_ttest(&aligned_a, &aligned_b, config.ttest, config.fdr_q)?;
    Ok(GroupComparison {
        reference,
        aligned_a,
        aligned_b,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_selection() {
        let mut c = RunConfig::default();
        assert_eq!(c.measure().unwrap(), Measure::Ffdd("FA".into()));
        c.plain = true;
        assert_eq!(c.measure().unwrap(), Measure::Scalar("FA".into()));
        c.channel = "FFD".into();
        assert!(c.measure().is_err());
        c.plain = false;
        assert_eq!(c.measure().unwrap(), Measure::Ffd);
    }

    #[test]
    fn config_echo_lists_every_option() {
        let v = RunConfig::default().to_json();
        for key in [
            "channel", "plain", "degree", "samples", "lambda", "epsilon", "radius", "tol",
            "max_iter", "empty", "fdr_q", "ttest", "seed",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["lambda"], "rel:0.1");
    }

    #[test]
    fn bad_options_rejected() {
        let c = RunConfig {
            epsilon: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            fdr_q: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
