#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use ffdd::align::Lambda;
use ffdd::descriptor::{EmptyPolicy, RadiusPolicy, TractProfile};
use ffdd::io::bundle_file::fmt_f64;
use ffdd::io::export::{self, Format};
use ffdd::io::{generate_bundle, load_bundle, save_bundle, synth};
use ffdd::pipeline::{self, RunConfig};
use ffdd::stats::{build_atlas, map_to_reference, zscore_profile, TTestKind};
use ffdd::svg::{Band, Plot, Series};
use ffdd::{Error, Result};

/// Along-tract fiber-flux diffusion density profiles and statistics.
///
/// Exit codes: 0 success, 2 invalid input, 3 numerical failure.
#[derive(Parser, Debug)]
#[command(name = "ffdd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Profile one bundle: profile.csv, profile.json, profile.svg.
    Profile {
        bundle: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Align two bundles' profiles: aligned.csv, compare.json, compare.svg.
    Compare {
        bundle_a: PathBuf,
        bundle_b: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Build an atlas from a directory of .bundle files: atlas.json, atlas.svg.
    Atlas {
        cohort: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Pointwise two-group t-tests with FDR control: stats.csv, stats.json, stats.svg.
    Groupstats {
        cohort_a: PathBuf,
        cohort_b: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Deviation of one subject from an atlas: anomaly.csv, anomaly.json, zscore.svg.
    Zscore {
        bundle: PathBuf,
        atlas: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Generate a synthetic bundle and its ground truth from a JSON spec.
    Synth {
        spec: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
}

#[derive(Args, Debug)]
struct Options {
    /// Scalar channel, or FFD for the geometry-only descriptor.
    #[arg(long, default_value = "FA")]
    channel: String,
    /// Profile the plain cross-section mean of the channel (no flux weighting).
    #[arg(long)]
    plain: bool,
    /// Cosine-series degree K.
    #[arg(long, default_value_t = ffdd::bundle::DEFAULT_DEGREE)]
    degree: usize,
    /// Profile samples M.
    #[arg(long, default_value_t = ffdd::bundle::DEFAULT_SAMPLES)]
    samples: usize,
    /// Grid regularization: absolute value, or rel:<fraction> of the mean dissimilarity.
    #[arg(long, default_value = "rel:0.1", value_parser = parse_arg::<Lambda>)]
    lambda: Lambda,
    /// Backtracking step (grid cells).
    #[arg(long, default_value_t = ffdd::align::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Cutting-plane radius: auto, unbounded, or a value in mm.
    #[arg(long, default_value = "auto", value_parser = parse_arg::<RadiusPolicy>)]
    radius: RadiusPolicy,
    /// Angular tolerance of the normal search (rad).
    #[arg(long, default_value_t = ffdd::descriptor::DEFAULT_TOL)]
    tol: f64,
    /// Iteration cap of the normal search.
    #[arg(long, default_value_t = ffdd::descriptor::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Empty cross-sections: fail or interpolate.
    #[arg(long, default_value = "interpolate", value_parser = parse_arg::<EmptyPolicy>)]
    empty: EmptyPolicy,
    /// FDR level q.
    #[arg(long, default_value_t = ffdd::stats::DEFAULT_FDR_Q)]
    fdr_q: f64,
    /// Welch's unequal-variance t-test instead of the pooled one.
    #[arg(long)]
    welch: bool,
    /// Seed override (synth).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "FFDD_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

fn parse_arg<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Options {
    fn config(&self) -> Result<RunConfig> {
        let c = RunConfig {
            channel: self.channel.clone(),
            plain: self.plain,
            degree: self.degree,
            samples: self.samples,
            lambda: self.lambda,
            epsilon: self.epsilon,
            radius: self.radius,
            tol: self.tol,
            max_iter: self.max_iter,
            empty: self.empty,
            fdr_q: self.fdr_q,
            ttest: if self.welch {
                TTestKind::Welch
            } else {
                TTestKind::Pooled
            },
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }
}

struct Output {
    dir: PathBuf,
    meta: Value,
}

impl Output {
    fn new(dir: &Path, command: &str, inputs: &[&Path], config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let meta = json!({
            "command": command,
            "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "config": config.to_json(),
        });
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, text: String) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }

    fn finish(&self, summary: Value) -> Result<()> {
        let mut meta = self.meta.clone();
        meta["summary"] = summary;
        self.write(
            "run.json",
            format!("{}\n", serde_json::to_string_pretty(&meta)?),
        )
    }
}

fn profile_plot(title: &str, profiles: &[&TractProfile]) -> Plot {
    let channel = profiles[0].measure().to_string();
    let mut plot = Plot::new(title, "arc-length fraction", channel);
    for p in profiles {
        plot.series.push(Series::new(
            p.bundle_name(),
            p.arc_positions(),
            &p.magnitudes(),
        ));
    }
    plot
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Profile { bundle, opts } => {
            let config = opts.config()?;
            let out = Output::new(&opts.out, "profile", &[&bundle], &config)?;
            let b = load_bundle(&bundle)?;
            let (profile, mean, diag) = pipeline::profile_bundle(&b, &config)?;
            let meta = out.meta["config"].clone();
            export::export_profile(&profile, out.path("profile.csv"), Format::Csv, None)?;
            export::export_profile(
                &profile,
                out.path("profile.json"),
                Format::Json,
                Some(&meta),
            )?;
            out.write("profile.svg", profile_plot(b.name(), &[&profile]).render())?;
            out.finish(json!({
                "arc_length": mean.arc_length(),
                "filled_samples": diag.filled,
                "unconverged_samples": diag.unconverged,
            }))
        }
        Command::Compare {
            bundle_a,
            bundle_b,
            opts,
        } => {
            let config = opts.config()?;
            let out = Output::new(&opts.out, "compare", &[&bundle_a, &bundle_b], &config)?;
            let (a, b) = rayon::join(|| load_bundle(&bundle_a), || load_bundle(&bundle_b));
            let (a, b) = (a?, b?);
            let cohort = pipeline::profile_cohort(&[a, b], &config)?;
            let cmp = pipeline::compare_profiles(&cohort[0].0, &cohort[1].0, &config)?;
            let mut csv = String::from("index,path_a,path_b,magnitude_a,magnitude_b,d\n");
            let (ma, mb) = (cmp.alignment.a.magnitudes(), cmp.alignment.b.magnitudes());
            for (k, s) in cmp.alignment.path.samples().iter().enumerate() {
                csv.push_str(&format!(
                    "{k},{},{},{},{},{}\n",
                    fmt_f64(s[0]),
                    fmt_f64(s[1]),
                    fmt_f64(ma[k]),
                    fmt_f64(mb[k]),
                    fmt_f64(cmp.pointwise[k])
                ));
            }
            out.write("aligned.csv", csv)?;
            let doc = json!({
                "version": export::SCHEMA_VERSION,
                "channel": cmp.alignment.a.measure().to_string(),
                "global_dissimilarity": cmp.global,
                "lambda": cmp.alignment.lambda,
                "pointwise": cmp.pointwise,
                "path": cmp.alignment.path.samples(),
                "config": out.meta["config"],
            });
            out.write(
                "compare.json",
                format!("{}\n", serde_json::to_string_pretty(&doc)?),
            )?;
            let mut plot = profile_plot("aligned profiles", &[&cmp.alignment.a, &cmp.alignment.b]);
            plot.colour_by = Some(cmp.pointwise.iter().map(|d| Some(*d)).collect());
            out.write("compare.svg", plot.render())?;
            out.finish(json!({ "global_dissimilarity": cmp.global }))
        }
        Command::Atlas { cohort, opts } => {
            let config = opts.config()?;
            let out = Output::new(&opts.out, "atlas", &[&cohort], &config)?;
            let bundles = pipeline::load_cohort(&cohort)?;
            let profiles = pipeline::profile_cohort(&bundles, &config)?;
            let (atlas, _) = build_atlas(&profiles, &config.align_config())?;
            let meta = out.meta["config"].clone();
            export::export_atlas(&atlas, out.path("atlas.json"), Format::Json, Some(&meta))?;
            export::export_atlas(&atlas, out.path("atlas.csv"), Format::Csv, None)?;
            let s = atlas.arc_positions();
            let mut plot = Plot::new(
                "atlas (mean ± 1 std)",
                "arc-length fraction",
                atlas.measure().to_string(),
            );
            plot.bands.push(Band {
                x: s.to_vec(),
                lower: atlas
                    .mean
                    .iter()
                    .zip(&atlas.std)
                    .map(|(m, d)| m - d)
                    .collect(),
                upper: atlas
                    .mean
                    .iter()
                    .zip(&atlas.std)
                    .map(|(m, d)| m + d)
                    .collect(),
            });
            plot.series.push(Series::new("mean", s, &atlas.mean));
            out.write("atlas.svg", plot.render())?;
            out.finish(json!({ "cohort_size": atlas.cohort_size }))
        }
        Command::Groupstats {
            cohort_a,
            cohort_b,
            opts,
        } => {
            let config = opts.config()?;
            let out = Output::new(&opts.out, "groupstats", &[&cohort_a, &cohort_b], &config)?;
            let (a, b) = rayon::join(
                || pipeline::load_cohort(&cohort_a),
                || pipeline::load_cohort(&cohort_b),
            );
            let (a, b) = (a?, b?);
            let n_a = a.len();
            let all: Vec<_> = a.into_iter().chain(b).collect();
            let profiles = pipeline::profile_cohort(&all, &config)?;
            let (pa, pb) = profiles.split_at(n_a);
            let g = pipeline::group_stats(pa, pb, &config)?;
            let meta = out.meta["config"].clone();
            let measure = g.reference.profile.measure().clone();
            export::export_stats(&g.stats, &measure, out.path("stats.csv"), Format::Csv, None)?;
            export::export_stats(
                &g.stats,
                &measure,
                out.path("stats.json"),
                Format::Json,
                Some(&meta),
            )?;
            let s = &g.stats.arc_positions;
            let mut plot = Plot::new("pointwise p and q", "arc-length fraction", "-log10");
            let log =
                |v: &Vec<f64>| -> Vec<f64> { v.iter().map(|p| -p.max(1e-300).log10()).collect() };
            plot.series
                .push(Series::new("p", s, &log(&g.stats.p_values)));
            plot.series
                .push(Series::new("q", s, &log(&g.stats.q_values)));
            plot.markers = s
                .iter()
                .zip(&g.stats.significant)
                .filter(|(_, sig)| **sig)
                .map(|(x, _)| *x)
                .collect();
            out.write("stats.svg", plot.render())?;
            let count = g.stats.significant.iter().filter(|s| **s).count();
            out.finish(
                json!({ "n_a": g.stats.n_a, "n_b": g.stats.n_b, "significant_samples": count }),
            )
        }
        Command::Zscore {
            bundle,
            atlas,
            opts,
        } => {
            let config = opts.config()?;
            let out = Output::new(&opts.out, "zscore", &[&bundle, &atlas], &config)?;
            let atlas = export::import_atlas(&atlas)?;
            if config.measure()? != *atlas.measure() {
                return Err(Error::ChannelMismatch(
                    config.measure()?.to_string(),
                    atlas.measure().to_string(),
                ));
            }
            let b = load_bundle(&bundle)?;
            let (profile, _, _) = pipeline::profile_bundle(&b, &config)?;
            let (mapped, _) =
                map_to_reference(&atlas.reference_profile, &profile, &config.align_config())?;
            let map = zscore_profile(&mapped, &atlas)?;
            let meta = out.meta["config"].clone();
            export::export_anomaly(
                &map,
                atlas.measure(),
                out.path("anomaly.csv"),
                Format::Csv,
                None,
            )?;
            export::export_anomaly(
                &map,
                atlas.measure(),
                out.path("anomaly.json"),
                Format::Json,
                Some(&meta),
            )?;
            let mut plot = profile_plot("subject vs atlas (colour: z)", &[&mapped]);
            plot.series.push(Series::new(
                "atlas mean",
                atlas.arc_positions(),
                &atlas.mean,
            ));
            plot.colour_by = Some(map.z_scores.clone());
            out.write("zscore.svg", plot.render())?;
            let peak = map.max_abs();
            out.finish(json!({
                "max_abs_z": peak.map(|p| p.1),
                "max_abs_z_index": peak.map(|p| p.0),
            }))
        }
        Command::Synth { spec, opts } => {
            let config = opts.config()?;
            let out = Output::new(&opts.out, "synth", &[&spec], &config)?;
            let mut s = synth::load_spec(&spec)?;
            if let Some(seed) = opts.seed {
                s.seed = seed;
            }
            let (bundle, truth) = generate_bundle(&s)?;
            let stem = sanitize(&s.name);
            save_bundle(&bundle, out.path(&format!("{stem}.bundle")))?;
            out.write(
                &format!("{stem}.truth.json"),
                synth::ground_truth_json(&truth)?,
            )?;
            out.finish(json!({ "seed": s.seed, "fibers": bundle.len() }))
        }
    }
}

fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "bundle".into()
    } else {
        s
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
