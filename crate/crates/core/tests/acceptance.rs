//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process exits non-zero if any criterion fails.

// reference values are pasted verbatim from the fixture script
#![allow(clippy::excessive_precision)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;

use ffdd::align::{align_profiles, fmm_solve, AlignConfig, DissimilarityGrid, Grid};
use ffdd::bundle::{fit_cosine_series, mean_fiber, FiberBundle, FiberStreamline};
use ffdd::descriptor::{
    ffd_at, ffdd_at, optimize_plane_normal, CuttingPlane, FfddVector, Measure, PlaneSearch,
    RadiusPolicy, TractProfile,
};
use ffdd::io::export;
use ffdd::io::synth::{Centerline, ChannelSpec, Lesion, SyntheticSpec};
use ffdd::io::{format_bundle, generate_bundle, parse_bundle};
use ffdd::pipeline::{self, RunConfig};
use ffdd::stats::{
    build_atlas, fdr_correct, map_to_reference, mean_std, two_sample_ttest, zscore_profile,
    TTestKind,
};
use ffdd::Vec3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("eikonal accuracy", eikonal_accuracy),
        ("flux identities", flux_identities),
        ("optimal-plane correctness", optimal_plane),
        ("alignment recovery", alignment_recovery),
        ("mean-fiber fidelity", mean_fiber_fidelity),
        ("lesion localization", lesion_localization),
        ("sensitivity ordering", sensitivity_ordering),
        ("statistics oracles", statistics_oracles),
        ("determinism and round-trip", determinism_round_trip),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {} [{}] {name}: {} ({:.1}s)",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn straight_fiber(
    start: Vec3,
    dir: Vec3,
    half: f64,
    n: usize,
    channels: &[(&str, f64)],
) -> FiberStreamline {
    let d = dir.normalize();
    let vertices: Vec<Vec3> = (0..n)
        .map(|k| start + d * (-half + 2.0 * half * k as f64 / (n - 1) as f64))
        .collect();
    let scalars = channels
        .iter()
        .map(|(c, v)| (c.to_string(), vec![*v; n]))
        .collect();
    FiberStreamline::new(vertices, scalars).unwrap()
}

fn rotate_about(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle) * v
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn magnitude_profile(mags: &[f64]) -> TractProfile {
    let entries = mags
        .iter()
        .map(|&m| FfddVector {
            magnitude: m,
            direction: Vec3::x(),
        })
        .collect();
    TractProfile::uniform(entries, "synthetic", Measure::Ffdd("FA".into()), 50.0).unwrap()
}

/// Subject-cohort spec: a gently curved bundle with FA noise.
fn subject_spec(name: &str, seed: u64, fa_noise: f64) -> SyntheticSpec {
    SyntheticSpec {
        name: name.into(),
        centerline: Centerline::Arc {
            center: [0.0, 0.0, 0.0],
            radius: 60.0,
            start_deg: -30.0,
            sweep_deg: 60.0,
        },
        fiber_count: 20,
        vertices_per_fiber: 50,
        tube_radius: 2.0,
        fan_angle_deg: 0.0,
        fan_lesion: None,
        noise_std: 0.1,
        channels: BTreeMap::from([(
            "FA".to_string(),
            ChannelSpec {
                baseline: 0.6,
                noise_std: fa_noise,
                lesion: None,
            },
        )]),
        seed,
        clean_samples: 100,
    }
}

fn profile_specs(
    specs: &[SyntheticSpec],
    config: &RunConfig,
) -> Vec<(TractProfile, ffdd::bundle::MeanFiber)> {
    let bundles: Vec<FiberBundle> = specs
        .iter()
        .map(|s| generate_bundle(s).unwrap().0)
        .collect();
    pipeline::profile_cohort(&bundles, config).unwrap()
}

// ---------------------------------------------------------------- 1

/// Constant inverse speed on a 101 x 101 grid against Euclidean distance.
///
/// The 4-neighbour first-order update carries a fixed O(1) error along the
/// diagonal (the 2 x 2 corner is (2 + sqrt 2) / 2 rather than sqrt 2), so the
/// relative error decays with distance from the source. The 2% bound is
/// checked off-axis in the far field, beyond half the grid diagonal.
fn eikonal_accuracy() -> Outcome {
    let n = 101;
    let solve = |f: f64| {
        let g =
            DissimilarityGrid::new(Grid::from_fn(n, n, |_, _| f).unwrap(), f, (1.0, 1.0)).unwrap();
        fmm_solve(&g)
    };
    let base = solve(1.0);
    let far = 0.5 * ((2 * (n - 1) * (n - 1)) as f64).sqrt();
    let (mut far_err, mut all_err, mut axis_err) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            if i == 0 && j == 0 {
                continue;
            }
            let d = (i as f64).hypot(j as f64);
            let rel = (base.get(i, j) - d).abs() / d;
            if i == 0 || j == 0 {
                axis_err = axis_err.max(rel);
                continue;
            }
            all_err = all_err.max(rel);
            if d >= far {
                far_err = far_err.max(rel);
            }
        }
    }
    let doubled = solve(2.0);
    let exact_double =
        (0..n * n).all(|k| doubled.times().values()[k] == 2.0 * base.times().values()[k]);
    let scaled = solve(3.7);
    let homog = (0..n * n)
        .map(|k| {
            let t = base.times().values()[k];
            if t == 0.0 {
                scaled.times().values()[k].abs()
            } else {
                (scaled.times().values()[k] - 3.7 * t).abs() / (3.7 * t)
            }
        })
        .fold(0.0f64, f64::max);
    outcome(
        far_err < 0.02 && axis_err < 1e-12 && exact_double && homog < 1e-12,
        format!(
            "max rel err {:.3}% off-axis for d >= {far:.1} (all off-axis {:.1}%, on-axis {axis_err:.1e}); \
             T(2F) == 2T(F) bitwise: {exact_double}; T(3.7F) vs 3.7T(F) rel {homog:.1e}",
            100.0 * far_err,
            100.0 * all_err
        ),
    )
}

// ---------------------------------------------------------------- 2

fn flux_identities() -> Outcome {
    let origin = Vec3::zeros();
    let x_plane = CuttingPlane::unbounded(origin, Vec3::x()).unwrap();

    let parallel = FiberBundle::new(
        "parallel",
        (0..25)
            .map(|k| {
                let off = Vec3::new(0.0, (k % 5) as f64 - 2.0, (k / 5) as f64 - 2.0);
                straight_fiber(off, Vec3::x(), 20.0, 41, &[("MD", 0.7 + 0.01 * k as f64)])
            })
            .collect(),
    )
    .unwrap();
    let ffd_parallel = ffd_at(&parallel, &x_plane).unwrap().magnitude;

    let tilt_dir = Vec3::new(60f64.to_radians().cos(), 60f64.to_radians().sin(), 0.0);
    let tilted = FiberBundle::new(
        "tilted",
        (0..25)
            .map(|k| {
                let off = Vec3::new(0.0, (k % 5) as f64 - 2.0, (k / 5) as f64 - 2.0);
                straight_fiber(off, tilt_dir, 20.0, 41, &[("MD", 0.7)])
            })
            .collect(),
    )
    .unwrap();
    let ffd_tilt = ffd_at(&tilted, &x_plane).unwrap().magnitude;

    // fan of fibers at evenly spaced angles in [-30, 30] degrees
    let count = 601;
    let fan = FiberBundle::new(
        "fan",
        (0..count)
            .map(|k| {
                let phi = (-30.0 + 60.0 * k as f64 / (count - 1) as f64).to_radians();
                let off = Vec3::new(0.0, 0.0, 0.01 * k as f64);
                straight_fiber(
                    off,
                    Vec3::new(phi.cos(), phi.sin(), 0.0),
                    20.0,
                    41,
                    &[("MD", 0.7)],
                )
            })
            .collect(),
    )
    .unwrap();
    let ffd_fan = ffd_at(&fan, &x_plane).unwrap().magnitude;
    // dense-sampling oracle of the mean of cos over the fan (midpoint rule)
    let dense = 1_000_000;
    let oracle = (0..dense)
        .map(|k| {
            (-30.0 + 60.0 * (k as f64 + 0.5) / dense as f64)
                .to_radians()
                .cos()
        })
        .sum::<f64>()
        / dense as f64;

    // FFDD is linear in the scalar channel
    let base = ffdd_at(&parallel, &x_plane, "MD").unwrap().magnitude;
    let mut exact = true;
    for c in [2.0, 0.5, 0.25] {
        let scaled = parallel.map_channel("MD", |v| v * c).unwrap();
        exact &= ffdd_at(&scaled, &x_plane, "MD").unwrap().magnitude == c * base;
    }
    let scaled = parallel.map_channel("MD", |v| v * 3.0).unwrap();
    let rel3 =
        (ffdd_at(&scaled, &x_plane, "MD").unwrap().magnitude - 3.0 * base).abs() / (3.0 * base);

    let pass = (ffd_parallel - 1.0).abs() <= 1e-9
        && (ffd_tilt - 0.5).abs() <= 1e-9
        && (ffd_fan - oracle).abs() <= 1e-3
        && (oracle - 0.9549).abs() < 1e-4
        && exact
        && rel3 < 1e-15;
    outcome(
        pass,
        format!(
            "parallel {ffd_parallel:.12}, 60deg tilt {ffd_tilt:.12}, fan {ffd_fan:.6} vs oracle {oracle:.6}; \
             FFDD(cS) == c FFDD(S) bitwise for c in 2, 0.5, 0.25: {exact}; c = 3 rel {rel3:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn optimal_plane() -> Outcome {
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for seed in 1..=5u64 {
        let mut spec = SyntheticSpec::straight("fan", 60.0, 40, 2.5).with_seed(seed);
        spec.centerline = Centerline::Line {
            start: [0.0, 0.0, 0.0],
            end: [40.0, 30.0, 20.0],
        };
        spec.vertices_per_fiber = 60;
        spec.fan_angle_deg = 25.0;
        let (bundle, _) = generate_bundle(&spec).unwrap();
        let axis = spec.centerline.tangent(0.3);
        let point = spec.centerline.point(0.3);
        let init = rotate_about(axis, axis.cross(&Vec3::z()), 15f64.to_radians());
        let search = PlaneSearch {
            radius: RadiusPolicy::Unbounded,
            ..Default::default()
        };
        let fit = optimize_plane_normal(&bundle, point, init, &search).unwrap();
        let brute = brute_force_normal(&bundle, point, init);
        let angle = fit.plane.normal().angle(&brute).to_degrees();
        worst = worst.max(angle);
        details.push(format!("{angle:.3}"));
    }
    outcome(
        worst < 0.5,
        format!(
            "angle to hemisphere brute-force argmax (deg) per seed: [{}], max {worst:.3}",
            details.join(", ")
        ),
    )
}

/// Argmax of FFD over the hemisphere around `pole`: 1 degree grid, then a
/// 0.1 degree grid within 2 degrees of the coarse winner.
fn brute_force_normal(bundle: &FiberBundle, point: Vec3, pole: Vec3) -> Vec3 {
    let pole = pole.normalize();
    let e1 = pole.cross(&Vec3::new(0.3, -0.7, 0.2)).normalize();
    let e2 = pole.cross(&e1);
    let score = |n: Vec3| -> f64 {
        CuttingPlane::unbounded(point, n)
            .ok()
            .and_then(|p| ffd_at(bundle, &p).ok())
            .map_or(f64::NEG_INFINITY, |v| v.magnitude)
    };
    let mut best = (f64::NEG_INFINITY, pole);
    for t in 0..=90 {
        let th = (t as f64).to_radians();
        let steps = if t == 0 { 1 } else { 360 };
        for p in 0..steps {
            let ph = (p as f64).to_radians();
            let n = pole * th.cos() + (e1 * ph.cos() + e2 * ph.sin()) * th.sin();
            let s = score(n);
            if s > best.0 {
                best = (s, n);
            }
        }
    }
    let n0 = best.1;
    let f1 = n0.cross(&e1).try_normalize(1e-9).unwrap_or(e2);
    let f2 = n0.cross(&f1);
    for a in -20..=20 {
        for b in -20..=20 {
            let (ta, tb) = ((a as f64 * 0.1).to_radians(), (b as f64 * 0.1).to_radians());
            let n = (n0 + f1 * ta.tan() + f2 * tb.tan()).normalize();
            let s = score(n);
            if s > best.0 {
                best = (s, n);
            }
        }
    }
    best.1
}

// ---------------------------------------------------------------- 4

fn alignment_recovery() -> Outcome {
    let m = 100;
    let f = |s: f64| 0.5 + 0.35 * (2.5 * std::f64::consts::PI * s).sin();
    let s = |k: usize| k as f64 / (m - 1) as f64;
    let a = magnitude_profile(&(0..m).map(|k| f(s(k))).collect::<Vec<_>>());
    let b = magnitude_profile(&(0..m).map(|k| f(s(k) * s(k))).collect::<Vec<_>>());
    let config = AlignConfig::default();
    let al = align_profiles(&a, &b, &config).unwrap();

    // the path gives x_a as a function of x_b; collapse repeated x_b
    let mut knots: Vec<(f64, f64, usize)> = Vec::new();
    for p in al.path.samples() {
        match knots.last_mut() {
            Some(k) if k.0 == p[1] => {
                k.1 += p[0];
                k.2 += 1;
            }
            _ => knots.push((p[1], p[0], 1)),
        }
    }
    let knots: Vec<(f64, f64)> = knots.iter().map(|k| (k.0, k.1 / k.2 as f64)).collect();
    let at = |x: f64| -> f64 {
        let k = knots.partition_point(|q| q.0 < x);
        if k == 0 {
            return knots[0].1;
        }
        if k == knots.len() {
            return knots[k - 1].1;
        }
        let (x0, y0) = knots[k - 1];
        let (x1, y1) = knots[k];
        y0 + (x - x0) / (x1 - x0) * (y1 - y0)
    };
    let warp_err = (0..m)
        .map(|j| (at(j as f64) - (m - 1) as f64 * s(j) * s(j)).abs())
        .fold(0.0f64, f64::max);

    let same = align_profiles(&a, &a, &config).unwrap();
    let diag_err = same
        .path
        .samples()
        .iter()
        .map(|p| (p[0] - p[1]).abs())
        .fold(0.0f64, f64::max);
    outcome(
        warp_err <= 2.0 && diag_err <= config.epsilon,
        format!(
            "s^2 warp: max correspondence error {warp_err:.3} cells over {m} samples; \
             identical profiles: max off-diagonal {diag_err:.2e} (epsilon {})",
            config.epsilon
        ),
    )
}

// ---------------------------------------------------------------- 5

fn mean_fiber_fidelity() -> Outcome {
    let mut spec = SyntheticSpec::straight("quarter", 1.0, 30, 2.0).with_seed(5);
    spec.centerline = Centerline::Arc {
        center: [0.0, 0.0, 0.0],
        radius: 40.0,
        start_deg: 0.0,
        sweep_deg: 90.0,
    };
    let (bundle, truth) = generate_bundle(&spec).unwrap();
    let mean = mean_fiber(&bundle, 20, 100).unwrap();
    let arc_err = (mean.arc_length() - truth.arc_length).abs() / truth.arc_length;

    let helix = |t: f64| Vec3::new(t.cos(), t.sin(), 0.1 * t);
    let t_max = 4.0 * std::f64::consts::PI;
    let sampled = |n: usize| -> Vec<Vec3> {
        (0..n)
            .map(|k| helix(t_max * k as f64 / (n - 1) as f64))
            .collect()
    };
    let fiber = FiberStreamline::from_vertices(sampled(200)).unwrap();
    let degree = 20;
    let series = fit_cosine_series(&fiber, degree).unwrap();

    // independent oracle: SVD least squares on 10x denser vertices
    let dense = sampled(2000);
    let mut cum = vec![0.0];
    for w in dense.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let u: Vec<f64> = cum.iter().map(|c| c / total).collect();
    let basis = |u: f64, k: usize| (k as f64 * std::f64::consts::PI * u).cos();
    let design = DMatrix::from_fn(dense.len(), degree + 1, |i, k| basis(u[i], k));
    let svd = design.clone().svd(true, true);
    let mut oracle = Vec::new();
    for axis in 0..3 {
        let rhs = DMatrix::from_fn(dense.len(), 1, |i, _| dense[i][axis]);
        oracle.push(svd.solve(&rhs, 1e-14).unwrap());
    }
    let eval_oracle = |u: f64| -> Vec3 {
        let mut p = Vec3::zeros();
        for (axis, coef) in oracle.iter().enumerate() {
            p[axis] = (0..=degree).map(|k| coef[k] * basis(u, k)).sum();
        }
        p
    };
    let q = 1000;
    let rms_oracle = ((0..q)
        .map(|k| {
            let u = k as f64 / (q - 1) as f64;
            (series.eval(u) - eval_oracle(u)).norm_squared()
        })
        .sum::<f64>()
        / q as f64)
        .sqrt();
    let params = fiber.chord_parameters().unwrap();
    let rms_data = (fiber
        .vertices()
        .iter()
        .zip(&params)
        .map(|(v, u)| (series.eval(*u) - v).norm_squared())
        .sum::<f64>()
        / fiber.len() as f64)
        .sqrt();
    outcome(
        arc_err < 0.02 && rms_oracle < 0.02,
        format!(
            "quarter circle: mean-fiber arc {:.3} mm vs analytic {:.3} mm ({:.2}%); \
             helix K=20: RMS vs dense SVD oracle {rms_oracle:.4} mm (residual to vertices {rms_data:.4} mm)",
            mean.arc_length(),
            truth.arc_length,
            100.0 * arc_err
        ),
    )
}

// ---------------------------------------------------------------- 6

fn lesion_localization() -> Outcome {
    let (n_nc, n_pt) = (13, 17);
    let config = RunConfig::default();
    let lesion_center = 0.5;
    let lesion_width = 0.2;
    let mut coverage = Vec::new();
    let mut false_rate = Vec::new();
    for seed in 0..20u64 {
        let nc_specs: Vec<SyntheticSpec> = (0..n_nc)
            .map(|k| subject_spec(&format!("nc{k}"), 10_000 * (seed + 1) + k as u64, 0.03))
            .collect();
        let nc = profile_specs(&nc_specs, &config);
        let raw: Vec<TractProfile> = nc.iter().map(|c| c.0.clone()).collect();
        let sigma = median(mean_std(&raw).1);
        let lesion = Lesion {
            center: lesion_center,
            width: lesion_width,
            delta: -5.0 * sigma,
        };
        let pt_specs: Vec<SyntheticSpec> = (0..n_pt)
            .map(|k| {
                let mut s = subject_spec(
                    &format!("pt{k}"),
                    10_000 * (seed + 1) + 500 + k as u64,
                    0.03,
                );
                s.channels.get_mut("FA").unwrap().lesion = Some(lesion);
                s
            })
            .collect();
        let pt = profile_specs(&pt_specs, &config);
        let g = pipeline::group_stats(&nc, &pt, &config).unwrap();
        let m = g.stats.significant.len();
        let core = lesion.core_samples(m);
        let support = lesion.support_samples(m);
        let hit = core.iter().filter(|&&i| g.stats.significant[i]).count();
        let off: Vec<usize> = (0..m).filter(|i| !support.contains(i)).collect();
        let fp = off.iter().filter(|&&i| g.stats.significant[i]).count();
        coverage.push(hit as f64 / core.len() as f64);
        false_rate.push(fp as f64 / off.len() as f64);
    }
    let (cov, fpr) = (median(coverage.clone()), median(false_rate.clone()));
    let min_cov = coverage.iter().copied().fold(1.0f64, f64::min);
    let max_fpr = false_rate.iter().copied().fold(0.0f64, f64::max);
    outcome(
        cov >= 0.8 && fpr <= 0.1,
        format!(
            "median over 20 seeds: lesion-core coverage {:.1}% (min {:.1}%), off-lesion significant {:.1}% (max {:.1}%)",
            100.0 * cov,
            100.0 * min_cov,
            100.0 * fpr,
            100.0 * max_fpr
        ),
    )
}

// ---------------------------------------------------------------- 7

fn sensitivity_ordering() -> Outcome {
    let ffdd = RunConfig::default();
    let plain = RunConfig {
        plain: true,
        ..Default::default()
    };
    let mut ratios = Vec::new();
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let nc_specs: Vec<SyntheticSpec> = (0..15)
            .map(|k| subject_spec(&format!("nc{k}"), 7_000 + 100 * seed + k as u64, 0.02))
            .collect();
        let mut subject = subject_spec("subject", 9_000 + seed, 0.02);
        subject.fan_lesion = Some(Lesion {
            center: 0.5,
            width: 0.2,
            delta: 40.0,
        });
        let max_z = |config: &RunConfig| -> f64 {
            let nc = profile_specs(&nc_specs, config);
            let (atlas, _) = build_atlas(&nc, &config.align_config()).unwrap();
            let (bundle, _) = generate_bundle(&subject).unwrap();
            let (p, _, _) = pipeline::profile_bundle(&bundle, config).unwrap();
            let (mapped, _) =
                map_to_reference(&atlas.reference_profile, &p, &config.align_config()).unwrap();
            zscore_profile(&mapped, &atlas)
                .unwrap()
                .max_abs()
                .unwrap()
                .1
        };
        let (zf, zp) = (max_z(&ffdd), max_z(&plain));
        ratios.push(zf / zp);
        detail.push(format!("{zf:.1}/{zp:.1}"));
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min_ratio >= 2.0,
        format!(
            "fan-angle lesion, max|z| FFDD(FA) / plain mean FA per seed: [{}]; min ratio {min_ratio:.2}",
            detail.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 8

struct Fixture {
    a: &'static [f64],
    b: &'static [f64],
    welch: bool,
    t: f64,
    p: f64,
}

// Reference t and two-tailed p computed at 50 significant digits
// (tests/fixtures/ttest_reference.py).
const TTEST_FIXTURES: &[Fixture] = &[
    Fixture {
        a: &[0.541635, 0.447543, 0.538564, 0.304182, 0.374515],
        b: &[0.498166, 0.552817, 0.546907, 0.574901, 0.527506],
        welch: false,
        t: -2.0558646227477430311,
        p: 0.073832705852645197237,
    },
    Fixture {
        a: &[
            0.326618, 0.410608, 0.548972, 0.614535, 0.56544, 0.465428, 0.562967, 0.296003,
            0.602207, 0.585554, 0.622855, 0.440161, 0.585381,
        ],
        b: &[
            0.344495, 0.32389, 0.528241, 0.708572, 0.653724, 0.345227, 0.547253, 0.386653,
            0.476998, 0.561064, 0.393326, 0.644595, 0.469511, 0.653397, 0.555321, 0.480001,
            0.320205,
        ],
        welch: false,
        t: 0.36256519132679588636,
        p: 0.719652187606348244,
    },
    Fixture {
        a: &[0.514141, 0.509914, 0.485679],
        b: &[0.592801, 0.740102, 0.992933, 0.58178],
        welch: false,
        t: -1.9701860583670223253,
        p: 0.10589880571789109333,
    },
    Fixture {
        a: &[
            0.501983, 0.507201, 0.492202, 0.505374, 0.515729, 0.512325, 0.495773, 0.503049,
            0.494108, 0.505335,
        ],
        b: &[
            0.499921, 0.580084, 0.573782, 0.569424, 0.707055, 0.395253, 0.615775, 0.519132,
            0.55255, 0.386768,
        ],
        welch: false,
        t: -1.1972059065748632346,
        p: 0.24675587367861887727,
    },
    Fixture {
        a: &[
            0.351993, 0.513087, 0.613509, 0.418436, 0.496908, 0.683959, 0.458285, 0.421119,
        ],
        b: &[
            0.505125, 0.417095, 0.733775, 0.51081, 0.537957, 0.627977, 0.528239, 0.460815, 0.73054,
            0.591054, 0.618938, 0.624665, 0.584059, 0.705088, 0.528541, 0.56388, 0.356628,
            0.630372, 0.598875, 0.613181, 0.500433, 0.600831, 0.502568, 0.673447, 0.438575,
            0.685139, 0.667633, 0.626213, 0.638506, 0.617772,
        ],
        welch: false,
        t: -2.2540497837272691821,
        p: 0.03037544781682902917,
    },
    Fixture {
        a: &[
            0.557926, 0.705126, 0.467496, 0.586756, 0.309769, 0.651432, 0.547706, 0.570284,
            0.619288, 0.393009, 0.411425, 0.483096, 0.589827,
        ],
        b: &[
            0.456898, 0.534595, 0.579892, 0.545942, 0.647786, 0.715478, 0.509291, 0.739115,
            0.911236, 0.663219, 0.50483, 0.736819, 0.732447, 0.569435, 0.612832, 0.519806,
            0.691325,
        ],
        welch: true,
        t: -2.3142193005826772649,
        p: 0.028635180356210648557,
    },
    Fixture {
        a: &[0.838716, 0.26784, 0.175171, 0.313143],
        b: &[
            0.728572, 0.695405, 0.712417, 0.607093, 0.750351, 0.644389, 0.774774, 0.677864,
            0.584757,
        ],
        welch: true,
        t: -1.9040953926270333987,
        p: 0.1493666197671214502,
    },
    Fixture {
        a: &[
            0.496524, 0.476252, 0.495165, 0.495346, 0.525517, 0.505488, 0.525117, 0.515301,
            0.473942, 0.480162, 0.492387, 0.553895, 0.513272, 0.514349, 0.483539, 0.488233,
            0.515436, 0.528969, 0.528599, 0.541371,
        ],
        b: &[0.371027, 0.643254, 0.570004, 0.636445, 0.372604, 0.370744],
        welch: true,
        t: 0.23974249006121001908,
        p: 0.81990288735278201206,
    },
    Fixture {
        a: &[0.551584, 0.484892],
        b: &[0.873911, 0.93501],
        welch: false,
        t: -8.5401744330391676727,
        p: 0.013435226480699859911,
    },
    Fixture {
        a: &[
            0.367484, 0.547097, 0.591833, 0.523987, 0.696365, 0.360387, 0.698385, 0.664831,
            0.656854, 0.446402, 0.582477, 0.414113, 0.640842, 0.462663, 0.483647, 0.507448,
            0.618614, 0.39345, 0.46562, 0.444119, 0.516481, 0.158458, 0.54495, 0.532457, 0.41303,
            0.675837, 0.531123, 0.449662, 0.674319, 0.506355, 0.577509, 0.385346, 0.433494,
            0.280424, 0.529614, 0.549269, 0.437181, 0.306494, 0.710112, 0.641788, 0.510562,
            0.600649, 0.781256, 0.535891, 0.513946, 0.431915, 0.496693, 0.415981, 0.629597,
            0.523202,
        ],
        b: &[
            0.375609, 0.562244, 0.586942, 0.607703, 0.47688, 0.558586, 0.521505, 0.496319,
            0.521175, 0.484055, 0.588949, 0.451304, 0.672827, 0.48282, 0.494888, 0.551633,
            0.586813, 0.490892, 0.504693, 0.50524, 0.602304, 0.300321, 0.683055, 0.472307, 0.61178,
            0.269566, 0.573445, 0.590543, 0.528759, 0.388118, 0.551183, 0.750962, 0.458514,
            0.485448, 0.474428, 0.524657, 0.671753, 0.465869, 0.382625, 0.458721,
        ],
        welch: true,
        t: -0.08357999076168472912,
        p: 0.93358021933982109765,
    },
];

/// Hand-solved Benjamini-Hochberg cases: (p values, q, expected rejections).
const BH_FIXTURES: &[(&[f64], f64, &[bool])] = &[
    // thresholds k q / 5 = .01 .02 .03 .04 .05: every p passes its own rank
    (
        &[0.01, 0.02, 0.03, 0.04, 0.05],
        0.05,
        &[true, true, true, true, true],
    ),
    // only rank 1 meets its threshold (.01); every later p exceeds its own
    (
        &[0.01, 0.03, 0.035, 0.045, 0.9],
        0.05,
        &[true, false, false, false, false],
    ),
    // rank 2 (0.03 > 0.025) fails alone but rank 3 (0.035 <= 0.0375) rescues it
    (&[0.001, 0.03, 0.035, 0.9], 0.05, &[true, true, true, false]),
    // unsorted input, ties: sorted .002 .002 .02 .3 ; thresholds .025 .05 .075 .1
    (&[0.3, 0.002, 0.02, 0.002], 0.1, &[false, true, true, true]),
    // nothing passes
    (&[0.2, 0.5, 0.9], 0.05, &[false, false, false]),
];

fn statistics_oracles() -> Outcome {
    let mut bh_ok = true;
    for (p, q, expected) in BH_FIXTURES {
        bh_ok &= fdr_correct(p, *q).unwrap().significant == *expected;
    }
    let (mut worst_p, mut worst_t) = (0.0f64, 0.0f64);
    for f in TTEST_FIXTURES {
        let kind = if f.welch {
            TTestKind::Welch
        } else {
            TTestKind::Pooled
        };
        let r = two_sample_ttest(f.a, f.b, kind).unwrap();
        worst_p = worst_p.max((r.p - f.p).abs());
        worst_t = worst_t.max((r.t - f.t).abs() / f.t.abs());
    }
    outcome(
        bh_ok && worst_p <= 1e-9,
        format!(
            "BH {} hand-solved fixtures exact: {bh_ok}; t-test {} fixtures: max |dp| {worst_p:.1e}, max rel dt {worst_t:.1e}",
            BH_FIXTURES.len(),
            TTEST_FIXTURES.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_ffdd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FFDD_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{:?} failed: {}",
            args,
            String::from_utf8_lossy(&status.stderr)
        ))
    }
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(
                p.strip_prefix(dir).unwrap().to_path_buf(),
                std::fs::read(&p).unwrap(),
            );
        }
    }
    out
}

fn determinism_round_trip() -> Outcome {
    match determinism_inner() {
        Ok(d) => outcome(true, d),
        Err(e) => outcome(false, e),
    }
}

fn determinism_inner() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let (cohort_a, cohort_b) = (root.join("a"), root.join("b"));
    let specs = root.join("specs");
    std::fs::create_dir_all(&specs).unwrap();
    for (dir, prefix, lesion) in [(&cohort_a, "nc", false), (&cohort_b, "pt", true)] {
        for k in 0..4u64 {
            let mut s = subject_spec(&format!("{prefix}{k}"), 100 + k, 0.03);
            s.vertices_per_fiber = 30;
            if lesion {
                s.channels.get_mut("FA").unwrap().lesion = Some(Lesion {
                    center: 0.5,
                    width: 0.3,
                    delta: -0.1,
                });
            }
            let path = specs.join(format!("{prefix}{k}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&s).unwrap()).unwrap();
            run_cli(&["synth", path.to_str().unwrap()], dir)?;
        }
    }
    let spec0 = specs.join("nc0.json");
    let nc0 = cohort_a.join("nc0.bundle");
    let pt0 = cohort_b.join("pt0.bundle");
    let fast = ["--samples", "40"];
    let mut commands: Vec<(String, Vec<String>)> = vec![
        (
            "synth".into(),
            vec![
                "synth".into(),
                spec0.display().to_string(),
                "--seed".into(),
                "7".into(),
            ],
        ),
        (
            "profile".into(),
            vec!["profile".into(), nc0.display().to_string()],
        ),
        (
            "compare".into(),
            vec![
                "compare".into(),
                nc0.display().to_string(),
                pt0.display().to_string(),
            ],
        ),
        (
            "atlas".into(),
            vec!["atlas".into(), cohort_a.display().to_string()],
        ),
        (
            "groupstats".into(),
            vec![
                "groupstats".into(),
                cohort_a.display().to_string(),
                cohort_b.display().to_string(),
            ],
        ),
    ];
    for (_, args) in commands.iter_mut().skip(1) {
        args.extend(fast.iter().map(|s| s.to_string()));
    }
    let mut checked = 0;
    for (name, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (o1, o2) = (root.join(format!("{name}1")), root.join(format!("{name}2")));
        run_cli(&args, &o1)?;
        run_cli(&args, &o2)?;
        let (f1, f2) = (files(&o1), files(&o2));
        if f1.is_empty() || f1 != f2 {
            return Err(format!("{name}: outputs differ between reruns"));
        }
        checked += f1.len();
    }
    // z-scores against the atlas written above
    let atlas = root.join("atlas1").join("atlas.json");
    let args = [
        "zscore",
        pt0.to_str().unwrap(),
        atlas.to_str().unwrap(),
        "--samples",
        "40",
    ];
    let (o1, o2) = (root.join("zscore1"), root.join("zscore2"));
    run_cli(&args, &o1)?;
    run_cli(&args, &o2)?;
    let (f1, f2) = (files(&o1), files(&o2));
    if f1 != f2 {
        return Err("zscore: outputs differ between reruns".into());
    }
    checked += f1.len();

    // round trips
    let text = std::fs::read_to_string(&nc0).unwrap();
    let bundle = parse_bundle(&text).map_err(|e| e.to_string())?;
    if format_bundle(&bundle) != text || parse_bundle(&format_bundle(&bundle)).unwrap() != bundle {
        return Err("bundle text does not round-trip".into());
    }
    let profile = export::import_profile(root.join("profile1").join("profile.json"))
        .map_err(|e| e.to_string())?;
    let csv_profile = export::import_profile(root.join("profile1").join("profile.csv"))
        .map_err(|e| e.to_string())?;
    let profile_err = profile
        .entries()
        .iter()
        .zip(csv_profile.entries())
        .map(|(a, b)| {
            (a.magnitude - b.magnitude)
                .abs()
                .max((a.direction - b.direction).amax())
        })
        .fold(0.0f64, f64::max);
    let again = export::parse_profile_json(&export::profile_json(&profile, None).unwrap()).unwrap();
    let atlas_in = export::import_atlas(&atlas).map_err(|e| e.to_string())?;
    let atlas_again =
        export::parse_atlas_json(&export::atlas_json(&atlas_in, None).unwrap()).unwrap();
    let atlas_err = atlas_in
        .mean
        .iter()
        .zip(&atlas_again.mean)
        .chain(atlas_in.std.iter().zip(&atlas_again.std))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if profile_err > 1e-12 || again != profile || atlas_err > 1e-12 || atlas_again != atlas_in {
        return Err(format!(
            "round-trip error: profile {profile_err:.1e}, atlas {atlas_err:.1e}"
        ));
    }
    Ok(format!(
        "6 commands x 2 runs, {checked} output files byte-identical; bundle text bit-exact; \
         profile csv/json diff {profile_err:.1e}, atlas json diff {atlas_err:.1e}"
    ))
}
