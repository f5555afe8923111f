//! CSV and JSON exports of profiles, atlases, statistics and anomaly maps.
//!
//! CSV columns:
//! * profile: `index,arc_fraction,magnitude,dir_x,dir_y,dir_z,channel`
//! * stats: `index,arc_fraction,t,p,q,significant`
//! * anomaly: `index,arc_fraction,z` (`null` where undefined)
//!
//! JSON documents carry a `version` field and an optional `config` object.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::descriptor::{FfddVector, Measure, TractProfile};
use crate::error::{Error, Result};
use crate::io::bundle_file::fmt_f64;
use crate::stats::{AnomalyMap, GroupAtlas, PointwiseStats};
use crate::Vec3;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Format::Csv),
            Some("json") => Ok(Format::Json),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer csv/json format from {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format `{s}`"))),
        }
    }
}

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn csv_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        offset: 0,
        message: message.into(),
    }
}

fn parse_cell<T: FromStr>(cell: &str, line: usize) -> Result<T> {
    cell.trim()
        .parse()
        .map_err(|_| csv_err(line, format!("invalid value `{cell}`")))
}

/// Rows of a CSV with a fixed header, split on commas.
fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(csv_err(1, format!("expected header `{header}`"))),
    }
    let columns = header.split(',').count();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != columns {
                Err(csv_err(
                    i + 1,
                    format!("expected {columns} columns, found {}", cells.len()),
                ))
            } else {
                Ok((i + 1, cells))
            }
        })
        .collect()
}

// ---------------------------------------------------------------- profiles

pub const PROFILE_HEADER: &str = "index,arc_fraction,magnitude,dir_x,dir_y,dir_z,channel";

#[derive(Debug, Serialize, Deserialize)]
struct ProfileDoc {
    version: u32,
    bundle: String,
    channel: String,
    #[serde(rename = "M")]
    m: usize,
    arc_length: f64,
    arc_fraction: Vec<f64>,
    magnitude: Vec<f64>,
    direction: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

pub fn profile_csv(profile: &TractProfile) -> String {
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    let channel = profile.measure().to_string();
    for (i, (e, s)) in profile
        .entries()
        .iter()
        .zip(profile.arc_positions())
        .enumerate()
    {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{channel}",
            fmt_f64(*s),
            fmt_f64(e.magnitude),
            fmt_f64(e.direction.x),
            fmt_f64(e.direction.y),
            fmt_f64(e.direction.z),
        );
    }
    out
}

pub fn profile_json(profile: &TractProfile, config: Option<&serde_json::Value>) -> Result<String> {
    to_json(&ProfileDoc {
        version: SCHEMA_VERSION,
        bundle: profile.bundle_name().to_string(),
        channel: profile.measure().to_string(),
        m: profile.len(),
        arc_length: profile.arc_length(),
        arc_fraction: profile.arc_positions().to_vec(),
        magnitude: profile.magnitudes(),
        direction: profile
            .entries()
            .iter()
            .map(|e| arr(&e.direction))
            .collect(),
        config: config.cloned(),
    })
}

pub fn export_profile(
    profile: &TractProfile,
    path: impl AsRef<Path>,
    format: Format,
    config: Option<&serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        Format::Csv => profile_csv(profile),
        Format::Json => profile_json(profile, config)?,
    };
    write(path, text)
}

/// Reads a profile written by [`export_profile`]. CSV carries neither the
/// bundle name nor the arc length; those come back as the file stem and 0.
pub fn import_profile(path: impl AsRef<Path>) -> Result<TractProfile> {
    let path = path.as_ref();
    let text = read(path)?;
    match Format::from_path(path)? {
        Format::Json => parse_profile_json(&text),
        Format::Csv => {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("profile");
            parse_profile_csv(&text, name)
        }
    }
}

pub fn parse_profile_json(text: &str) -> Result<TractProfile> {
    let doc: ProfileDoc = serde_json::from_str(text)?;
    check_version(doc.version)?;
    let n = doc.magnitude.len();
    if doc.m != n || doc.direction.len() != n || doc.arc_fraction.len() != n {
        return Err(Error::CountMismatch {
            what: "profile samples",
            declared: doc.m,
            found: n,
        });
    }
    let entries = doc
        .magnitude
        .iter()
        .zip(&doc.direction)
        .map(|(m, d)| FfddVector {
            magnitude: *m,
            direction: Vec3::from(*d),
        })
        .collect();
    TractProfile::new(
        entries,
        doc.arc_fraction,
        doc.bundle,
        doc.channel.parse()?,
        doc.arc_length,
    )
}

pub fn parse_profile_csv(text: &str, name: &str) -> Result<TractProfile> {
    let rows = csv_rows(text, PROFILE_HEADER)?;
    let mut entries = Vec::with_capacity(rows.len());
    let mut arc = Vec::with_capacity(rows.len());
    let mut measure: Option<Measure> = None;
    for (k, (line, cells)) in rows.iter().enumerate() {
        let index: usize = parse_cell(cells[0], *line)?;
        if index != k {
            return Err(csv_err(*line, format!("expected index {k}, found {index}")));
        }
        arc.push(parse_cell(cells[1], *line)?);
        entries.push(FfddVector {
            magnitude: parse_cell(cells[2], *line)?,
            direction: Vec3::new(
                parse_cell(cells[3], *line)?,
                parse_cell(cells[4], *line)?,
                parse_cell(cells[5], *line)?,
            ),
        });
        let m: Measure = cells[6].parse()?;
        match &measure {
            Some(prev) if *prev != m => {
                return Err(Error::ChannelMismatch(prev.to_string(), m.to_string()))
            }
            _ => measure = Some(m),
        }
    }
    let measure = measure.ok_or_else(|| csv_err(2, "profile has no rows"))?;
    TractProfile::new(entries, arc, name, measure, 0.0)
}

fn check_version(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::VersionMismatch {
            found: v,
            expected: SCHEMA_VERSION,
        })
    }
}

// ---------------------------------------------------------------- atlas

#[derive(Debug, Serialize, Deserialize)]
struct VectorDoc {
    magnitude: f64,
    direction: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct AtlasDoc {
    version: u32,
    channel: String,
    #[serde(rename = "M")]
    m: usize,
    cohort_size: usize,
    arc_fraction: Vec<f64>,
    arc_length: f64,
    mean: Vec<f64>,
    std: Vec<f64>,
    reference_profile: Vec<VectorDoc>,
    reference_fiber: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

pub fn atlas_json(atlas: &GroupAtlas, config: Option<&serde_json::Value>) -> Result<String> {
    let r = &atlas.reference_profile;
    to_json(&AtlasDoc {
        version: SCHEMA_VERSION,
        channel: atlas.measure().to_string(),
        m: atlas.len(),
        cohort_size: atlas.cohort_size,
        arc_fraction: r.arc_positions().to_vec(),
        arc_length: r.arc_length(),
        mean: atlas.mean.clone(),
        std: atlas.std.clone(),
        reference_profile: r
            .entries()
            .iter()
            .map(|e| VectorDoc {
                magnitude: e.magnitude,
                direction: arr(&e.direction),
            })
            .collect(),
        reference_fiber: atlas.reference_fiber.iter().map(arr).collect(),
        config: config.cloned(),
    })
}

pub fn atlas_csv(atlas: &GroupAtlas) -> String {
    let mut out = String::from("index,arc_fraction,mean,std,ref_magnitude,ref_x,ref_y,ref_z\n");
    for (i, ((s, e), (mu, sd))) in atlas
        .arc_positions()
        .iter()
        .zip(atlas.reference_profile.entries())
        .zip(atlas.mean.iter().zip(&atlas.std))
        .enumerate()
    {
        let p = atlas
            .reference_fiber
            .get(i)
            .copied()
            .unwrap_or_else(Vec3::zeros);
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{}",
            fmt_f64(*s),
            fmt_f64(*mu),
            fmt_f64(*sd),
            fmt_f64(e.magnitude),
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.z)
        );
    }
    out
}

pub fn export_atlas(
    atlas: &GroupAtlas,
    path: impl AsRef<Path>,
    format: Format,
    config: Option<&serde_json::Value>,
) -> Result<()> {
    let text = match format {
        Format::Json => atlas_json(atlas, config)?,
        Format::Csv => atlas_csv(atlas),
    };
    write(path.as_ref(), text)
}

pub fn import_atlas(path: impl AsRef<Path>) -> Result<GroupAtlas> {
    let path = path.as_ref();
    match Format::from_path(path)? {
        Format::Json => parse_atlas_json(&read(path)?),
        Format::Csv => Err(Error::InvalidArgument(
            "atlases are imported from JSON".into(),
        )),
    }
}

pub fn parse_atlas_json(text: &str) -> Result<GroupAtlas> {
    let doc: AtlasDoc = serde_json::from_str(text)?;
    check_version(doc.version)?;
    let n = doc.m;
    for len in [
        doc.mean.len(),
        doc.std.len(),
        doc.arc_fraction.len(),
        doc.reference_profile.len(),
    ] {
        if len != n {
            return Err(Error::CountMismatch {
                what: "atlas samples",
                declared: n,
                found: len,
            });
        }
    }
    if let Some(s) = doc.std.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative atlas std {s}")));
    }
    let entries = doc
        .reference_profile
        .iter()
        .map(|v| FfddVector {
            magnitude: v.magnitude,
            direction: Vec3::from(v.direction),
        })
        .collect();
    let reference_profile = TractProfile::new(
        entries,
        doc.arc_fraction,
        "reference",
        doc.channel.parse()?,
        doc.arc_length,
    )?;
    Ok(GroupAtlas {
        reference_profile,
        reference_fiber: doc.reference_fiber.into_iter().map(Vec3::from).collect(),
        mean: doc.mean,
        std: doc.std,
        cohort_size: doc.cohort_size,
    })
}

// ---------------------------------------------------------------- stats

pub const STATS_HEADER: &str = "index,arc_fraction,t,p,q,significant";

#[derive(Debug, Serialize, Deserialize)]
struct StatsDoc {
    version: u32,
    channel: String,
    #[serde(rename = "M")]
    m: usize,
    n_a: usize,
    n_b: usize,
    fdr_level: f64,
    arc_fraction: Vec<f64>,
    /// `null` where the statistic is not finite (zero variance in both groups).
    t: Vec<Option<f64>>,
    p: Vec<f64>,
    q: Vec<f64>,
    significant: Vec<bool>,
    degenerate: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "null".into())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn stats_csv(stats: &PointwiseStats) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for i in 0..stats.p_values.len() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{}",
            fmt_f64(stats.arc_positions[i]),
            opt_cell(finite(stats.t_statistics[i])),
            fmt_f64(stats.p_values[i]),
            fmt_f64(stats.q_values[i]),
            stats.significant[i]
        );
    }
    out
}

pub fn stats_json(
    stats: &PointwiseStats,
    channel: &Measure,
    config: Option<&serde_json::Value>,
) -> Result<String> {
    to_json(&StatsDoc {
        version: SCHEMA_VERSION,
        channel: channel.to_string(),
        m: stats.p_values.len(),
        n_a: stats.n_a,
        n_b: stats.n_b,
        fdr_level: stats.fdr_level,
        arc_fraction: stats.arc_positions.clone(),
        t: stats.t_statistics.iter().copied().map(finite).collect(),
        p: stats.p_values.clone(),
        q: stats.q_values.clone(),
        significant: stats.significant.clone(),
        degenerate: stats.degenerate.clone(),
        config: config.cloned(),
    })
}

pub fn export_stats(
    stats: &PointwiseStats,
    channel: &Measure,
    path: impl AsRef<Path>,
    format: Format,
    config: Option<&serde_json::Value>,
) -> Result<()> {
    let text = match format {
        Format::Csv => stats_csv(stats),
        Format::Json => stats_json(stats, channel, config)?,
    };
    write(path.as_ref(), text)
}

/// Reads stats JSON; non-finite t statistics come back as NaN.
pub fn parse_stats_json(text: &str) -> Result<PointwiseStats> {
    let doc: StatsDoc = serde_json::from_str(text)?;
    check_version(doc.version)?;
    for len in [
        doc.t.len(),
        doc.p.len(),
        doc.q.len(),
        doc.significant.len(),
        doc.degenerate.len(),
        doc.arc_fraction.len(),
    ] {
        if len != doc.m {
            return Err(Error::CountMismatch {
                what: "stats samples",
                declared: doc.m,
                found: len,
            });
        }
    }
    Ok(PointwiseStats {
        t_statistics: doc.t.iter().map(|t| t.unwrap_or(f64::NAN)).collect(),
        p_values: doc.p,
        q_values: doc.q,
        significant: doc.significant,
        degenerate: doc.degenerate,
        arc_positions: doc.arc_fraction,
        n_a: doc.n_a,
        n_b: doc.n_b,
        fdr_level: doc.fdr_level,
    })
}

/// One stats CSV row: `(arc_fraction, t, p, q, significant)`.
pub type StatsRow = (f64, Option<f64>, f64, f64, bool);

pub fn parse_stats_csv(text: &str) -> Result<Vec<StatsRow>> {
    csv_rows(text, STATS_HEADER)?
        .into_iter()
        .map(|(line, c)| {
            let t = match c[2].trim() {
                "null" => None,
                v => Some(parse_cell(v, line)?),
            };
            Ok((
                parse_cell(c[1], line)?,
                t,
                parse_cell(c[3], line)?,
                parse_cell(c[4], line)?,
                parse_cell(c[5], line)?,
            ))
        })
        .collect()
}

// ---------------------------------------------------------------- anomaly maps

pub const ANOMALY_HEADER: &str = "index,arc_fraction,z";

#[derive(Debug, Serialize, Deserialize)]
struct AnomalyDoc {
    version: u32,
    channel: String,
    #[serde(rename = "M")]
    m: usize,
    arc_fraction: Vec<f64>,
    z: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

pub fn anomaly_csv(map: &AnomalyMap) -> String {
    let mut out = String::from(ANOMALY_HEADER);
    out.push('\n');
    for (i, (s, z)) in map.arc_positions.iter().zip(&map.z_scores).enumerate() {
        let _ = writeln!(out, "{i},{},{}", fmt_f64(*s), opt_cell(*z));
    }
    out
}

pub fn anomaly_json(
    map: &AnomalyMap,
    channel: &Measure,
    config: Option<&serde_json::Value>,
) -> Result<String> {
    to_json(&AnomalyDoc {
        version: SCHEMA_VERSION,
        channel: channel.to_string(),
        m: map.z_scores.len(),
        arc_fraction: map.arc_positions.clone(),
        z: map.z_scores.clone(),
        config: config.cloned(),
    })
}

pub fn export_anomaly(
    map: &AnomalyMap,
    channel: &Measure,
    path: impl AsRef<Path>,
    format: Format,
    config: Option<&serde_json::Value>,
) -> Result<()> {
    let text = match format {
        Format::Csv => anomaly_csv(map),
        Format::Json => anomaly_json(map, channel, config)?,
    };
    write(path.as_ref(), text)
}

pub fn parse_anomaly_json(text: &str) -> Result<AnomalyMap> {
    let doc: AnomalyDoc = serde_json::from_str(text)?;
    check_version(doc.version)?;
    if doc.z.len() != doc.m || doc.arc_fraction.len() != doc.m {
        return Err(Error::CountMismatch {
            what: "anomaly samples",
            declared: doc.m,
            found: doc.z.len(),
        });
    }
    Ok(AnomalyMap {
        z_scores: doc.z,
        arc_positions: doc.arc_fraction,
    })
}

pub fn parse_anomaly_csv(text: &str) -> Result<AnomalyMap> {
    let rows = csv_rows(text, ANOMALY_HEADER)?;
    let mut map = AnomalyMap {
        z_scores: Vec::with_capacity(rows.len()),
        arc_positions: Vec::with_capacity(rows.len()),
    };
    for (line, c) in rows {
        map.arc_positions.push(parse_cell(c[1], line)?);
        map.z_scores.push(match c[2].trim() {
            "null" => None,
            v => Some(parse_cell(v, line)?),
        });
    }
    Ok(map)
}
