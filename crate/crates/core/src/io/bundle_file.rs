//! Line-oriented text format for fiber bundles.
//!
//! ```text
//! version 1
//! name <bundle name, rest of line>
//! channels <ch1> <ch2> ...
//! fibers <N>
//! <vertex count of fiber 0>
//! x y z <ch1> <ch2> ...
//! ...
//! <vertex count of fiber 1>
//! ...
//! ```
//!
//! Channels are written in sorted order. Numbers use the shortest decimal
//! representation that parses back to the same `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::bundle::{FiberBundle, FiberStreamline};
use crate::error::{Error, Result};
use crate::Vec3;

pub const FORMAT_VERSION: u32 = 1;

/// Shortest round-trip decimal form of `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn format_bundle(bundle: &FiberBundle) -> String {
    let channels = bundle.channel_names();
    let mut out = String::new();
    let _ = writeln!(out, "version {FORMAT_VERSION}");
    let _ = writeln!(out, "name {}", bundle.name());
    out.push_str("channels");
    for c in &channels {
        out.push(' ');
        out.push_str(c);
    }
    out.push('\n');
    let _ = writeln!(out, "fibers {}", bundle.len());
    for fiber in bundle.fibers() {
        let _ = writeln!(out, "{}", fiber.len());
        let columns: Vec<&[f64]> = channels.iter().map(|c| fiber.channel(c).unwrap()).collect();
        for (k, v) in fiber.vertices().iter().enumerate() {
            let _ = write!(out, "{} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z));
            for col in &columns {
                out.push(' ');
                out.push_str(&fmt_f64(col[k]));
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_bundle(bundle: &FiberBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_bundle(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<FiberBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bundle(&text)
}

struct Lines<'a> {
    text: &'a str,
    offset: usize,
    line: usize,
}

impl<'a> Lines<'a> {
    /// Next line with its 1-based number and starting byte offset.
    fn next(&mut self, expecting: &str) -> Result<(&'a str, usize, usize)> {
        if self.offset >= self.text.len() {
            return Err(Error::Parse {
                line: self.line + 1,
                offset: self.offset,
                message: format!("unexpected end of file, expected {expecting}"),
            });
        }
        let rest = &self.text[self.offset..];
        let len = rest.find('\n').unwrap_or(rest.len());
        let start = self.offset;
        self.offset += (len + 1).min(rest.len());
        self.line += 1;
        Ok((rest[..len].trim_end_matches('\r'), self.line, start))
    }

    fn at_end(&self) -> bool {
        self.text[self.offset.min(self.text.len())..]
            .trim()
            .is_empty()
    }
}

fn perr(line: usize, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        offset,
        message: message.into(),
    }
}

fn keyword<'a>(lines: &mut Lines<'a>, key: &str) -> Result<(&'a str, usize, usize)> {
    let (text, line, offset) = lines.next(&format!("`{key}` header"))?;
    let rest = text
        .strip_prefix(key)
        .filter(|r| r.is_empty() || r.starts_with(' '))
        .ok_or_else(|| {
            perr(
                line,
                offset,
                format!("expected `{key}` header, found `{text}`"),
            )
        })?;
    Ok((rest.strip_prefix(' ').unwrap_or(rest), line, offset))
}

fn parse_count(text: &str, line: usize, offset: usize, what: &str) -> Result<usize> {
    text.trim()
        .parse()
        .map_err(|_| perr(line, offset, format!("invalid {what} `{}`", text.trim())))
}

pub fn parse_bundle(text: &str) -> Result<FiberBundle> {
    let mut lines = Lines {
        text,
        offset: 0,
        line: 0,
    };
    let (v, line, offset) = keyword(&mut lines, "version")?;
    let version: u32 = parse_count(v, line, offset, "version")? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (name, _, _) = keyword(&mut lines, "name")?;
    let (chan, line, offset) = keyword(&mut lines, "channels")?;
    let channels: Vec<String> = chan.split_whitespace().map(str::to_string).collect();
    for (k, c) in channels.iter().enumerate() {
        if channels[..k].contains(c) {
            return Err(perr(line, offset, format!("duplicate channel `{c}`")));
        }
    }
    let (n, line, offset) = keyword(&mut lines, "fibers")?;
    let declared = parse_count(n, line, offset, "fiber count")?;

    let mut fibers = Vec::with_capacity(declared);
    while fibers.len() < declared || !lines.at_end() {
        let index = fibers.len();
        let (count_text, line, offset) = lines.next(&format!("vertex count of fiber {index}"))?;
        let count = parse_count(count_text, line, offset, "vertex count")?;
        let mut vertices = Vec::with_capacity(count);
        let mut columns = vec![Vec::with_capacity(count); channels.len()];
        for _ in 0..count {
            let (row, line, offset) = lines.next(&format!("vertex row of fiber {index}"))?;
            let values: Vec<f64> = row
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| perr(line, offset, format!("invalid number `{t}`")))
                })
                .collect::<Result<_>>()?;
            if values.len() != 3 + channels.len() {
                return Err(perr(
                    line,
                    offset,
                    format!(
                        "expected {} columns, found {}",
                        3 + channels.len(),
                        values.len()
                    ),
                ));
            }
            vertices.push(Vec3::new(values[0], values[1], values[2]));
            for (col, v) in columns.iter_mut().zip(&values[3..]) {
                col.push(*v);
            }
        }
        let scalars: BTreeMap<String, Vec<f64>> = channels.iter().cloned().zip(columns).collect();
        if let Some(fa) = scalars.get("FA") {
            if let Some(v) = fa.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Validation {
                    fiber: index,
                    channel: "FA".into(),
                    message: format!("value {v} outside [0, 1]"),
                });
            }
        }
        let fiber = FiberStreamline::new(vertices, scalars).map_err(|e| Error::Fiber {
            index,
            source: Box::new(e),
        })?;
        fibers.push(fiber);
    }
    if fibers.len() != declared {
        return Err(Error::CountMismatch {
            what: "fibers",
            declared,
            found: fibers.len(),
        });
    }
    FiberBundle::new(name, fibers)
}
