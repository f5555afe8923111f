//! Minimal static SVG line plots.
//!
//! Output is a pure function of the input series, with fixed-precision
//! coordinates, so plots are byte-stable across runs.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    /// `None` leaves a gap in the line.
    pub y: Vec<Option<f64>>,
}

impl Series {
    pub fn new(label: impl Into<String>, x: &[f64], y: &[f64]) -> Self {
        Self {
            label: label.into(),
            x: x.to_vec(),
            y: y.iter().map(|v| Some(*v)).collect(),
        }
    }

    pub fn with_gaps(label: impl Into<String>, x: &[f64], y: &[Option<f64>]) -> Self {
        Self {
            label: label.into(),
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }
}

/// Shaded band between `lower` and `upper`.
#[derive(Debug, Clone)]
pub struct Band {
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Markers drawn along the x-axis, e.g. significant samples.
#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
    pub markers: Vec<f64>,
    /// Colour each point of the first series by this value on a diverging scale.
    pub colour_by: Option<Vec<Option<f64>>>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Blue-white-red for values in units of `scale`.
fn diverging(v: f64, scale: f64) -> String {
    let t = (v / scale).clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

impl Plot {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Default::default()
        }
    }

    pub fn render(&self) -> String {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.x.iter())
            .chain(self.bands.iter().flat_map(|b| b.x.iter()));
        let (x0, x1) = bounds(xs);
        let ys: Vec<f64> = self
            .series
            .iter()
            .flat_map(|s| s.y.iter().flatten().copied())
            .chain(
                self.bands
                    .iter()
                    .flat_map(|b| b.lower.iter().chain(&b.upper).copied()),
            )
            .collect();
        let (y0, y1) = bounds(ys.iter());
        let f = Frame { x0, x1, y0, y1 };

        let mut out = String::new();
        let _ = writeln!(
            out,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"##
        );
        let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"##,
            WIDTH / 2.0,
            escape(&self.title)
        );
        // axes with min/max tick labels
        let _ = writeln!(
            out,
            r##"<path d="M{m:.1} {t:.1} V{b:.1} H{r:.1}" stroke="black" fill="none"/>"##,
            m = MARGIN,
            t = MARGIN,
            b = HEIGHT - MARGIN,
            r = WIDTH - MARGIN
        );
        for (v, anchor, x, y) in [
            (x0, "start", MARGIN, HEIGHT - MARGIN + 14.0),
            (x1, "end", WIDTH - MARGIN, HEIGHT - MARGIN + 14.0),
        ] {
            let _ = writeln!(
                out,
                r##"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.3}</text>"##
            );
        }
        for (v, y) in [(y0, HEIGHT - MARGIN), (y1, MARGIN)] {
            let _ = writeln!(
                out,
                r##"<text x="{:.1}" y="{y:.1}" text-anchor="end">{v:.3}</text>"##,
                MARGIN - 4.0
            );
        }
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r##"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"##,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );

        for band in &self.bands {
            let mut d = String::new();
            for (k, (x, y)) in band.x.iter().zip(&band.upper).enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2} {:.2} ",
                    if k == 0 { "M" } else { "L" },
                    f.px(*x),
                    f.py(*y)
                );
            }
            for (x, y) in band.x.iter().zip(&band.lower).rev() {
                let _ = write!(d, "L{:.2} {:.2} ", f.px(*x), f.py(*y));
            }
            let _ = writeln!(
                out,
                r##"<path d="{}Z" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
                d
            );
        }

        for (k, s) in self.series.iter().enumerate() {
            let colour = PALETTE[k % PALETTE.len()];
            let mut d = String::new();
            let mut pen_up = true;
            for (x, y) in s.x.iter().zip(&s.y) {
                match y {
                    Some(y) if y.is_finite() => {
                        let _ = write!(
                            d,
                            "{}{:.2} {:.2} ",
                            if pen_up { "M" } else { "L" },
                            f.px(*x),
                            f.py(*y)
                        );
                        pen_up = false;
                    }
                    _ => pen_up = true,
                }
            }
            let _ = writeln!(
                out,
                r##"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"##,
                d.trim_end()
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.1}" y="{:.1}" fill="{colour}">{}</text>"##,
                WIDTH - MARGIN - 120.0,
                MARGIN + 14.0 * k as f64,
                escape(&s.label)
            );
        }

        if let (Some(values), Some(first)) = (&self.colour_by, self.series.first()) {
            let scale = values
                .iter()
                .flatten()
                .fold(0.0f64, |a, v| a.max(v.abs()))
                .max(1e-12);
            for ((x, y), v) in first.x.iter().zip(&first.y).zip(values) {
                if let (Some(y), Some(v)) = (y, v) {
                    let _ = writeln!(
                        out,
                        r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" stroke="#444" stroke-width="0.3"/>"##,
                        f.px(*x),
                        f.py(*y),
                        diverging(*v, scale)
                    );
                }
            }
        }

        for x in &self.markers {
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.1}" width="3" height="6" fill="#d62728"/>"##,
                f.px(*x) - 1.5,
                HEIGHT - MARGIN - 8.0
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_well_formed() {
        let x: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let mut p = Plot::new("a < b", "s", "y");
        p.series
            .push(Series::new("one", &x, &[1.0, 2.0, 3.0, 2.0, 1.0]));
        p.series.push(Series::with_gaps(
            "two",
            &x,
            &[Some(0.0), None, Some(1.0), Some(1.0), None],
        ));
        p.bands.push(Band {
            x: x.clone(),
            lower: vec![0.0; 5],
            upper: vec![1.0; 5],
        });
        p.colour_by = Some(vec![Some(-2.0), Some(0.0), None, Some(1.0), Some(2.0)]);
        p.markers.push(0.5);
        let a = p.render();
        assert_eq!(a, p.render());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a &lt; b"));
        assert_eq!(a.matches("<circle").count(), 4);
    }

    #[test]
    fn flat_series_gets_padded_range() {
        let mut p = Plot::new("", "", "");
        p.series.push(Series::new("c", &[0.0, 1.0], &[0.7, 0.7]));
        assert!(!p.render().contains("NaN"));
    }

    #[test]
    fn diverging_endpoints() {
        assert_eq!(diverging(1.0, 1.0), "#ff0000");
        assert_eq!(diverging(-1.0, 1.0), "#0000ff");
        assert_eq!(diverging(0.0, 1.0), "#ffffff");
    }
}
