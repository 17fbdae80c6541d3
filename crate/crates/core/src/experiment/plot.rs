//! Standalone SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { label: label.into(), x, y }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AxesSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if log && v <= 0.0 {
                return Err(Error::Domain(format!("log axis cannot show {v}")));
            }
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            let pad = if log { 1.0 } else { lo.abs().max(1.0) * 0.05 };
            lo -= pad;
            hi += pad;
        }
        Ok(Self { lo, hi, log })
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// `(position in axis units, label)`.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            return (self.lo as i32..=self.hi as i32).map(|k| (f64::from(k), format!("1e{k}"))).collect();
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut out = Vec::new();
        let mut t = (self.lo / step).ceil() * step;
        while t <= self.hi + step * 1e-9 {
            let label = if t.abs() < step * 1e-9 { "0".to_string() } else { format!("{}", (t / step).round() * step) };
            out.push((t, trim_float(&label)));
            t += step;
        }
        out
    }
}

fn trim_float(s: &str) -> String {
    // Display of values like 0.30000000000000004.
    match s.parse::<f64>() {
        Ok(v) => {
            let short = format!("{v:.6}");
            short.trim_end_matches('0').trim_end_matches('.').to_string()
        }
        Err(_) => s.to_string(),
    }
}

/// Renders series as an SVG document.
pub fn render_svg(series: &[Series], axes: &AxesSpec) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.x.is_empty()) {
        return Err(Error::Domain("nothing to plot".into()));
    }
    for s in series {
        if s.x.len() != s.y.len() {
            return Err(Error::Dimension(format!("series {:?}: {} x vs {} y values", s.label, s.x.len(), s.y.len())));
        }
        if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("series {:?} has non-finite values", s.label)));
        }
    }
    let ax = Axis::fit(series.iter().flat_map(|s| s.x.iter().copied()), axes.log_x)?;
    let ay = Axis::fit(series.iter().flat_map(|s| s.y.iter().copied()), axes.log_y)?;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + ax.unit(v) * pw;
    let py = |v: f64| TOP + (1.0 - ay.unit(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&axes.title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (t, label) in ax.ticks() {
        let x = LEFT + (t - ax.lo) / (ax.hi - ax.lo) * pw;
        let _ = writeln!(s, r##"<line class="xtick" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, escape(&label));
    }
    for (t, label) in ay.ticks() {
        let y = TOP + (1.0 - (t - ay.lo) / (ay.hi - ay.lo)) * ph;
        let _ = writeln!(s, r##"<line class="ytick" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, escape(&label));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 14.0, escape(&axes.x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&axes.y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = ser.x.iter().zip(&ser.y).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        if pts.len() > 1 {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        for (&x, &y) in ser.x.iter().zip(&ser.y) {
            let _ = writeln!(s, r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(s, r#"<line class="legend" x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg_plot(series: &[Series], path: &Path, axes: &AxesSpec) -> Result<()> {
    std::fs::write(path, render_svg(series, axes)?)?;
    Ok(())
}
