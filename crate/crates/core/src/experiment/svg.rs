use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use super::{SweepAxis, SweepResult};
use crate::format::sig17;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const EMPIRICAL_COLOR: &str = "#1f77b4";
const BOUND_COLOR: &str = "#d62728";
const GRID_COLOR: &str = "#dddddd";
const FRAME_COLOR: &str = "#999999";

/// Maps a positive range onto a pixel interval on a log scale.
struct LogScale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl LogScale {
    fn new(min: f64, max: f64, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = (min.log10(), max.log10());
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        Self {
            lo,
            hi,
            px_lo,
            px_hi,
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v.log10() - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn decades(&self) -> impl Iterator<Item = i32> {
        (self.lo.ceil() as i32)..=(self.hi.floor() as i32)
    }
}

fn axis_symbol(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Beta => "β",
        SweepAxis::Alpha => "α",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Log-log plot of the seed-mean error with a ±1 standard error band and
/// the theorem bound. Markers carry their values in `data-*` attributes.
pub fn sweep_svg(result: &SweepResult) -> String {
    let mut points: Vec<_> = result.points.iter().collect();
    points.sort_by(|a, b| a.value.total_cmp(&b.value));
    let xs: Vec<f64> = points.iter().map(|p| p.value).collect();

    let band = |p: &super::SweepPoint| {
        let lo = p.mean_error - p.stderr;
        let lo = if lo > 0.0 { lo } else { p.mean_error / 2.0 };
        (lo, p.mean_error + p.stderr)
    };
    let mut ys: Vec<f64> = Vec::new();
    for p in &points {
        let (lo, hi) = band(p);
        ys.extend([lo, hi, p.mean_error]);
        if p.bound.is_finite() {
            ys.push(p.bound);
        }
    }
    let ys: Vec<f64> = ys
        .into_iter()
        .filter(|y| y.is_finite() && *y > 0.0)
        .collect();
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().copied().fold(0.0, f64::max);
    let (y_min, y_max) = if ys.is_empty() {
        (1e-3, 1.0)
    } else {
        (y_min / 2.0, y_max * 2.0)
    };

    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(0.0, f64::max);
    let sx = LogScale::new(x_min, x_max, LEFT + 20.0, WIDTH - RIGHT - 20.0);
    let sy = LogScale::new(y_min, y_max, HEIGHT - BOTTOM, TOP);
    let clamp_y = |v: f64| {
        if v > 0.0 && v.is_finite() {
            sy.map(v)
        } else {
            HEIGHT - BOTTOM
        }
    };

    let symbol = axis_symbol(result.axis);
    let title = format!(
        "Impact of {symbol} on {} soft Q-learning ({} steps)",
        match result.operator {
            super::OperatorKind::Lse => "LSE",
            super::OperatorKind::Boltzmann => "Boltzmann",
        },
        result.n_steps
    );

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&title));
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text class="title" x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(&title)
    );

    // axes
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(s, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="x-ticks" text-anchor="middle">"#);
    for d in sx.decades() {
        let x = sx.map(10f64.powi(d));
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}">1e{d}</text>"#, y0 + 18.0);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="y-ticks" text-anchor="end">"#);
    for d in sy.decades() {
        let y = sy.map(10f64.powi(d));
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="{GRID_COLOR}"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">1e{d}</text>"#,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">{symbol} (log scale)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">E‖Q − Q*‖∞ (log scale)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    // stderr band
    let mut band_pts: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx.map(p.value), clamp_y(band(p).1)))
        .collect();
    band_pts.extend(
        points
            .iter()
            .rev()
            .map(|p| format!("{:.2},{:.2}", sx.map(p.value), clamp_y(band(p).0))),
    );
    let _ = writeln!(
        s,
        r#"<polygon class="stderr-band" points="{}" fill="{EMPIRICAL_COLOR}" fill-opacity="0.2" stroke="none"/>"#,
        band_pts.join(" ")
    );

    let line = |vals: Vec<(f64, f64)>| {
        vals.iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx.map(*x), sy.map(*y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let empirical: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.mean_error > 0.0)
        .map(|p| (p.value, p.mean_error))
        .collect();
    let bound: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.bound.is_finite() && p.bound > 0.0)
        .map(|p| (p.value, p.bound))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline class="empirical-line" points="{}" fill="none" stroke="{EMPIRICAL_COLOR}" stroke-width="2"/>"#,
        line(empirical)
    );
    let _ = writeln!(
        s,
        r#"<polyline class="bound-line" points="{}" fill="none" stroke="{BOUND_COLOR}" stroke-width="2" stroke-dasharray="6 3"/>"#,
        line(bound)
    );

    let _ = writeln!(s, r#"<g class="markers">"#);
    for p in &points {
        let x = sx.map(p.value);
        let _ = writeln!(
            s,
            r#"<circle class="marker empirical" cx="{x:.2}" cy="{:.2}" r="4" fill="{EMPIRICAL_COLOR}" data-x="{}" data-y="{}" data-stderr="{}"/>"#,
            clamp_y(p.mean_error),
            sig17(p.value),
            sig17(p.mean_error),
            sig17(p.stderr)
        );
        if p.bound.is_finite() {
            let _ = writeln!(
                s,
                r#"<rect class="marker bound" x="{:.2}" y="{:.2}" width="8" height="8" fill="{BOUND_COLOR}" data-x="{}" data-y="{}"/>"#,
                x - 4.0,
                clamp_y(p.bound) - 4.0,
                sig17(p.value),
                sig17(p.bound)
            );
        }
    }
    let _ = writeln!(s, "</g>");

    let (lx, ly) = (x1 - 190.0, TOP + 10.0);
    let _ = writeln!(s, r#"<g class="legend">"#);
    let _ = writeln!(
        s,
        r#"<rect x="{lx}" y="{ly}" width="180" height="44" fill="white" stroke="{FRAME_COLOR}"/>"#
    );
    let _ = writeln!(
        s,
        r#"<circle cx="{}" cy="{}" r="4" fill="{EMPIRICAL_COLOR}"/>"#,
        lx + 14.0,
        ly + 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">mean error ± stderr</text>"#,
        lx + 26.0,
        ly + 18.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="8" height="8" fill="{BOUND_COLOR}"/>"#,
        lx + 10.0,
        ly + 26.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">finite-time bound</text>"#,
        lx + 26.0,
        ly + 34.0
    );
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(result: &SweepResult, path: &Path) -> io::Result<()> {
    if result.points.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "no sweep points to plot",
        ));
    }
    fs::write(path, sweep_svg(result))
}
