//! Minimal self-contained SVG line plots of trace columns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::trace_io::parse_table;
use crate::error::{Error, Result};

/// Values at or below zero are drawn at this level on a log axis.
pub const LOG_FLOOR: f64 = 1e-300;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug)]
pub struct PlotOptions {
    pub x_column: String,
    pub y_column: String,
    pub log_x: bool,
    pub log_y: bool,
}

impl PlotOptions {
    pub fn new(y: &str) -> Self {
        PlotOptions {
            x_column: "k".into(),
            y_column: y.into(),
            log_x: false,
            log_y: false,
        }
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    clamped: bool,
}

fn transform(v: f64, log: bool, clamped: &mut bool) -> Option<f64> {
    if !v.is_finite() {
        return None;
    }
    if log {
        if v <= 0.0 {
            *clamped = true;
            Some(LOG_FLOOR.log10())
        } else {
            Some(v.log10())
        }
    } else {
        Some(v)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders the SVG text. Each input is `(label, csv text)`.
pub fn render_svg(inputs: &[(String, String)], opts: &PlotOptions) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::InvalidParams("no traces to plot".into()));
    }
    let mut series = Vec::new();
    for (label, text) in inputs {
        let table = parse_table(text)?;
        let xs = table.column(&opts.x_column)?;
        let ys = table.column(&opts.y_column)?;
        let mut clamped = false;
        let mut points = Vec::new();
        for (x, y) in xs.into_iter().zip(ys) {
            let (Some(x), Some(y)) = (x, y) else { continue };
            let mut x_clamped = false;
            let tx = transform(x, opts.log_x, &mut x_clamped);
            let ty = transform(y, opts.log_y, &mut clamped);
            // x = 0 has no place on a log axis; drop it rather than clamp
            if let (Some(tx), Some(ty), false) = (tx, ty, x_clamped) {
                points.push((tx, ty));
            }
        }
        series.push(Series {
            label: label.clone(),
            points,
            clamped,
        });
    }

    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in 0..=4 {
        let fx = x0 + (x1 - x0) * t as f64 / 4.0;
        let fy = y0 + (y1 - y0) * t as f64 / 4.0;
        let lx = if opts.log_x { format!("1e{fx:.1}") } else { format!("{fx:.3e}") };
        let ly = if opts.log_y { format!("1e{fy:.1}") } else { format!("{fy:.3e}") };
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(fx),
            HEIGHT - MARGIN_B + 18.0,
            lx
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            sy(fy) + 4.0,
            ly
        );
    }
    let axis = |name: &str, log: bool| {
        if log {
            format!("{name} (log)")
        } else {
            name.to_string()
        }
    };
    let _ = writeln!(
        out,
        r#"<text class="xlabel" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 8.0,
        escape(&axis(&opts.x_column, opts.log_x))
    );
    let _ = writeln!(
        out,
        r#"<text class="ylabel" x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&axis(&opts.y_column, opts.log_y))
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let mut label = escape(&s.label);
        if s.clamped {
            label.push_str(" (zeros clamped)");
        }
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{label}</text>"#,
            lx + 26.0,
            ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Reads trace files, labels them by file stem and writes the plot. No
/// file is written on error.
pub fn emit_svg_plot(files: &[PathBuf], opts: &PlotOptions, out: &Path) -> Result<()> {
    let mut inputs = Vec::new();
    for f in files {
        let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        let label = f
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| f.display().to_string());
        inputs.push((label, text));
    }
    let svg = render_svg(&inputs, opts)?;
    fs::write(out, svg).map_err(|e| Error::io(out, e))
}
