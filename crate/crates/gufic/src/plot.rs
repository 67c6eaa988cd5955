//! Self-contained SVG line plots of a finished run: tracking, normal force,
//! tank levels, and the error function. No external renderer; the files are
//! plain SVG 1.1 with polylines.

use crate::simlog::SimLog;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
/// Points per polyline are decimated down to roughly this budget.
const MAX_POINTS: usize = 2000;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, color: &'static str, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), color, dashed: false, points }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

fn decimate(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<(f64, f64)> =
        points.iter().step_by(stride).copied().collect();
    if let Some(last) = points.last() {
        if out.last() != Some(last) {
            out.push(*last);
        }
    }
    out
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(mag * 10.0);
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut v = first;
    while v <= hi + step * 1e-9 {
        ticks.push(v);
        v += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.001 {
        format!("{v:.1e}")
    } else if a >= 1.0 {
        format!("{v:.5}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.6}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders one line plot into an SVG string.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let ypad = (ymax - ymin) * 0.05;
    ymin -= ypad;
    ymax += ypad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - xmin) / (xmax - xmin) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - ymin) / (ymax - ymin)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        title
    ));

    for tx in nice_ticks(xmin, xmax) {
        let x = sx(tx);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_TOP + plot_h + 18.0,
            fmt_tick(tx)
        ));
    }
    for ty in nice_ticks(ymin, ymax) {
        let y = sy(ty);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            fmt_tick(ty)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        y_label
    ));

    for (i, s) in series.iter().enumerate() {
        let pts = decimate(&s.points);
        let mut path = String::new();
        for (x, y) in &pts {
            path.push_str(&format!("{:.2},{:.2} ", sx(*x), sy(*y)));
        }
        let dash = if s.dashed { " stroke-dasharray=\"6,4\"" } else { "" };
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{} points=\"{}\"/>\n",
            s.color,
            dash,
            path.trim_end()
        ));
        let ly = MARGIN_TOP + 14.0 + i as f64 * 18.0;
        let lx = WIDTH - MARGIN_RIGHT + 10.0;
        svg.push_str(&format!(
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"{}/>\n",
            lx + 22.0,
            s.color,
            dash
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" dominant-baseline=\"middle\">{}</text>\n",
            lx + 28.0,
            ly,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn write_svg(path: &Path, content: &str) -> Result<(), PlotError> {
    std::fs::write(path, content)
        .map_err(|source| PlotError::Io { path: path.display().to_string(), source })
}

/// Standard figure set for one run: xyz tracking against the reference,
/// sensed normal force against the desired force, tank levels, and the
/// error function. Returns the written paths; an empty log writes nothing.
pub fn render_plots(log: &SimLog, outdir: impl AsRef<Path>) -> Result<Vec<PathBuf>, PlotError> {
    let outdir = outdir.as_ref();
    if log.rows.is_empty() {
        log::warn!("empty log: no plots written to {}", outdir.display());
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(outdir)
        .map_err(|source| PlotError::Io { path: outdir.display().to_string(), source })?;

    let t: Vec<f64> = log.rows.iter().map(|r| r.t).collect();
    let pick = |f: &dyn Fn(&crate::simlog::LogRow) -> f64| -> Vec<(f64, f64)> {
        log.rows.iter().map(|r| (r.t, f(r))).collect()
    };
    let mut written = Vec::new();

    let tracking = line_plot(
        "End-effector position vs reference",
        "t [s]",
        "position [m]",
        &[
            Series::new("x", "#c0392b", pick(&|r| r.g.position.x)),
            Series::new("y", "#27ae60", pick(&|r| r.g.position.y)),
            Series::new("z", "#2980b9", pick(&|r| r.g.position.z)),
            Series::new("x ref", "#c0392b", pick(&|r| r.gd_bar.position.x)).dashed(),
            Series::new("y ref", "#27ae60", pick(&|r| r.gd_bar.position.y)).dashed(),
            Series::new("z ref", "#2980b9", pick(&|r| r.gd_bar.position.z)).dashed(),
        ],
    );
    let p = outdir.join("tracking_xyz.svg");
    write_svg(&p, &tracking)?;
    written.push(p);

    let force = line_plot(
        "Normal force",
        "t [s]",
        "force [N]",
        &[
            Series::new("sensed", "#2980b9", pick(&|r| -r.fe_sensed.0[2])),
            Series::new("desired", "#7f8c8d", pick(&|r| r.fd.0[2])).dashed(),
        ],
    );
    let p = outdir.join("force_z.svg");
    write_svg(&p, &force)?;
    written.push(p);

    let tanks = line_plot(
        "Energy tanks",
        "t [s]",
        "level [J]",
        &[
            Series::new("T_f", "#8e44ad", pick(&|r| r.tank_force)),
            Series::new("T_i", "#d35400", pick(&|r| r.tank_impedance)),
        ],
    );
    let p = outdir.join("tanks.svg");
    write_svg(&p, &tanks)?;
    written.push(p);

    let psi = line_plot(
        "Error function",
        "t [s]",
        "Psi",
        &[Series::new("Psi(g, g_d')", "#16a085", pick(&|r| r.psi))],
    );
    let p = outdir.join("error_psi.svg");
    write_svg(&p, &psi)?;
    written.push(p);

    let _ = t;
    Ok(written)
}

/// Overlay of the sensed normal force from two runs of the same scenario.
pub fn render_force_comparison(
    guarded: &SimLog,
    baseline: &SimLog,
    outdir: impl AsRef<Path>,
) -> Result<PathBuf, PlotError> {
    let outdir = outdir.as_ref();
    std::fs::create_dir_all(outdir)
        .map_err(|source| PlotError::Io { path: outdir.display().to_string(), source })?;
    let pick = |log: &SimLog| -> Vec<(f64, f64)> {
        log.rows.iter().map(|r| (r.t, -r.fe_sensed.0[2])).collect()
    };
    let desired: Vec<(f64, f64)> = guarded.rows.iter().map(|r| (r.t, r.fd.0[2])).collect();
    let svg = line_plot(
        "Normal force: guarded vs impedance-only",
        "t [s]",
        "force [N]",
        &[
            Series::new("gufic", "#2980b9", pick(guarded)),
            Series::new("gic", "#c0392b", pick(baseline)),
            Series::new("desired", "#7f8c8d", desired).dashed(),
        ],
    );
    let p = outdir.join("force_compare.svg");
    write_svg(&p, &svg)?;
    Ok(p)
}
