//! Static SVG figures. Output is deterministic text: fixed precision, no
//! timestamps, so figures can be diffed and inspected in tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::IoError;
use crate::boxloop::{LoopData, RunRecord, Scored};
use crate::gp::TimeSeriesDataset;
use crate::ode::OdeDataset;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Class of the shaded extrapolation rectangle.
pub const EXTRAPOLATION_CLASS: &str = "extrapolation";

/// Linear map from data coordinates into one plotting panel.
#[derive(Debug, Clone, Copy)]
struct Panel {
    x: (f64, f64),
    y: (f64, f64),
    top: f64,
}

impl Panel {
    fn new(xs: impl IntoIterator<Item = f64>, ys: impl IntoIterator<Item = f64>, top: f64) -> Self {
        Self { x: range(xs), y: range(ys), top }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let h = PANEL_HEIGHT - 2.0 * MARGIN;
        self.top + MARGIN + h - (y - self.y.0) / (self.y.1 - self.y.0) * h
    }

    fn right(&self) -> f64 {
        WIDTH - MARGIN
    }

    fn bottom(&self) -> f64 {
        self.top + PANEL_HEIGHT - MARGIN
    }
}

/// Finite range padded by 5% (or ±1 around a constant).
fn range(vals: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.into_iter().filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn f(v: f64) -> String {
    format!("{v:.2}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#,
        w = WIDTH,
        h = f(height)
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" font-size="13">{}</text>"#, MARGIN, escape(title));
}

fn axes(out: &mut String, p: &Panel, title: &str) {
    let _ = writeln!(
        out,
        r#"<path class="axes" d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        l = f(MARGIN),
        t = f(p.top + MARGIN),
        b = f(p.bottom()),
        r = f(p.right())
    );
    for (v, anchor_x) in [(p.x.0, MARGIN), (p.x.1, p.right())] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, f(anchor_x), f(p.bottom() + 14.0), tick(v));
    }
    for v in [p.y.0, p.y.1] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, f(MARGIN - 4.0), f(p.py(v) + 4.0), tick(v));
    }
    if !title.is_empty() {
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, f(MARGIN + 4.0), f(p.top + MARGIN - 6.0), escape(title));
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Grey rectangle from `x0` to the right edge of the panel.
fn shade_from(out: &mut String, p: &Panel, x0: f64) {
    let left = p.px(x0);
    let _ = writeln!(
        out,
        r##"<rect class="{EXTRAPOLATION_CLASS}" x="{}" y="{}" width="{}" height="{}" fill="#dddddd" fill-opacity="0.6"/>"##,
        f(left),
        f(p.top + MARGIN),
        f(p.right() - left),
        f(p.bottom() - p.top - MARGIN)
    );
}

fn polyline(out: &mut String, p: &Panel, x: &[f64], y: &[f64], color: &str, class: &str) {
    let mut d = String::new();
    let mut pen_down = false;
    for (a, b) in x.iter().zip(y) {
        if !(a.is_finite() && b.is_finite()) {
            pen_down = false;
            continue;
        }
        let _ = write!(d, "{}{} {} ", if pen_down { "L" } else { "M" }, f(p.px(*a)), f(p.py(*b)));
        pen_down = true;
    }
    if !d.is_empty() {
        let _ = writeln!(out, r#"<path class="{class}" d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
    }
}

fn points(out: &mut String, p: &Panel, x: &[f64], y: &[f64], color: &str) {
    for (a, b) in x.iter().zip(y).filter(|(a, b)| a.is_finite() && b.is_finite()) {
        let _ = writeln!(out, r#"<circle class="data" cx="{}" cy="{}" r="2" fill="{color}"/>"#, f(p.px(*a)), f(p.py(*b)));
    }
}

fn legend(out: &mut String, entries: &[(&str, &str)], top: f64) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let x = WIDTH - MARGIN - 150.0;
        let y = top + MARGIN + 12.0 + 14.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="3" fill="{color}"/>"#, f(x), f(y - 4.0));
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, f(x + 14.0), f(y), escape(label));
    }
}

/// Data scatter with the predictive mean and a ±2 sd band; the held-out
/// region (after the last training input) is shaded when there is one.
pub fn gp_band_svg(data: &TimeSeriesDataset, mean: &[f64], var: &[f64], title: &str) -> String {
    let sd: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
    let lo: Vec<f64> = mean.iter().zip(&sd).map(|(m, s)| m - 2.0 * s).collect();
    let hi: Vec<f64> = mean.iter().zip(&sd).map(|(m, s)| m + 2.0 * s).collect();
    let p = Panel::new(data.x.iter().copied(), data.y.iter().chain(&lo).chain(&hi).copied(), 20.0);
    let mut out = String::new();
    header(&mut out, PANEL_HEIGHT + 20.0, title);
    if data.split < data.x.len() {
        shade_from(&mut out, &p, data.x[data.split - 1]);
    }
    let n = mean.len().min(data.x.len());
    let mut d = String::new();
    for i in 0..n {
        let _ = write!(d, "{}{} {} ", if i == 0 { "M" } else { "L" }, f(p.px(data.x[i])), f(p.py(hi[i])));
    }
    for i in (0..n).rev() {
        let _ = write!(d, "L{} {} ", f(p.px(data.x[i])), f(p.py(lo[i])));
    }
    if n > 0 {
        let _ = writeln!(out, r##"<path class="band" d="{}Z" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##, d);
    }
    polyline(&mut out, &p, &data.x[..n], &mean[..n], PALETTE[0], "mean");
    points(&mut out, &p, &data.x, &data.y, "black");
    axes(&mut out, &p, "");
    legend(&mut out, &[("data", "black"), ("predictive mean ± 2 sd", PALETTE[0])], p.top);
    out.push_str("</svg>\n");
    out
}

/// One panel per state: observations as points and each curve, given as
/// (label, times, values per state), as a line. The region after the
/// training horizon is shaded.
pub fn ode_trajectories_svg(data: &OdeDataset, curves: &[(String, Vec<f64>, Vec<Vec<f64>>)], title: &str) -> String {
    let k = data.names.len();
    let mut out = String::new();
    header(&mut out, 20.0 + PANEL_HEIGHT * k as f64, title);
    for (j, state) in data.names.iter().enumerate() {
        let obs: Vec<f64> = data.y.iter().map(|r| r[j]).collect();
        let xs = data.t.iter().copied().chain(curves.iter().flat_map(|c| c.1.iter().copied()));
        let ys = obs.iter().copied().chain(curves.iter().flat_map(|c| c.2.get(j).into_iter().flatten().copied()));
        let p = Panel::new(xs, ys, 20.0 + PANEL_HEIGHT * j as f64);
        if data.split < data.t.len() {
            shade_from(&mut out, &p, data.train_end());
        }
        for (i, (_, t, ys)) in curves.iter().enumerate() {
            if let Some(y) = ys.get(j) {
                polyline(&mut out, &p, t, y, PALETTE[i % PALETTE.len()], "trajectory");
            }
        }
        points(&mut out, &p, &data.t, &obs, "black");
        axes(&mut out, &p, state);
        let mut entries = vec![("observed", "black")];
        entries.extend(curves.iter().enumerate().map(|(i, c)| (c.0.as_str(), PALETTE[i % PALETTE.len()])));
        legend(&mut out, &entries, p.top);
    }
    out.push_str("</svg>\n");
    out
}

/// Every scored proposal by round, plus the running best.
pub fn score_curve_svg(record: &RunRecord) -> String {
    let scored: Vec<(f64, f64)> = record.candidates().filter_map(|c| Some((c.round as f64, c.score?))).collect();
    let running = record.running_max();
    let rounds = record.rounds.len().max(1) as f64;
    let p = Panel::new([0.0, rounds - 1.0], scored.iter().map(|s| s.1), 20.0);
    let mut out = String::new();
    header(&mut out, PANEL_HEIGHT + 20.0, &format!("{}: {} by round", record.run_id, record.config.backend.metric()));
    let (x, y): (Vec<f64>, Vec<f64>) = scored.iter().copied().unzip();
    points(&mut out, &p, &x, &y, "#777777");
    let rx: Vec<f64> = (0..running.len()).map(|r| r as f64).collect();
    let ry: Vec<f64> = running.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    polyline(&mut out, &p, &rx, &ry, PALETTE[1], "running-best");
    axes(&mut out, &p, "");
    legend(&mut out, &[("proposal", "#777777"), ("best so far", PALETTE[1])], p.top);
    out.push_str("</svg>\n");
    out
}

/// Observed values against posterior-predictive means (±2 sd), per
/// observed column.
pub fn predictive_check_svg(observed: &[(String, Vec<f64>)], scored: &Scored, title: &str) -> Option<String> {
    let cols: Vec<_> = scored
        .stats
        .columns
        .iter()
        .filter_map(|c| Some((c, &observed.iter().find(|o| o.0 == c.name)?.1)))
        .filter(|(c, o)| c.mean.len() == o.len())
        .collect();
    if cols.is_empty() {
        return None;
    }
    let mut out = String::new();
    header(&mut out, 20.0 + PANEL_HEIGHT * cols.len() as f64, title);
    for (j, (c, obs)) in cols.iter().enumerate() {
        let sd: Vec<f64> = c.var.as_ref().map_or(vec![0.0; c.mean.len()], |v| v.iter().map(|v| v.max(0.0).sqrt()).collect());
        let ext = c.mean.iter().zip(&sd).flat_map(|(m, s)| [m - 2.0 * s, m + 2.0 * s]);
        let vals: Vec<f64> = obs.iter().copied().chain(ext).collect();
        let p = Panel { x: range(vals.iter().copied()), y: range(vals.iter().copied()), top: 20.0 + PANEL_HEIGHT * j as f64 };
        let (lo, hi) = (p.x.0.max(p.y.0), p.x.1.min(p.y.1));
        polyline(&mut out, &p, &[lo, hi], &[lo, hi], "#999999", "identity");
        for ((o, m), s) in obs.iter().zip(&c.mean).zip(&sd) {
            let _ = writeln!(
                out,
                r#"<path class="interval" d="M{x} {a} L{x} {b}" stroke="{col}"/>"#,
                x = f(p.px(*o)),
                a = f(p.py(m - 2.0 * s)),
                b = f(p.py(m + 2.0 * s)),
                col = PALETTE[0]
            );
        }
        points(&mut out, &p, obs, &c.mean, PALETTE[0]);
        axes(&mut out, &p, &format!("{} (observed vs predicted)", c.name));
    }
    out.push_str("</svg>\n");
    Some(out)
}

/// Writes the figures available for a run into `dir` and returns their
/// paths. `reference` adds a baseline curve to trajectory plots. Panels
/// without data (no successful fit) are skipped.
pub fn emit_plots(record: &RunRecord, data: &LoopData, reference: Option<&Scored>, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::Io(format!("{}: {e}", dir.display())))?;
    let mut figures = Vec::new();
    if record.candidates().any(|c| c.is_ok()) {
        figures.push(("scores.svg", score_curve_svg(record)));
    }
    if let Some(best) = record.best_candidate().filter(|c| c.is_ok()) {
        let stats = best.stats.as_ref();
        let title = format!("best proposal (round {}, #{})", best.round, best.index);
        match data {
            LoopData::Gp(d) => {
                if let Some(c) = stats.and_then(|s| s.columns.first()) {
                    if let Some(var) = &c.var {
                        figures.push(("fit.svg", gp_band_svg(d, &c.mean, var, &title)));
                    }
                }
            }
            LoopData::Ode(d) => {
                let mut curves = Vec::new();
                if let Some(r) = reference {
                    curves.push(("reference".to_string(), d.t.clone(), ode_columns(d, &r.stats.columns)));
                }
                if let Some(s) = stats {
                    curves.push(("best proposal".to_string(), d.t.clone(), ode_columns(d, &s.columns)));
                }
                figures.push(("trajectories.svg", ode_trajectories_svg(d, &curves, &title)));
            }
            LoopData::Ppl { table, .. } => {
                let observed: Vec<(String, Vec<f64>)> = table.names.iter().cloned().zip(table.columns.iter().cloned()).collect();
                let scored = Scored { score: best.score.unwrap_or(f64::NAN), stats: stats.cloned().unwrap_or_else(empty_stats), details: serde_json::Value::Null };
                if let Some(svg) = predictive_check_svg(&observed, &scored, &title) {
                    figures.push(("predictive.svg", svg));
                }
            }
        }
    }
    let mut paths = Vec::new();
    for (name, svg) in figures {
        let path = dir.join(name);
        std::fs::write(&path, svg).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))?;
        paths.push(path);
    }
    Ok(paths)
}

fn empty_stats() -> crate::boxloop::PredictiveStats {
    crate::boxloop::PredictiveStats { columns: Vec::new(), residuals: crate::boxloop::scorer::Residuals { mae: 0.0, rmse: 0.0, max_abs: 0.0 } }
}

/// Per-state series in dataset order (missing states become NaN).
fn ode_columns(d: &OdeDataset, cols: &[crate::boxloop::scorer::ColumnSummary]) -> Vec<Vec<f64>> {
    d.names
        .iter()
        .map(|n| cols.iter().find(|c| &c.name == n).map_or(vec![f64::NAN; d.t.len()], |c| c.mean.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(svg: &str, class: &str, name: &str) -> Vec<f64> {
        svg.lines()
            .filter(|l| l.contains(&format!("class=\"{class}\"")))
            .filter_map(|l| {
                let key = format!(" {name}=\"");
                let start = l.find(&key)? + key.len();
                l[start..].split('"').next()?.parse().ok()
            })
            .collect()
    }

    #[test]
    fn gp_band_shading() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let d = TimeSeriesDataset::new("s", x.clone(), y.clone()).unwrap().with_split(7).unwrap();
        let svg = gp_band_svg(&d, &y, &[0.01; 10], "t");
        assert_eq!(svg.matches("class=\"band\"").count(), 1);
        assert_eq!(svg.matches("class=\"data\"").count(), 10);
        let p = Panel::new(x.iter().copied(), [0.0], 20.0);
        assert_eq!(attr(&svg, EXTRAPOLATION_CLASS, "x"), vec![(p.px(6.0) * 100.0).round() / 100.0]);

        let all_train = d.clone().with_split(10).unwrap();
        assert!(!gp_band_svg(&all_train, &y, &[0.01; 10], "t").contains(EXTRAPOLATION_CLASS));
        // Deterministic output.
        assert_eq!(svg, gp_band_svg(&d, &y, &[0.01; 10], "t"));
    }

    #[test]
    fn ode_shading_starts_at_train_horizon() {
        let t: Vec<f64> = (0..=20).map(|i| 0.5 * f64::from(i)).collect();
        let y: Vec<Vec<f64>> = t.iter().map(|t| vec![t.cos(), t.sin()]).collect();
        let d = OdeDataset::new("o", t.clone(), vec!["b".into(), "c".into()], y.clone()).unwrap().with_train_end(6.0);
        let cols = vec![t.iter().map(|t| t.cos()).collect(), t.iter().map(|t| t.sin()).collect()];
        let svg = ode_trajectories_svg(&d, &[("fit".into(), t.clone(), cols)], "t");
        let xs = attr(&svg, EXTRAPOLATION_CLASS, "x");
        assert_eq!(xs.len(), 2);
        let p = Panel::new(t.iter().copied(), [0.0], 0.0);
        for x in xs {
            assert_eq!(x, (p.px(6.0) * 100.0).round() / 100.0);
        }
        assert_eq!(svg.matches("class=\"trajectory\"").count(), 2);
        let untested = OdeDataset::new("o", t, vec!["b".into(), "c".into()], y).unwrap();
        assert!(!ode_trajectories_svg(&untested, &[], "t").contains(EXTRAPOLATION_CLASS));
    }

    #[test]
    fn range_handles_degenerate_input() {
        assert_eq!(range([2.0, 2.0]), (1.0, 3.0));
        assert_eq!(range([f64::NAN]), (0.0, 1.0));
    }
}
