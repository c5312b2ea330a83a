//! Minimal line-plot renderer producing self-contained SVG text.
//!
//! Output depends only on the input numbers: no fonts are embedded, no
//! timestamps are written, and all coordinates are printed with two
//! decimals.

use std::fmt::Write as _;

use crate::error::{CliError, Result};

pub const WIDTH: f64 = 900.0;
pub const HEIGHT: f64 = 540.0;

const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 52.0;
const PANEL_GAP: f64 = 44.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub y_label: String,
    pub series: Vec<Series>,
}

/// One or more vertically stacked panels sharing the x values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub x: Vec<f64>,
    pub panels: Vec<Panel>,
}

/// Data range, widened to `[v − 1, v + 1]` when all values equal `v`.
pub fn axis_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// Tick spacing from the 1-2-5 ladder giving at most about six ticks.
pub fn tick_step(lo: f64, hi: f64) -> f64 {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let unit = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    unit * mag
}

pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = tick_step(lo, hi);
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn check(plot: &LinePlot) -> Result<()> {
    let n = plot.x.len();
    if n == 0 || plot.panels.is_empty() {
        return Err(CliError::Render("nothing to plot".into()));
    }
    let mut bad = Vec::new();
    let mut report = |name: &str, values: &[f64]| {
        let idx: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| i.to_string())
            .collect();
        if !idx.is_empty() {
            bad.push(format!("`{name}` at indices [{}]", idx.join(", ")));
        }
    };
    report(&plot.x_label, &plot.x);
    for panel in &plot.panels {
        if panel.series.is_empty() {
            return Err(CliError::Render(format!("panel `{}` has no series", panel.y_label)));
        }
        for s in &panel.series {
            if s.values.len() != n {
                return Err(CliError::Render(format!(
                    "series `{}` has {} values but there are {n} x values",
                    s.label,
                    s.values.len()
                )));
            }
            report(&s.label, &s.values);
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Render(format!("non-finite values in {}", bad.join("; "))))
    }
}

pub fn render_svg(plot: &LinePlot) -> Result<String> {
    check(plot)?;
    let (x_lo, x_hi) = axis_range(plot.x.iter().copied());
    let plot_w = WIDTH - LEFT - RIGHT;
    let n_panels = plot.panels.len() as f64;
    let panel_h = (HEIGHT - TOP - BOTTOM - PANEL_GAP * (n_panels - 1.0)) / n_panels;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="26" text-anchor="middle" font-size="16">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&plot.title)
    );

    let x_step = tick_step(x_lo, x_hi);
    for (p, panel) in plot.panels.iter().enumerate() {
        let top = TOP + p as f64 * (panel_h + PANEL_GAP);
        let bottom = top + panel_h;
        let (y_lo, y_hi) = axis_range(panel.series.iter().flat_map(|s| s.values.iter().copied()));
        let sy = |y: f64| bottom - (y - y_lo) / (y_hi - y_lo) * panel_h;

        let _ = writeln!(out, "<g>");
        let y_step = tick_step(y_lo, y_hi);
        for t in ticks(y_lo, y_hi) {
            let y = sy(t);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + plot_w,
                LEFT - 6.0,
                y + 4.0,
                tick_label(t, y_step)
            );
        }
        for t in ticks(x_lo, x_hi) {
            let x = sx(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{bottom:.2}" stroke="#e0e0e0"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                bottom + 16.0,
                tick_label(t, x_step)
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT:.2}" y="{top:.2}" width="{plot_w:.2}" height="{panel_h:.2}" fill="none" stroke="black"/>"#
        );
        let cy = (top + bottom) / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="18" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 18 {cy:.2})">{}</text>"#,
            escape(&panel.y_label)
        );

        for (s, series) in panel.series.iter().enumerate() {
            let color = PALETTE[s % PALETTE.len()];
            let points: Vec<String> = plot
                .x
                .iter()
                .zip(&series.values)
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                points.join(" ")
            );
            let ly = top + 14.0 + 18.0 * s as f64;
            let lx = LEFT + plot_w + 14.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 22.0,
                lx + 28.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        let _ = writeln!(out, "</g>");
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(&plot.x_label)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(values: Vec<f64>) -> LinePlot {
        LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            x: (0..values.len()).map(|i| i as f64).collect(),
            panels: vec![Panel {
                y_label: "y".into(),
                series: vec![Series::new("s", values)],
            }],
        }
    }

    #[test]
    fn ladder_steps() {
        assert_eq!(tick_step(0.0, 1.0), 0.2);
        assert_eq!(tick_step(0.0, 10.0), 2.0);
        assert_eq!(tick_step(0.0, 3.0), 1.0);
        assert_eq!(tick_step(-3.0, 5.0), 2.0);
        assert_eq!(tick_step(0.0, 0.02), 0.005);
        assert_eq!(ticks(0.0, 1.0).len(), 6);
        assert_eq!(tick_label(-0.0, 0.2), "0.0");
        assert_eq!(tick_label(0.6000000000000001, 0.2), "0.6");
    }

    #[test]
    fn constant_series_spans_one_either_side() {
        assert_eq!(axis_range([2.5, 2.5, 2.5]), (1.5, 3.5));
        let svg = render_svg(&one(vec![2.5; 4])).unwrap();
        // a horizontal line through the middle of the panel
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let ys: Vec<&str> = points.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn non_finite_values_are_listed() {
        let err = render_svg(&one(vec![1.0, f64::NAN, 2.0, f64::NAN])).unwrap_err();
        assert_eq!(err.to_string(), "non-finite values in `s` at indices [1, 3]");
        let mut bad = one(vec![1.0, 2.0]);
        bad.panels[0].series[0].values.pop();
        assert!(render_svg(&bad).is_err());
    }

    #[test]
    fn rendering_is_repeatable() {
        let plot = one(vec![0.3, -1.0, 4.0, 0.25]);
        assert_eq!(render_svg(&plot).unwrap(), render_svg(&plot).unwrap());
        assert!(render_svg(&plot).unwrap().contains(r#"width="900" height="540""#));
    }
}
