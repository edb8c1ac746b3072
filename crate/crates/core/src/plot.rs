//! Minimal deterministic SVG line charts.
//!
//! The x axis is categorical: each distinct x value gets an evenly spaced
//! slot, so a λ grid containing 0 plots without a log-scale hole.

use std::fmt::Write as _;

use crate::train::AveragedRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl LineChart {
    fn x_slots(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }

    pub fn render(&self) -> String {
        let xs = self.x_slots();
        let ys: Vec<f64> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .filter(|v| v.is_finite())
            .collect();
        let (mut ymin, mut ymax) = ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !ymin.is_finite() {
            ymin = 0.0;
            ymax = 1.0;
        }
        if ymax - ymin < 1e-12 {
            ymin -= 0.5;
            ymax += 0.5;
        }
        let pad = 0.05 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let xpos = |x: f64| {
            let i = xs.iter().position(|&v| v == x).unwrap_or(0);
            if xs.len() <= 1 {
                LEFT + pw / 2.0
            } else {
                LEFT + pw * i as f64 / (xs.len() - 1) as f64
            }
        };
        let ypos = |y: f64| TOP + ph * (ymax - y) / (ymax - ymin);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
        );
        for i in 0..=4 {
            let y = ymin + (ymax - ymin) * i as f64 / 4.0;
            let py = ypos(y);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                py + 4.0,
                tick(y)
            );
        }
        for &x in &xs {
            let px = xpos(x);
            let _ = writeln!(
                svg,
                r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                TOP + ph + 18.0,
                tick(x)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (si, s) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let mut pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.1.is_finite()).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", xpos(x), ypos(y))).collect();
            if !path.is_empty() {
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    path.join(" ")
                );
            }
            for &(x, y) in &pts {
                let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, xpos(x), ypos(y));
            }
            let ly = TOP + 10.0 + 18.0 * si as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

pub const SWEEP_METRICS: [&str; 4] = ["clean_acc", "robust_acc", "mean_min_l2", "median_min_l2"];

fn metric(row: &AveragedRow, name: &str) -> Option<f64> {
    match name {
        "clean_acc" => row.clean_acc,
        "robust_acc" => row.robust_acc,
        "mean_min_l2" => row.mean_min_l2,
        "median_min_l2" => row.median_min_l2,
        _ => None,
    }
}

/// One chart per (attack, ε, metric); λ on x, one series per regularizer.
/// Returns `(file stem, chart)` pairs in a deterministic order.
pub fn sweep_charts(rows: &[AveragedRow]) -> Vec<(String, LineChart)> {
    let mut attacks: Vec<(String, f64)> = Vec::new();
    let mut kinds: Vec<String> = Vec::new();
    for r in rows {
        if !attacks.iter().any(|(a, e)| a == &r.attack && *e == r.epsilon) {
            attacks.push((r.attack.clone(), r.epsilon));
        }
        if !kinds.contains(&r.reg_kind) {
            kinds.push(r.reg_kind.clone());
        }
    }
    let mut charts = Vec::new();
    for (attack, eps) in &attacks {
        for m in SWEEP_METRICS {
            let series = kinds
                .iter()
                .map(|k| Series {
                    name: k.clone(),
                    points: rows
                        .iter()
                        .filter(|r| &r.reg_kind == k && &r.attack == attack && r.epsilon == *eps)
                        .filter_map(|r| metric(r, m).map(|v| (r.lambda, v)))
                        .collect(),
                })
                .collect();
            let stem = if *eps > 0.0 {
                format!("{attack}_eps{eps}_{m}")
            } else {
                format!("{attack}_{m}")
            };
            let title = if *eps > 0.0 {
                format!("{attack} (eps = {eps}): {m}")
            } else {
                format!("{attack}: {m}")
            };
            charts.push((
                stem,
                LineChart {
                    title,
                    x_label: "lambda".into(),
                    y_label: m.into(),
                    series,
                },
            ));
        }
    }
    charts
}
