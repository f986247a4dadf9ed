//! Minimal SVG charts for evaluation reports, sweeps and training logs.

use std::fmt::Write;

use crate::eval::EvalReport;
use crate::trainer::{EpochMetrics, SweepRow};

const W: f64 = 720.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    svg: String,
    y_max: f64,
}

impl Frame {
    fn new(title: &str, y_label: &str, y_max: f64) -> Self {
        let y_max = if y_max > 0.0 && y_max.is_finite() { nice_ceil(y_max) } else { 1.0 };
        let mut svg = String::new();
        let _ = write!(
            svg,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>
"##,
            (LEFT + W - RIGHT) / 2.0,
            esc(title),
            (TOP + H - BOTTOM) / 2.0,
            (TOP + H - BOTTOM) / 2.0,
            esc(y_label)
        );
        for k in 0..=5 {
            let v = y_max * k as f64 / 5.0;
            let y = H - BOTTOM - (H - TOP - BOTTOM) * k as f64 / 5.0;
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
                W - RIGHT,
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/><line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"##,
            H - BOTTOM,
            H - BOTTOM,
            W - RIGHT,
            H - BOTTOM
        );
        Self { svg, y_max }
    }

    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - (H - TOP - BOTTOM) * (v / self.y_max).clamp(0.0, 1.0)
    }

    fn legend(&mut self, names: &[String]) {
        for (i, n) in names.iter().enumerate() {
            let y = TOP + 10.0 + 20.0 * i as f64;
            let _ = writeln!(
                self.svg,
                r##"<rect x="{}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{}" y="{:.1}">{}</text>"##,
                W - RIGHT + 12.0,
                y - 10.0,
                COLORS[i % COLORS.len()],
                W - RIGHT + 30.0,
                y,
                esc(n)
            );
        }
    }

    fn x_label(&mut self, text: &str) {
        let _ = writeln!(
            self.svg,
            r##"<text x="{}" y="{}" text-anchor="middle">{}</text>"##,
            (LEFT + W - RIGHT) / 2.0,
            H - 12.0,
            esc(text)
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn nice_ceil(v: f64) -> f64 {
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if m * mag >= v {
            return m * mag;
        }
    }
    10.0 * mag
}

fn fmt_tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Grouped bars of pitch, yaw and roll MAE per ground-truth yaw bin.
pub fn yaw_bin_histogram(report: &EvalReport) -> String {
    let bins = &report.yaw_bins;
    let vals: Vec<[f64; 3]> = bins
        .iter()
        .map(|b| b.mae.map(|m| [m.pitch, m.yaw, m.roll]).unwrap_or([0.0; 3]))
        .collect();
    let y_max = vals.iter().flatten().copied().fold(0.0, f64::max);
    let mut f = Frame::new("MAE by ground-truth yaw", "MAE (deg)", y_max);
    let n = bins.len().max(1) as f64;
    let slot = (W - LEFT - RIGHT) / n;
    let bar = slot * 0.8 / 3.0;
    for (i, (b, v)) in bins.iter().zip(&vals).enumerate() {
        let x0 = LEFT + slot * i as f64 + slot * 0.1;
        for (k, &val) in v.iter().enumerate() {
            let y = f.y(val);
            let _ = writeln!(
                f.svg,
                r##"<rect x="{:.1}" y="{y:.1}" width="{bar:.1}" height="{:.1}" fill="{}"/>"##,
                x0 + bar * k as f64,
                H - BOTTOM - y,
                COLORS[k]
            );
        }
        let _ = writeln!(
            f.svg,
            r##"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">({:.0},{:.0}]</text><text x="{:.1}" y="{}" text-anchor="middle" font-size="9" fill="#666">n={}</text>"##,
            x0 + slot * 0.4,
            H - BOTTOM + 14.0,
            b.lo,
            b.hi,
            x0 + slot * 0.4,
            H - BOTTOM + 26.0,
            b.count
        );
    }
    f.legend(&["pitch".into(), "yaw".into(), "roll".into()]);
    f.x_label("ground-truth yaw bin (deg)");
    f.finish()
}

/// Lines through `(x, y)` points, one per named series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_min, mut x_max, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in pts {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_max = y_max.max(y);
    }
    if !x_min.is_finite() {
        (x_min, x_max) = (0.0, 1.0);
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let mut f = Frame::new(title, y_label, y_max);
    let px = |x: f64| LEFT + (W - LEFT - RIGHT) * (x - x_min) / (x_max - x_min);
    for k in 0..=4 {
        let v = x_min + (x_max - x_min) * k as f64 / 4.0;
        let _ = writeln!(
            f.svg,
            r##"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"##,
            px(v),
            H - BOTTOM + 16.0,
            fmt_tick((v * 100.0).round() / 100.0)
        );
    }
    for (i, (_, p)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), f.y(y))).collect();
        let _ = writeln!(
            f.svg,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"##,
            path.join(" ")
        );
        for &(x, y) in p {
            let _ = writeln!(f.svg, r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"##, px(x), f.y(y));
        }
    }
    let names: Vec<String> = series.iter().map(|(n, _)| n.clone()).collect();
    f.legend(&names);
    f.x_label(x_label);
    f.finish()
}

/// One chart per swept axis with more than one value: MAE and AP against
/// the axis value, a series per wrapped-loss setting.
pub fn sweep_charts(rows: &[SweepRow]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let axes: [(&str, fn(&SweepRow) -> f64); 2] = [("tau", |r| r.setting.tau), ("gamma", |r| r.setting.gamma)];
    for (name, get) in axes {
        let mut values: Vec<f64> = rows.iter().map(get).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        if values.len() < 2 {
            continue;
        }
        for (metric, label, pick) in [
            ("mae", "mean MAE (deg)", (|r: &SweepRow| r.mae_avg) as fn(&SweepRow) -> Option<f64>),
            ("ap", "AP", |r: &SweepRow| r.ap),
        ] {
            let mut series = Vec::new();
            for wrapped in [false, true] {
                let mut pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.setting.wrapped == wrapped)
                    .filter_map(|r| pick(r).map(|v| (get(r), v)))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                if !pts.is_empty() {
                    series.push((if wrapped { "wrapped" } else { "plain" }.to_string(), pts));
                }
            }
            out.push((
                format!("sweep_{name}_{metric}.svg"),
                line_chart(&format!("{label} vs {name}"), name, label, &series),
            ));
        }
    }
    if out.is_empty() && !rows.is_empty() {
        // Only the wrapped flag varied: a two-point bar comparison.
        let series: Vec<(String, Vec<(f64, f64)>)> = ["mae_avg", "ap"]
            .iter()
            .map(|m| {
                let pts = rows
                    .iter()
                    .filter_map(|r| {
                        let v = if *m == "ap" { r.ap } else { r.mae_avg };
                        v.map(|v| (if r.setting.wrapped { 1.0 } else { 0.0 }, v))
                    })
                    .collect();
                (m.to_string(), pts)
            })
            .collect();
        out.push((
            "sweep_wrapped.svg".into(),
            line_chart("plain (0) vs wrapped (1) pose loss", "wrapped", "value", &series),
        ));
    }
    out
}

/// Training losses and validation MAE per epoch.
pub fn training_curves(rows: &[EpochMetrics]) -> Vec<(String, String)> {
    let pts = |f: fn(&EpochMetrics) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect()
    };
    vec![
        (
            "train_loss.svg".into(),
            line_chart(
                "training losses",
                "epoch",
                "loss",
                &[
                    ("box".into(), pts(|r| Some(r.l_box))),
                    ("objectness".into(), pts(|r| Some(r.l_obj))),
                    ("pose".into(), pts(|r| Some(r.l_pose))),
                ],
            ),
        ),
        (
            "val_mae.svg".into(),
            line_chart(
                "validation MAE",
                "epoch",
                "MAE (deg)",
                &[
                    ("pitch".into(), pts(|r| r.val_mae_pitch)),
                    ("yaw".into(), pts(|r| r.val_mae_yaw)),
                    ("roll".into(), pts(|r| r.val_mae_roll)),
                ],
            ),
        ),
    ]
}
