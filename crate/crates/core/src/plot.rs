//! Minimal SVG line charts with mean ± standard deviation bands.

use std::fmt::Write as _;

use crate::optimizer::TraceRow;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// `(x, mean, std)` points of one curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

/// Mean and population standard deviation of `metric` across traces, per
/// checkpoint. Checkpoints where any trace lacks a value are dropped.
pub fn aggregate(traces: &[Vec<TraceRow>], metric: impl Fn(&TraceRow) -> Option<f64>) -> Vec<(f64, f64, f64)> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (k, row) in first.iter().enumerate() {
        let vals: Option<Vec<f64>> = traces
            .iter()
            .map(|t| t.get(k).filter(|r| r.iter == row.iter).and_then(&metric))
            .collect();
        let Some(vals) = vals else { continue };
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.push((row.iter as f64, mean, var.sqrt()));
    }
    out
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = if log { 0.0 } else { 0.05 * (hi - lo) };
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    fn unit(&self, v: f64) -> Option<f64> {
        let v = if self.log { v.log10() } else { v };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            return (a..=b).map(|e| (10f64.powi(e), format!("1e{e}"))).collect();
        }
        (0..=4)
            .map(|i| {
                let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                (v, format!("{v:.3}"))
            })
            .collect()
    }
}

pub fn render_svg(panel: &Panel) -> String {
    let all = || panel.series.iter().flat_map(|s| s.points.iter());
    let xa = Axis::new(all().map(|p| p.0), panel.log_x);
    let ya = Axis::new(
        all().flat_map(|p| {
            let lo = if panel.log_y { p.1 } else { p.1 - p.2 };
            [lo, p.1 + p.2]
        }),
        panel.log_y,
    );
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| xa.unit(x).map(|u| LEFT + u * pw);
    let py = |y: f64| ya.unit(y).map(|u| TOP + (1.0 - u) * ph);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (v, label) in xa.ticks() {
        if let Some(x) = px(v) {
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
                TOP + ph,
                TOP + ph + 4.0,
                TOP + ph + 16.0
            );
        }
    }
    for (v, label) in ya.ticks() {
        if let Some(y) = py(v) {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
                LEFT - 4.0,
                LEFT - 6.0,
                y + 4.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&panel.y_label)
    );

    for (i, series) in panel.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        let mut line = Vec::new();
        for &(x, m, sd) in &series.points {
            let (Some(x), Some(ym)) = (px(x), py(m)) else { continue };
            line.push((x, ym));
            let lo = if panel.log_y && m - sd <= 0.0 { m } else { m - sd };
            if let (Some(yu), Some(yl)) = (py(m + sd), py(lo)) {
                upper.push((x, yu));
                lower.push((x, yl));
            }
        }
        if upper.len() > 1 {
            let mut d = String::new();
            for (k, (x, y)) in upper.iter().chain(lower.iter().rev()).enumerate() {
                let _ = write!(d, "{}{x:.2},{y:.2} ", if k == 0 { "M" } else { "L" });
            }
            let _ = writeln!(
                s,
                r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                d
            );
        }
        if !line.is_empty() {
            let mut d = String::new();
            for (k, (x, y)) in line.iter().enumerate() {
                let _ = write!(d, "{}{x:.2},{y:.2} ", if k == 0 { "M" } else { "L" });
            }
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.trim_end()
            );
        }
        let ly = TOP + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            WIDTH - RIGHT - 26.0,
            WIDTH - RIGHT - 8.0,
            WIDTH - RIGHT - 30.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
