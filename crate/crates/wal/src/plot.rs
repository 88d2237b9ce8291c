//! Static SVG line charts of sweep results.

use std::fmt::Write;

use crate::config::Axis;
use crate::report::SweepPoint;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Mean accuracy against axis value, one line per method, with ±1 std bars.
pub fn sweep_svg(axis: Axis, points: &[SweepPoint]) -> String {
    let xs = || points.iter().map(|p| p.axis_value);
    let (x0, x1) = (xs().fold(f64::INFINITY, f64::min), xs().fold(f64::NEG_INFINITY, f64::max));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let sx = |x: f64| LEFT + (x - x0) / span * (W - LEFT - RIGHT);
    let sy = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (bx, by) = (H - BOTTOM, W - RIGHT);
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT},{TOP} V{bx} H{by}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let y = f64::from(i) / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y:.1}</text>"#,
            LEFT - 6.0,
            sy(y) + 4.0
        );
    }
    let mut ticks: Vec<f64> = xs().collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#,
            sx(x),
            H - BOTTOM + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        axis.name()
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy</text>"#,
        H / 2.0,
        H / 2.0
    );

    let mut methods: Vec<_> = points.iter().map(|p| p.method).collect();
    methods.sort();
    methods.dedup();
    for (k, m) in methods.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut line: Vec<&SweepPoint> = points.iter().filter(|p| p.method == *m).collect();
        line.sort_by(|a, b| a.axis_value.total_cmp(&b.axis_value));
        let path: Vec<String> = line
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.axis_value), sy(p.mean_accuracy)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for p in &line {
            let (x, lo, hi) = (
                sx(p.axis_value),
                sy(p.mean_accuracy - p.std_accuracy),
                sy(p.mean_accuracy + p.std_accuracy),
            );
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{lo:.1}" x2="{x:.1}" y2="{hi:.1}" stroke="{color}"/><circle cx="{x:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sy(p.mean_accuracy)
            );
        }
        let ly = TOP + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0,
            W - RIGHT + 36.0,
            ly + 4.0,
            m.name()
        );
    }
    s.push_str("</svg>\n");
    s
}
