//! Standalone SVG line charts.
//!
//! Every data point is a `<circle class="point">` carrying its exact values in `data-x`
//! and `data-y` (shortest round-trip decimal), so plots can be checked against reports.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub xs: &'a [f64],
    pub ys: &'a [f64],
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `ys` over `xs` with the y axis fixed to [0, 1].
pub fn line_chart(c: &Chart<'_>) -> String {
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let (x0, x1) = c
        .xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| LEFT + (x - x0) / span * pw;
    let py = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        esc(c.title)
    );
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/>"##,
            py(y),
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{y:.1}</text>"#,
            LEFT - 6.0,
            py(y) + 4.0
        );
    }
    for &x in c.xs {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{x}</text>"#,
            px(x),
            TOP + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + ph
    );
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0,
        esc(c.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="18" y="{0}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        esc(c.y_label)
    );
    let path: Vec<String> = c
        .xs
        .iter()
        .zip(c.ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{}"/>"##,
        path.join(" ")
    );
    for (&x, &y) in c.xs.iter().zip(c.ys) {
        let _ = writeln!(
            s,
            r##"<circle class="point" cx="{:.2}" cy="{:.2}" r="4" fill="#1f5fa8" data-x="{x}" data-y="{y}"/>"##,
            px(x),
            py(y)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Exact `(x, y)` values of every data point in a chart produced by [`line_chart`].
pub fn parse_points(svg: &str) -> Vec<(f64, f64)> {
    let attr = |line: &str, key: &str| -> Option<f64> {
        let start = line.find(key)? + key.len();
        let end = line[start..].find('"')? + start;
        line[start..end].parse().ok()
    };
    svg.lines()
        .filter(|l| l.starts_with("<circle class=\"point\""))
        .filter_map(|l| Some((attr(l, "data-x=\"")?, attr(l, "data-y=\"")?)))
        .collect()
}
