//! Minimal SVG charts built from path elements.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 150.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    /// Horizontal-then-vertical steps, as for an empirical CDF.
    Step,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Renders `series` as a well-formed standalone SVG document.
pub fn chart(title: &str, x_label: &str, y_label: &str, series: &[Series], style: Style) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = W - PAD_L - PAD_R;
    let ph = H - PAD_T - PAD_B;
    let sx = |x: f64| PAD_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| PAD_T + ph - (y - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#,
        PAD_L + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{PAD_L},{PAD_T} V{} H{}" fill="none" stroke="black"/>"#,
        PAD_T + ph,
        PAD_L + pw
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            PAD_T + ph + 18.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            PAD_L - 6.0,
            sy(yv) + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        PAD_L + pw / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        PAD_T + ph / 2.0,
        PAD_T + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            match (prev, style) {
                (None, _) => {
                    let _ = write!(d, "M{:.2},{:.2}", sx(x), sy(y));
                }
                (Some(_), Style::Line) => {
                    let _ = write!(d, " L{:.2},{:.2}", sx(x), sy(y));
                }
                (Some(_), Style::Step) => {
                    let _ = write!(d, " H{:.2} V{:.2}", sx(x), sy(y));
                }
            }
            prev = Some((x, y));
        }
        if !d.is_empty() {
            let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.6"/>"#);
        }
        let ly = PAD_T + 14.0 + 18.0 * i as f64;
        let lx = PAD_L + pw + 12.0;
        let _ = writeln!(s, r#"<path d="M{lx},{ly} h20" stroke="{color}" stroke-width="2"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
