//! Static log-scale plot of the squared ratio against iteration.

use std::fmt::Write as _;

use super::fit::Quantiles;

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    t_max: f64,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        LEFT + (W - LEFT - RIGHT) * t / self.t_max.max(1.0)
    }

    /// Values at or below zero are pinned to the bottom edge.
    fn y(&self, v: f64) -> f64 {
        let l = if v > 0.0 { v.log10().clamp(self.lo, self.hi) } else { self.lo };
        TOP + (H - TOP - BOTTOM) * (self.hi - l) / (self.hi - self.lo)
    }
}

fn polyline(out: &mut String, f: &Frame, values: &[f64], style: &str) {
    let pts: Vec<String> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .map(|(t, v)| format!("{:.2},{:.2}", f.x(t as f64), f.y(*v)))
        .collect();
    if !pts.is_empty() {
        let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, pts.join(" "));
    }
}

fn band(out: &mut String, f: &Frame, q: &[Quantiles], lower: fn(&Quantiles) -> f64, upper: fn(&Quantiles) -> f64, fill: &str) {
    let mut pts: Vec<String> = q.iter().enumerate().map(|(t, b)| format!("{:.2},{:.2}", f.x(t as f64), f.y(upper(b)))).collect();
    pts.extend(q.iter().enumerate().rev().map(|(t, b)| format!("{:.2},{:.2}", f.x(t as f64), f.y(lower(b)))));
    let _ = writeln!(out, r#"<polygon fill="{fill}" stroke="none" points="{}"/>"#, pts.join(" "));
}

/// Empirical min-max and interquartile bands, the median, the deterministic
/// curve and the population curve. Index `t` of every series is iteration `t`.
pub fn ratio_plot(title: &str, q: &[Quantiles], det: &[f64], pop: &[f64]) -> String {
    let positive = q
        .iter()
        .flat_map(|b| [b.min, b.max])
        .chain(det.iter().copied())
        .filter(|v| v.is_finite() && *v > 0.0);
    let (mut lo, mut hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.log10()), b.max(v.log10())));
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 1.0);
    }
    let frame = Frame { t_max: q.len().saturating_sub(1) as f64, lo: lo.floor(), hi: hi.ceil().max(lo.floor() + 1.0) };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));

    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    for k in frame.lo as i32..=frame.hi as i32 {
        let y = frame.y(10f64.powi(k));
        let _ = writeln!(s, r##"<line x1="{x0}" x2="{x1}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{k}</text>"#, x0 - 6.0, y + 4.0);
    }
    let step = ((frame.t_max / 10.0).ceil() as usize).max(1);
    for t in (0..=frame.t_max as usize).step_by(step) {
        let x = frame.x(t as f64);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{t}</text>"#, y1 + 18.0);
    }
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">squared ratio</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);

    if !q.is_empty() {
        band(&mut s, &frame, q, |b| b.min, |b| b.max, "#c6dbef");
        band(&mut s, &frame, q, |b| b.q25, |b| b.q75, "#6baed6");
        polyline(&mut s, &frame, &q.iter().map(|b| b.median).collect::<Vec<_>>(), r##"stroke="#08306b" stroke-width="2""##);
    }
    polyline(&mut s, &frame, det, r##"stroke="#d62728" stroke-width="2" stroke-dasharray="6 4""##);
    polyline(&mut s, &frame, pop, r##"stroke="#2ca02c" stroke-width="1.5" stroke-dasharray="2 3""##);

    let legend = [("#6baed6", "empirical median, IQR, min-max"), ("#d62728", "deterministic"), ("#2ca02c", "population")];
    for (i, (color, label)) in legend.iter().enumerate() {
        let y = y0 + 16.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" x2="{}" y1="{y}" y2="{y}" stroke="{color}" stroke-width="3"/>"#, x1 - 220.0, x1 - 196.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, x1 - 190.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
