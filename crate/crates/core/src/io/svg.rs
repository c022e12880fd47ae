use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{Component, PlotSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgOptions {
    /// Side of the square plotting area in pixels.
    pub size: f64,
    pub margin: f64,
    pub marker_radius: f64,
    /// Extra line `y = slope * x`.
    pub overlay_slope: Option<f64>,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self {
            size: 400.0,
            margin: 60.0,
            marker_radius: 2.0,
            overlay_slope: None,
        }
    }
}

/// Maps data coordinates onto the square plotting area. Both axes share one
/// range so the diagonal is drawn at 45 degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub lo: f64,
    pub hi: f64,
    pub size: f64,
    pub margin: f64,
}

impl Frame {
    pub fn fit(set: &PlotSet, opts: &SvgOptions) -> Self {
        let (mut lo, mut hi) = set
            .pairs
            .iter()
            .flat_map(|p| [p.0, p.1])
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !(lo.is_finite() && hi.is_finite()) {
            lo = -1.0;
            hi = 1.0;
        }
        if hi - lo <= 0.0 {
            let half = lo.abs().max(1.0);
            lo -= half;
            hi += half;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
            size: opts.size,
            margin: opts.margin,
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        self.margin + (x - self.lo) / (self.hi - self.lo) * self.size
    }

    pub fn py(&self, y: f64) -> f64 {
        self.margin + self.size - (y - self.lo) / (self.hi - self.lo) * self.size
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of the pairs with the diagonal, axis ticks and labels.
pub fn render_svg(set: &PlotSet, opts: &SvgOptions) -> String {
    let f = Frame::fit(set, opts);
    let total = opts.size + 2.0 * opts.margin;
    let x0 = f.margin;
    let (y0, y1) = (f.margin, f.margin + f.size);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(
        s,
        r#"<defs><clipPath id="area"><rect x="{x0}" y="{y0}" width="{w}" height="{w}"/></clipPath></defs>"#,
        w = f.size
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y0}" width="{w}" height="{w}" fill="none" stroke="black"/>"#,
        w = f.size
    );
    for t in ticks(f.lo, f.hi) {
        let (px, py) = (f.px(t), f.py(t));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.3}" y1="{y1}" x2="{px:.3}" y2="{}" stroke="black"/><text x="{px:.3}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            y1 + 5.0,
            y1 + 18.0,
            fmt_tick(t)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{py:.3}" x2="{x0}" y2="{py:.3}" stroke="black"/><text x="{}" y="{:.3}" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<line class="diagonal" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="blue" clip-path="url(#area)"/>"#,
        f.px(f.lo),
        f.py(f.lo),
        f.px(f.hi),
        f.py(f.hi)
    );
    if let Some(slope) = opts.overlay_slope {
        let _ = writeln!(
            s,
            r#"<line class="overlay" data-slope="{slope}" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="black" clip-path="url(#area)"/>"#,
            f.px(f.lo),
            f.py(slope * f.lo),
            f.px(f.hi),
            f.py(slope * f.hi)
        );
    }
    s.push_str(r#"<g class="markers" fill="red" fill-opacity="0.6">"#);
    s.push('\n');
    for (x, y) in &set.pairs {
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="{}"/>"#, f.px(*x), f.py(*y), opts.marker_radius);
    }
    s.push_str("</g>\n");
    let what = match set.component {
        Component::Coordinate(_) => "quantile",
        Component::Potential => "potential",
    };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">X {what}, {}</text>"#,
        x0 + f.size / 2.0,
        y1 + 40.0,
        escape(&set.component.label())
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {0})">Y {what}, {1}</text>"#,
        y0 + f.size / 2.0,
        escape(&set.component.label())
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{} {}</text>"#,
        x0 + f.size / 2.0,
        y0 - 20.0,
        escape(&set.method.tag()),
        escape(&set.component.label())
    );
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{Method, SampleSizes};

    fn set(pairs: Vec<(f64, f64)>) -> PlotSet {
        let n = pairs.len();
        PlotSet {
            pairs,
            component: Component::Coordinate(1),
            method: Method::Ot,
            region_tag: "all".into(),
            sample_sizes: SampleSizes { x: n, y: n, reference: n },
            reference_indices: (0..n).collect(),
        }
    }

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!("{name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    #[test]
    fn single_point_has_marker_and_diagonal() {
        let doc = render_svg(&set(vec![(0.0, 0.0)]), &SvgOptions::default());
        assert!(doc.starts_with("<?xml"));
        assert!(doc.trim_end().ends_with("</svg>"));
        assert_eq!(doc.matches("<circle").count(), 1);
        assert!(doc.contains(r#"class="diagonal""#));
        assert!(doc.contains("component 2"));
    }

    #[test]
    fn diagonal_points_sit_on_the_line() {
        let pairs: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.37 - 4.0, i as f64 * 0.37 - 4.0)).collect();
        let doc = render_svg(&set(pairs), &SvgOptions::default());
        let line = doc.lines().find(|l| l.contains(r#"class="diagonal""#)).unwrap();
        let (x1, y1, x2, y2) = (attr(line, "x1"), attr(line, "y1"), attr(line, "x2"), attr(line, "y2"));
        let len = ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt();
        let mut seen = 0;
        for l in doc.lines().filter(|l| l.starts_with("<circle")) {
            let (cx, cy) = (attr(l, "cx"), attr(l, "cy"));
            let dist = ((x2 - x1) * (y1 - cy) - (x1 - cx) * (y2 - y1)).abs() / len;
            assert!(dist < 0.5, "{dist}");
            seen += 1;
        }
        assert_eq!(seen, 50);
    }

    #[test]
    fn overlay_line_is_emitted() {
        let opts = SvgOptions {
            overlay_slope: Some(2.0),
            ..SvgOptions::default()
        };
        let doc = render_svg(&set(vec![(0.0, 0.0), (1.0, 2.0)]), &opts);
        assert!(doc.contains(r#"class="overlay" data-slope="2""#));
        assert!(!render_svg(&set(vec![(0.0, 0.0)]), &SvgOptions::default()).contains("overlay\""));
    }

    #[test]
    fn ticks_cover_range() {
        let t = ticks(-1.3, 2.7);
        assert!(t.first().unwrap() >= &-1.3 && t.last().unwrap() <= &2.7);
        assert!(t.len() >= 4);
    }
}
