use std::fmt::Write as _;

use crate::diffengine::Tensor;
use crate::{Error, Result};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 24.0;

/// Scatter plot of source, target and mapped-source points, with a segment
/// from every source point to its image.
pub fn movement_svg(title: &str, source: &Tensor, target: &Tensor, mapped: &Tensor) -> Result<String> {
    for (name, t) in [("source", source), ("target", target), ("mapped", mapped)] {
        if t.ndim() != 2 || t.shape()[1] < 2 {
            return Err(Error::InvalidArgument(format!("{name} points must have at least two columns")));
        }
    }
    if source.rows() != mapped.rows() {
        return Err(Error::InvalidArgument(format!(
            "{} source points but {} mapped points",
            source.rows(),
            mapped.rows()
        )));
    }
    let points = || {
        [source, target, mapped]
            .into_iter()
            .flat_map(|t| (0..t.rows()).map(move |r| (t.row(r)[0], t.row(r)[1])))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    let span_x = (x1 - x0).max(1e-9);
    let span_y = (y1 - y0).max(1e-9);
    let px = |x: f64| MARGIN + (x - x0) / span_x * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / span_y * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="12">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(svg, r##"<g stroke="#999999" stroke-width="0.5" stroke-opacity="0.6">"##);
    for r in 0..source.rows() {
        let (s, m) = (source.row(r), mapped.row(r));
        if [s[0], s[1], m[0], m[1]].iter().all(|v| v.is_finite()) {
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                px(s[0]),
                py(s[1]),
                px(m[0]),
                py(m[1])
            );
        }
    }
    let _ = writeln!(svg, "</g>");
    for (t, colour) in [(source, "#1f77b4"), (target, "#ff7f0e"), (mapped, "#2ca02c")] {
        let _ = writeln!(svg, r#"<g fill="{colour}" fill-opacity="0.7">"#);
        for r in 0..t.rows() {
            let p = t.row(r);
            if p[0].is_finite() && p[1].is_finite() {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, px(p[0]), py(p[1]));
            }
        }
        let _ = writeln!(svg, "</g>");
    }
    for (i, (label, colour)) in [("source", "#1f77b4"), ("target", "#ff7f0e"), ("mapped", "#2ca02c")]
        .into_iter()
        .enumerate()
    {
        let y = 32.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{colour}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{label}</text>"#,
            WIDTH - 80.0,
            y - 4.0,
            WIDTH - 70.0,
            y
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
