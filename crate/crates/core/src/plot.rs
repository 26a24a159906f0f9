//! Minimal SVG scatter plot for 2-D embedding projections.

use crate::{ClassId, Error, Result};
use std::collections::BTreeSet;
use std::fmt::Write;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const LEGEND_W: f64 = 110.0;

/// Colour used for a class, by its rank among the plotted classes.
pub fn class_colour(rank: usize) -> &'static str {
    PALETTE[rank % PALETTE.len()]
}

/// Renders `points` coloured by `labels` with a legend listing every class.
pub fn scatter_svg(points: &[(f64, f64)], labels: &[ClassId], title: &str) -> Result<String> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch(format!("{} points for {} labels", points.len(), labels.len())));
    }
    if points.is_empty() {
        return Err(Error::EmptyInput("nothing to plot".into()));
    }
    let classes: Vec<ClassId> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span_x = if x1 > x0 { x1 - x0 } else { 1.0 };
    let span_y = if y1 > y0 { y1 - y0 } else { 1.0 };
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_W;
    let plot_h = HEIGHT - 2.0 * MARGIN;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##
    );
    for (&(x, y), label) in points.iter().zip(labels) {
        let rank = classes.binary_search(label).expect("label collected");
        let px = MARGIN + (x - x0) / span_x * plot_w;
        let py = MARGIN + plot_h - (y - y0) / span_y * plot_h;
        let _ = writeln!(
            svg,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{}" fill-opacity="0.75"/>"#,
            class_colour(rank)
        );
    }
    let lx = WIDTH - LEGEND_W - MARGIN / 2.0;
    for (rank, class) in classes.iter().enumerate() {
        let ly = MARGIN + 10.0 + rank as f64 * 18.0;
        let _ = writeln!(svg, r#"<circle cx="{lx}" cy="{ly}" r="5" fill="{}"/>"#, class_colour(rank));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">class {class}</text>"#,
            lx + 10.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
