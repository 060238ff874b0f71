//! Minimal SVG 1.1 scatter plots.

use std::collections::BTreeSet;
use std::fmt::Write as _;

/// Twenty distinguishable colors; label `-1` (noise) is drawn in grey and
/// does not use a palette slot.
pub const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];
const NOISE_COLOR: &str = "#b0b0b0";

const PLOT: f64 = 600.0;
const MARGIN: f64 = 20.0;
const LEGEND_W: f64 = 140.0;
const RADIUS: f64 = 2.5;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render points colored by label with equal axis scaling and a legend.
pub fn scatter(coords: &[[f64; 2]], labels: &[i64], title: Option<&str>) -> Result<String, String> {
    if coords.is_empty() {
        return Err("no points to plot".into());
    }
    assert_eq!(coords.len(), labels.len());
    let classes: Vec<i64> = labels.iter().copied().filter(|&l| l >= 0).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() > PALETTE.len() {
        return Err(format!(
            "{} labels but the palette has {} colors; merge labels before plotting",
            classes.len(),
            PALETTE.len()
        ));
    }
    let color = |l: i64| match classes.binary_search(&l) {
        Ok(i) => PALETTE[i],
        Err(_) => NOISE_COLOR,
    };

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in coords {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    // One scale for both axes keeps distances comparable in every direction.
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if span > 0.0 { PLOT / span } else { 1.0 };
    let cx = (lo[0] + hi[0]) / 2.0;
    let cy = (lo[1] + hi[1]) / 2.0;
    let top = if title.is_some() { 30.0 } else { 0.0 };
    let width = PLOT + 2.0 * MARGIN + LEGEND_W;
    let height = PLOT + 2.0 * MARGIN + top;

    let mut s = String::new();
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#).unwrap();
    if let Some(t) = title {
        writeln!(
            s,
            r#"<text x="{}" y="22" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            MARGIN + PLOT / 2.0,
            escape(t)
        )
        .unwrap();
    }
    writeln!(s, r#"<g stroke="none" fill-opacity="0.8">"#).unwrap();
    for (p, &l) in coords.iter().zip(labels) {
        let x = MARGIN + PLOT / 2.0 + (p[0] - cx) * scale;
        let y = top + MARGIN + PLOT / 2.0 - (p[1] - cy) * scale;
        writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{RADIUS}" fill="{}"/>"#, color(l)).unwrap();
    }
    writeln!(s, "</g>").unwrap();

    let mut entries: Vec<(String, &str)> = classes.iter().map(|&c| (c.to_string(), color(c))).collect();
    if labels.iter().any(|&l| l < 0) {
        entries.push(("noise".into(), NOISE_COLOR));
    }
    writeln!(s, r#"<g font-family="sans-serif" font-size="12">"#).unwrap();
    let lx = PLOT + 2.0 * MARGIN;
    for (i, (name, c)) in entries.iter().enumerate() {
        let y = top + MARGIN + 18.0 * i as f64;
        writeln!(s, r#"<rect x="{lx}" y="{y}" width="12" height="12" fill="{c}"/>"#).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 18.0, y + 10.0, escape(name)).unwrap();
    }
    writeln!(s, "</g>").unwrap();
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_point() {
        let svg = scatter(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]], &[0, 1, 1], None).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains(PALETTE[0]) && svg.contains(PALETTE[1]));
    }

    #[test]
    fn equal_aspect() {
        // A wide layout: y spans a fifth of x, so it must use a fifth of the height.
        let svg = scatter(&[[0.0, 0.0], [10.0, 2.0]], &[0, 0], None).unwrap();
        assert!(svg.contains(r#"cx="20.00" cy="380.00""#), "{svg}");
        assert!(svg.contains(r#"cx="620.00" cy="260.00""#), "{svg}");
    }

    #[test]
    fn palette_overflow() {
        let labels: Vec<i64> = (0..21).collect();
        let coords: Vec<[f64; 2]> = (0..21).map(|i| [i as f64, 0.0]).collect();
        let err = scatter(&coords, &labels, None).unwrap_err();
        assert!(err.contains("merge labels"));
        // noise does not count against the palette
        let mut labels: Vec<i64> = (0..20).collect();
        labels.push(-1);
        assert!(scatter(&coords, &labels, None).is_ok());
    }

    #[test]
    fn empty_is_an_error() {
        assert!(scatter(&[], &[], None).is_err());
    }
}
