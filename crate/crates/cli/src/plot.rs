//! Static SVG line plot of per-epoch discriminator loss.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_Y: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub label: String,
    /// `(epoch, value)` pairs.
    pub points: Vec<(usize, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One polyline per series plus a dashed horizontal line at `reference`.
pub fn line_plot(series: &[Series], reference: f64, reference_label: &str, y_label: &str) -> String {
    let max_epoch = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(2);
    let values = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|v| v.is_finite());
    let (lo, hi) = values.fold((reference, reference), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = ((hi - lo) * 0.08).max(0.05);
    let (y_min, y_max) = (lo - pad, hi + pad);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let x = |epoch: f64| MARGIN_LEFT + (epoch - 1.0) / (max_epoch as f64 - 1.0) * plot_w;
    let y = |v: f64| MARGIN_Y + (y_max - v) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN_LEFT, MARGIN_LEFT + plot_w, MARGIN_Y, MARGIN_Y + plot_h);
    let _ = writeln!(svg, r#"<rect x="{x0}" y="{y0}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);

    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let py = y(v);
        let _ = writeln!(svg, r##"<line x1="{x0}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#000"/>"##, x0 - 5.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, x0 - 8.0, py + 4.0);
    }
    let step = max_epoch.div_ceil(10).max(1);
    for epoch in (1..=max_epoch).step_by(step) {
        let px = x(epoch as f64);
        let _ = writeln!(svg, r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{:.2}" stroke="#000"/>"##, y1 + 5.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{epoch}</text>"#, y1 + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#, (x0 + x1) / 2.0, HEIGHT - 6.0);
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );

    let ry = y(reference);
    let _ = writeln!(
        svg,
        r##"<line class="reference" x1="{x0}" y1="{ry:.2}" x2="{x1}" y2="{ry:.2}" stroke="#555" stroke-dasharray="6 4" data-value="{reference:.4}"/>"##
    );
    let _ = writeln!(svg, r##"<text x="{:.2}" y="{:.2}" fill="#555">{}</text>"##, x1 + 6.0, ry + 4.0, escape(reference_label));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(e, v)| format!("{:.2},{:.2}", x(e as f64), y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = y0 + 20.0 + 18.0 * (i as f64 + 1.0);
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, x1 + 6.0, x1 + 26.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x1 + 30.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}
