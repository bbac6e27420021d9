//! Minimal SVG line plots of infection trajectories.

use std::fmt::Write;

/// Centered moving average; the window shrinks at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub dashed: bool,
    pub values: Vec<f64>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Daily infections against step index, one polyline per series, `t = 1..=T`.
pub fn line_chart(title: &str, series: &[Series], smooth: bool) -> String {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let drawn: Vec<Vec<f64>> = series
        .iter()
        .map(|s| if smooth { moving_average(&s.values, 5) } else { s.values.clone() })
        .collect();
    let y_max = drawn.iter().flatten().cloned().fold(1.0_f64, f64::max) * 1.05;
    let x_of = |t: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * if n > 1 { t as f64 / (n - 1) as f64 } else { 0.5 };
    let y_of = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * v / y_max;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="14" text-anchor="middle" font-family="sans-serif">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(svg, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    let _ = writeln!(svg, r#"<text x="{x0}" y="{}" font-size="11" font-family="sans-serif">t = 1</text>"#, y0 + 16.0);
    let _ = writeln!(svg, r#"<text x="{x1}" y="{}" font-size="11" text-anchor="end" font-family="sans-serif">t = {n}</text>"#, y0 + 16.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end" font-family="sans-serif">{:.0}</text>"#, x0 - 4.0, y1 + 4.0, y_max);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end" font-family="sans-serif">0</text>"#, x0 - 4.0, y0 + 4.0);

    for (k, (s, values)) in series.iter().zip(&drawn).enumerate() {
        let points: Vec<String> = values.iter().enumerate().map(|(t, v)| format!("{:.2},{:.2}", x_of(t), y_of(*v))).collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" points="{}" stroke="{}" stroke-width="2" fill="none"{dash}/>"#,
            escape(s.label),
            points.join(" "),
            s.color
        );
        let ly = MARGIN + 14.0 * k as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/>"#, x1 - 120.0, x1 - 100.0, s.color);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" font-family="sans-serif">{}</text>"#, x1 - 96.0, ly + 4.0, escape(s.label));
    }
    if smooth {
        let _ = writeln!(svg, r#"<text x="{x1}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">5-step moving average</text>"#, HEIGHT - 8.0);
    }
    svg.push_str("</svg>\n");
    svg
}
