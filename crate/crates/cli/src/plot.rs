//! Minimal static SVG charts (loss curves, probe accuracies). Hand-emitted
//! so plot output is dependency-free and byte-deterministic.

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: f64 = 55.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    )
}

fn axes(x_label: &str, y_label: &str) -> String {
    format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ly}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{cy}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {cy})\">{y_label}</text>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - 20.0,
        t = 36.0,
        cx = (MARGIN + W - 20.0) / 2.0,
        ly = H - 14.0,
        cy = (36.0 + H - MARGIN) / 2.0,
    )
}

/// Multi-series line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut svg = header(title);
    svg.push_str(&axes(x_label, y_label));
    let (mut xmin, mut xmax) = (f64::MAX, f64::MIN);
    let (mut ymin, mut ymax) = (f64::MAX, f64::MIN);
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() || series.iter().all(|s| s.points.is_empty()) {
        svg.push_str("</svg>\n");
        return svg;
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (W - MARGIN - 20.0);
    let sy = |y: f64| (H - MARGIN) - (y - ymin) / (ymax - ymin) * (H - MARGIN - 36.0);
    // Axis extent labels.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\n",
        MARGIN, H - MARGIN + 14.0, xmin,
        W - 20.0, H - MARGIN + 14.0, xmax,
        MARGIN - 4.0, 40.0, ymax,
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\n",
        MARGIN - 4.0,
        H - MARGIN,
        ymin,
    ));
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            W - 150.0,
            46.0 + 16.0 * i as f64,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bar chart with values in [0, 1] (accuracies); draws a dashed line at
/// `reference` when given (e.g. the chance level).
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)], reference: Option<f64>) -> String {
    let mut svg = header(title);
    svg.push_str(&axes("", y_label));
    let n = bars.len().max(1) as f64;
    let span = W - MARGIN - 20.0;
    let bw = (span / n * 0.6).min(80.0);
    let sy = |v: f64| (H - MARGIN) - v.clamp(0.0, 1.0) * (H - MARGIN - 36.0);
    for (i, (label, v)) in bars.iter().enumerate() {
        let cx = MARGIN + span * (i as f64 + 0.5) / n;
        let y = sy(*v);
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
            cx - bw / 2.0,
            y,
            bw,
            (H - MARGIN) - y,
            COLORS[i % COLORS.len()]
        ));
        svg.push_str(&format!(
            "<text x=\"{cx:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>\n",
            y - 6.0,
            v
        ));
        svg.push_str(&format!(
            "<text x=\"{cx:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            H - MARGIN + 16.0
        ));
    }
    if let Some(r) = reference {
        let y = sy(r);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"gray\" stroke-dasharray=\"6 3\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"gray\">chance {r:.3}</text>\n",
            W - 20.0,
            W - 140.0,
            y - 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_valid_ish_svg_and_deterministic() {
        let s = [Series {
            label: "loss",
            points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)],
        }];
        let a = line_chart("t", "step", "loss", &s);
        let b = line_chart("t", "step", "loss", &s);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("polyline"));

        let bars = bar_chart(
            "acc",
            "accuracy",
            &[("content".into(), 0.2), ("speaker".into(), 0.95)],
            Some(0.125),
        );
        assert!(bars.contains("rect"));
        assert!(bars.contains("chance"));
    }
}
