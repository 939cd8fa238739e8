//! Minimal log-log line charts for rate studies.

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Each series is `(label, ns, values)`; non-positive values are skipped.
pub fn loglog(title: &str, series: &[(String, Vec<usize>, Vec<f64>)]) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, ns, vs)| ns.iter().zip(vs))
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(&n, &v)| ((n as f64).log10(), v.log10()))
        .collect();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
    if pts.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    out.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lb}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">log10 n</text>\n",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        lb = H - 16.0
    ));
    for (x, label) in [(x0, x0), (x1, x1)] {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{:.2}</text>\n",
            sx(x),
            H - PAD + 14.0,
            label
        ));
    }
    for (y, label) in [(y0, y0), (y1, y1)] {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.2}</text>\n",
            PAD - 4.0,
            sy(y) + 3.0,
            label
        ));
    }
    for (j, (label, ns, vs)) in series.iter().enumerate() {
        let color = COLORS[j % COLORS.len()];
        let line: Vec<String> = ns
            .iter()
            .zip(vs)
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(&n, &v)| format!("{:.1},{:.1}", sx((n as f64).log10()), sy(v.log10())))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            line.join(" "),
            W - PAD - 100.0,
            PAD + 16.0 * (j as f64 + 1.0),
            escape(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_polyline_per_series() {
        let s = vec![
            ("a".to_string(), vec![8, 16, 32], vec![1.0, 0.5, 0.25]),
            ("b<c".to_string(), vec![8, 16, 32], vec![1.0, 0.7, 0.0]),
        ];
        let svg = loglog("t & u", &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &amp; u") && svg.contains("b&lt;c"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_chart_is_valid() {
        assert!(loglog("x", &[]).contains("</svg>"));
    }
}
