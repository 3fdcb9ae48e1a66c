//! Minimal SVG line and radar charts.

use std::fmt::Write as _;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series<'a> {
    pub label: String,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn header(title: &str) -> String {
    let full = SIZE + 2.0 * MARGIN;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{full}\" height=\"{full}\" viewBox=\"0 0 {full} {full}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        full / 2.0,
        MARGIN / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Unit-square line chart (both axes 0..1).
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], diagonal: bool) -> String {
    let mut s = header(title);
    let px = |x: f64| MARGIN + x * SIZE;
    let py = |y: f64| MARGIN + (1.0 - y) * SIZE;
    writeln!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"black\"/>"
    )
    .unwrap();
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v}</text>",
            px(v),
            py(0.0) + 16.0
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v}</text>",
            px(0.0) - 6.0,
            py(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        px(0.5),
        py(0.0) + 34.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">{}</text>",
        MARGIN - 34.0,
        py(0.5),
        MARGIN - 34.0,
        py(0.5),
        escape(y_label)
    )
    .unwrap();
    if diagonal {
        writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>",
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        )
        .unwrap();
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .x
            .iter()
            .zip(ser.y)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        )
        .unwrap();
        let ly = py(0.0) - 12.0 - 16.0 * (series.len() - 1 - i) as f64;
        writeln!(
            s,
            "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\" text-anchor=\"end\">{}</text>",
            px(1.0) - 6.0,
            escape(&ser.label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Radar chart of values in [0, 1], one polygon per participant.
pub fn radar_chart(title: &str, axes: &[String], participants: &[(String, Vec<f64>)]) -> String {
    let mut s = header(title);
    let (cx, cy, r) = (MARGIN + SIZE / 2.0, MARGIN + SIZE / 2.0, SIZE / 2.0 - 30.0);
    let n = axes.len().max(1);
    let at = |i: usize, v: f64| {
        let a = -std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        (cx + r * v * a.cos(), cy + r * v * a.sin())
    };
    for ring in 1..=4 {
        let v = ring as f64 / 4.0;
        let pts: Vec<String> = (0..n)
            .map(|i| {
                let (x, y) = at(i, v);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            s,
            "<polygon fill=\"none\" stroke=\"#ccc\" points=\"{}\"/>",
            pts.join(" ")
        )
        .unwrap();
    }
    for (i, name) in axes.iter().enumerate() {
        let (x, y) = at(i, 1.0);
        let (lx, ly) = at(i, 1.12);
        writeln!(
            s,
            "<line x1=\"{cx}\" y1=\"{cy}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"#ccc\"/>"
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\">{}</text>",
            escape(name)
        )
        .unwrap();
    }
    for (k, (name, values)) in participants.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (x, y) = at(i, v.clamp(0.0, 1.0));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            s,
            "<polygon fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            MARGIN,
            MARGIN + SIZE + 10.0 + 14.0 * k as f64 - 14.0 * participants.len() as f64,
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let x = [0.0, 0.5, 1.0];
        let svg = line_chart(
            "ROC <test>",
            "FPR",
            "TPR",
            &[Series {
                label: "a".into(),
                x: &x,
                y: &x,
            }],
            true,
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;test&gt;"));
        let radar = radar_chart(
            "r",
            &["a".into(), "b".into(), "c".into()],
            &[("DL".into(), vec![0.8, 0.8, 0.8])],
        );
        assert_eq!(radar.matches("<polygon").count(), 5);
    }
}
