//! Line charts of accuracy against BER on a log10 axis, as plain SVG text.
//!
//! Output depends only on the input series, so charts of equal tables are
//! byte-identical.

use std::fmt::Write as _;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;

const LEFT: f64 = 70.0;
const RIGHT: f64 = 600.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 540.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// (ber, accuracy) pairs; non-positive BERs and NaN accuracies are not drawn.
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn drawable(series: &[Series]) -> impl Iterator<Item = (f64, f64)> + '_ {
    series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(b, a)| b > 0.0 && b.is_finite() && !a.is_nan())
}

/// Renders an 800x600 chart. The y axis always spans accuracy 0 to 1.
pub fn render_chart(title: &str, series: &[Series]) -> String {
    let (lo, hi) = drawable(series).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (b, _)| {
        let d = b.log10();
        (lo.min(d), hi.max(d))
    });
    let (mut lo, mut hi) = if lo.is_finite() { (lo.floor(), hi.ceil()) } else { (-9.0, -2.0) };
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let x = |ber: f64| LEFT + (ber.log10() - lo) / (hi - lo) * (RIGHT - LEFT);
    let y = |acc: f64| BOTTOM - acc.clamp(0.0, 1.0) * (BOTTOM - TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
        (LEFT + RIGHT) / 2.0,
        escape(title)
    );

    for d in (lo as i32)..=(hi as i32) {
        let px = LEFT + (f64::from(d) - lo) / (hi - lo) * (RIGHT - LEFT);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{BOTTOM:.2}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"#,
            BOTTOM + 18.0
        );
    }
    for i in 0..=5 {
        let acc = f64::from(i) / 5.0;
        let py = y(acc);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{RIGHT:.2}" y2="{py:.2}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{acc:.1}</text>"#,
            LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">bit error rate</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 42.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">accuracy</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    );

    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if i >= PALETTE.len() { r#" stroke-dasharray="6 3""# } else { "" };
        let pts: Vec<(f64, f64)> = drawable(std::slice::from_ref(series)).map(|(b, a)| (x(b), y(a))).collect();
        if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|(px, py)| format!("{px:.2},{py:.2}")).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                coords.join(" ")
            );
            for (px, py) in &pts {
                let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            RIGHT + 15.0,
            RIGHT + 40.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            RIGHT + 46.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> Vec<Series> {
        vec![
            Series {
                label: "model / none".into(),
                points: vec![(1e-9, 0.81), (1e-6, 0.8), (1e-2, 0.14)],
            },
            Series {
                label: "act <&> bit-mask".into(),
                points: vec![(1e-9, 0.81), (1e-2, f64::NAN)],
            },
        ]
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = render_chart("gcn on cora", &series());
        assert_eq!(a, render_chart("gcn on cora", &series()));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains(r#"viewBox="0 0 800 600""#));
        assert!(a.contains("act &lt;&amp;&gt; bit-mask"));
        assert_eq!(a.matches("<polyline").count(), 2);
        // Decade ticks 1e-9 through 1e-2.
        assert_eq!(a.matches(">1e-").count(), 8);
    }

    #[test]
    fn log_axis_positions() {
        let svg = render_chart("t", &series());
        // 1e-9 sits on the left edge at accuracy 0.81, 1e-2 on the right edge.
        assert!(svg.contains(&format!("{:.2},{:.2}", LEFT, BOTTOM - 0.81 * (BOTTOM - TOP))));
        assert!(svg.contains(&format!("{:.2},{:.2}", RIGHT, BOTTOM - 0.14 * (BOTTOM - TOP))));
        let mid = LEFT + 3.0 / 7.0 * (RIGHT - LEFT);
        assert!(svg.contains(&format!("{mid:.2},")));
    }

    #[test]
    fn empty_chart_still_renders() {
        let svg = render_chart("none", &[]);
        assert!(svg.contains("1e-9") && svg.contains("1e-2"));
    }
}
