//! SVG plots of per-frame accident probability.
//!
//! Output depends only on the curve and the threshold: coordinates are
//! printed with fixed precision and nothing time-dependent is emitted.

use std::fmt::Write;

use crate::metrics::firing_frame;
use crate::scene::PredictionCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 44.0;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Frame {
    n: usize,
}

impl Frame {
    fn x(&self, frame: f64) -> f64 {
        let span = (self.n.max(2) - 1) as f64;
        LEFT + (frame - 1.0) / span * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, p: f64) -> f64 {
        TOP + (1.0 - p.clamp(0.0, 1.0)) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Probability against frame index, with the threshold as a horizontal line,
/// the accident frame (if any) as a dashed vertical line and the first
/// threshold crossing as a dot.
pub fn curve_svg(curve: &PredictionCurve, threshold: f64) -> String {
    let f = Frame { n: curve.probs.len() };
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (f.y(0.0), f.y(1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let label = if curve.positive { "positive" } else { "negative" };
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="22">{} ({label})</text>"#,
        escape(&curve.video_id)
    );

    // axes and ticks
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2} {y1:.2} V{y0:.2} H{x1:.2}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let p = k as f64 / 4.0;
        let y = f.y(p);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{p:.2}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let n = curve.probs.len();
    let step = (n / 8).max(1);
    let mut ticks: Vec<usize> = (1..=n).step_by(step).collect();
    if ticks.last() != Some(&n) && n > 0 {
        ticks.push(n);
    }
    for t in ticks {
        let x = f.x(t as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            y0 + 4.0,
            y0 + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">frame</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">probability</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    // threshold line
    let yq = f.y(threshold);
    let _ = writeln!(
        s,
        r##"<line class="threshold" x1="{x0:.2}" y1="{yq:.2}" x2="{x1:.2}" y2="{yq:.2}" stroke="#d62728" stroke-width="1"/>"##
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#d62728">threshold {threshold:.2}</text>"##,
        x1,
        yq - 4.0
    );

    // accident marker
    if let Some(y) = curve.accident_frame {
        let x = f.x(y as f64);
        let _ = writeln!(
            s,
            r##"<line class="accident" x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{y1:.2}" stroke="#444444" stroke-dasharray="6 4"/>"##
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" fill="#444444">accident</text>"##,
            x + 4.0,
            y1 + 12.0
        );
    }

    // probability curve
    if n > 0 {
        let mut d = String::new();
        for (i, &p) in curve.probs.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{:.2} {:.2} ", f.x((i + 1) as f64), f.y(p));
        }
        let _ = writeln!(
            s,
            r##"<path class="curve" d="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            d.trim_end()
        );
    }
    if let Some(i) = firing_frame(curve, threshold) {
        let _ = writeln!(
            s,
            r##"<circle class="firing" cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4"/>"##,
            f.x(i as f64),
            f.y(curve.probs[i - 1])
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> PredictionCurve {
        PredictionCurve::new("a<b", vec![0.1, 0.3, 0.6, 0.9], true, Some(4), 10.0).unwrap()
    }

    #[test]
    fn deterministic_and_escaped() {
        let a = curve_svg(&curve(), 0.5);
        assert_eq!(a, curve_svg(&curve(), 0.5));
        assert!(a.contains("a&lt;b"));
        assert!(a.contains("stroke-dasharray"));
        assert!(a.contains("threshold 0.50"));
    }

    #[test]
    fn negative_has_no_accident_marker() {
        let c = PredictionCurve::new("n", vec![0.2; 5], false, None, 10.0).unwrap();
        let svg = curve_svg(&c, 0.5);
        assert!(!svg.contains("class=\"accident\""));
        assert!(!svg.contains("class=\"firing\""));
    }
}
