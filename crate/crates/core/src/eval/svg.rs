//! Minimal SVG plots: curves, LARS coefficient paths and quantile boxes.

use std::fmt::Write as _;

use super::{Curve, CurveKind, Quantiles, QuantileSummary};
use crate::meta::LarsPath;

const W: f64 = 420.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    out: String,
}

impl Frame {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 8.0, escape(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
        for (v, anchor) in [(x.0, "start"), (x.1, "end")] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{}</text>"#,
                if anchor == "start" { PAD } else { W - PAD },
                H - PAD + 14.0,
                fmt_tick(v)
            );
        }
        for v in [y.0, y.1] {
            let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 4.0, Self::map(v, y, H - PAD, PAD) + 4.0, fmt_tick(v));
        }
        Self { x, y, out }
    }

    fn map(v: f64, range: (f64, f64), from: f64, to: f64) -> f64 {
        let span = if range.1 > range.0 { range.1 - range.0 } else { 1.0 };
        from + (v - range.0) / span * (to - from)
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (Self::map(x, self.x, PAD, W - PAD), Self::map(y, self.y, H - PAD, PAD))
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (a, b) = self.px(x, y);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let _ = writeln!(
            self.out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn fmt_tick(v: f64) -> String {
    format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// ROC or PR curve with its area in the title.
pub fn curve(c: &Curve, title: &str) -> String {
    let (xl, yl) = match c.kind {
        CurveKind::Roc => ("false positive rate", "true positive rate"),
        CurveKind::Pr => ("recall", "precision"),
    };
    let mut f = Frame::new(&format!("{title} (area {:.4})", c.area), xl, yl, (0.0, 1.0), (0.0, 1.0));
    f.polyline(&c.points, PALETTE[0]);
    f.finish()
}

/// Coefficient trajectories against the normalized l1 norm.
pub fn lars(path: &LarsPath, title: &str) -> String {
    let coefs = path.steps.iter().flat_map(|s| s.coefficients.iter().copied());
    let (lo, hi) = coefs.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let mut f = Frame::new(title, "|beta|_1 / max |beta|_1", "coefficient", (0.0, 1.0), (lo, hi));
    for (j, name) in path.names.iter().enumerate() {
        let pts: Vec<(f64, f64)> = path.steps.iter().map(|s| (s.l1_ratio, s.coefficients[j])).collect();
        let color = PALETTE[j % PALETTE.len()];
        f.polyline(&pts, color);
        if let Some(&(x, y)) = pts.last() {
            if y != 0.0 {
                let (a, b) = f.px(x, y);
                let _ = writeln!(f.out, r#"<text x="{:.1}" y="{b:.1}" fill="{color}">{}</text>"#, a + 3.0, escape(name));
            }
        }
    }
    f.finish()
}

/// Box plots of the positive and negative score distributions: whiskers at
/// p1/p99, box at the quartiles, a line at the median.
pub fn quantiles(q: &QuantileSummary, title: &str) -> String {
    let rows: [(&str, &Quantiles); 2] = [("OoD", &q.positive), ("in-dist", &q.negative)];
    let lo = q.positive.min.min(q.negative.min);
    let hi = q.positive.max.max(q.negative.max);
    let mut f = Frame::new(title, "", "score", (0.0, 2.0), (lo, hi));
    for (k, (label, s)) in rows.iter().enumerate() {
        let xc = k as f64 + 0.5;
        let color = PALETTE[k];
        f.polyline(&[(xc, s.p1), (xc, s.p99)], color);
        let (x0, y75) = f.px(xc - 0.2, s.p75);
        let (x1, y25) = f.px(xc + 0.2, s.p25);
        let _ = writeln!(
            f.out,
            r#"<rect x="{x0:.2}" y="{y75:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="{color}"/>"#,
            x1 - x0,
            (y25 - y75).max(0.5)
        );
        f.polyline(&[(xc - 0.2, s.median), (xc + 0.2, s.median)], color);
        let (tx, _) = f.px(xc, lo);
        let _ = writeln!(f.out, r#"<text x="{tx:.1}" y="{}" text-anchor="middle">{label}</text>"#, H - PAD - 4.0);
    }
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{quantile_summary, roc_curve, ScoredPixels};

    #[test]
    fn emits_well_formed_documents() {
        let sp = ScoredPixels::new(vec![0.1, 0.4, 0.35, 0.8], vec![false, false, true, true]).unwrap();
        let c = roc_curve(&sp).unwrap();
        let doc = curve(&c, "ROC <test>");
        assert!(doc.starts_with("<svg") && doc.ends_with("</svg>\n"));
        assert!(doc.contains("&lt;test&gt;"));
        assert_eq!(doc.matches("<polyline").count(), 1);
        let q = quantiles(&quantile_summary(&sp).unwrap(), "q");
        assert_eq!(q.matches("<rect").count(), 4);
    }
}
