//! Static SVG scatter and trajectory figures.
//!
//! Colour convention: source samples blue, target gray, generated orange,
//! trajectories purple and cluster source means as red crosses.

use std::fmt::Write as _;

use crate::Vec2;

pub const SOURCE_COLOR: &str = "#1f77b4";
pub const TARGET_COLOR: &str = "#9e9e9e";
pub const GENERATED_COLOR: &str = "#ff7f0e";
pub const TRAJECTORY_COLOR: &str = "#8e44ad";
pub const MEAN_COLOR: &str = "#d62728";

#[derive(Clone, Debug, Default)]
pub struct Figure {
    pub title: String,
    pub source: Vec<Vec2>,
    pub target: Vec<Vec2>,
    pub generated: Vec<Vec2>,
    pub trajectories: Vec<Vec<Vec2>>,
    pub cluster_means: Vec<Vec2>,
}

const SIZE: f64 = 600.0;
const MARGIN: f64 = 30.0;

struct Frame {
    min: Vec2,
    scale: f64,
}

impl Frame {
    fn fit(fig: &Figure) -> Frame {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let all = fig
            .source
            .iter()
            .chain(&fig.target)
            .chain(&fig.generated)
            .chain(&fig.cluster_means)
            .chain(fig.trajectories.iter().flatten());
        for p in all.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if !lo[0].is_finite() {
            lo = [-1.0, -1.0];
            hi = [1.0, 1.0];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let pad = 0.05 * span;
        Frame {
            min: [lo[0] - pad, lo[1] - pad],
            scale: (SIZE - 2.0 * MARGIN) / (span + 2.0 * pad),
        }
    }

    fn map(&self, p: Vec2) -> (f64, f64) {
        let x = MARGIN + (p[0] - self.min[0]) * self.scale;
        let y = SIZE - MARGIN - (p[1] - self.min[1]) * self.scale;
        (x, y)
    }
}

fn scatter(out: &mut String, frame: &Frame, points: &[Vec2], class: &str, color: &str) {
    if points.is_empty() {
        return;
    }
    writeln!(out, r#"<g class="{class}" fill="{color}" fill-opacity="0.6">"#).unwrap();
    for &p in points {
        let (x, y) = frame.map(p);
        writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6"/>"#).unwrap();
    }
    out.push_str("</g>\n");
}

pub fn render(fig: &Figure) -> String {
    let frame = Frame::fit(fig);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    if !fig.title.is_empty() {
        writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            SIZE / 2.0,
            escape(&fig.title)
        )
        .unwrap();
    }
    scatter(&mut out, &frame, &fig.target, "target", TARGET_COLOR);
    scatter(&mut out, &frame, &fig.source, "source", SOURCE_COLOR);
    if !fig.trajectories.is_empty() {
        writeln!(
            out,
            r#"<g class="trajectories" fill="none" stroke="{TRAJECTORY_COLOR}" stroke-opacity="0.5" stroke-width="0.8">"#
        )
        .unwrap();
        for tr in &fig.trajectories {
            out.push_str("<polyline points=\"");
            for (i, &p) in tr.iter().enumerate() {
                let (x, y) = frame.map(p);
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{x:.2},{y:.2}").unwrap();
            }
            out.push_str("\"/>\n");
        }
        out.push_str("</g>\n");
    }
    scatter(&mut out, &frame, &fig.generated, "generated", GENERATED_COLOR);
    for &m in &fig.cluster_means {
        let (x, y) = frame.map(m);
        let r = 6.0;
        writeln!(
            out,
            r#"<path class="cluster-mean" stroke="{MEAN_COLOR}" stroke-width="2.5" d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
