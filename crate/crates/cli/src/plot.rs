//! Static SVG of trajectories: frame on the horizontal axis, box centre x on
//! the vertical one.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use flowtrack::{Frame, Trajectory};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 540.0;
const MARGIN: f64 = 56.0;
pub const DASH: &str = "6 4";
const GT_STROKE: &str = "#c8c8c8";

/// Distinct hue per identity rank, spread by the golden angle.
pub fn color(rank: usize) -> String {
    format!("hsl({:.1},70%,42%)", (rank as f64 * 137.507_764) % 360.0)
}

struct Scale {
    f0: f64,
    f1: f64,
    x0: f64,
    x1: f64,
}

impl Scale {
    fn fit<'a>(tracks: impl Iterator<Item = &'a Trajectory>) -> Self {
        let mut s = Scale {
            f0: f64::INFINITY,
            f1: f64::NEG_INFINITY,
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
        };
        for e in tracks.flat_map(|t| &t.entries) {
            let cx = e.bbox.x + e.bbox.w / 2.0;
            s.f0 = s.f0.min(e.frame as f64);
            s.f1 = s.f1.max(e.frame as f64);
            s.x0 = s.x0.min(cx);
            s.x1 = s.x1.max(cx);
        }
        if !s.f0.is_finite() {
            return Scale {
                f0: 1.0,
                f1: 2.0,
                x0: 0.0,
                x1: 1.0,
            };
        }
        if s.f1 <= s.f0 {
            s.f1 = s.f0 + 1.0;
        }
        if s.x1 <= s.x0 {
            s.x1 = s.x0 + 1.0;
        }
        s
    }

    fn px(&self, frame: Frame) -> f64 {
        MARGIN + (frame as f64 - self.f0) / (self.f1 - self.f0) * (WIDTH - 2.0 * MARGIN)
    }

    /// Larger x is drawn higher.
    fn py(&self, x: f64) -> f64 {
        HEIGHT - MARGIN - (x - self.x0) / (self.x1 - self.x0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn axes(svg: &mut String, s: &Scale) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r##"<g class="axes" stroke="#333" stroke-width="1"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"##
    );
    let _ = writeln!(
        svg,
        r##"<g class="labels" font-family="sans-serif" font-size="12" fill="#333"><text x="{l}" y="{}">{}</text><text x="{r}" y="{}" text-anchor="end">{}</text><text x="{}" y="{}" text-anchor="middle">frame</text><text x="{}" y="{b}" text-anchor="end">{:.0}</text><text x="{}" y="{}" text-anchor="end">{:.0}</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">x</text></g>"##,
        b + 16.0,
        s.f0,
        b + 16.0,
        s.f1,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        l - 6.0,
        s.x0,
        l - 6.0,
        t + 4.0,
        s.x1,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
}

fn points(s: &Scale, t: &Trajectory, from: usize, to: usize) -> String {
    t.entries[from..=to]
        .iter()
        .map(|e| format!("{:.1},{:.1}", s.px(e.frame), s.py(e.bbox.x + e.bbox.w / 2.0)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders `tracks`, dashing every step that touches an interpolated box.
/// Interpolation comes from the entries themselves or from `flags`
/// (`(frame, identity)` pairs).
pub fn render(tracks: &[Trajectory], flags: &BTreeSet<(Frame, u32)>, gt: &[Trajectory]) -> String {
    let s = Scale::fit(tracks.iter().chain(gt));
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push('\n');
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    axes(&mut svg, &s);

    for t in gt.iter().filter(|t| t.len() > 1) {
        let _ = writeln!(
            svg,
            r#"<polyline class="gt" data-identity="{}" fill="none" stroke="{GT_STROKE}" stroke-width="3" points="{}"/>"#,
            t.identity,
            points(&s, t, 0, t.len() - 1)
        );
    }

    let mut ordered: Vec<&Trajectory> = tracks.iter().filter(|t| !t.is_empty()).collect();
    ordered.sort_by_key(|t| t.identity);
    for (rank, t) in ordered.iter().enumerate() {
        let c = color(rank);
        let id = t.identity;
        let interp: Vec<bool> = t
            .entries
            .iter()
            .map(|e| e.interpolated || flags.contains(&(e.frame, id)))
            .collect();
        if t.len() == 1 {
            let e = &t.entries[0];
            let _ = writeln!(
                svg,
                r#"<circle class="track" data-identity="{id}" cx="{:.1}" cy="{:.1}" r="2" fill="{c}" stroke="{c}"/>"#,
                s.px(e.frame),
                s.py(e.bbox.x + e.bbox.w / 2.0)
            );
            continue;
        }
        // Runs of steps with the same style become one polyline.
        let dashed = |k: usize| interp[k] || interp[k + 1];
        let mut start = 0;
        for k in 0..t.len() - 1 {
            let last = k + 1 == t.len() - 1;
            if last || dashed(k) != dashed(k + 1) {
                let dash = if dashed(k) {
                    format!(r#" stroke-dasharray="{DASH}""#)
                } else {
                    String::new()
                };
                let _ = writeln!(
                    svg,
                    r#"<polyline class="track" data-identity="{id}" fill="none" stroke="{c}" stroke-width="1.5"{dash} points="{}"/>"#,
                    points(&s, t, start, k + 1)
                );
                start = k + 1;
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
