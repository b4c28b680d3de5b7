//! SVG skeleton frames. Landmarks closer to the camera (more negative z)
//! are drawn larger and darker; the wrist, at z = 0, keeps the base radius.

use std::fmt::Write;

use crate::io::TrackRecord;
use crate::types::skeleton_edges;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderStyle {
    pub width: u32,
    pub height: u32,
    pub base_radius: f64,
    /// Radius growth per unit of negative z.
    pub depth_gain: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            width: 640,
            height: 640,
            base_radius: 4.0,
            depth_gain: 1.0,
        }
    }
}

impl RenderStyle {
    /// Strictly decreasing in `z`, equal to the base radius at 0 and never
    /// below a quarter of it.
    pub fn radius(&self, z: f64) -> f64 {
        let r = self.base_radius * (1.0 - self.depth_gain * z);
        r.max(0.25 * self.base_radius)
    }

    /// Gray level, 0 (near) to 200 (far).
    fn shade(&self, z: f64) -> u8 {
        (100.0 + 200.0 * z).clamp(0.0, 200.0).round() as u8
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// One SVG document for one tracked frame.
pub fn render_frame(record: &TrackRecord, style: &RenderStyle) -> String {
    let (w, h) = (style.width as f64, style.height as f64);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for hand in &record.hands {
        let px = |i: usize| (hand.landmarks[i][0] * w, hand.landmarks[i][1] * h);
        let _ = writeln!(
            svg,
            r#"<g class="hand" data-id="{}" data-handedness="{}" data-gesture="{}">"#,
            hand.id,
            hand.handedness.as_str(),
            hand.gesture
        );
        for (a, b) in skeleton_edges() {
            if a >= hand.landmarks.len() || b >= hand.landmarks.len() {
                continue;
            }
            let ((x1, y1), (x2, y2)) = (px(a), px(b));
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="steelblue" stroke-width="2"/>"#,
                fmt_num(x1),
                fmt_num(y1),
                fmt_num(x2),
                fmt_num(y2)
            );
        }
        for (i, p) in hand.landmarks.iter().enumerate() {
            let (x, y) = px(i);
            let g = style.shade(p[2]);
            let _ = writeln!(
                svg,
                r#"<circle data-landmark="{i}" cx="{}" cy="{}" r="{}" fill="rgb({g},{g},{g})"/>"#,
                fmt_num(x),
                fmt_num(y),
                fmt_num(style.radius(p[2]))
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gesture::GestureLabel;
    use crate::io::TrackedHandRecord;
    use crate::types::Handedness;

    #[test]
    fn radius_rule() {
        let s = RenderStyle::default();
        assert_eq!(s.radius(0.0), s.base_radius);
        assert!(s.radius(-0.5) > s.radius(0.0));
        assert!(s.radius(0.2) < s.radius(0.0));
        assert!(s.radius(50.0) > 0.0);
    }

    #[test]
    fn one_circle_per_landmark() {
        let rec = TrackRecord {
            timestamp_us: 0,
            detector_ran: true,
            hands: vec![TrackedHandRecord {
                id: 0,
                presence: 1.0,
                handedness: Handedness::Right,
                landmarks: (0..21).map(|i| [0.3 + 0.01 * i as f64, 0.5, -0.01 * i as f64]).collect(),
                gesture: GestureLabel::OpenPalm,
            }],
        };
        let svg = render_frame(&rec, &RenderStyle::default());
        assert_eq!(svg.matches("<circle").count(), 21);
        assert_eq!(svg.matches("<line").count(), skeleton_edges().len());
    }
}
