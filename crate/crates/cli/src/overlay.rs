//! SVG drawing of correspondences: each lattice point of the source image
//! is linked to where the predicted transform sends it in the target frame.

use std::fmt::Write as _;

use semmatch::evaluation::warp_keypoint;
use semmatch::geometry::{GeometricTransform, Point};

/// One source point and its image under the transform, both in target pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub from: Point,
    pub to: Point,
}

impl Link {
    pub fn length(&self) -> f64 {
        (self.to[0] - self.from[0]).hypot(self.to[1] - self.from[1])
    }
}

/// `side x side` lattice of source pixels mapped through `t`. The start of
/// each link is the same pixel position rescaled into the target frame.
pub fn lattice_links(t: &GeometricTransform, side: usize, from: (usize, usize), to: (usize, usize)) -> Vec<Link> {
    let identity = GeometricTransform::identity();
    let mut out = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let frac = |k: usize| (k as f64 + 0.5) / side as f64;
            let p = [frac(j) * (from.0 - 1) as f64, frac(i) * (from.1 - 1) as f64];
            out.push(Link {
                from: warp_keypoint(&identity, p, from, to),
                to: warp_keypoint(t, p, from, to),
            });
        }
    }
    out
}

pub fn render_svg(links: &[Link], size: (usize, usize)) -> String {
    let (w, h) = size;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .expect("string write");
    writeln!(
        s,
        r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#111" stroke="#888"/>"##
    )
    .expect("string write");
    for (k, l) in links.iter().enumerate() {
        let hue = (k * 360) / links.len().max(1);
        let color = format!("hsl({hue},85%,55%)");
        writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
            l.from[0], l.from[1], l.to[0], l.to[1]
        )
        .expect("string write");
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#,
            l.to[0], l.to[1]
        )
        .expect("string write");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use semmatch::geometry::AffineParams;

    #[test]
    fn identity_links_have_zero_length() {
        let links = lattice_links(&GeometricTransform::identity(), 5, (64, 48), (64, 48));
        assert_eq!(links.len(), 25);
        assert!(links.iter().all(|l| l.length() < 1e-9));
    }

    #[test]
    fn translation_moves_every_link_equally() {
        // 0.5 normalized units across a 65 px frame is 16 px.
        let t = GeometricTransform::Affine(AffineParams::translation(0.5, 0.0));
        let links = lattice_links(&t, 4, (65, 65), (65, 65));
        assert!(links.iter().all(|l| (l.to[0] - l.from[0] - 16.0).abs() < 1e-9));
    }

    #[test]
    fn svg_has_one_line_per_link() {
        let links = lattice_links(&GeometricTransform::identity(), 3, (32, 32), (32, 32));
        let svg = render_svg(&links, (32, 32));
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<line").count(), 9);
    }
}
