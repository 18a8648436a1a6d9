//! Text-render half of the generator: march glyph boxes along a polyline at
//! arc-length positions, rotate each to the local tangent, and assemble the
//! word-level boundary polygon, character centers, and transcription.

use super::glyphs::GlyphAtlas;
use super::raster::{Color, Raster};
use crate::geometry::{
    polyline_length, polyline_point_at, polyline_tangent_at, vec2, vec2::Vec2, BoundaryPolygon,
};

/// Concrete rendering parameters for one label (already randomized by the
/// scene composer).
#[derive(Debug, Clone)]
pub struct LabelStyle {
    /// Glyph box height in pixels.
    pub font_size: f64,
    /// Gap between consecutive glyph boxes, pixels.
    pub letter_spacing: f64,
    /// Advance of a space character, pixels.
    pub word_spacing: f64,
    /// Ink shear, as x-offset per unit glyph height (box unaffected).
    pub slant: f64,
    /// Ink stroke width in pixels.
    pub stroke_width: f64,
    pub color: Color,
    /// Boundary polygon vertex count (even, ≥ 4).
    pub n_points: usize,
}

impl Default for LabelStyle {
    fn default() -> Self {
        Self {
            font_size: 14.0,
            letter_spacing: 2.0,
            word_spacing: 7.0,
            slant: 0.0,
            stroke_width: 1.4,
            color: [40, 34, 30],
            n_points: 8,
        }
    }
}

/// One placed character: an oriented box centered on the baseline.
#[derive(Debug, Clone)]
pub struct GlyphBox {
    pub ch: char,
    pub center: Vec2,
    /// Tangent angle in radians (screen coordinates, y down).
    pub angle: f64,
    pub width: f64,
    pub height: f64,
}

impl GlyphBox {
    /// Corners in screen space: [top-left, top-right, bottom-right,
    /// bottom-left] relative to the reading direction.
    pub fn corners(&self) -> [Vec2; 4] {
        let local = [
            [-self.width / 2.0, -self.height / 2.0],
            [self.width / 2.0, -self.height / 2.0],
            [self.width / 2.0, self.height / 2.0],
            [-self.width / 2.0, self.height / 2.0],
        ];
        local.map(|p| vec2::add(vec2::rotate(p, self.angle), self.center))
    }
}

/// A successfully placed label, geometry already validated: the polygon is a
/// simple even-N ring and every glyph centroid lies inside it.
#[derive(Debug, Clone)]
pub struct PlacedLabel {
    pub text: String,
    pub boxes: Vec<GlyphBox>,
    pub polygon: BoundaryPolygon,
    /// Glyph-box centroids, one per character of `text` (spaces included).
    pub centers: Vec<Vec2>,
}

fn advance_of(ch: char, style: &LabelStyle) -> f64 {
    if ch == ' ' {
        style.word_spacing
    } else {
        style.font_size * 0.62
    }
}

/// Place `text` along `polyline` centered by arc length. Returns `None` when
/// the line is too short or the resulting geometry fails validation — the
/// caller simply drops the label.
pub fn place_label_on_line(
    polyline: &[Vec2],
    text: &str,
    style: &LabelStyle,
    atlas: &GlyphAtlas,
) -> Option<PlacedLabel> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() || polyline.len() < 2 {
        return None;
    }
    if chars.iter().any(|&c| c != ' ' && !atlas.has(c)) {
        return None;
    }
    let advances: Vec<f64> = chars.iter().map(|&c| advance_of(c, style)).collect();
    let required: f64 =
        advances.iter().sum::<f64>() + style.letter_spacing * (chars.len() - 1) as f64;
    let total = polyline_length(polyline);
    if total < required {
        return None;
    }

    let start = (total - required) / 2.0;
    let mut pen = start;
    let mut boxes = Vec::with_capacity(chars.len());
    for (&ch, &adv) in chars.iter().zip(&advances) {
        let s = pen + adv / 2.0;
        let center = polyline_point_at(polyline, s);
        let t = polyline_tangent_at(polyline, s);
        boxes.push(GlyphBox {
            ch,
            center,
            angle: t[1].atan2(t[0]),
            width: adv,
            height: style.font_size,
        });
        pen += adv + style.letter_spacing;
    }

    let polygon = boundary_from_boxes(&boxes, style.n_points)?;
    let centers: Vec<Vec2> = boxes.iter().map(|b| b.center).collect();
    if !centers.iter().all(|&c| polygon.contains_with_tol(c, 1e-9)) {
        return None;
    }
    Some(PlacedLabel { text: text.to_string(), boxes, polygon, centers })
}

/// Build the word polygon: chain of glyph top corners resampled to N/2
/// points, then bottom corners right→left.
fn boundary_from_boxes(boxes: &[GlyphBox], n_points: usize) -> Option<BoundaryPolygon> {
    debug_assert!(n_points >= 4 && n_points % 2 == 0);
    let mut top = Vec::with_capacity(boxes.len() * 2);
    let mut bottom = Vec::with_capacity(boxes.len() * 2);
    for b in boxes {
        let c = b.corners();
        top.push(c[0]);
        top.push(c[1]);
        bottom.push(c[3]);
        bottom.push(c[2]);
    }
    let top_rs = resample_polyline(&top, n_points / 2);
    let mut bottom_rs = resample_polyline(&bottom, n_points / 2);
    bottom_rs.reverse();
    let mut ring = top_rs;
    ring.extend(bottom_rs);
    let poly = BoundaryPolygon::new(ring).ok()?;
    if !poly.is_simple() {
        return None;
    }
    Some(poly)
}

/// Uniform arc-length resampling, endpoints preserved.
pub fn resample_polyline(pts: &[Vec2], count: usize) -> Vec<Vec2> {
    debug_assert!(count >= 2 && pts.len() >= 2);
    let total = polyline_length(pts);
    (0..count)
        .map(|i| polyline_point_at(pts, total * i as f64 / (count - 1) as f64))
        .collect()
}

/// Place along the longest low-curvature run of a polygon boundary. The run
/// is re-oriented to read left-to-right before delegating to the line placer.
pub fn place_label_on_polygon(
    ring: &[Vec2],
    text: &str,
    style: &LabelStyle,
    atlas: &GlyphAtlas,
) -> Option<PlacedLabel> {
    let run = longest_smooth_run(ring)?;
    place_label_on_line(&run, text, style, atlas)
}

/// Maximal chain of consecutive boundary edges whose interior turn angles
/// stay below 35°, longest by arc length. Ties prefer the chain whose
/// midpoint is higher on the canvas (smaller y), then earlier in traversal —
/// that is what puts a wide rectangle's label on its top edge.
fn longest_smooth_run(ring: &[Vec2]) -> Option<Vec<Vec2>> {
    let n = ring.len();
    if n < 3 {
        return None;
    }
    const MAX_TURN: f64 = 35.0 * std::f64::consts::PI / 180.0;
    let edge_dir = |i: usize| {
        let d = vec2::sub(ring[(i + 1) % n], ring[i % n]);
        vec2::normalize(d)
    };
    // smooth[i]: the turn at the vertex between edge i and edge i+1 is small.
    let smooth: Vec<bool> = (0..n)
        .map(|i| {
            let a = edge_dir(i);
            let b = edge_dir(i + 1);
            vec2::dot(a, b).clamp(-1.0, 1.0).acos() < MAX_TURN
        })
        .collect();

    let mut best: Option<(f64, f64, usize, usize)> = None; // (len, mid_y, start, count)
    for start in 0..n {
        // Runs begin at a non-smooth joint (or anywhere if all joints are
        // smooth) and extend while the joints stay smooth, up to n edges.
        if smooth[(start + n - 1) % n] && !smooth.iter().all(|&s| s) {
            continue;
        }
        let mut count = 1usize;
        while count < n && smooth[(start + count - 1) % n] {
            count += 1;
        }
        let pts: Vec<Vec2> = (0..=count).map(|k| ring[(start + k) % n]).collect();
        let len = polyline_length(&pts);
        let mid = polyline_point_at(&pts, len / 2.0);
        let better = match &best {
            None => true,
            Some((blen, bmid_y, _, _)) => {
                let (blen, bmid_y) = (*blen, *bmid_y);
                len > blen + 1e-9 || ((len - blen).abs() <= 1e-9 && mid[1] < bmid_y - 1e-9)
            }
        };
        if better {
            best = Some((len, mid[1], start, count));
        }
    }
    let (_, _, start, count) = best?;
    let mut pts: Vec<Vec2> = (0..=count).map(|k| ring[(start + k) % n]).collect();
    // Read left-to-right.
    let net = vec2::sub(*pts.last().unwrap(), pts[0]);
    if net[0] < 0.0 {
        pts.reverse();
    }
    Some(pts)
}

/// Stroke the label's ink onto the canvas. Spaces draw nothing; each glyph's
/// unit-box skeleton is sheared, scaled into 80% of its box, rotated with
/// the box, and stroked.
pub fn render_label(img: &mut Raster, label: &PlacedLabel, style: &LabelStyle, atlas: &GlyphAtlas) {
    const INK_FRAC: f64 = 0.8;
    for b in &label.boxes {
        if b.ch == ' ' {
            continue;
        }
        let Some(strokes) = atlas.strokes(b.ch) else { continue };
        for stroke in strokes {
            let mapped: Vec<Vec2> = stroke
                .iter()
                .map(|&[gx, gy]| {
                    let sheared = gx + style.slant * (gy - 0.5);
                    let local = [
                        (sheared - 0.5) * b.width * INK_FRAC,
                        (0.5 - gy) * b.height * INK_FRAC,
                    ];
                    vec2::add(vec2::rotate(local, b.angle), b.center)
                })
                .collect();
            img.stroke_polyline(&mapped, style.stroke_width, style.color);
        }
    }
}
