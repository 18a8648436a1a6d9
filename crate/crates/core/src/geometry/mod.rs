//! Polygon and point utilities shared by generation, supervision, and
//! evaluation.
//!
//! The central type is [`BoundaryPolygon`]: N points in normalized image
//! coordinates, the first N/2 tracing the top of a word left-to-right and the
//! remaining N/2 tracing the bottom right-to-left, so the sequence closes
//! into a simple ring. Everything here is pure and f64-exact; the only
//! tolerance in play is [`COLLINEAR_TOL`] inside the clipping predicates.

pub mod vec2;

use crate::error::{Error, Result};
use vec2::Vec2;

/// Orientation tests treat |cross| below this as collinear. Coordinates are
/// normalized to [0,1], so 1e-12 is ~6 digits below single-pixel scale even
/// at large raster sizes.
pub const COLLINEAR_TOL: f64 = 1e-12;

/// Word boundary: N/2 top points left→right, then N/2 bottom points
/// right→left, normalized to the unit square (values may drift slightly
/// outside during training; geometry still works).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPolygon {
    points: Vec<Vec2>,
}

impl BoundaryPolygon {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.len() < 4 || points.len() % 2 != 0 {
            return Err(Error::contract(format!(
                "boundary polygon needs an even point count >= 4, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("boundary polygon has non-finite coordinates"));
        }
        Ok(Self { points })
    }

    /// Total point count N.
    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Points per curve, N/2.
    pub fn half(&self) -> usize {
        self.points.len() / 2
    }

    /// The closed ring in storage order (top then bottom).
    pub fn ring(&self) -> &[Vec2] {
        &self.points
    }

    /// Top curve, left→right.
    pub fn top(&self) -> &[Vec2] {
        &self.points[..self.half()]
    }

    /// Bottom curve, right→left.
    pub fn bottom(&self) -> &[Vec2] {
        &self.points[self.half()..]
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.points).abs() * 0.5
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::of_points(&self.points)
    }

    pub fn is_simple(&self) -> bool {
        ring_is_simple(&self.points)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        point_in_ring(p, &self.points)
    }

    /// Containment including points within `tol` of the boundary. The
    /// centerline tail sits exactly on the ring's closing edge, so checks on
    /// supervision targets need the inclusive form.
    pub fn contains_with_tol(&self, p: Vec2, tol: f64) -> bool {
        point_in_ring(p, &self.points) || dist_point_to_ring(p, &self.points) <= tol
    }

    /// Map every point through `f` (used for scene-space → normalized
    /// conversion and augmentation).
    pub fn map_points(&self, f: impl Fn(Vec2) -> Vec2) -> Self {
        Self { points: self.points.iter().map(|&p| f(p)).collect() }
    }
}

/// One labeled word.
#[derive(Debug, Clone, PartialEq)]
pub struct TextInstance {
    pub polygon: BoundaryPolygon,
    pub transcription: String,
    /// Character centers; when `centers_available`, exactly M entries
    /// (true characters first, then tail fill).
    pub char_centers: Vec<Vec2>,
    pub centers_available: bool,
    /// Excluded from losses and metrics (unreadable/numeric-only labels).
    pub dont_care: bool,
}

// ---- core operations --------------------------------------------------------

/// Exact intersection-over-union of two simple polygons. Degenerate
/// (zero-area) inputs give 0.
pub fn polygon_iou(a: &BoundaryPolygon, b: &BoundaryPolygon) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a < COLLINEAR_TOL || area_b < COLLINEAR_TOL {
        return 0.0;
    }
    let inter = intersection_area(a.ring(), b.ring());
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Area of the intersection of two simple rings: triangulate `b`, clip `a`
/// against each (convex) triangle, and sum the pieces.
pub fn intersection_area(a: &[Vec2], b: &[Vec2]) -> f64 {
    let mut ccw_b = b.to_vec();
    if shoelace(&ccw_b) < 0.0 {
        ccw_b.reverse();
    }
    let mut total = 0.0;
    for tri in triangulate(&ccw_b) {
        let clipped = convex_clip(a, &tri);
        total += shoelace(&clipped).abs() * 0.5;
    }
    total
}

/// Orientation of the top-curve chord, folded into [0°, 90°]. A zero-length
/// chord reports 0°.
pub fn rotation_angle(inst: &TextInstance) -> f64 {
    polygon_rotation_angle(&inst.polygon)
}

pub fn polygon_rotation_angle(poly: &BoundaryPolygon) -> f64 {
    let top = poly.top();
    let chord = vec2::sub(top[top.len() - 1], top[0]);
    if vec2::len(chord) < COLLINEAR_TOL {
        return 0.0;
    }
    let mut deg = chord[1].atan2(chord[0]).abs().to_degrees();
    if deg > 90.0 {
        deg = 180.0 - deg;
    }
    deg
}

/// Midpoints between corresponding top and bottom points, left→right:
/// point k pairs top[k] with bottom[N/2−1−k] (the bottom curve is stored
/// right→left).
pub fn centerline(poly: &BoundaryPolygon) -> Vec<Vec2> {
    let n = poly.half();
    let ring = poly.ring();
    (0..n).map(|k| vec2::midpoint(ring[k], ring[2 * n - 1 - k])).collect()
}

/// Last centerline point: the middle of the last top point and the first
/// bottom point.
pub fn centerline_tail(poly: &BoundaryPolygon) -> Vec2 {
    let n = poly.half();
    vec2::midpoint(poly.ring()[n - 1], poly.ring()[n])
}

/// Supervision targets for the M character-center slots: the instance's real
/// centers first, then the centerline tail point repeated for empty slots.
pub fn char_center_targets(inst: &TextInstance, m: usize) -> Result<Vec<Vec2>> {
    let c = inst.transcription.chars().count();
    if c > m {
        return Err(Error::contract(format!(
            "transcription of {c} chars exceeds {m} center slots"
        )));
    }
    let tail = centerline_tail(&inst.polygon);
    let mut out = vec![tail; m];
    for k in 0..c.min(inst.char_centers.len()) {
        out[k] = inst.char_centers[k];
    }
    Ok(out)
}

/// Ground-truth instance sanity checks enforced by the generator (criterion:
/// zero violations over large runs).
pub fn validate_instance(inst: &TextInstance, max_chars: usize) -> Result<()> {
    let poly = &inst.polygon;
    if !poly.is_simple() {
        return Err(Error::data(format!(
            "polygon ring self-intersects: {:?}",
            poly.ring()
        )));
    }
    if poly.area() < COLLINEAR_TOL {
        return Err(Error::data("polygon has zero area"));
    }
    let c = inst.transcription.chars().count();
    if c > max_chars {
        return Err(Error::data(format!(
            "transcription {:?} longer than {max_chars} slots",
            inst.transcription
        )));
    }
    if inst.centers_available && inst.char_centers.len() != max_chars {
        return Err(Error::data(format!(
            "centers_available but {} centers != {max_chars} slots",
            inst.char_centers.len()
        )));
    }
    if inst.char_centers.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite character center"));
    }
    Ok(())
}

// ---- axis-aligned boxes -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn of_points(pts: &[Vec2]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in pts {
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Self { min, max }
    }

    pub fn from_cxcywh(b: [f64; 4]) -> Self {
        let [cx, cy, w, h] = b;
        Self { min: [cx - w / 2.0, cy - h / 2.0], max: [cx + w / 2.0, cy + h / 2.0] }
    }

    pub fn cxcywh(&self) -> [f64; 4] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
        ]
    }

    pub fn width(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Aabb) -> f64 {
        let w = (self.max[0].min(other.max[0]) - self.min[0].max(other.min[0])).max(0.0);
        let h = (self.max[1].min(other.max[1]) - self.min[1].max(other.min[1])).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &Aabb) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Generalized IoU in [−1, 1]: IoU minus the fraction of the enclosing
    /// hull not covered by the union.
    pub fn giou(&self, other: &Aabb) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        let hull = Aabb {
            min: [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])],
            max: [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])],
        }
        .area();
        if hull <= 0.0 {
            return 0.0;
        }
        let iou = if union <= 0.0 { 0.0 } else { inter / union };
        iou - (hull - union) / hull
    }
}

// ---- polylines ------------------------------------------------------------------

pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| vec2::dist(w[0], w[1])).sum()
}

/// Point at arc length `s` from the start, clamped to the ends.
pub fn polyline_point_at(pts: &[Vec2], s: f64) -> Vec2 {
    assert!(!pts.is_empty());
    if pts.len() == 1 || s <= 0.0 {
        return pts[0];
    }
    let mut remaining = s;
    for w in pts.windows(2) {
        let seg = vec2::dist(w[0], w[1]);
        if remaining <= seg && seg > 0.0 {
            return vec2::lerp(w[0], w[1], remaining / seg);
        }
        remaining -= seg;
    }
    *pts.last().unwrap()
}

/// Unit tangent of the segment containing arc length `s`; past either end,
/// the tangent of the nearest non-degenerate segment.
pub fn polyline_tangent_at(pts: &[Vec2], s: f64) -> Vec2 {
    let mut remaining = s.max(0.0);
    let mut last = [1.0, 0.0];
    for w in pts.windows(2) {
        let seg = vec2::dist(w[0], w[1]);
        if seg <= 0.0 {
            continue;
        }
        last = vec2::normalize(vec2::sub(w[1], w[0]));
        if remaining <= seg {
            return last;
        }
        remaining -= seg;
    }
    last
}

// ---- ring predicates & clipping -----------------------------------------------------

/// Twice the signed area of the ring; positive for counter-clockwise order
/// (in y-up coordinates).
pub fn shoelace(ring: &[Vec2]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += vec2::cross(ring[i], ring[j]);
    }
    acc
}

/// Distance from `p` to the nearest point of the closed ring.
pub fn dist_point_to_ring(p: Vec2, ring: &[Vec2]) -> f64 {
    let n = ring.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        best = best.min(dist_point_to_segment(p, ring[i], ring[(i + 1) % n]));
    }
    best
}

pub fn dist_point_to_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = vec2::sub(b, a);
    let len2 = vec2::dot(ab, ab);
    if len2 == 0.0 {
        return vec2::dist(p, a);
    }
    let t = (vec2::dot(vec2::sub(p, a), ab) / len2).clamp(0.0, 1.0);
    vec2::dist(p, vec2::add(a, vec2::scale(ab, t)))
}

/// Even-odd ray-cast containment. Boundary points are not guaranteed either
/// way, as usual for this test.
pub fn point_in_ring(p: Vec2, ring: &[Vec2]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1])
            && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// True when no two non-adjacent edges touch and no adjacent edges overlap.
pub fn ring_is_simple(ring: &[Vec2]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        if vec2::dist(a1, a2) < COLLINEAR_TOL {
            return false; // repeated vertex
        }
        for j in (i + 1)..n {
            let adjacent = j == (i + 1) % n || (j + 1) % n == i;
            if adjacent {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_touch(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

/// Do closed segments [a1,a2] and [b1,b2] share any point?
fn segments_touch(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> bool {
    let d1 = orient(b1, b2, a1);
    let d2 = orient(b1, b2, a2);
    let d3 = orient(a1, a2, b1);
    let d4 = orient(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1.abs() <= COLLINEAR_TOL && on_segment(b1, b2, a1))
        || (d2.abs() <= COLLINEAR_TOL && on_segment(b1, b2, a2))
        || (d3.abs() <= COLLINEAR_TOL && on_segment(a1, a2, b1))
        || (d4.abs() <= COLLINEAR_TOL && on_segment(a1, a2, b2))
}

/// Sign of the turn a→b→c (twice the signed triangle area).
fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    vec2::cross(vec2::sub(b, a), vec2::sub(c, a))
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p[0] >= a[0].min(b[0]) - COLLINEAR_TOL
        && p[0] <= a[0].max(b[0]) + COLLINEAR_TOL
        && p[1] >= a[1].min(b[1]) - COLLINEAR_TOL
        && p[1] <= a[1].max(b[1]) + COLLINEAR_TOL
}

/// Sutherland–Hodgman: clip an arbitrary subject polygon against a convex,
/// counter-clockwise clip polygon.
pub fn convex_clip(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut out = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        let mut prev = *input.last().unwrap();
        let mut prev_side = orient(a, b, prev);
        for &cur in &input {
            let cur_side = orient(a, b, cur);
            let cur_in = cur_side >= -COLLINEAR_TOL;
            let prev_in = prev_side >= -COLLINEAR_TOL;
            if cur_in != prev_in {
                // Crossing point of prev→cur with the clip line through a,b.
                let t = prev_side / (prev_side - cur_side);
                out.push(vec2::lerp(prev, cur, t));
            }
            if cur_in {
                out.push(cur);
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    out
}

/// Ear-clipping triangulation of a counter-clockwise simple ring. Returns
/// vertex triples; collinear "ears" of zero area may appear and are harmless
/// for area sums.
pub fn triangulate(ring: &[Vec2]) -> Vec<[Vec2; 3]> {
    let n = ring.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut tris = Vec::with_capacity(n.saturating_sub(2));
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for k in 0..m {
            let (ip, ic, inx) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (p, c, nx) = (ring[ip], ring[ic], ring[inx]);
            if orient(p, c, nx) < COLLINEAR_TOL {
                continue; // reflex or collinear corner: not an ear
            }
            let blocked = idx.iter().any(|&other| {
                other != ip
                    && other != ic
                    && other != inx
                    && point_strictly_in_triangle(ring[other], p, c, nx)
            });
            if !blocked {
                tris.push([p, c, nx]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            // Degenerate leftovers (collinear chains). Fan what remains; the
            // slivers have zero area and cannot perturb area sums.
            for k in 1..idx.len() - 1 {
                tris.push([ring[idx[0]], ring[idx[k]], ring[idx[k + 1]]]);
            }
            idx.truncate(0);
        }
    }
    if idx.len() == 3 {
        tris.push([ring[idx[0]], ring[idx[1]], ring[idx[2]]]);
    }
    tris
}

fn point_strictly_in_triangle(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> bool {
    orient(a, b, p) > COLLINEAR_TOL
        && orient(b, c, p) > COLLINEAR_TOL
        && orient(c, a, p) > COLLINEAR_TOL
}

#[cfg(test)]
mod tests;
