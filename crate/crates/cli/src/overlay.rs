//! Detection overlays: predicted boundary polygons, character centers, and
//! (optionally) the final layer's deformable sampling base points drawn onto
//! a copy of the input raster.

use hlspot_core::geometry::vec2::Vec2;
use hlspot_core::model::Detection;
use hlspot_core::synthmap::{Color, Raster};

pub const POLYGON_COLOR: Color = [0, 180, 60];
pub const CENTER_COLOR: Color = [220, 40, 40];
pub const SAMPLING_COLOR: Color = [50, 90, 255];

fn draw_segment(img: &mut Raster, a: Vec2, b: Vec2, color: Color) {
    let steps = ((b[0] - a[0]).hypot(b[1] - a[1]).ceil() as usize).max(1) * 2;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a[0] + t * (b[0] - a[0]);
        let y = a[1] + t * (b[1] - a[1]);
        img.put(x.round() as i64, y.round() as i64, color);
    }
}

fn draw_ring(img: &mut Raster, ring: &[Vec2], color: Color) {
    for i in 0..ring.len() {
        draw_segment(img, ring[i], ring[(i + 1) % ring.len()], color);
    }
}

fn draw_dot(img: &mut Raster, p: Vec2, color: Color) {
    let (x, y) = (p[0].round() as i64, p[1].round() as i64);
    for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
        img.put(x + dx, y + dy, color);
    }
}

/// Paint detections over the input: the boundary polygon and the predicted
/// character centers per detection, plus, when given, the character-branch
/// sampling base points (pixel space).
pub fn render(
    image: &Raster,
    detections: &[(Detection, Vec<Vec2>)],
    sampling_bases: Option<&[Vec2]>,
) -> Raster {
    let mut out = image.clone();
    for (det, centers) in detections {
        draw_ring(&mut out, &det.polygon, POLYGON_COLOR);
        for &c in centers {
            draw_dot(&mut out, c, CENTER_COLOR);
        }
    }
    if let Some(bases) = sampling_bases {
        for &b in bases {
            draw_dot(&mut out, b, SAMPLING_COLOR);
        }
    }
    out
}
