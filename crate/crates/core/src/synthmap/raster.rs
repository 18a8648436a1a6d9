//! Minimal 8-bit RGB canvas with the handful of drawing primitives the map
//! renderer needs: thick anti-aliased strokes and even-odd polygon fills.

use crate::error::Result;
use crate::geometry::{dist_point_to_segment, vec2::Vec2};
use std::path::Path;

pub type Color = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<Color>,
}

impl Raster {
    pub fn new(width: usize, height: usize, fill: Color) -> Self {
        Self { width, height, pixels: vec![fill; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Color {
        self.pixels[y * self.width + x]
    }

    /// Write one pixel; coordinates outside the canvas are ignored.
    pub fn put(&mut self, x: i64, y: i64, c: Color) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    /// Alpha-blend `c` over the existing pixel (`cov` in [0,1]).
    pub fn blend(&mut self, x: i64, y: i64, c: Color, cov: f64) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let cov = cov.clamp(0.0, 1.0);
        let px = &mut self.pixels[y as usize * self.width + x as usize];
        for ch in 0..3 {
            let mixed = px[ch] as f64 * (1.0 - cov) + c[ch] as f64 * cov;
            px[ch] = mixed.round().clamp(0.0, 255.0) as u8;
        }
    }

    /// Stroke the capsule of radius `width/2` around segment a–b with a
    /// half-pixel anti-aliased rim.
    pub fn stroke_segment(&mut self, a: Vec2, b: Vec2, width: f64, color: Color) {
        let r = width.max(0.1) * 0.5;
        let x0 = (a[0].min(b[0]) - r - 1.0).floor() as i64;
        let x1 = (a[0].max(b[0]) + r + 1.0).ceil() as i64;
        let y0 = (a[1].min(b[1]) - r - 1.0).floor() as i64;
        let y1 = (a[1].max(b[1]) + r + 1.0).ceil() as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let d = dist_point_to_segment(p, a, b);
                let cov = r + 0.5 - d;
                if cov > 0.0 {
                    self.blend(x, y, color, cov);
                }
            }
        }
    }

    pub fn stroke_polyline(&mut self, pts: &[Vec2], width: f64, color: Color) {
        for w in pts.windows(2) {
            self.stroke_segment(w[0], w[1], width, color);
        }
    }

    /// Even-odd scanline fill of a closed ring (last vertex implicitly joins
    /// the first).
    pub fn fill_polygon(&mut self, ring: &[Vec2], color: Color) {
        if ring.len() < 3 {
            return;
        }
        let y_min = ring.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let y_max = ring.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let row0 = (y_min.floor().max(0.0)) as usize;
        let row1 = (y_max.ceil().min(self.height as f64)) as usize;
        for row in row0..row1 {
            let yc = row as f64 + 0.5;
            let mut xs: Vec<f64> = Vec::new();
            for i in 0..ring.len() {
                let p = ring[i];
                let q = ring[(i + 1) % ring.len()];
                let (lo, hi) = if p[1] <= q[1] { (p, q) } else { (q, p) };
                if lo[1] <= yc && yc < hi[1] {
                    let t = (yc - lo[1]) / (hi[1] - lo[1]);
                    xs.push(lo[0] + t * (hi[0] - lo[0]));
                }
            }
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for pair in xs.chunks_exact(2) {
                let start = pair[0].max(0.0);
                let end = pair[1].min(self.width as f64);
                let mut x = start.floor() as i64;
                while (x as f64 + 0.5) < end {
                    if x as f64 + 0.5 >= start {
                        self.put(x, row as i64, color);
                    }
                    x += 1;
                }
            }
        }
    }

    pub fn to_image(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                img.put_pixel(x as u32, y as u32, image::Rgb(self.get(x, y)));
            }
        }
        img
    }

    pub fn from_image(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut r = Raster::new(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                r.put(x as i64, y as i64, img.get_pixel(x as u32, y as u32).0);
            }
        }
        r
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Raster> {
        let img = image::open(path)?.to_rgb8();
        Ok(Raster::from_image(&img))
    }

    /// Grayscale copy as f64 in [0,1] (luma), the model's input plane.
    pub fn to_luma(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|c| (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64) / 255.0)
            .collect()
    }
}
