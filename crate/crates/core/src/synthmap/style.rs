//! Background-render half of the generator: harvest 8×8 texture cells from
//! around text regions of sample maps, split ink from paper with one k-means
//! pass, then cluster the paper cells into reusable style profiles.

use super::raster::Raster;
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Texture cell edge length in pixels.
pub const CELL: usize = 8;

/// One 8×8 RGB tile, row-major, `CELL*CELL*3` bytes.
pub type Cell = Vec<u8>;

pub fn cell_mean_color(cell: &Cell) -> [f64; 3] {
    debug_assert_eq!(cell.len(), CELL * CELL * 3);
    let mut mean = [0.0; 3];
    for px in cell.chunks_exact(3) {
        for ch in 0..3 {
            mean[ch] += px[ch] as f64;
        }
    }
    let n = (CELL * CELL) as f64;
    mean.map(|v| v / n)
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// A cluster of background cells usable as a map background, with its
/// palette statistics (mean and covariance of the cells' mean colors).
#[derive(Debug, Clone)]
pub struct StyleProfile {
    pub id: usize,
    pub cells: Vec<Cell>,
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
}

impl StyleProfile {
    pub fn from_cells(id: usize, cells: Vec<Cell>) -> Self {
        let colors: Vec<[f64; 3]> = cells.iter().map(cell_mean_color).collect();
        let n = colors.len().max(1) as f64;
        let mut mean = [0.0; 3];
        for c in &colors {
            for ch in 0..3 {
                mean[ch] += c[ch] / n;
            }
        }
        let mut covariance = [[0.0; 3]; 3];
        for c in &colors {
            for i in 0..3 {
                for j in 0..3 {
                    covariance[i][j] += (c[i] - mean[i]) * (c[j] - mean[j]) / n;
                }
            }
        }
        Self { id, cells, mean, covariance }
    }

    /// Flat fallback color when a profile has no cells to tile with.
    pub fn paper_color(&self) -> [u8; 3] {
        self.mean.map(|v| v.round().clamp(0.0, 255.0) as u8)
    }
}

/// All 8×8 grid cells of `img` (cropped to multiples of 8) that overlap any
/// text rectangle expanded by an 8-px buffer. Overlap is strict, with cells
/// treated as half-open boxes.
pub fn extract_background_cells(img: &Raster, text_regions: &[Aabb]) -> Vec<Cell> {
    let cols = img.width() / CELL;
    let rows = img.height() / CELL;
    let buffered: Vec<Aabb> = text_regions
        .iter()
        .map(|r| Aabb {
            min: [r.min[0] - CELL as f64, r.min[1] - CELL as f64],
            max: [r.max[0] + CELL as f64, r.max[1] + CELL as f64],
        })
        .collect();
    let mut cells = Vec::new();
    for cy in 0..rows {
        for cx in 0..cols {
            let x0 = (cx * CELL) as f64;
            let y0 = (cy * CELL) as f64;
            let hit = buffered.iter().any(|b| {
                b.min[0] < x0 + CELL as f64
                    && b.max[0] > x0
                    && b.min[1] < y0 + CELL as f64
                    && b.max[1] > y0
            });
            if hit {
                let mut cell = Vec::with_capacity(CELL * CELL * 3);
                for y in 0..CELL {
                    for x in 0..CELL {
                        cell.extend_from_slice(&img.get(cx * CELL + x, cy * CELL + y));
                    }
                }
                cells.push(cell);
            }
        }
    }
    cells
}

/// Lloyd's k-means with k-means++ seeding. Assignment ties go to the lowest
/// cluster index; an emptied cluster is reseeded to the point farthest from
/// its centroid; stops when assignments are stable or after 100 iterations.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    kmeans_trace(points, k, seed).map(|(a, c, _)| (a, c))
}

/// `kmeans` plus the SSE recorded at the end of every Lloyd iteration
/// (non-increasing by construction; the tests assert it).
pub fn kmeans_trace(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>, Vec<f64>)> {
    if points.len() < k || k == 0 {
        return Err(Error::contract(format!(
            "kmeans: {} points cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    while centroids.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| d2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with existing centroids; any choice works.
            rng.random_range(0..points.len())
        } else {
            let mut r = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        };
        centroids.push(points[next].clone());
    }

    let mut assignments = vec![0usize; points.len()];
    let mut sse_trace = Vec::new();
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = d2(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        // Recompute centroids; reseed empties to the farthest point.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, v) in sums[assignments[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = d2(&points[a], &centroids[assignments[a]]);
                        let db = d2(&points[b], &centroids[assignments[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
                assignments[far] = c;
                changed = true;
            } else {
                for (ch, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *ch = s / counts[c] as f64;
                }
            }
        }
        sse_trace.push(kmeans_sse(points, &assignments, &centroids));
        if !changed {
            break;
        }
    }
    Ok((assignments, centroids, sse_trace))
}

/// Within-cluster sum of squared distances for a given clustering.
pub fn kmeans_sse(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| p.iter().zip(&centroids[a]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum()
}

/// Two-stage profile construction: k=2 k-means on cell mean colors separates
/// ink from paper (the lighter centroid is paper), then a second k-means
/// groups the paper cells into `k_styles` profiles.
pub fn build_style_profiles(
    samples: &[(Raster, Vec<Aabb>)],
    k_styles: usize,
    seed: u64,
) -> Result<Vec<StyleProfile>> {
    if samples.is_empty() {
        return Err(Error::contract("build_style_profiles: no sample images"));
    }
    let mut cells: Vec<Cell> = Vec::new();
    for (img, regions) in samples {
        cells.extend(extract_background_cells(img, regions));
    }
    let colors: Vec<Vec<f64>> = cells.iter().map(|c| cell_mean_color(c).to_vec()).collect();
    let (fg_bg, centroids) = kmeans(&colors, 2, seed)?;
    let bg_cluster = if luminance([centroids[0][0], centroids[0][1], centroids[0][2]])
        >= luminance([centroids[1][0], centroids[1][1], centroids[1][2]])
    {
        0
    } else {
        1
    };
    let bg_cells: Vec<Cell> = cells
        .iter()
        .zip(&fg_bg)
        .filter(|(_, &a)| a == bg_cluster)
        .map(|(c, _)| c.clone())
        .collect();
    let bg_colors: Vec<Vec<f64>> =
        bg_cells.iter().map(|c| cell_mean_color(c).to_vec()).collect();
    let (groups, _) = kmeans(&bg_colors, k_styles, seed.wrapping_add(1))?;
    let mut profiles = Vec::with_capacity(k_styles);
    for style in 0..k_styles {
        let members: Vec<Cell> = bg_cells
            .iter()
            .zip(&groups)
            .filter(|(_, &g)| g == style)
            .map(|(c, _)| c.clone())
            .collect();
        profiles.push(StyleProfile::from_cells(style, members));
    }
    Ok(profiles)
}

/// Procedural aged-paper texture: a tinted base modulated by two octaves of
/// value noise plus sparse dark speckles. Deterministic per seed.
pub fn paper_texture(seed: u64, width: usize, height: usize) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A few plausible paper tints; the seed picks one.
    let tints: [[f64; 3]; 4] = [
        [233.0, 224.0, 203.0], // cream
        [226.0, 214.0, 185.0], // buff
        [218.0, 210.0, 196.0], // gray stock
        [236.0, 219.0, 188.0], // sepia
    ];
    let tint = tints[rng.random_range(0..tints.len())];
    let coarse = noise_grid(&mut rng, width / 16 + 2, height / 16 + 2);
    let fine = noise_grid(&mut rng, width / 4 + 2, height / 4 + 2);
    let mut img = Raster::new(width, height, [0, 0, 0]);
    for y in 0..height {
        for x in 0..width {
            let n = 0.7 * sample_noise(&coarse, x as f64 / 16.0, y as f64 / 16.0)
                + 0.3 * sample_noise(&fine, x as f64 / 4.0, y as f64 / 4.0);
            let shade = 0.9 + 0.2 * n; // ±10% brightness mottling
            let c = tint.map(|v| (v * shade).round().clamp(0.0, 255.0) as u8);
            img.put(x as i64, y as i64, c);
        }
    }
    // Speckles: scattered fiber flecks.
    let count = width * height / 400;
    for _ in 0..count {
        let x = rng.random_range(0..width) as i64;
        let y = rng.random_range(0..height) as i64;
        let dark = rng.random_range(0.55..0.85);
        let base = img.get(x as usize, y as usize);
        img.put(x, y, base.map(|v| (v as f64 * dark) as u8));
    }
    img
}

/// Default profile source when no real map samples are supplied: a few
/// procedural paper sheets with synthetic "text regions" marking where cells
/// get harvested, pushed through the same two-stage pipeline.
pub fn default_style_profiles(k_styles: usize, seed: u64) -> Result<Vec<StyleProfile>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for i in 0..3u64 {
        let mut img = paper_texture(seed.wrapping_add(i), 128, 128);
        // Stamp some dark marks so stage 1 has real foreground to reject.
        let mut regions = Vec::new();
        for _ in 0..4 {
            let x = rng.random_range(8.0..96.0);
            let y = rng.random_range(8.0..96.0);
            let w = rng.random_range(16.0..28.0);
            img.stroke_segment([x, y], [x + w, y + rng.random_range(-4.0..4.0)], 3.0, [54, 42, 38]);
            regions.push(Aabb { min: [x - 4.0, y - 8.0], max: [x + w + 4.0, y + 8.0] });
        }
        samples.push((img, regions));
    }
    build_style_profiles(&samples, k_styles, seed)
}

fn noise_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (usize, usize, Vec<f64>) {
    let vals = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    (w, h, vals)
}

/// Bilinear lookup into a random-value grid → smooth noise in [−1, 1].
fn sample_noise(grid: &(usize, usize, Vec<f64>), x: f64, y: f64) -> f64 {
    let (w, h, vals) = grid;
    let xi = (x.floor() as usize).min(w - 2);
    let yi = (y.floor() as usize).min(h - 2);
    let fx = (x - xi as f64).clamp(0.0, 1.0);
    let fy = (y - yi as f64).clamp(0.0, 1.0);
    let at = |ix: usize, iy: usize| vals[iy * w + ix];
    let top = at(xi, yi) * (1.0 - fx) + at(xi + 1, yi) * fx;
    let bot = at(xi, yi + 1) * (1.0 - fx) + at(xi + 1, yi + 1) * fx;
    top * (1.0 - fy) + bot * fy
}
