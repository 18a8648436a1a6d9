//! Hand-authored stroke-skeleton glyphs for A–Z and 0–9 in a unit box
//! (x, y ∈ [0, 1], y pointing up). A stand-in for real font files: boxes and
//! advances are analytically known, which is exactly what the annotation
//! pipeline needs. Variety comes from scale, shear, stroke width, and
//! spacing randomization at render time, not from multiple typefaces.

use std::collections::BTreeMap;

type Stroke = Vec<[f64; 2]>;

/// Per-character stroke paths plus the shared monospace metrics.
#[derive(Debug, Clone)]
pub struct GlyphAtlas {
    strokes: BTreeMap<char, Vec<Stroke>>,
    /// Glyph box width as a fraction of its height.
    pub aspect: f64,
}

fn path(pts: &[(f64, f64)]) -> Stroke {
    pts.iter().map(|&(x, y)| [x, y]).collect()
}

impl GlyphAtlas {
    pub fn standard() -> Self {
        let mut g: BTreeMap<char, Vec<Stroke>> = BTreeMap::new();
        g.insert('A', vec![path(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]), path(&[(0.2, 0.35), (0.8, 0.35)])]);
        g.insert('B', vec![
            path(&[(0.0, 0.0), (0.0, 1.0), (0.7, 1.0), (0.9, 0.85), (0.9, 0.65), (0.7, 0.5), (0.0, 0.5)]),
            path(&[(0.7, 0.5), (0.95, 0.35), (0.95, 0.15), (0.7, 0.0), (0.0, 0.0)]),
        ]);
        g.insert('C', vec![path(&[(1.0, 0.85), (0.7, 1.0), (0.3, 1.0), (0.0, 0.72), (0.0, 0.28), (0.3, 0.0), (0.7, 0.0), (1.0, 0.15)])]);
        g.insert('D', vec![path(&[(0.0, 0.0), (0.0, 1.0), (0.6, 1.0), (1.0, 0.68), (1.0, 0.32), (0.6, 0.0), (0.0, 0.0)])]);
        g.insert('E', vec![path(&[(1.0, 1.0), (0.0, 1.0), (0.0, 0.0), (1.0, 0.0)]), path(&[(0.0, 0.5), (0.8, 0.5)])]);
        g.insert('F', vec![path(&[(1.0, 1.0), (0.0, 1.0), (0.0, 0.0)]), path(&[(0.0, 0.5), (0.75, 0.5)])]);
        g.insert('G', vec![path(&[
            (1.0, 0.85), (0.7, 1.0), (0.3, 1.0), (0.0, 0.72), (0.0, 0.28), (0.3, 0.0), (0.7, 0.0), (1.0, 0.15), (1.0, 0.45), (0.55, 0.45),
        ])]);
        g.insert('H', vec![path(&[(0.0, 0.0), (0.0, 1.0)]), path(&[(1.0, 0.0), (1.0, 1.0)]), path(&[(0.0, 0.5), (1.0, 0.5)])]);
        g.insert('I', vec![path(&[(0.5, 0.0), (0.5, 1.0)]), path(&[(0.2, 1.0), (0.8, 1.0)]), path(&[(0.2, 0.0), (0.8, 0.0)])]);
        g.insert('J', vec![path(&[(0.8, 1.0), (0.8, 0.2), (0.6, 0.0), (0.3, 0.0), (0.1, 0.2)])]);
        g.insert('K', vec![path(&[(0.0, 0.0), (0.0, 1.0)]), path(&[(1.0, 1.0), (0.0, 0.45)]), path(&[(0.35, 0.6), (1.0, 0.0)])]);
        g.insert('L', vec![path(&[(0.0, 1.0), (0.0, 0.0), (1.0, 0.0)])]);
        g.insert('M', vec![path(&[(0.0, 0.0), (0.0, 1.0), (0.5, 0.45), (1.0, 1.0), (1.0, 0.0)])]);
        g.insert('N', vec![path(&[(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)])]);
        g.insert('O', vec![path(&[
            (0.3, 0.0), (0.7, 0.0), (1.0, 0.3), (1.0, 0.7), (0.7, 1.0), (0.3, 1.0), (0.0, 0.7), (0.0, 0.3), (0.3, 0.0),
        ])]);
        g.insert('P', vec![path(&[(0.0, 0.0), (0.0, 1.0), (0.75, 1.0), (1.0, 0.82), (1.0, 0.62), (0.75, 0.45), (0.0, 0.45)])]);
        g.insert('Q', vec![
            path(&[(0.3, 0.0), (0.7, 0.0), (1.0, 0.3), (1.0, 0.7), (0.7, 1.0), (0.3, 1.0), (0.0, 0.7), (0.0, 0.3), (0.3, 0.0)]),
            path(&[(0.6, 0.35), (1.0, -0.05)]),
        ]);
        g.insert('R', vec![
            path(&[(0.0, 0.0), (0.0, 1.0), (0.75, 1.0), (1.0, 0.82), (1.0, 0.62), (0.75, 0.45), (0.0, 0.45)]),
            path(&[(0.55, 0.45), (1.0, 0.0)]),
        ]);
        g.insert('S', vec![path(&[
            (1.0, 0.85), (0.7, 1.0), (0.25, 1.0), (0.0, 0.8), (0.08, 0.6), (0.35, 0.52), (0.7, 0.48), (0.95, 0.38), (1.0, 0.18), (0.72, 0.0), (0.28, 0.0), (0.0, 0.15),
        ])]);
        g.insert('T', vec![path(&[(0.0, 1.0), (1.0, 1.0)]), path(&[(0.5, 1.0), (0.5, 0.0)])]);
        g.insert('U', vec![path(&[(0.0, 1.0), (0.0, 0.25), (0.3, 0.0), (0.7, 0.0), (1.0, 0.25), (1.0, 1.0)])]);
        g.insert('V', vec![path(&[(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)])]);
        g.insert('W', vec![path(&[(0.0, 1.0), (0.25, 0.0), (0.5, 0.55), (0.75, 0.0), (1.0, 1.0)])]);
        g.insert('X', vec![path(&[(0.0, 0.0), (1.0, 1.0)]), path(&[(0.0, 1.0), (1.0, 0.0)])]);
        g.insert('Y', vec![path(&[(0.0, 1.0), (0.5, 0.5), (1.0, 1.0)]), path(&[(0.5, 0.5), (0.5, 0.0)])]);
        g.insert('Z', vec![path(&[(0.0, 1.0), (1.0, 1.0), (0.0, 0.0), (1.0, 0.0)])]);
        g.insert('0', vec![
            path(&[(0.3, 0.0), (0.7, 0.0), (1.0, 0.3), (1.0, 0.7), (0.7, 1.0), (0.3, 1.0), (0.0, 0.7), (0.0, 0.3), (0.3, 0.0)]),
            path(&[(0.25, 0.25), (0.75, 0.75)]),
        ]);
        g.insert('1', vec![path(&[(0.25, 0.75), (0.55, 1.0), (0.55, 0.0)]), path(&[(0.25, 0.0), (0.85, 0.0)])]);
        g.insert('2', vec![path(&[(0.0, 0.8), (0.2, 1.0), (0.8, 1.0), (1.0, 0.8), (1.0, 0.6), (0.0, 0.0), (1.0, 0.0)])]);
        g.insert('3', vec![path(&[(0.0, 1.0), (0.9, 1.0), (0.45, 0.58), (0.8, 0.5), (1.0, 0.3), (0.8, 0.0), (0.2, 0.0), (0.0, 0.15)])]);
        g.insert('4', vec![path(&[(0.7, 0.0), (0.7, 1.0), (0.0, 0.3), (1.0, 0.3)])]);
        g.insert('5', vec![path(&[(1.0, 1.0), (0.1, 1.0), (0.05, 0.55), (0.65, 0.58), (1.0, 0.38), (1.0, 0.2), (0.7, 0.0), (0.2, 0.0), (0.0, 0.12)])]);
        g.insert('6', vec![path(&[(0.85, 1.0), (0.35, 1.0), (0.05, 0.6), (0.0, 0.25), (0.3, 0.0), (0.7, 0.0), (1.0, 0.22), (0.95, 0.45), (0.6, 0.55), (0.1, 0.45)])]);
        g.insert('7', vec![path(&[(0.0, 1.0), (1.0, 1.0), (0.4, 0.0)])]);
        g.insert('8', vec![path(&[
            (0.5, 0.52), (0.15, 0.72), (0.2, 0.95), (0.5, 1.0), (0.8, 0.95), (0.85, 0.72), (0.5, 0.52), (0.1, 0.3), (0.18, 0.03), (0.5, 0.0), (0.82, 0.03), (0.9, 0.3), (0.5, 0.52),
        ])]);
        g.insert('9', vec![path(&[(0.15, 0.0), (0.65, 0.0), (0.95, 0.4), (1.0, 0.75), (0.7, 1.0), (0.3, 1.0), (0.0, 0.78), (0.05, 0.55), (0.4, 0.45), (0.9, 0.55)])]);
        Self { strokes: g, aspect: 0.62 }
    }

    pub fn has(&self, c: char) -> bool {
        self.strokes.contains_key(&c.to_ascii_uppercase())
    }

    /// Stroke paths in the unit glyph box; `None` for unknown characters.
    pub fn strokes(&self, c: char) -> Option<&[Stroke]> {
        self.strokes.get(&c.to_ascii_uppercase()).map(|v| v.as_slice())
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.strokes.keys().copied()
    }
}
