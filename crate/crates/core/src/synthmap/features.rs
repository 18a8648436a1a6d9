//! Geographic feature inputs: the validated `GeoFeature` type, a procedural
//! generator that fabricates plausible desk-scale features, and a loader for
//! a GeoJSON subset (LineString/Polygon with `name`/`class` properties).

use crate::error::{Error, Result};
use crate::geometry::{ring_is_simple, vec2::Vec2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Line,
    Polygon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureClass {
    Road,
    River,
    Railway,
    Lake,
    Area,
    Other,
}

impl FeatureClass {
    pub fn from_name(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "road" | "highway" | "street" => Self::Road,
            "river" | "stream" | "waterway" | "canal" => Self::River,
            "railway" | "rail" => Self::Railway,
            "lake" | "pond" | "reservoir" | "water" => Self::Lake,
            "area" | "park" | "industrial" | "residential" | "landuse" => Self::Area,
            _ => Self::Other,
        }
    }
}

/// A named line or polygon feature in scene (pixel) coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoFeature {
    pub kind: FeatureKind,
    pub vertices: Vec<Vec2>,
    pub class: FeatureClass,
    pub name: String,
}

impl GeoFeature {
    pub fn new(
        kind: FeatureKind,
        vertices: Vec<Vec2>,
        class: FeatureClass,
        name: String,
    ) -> Result<Self> {
        match kind {
            FeatureKind::Line if vertices.len() < 2 => {
                return Err(Error::data("line feature needs ≥ 2 vertices"));
            }
            FeatureKind::Polygon => {
                if vertices.len() < 3 {
                    return Err(Error::data("polygon feature needs ≥ 3 vertices"));
                }
                if !ring_is_simple(&vertices) {
                    return Err(Error::data(format!(
                        "polygon feature {name:?} is self-intersecting"
                    )));
                }
            }
            _ => {}
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite feature vertex"));
        }
        Ok(Self { kind, vertices, class, name })
    }
}

/// Place-name fragments for procedural labels, all uppercase A–Z.
const NAME_PARTS: &[&str] = &[
    "ASH", "BAY", "BELL", "BEN", "CREEK", "CREST", "CROSS", "DALE", "ELM", "FALLS", "FORD",
    "FORT", "GLEN", "GROVE", "HAM", "HILL", "KING", "LAKE", "MILL", "MOOR", "NESS", "NEW",
    "NORTH", "OAK", "OLD", "POND", "PORT", "RIVER", "SOUTH", "SPRING", "STONE", "TOR", "VALE",
    "WELLS", "WEST", "WICK",
];

/// Random place name of at most `max_chars` characters: one part, a fused
/// pair ("OAKFORD"), or a spaced pair ("NORTH VALE").
pub fn random_name(rng: &mut ChaCha8Rng, max_chars: usize) -> String {
    for _ in 0..32 {
        let a = NAME_PARTS[rng.random_range(0..NAME_PARTS.len())];
        let candidate = match rng.random_range(0..3) {
            0 => a.to_string(),
            1 => {
                let b = NAME_PARTS[rng.random_range(0..NAME_PARTS.len())];
                format!("{a}{b}")
            }
            _ => {
                let b = NAME_PARTS[rng.random_range(0..NAME_PARTS.len())];
                format!("{a} {b}")
            }
        };
        if candidate.chars().count() <= max_chars {
            return candidate;
        }
    }
    // Every single part of length ≤ 3 exists, so this only triggers for
    // absurdly small caps.
    NAME_PARTS[0].chars().take(max_chars.max(1)).collect()
}

/// Jittered polyline from one canvas edge to the opposite one.
fn cross_canvas_line(rng: &mut ChaCha8Rng, w: f64, h: f64, waviness: f64) -> Vec<Vec2> {
    let horizontal = rng.random_range(0..2) == 0;
    let segments = 5;
    let mut pts = Vec::with_capacity(segments + 1);
    let lane = rng.random_range(0.2..0.8);
    let drift = rng.random_range(-0.25..0.25);
    for i in 0..=segments {
        let t = i as f64 / segments as f64;
        let along = t;
        let across = lane + drift * t + rng.random_range(-waviness..waviness).min(0.5);
        if horizontal {
            pts.push([along * w, (across * h).clamp(4.0, h - 4.0)]);
        } else {
            pts.push([(across * w).clamp(4.0, w - 4.0), along * h]);
        }
    }
    pts
}

/// Star-shaped blob polygon around a center: always simple.
fn blob_polygon(rng: &mut ChaCha8Rng, cx: f64, cy: f64, radius: f64, sides: usize) -> Vec<Vec2> {
    (0..sides)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / sides as f64;
            let r = radius * rng.random_range(0.75..1.25);
            [cx + r * theta.cos(), cy + r * theta.sin()]
        })
        .collect()
}

/// Fabricate `count` named features on a w×h canvas. Polygons come first so
/// the renderer fills them beneath the line work.
pub fn procedural_features(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    count: usize,
    max_name_chars: usize,
) -> Vec<GeoFeature> {
    let (w, h) = (width as f64, height as f64);
    let mut polygons = Vec::new();
    let mut lines = Vec::new();
    for i in 0..count {
        let name = random_name(rng, max_name_chars);
        match i % 5 {
            0 | 3 => {
                let class = if i % 5 == 0 { FeatureClass::Road } else { FeatureClass::Railway };
                let pts = cross_canvas_line(rng, w, h, 0.03);
                lines.push(GeoFeature::new(FeatureKind::Line, pts, class, name).unwrap());
            }
            1 => {
                let pts = cross_canvas_line(rng, w, h, 0.08);
                lines.push(
                    GeoFeature::new(FeatureKind::Line, pts, FeatureClass::River, name).unwrap(),
                );
            }
            2 => {
                let r = rng.random_range(0.12..0.22) * w.min(h);
                let cx = rng.random_range(r + 4.0..w - r - 4.0);
                let cy = rng.random_range(r + 4.0..h - r - 4.0);
                let pts = blob_polygon(rng, cx, cy, r, 10);
                polygons.push(
                    GeoFeature::new(FeatureKind::Polygon, pts, FeatureClass::Lake, name).unwrap(),
                );
            }
            _ => {
                let r = rng.random_range(0.14..0.24) * w.min(h);
                let cx = rng.random_range(r + 4.0..w - r - 4.0);
                let cy = rng.random_range(r + 4.0..h - r - 4.0);
                let pts = blob_polygon(rng, cx, cy, r, 7);
                polygons.push(
                    GeoFeature::new(FeatureKind::Polygon, pts, FeatureClass::Area, name).unwrap(),
                );
            }
        }
    }
    polygons.extend(lines);
    polygons
}

// ---- GeoJSON subset loader -----------------------------------------------------

#[derive(Deserialize)]
struct GjCollection {
    features: Vec<GjFeature>,
}

#[derive(Deserialize)]
struct GjFeature {
    geometry: GjGeometry,
    #[serde(default)]
    properties: GjProperties,
}

#[derive(Deserialize)]
#[serde(tag = "type")]
enum GjGeometry {
    LineString { coordinates: Vec<[f64; 2]> },
    Polygon { coordinates: Vec<Vec<[f64; 2]>> },
}

#[derive(Deserialize, Default)]
struct GjProperties {
    #[serde(default)]
    name: String,
    #[serde(default)]
    class: String,
}

/// Load features from a GeoJSON-subset file: a FeatureCollection of
/// LineString/Polygon geometries with `name` and `class` properties.
/// Coordinates are taken as scene pixels verbatim.
pub fn load_geojson(path: &Path) -> Result<Vec<GeoFeature>> {
    let text = std::fs::read_to_string(path)?;
    let parsed: GjCollection = serde_json::from_str(&text)?;
    let mut out = Vec::with_capacity(parsed.features.len());
    for f in parsed.features {
        let class = FeatureClass::from_name(&f.properties.class);
        let name = f.properties.name.trim().to_uppercase();
        match f.geometry {
            GjGeometry::LineString { coordinates } => {
                out.push(GeoFeature::new(FeatureKind::Line, coordinates, class, name)?);
            }
            GjGeometry::Polygon { coordinates } => {
                let mut ring = coordinates
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::data("polygon feature with no rings"))?;
                // GeoJSON rings repeat the first vertex at the end.
                if ring.len() >= 2 && ring.first() == ring.last() {
                    ring.pop();
                }
                out.push(GeoFeature::new(FeatureKind::Polygon, ring, class, name)?);
            }
        }
    }
    Ok(out)
}
