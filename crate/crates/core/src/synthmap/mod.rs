//! Synthetic historical-map generator: a text render that marches glyph
//! boxes along feature geometry and a background render that tiles harvested
//! 8×8 texture cells, merged into annotated scenes.
//!
//! Everything is deterministic per seed, and every emitted annotation has
//! passed the full invariant gate (simple polygon, in-bounds, centers inside
//! the polygon, glyph/transcription agreement) — labels that fail any check
//! are dropped rather than patched.

pub mod features;
pub mod glyphs;
pub mod place;
pub mod raster;
pub mod style;

pub use features::{load_geojson, procedural_features, FeatureClass, FeatureKind, GeoFeature};
pub use glyphs::GlyphAtlas;
pub use place::{place_label_on_line, place_label_on_polygon, LabelStyle, PlacedLabel};
pub use raster::{Color, Raster};
pub use style::{
    build_style_profiles, default_style_profiles, extract_background_cells, kmeans, kmeans_sse,
    kmeans_trace, paper_texture, StyleProfile, CELL,
};

use crate::error::{Error, Result};
use crate::geometry::{char_center_targets, polygon_iou, validate_instance, TextInstance};
use crate::vocab;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-class cartographic rendering rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassStyle {
    pub stroke: Color,
    pub stroke_width: f64,
    pub fill: Option<Color>,
    /// Label ink color for this class.
    pub ink: Color,
}

/// The fixed class → style table ("predefined cartographic rules"). Values
/// are invented; override via config if desired.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartoRules {
    pub road: ClassStyle,
    pub river: ClassStyle,
    pub railway: ClassStyle,
    pub lake: ClassStyle,
    pub area: ClassStyle,
    pub other: ClassStyle,
}

impl Default for CartoRules {
    fn default() -> Self {
        Self {
            road: ClassStyle {
                stroke: [141, 94, 60],
                stroke_width: 2.6,
                fill: None,
                ink: [52, 38, 30],
            },
            river: ClassStyle {
                stroke: [96, 125, 155],
                stroke_width: 3.2,
                fill: None,
                ink: [42, 60, 92],
            },
            railway: ClassStyle {
                stroke: [72, 66, 62],
                stroke_width: 1.6,
                fill: None,
                ink: [40, 36, 34],
            },
            lake: ClassStyle {
                stroke: [96, 125, 155],
                stroke_width: 1.4,
                fill: Some([182, 199, 212]),
                ink: [42, 60, 92],
            },
            area: ClassStyle {
                stroke: [150, 134, 108],
                stroke_width: 1.2,
                fill: Some([214, 202, 176]),
                ink: [66, 52, 40],
            },
            other: ClassStyle {
                stroke: [110, 102, 94],
                stroke_width: 1.5,
                fill: None,
                ink: [50, 44, 40],
            },
        }
    }
}

impl CartoRules {
    pub fn for_class(&self, class: FeatureClass) -> &ClassStyle {
        match class {
            FeatureClass::Road => &self.road,
            FeatureClass::River => &self.river,
            FeatureClass::Railway => &self.railway,
            FeatureClass::Lake => &self.lake,
            FeatureClass::Area => &self.area,
            FeatureClass::Other => &self.other,
        }
    }
}

/// Scene-generation knobs. `n_points` and `max_chars` are the dataset
/// contract (N boundary points, M character slots) shared with the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// Boundary polygon vertex count N (even, ≥ 4).
    pub n_points: usize,
    /// Character slot count M; transcriptions longer than this are skipped.
    pub max_chars: usize,
    pub min_features: usize,
    pub max_features: usize,
    /// Cap on generated label length (≤ max_chars).
    pub max_label_chars: usize,
    pub font_min: f64,
    pub font_max: f64,
    /// Labels whose polygon overlaps an accepted one above this IoU drop.
    pub collision_iou: f64,
    pub carto: CartoRules,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            n_points: 8,
            max_chars: 12,
            min_features: 3,
            max_features: 7,
            max_label_chars: 12,
            font_min: 11.0,
            font_max: 20.0,
            collision_iou: 0.1,
            carto: CartoRules::default(),
        }
    }
}

impl SceneParams {
    /// Tiny overfit-scale scenes: 128×128, at most 3 short words.
    pub fn micro() -> Self {
        Self {
            width: 128,
            height: 128,
            min_features: 2,
            max_features: 3,
            max_label_chars: 6,
            font_min: 13.0,
            font_max: 17.0,
            ..Self::default()
        }
    }
}

/// One generated map: raster plus pixel-space annotations.
#[derive(Debug, Clone)]
pub struct MapScene {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub style_id: usize,
    pub features: Vec<GeoFeature>,
    pub raster: Raster,
    pub annotations: Vec<TextInstance>,
}

fn jitter_color(rng: &mut ChaCha8Rng, base: Color, amount: i32) -> Color {
    base.map(|ch| {
        let v = ch as i32 + rng.random_range(-amount..=amount);
        v.clamp(0, 255) as u8
    })
}

/// Render `features` over a background tiled from `style`, placing one label
/// per named feature. Deterministic for a fixed (features, style, seed,
/// params) tuple.
pub fn compose_scene(
    features: &[GeoFeature],
    style: &StyleProfile,
    seed: u64,
    params: &SceneParams,
) -> MapScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width, params.height);
    let atlas = GlyphAtlas::standard();

    // ---- background: tile 8×8 cells sampled with replacement ------------
    let mut img = Raster::new(w, h, style.paper_color());
    if !style.cells.is_empty() {
        for ty in 0..h.div_ceil(CELL) {
            for tx in 0..w.div_ceil(CELL) {
                let cell = &style.cells[rng.random_range(0..style.cells.len())];
                for y in 0..CELL {
                    for x in 0..CELL {
                        let px = [
                            cell[(y * CELL + x) * 3],
                            cell[(y * CELL + x) * 3 + 1],
                            cell[(y * CELL + x) * 3 + 2],
                        ];
                        img.put((tx * CELL + x) as i64, (ty * CELL + y) as i64, px);
                    }
                }
            }
        }
    }

    // ---- feature geometry ------------------------------------------------
    for f in features {
        let rule = params.carto.for_class(f.class);
        match f.kind {
            FeatureKind::Polygon => {
                if let Some(fill) = rule.fill {
                    img.fill_polygon(&f.vertices, fill);
                }
                let mut closed = f.vertices.clone();
                closed.push(f.vertices[0]);
                img.stroke_polyline(&closed, rule.stroke_width, rule.stroke);
            }
            FeatureKind::Line => {
                img.stroke_polyline(&f.vertices, rule.stroke_width, rule.stroke);
                if f.class == FeatureClass::Railway {
                    draw_railway_ties(&mut img, &f.vertices, rule);
                }
            }
        }
    }

    // ---- labels ------------------------------------------------------------
    let mut annotations: Vec<TextInstance> = Vec::new();
    for f in features {
        let text = f.name.trim().to_uppercase();
        if text.is_empty() || text.chars().count() > params.max_label_chars.min(params.max_chars) {
            continue;
        }
        let rule = params.carto.for_class(f.class);
        let font = rng.random_range(params.font_min..=params.font_max);
        let label_style = LabelStyle {
            font_size: font,
            letter_spacing: font * rng.random_range(0.08..0.22),
            word_spacing: font * rng.random_range(0.35..0.6),
            slant: rng.random_range(-0.18..0.18),
            stroke_width: (font * rng.random_range(0.07..0.12)).max(1.0),
            color: jitter_color(&mut rng, rule.ink, 12),
            n_points: params.n_points,
        };
        let placed = match f.kind {
            FeatureKind::Line => place_label_on_line(&f.vertices, &text, &label_style, &atlas),
            FeatureKind::Polygon => {
                place_label_on_polygon(&f.vertices, &text, &label_style, &atlas)
            }
        };
        let Some(label) = placed else { continue };
        if let Some(inst) = admit_label(&label, &annotations, params) {
            place::render_label(&mut img, &label, &label_style, &atlas);
            annotations.push(inst);
        }
    }

    MapScene {
        width: w,
        height: h,
        seed,
        style_id: style.id,
        features: features.to_vec(),
        raster: img,
        annotations,
    }
}

/// Full invariant gate for one placed label: in-bounds, collision-free,
/// glyph count equals transcription length, and the M-padded instance passes
/// `validate_instance` with every center inside the polygon. Returns the
/// admitted instance or `None` to drop the label.
fn admit_label(
    label: &PlacedLabel,
    accepted: &[TextInstance],
    params: &SceneParams,
) -> Option<TextInstance> {
    let (w, h) = (params.width as f64, params.height as f64);
    let in_bounds = label
        .polygon
        .ring()
        .iter()
        .all(|p| p[0] >= 0.0 && p[0] <= w && p[1] >= 0.0 && p[1] <= h);
    if !in_bounds {
        return None;
    }
    if accepted.iter().any(|a| polygon_iou(&label.polygon, &a.polygon) > params.collision_iou) {
        return None;
    }
    if label.boxes.len() != label.text.chars().count() {
        return None;
    }
    let mut inst = TextInstance {
        polygon: label.polygon.clone(),
        transcription: label.text.clone(),
        char_centers: label.centers.clone(),
        centers_available: true,
        dont_care: !vocab::encodable(&label.text),
    };
    // Pad the real per-glyph centers to the M-slot dataset contract.
    inst.char_centers = char_center_targets(&inst, params.max_chars).ok()?;
    validate_instance(&inst, params.max_chars).ok()?;
    if !inst.char_centers.iter().all(|&c| inst.polygon.contains_with_tol(c, 1e-6)) {
        return None;
    }
    Some(inst)
}

fn draw_railway_ties(img: &mut Raster, pts: &[crate::geometry::vec2::Vec2], rule: &ClassStyle) {
    use crate::geometry::vec2;
    let total = crate::geometry::polyline_length(pts);
    let mut s = 4.0;
    while s < total {
        let p = crate::geometry::polyline_point_at(pts, s);
        let t = crate::geometry::polyline_tangent_at(pts, s);
        let n = [-t[1], t[0]];
        img.stroke_segment(
            vec2::add(p, vec2::scale(n, 2.2)),
            vec2::sub(p, vec2::scale(n, 2.2)),
            1.0,
            rule.stroke,
        );
        s += 8.0;
    }
}

/// End-to-end per-seed generation: procedural features, a style profile
/// picked from `profiles`, and a composed scene.
pub fn generate_scene(seed: u64, profiles: &[StyleProfile], params: &SceneParams) -> MapScene {
    assert!(!profiles.is_empty(), "need at least one style profile");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(params.min_features..=params.max_features);
    let features = procedural_features(
        &mut rng,
        params.width,
        params.height,
        count,
        params.max_label_chars.min(params.max_chars),
    );
    let style = &profiles[rng.random_range(0..profiles.len())];
    compose_scene(&features, style, seed ^ 0xC2B2_AE3D_27D4_EB4F, params)
}

/// Re-check every scene invariant on a finished scene; the acceptance suite
/// runs this over 1,000 generated scenes. (Glyph-count/transcription
/// equality is enforced structurally at placement time by `admit_label`.)
pub fn validate_scene(scene: &MapScene, max_chars: usize) -> Result<()> {
    if scene.raster.width() != scene.width || scene.raster.height() != scene.height {
        return Err(Error::data("raster dimensions disagree with scene header"));
    }
    let (w, h) = (scene.width as f64, scene.height as f64);
    for (i, inst) in scene.annotations.iter().enumerate() {
        validate_instance(inst, max_chars)
            .map_err(|e| Error::data(format!("scene {} instance {i}: {e}", scene.seed)))?;
        if inst.transcription.is_empty() {
            return Err(Error::data(format!("instance {i}: empty transcription")));
        }
        for p in inst.polygon.ring() {
            if p[0] < 0.0 || p[0] > w || p[1] < 0.0 || p[1] > h {
                return Err(Error::data(format!(
                    "instance {i}: polygon point {p:?} outside {w}×{h} canvas"
                )));
            }
        }
        for (k, c) in inst.char_centers.iter().enumerate() {
            if !inst.polygon.contains_with_tol(*c, 1e-6) {
                return Err(Error::data(format!(
                    "instance {i}: center {k} at {c:?} outside its polygon"
                )));
            }
        }
    }
    Ok(())
}

// ---- dataset IO -------------------------------------------------------------------

/// One annotation line in the `scene_{id}.json` JSONL contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub polygon: Vec<[f64; 2]>,
    pub text: String,
    pub char_centers: Vec<[f64; 2]>,
    pub dont_care: bool,
}

impl AnnotationRecord {
    pub fn from_instance(inst: &TextInstance) -> Self {
        Self {
            polygon: inst.polygon.ring().to_vec(),
            text: inst.transcription.clone(),
            char_centers: inst.char_centers.clone(),
            dont_care: inst.dont_care,
        }
    }

    pub fn into_instance(self) -> Result<TextInstance> {
        let polygon = crate::geometry::BoundaryPolygon::new(self.polygon)?;
        Ok(TextInstance {
            polygon,
            transcription: self.text,
            centers_available: !self.char_centers.is_empty(),
            char_centers: self.char_centers,
            dont_care: self.dont_care,
        })
    }
}

/// Write `scene_{id}.png` and `scene_{id}.json` (one annotation per line).
pub fn save_scene(scene: &MapScene, dir: &Path, id: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    scene.raster.save_png(&dir.join(format!("scene_{id}.png")))?;
    let mut lines = String::new();
    for inst in &scene.annotations {
        lines.push_str(&serde_json::to_string(&AnnotationRecord::from_instance(inst))?);
        lines.push('\n');
    }
    std::fs::write(dir.join(format!("scene_{id}.json")), lines)?;
    Ok(())
}

/// Read one scene back: raster plus instances.
pub fn load_scene(dir: &Path, id: usize) -> Result<(Raster, Vec<TextInstance>)> {
    let raster = Raster::load_png(&dir.join(format!("scene_{id}.png")))?;
    let text = std::fs::read_to_string(dir.join(format!("scene_{id}.json")))?;
    let mut instances = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(line)?;
        instances.push(rec.into_instance()?);
    }
    Ok((raster, instances))
}
