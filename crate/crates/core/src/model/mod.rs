//! The hyper-local deformable-transformer text spotter.
//!
//! A small conv trunk feeds an L-level feature pyramid into a deformable
//! encoder whose per-location head proposes top-Q text boxes. For each
//! proposal, a boundary-point decoder walks N polygon points, a
//! character-center predictor places M character centers, and a character
//! decoder reads image features at those centers; heads after every layer
//! emit class logits, polygons, centers, and per-slot character logits.
//!
//! "Hyper-local" is the defining property: all deformable sampling is based
//! at each point's own reference (its boundary point or character center),
//! not at a shared instance anchor. The three ablation flags disable pieces
//! of that locality.

pub mod attention;
pub mod backbone;
pub mod decoder;
pub mod encoder;
pub mod layers;
#[cfg(test)]
mod tests;

pub use attention::{DeformAttn, DeformAttnOut};
pub use backbone::{Backbone, FeaturePyramid};
pub use decoder::{Decoder, DecoderState, LayerSampling};
pub use encoder::{level_locations, Encoder, EncoderOutput, Proposal};

use crate::error::{Error, Result};
use crate::geometry::vec2::Vec2;
use crate::matching::LayerPreds;
use crate::synthmap::Raster;
use crate::tensor::{Graph, ParamBinder, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture hyper-parameters. `desk()` is the default working scale;
/// `micro()` fits an overfit run on a CPU; `paper()` restores the
/// full-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Model width d; divisible by `n_heads` and by 4.
    pub d_model: usize,
    /// Attention heads H.
    pub n_heads: usize,
    /// Pyramid levels L.
    pub n_levels: usize,
    /// Deformable sampling points K per head and level.
    pub n_sample_points: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    /// Proposals Q kept from the encoder.
    pub num_proposals: usize,
    /// Boundary points N per instance (even: top and bottom chains).
    pub n_boundary_points: usize,
    /// Character slots M per instance.
    pub max_text_len: usize,
    /// Character classes V; index V−1 is the empty slot.
    pub vocab_size: usize,
    /// Channel width of the conv trunk before projection.
    pub trunk_channels: usize,
    /// Ablation: sample boundary features at the proposal center instead of
    /// at each boundary point.
    pub hld_off: bool,
    /// Ablation: sample character features at the proposal center instead
    /// of at each character center.
    pub hlr_off: bool,
    /// Ablation: positional embeddings from the proposal center instead of
    /// from each point's own reference.
    pub hlpe_off: bool,
    /// Use the literal unnormalized dot-product attention in the
    /// character-center predictor (no softmax, no 1/√d).
    pub raw_center_attention: bool,
    /// Keep detections with b̂ at or above this.
    pub score_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale defaults: trainable on a CPU in minutes-to-hours.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_levels: 3,
            n_sample_points: 4,
            n_enc_layers: 3,
            n_dec_layers: 3,
            num_proposals: 20,
            n_boundary_points: 8,
            max_text_len: 12,
            vocab_size: crate::vocab::VOCAB_SIZE,
            trunk_channels: 32,
            hld_off: false,
            hlr_off: false,
            hlpe_off: false,
            raw_center_attention: false,
            score_threshold: 0.4,
        }
    }

    /// Small enough to overfit a handful of 128×128 scenes in minutes.
    pub fn micro() -> Self {
        Self {
            d_model: 32,
            n_heads: 2,
            n_levels: 2,
            n_sample_points: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            num_proposals: 8,
            trunk_channels: 16,
            ..Self::desk()
        }
    }

    /// Full-scale values from the original architecture.
    pub fn paper() -> Self {
        Self {
            d_model: 256,
            n_heads: 8,
            n_levels: 4,
            n_sample_points: 4,
            n_enc_layers: 6,
            n_dec_layers: 6,
            num_proposals: 100,
            n_boundary_points: 16,
            max_text_len: 25,
            vocab_size: 96,
            trunk_channels: 64,
            ..Self::desk()
        }
    }

    /// Minimal config for end-to-end finite-difference gradient checks.
    pub fn tiny_gradcheck() -> Self {
        Self {
            d_model: 8,
            n_heads: 1,
            n_levels: 1,
            n_sample_points: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            num_proposals: 2,
            n_boundary_points: 4,
            max_text_len: 3,
            vocab_size: 5,
            trunk_channels: 4,
            ..Self::desk()
        }
    }

    /// Hidden width of every feed-forward block.
    pub fn ffn_dim(&self) -> usize {
        2 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::contract(msg));
        if self.d_model == 0 || self.d_model % self.n_heads.max(1) != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model % 4 != 0 {
            return fail(format!(
                "d_model {} must be divisible by 4 for the sinusoidal embedding",
                self.d_model
            ));
        }
        if self.n_heads == 0 || self.n_levels == 0 || self.n_sample_points == 0 {
            return fail("n_heads, n_levels, n_sample_points must be positive".into());
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return fail("encoder and decoder need at least one layer each".into());
        }
        if self.n_boundary_points < 4 || self.n_boundary_points % 2 != 0 {
            return fail(format!(
                "n_boundary_points {} must be even and at least 4",
                self.n_boundary_points
            ));
        }
        if self.num_proposals == 0 || self.max_text_len == 0 {
            return fail("num_proposals and max_text_len must be positive".into());
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must include at least one character and the empty class".into());
        }
        if self.trunk_channels < 2 || self.trunk_channels % 2 != 0 {
            return fail(format!("trunk_channels {} must be even and at least 2", self.trunk_channels));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return fail(format!("score_threshold {} must be in [0,1]", self.score_threshold));
        }
        Ok(())
    }
}

/// The three model stages built from one config. Construction is cheap; the
/// same structure both registers parameters and runs the forward pass, so
/// names and shapes cannot drift.
pub struct Architecture {
    pub backbone: Backbone,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            backbone: Backbone::new(cfg.d_model, cfg.trunk_channels, cfg.n_levels),
            encoder: Encoder::new(cfg),
            decoder: Decoder::new(cfg),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.backbone.register(store, rng)?;
        self.encoder.register(store, rng)?;
        self.decoder.register(store, rng)
    }
}

/// Everything one forward pass produces, still attached to its graph.
pub struct ModelOutput {
    /// Encoder objectness logits for every pyramid location, `[P]`.
    pub enc_scores: Tensor,
    /// Encoder boxes (cx, cy, w, h) for every location, `[P, 4]`.
    pub enc_boxes: Tensor,
    /// Top-Q proposals, probability-descending.
    pub proposals: Vec<Proposal>,
    /// Per decoder layer: scores, polygons, centers, character logits.
    pub layers: Vec<LayerPreds>,
    /// Per decoder layer: deformable sampling base points actually used.
    pub sampling: Vec<LayerSampling>,
}

/// One final detection in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub polygon: Vec<Vec2>,
    pub text: String,
    pub score: f64,
}

/// Model = config + named parameters.
pub struct SpotModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl SpotModel {
    /// Fresh deterministic initialization.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Architecture::new(&cfg).register(&mut store, &mut rng)?;
        Ok(Self { cfg, params: store })
    }

    /// Wrap existing parameters (e.g. from a checkpoint). An empty store is
    /// allowed here but rejected by `forward`/`spot`.
    pub fn from_parts(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, params })
    }

    /// Full forward pass on `image [3, H, W]` using parameters bound via `p`.
    pub fn forward(&self, p: &ParamBinder, image: &Tensor) -> Result<ModelOutput> {
        if self.params.is_empty() {
            return Err(Error::contract(
                "model has no parameters — initialize or load a checkpoint first",
            ));
        }
        let arch = Architecture::new(&self.cfg);
        let pyramid = arch.backbone.forward(p, image)?;
        let enc = arch.encoder.forward(p, &pyramid.maps)?;
        let state = arch.decoder.init_state(p, &enc.prop_centers)?;
        let (_state, layers, sampling) = arch.decoder.forward(p, state, &enc.memory)?;
        Ok(ModelOutput {
            enc_scores: enc.scores,
            enc_boxes: enc.boxes,
            proposals: enc.proposals,
            layers,
            sampling,
        })
    }

    /// Forward pass on a raster in a throwaway graph.
    pub fn run(&self, image: &Raster) -> Result<ModelOutput> {
        let graph = Graph::new();
        let binder = ParamBinder::new(&self.params, &graph);
        let img = image_tensor(&graph, image)?;
        self.forward(&binder, &img)
    }

    /// Decode final-layer predictions above `score_threshold` into pixel-space
    /// detections, keeping each detection's query index (useful for pairing
    /// with [`ModelOutput::sampling`]). Transcriptions take the per-slot
    /// argmax with empty-class slots dropped. Sorted by score descending.
    pub fn decode(&self, out: &ModelOutput, image_w: usize, image_h: usize) -> Vec<(usize, Detection)> {
        let last = out.layers.last().expect("decoder emits at least one layer");
        let q = last.num_queries();
        let n = last.coords.shape()[1];
        let m = last.char_logits.shape()[1];
        let v = last.char_logits.shape()[2];
        let scores = last.scores.value();
        let coords = last.coords.value();
        let logits = last.char_logits.value();
        let (w, h) = (image_w as f64, image_h as f64);

        let mut dets = Vec::new();
        for i in 0..q {
            let prob = crate::tensor::sigmoid(scores[i]);
            if prob < self.cfg.score_threshold {
                continue;
            }
            let polygon = (0..n)
                .map(|k| {
                    let base = (i * n + k) * 2;
                    [coords[base] * w, coords[base + 1] * h]
                })
                .collect();
            let mut text = String::new();
            for s in 0..m {
                let row = &logits[(i * m + s) * v..(i * m + s + 1) * v];
                let best = argmax(row);
                if best != v - 1 {
                    if let Some(c) = crate::vocab::index_to_char(best) {
                        text.push(c);
                    }
                }
            }
            dets.push((i, Detection { polygon, text, score: prob }));
        }
        dets.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).expect("finite scores"));
        dets
    }

    /// End-to-end spotting: detections with b̂ ≥ `score_threshold`, decoded
    /// transcriptions (per-slot argmax, empty-class slots dropped), polygons
    /// in pixel coordinates, sorted by score descending.
    pub fn spot(&self, image: &Raster) -> Result<Vec<Detection>> {
        let out = self.run(image)?;
        Ok(self.decode(&out, image.width(), image.height()).into_iter().map(|(_, d)| d).collect())
    }
}

/// First index of the largest value.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// RGB raster → `[3, H, W]` constant tensor with values in [0,1].
pub fn image_tensor(graph: &Graph, image: &Raster) -> Result<Tensor> {
    let (w, h) = (image.width(), image.height());
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let c = image.get(x, y);
            for ch in 0..3 {
                data[ch * h * w + y * w + x] = c[ch] as f64 / 255.0;
            }
        }
    }
    graph.constant(data, &[3, h, w])
}
