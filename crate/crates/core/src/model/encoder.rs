//! Deformable-attention encoder and proposal generation.
//!
//! Every pyramid location is a query attending at its own normalized
//! position; after `n_enc_layers` of attention + feed-forward, a head scores
//! each location and regresses a box around it. The top-Q locations by score
//! become the decoder's proposals.

use crate::error::{Error, Result};
use crate::geometry::vec2::Vec2;
use crate::tensor::{ParamBinder, ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;

use super::attention::DeformAttn;
use super::layers::{FeedForward, LayerNormAffine, Linear, Mlp};
use super::ModelConfig;

/// A candidate text instance from the encoder, all values normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    /// Box center (x, y) in [0,1]².
    pub center: Vec2,
    /// Box size (w, h) in [0,1]².
    pub scale: Vec2,
    /// Text-instance probability b̂ in [0,1].
    pub prob: f64,
}

/// Initial class-head bias: puts sigmoid at a low prior so the focal loss of
/// the overwhelmingly negative locations starts small.
pub fn class_bias_init(prior: f64) -> f64 {
    -((1.0 - prior) / prior).ln()
}

/// Normalized pixel-center locations of every pyramid cell, level-major,
/// rows within a level in (y, x) raster order — the same order in which
/// [`flatten_pyramid`] lays out memory rows.
pub fn level_locations(sizes: &[(usize, usize)]) -> Vec<Vec2> {
    let mut out = Vec::new();
    for &(w, h) in sizes {
        for y in 0..h {
            for x in 0..w {
                out.push([(x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64]);
            }
        }
    }
    out
}

/// `[d, H_l, W_l]` maps → one `[P, d]` row-per-location matrix.
pub fn flatten_pyramid(maps: &[Tensor]) -> Result<Tensor> {
    let flats: Vec<Tensor> = maps
        .iter()
        .map(|m| {
            let s = m.shape().to_vec();
            m.permute(&[1, 2, 0])?.reshape(&[s[1] * s[2], s[0]])
        })
        .collect::<Result<_>>()?;
    Tensor::concat(&flats, 0)
}

/// Inverse of [`flatten_pyramid`]: rows back into `[d, H_l, W_l]` maps.
pub fn split_levels(flat: &Tensor, sizes: &[(usize, usize)]) -> Result<Vec<Tensor>> {
    let d = flat.shape()[1];
    let mut maps = Vec::with_capacity(sizes.len());
    let mut row = 0;
    for &(w, h) in sizes {
        let m = flat.slice(0, row, h * w)?.reshape(&[h, w, d])?.permute(&[2, 0, 1])?;
        maps.push(m);
        row += h * w;
    }
    Ok(maps)
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: DeformAttn,
    attn_norm: LayerNormAffine,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    q_top: usize,
    layers: Vec<EncoderLayer>,
    score_head: Linear,
    box_head: Mlp,
}

pub struct EncoderOutput {
    /// Refined memory, per level `[d, H_l, W_l]` — the decoder's value source.
    pub memory: Vec<Tensor>,
    /// Objectness logits for every location, `[P]`.
    pub scores: Tensor,
    /// Regressed boxes (cx, cy, w, h) for every location, `[P, 4]`, in [0,1].
    pub boxes: Tensor,
    /// Top-Q proposals, probability-descending.
    pub proposals: Vec<Proposal>,
    /// Centers of the top-Q proposals, `[Q, 2]`, rows in proposal order.
    pub prop_centers: Tensor,
    /// Flat location index each proposal came from.
    pub prop_indices: Vec<usize>,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let layers = (0..cfg.n_enc_layers)
            .map(|i| EncoderLayer {
                attn: DeformAttn::new(
                    &format!("enc.{i}.attn"),
                    d,
                    cfg.n_heads,
                    cfg.n_levels,
                    cfg.n_sample_points,
                ),
                attn_norm: LayerNormAffine::new(format!("enc.{i}.attn_norm"), d),
                ffn: FeedForward::new(&format!("enc.{i}.ffn"), d, cfg.ffn_dim()),
            })
            .collect();
        // Box deltas start at zero: (x, y) = the location itself, (w, h) at a
        // small prior, so every initial proposal is a plausible box.
        let wh0 = class_bias_init(0.1);
        Self {
            q_top: cfg.num_proposals,
            layers,
            score_head: Linear::new("enc.score", d, 1)
                .bias_init(vec![class_bias_init(0.01)]),
            box_head: {
                let mut mlp = Mlp::new("enc.box", &[d, d, 4], true);
                let last = mlp.layers.last_mut().expect("box head has layers");
                *last = last.clone().bias_init(vec![0.0, 0.0, wh0, wh0]);
                mlp
            },
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        for l in &self.layers {
            l.attn.register(store, rng)?;
            l.attn_norm.register(store, rng)?;
            l.ffn.register(store, rng)?;
        }
        self.score_head.register(store, rng)?;
        self.box_head.register(store, rng)
    }

    pub fn forward(&self, p: &ParamBinder, maps: &[Tensor]) -> Result<EncoderOutput> {
        let graph = maps
            .first()
            .ok_or_else(|| Error::contract("encoder needs a non-empty pyramid"))?
            .graph()
            .clone();
        let sizes: Vec<(usize, usize)> =
            maps.iter().map(|m| (m.shape()[2], m.shape()[1])).collect();
        let locations = level_locations(&sizes);
        let p_total = locations.len();
        if p_total < self.q_top {
            return Err(Error::contract(format!(
                "top-{} proposals requested but the pyramid has only {p_total} locations",
                self.q_top
            )));
        }
        let loc_flat: Vec<f64> = locations.iter().flat_map(|v| [v[0], v[1]]).collect();
        let locs = graph.constant(loc_flat, &[p_total, 2])?;

        let mut memory = flatten_pyramid(maps)?;
        for layer in &self.layers {
            let values = layer.attn.project(p, &split_levels(&memory, &sizes)?)?;
            let attn = layer.attn.attend(p, &memory, &locs, &values)?;
            memory = layer.attn_norm.apply(p, &memory.add(&attn.out)?)?;
            memory = layer.ffn.apply(p, &memory)?;
        }

        let scores = self.score_head.apply(p, &memory)?.reshape(&[p_total])?;
        let deltas = self.box_head.apply(p, &memory)?;
        let xy = locs.inverse_sigmoid().add(&deltas.slice(1, 0, 2)?)?.sigmoid();
        let wh = deltas.slice(1, 2, 2)?.sigmoid();
        let boxes = Tensor::concat(&[xy, wh], 1)?;

        // Top-Q by score, ties broken toward the lower location index.
        let score_vals = scores.value();
        if let Some(bad) = score_vals.iter().find(|s| !s.is_finite()) {
            return Err(Error::contract(format!(
                "encoder produced a non-finite objectness score ({bad}); \
                 parameters have likely diverged"
            )));
        }
        let mut order: Vec<usize> = (0..p_total).collect();
        order.sort_by(|&a, &b| {
            score_vals[b].partial_cmp(&score_vals[a]).expect("finite scores").then(a.cmp(&b))
        });
        let prop_indices: Vec<usize> = order[..self.q_top].to_vec();

        let box_vals = boxes.value();
        let proposals = prop_indices
            .iter()
            .map(|&i| Proposal {
                center: [box_vals[i * 4], box_vals[i * 4 + 1]],
                scale: [box_vals[i * 4 + 2], box_vals[i * 4 + 3]],
                prob: crate::tensor::sigmoid(score_vals[i]),
            })
            .collect();
        let rows: Vec<Tensor> = prop_indices
            .iter()
            .map(|&i| boxes.slice(0, i, 1))
            .collect::<Result<_>>()?;
        let prop_centers = Tensor::concat(&rows, 0)?.slice(1, 0, 2)?;

        Ok(EncoderOutput {
            memory: split_levels(&memory, &sizes)?,
            scores,
            boxes,
            proposals,
            prop_centers,
            prop_indices,
        })
    }
}
