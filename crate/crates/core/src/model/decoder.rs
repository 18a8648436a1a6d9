//! Boundary-point decoder, character-center predictor, character decoder,
//! and the prediction heads.
//!
//! Per decoder layer: (1) every boundary point attends deformably at its own
//! reference point, then boundary points talk within their instance and
//! across instances at the same point index; a zero-initialized head refines
//! the reference points in inverse-sigmoid space. (2) The character-center
//! predictor cross-attends character composites to the updated boundary
//! composites and regresses M centers per proposal. (3) The character decoder
//! samples deformably at those centers and lets characters of one instance
//! attend to each other. Heads read class logits off mean-pooled boundary
//! contents and character logits off character contents after every layer.

use crate::error::{Error, Result};
use crate::geometry::vec2::Vec2;
use crate::matching::LayerPreds;
use crate::tensor::{ParamBinder, ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;

use super::attention::DeformAttn;
use super::encoder::class_bias_init;
use super::layers::{xavier, FeedForward, LayerNormAffine, Linear, Mlp, SelfAttention};
use super::ModelConfig;

/// Mutable decoder quantities, all still attached to the graph.
pub struct DecoderState {
    /// Boundary content queries `[Q, N, d]`.
    pub q_n: Tensor,
    /// Character content queries `[Q, M, d]`, zero at initialization.
    pub q_m: Tensor,
    /// Boundary reference points `[Q, N, 2]`; layer j+1's refs are exactly
    /// layer j's predicted boundary points.
    pub boundary_refs: Tensor,
    /// Character reference points `[Q, M, 2]`; always the latest predicted
    /// centers.
    pub char_refs: Tensor,
    /// The fixed proposal centers expanded to `[Q, N, 2]` — ablation target.
    pub centers_n: Tensor,
    /// The fixed proposal centers expanded to `[Q, M, 2]`.
    pub centers_m: Tensor,
}

/// Normalized deformable-attention base locations one layer actually used.
#[derive(Debug, Clone)]
pub struct LayerSampling {
    /// Per boundary query, row-major over (proposal, point), length Q·N.
    pub boundary_bases: Vec<Vec2>,
    /// Per character query, row-major over (proposal, slot), length Q·M.
    pub char_bases: Vec<Vec2>,
}

#[derive(Debug, Clone)]
struct BoundaryLayer {
    attn: DeformAttn,
    attn_norm: LayerNormAffine,
    intra: SelfAttention,
    intra_norm: LayerNormAffine,
    inter: SelfAttention,
    inter_norm: LayerNormAffine,
    ffn: FeedForward,
    refine: Mlp,
}

#[derive(Debug, Clone)]
struct CharLayer {
    attn: DeformAttn,
    attn_norm: LayerNormAffine,
    intra: SelfAttention,
    intra_norm: LayerNormAffine,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct CenterPredictor {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    d: usize,
    n_points: usize,
    max_chars: usize,
    hld_off: bool,
    hlr_off: bool,
    hlpe_off: bool,
    raw_center_attention: bool,
    boundary_layers: Vec<BoundaryLayer>,
    char_layers: Vec<CharLayer>,
    center: CenterPredictor,
    class_head: Linear,
    char_head: Linear,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mk_deform = |name: &str| {
            DeformAttn::new(name, d, cfg.n_heads, cfg.n_levels, cfg.n_sample_points)
        };
        let boundary_layers = (0..cfg.n_dec_layers)
            .map(|i| BoundaryLayer {
                attn: mk_deform(&format!("dec.{i}.bnd.attn")),
                attn_norm: LayerNormAffine::new(format!("dec.{i}.bnd.attn_norm"), d),
                intra: SelfAttention::new(&format!("dec.{i}.bnd.intra"), d, cfg.n_heads),
                intra_norm: LayerNormAffine::new(format!("dec.{i}.bnd.intra_norm"), d),
                inter: SelfAttention::new(&format!("dec.{i}.bnd.inter"), d, cfg.n_heads),
                inter_norm: LayerNormAffine::new(format!("dec.{i}.bnd.inter_norm"), d),
                ffn: FeedForward::new(&format!("dec.{i}.bnd.ffn"), d, cfg.ffn_dim()),
                refine: Mlp::new(&format!("dec.{i}.bnd.refine"), &[d, d, d, 2], true),
            })
            .collect();
        let char_layers = (0..cfg.n_dec_layers)
            .map(|i| CharLayer {
                attn: mk_deform(&format!("dec.{i}.chr.attn")),
                attn_norm: LayerNormAffine::new(format!("dec.{i}.chr.attn_norm"), d),
                intra: SelfAttention::new(&format!("dec.{i}.chr.intra"), d, cfg.n_heads),
                intra_norm: LayerNormAffine::new(format!("dec.{i}.chr.intra_norm"), d),
                ffn: FeedForward::new(&format!("dec.{i}.chr.ffn"), d, cfg.ffn_dim()),
            })
            .collect();
        Self {
            d,
            n_points: cfg.n_boundary_points,
            max_chars: cfg.max_text_len,
            hld_off: cfg.hld_off,
            hlr_off: cfg.hlr_off,
            hlpe_off: cfg.hlpe_off,
            raw_center_attention: cfg.raw_center_attention,
            boundary_layers,
            char_layers,
            center: CenterPredictor {
                wq: Linear::new("dec.center.q", d, d),
                wk: Linear::new("dec.center.k", d, d),
                wv: Linear::new("dec.center.v", d, d),
                mlp: Mlp::new("dec.center.mlp", &[d, d, d, 2], false),
            },
            class_head: Linear::new("dec.class", d, 1)
                .bias_init(vec![class_bias_init(0.01)]),
            char_head: Linear::new("dec.char", d, cfg.vocab_size),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert("dec.point_embed", &[self.n_points, self.d], {
            xavier(rng, self.n_points, self.d)
        })?;
        for l in &self.boundary_layers {
            l.attn.register(store, rng)?;
            l.attn_norm.register(store, rng)?;
            l.intra.register(store, rng)?;
            l.intra_norm.register(store, rng)?;
            l.inter.register(store, rng)?;
            l.inter_norm.register(store, rng)?;
            l.ffn.register(store, rng)?;
            l.refine.register(store, rng)?;
        }
        for l in &self.char_layers {
            l.attn.register(store, rng)?;
            l.attn_norm.register(store, rng)?;
            l.intra.register(store, rng)?;
            l.intra_norm.register(store, rng)?;
            l.ffn.register(store, rng)?;
        }
        self.center.wq.register(store, rng)?;
        self.center.wk.register(store, rng)?;
        self.center.wv.register(store, rng)?;
        self.center.mlp.register(store, rng)?;
        self.class_head.register(store, rng)?;
        self.char_head.register(store, rng)
    }

    /// Boundary refs start at the proposal center, boundary contents at the
    /// learned per-point embeddings (shared across proposals), character
    /// contents at zero, character refs at the proposal center.
    pub fn init_state(&self, p: &ParamBinder, prop_centers: &Tensor) -> Result<DecoderState> {
        let q = prop_centers.shape()[0];
        let (n, m, d) = (self.n_points, self.max_chars, self.d);
        let point_embed = p.get("dec.point_embed")?;
        let q_n = point_embed.reshape(&[1, n, d])?.repeat(0, q)?;
        let q_m = p.graph().zeros(&[q, m, d]);
        let centers_n = prop_centers.reshape(&[q, 1, 2])?.repeat(1, n)?;
        let centers_m = prop_centers.reshape(&[q, 1, 2])?.repeat(1, m)?;
        Ok(DecoderState {
            q_n,
            q_m,
            boundary_refs: centers_n.clone(),
            char_refs: centers_m.clone(),
            centers_n,
            centers_m,
        })
    }

    /// Positional embedding of reference points; the hlpe_off ablation pins
    /// it to the proposal center everywhere.
    fn pos_of(&self, refs: &Tensor, centers: &Tensor) -> Result<Tensor> {
        let src = if self.hlpe_off { centers } else { refs };
        src.pos_embed_2d(self.d)
    }

    /// Character-center prediction: cross-attention from character composites
    /// to boundary composites with values from boundary contents, then a
    /// 3-layer MLP + sigmoid.
    pub(crate) fn predict_centers(
        &self,
        p: &ParamBinder,
        char_comp: &Tensor,  // [Q, M, d]
        bound_comp: &Tensor, // [Q, N, d]
        bound_content: &Tensor,
    ) -> Result<Tensor> {
        let qc = self.center.wq.apply(p, char_comp)?;
        let kc = self.center.wk.apply(p, bound_comp)?;
        let vc = self.center.wv.apply(p, bound_content)?;
        let logits = qc.matmul(&kc.transpose_last2()?)?; // [Q, M, N]
        let attn = if self.raw_center_attention {
            logits
        } else {
            logits.scale(1.0 / (self.d as f64).sqrt()).softmax(2)?
        };
        let ctx = attn.matmul(&vc)?; // [Q, M, d]
        Ok(self.center.mlp.apply(p, &ctx)?.sigmoid())
    }

    /// Run all layers; returns per-layer predictions and the deformable
    /// sampling base points each layer used (for instrumentation).
    pub fn forward(
        &self,
        p: &ParamBinder,
        mut state: DecoderState,
        memory: &[Tensor],
    ) -> Result<(DecoderState, Vec<LayerPreds>, Vec<LayerSampling>)> {
        let q = state.q_n.shape()[0];
        let (n, m, d) = (self.n_points, self.max_chars, self.d);
        let mut layers = Vec::with_capacity(self.boundary_layers.len());
        let mut sampling = Vec::with_capacity(self.boundary_layers.len());

        for (bl, cl) in self.boundary_layers.iter().zip(&self.char_layers) {
            // ---- boundary point decoder ---------------------------------
            let pe_n = self.pos_of(&state.boundary_refs, &state.centers_n)?;
            let composite = state.q_n.add(&pe_n)?;
            let sample_refs =
                if self.hld_off { &state.centers_n } else { &state.boundary_refs };
            let boundary_bases = as_points(sample_refs);

            let values = bl.attn.project(p, memory)?;
            let attn = bl.attn.attend(
                p,
                &composite.reshape(&[q * n, d])?,
                &sample_refs.reshape(&[q * n, 2])?,
                &values,
            )?;
            let mut q_n = bl
                .attn_norm
                .apply(p, &state.q_n.add(&attn.out.reshape(&[q, n, d])?)?)?;

            let qk = q_n.add(&pe_n)?;
            q_n = bl.intra_norm.apply(p, &q_n.add(&bl.intra.apply(p, &qk, &q_n)?)?)?;

            let qk_t = q_n.add(&pe_n)?.permute(&[1, 0, 2])?;
            let v_t = q_n.permute(&[1, 0, 2])?;
            let inter = bl.inter.apply(p, &qk_t, &v_t)?.permute(&[1, 0, 2])?;
            q_n = bl.inter_norm.apply(p, &q_n.add(&inter)?)?;
            q_n = bl.ffn.apply(p, &q_n)?;

            let delta = bl.refine.apply(p, &q_n)?;
            let new_pts = state.boundary_refs.inverse_sigmoid().add(&delta)?.sigmoid();
            state.q_n = q_n;
            state.boundary_refs = new_pts.clone();

            // ---- character-center predictor ------------------------------
            let pe_n_upd = self.pos_of(&state.boundary_refs, &state.centers_n)?;
            let bound_comp = state.q_n.add(&pe_n_upd)?;
            let pe_m = self.pos_of(&state.char_refs, &state.centers_m)?;
            let char_comp = state.q_m.add(&pe_m)?;
            let centers_pred =
                self.predict_centers(p, &char_comp, &bound_comp, &state.q_n)?;
            state.char_refs = centers_pred.clone();

            // ---- character decoder ---------------------------------------
            let pe_m_upd = self.pos_of(&state.char_refs, &state.centers_m)?;
            let comp_m = state.q_m.add(&pe_m_upd)?;
            let sample_m = if self.hlr_off { &state.centers_m } else { &state.char_refs };
            let char_bases = as_points(sample_m);

            let cvalues = cl.attn.project(p, memory)?;
            let cattn = cl.attn.attend(
                p,
                &comp_m.reshape(&[q * m, d])?,
                &sample_m.reshape(&[q * m, 2])?,
                &cvalues,
            )?;
            let mut q_m = cl
                .attn_norm
                .apply(p, &state.q_m.add(&cattn.out.reshape(&[q, m, d])?)?)?;
            let qkm = q_m.add(&pe_m_upd)?;
            q_m = cl.intra_norm.apply(p, &q_m.add(&cl.intra.apply(p, &qkm, &q_m)?)?)?;
            q_m = cl.ffn.apply(p, &q_m)?;
            state.q_m = q_m;

            // ---- heads (intermediate supervision after every layer) ------
            let pooled = state.q_n.mean_axis(1)?; // [Q, d]
            let scores = self.class_head.apply(p, &pooled)?.reshape(&[q])?;
            let char_logits = self.char_head.apply(p, &state.q_m)?;
            layers.push(LayerPreds {
                scores,
                coords: new_pts,
                centers: centers_pred,
                char_logits,
            });
            sampling.push(LayerSampling { boundary_bases, char_bases });
        }
        if layers.is_empty() {
            return Err(Error::contract("decoder has zero layers"));
        }
        Ok((state, layers, sampling))
    }
}

fn as_points(t: &Tensor) -> Vec<Vec2> {
    let v = t.value();
    v.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}
