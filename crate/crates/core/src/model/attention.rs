//! Multi-scale deformable attention.
//!
//! For a query `q` with reference point `p` in [0,1]², each head h samples K
//! points per pyramid level l at `φ_l(p) + Δp_hlk(q)` (offsets in level-pixel
//! units), reads the level's value projection bilinearly, combines the L·K
//! samples with softmax weights `A_hlk(q)`, and merges heads with an output
//! projection:
//!
//!   out(q) = W_out · concat_h [ Σ_{l,k} A_hlk(q) · (W_val x_l)[φ_l(p) + Δp_hlk(q)] ]
//!
//! Offsets and weights are linear in the query. The whole thing is batched
//! over queries; per-query work is pure tensor arithmetic, so gradients flow
//! to the query, the reference point, the value maps, and every weight.

use crate::error::{Error, Result};
use crate::tensor::{ParamBinder, ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;

use super::layers::Linear;

/// Initial magnitude step (in level pixels) between successive sampling
/// points of a head. Deliberately not a multiple of 0.5 so freshly
/// initialized sampling points do not sit exactly on texel boundaries.
pub const OFFSET_INIT_STEP: f64 = 0.4;

#[derive(Debug, Clone)]
pub struct DeformAttn {
    pub d: usize,
    pub heads: usize,
    pub levels: usize,
    pub points: usize,
    off: Linear,
    attn: Linear,
    val: Linear,
    out: Linear,
}

/// Attention output plus the intermediates tests and instrumentation need.
pub struct DeformAttnOut {
    /// `[Qn, d]` combined result.
    pub out: Tensor,
    /// `[Qn, H, L·K]` softmax-normalized attention weights.
    pub attn: Tensor,
    /// `[Qn, H, L, K, 2]` normalized sampling locations actually read.
    pub points: Tensor,
}

impl DeformAttn {
    pub fn new(name: &str, d: usize, heads: usize, levels: usize, points: usize) -> Self {
        assert!(heads > 0 && d % heads == 0, "{name}: d {d} not divisible by heads {heads}");
        assert!(levels > 0 && points > 0, "{name}: need at least one level and point");
        let hlk = heads * levels * points;
        // Offsets start at a fixed fan of directions (one per head, magnitude
        // growing with k) so the first gradient step already sees distinct
        // image content; attention logits start at zero = uniform weights.
        let mut off_bias = Vec::with_capacity(hlk * 2);
        for h in 0..heads {
            let theta = 2.0 * std::f64::consts::PI * h as f64 / heads as f64;
            for _l in 0..levels {
                for k in 0..points {
                    let mag = (k + 1) as f64 * OFFSET_INIT_STEP;
                    off_bias.push(theta.cos() * mag);
                    off_bias.push(theta.sin() * mag);
                }
            }
        }
        Self {
            d,
            heads,
            levels,
            points,
            off: Linear::new(format!("{name}.off"), d, hlk * 2)
                .zero_weights()
                .bias_init(off_bias),
            attn: Linear::new(format!("{name}.attn"), d, hlk).zero_weights(),
            val: Linear::new(format!("{name}.val"), d, d),
            out: Linear::new(format!("{name}.out"), d, d),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.off.register(store, rng)?;
        self.attn.register(store, rng)?;
        self.val.register(store, rng)?;
        self.out.register(store, rng)
    }

    /// Value-project one feature map `[d, H, W]` in place of a 1×1 conv.
    pub fn project_level(&self, p: &ParamBinder, map: &Tensor) -> Result<Tensor> {
        let s = map.shape().to_vec();
        if s.len() != 3 || s[0] != self.d {
            return Err(Error::contract(format!(
                "deform value projection wants [d={}, H, W], got {s:?}",
                self.d
            )));
        }
        let flat = map.reshape(&[s[0], s[1] * s[2]])?.transpose_last2()?;
        let v = self.val.apply(p, &flat)?;
        v.reshape(&[s[1], s[2], s[0]])?.permute(&[2, 0, 1])
    }

    /// Value-project a whole pyramid once per layer.
    pub fn project(&self, p: &ParamBinder, maps: &[Tensor]) -> Result<Vec<Tensor>> {
        if maps.len() != self.levels {
            return Err(Error::contract(format!(
                "deform attention built for {} levels, pyramid has {}",
                self.levels,
                maps.len()
            )));
        }
        maps.iter().map(|m| self.project_level(p, m)).collect()
    }

    /// Multi-scale deformable attention for a batch of queries: `queries [Qn, d]`,
    /// `refs [Qn, 2]` normalized, `values` from [`DeformAttn::project`].
    pub fn attend(
        &self,
        p: &ParamBinder,
        queries: &Tensor,
        refs: &Tensor,
        values: &[Tensor],
    ) -> Result<DeformAttnOut> {
        if queries.shape().len() != 2 || queries.shape()[1] != self.d {
            return Err(Error::contract(format!(
                "deform attend wants queries [Qn, {}], got {:?}",
                self.d,
                queries.shape()
            )));
        }
        let qn = queries.shape()[0];
        if refs.shape() != [qn, 2] {
            return Err(Error::contract(format!(
                "deform attend wants refs [{qn}, 2], got {:?}",
                refs.shape()
            )));
        }
        let (heads, levels, k_pts) = (self.heads, self.levels, self.points);
        let (dh, lk) = (self.d / heads, levels * k_pts);
        let graph = queries.graph().clone();

        // Sampling locations: ref + Δp/(W_l, H_l), broadcast per level.
        let off = self.off.apply(p, queries)?.reshape(&[qn, heads, levels, k_pts, 2])?;
        let mut inv = Vec::with_capacity(lk * 2);
        for vmap in values {
            let (hl, wl) = (vmap.shape()[1], vmap.shape()[2]);
            for _ in 0..k_pts {
                inv.push(1.0 / wl as f64);
                inv.push(1.0 / hl as f64);
            }
        }
        let inv_size = graph.constant(inv, &[levels, k_pts, 2])?;
        let refs_exp = refs
            .reshape(&[qn, 1, 2])?
            .repeat(1, heads * lk)?
            .reshape(&[qn, heads, levels, k_pts, 2])?;
        let points = refs_exp.add(&off.mul(&inv_size)?)?;

        // Per-head weights over the L·K samples.
        let attn = self.attn.apply(p, queries)?.reshape(&[qn, heads, lk])?.softmax(2)?;

        // Sample every (head, level) pair and combine.
        let mut head_ctx = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut per_level = Vec::with_capacity(levels);
            for (l, vmap) in values.iter().enumerate() {
                let head_map = vmap.slice(0, h * dh, dh)?;
                let pts_hl =
                    points.slice(1, h, 1)?.slice(2, l, 1)?.reshape(&[qn, k_pts, 2])?;
                per_level.push(head_map.bilinear_sample(&pts_hl)?);
            }
            let sampled = Tensor::concat(&per_level, 1)?; // [Qn, L·K, dh]
            let a_h = attn.slice(1, h, 1)?; // [Qn, 1, L·K]
            head_ctx.push(a_h.matmul(&sampled)?); // [Qn, 1, dh]
        }
        let ctx = Tensor::concat(&head_ctx, 2)?.reshape(&[qn, self.d])?;
        let out = self.out.apply(p, &ctx)?;
        Ok(DeformAttnOut { out, attn, points })
    }
}
