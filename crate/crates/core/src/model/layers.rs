//! Small learned building blocks: linear maps, MLPs, affine layer norm, and
//! standard multi-head self-attention.
//!
//! Each block owns its parameter names, so registration (which creates the
//! entries in a [`ParamStore`]) and application (which binds them into a
//! graph) cannot drift apart: both walk the same struct.

use crate::error::Result;
use crate::tensor::{ParamBinder, ParamStore, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Glorot-uniform draw for a `[d_in, d_out]` weight matrix.
pub fn xavier(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Vec<f64> {
    let a = (6.0 / (d_in + d_out) as f64).sqrt();
    (0..d_in * d_out).map(|_| rng.random_range(-a..=a)).collect()
}

/// A dense layer `[..., d_in] -> [..., d_out]` with bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    zero_weights: bool,
    bias_init: Option<Vec<f64>>,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Self { name: name.into(), d_in, d_out, zero_weights: false, bias_init: None }
    }

    /// Zero-initialize the weights (used by heads that must start inert).
    pub fn zero_weights(mut self) -> Self {
        self.zero_weights = true;
        self
    }

    /// Override the bias initialization (length must be `d_out`).
    pub fn bias_init(mut self, b: Vec<f64>) -> Self {
        assert_eq!(b.len(), self.d_out, "{}: bias init length", self.name);
        self.bias_init = Some(b);
        self
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let w = if self.zero_weights {
            vec![0.0; self.d_in * self.d_out]
        } else {
            xavier(rng, self.d_in, self.d_out)
        };
        store.insert(&format!("{}.w", self.name), &[self.d_in, self.d_out], w)?;
        let b = self.bias_init.clone().unwrap_or_else(|| vec![0.0; self.d_out]);
        store.insert(&format!("{}.b", self.name), &[self.d_out], b)
    }

    pub fn apply(&self, p: &ParamBinder, x: &Tensor) -> Result<Tensor> {
        let w = p.get(&format!("{}.w", self.name))?;
        let b = p.get(&format!("{}.b", self.name))?;
        let in_shape = x.shape().to_vec();
        let rows = x.numel() / self.d_in;
        let y = x.reshape(&[rows, self.d_in])?.matmul(&w)?.add(&b)?;
        let mut out_shape = in_shape;
        *out_shape.last_mut().expect("linear input must have rank >= 1") = self.d_out;
        y.reshape(&out_shape)
    }
}

/// Stack of dense layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [d_in, hidden..., d_out]`. With `zero_last`, the final layer
    /// starts at exactly zero so the whole MLP is inert at initialization.
    pub fn new(name: &str, dims: &[usize], zero_last: bool) -> Self {
        assert!(dims.len() >= 2, "{name}: an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let lin = Linear::new(format!("{name}.{i}"), w[0], w[1]);
                if zero_last && i == dims.len() - 2 { lin.zero_weights() } else { lin }
            })
            .collect();
        Self { layers }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        for l in &self.layers {
            l.register(store, rng)?;
        }
        Ok(())
    }

    pub fn apply(&self, p: &ParamBinder, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            y = l.apply(p, &y)?;
            if i + 1 < self.layers.len() {
                y = y.relu();
            }
        }
        Ok(y)
    }
}

/// Layer norm over the last axis with a learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNormAffine {
    pub name: String,
    pub dim: usize,
}

impl LayerNormAffine {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim }
    }

    pub fn register(&self, store: &mut ParamStore, _rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert(&format!("{}.gamma", self.name), &[self.dim], vec![1.0; self.dim])?;
        store.insert(&format!("{}.beta", self.name), &[self.dim], vec![0.0; self.dim])
    }

    pub fn apply(&self, p: &ParamBinder, x: &Tensor) -> Result<Tensor> {
        let gamma = p.get(&format!("{}.gamma", self.name))?;
        let beta = p.get(&format!("{}.beta", self.name))?;
        x.layer_norm()?.mul(&gamma)?.add(&beta)
    }
}

/// Post-norm residual feed-forward block: `LN(x + W2 relu(W1 x))`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Mlp,
    pub norm: LayerNormAffine,
}

impl FeedForward {
    pub fn new(name: &str, d: usize, hidden: usize) -> Self {
        Self {
            inner: Mlp::new(&format!("{name}.mlp"), &[d, hidden, d], false),
            norm: LayerNormAffine::new(format!("{name}.norm"), d),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.inner.register(store, rng)?;
        self.norm.register(store, rng)
    }

    pub fn apply(&self, p: &ParamBinder, x: &Tensor) -> Result<Tensor> {
        self.norm.apply(p, &x.add(&self.inner.apply(p, x)?)?)
    }
}

/// Multi-head scaled-dot-product self-attention over the middle axis of a
/// `[B, T, d]` batch. Queries and keys are taken from `qk` (contents plus
/// positional embeddings); values from `v` (contents only). Nothing attends
/// across the leading batch axis.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub d: usize,
    pub heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl SelfAttention {
    pub fn new(name: &str, d: usize, heads: usize) -> Self {
        assert!(heads > 0 && d % heads == 0, "{name}: d {d} not divisible by heads {heads}");
        Self {
            d,
            heads,
            q: Linear::new(format!("{name}.q"), d, d),
            k: Linear::new(format!("{name}.k"), d, d),
            v: Linear::new(format!("{name}.v"), d, d),
            o: Linear::new(format!("{name}.o"), d, d),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.q.register(store, rng)?;
        self.k.register(store, rng)?;
        self.v.register(store, rng)?;
        self.o.register(store, rng)
    }

    pub fn apply(&self, p: &ParamBinder, qk: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (b, t) = (qk.shape()[0], qk.shape()[1]);
        let dh = self.d / self.heads;
        let split = |x: Tensor| -> Result<Tensor> {
            x.reshape(&[b, t, self.heads, dh])?.permute(&[0, 2, 1, 3])
        };
        let q = split(self.q.apply(p, qk)?)?;
        let k = split(self.k.apply(p, qk)?)?;
        let vv = split(self.v.apply(p, v)?)?;
        let scores = q.matmul(&k.transpose_last2()?)?.scale(1.0 / (dh as f64).sqrt());
        let ctx = scores.softmax(3)?.matmul(&vv)?;
        let merged = ctx.permute(&[0, 2, 1, 3])?.reshape(&[b, t, self.d])?;
        self.o.apply(p, &merged)
    }
}
