//! Convolutional trunk producing the feature pyramid.
//!
//! Two stride-2 3×3 conv+ReLU blocks bring the image to stride 4; each
//! further level adds one more stride-2 block. Every level is then projected
//! to `d_model` channels with a 1×1 conv, giving L maps at strides 4·2^l.

use crate::error::{Error, Result};
use crate::tensor::{ParamBinder, ParamStore, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// L feature maps `[d_model, H_l, W_l]` with strictly halving resolution.
pub struct FeaturePyramid {
    pub maps: Vec<Tensor>,
}

impl FeaturePyramid {
    /// `(W_l, H_l)` per level.
    pub fn level_sizes(&self) -> Vec<(usize, usize)> {
        self.maps.iter().map(|m| (m.shape()[2], m.shape()[1])).collect()
    }
}

#[derive(Debug, Clone)]
struct ConvSpec {
    name: String,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvSpec {
    fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let fan_in = self.c_in * self.k * self.k;
        let fan_out = self.c_out * self.k * self.k;
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..self.c_out * self.c_in * self.k * self.k)
            .map(|_| rng.random_range(-a..=a))
            .collect();
        store.insert(&format!("{}.w", self.name), &[self.c_out, self.c_in, self.k, self.k], w)?;
        store.insert(&format!("{}.b", self.name), &[self.c_out], vec![0.0; self.c_out])
    }

    fn apply(&self, p: &ParamBinder, x: &Tensor) -> Result<Tensor> {
        let w = p.get(&format!("{}.w", self.name))?;
        let b = p.get(&format!("{}.b", self.name))?;
        x.conv2d(&w, Some(&b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    levels: usize,
    stem: Vec<ConvSpec>,
    downs: Vec<ConvSpec>,
    projs: Vec<ConvSpec>,
}

impl Backbone {
    pub fn new(d_model: usize, trunk: usize, levels: usize) -> Self {
        assert!(levels >= 1, "backbone needs at least one level");
        assert!(trunk >= 2, "trunk width must be at least 2");
        let stem = vec![
            ConvSpec { name: "backbone.stem0".into(), c_in: 3, c_out: trunk / 2, k: 3, stride: 2, pad: 1 },
            ConvSpec { name: "backbone.stem1".into(), c_in: trunk / 2, c_out: trunk, k: 3, stride: 2, pad: 1 },
        ];
        let downs = (1..levels)
            .map(|l| ConvSpec {
                name: format!("backbone.down{l}"),
                c_in: trunk,
                c_out: trunk,
                k: 3,
                stride: 2,
                pad: 1,
            })
            .collect();
        let projs = (0..levels)
            .map(|l| ConvSpec {
                name: format!("backbone.proj{l}"),
                c_in: trunk,
                c_out: d_model,
                k: 1,
                stride: 1,
                pad: 0,
            })
            .collect();
        Self { levels, stem, downs, projs }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        for c in self.stem.iter().chain(&self.downs).chain(&self.projs) {
            c.register(store, rng)?;
        }
        Ok(())
    }

    /// `image [3, H, W]` (pixel values in [0,1]) → L projected maps.
    pub fn forward(&self, p: &ParamBinder, image: &Tensor) -> Result<FeaturePyramid> {
        let s = image.shape().to_vec();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::contract(format!("backbone wants an image [3, H, W], got {s:?}")));
        }
        let div = 1 << (self.levels + 1);
        if s[1] % div != 0 || s[2] % div != 0 {
            return Err(Error::contract(format!(
                "backbone with {} levels needs H, W divisible by {div}; image is {}x{}",
                self.levels, s[1], s[2]
            )));
        }
        let mut trunk = image.clone();
        for c in &self.stem {
            trunk = c.apply(p, &trunk)?.relu();
        }
        let mut maps = Vec::with_capacity(self.levels);
        maps.push(self.projs[0].apply(p, &trunk)?);
        for (l, down) in self.downs.iter().enumerate() {
            trunk = down.apply(p, &trunk)?.relu();
            maps.push(self.projs[l + 1].apply(p, &trunk)?);
        }
        Ok(FeaturePyramid { maps })
    }
}
