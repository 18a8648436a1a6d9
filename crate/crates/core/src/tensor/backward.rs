//! Reverse-mode sweep over the tape.
//!
//! Scratch gradients live in a `Vec<Option<Vec<f64>>>` indexed by node id and
//! are freed (`take`n) as soon as a node is processed, so peak memory is the
//! live frontier rather than the whole tape. Leaves accumulate into their
//! persistent `grad` buffer, which survives across multiple backward calls
//! until `Graph::zero_grads`.

use super::kernels;
use super::{sigmoid, Node, Op, Tensor, INVERSE_SIGMOID_EPS, LAYER_NORM_EPS};

impl Tensor {
    /// Backpropagate from a scalar output with seed 1.
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() requires a scalar; use backward_seeded");
        self.backward_seeded(&[1.0]);
    }

    /// Backpropagate `d(sum(seed * self))/d(leaves)` for an arbitrary seed of
    /// the same length as `self`.
    pub fn backward_seeded(&self, seed: &[f64]) {
        assert_eq!(seed.len(), self.numel(), "seed length must match tensor size");
        let mut inner = self.graph().inner.borrow_mut();
        run_backward(&mut inner.nodes, self.id(), seed);
    }
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

fn run_backward(nodes: &mut [Node], root: usize, seed: &[f64]) {
    let mut scratch: Vec<Option<Vec<f64>>> = vec![None; root + 1];
    scratch[root] = Some(seed.to_vec());

    for i in (0..=root).rev() {
        let Some(g) = scratch[i].take() else { continue };
        if !nodes[i].requires_grad {
            continue;
        }
        let op = nodes[i].op.clone();
        match op {
            Op::Leaf => {
                let node = &mut nodes[i];
                let buf = node.grad.get_or_insert_with(|| vec![0.0; g.len()]);
                for (d, s) in buf.iter_mut().zip(&g) {
                    *d += s;
                }
            }
            Op::Add(a, b) => {
                if nodes[a].requires_grad {
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for (d, s) in da.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                if nodes[b].requires_grad {
                    let nb = nodes[b].data.len();
                    let db = acc(&mut scratch[b], nb);
                    for (j, s) in g.iter().enumerate() {
                        db[j % nb] += s;
                    }
                }
            }
            Op::Sub(a, b) => {
                if nodes[a].requires_grad {
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for (d, s) in da.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                if nodes[b].requires_grad {
                    let nb = nodes[b].data.len();
                    let db = acc(&mut scratch[b], nb);
                    for (j, s) in g.iter().enumerate() {
                        db[j % nb] -= s;
                    }
                }
            }
            Op::Mul(a, b) => {
                let nb = nodes[b].data.len();
                if nodes[a].requires_grad {
                    let (bd, da) = (&nodes[b].data, acc(&mut scratch[a], nodes[a].data.len()));
                    for (j, s) in g.iter().enumerate() {
                        da[j] += s * bd[j % nb];
                    }
                }
                if nodes[b].requires_grad {
                    let (ad, db) = (&nodes[a].data, acc(&mut scratch[b], nb));
                    for (j, s) in g.iter().enumerate() {
                        db[j % nb] += s * ad[j];
                    }
                }
            }
            Op::Scale(a, c) => {
                if nodes[a].requires_grad {
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for (d, s) in da.iter_mut().zip(&g) {
                        *d += s * c;
                    }
                }
            }
            Op::AddScalar(a) => {
                if nodes[a].requires_grad {
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for (d, s) in da.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let sa = &nodes[a].shape;
                let sb = &nodes[b].shape;
                let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let r = sb[sb.len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                let shared_rhs = sb.len() == 2;
                if nodes[a].requires_grad {
                    let bd = &nodes[b].data;
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for n in 0..batch {
                        let bs = if shared_rhs { &bd[..] } else { &bd[n * q * r..(n + 1) * q * r] };
                        kernels::matmul_grad_a(
                            &g[n * p * r..(n + 1) * p * r],
                            bs,
                            &mut da[n * p * q..(n + 1) * p * q],
                            p,
                            q,
                            r,
                        );
                    }
                }
                if nodes[b].requires_grad {
                    let ad = &nodes[a].data;
                    let db = acc(&mut scratch[b], nodes[b].data.len());
                    for n in 0..batch {
                        let dbs = if shared_rhs {
                            &mut db[..]
                        } else {
                            &mut db[n * q * r..(n + 1) * q * r]
                        };
                        kernels::matmul_grad_b(
                            &ad[n * p * q..(n + 1) * p * q],
                            &g[n * p * r..(n + 1) * p * r],
                            dbs,
                            p,
                            q,
                            r,
                        );
                    }
                }
            }
            Op::Relu(a) => {
                if nodes[a].requires_grad {
                    let xs = &nodes[a].data;
                    let da = acc(&mut scratch[a], xs.len());
                    for (j, s) in g.iter().enumerate() {
                        if xs[j] > 0.0 {
                            da[j] += s;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if nodes[a].requires_grad {
                    let ys = &nodes[i].data;
                    let da = acc(&mut scratch[a], ys.len());
                    for (j, s) in g.iter().enumerate() {
                        da[j] += s * ys[j] * (1.0 - ys[j]);
                    }
                }
            }
            Op::InverseSigmoid(a) => {
                if nodes[a].requires_grad {
                    let xs = &nodes[a].data;
                    let da = acc(&mut scratch[a], xs.len());
                    for (j, s) in g.iter().enumerate() {
                        let x = xs[j];
                        // Zero gradient in the clamped region.
                        if x > INVERSE_SIGMOID_EPS && x < 1.0 - INVERSE_SIGMOID_EPS {
                            da[j] += s / (x * (1.0 - x));
                        }
                    }
                }
            }
            Op::Softplus(a) => {
                if nodes[a].requires_grad {
                    let xs = &nodes[a].data;
                    let da = acc(&mut scratch[a], xs.len());
                    for (j, s) in g.iter().enumerate() {
                        da[j] += s * sigmoid(xs[j]);
                    }
                }
            }
            Op::PowConst(a, k) => {
                if nodes[a].requires_grad {
                    let xs = &nodes[a].data;
                    let da = acc(&mut scratch[a], xs.len());
                    for (j, s) in g.iter().enumerate() {
                        da[j] += s * k * xs[j].powf(k - 1.0);
                    }
                }
            }
            Op::Abs(a) => {
                if nodes[a].requires_grad {
                    let xs = &nodes[a].data;
                    let da = acc(&mut scratch[a], xs.len());
                    for (j, s) in g.iter().enumerate() {
                        da[j] += s * if xs[j] > 0.0 { 1.0 } else if xs[j] < 0.0 { -1.0 } else { 0.0 };
                    }
                }
            }
            Op::Softmax(a, axis) => {
                if nodes[a].requires_grad {
                    let ys = &nodes[i].data;
                    let (outer, n, inner) = kernels::axis_split(&nodes[i].shape, axis);
                    let da = acc(&mut scratch[a], ys.len());
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + j;
                            let mut dot = 0.0;
                            for k in 0..n {
                                dot += g[idx(k)] * ys[idx(k)];
                            }
                            for k in 0..n {
                                let t = idx(k);
                                da[t] += ys[t] * (g[t] - dot);
                            }
                        }
                    }
                }
            }
            Op::LogSoftmax(a, axis) => {
                if nodes[a].requires_grad {
                    let ys = &nodes[i].data;
                    let (outer, n, inner) = kernels::axis_split(&nodes[i].shape, axis);
                    let da = acc(&mut scratch[a], ys.len());
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + j;
                            let mut gsum = 0.0;
                            for k in 0..n {
                                gsum += g[idx(k)];
                            }
                            for k in 0..n {
                                let t = idx(k);
                                da[t] += g[t] - ys[t].exp() * gsum;
                            }
                        }
                    }
                }
            }
            Op::LayerNorm(a) => {
                if nodes[a].requires_grad {
                    let xs = &nodes[a].data;
                    let ys = &nodes[i].data;
                    let n = *nodes[i].shape.last().unwrap();
                    let rows = xs.len() / n;
                    let da = acc(&mut scratch[a], xs.len());
                    for r in 0..rows {
                        let x = &xs[r * n..(r + 1) * n];
                        let y = &ys[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let mean = x.iter().sum::<f64>() / n as f64;
                        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let gmean = gr.iter().sum::<f64>() / n as f64;
                        let gydot = gr.iter().zip(y).map(|(&gv, &yv)| gv * yv).sum::<f64>() / n as f64;
                        for j in 0..n {
                            da[r * n + j] += inv * (gr[j] - gmean - y[j] * gydot);
                        }
                    }
                }
            }
            Op::EmbeddingLookup(a, indices) => {
                if nodes[a].requires_grad {
                    let d = nodes[a].shape[1];
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for (r, &row) in indices.iter().enumerate() {
                        for j in 0..d {
                            da[row * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Concat(ids, axis) => {
                let total = nodes[i].shape[axis];
                let (outer, _, inner) = kernels::axis_split(&nodes[i].shape, axis);
                let mut offset = 0;
                for &part in ids.iter() {
                    let n = nodes[part].shape[axis];
                    if nodes[part].requires_grad {
                        let dp = acc(&mut scratch[part], nodes[part].data.len());
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * n * inner;
                            for j in 0..n * inner {
                                dp[dst + j] += g[src + j];
                            }
                        }
                    }
                    offset += n;
                }
            }
            Op::Slice { input, axis, start } => {
                if nodes[input].requires_grad {
                    let full = nodes[input].shape[axis];
                    let len = nodes[i].shape[axis];
                    let (outer, _, inner) = kernels::axis_split(&nodes[input].shape, axis);
                    let da = acc(&mut scratch[input], nodes[input].data.len());
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        for j in 0..len * inner {
                            da[dst + j] += g[src + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if nodes[a].requires_grad {
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for (d, s) in da.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
            }
            Op::Permute(a, perm) => {
                if nodes[a].requires_grad {
                    // Output axis i came from input axis perm[i], so the
                    // gradient flows back through the inverse permutation.
                    let mut inv = vec![0usize; perm.len()];
                    for (j, &p) in perm.iter().enumerate() {
                        inv[p] = j;
                    }
                    let back = kernels::permute_copy(&g, &nodes[i].shape, &inv);
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for (d, s) in da.iter_mut().zip(&back) {
                        *d += s;
                    }
                }
            }
            Op::Repeat { input, axis } => {
                if nodes[input].requires_grad {
                    let times = nodes[i].shape[axis];
                    let (outer, _, inner) = kernels::axis_split(&nodes[input].shape, axis);
                    let da = acc(&mut scratch[input], nodes[input].data.len());
                    for o in 0..outer {
                        for t in 0..times {
                            let src = (o * times + t) * inner;
                            for j in 0..inner {
                                da[o * inner + j] += g[src + j];
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if nodes[a].requires_grad {
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::SumAxis(a, axis) => {
                if nodes[a].requires_grad {
                    let (outer, n, inner) = kernels::axis_split(&nodes[a].shape, axis);
                    let da = acc(&mut scratch[a], nodes[a].data.len());
                    for o in 0..outer {
                        for k in 0..n {
                            let dst = (o * n + k) * inner;
                            let src = o * inner;
                            for j in 0..inner {
                                da[dst + j] += g[src + j];
                            }
                        }
                    }
                }
            }
            Op::Conv2d { input, weight, bias, stride, pad } => {
                let d = kernels::Conv2dDims {
                    c_in: nodes[input].shape[0],
                    h: nodes[input].shape[1],
                    w: nodes[input].shape[2],
                    c_out: nodes[weight].shape[0],
                    kh: nodes[weight].shape[2],
                    kw: nodes[weight].shape[3],
                    stride,
                    pad,
                    oh: nodes[i].shape[1],
                    ow: nodes[i].shape[2],
                };
                if nodes[input].requires_grad {
                    let wd = &nodes[weight].data;
                    let da = acc(&mut scratch[input], nodes[input].data.len());
                    kernels::conv2d_grad_input(&g, wd, &d, da);
                }
                if nodes[weight].requires_grad {
                    let xd = &nodes[input].data;
                    let dw = acc(&mut scratch[weight], nodes[weight].data.len());
                    kernels::conv2d_grad_weight(xd, &g, &d, dw);
                }
                if let Some(b) = bias {
                    if nodes[b].requires_grad {
                        let db = acc(&mut scratch[b], nodes[b].data.len());
                        for co in 0..d.c_out {
                            db[co] += g[co * d.oh * d.ow..(co + 1) * d.oh * d.ow].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::BilinearSample { map, points } => {
                let (c, h, w) = (nodes[map].shape[0], nodes[map].shape[1], nodes[map].shape[2]);
                let npts = nodes[points].data.len() / 2;
                let map_rg = nodes[map].requires_grad;
                let pts_rg = nodes[points].requires_grad;
                for p in 0..npts {
                    let (px, py) = (nodes[points].data[2 * p], nodes[points].data[2 * p + 1]);
                    let tap = kernels::bilinear_tap(px, py, w, h);
                    if !tap.inside {
                        continue; // hard zero outside the unit box: no gradient
                    }
                    let (wx, wy) = (tap.wx, tap.wy);
                    if map_rg {
                        let dm = acc(&mut scratch[map], c * h * w);
                        for ch in 0..c {
                            let gv = g[p * c + ch];
                            if gv == 0.0 {
                                continue;
                            }
                            let mut put = |y: isize, x: isize, wgt: f64| {
                                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                    dm[(ch * h + y as usize) * w + x as usize] += gv * wgt;
                                }
                            };
                            put(tap.y0, tap.x0, (1.0 - wy) * (1.0 - wx));
                            put(tap.y0, tap.x0 + 1, (1.0 - wy) * wx);
                            put(tap.y0 + 1, tap.x0, wy * (1.0 - wx));
                            put(tap.y0 + 1, tap.x0 + 1, wy * wx);
                        }
                    }
                    if pts_rg {
                        let md = &nodes[map].data;
                        let (mut dx, mut dy) = (0.0, 0.0);
                        for ch in 0..c {
                            let gv = g[p * c + ch];
                            if gv == 0.0 {
                                continue;
                            }
                            let v00 = kernels::texel(md, ch, h, w, tap.y0, tap.x0);
                            let v01 = kernels::texel(md, ch, h, w, tap.y0, tap.x0 + 1);
                            let v10 = kernels::texel(md, ch, h, w, tap.y0 + 1, tap.x0);
                            let v11 = kernels::texel(md, ch, h, w, tap.y0 + 1, tap.x0 + 1);
                            dx += gv * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                            dy += gv * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                        }
                        let dp = acc(&mut scratch[points], npts * 2);
                        // d(pixel u)/d(normalized x) = W, likewise for y.
                        dp[2 * p] += dx * w as f64;
                        dp[2 * p + 1] += dy * h as f64;
                    }
                }
            }
            Op::PosEmbed2d(a) => {
                if nodes[a].requires_grad {
                    let dim = *nodes[i].shape.last().unwrap();
                    let half = dim / 2;
                    let npts = nodes[a].data.len() / 2;
                    let pts = &nodes[a].data;
                    let da = acc(&mut scratch[a], npts * 2);
                    for p in 0..npts {
                        for axis in 0..2 {
                            let coord = pts[2 * p + axis];
                            let mut d = 0.0;
                            for j in 0..half {
                                let freq = super::pos_embed_freq(j, half);
                                let v = coord * freq;
                                let slot = g[p * dim + axis * half + j];
                                d += slot * freq * if j % 2 == 0 { v.cos() } else { -v.sin() };
                            }
                            da[2 * p + axis] += d;
                        }
                    }
                }
            }
        }
    }
}
