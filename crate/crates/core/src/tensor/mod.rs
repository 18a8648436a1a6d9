//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of operations owned by one training sample; tensors
//! are cheap handles into it. Everything is f64 and row-major. There is no
//! broadcasting beyond two explicit forms: elementwise ops accept a right
//! operand whose shape is a suffix of the left's, and matmul accepts a
//! shared rank-2 right operand under leading batch dimensions. Anything else
//! requires an explicit reshape/repeat, which keeps every gradient rule
//! auditable.

mod backward;
mod checkpoint;
pub mod gradcheck;
pub(crate) mod kernels;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use params::{Param, ParamBinder, ParamStore};

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::rc::Rc;

/// Clamp for `inverse_sigmoid` inputs.
pub const INVERSE_SIGMOID_EPS: f64 = 1e-6;
/// Variance floor in `layer_norm`.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Sinusoidal embedding temperature.
pub const POS_EMBED_TEMPERATURE: f64 = 10_000.0;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Matmul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    InverseSigmoid(usize),
    Softplus(usize),
    PowConst(usize, f64),
    Abs(usize),
    Softmax(usize, usize),
    LogSoftmax(usize, usize),
    LayerNorm(usize),
    EmbeddingLookup(usize, Rc<Vec<usize>>),
    Concat(Rc<Vec<usize>>, usize),
    Slice { input: usize, axis: usize, start: usize },
    Reshape(usize),
    Permute(usize, Rc<Vec<usize>>),
    Repeat { input: usize, axis: usize },
    SumAll(usize),
    SumAxis(usize, usize),
    Conv2d { input: usize, weight: usize, bias: Option<usize>, stride: usize, pad: usize },
    BilinearSample { map: usize, points: usize },
    PosEmbed2d(usize),
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub op: Op,
    pub requires_grad: bool,
    /// Persistent gradient buffer; populated for leaves by `backward`.
    pub grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub(crate) struct GraphInner {
    pub nodes: Vec<Node>,
}

/// Recorded computation tape. Single-writer: one graph per sample, never
/// shared across threads.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

/// Handle to one node of a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    graph: Graph,
    id: usize,
    shape: Vec<usize>,
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        let mut g = self.inner.borrow_mut();
        let id = g.nodes.len();
        g.nodes.push(Node { shape: shape.clone(), data, op, requires_grad, grad: None });
        Tensor { graph: self.clone(), id, shape }
    }

    /// Trainable leaf; `backward` accumulates into its grad buffer.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(Error::contract(format!(
                "leaf: shape {:?} wants {} elements, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, true))
    }

    /// Non-trainable input.
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(Error::contract(format!(
                "constant: shape {:?} wants {} elements, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.push(vec![], vec![v], Op::Leaf, false)
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        self.push(shape.to_vec(), vec![0.0; numel_of(shape)], Op::Leaf, false)
    }

    /// Clear persistent leaf gradients.
    pub fn zero_grads(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.shape)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Vec<f64> {
        self.graph.inner.borrow().nodes[self.id].data.clone()
    }

    /// Apply `f` to the node's data without cloning it out.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.graph.inner.borrow().nodes[self.id].data)
    }

    pub fn item(&self) -> f64 {
        let g = self.graph.inner.borrow();
        let d = &g.nodes[self.id].data;
        assert_eq!(d.len(), 1, "item() on non-scalar tensor of shape {:?}", self.shape);
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.graph.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    fn unary(&self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let rg = self.requires_grad();
        self.graph.push(shape, data, op, rg)
    }

    fn check_same_graph(&self, other: &Tensor) {
        assert!(
            self.graph.same_graph(&other.graph),
            "tensors belong to different graphs"
        );
    }

    // ---- elementwise -----------------------------------------------------

    fn zip_suffix(
        &self,
        other: &Tensor,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<f64>, bool)> {
        self.check_same_graph(other);
        let (sa, sb) = (&self.shape, &other.shape);
        let suffix_ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == sb[..];
        if !suffix_ok {
            return Err(Error::Shape { op: name, lhs: sa.clone(), rhs: sb.clone() });
        }
        let g = self.graph.inner.borrow();
        let a = &g.nodes[self.id].data;
        let b = &g.nodes[other.id].data;
        let nb = b.len().max(1);
        let out: Vec<f64> = a.iter().enumerate().map(|(i, &x)| f(x, b[i % nb])).collect();
        let rg = g.nodes[self.id].requires_grad || g.nodes[other.id].requires_grad;
        Ok((out, rg))
    }

    /// Elementwise sum. `other` may have a shape that is a suffix of
    /// `self`'s; it is then tiled over the leading dimensions.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (out, rg) = self.zip_suffix(other, "add", |x, y| x + y)?;
        Ok(self.graph.push(self.shape.clone(), out, Op::Add(self.id, other.id), rg))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (out, rg) = self.zip_suffix(other, "sub", |x, y| x - y)?;
        Ok(self.graph.push(self.shape.clone(), out, Op::Sub(self.id, other.id), rg))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (out, rg) = self.zip_suffix(other, "mul", |x, y| x * y)?;
        Ok(self.graph.push(self.shape.clone(), out, Op::Mul(self.id, other.id), rg))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.with_data(|d| d.iter().map(|&x| x * c).collect());
        self.unary(Op::Scale(self.id, c), self.shape.clone(), data)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.with_data(|d| d.iter().map(|&x| x + c).collect());
        self.unary(Op::AddScalar(self.id), self.shape.clone(), data)
    }

    pub fn relu(&self) -> Tensor {
        let data = self.with_data(|d| d.iter().map(|&x| x.max(0.0)).collect());
        self.unary(Op::Relu(self.id), self.shape.clone(), data)
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.with_data(|d| d.iter().map(|&x| sigmoid(x)).collect());
        self.unary(Op::Sigmoid(self.id), self.shape.clone(), data)
    }

    /// Logit with inputs clamped to `[EPS, 1-EPS]`.
    pub fn inverse_sigmoid(&self) -> Tensor {
        let data = self.with_data(|d| {
            d.iter()
                .map(|&x| {
                    let xc = x.clamp(INVERSE_SIGMOID_EPS, 1.0 - INVERSE_SIGMOID_EPS);
                    (xc / (1.0 - xc)).ln()
                })
                .collect()
        });
        self.unary(Op::InverseSigmoid(self.id), self.shape.clone(), data)
    }

    pub fn softplus(&self) -> Tensor {
        let data = self.with_data(|d| d.iter().map(|&x| softplus(x)).collect());
        self.unary(Op::Softplus(self.id), self.shape.clone(), data)
    }

    /// `x^k` with constant exponent; intended for non-negative inputs.
    pub fn pow_const(&self, k: f64) -> Tensor {
        let data = self.with_data(|d| d.iter().map(|&x| x.powf(k)).collect());
        self.unary(Op::PowConst(self.id, k), self.shape.clone(), data)
    }

    pub fn abs(&self) -> Tensor {
        let data = self.with_data(|d| d.iter().map(|&x| x.abs()).collect());
        self.unary(Op::Abs(self.id), self.shape.clone(), data)
    }

    // ---- reductions & normalization ---------------------------------------

    pub fn sum_all(&self) -> Tensor {
        let s = self.with_data(|d| d.iter().sum::<f64>());
        self.unary(Op::SumAll(self.id), vec![], vec![s])
    }

    pub fn mean_all(&self) -> Tensor {
        self.sum_all().scale(1.0 / self.numel().max(1) as f64)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::contract(format!(
                "sum_axis: axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let (outer, n, inner) = kernels::axis_split(&self.shape, axis);
        let mut out = vec![0.0; outer * inner];
        self.with_data(|d| {
            for o in 0..outer {
                for i in 0..n {
                    let base = (o * n + i) * inner;
                    let obase = o * inner;
                    for j in 0..inner {
                        out[obase + j] += d[base + j];
                    }
                }
            }
        });
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(self.unary(Op::SumAxis(self.id, axis), shape, out))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = self.shape[axis].max(1);
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    /// Numerically stable softmax along `axis`; each slice sums to one.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.softmax_impl(axis, false)
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        self.softmax_impl(axis, true)
    }

    fn softmax_impl(&self, axis: usize, log: bool) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::contract(format!(
                "softmax: axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let (outer, n, inner) = kernels::axis_split(&self.shape, axis);
        let mut out = vec![0.0; self.numel()];
        self.with_data(|d| {
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| d[(o * n + i) * inner + j];
                    let mut m = f64::NEG_INFINITY;
                    for i in 0..n {
                        m = m.max(at(i));
                    }
                    let mut z = 0.0;
                    for i in 0..n {
                        z += (at(i) - m).exp();
                    }
                    for i in 0..n {
                        let idx = (o * n + i) * inner + j;
                        out[idx] = if log {
                            (at(i) - m) - z.ln()
                        } else {
                            (at(i) - m).exp() / z
                        };
                    }
                }
            }
        });
        let op = if log { Op::LogSoftmax(self.id, axis) } else { Op::Softmax(self.id, axis) };
        Ok(self.unary(op, self.shape.clone(), out))
    }

    /// Normalize the last axis to zero mean / unit variance (no affine).
    pub fn layer_norm(&self) -> Result<Tensor> {
        if self.shape.is_empty() {
            return Err(Error::contract("layer_norm: scalar input"));
        }
        let n = *self.shape.last().unwrap();
        let rows = self.numel() / n;
        let mut out = vec![0.0; self.numel()];
        self.with_data(|d| {
            for r in 0..rows {
                let row = &d[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for (j, &x) in row.iter().enumerate() {
                    out[r * n + j] = (x - mean) * inv;
                }
            }
        });
        Ok(self.unary(Op::LayerNorm(self.id), self.shape.clone(), out))
    }

    // ---- structure --------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.value();
        Ok(self.unary(Op::Reshape(self.id), shape.to_vec(), data))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let ndim = self.shape.len();
        let mut seen = vec![false; ndim];
        if perm.len() != ndim || perm.iter().any(|&p| p >= ndim || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(format!(
                "permute: {perm:?} is not a permutation of 0..{ndim}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let data = self.with_data(|d| kernels::permute_copy(d, &self.shape, perm));
        Ok(self.unary(Op::Permute(self.id, Rc::new(perm.to_vec())), out_shape, data))
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let ndim = self.shape.len();
        if ndim < 2 {
            return Err(Error::contract("transpose_last2: rank < 2"));
        }
        let mut perm: Vec<usize> = (0..ndim).collect();
        perm.swap(ndim - 1, ndim - 2);
        self.permute(&perm)
    }

    /// Tile a size-1 axis to `times`.
    pub fn repeat(&self, axis: usize, times: usize) -> Result<Tensor> {
        if axis >= self.shape.len() || self.shape[axis] != 1 {
            return Err(Error::contract(format!(
                "repeat: axis {axis} of shape {:?} must exist and have size 1",
                self.shape
            )));
        }
        let (outer, _, inner) = kernels::axis_split(&self.shape, axis);
        let mut out = vec![0.0; outer * times * inner];
        self.with_data(|d| {
            for o in 0..outer {
                let src = &d[o * inner..(o + 1) * inner];
                for t in 0..times {
                    let base = (o * times + t) * inner;
                    out[base..base + inner].copy_from_slice(src);
                }
            }
        });
        let mut shape = self.shape.clone();
        shape[axis] = times;
        Ok(self.unary(Op::Repeat { input: self.id, axis }, shape, out))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.shape.len() || start + len > self.shape[axis] {
            return Err(Error::contract(format!(
                "slice: [{start}, {start}+{len}) on axis {axis} of shape {:?}",
                self.shape
            )));
        }
        let (outer, n, inner) = kernels::axis_split(&self.shape, axis);
        let mut out = vec![0.0; outer * len * inner];
        self.with_data(|d| {
            for o in 0..outer {
                let src = (o * n + start) * inner;
                let dst = o * len * inner;
                out[dst..dst + len * inner].copy_from_slice(&d[src..src + len * inner]);
            }
        });
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(self.unary(Op::Slice { input: self.id, axis, start }, shape, out))
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat: empty input list"))?;
        let ndim = first.shape.len();
        if axis >= ndim {
            return Err(Error::contract(format!("concat: axis {axis} out of range")));
        }
        let mut total = 0;
        for p in parts {
            first.check_same_graph(p);
            if p.shape.len() != ndim
                || (0..ndim).any(|d| d != axis && p.shape[d] != first.shape[d])
            {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            total += p.shape[axis];
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let (outer, _, inner) = kernels::axis_split(&shape, axis);
        let mut out = vec![0.0; numel_of(&shape)];
        let mut offset = 0;
        for p in parts {
            let n = p.shape[axis];
            p.with_data(|d| {
                for o in 0..outer {
                    let dst = (o * total + offset) * inner;
                    let src = o * n * inner;
                    out[dst..dst + n * inner].copy_from_slice(&d[src..src + n * inner]);
                }
            });
            offset += n;
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = Rc::new(parts.iter().map(|p| p.id).collect::<Vec<_>>());
        Ok(first.graph.push(shape, out, Op::Concat(ids, axis), rg))
    }

    /// Row lookup into a `[V, d]` table; differentiable w.r.t. the table.
    pub fn embedding_lookup(&self, indices: &[usize]) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::contract(format!(
                "embedding_lookup: table must be rank 2, got {:?}",
                self.shape
            )));
        }
        let (v, d) = (self.shape[0], self.shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::contract(format!(
                "embedding_lookup: index {bad} out of range for table [{v}, {d}]"
            )));
        }
        let mut out = vec![0.0; indices.len() * d];
        self.with_data(|t| {
            for (r, &i) in indices.iter().enumerate() {
                out[r * d..(r + 1) * d].copy_from_slice(&t[i * d..(i + 1) * d]);
            }
        });
        Ok(self.unary(
            Op::EmbeddingLookup(self.id, Rc::new(indices.to_vec())),
            vec![indices.len(), d],
            out,
        ))
    }

    // ---- contractions ------------------------------------------------------

    /// Batched matrix product `[.., p, q] x [.., q, r] -> [.., p, r]`.
    /// The right operand may be rank 2; it is then shared across the batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_graph(other);
        let (sa, sb) = (&self.shape, &other.shape);
        let err = || Error::Shape { op: "matmul", lhs: sa.clone(), rhs: sb.clone() };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (qb, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if q != qb {
            return Err(err());
        }
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(err());
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![0.0; batch * p * r];
        {
            let g = self.graph.inner.borrow();
            let a = &g.nodes[self.id].data;
            let b = &g.nodes[other.id].data;
            for n in 0..batch {
                let bslice = if shared_rhs { &b[..] } else { &b[n * q * r..(n + 1) * q * r] };
                kernels::matmul_acc(
                    &a[n * p * q..(n + 1) * p * q],
                    bslice,
                    &mut out[n * p * r..(n + 1) * p * r],
                    p,
                    q,
                    r,
                );
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.push(p);
        shape.push(r);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(shape, out, Op::Matmul(self.id, other.id), rg))
    }

    /// 2-D convolution over a `[C_in, H, W]` input with `[C_out, C_in, kh, kw]`
    /// weights, zero padding, optional per-channel bias.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        self.check_same_graph(weight);
        let err = || Error::Shape { op: "conv2d", lhs: self.shape.clone(), rhs: weight.shape.clone() };
        if self.shape.len() != 3 || weight.shape.len() != 4 || self.shape[0] != weight.shape[1] {
            return Err(err());
        }
        if stride == 0
            || self.shape[1] + 2 * pad < weight.shape[2]
            || self.shape[2] + 2 * pad < weight.shape[3]
        {
            return Err(err());
        }
        let d = kernels::Conv2dDims {
            c_in: self.shape[0],
            h: self.shape[1],
            w: self.shape[2],
            c_out: weight.shape[0],
            kh: weight.shape[2],
            kw: weight.shape[3],
            stride,
            pad,
            oh: (self.shape[1] + 2 * pad).saturating_sub(weight.shape[2]) / stride + 1,
            ow: (self.shape[2] + 2 * pad).saturating_sub(weight.shape[3]) / stride + 1,
        };
        if let Some(b) = bias {
            self.check_same_graph(b);
            if b.shape != [d.c_out] {
                return Err(Error::Shape {
                    op: "conv2d bias",
                    lhs: vec![d.c_out],
                    rhs: b.shape.clone(),
                });
            }
        }
        let mut out = vec![0.0; d.c_out * d.oh * d.ow];
        {
            let g = self.graph.inner.borrow();
            kernels::conv2d_forward(&g.nodes[self.id].data, &g.nodes[weight.id].data, &d, &mut out);
            if let Some(b) = bias {
                let bd = &g.nodes[b.id].data;
                for co in 0..d.c_out {
                    for v in &mut out[co * d.oh * d.ow..(co + 1) * d.oh * d.ow] {
                        *v += bd[co];
                    }
                }
            }
        }
        let rg = self.requires_grad()
            || weight.requires_grad()
            || bias.map(|b| b.requires_grad()).unwrap_or(false);
        Ok(self.graph.push(
            vec![d.c_out, d.oh, d.ow],
            out,
            Op::Conv2d {
                input: self.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Bilinear read of a `[C, H, W]` map at normalized points `[..., 2]`
    /// (x, y in [0,1], pixel centers at `(i+0.5)/size`); returns `[..., C]`.
    /// Points outside the unit box read zero. Differentiable w.r.t. both the
    /// map values and the point coordinates.
    pub fn bilinear_sample(&self, points: &Tensor) -> Result<Tensor> {
        self.check_same_graph(points);
        if self.shape.len() != 3 || points.shape.last() != Some(&2) {
            return Err(Error::Shape {
                op: "bilinear_sample",
                lhs: self.shape.clone(),
                rhs: points.shape.clone(),
            });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let npts = points.numel() / 2;
        let mut out = vec![0.0; npts * c];
        {
            let g = self.graph.inner.borrow();
            let map = &g.nodes[self.id].data;
            let pts = &g.nodes[points.id].data;
            for p in 0..npts {
                let tap = kernels::bilinear_tap(pts[2 * p], pts[2 * p + 1], w, h);
                if !tap.inside {
                    continue;
                }
                let (wx, wy) = (tap.wx, tap.wy);
                for ch in 0..c {
                    let v00 = kernels::texel(map, ch, h, w, tap.y0, tap.x0);
                    let v01 = kernels::texel(map, ch, h, w, tap.y0, tap.x0 + 1);
                    let v10 = kernels::texel(map, ch, h, w, tap.y0 + 1, tap.x0);
                    let v11 = kernels::texel(map, ch, h, w, tap.y0 + 1, tap.x0 + 1);
                    out[p * c + ch] = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                        + wy * ((1.0 - wx) * v10 + wx * v11);
                }
            }
        }
        let mut shape = points.shape[..points.shape.len() - 1].to_vec();
        shape.push(c);
        let rg = self.requires_grad() || points.requires_grad();
        Ok(self.graph.push(
            shape,
            out,
            Op::BilinearSample { map: self.id, points: points.id },
            rg,
        ))
    }

    /// Sinusoidal embedding of normalized 2-D points: `[..., 2] -> [..., dim]`,
    /// x features in the first half, y in the second, (sin, cos) pairs at
    /// geometric frequencies. `dim` must be divisible by 4.
    pub fn pos_embed_2d(&self, dim: usize) -> Result<Tensor> {
        if self.shape.last() != Some(&2) || dim % 4 != 0 {
            return Err(Error::contract(format!(
                "pos_embed_2d: points {:?} must end in 2 and dim {dim} must be divisible by 4",
                self.shape
            )));
        }
        let npts = self.numel() / 2;
        let half = dim / 2;
        let mut out = vec![0.0; npts * dim];
        self.with_data(|pts| {
            for p in 0..npts {
                for (a, &coord) in pts[2 * p..2 * p + 2].iter().enumerate() {
                    for j in 0..half {
                        let freq = pos_embed_freq(j, half);
                        let v = coord * freq;
                        out[p * dim + a * half + j] = if j % 2 == 0 { v.sin() } else { v.cos() };
                    }
                }
            }
        });
        let mut shape = self.shape[..self.shape.len() - 1].to_vec();
        shape.push(dim);
        Ok(self.unary(Op::PosEmbed2d(self.id), shape, out))
    }
}

/// Numerically stable scalar logistic, shared by the tensor op and the
/// f64-side cost computations.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Angular frequency of embedding slot `j` within a half of width `half`:
/// `2π / T^(2⌊j/2⌋ / half)`.
#[inline]
pub(crate) fn pos_embed_freq(j: usize, half: usize) -> f64 {
    let t = POS_EMBED_TEMPERATURE.powf(2.0 * (j / 2) as f64 / half as f64);
    2.0 * std::f64::consts::PI / t
}
