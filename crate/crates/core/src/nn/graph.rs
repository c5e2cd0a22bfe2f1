//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use std::sync::Arc;

use rustfft::FftDirection;

use super::conv::{conv2d_backward, conv2d_forward};
use super::tensor::Tensor;
use crate::kspace::transform_in_place;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Measured k-space and column mask for a data-consistency node.
#[derive(Debug, Clone)]
pub struct DcTarget {
    frames: usize,
    height: usize,
    width: usize,
    kspace: Vec<C64>,
    weights: Vec<f64>,
}

impl DcTarget {
    /// `kspace` is `(T, H, W)` row-major; `weights` has one entry per column.
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        kspace: Vec<C64>,
        weights: Vec<f64>,
    ) -> Self {
        assert_eq!(kspace.len(), frames * height * width);
        assert_eq!(weights.len(), width);
        DcTarget {
            frames,
            height,
            width,
            kspace,
            weights,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Fraction `lambda / (1 + lambda)` with `lambda = exp(log_lambda)`.
pub(crate) fn dc_blend(log_lambda: f64) -> f64 {
    if log_lambda == f64::NEG_INFINITY {
        0.0
    } else {
        1.0 / (1.0 + (-log_lambda).exp())
    }
}

fn frame_to_complex(item: &[f64], plane: usize) -> Vec<C64> {
    (0..plane)
        .map(|p| C64::new(item[p], item[plane + p]))
        .collect()
}

fn complex_to_frame(buf: &[C64], item: &mut [f64]) {
    let plane = buf.len();
    for (p, v) in buf.iter().enumerate() {
        item[p] = v.re;
        item[plane + p] = v.im;
    }
}

/// Soft data consistency on a `(T, 2, H, W)` tensor: sampled bins become
/// `(F x + lambda y) / (1 + lambda)`, unsampled bins keep `F x`.
pub(crate) fn dc_forward(x: &Tensor, log_lambda: f64, target: &DcTarget) -> Tensor {
    let [t, c, h, w] = x.shape();
    assert_eq!(c, 2, "data consistency needs a complex (2-channel) input");
    assert_eq!((t, h, w), target.dims(), "data consistency target dims");
    let a = dc_blend(log_lambda);
    if a == 0.0 {
        return x.clone();
    }
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    for ti in 0..t {
        let mut buf = frame_to_complex(x.item(ti), plane);
        transform_in_place(&mut buf, h, w, FftDirection::Forward);
        let y = &target.kspace[ti * plane..(ti + 1) * plane];
        for (p, v) in buf.iter_mut().enumerate() {
            let m = target.weights[p % w];
            if m != 0.0 {
                *v = *v * (1.0 - m * a) + y[p] * (m * a);
            }
        }
        transform_in_place(&mut buf, h, w, FftDirection::Inverse);
        complex_to_frame(&buf, out.item_mut(ti));
    }
    out
}

/// Returns `(dL/dx, dL/dlog_lambda)`.
pub(crate) fn dc_backward(
    x: &Tensor,
    log_lambda: f64,
    target: &DcTarget,
    grad: &Tensor,
) -> (Tensor, f64) {
    let [t, _, h, w] = x.shape();
    let a = dc_blend(log_lambda);
    if a == 0.0 {
        return (grad.clone(), 0.0);
    }
    let plane = h * w;
    let mut dx = Tensor::zeros(x.shape());
    let mut dblend = 0.0;
    for ti in 0..t {
        let mut gk = frame_to_complex(grad.item(ti), plane);
        transform_in_place(&mut gk, h, w, FftDirection::Forward);
        let mut k = frame_to_complex(x.item(ti), plane);
        transform_in_place(&mut k, h, w, FftDirection::Forward);
        let y = &target.kspace[ti * plane..(ti + 1) * plane];
        for p in 0..plane {
            let m = target.weights[p % w];
            if m != 0.0 {
                dblend += (gk[p].conj() * (y[p] - k[p]) * m).re;
                gk[p] *= 1.0 - m * a;
            }
        }
        transform_in_place(&mut gk, h, w, FftDirection::Inverse);
        complex_to_frame(&gk, dx.item_mut(ti));
    }
    (dx, dblend * a * (1.0 - a))
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    },
    Add(Var, Var),
    Relu(Var),
    Select {
        x: Var,
        index: usize,
    },
    Stack(Vec<Var>),
    Concat(Vec<Var>),
    AvgPool2(Var),
    Upsample2(Var),
    PixelShuffle {
        x: Var,
        factor: usize,
    },
    DataConsistency {
        x: Var,
        log_lambda: Var,
        target: Arc<DcTarget>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&grad),
        None => *slot = Some(grad),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize) -> Var {
        let value = conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
        );
        let needs = self.needs(x) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        self.push(
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
            },
            needs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    /// Batch item `index` as a `(1, C, H, W)` tensor.
    pub fn select(&mut self, x: Var, index: usize) -> Var {
        let [_, c, h, w] = self.shape(x);
        let value = Tensor::from_vec([1, c, h, w], self.value(x).item(index).to_vec());
        let needs = self.needs(x);
        self.push(value, Op::Select { x, index }, needs)
    }

    /// Concatenate along the batch axis.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let [_, c, h, w] = self.shape(xs[0]);
        let mut data = Vec::new();
        let mut n = 0;
        for &x in xs {
            let s = self.shape(x);
            assert_eq!(&s[1..], &[c, h, w], "stack shapes");
            n += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        self.push(
            Tensor::from_vec([n, c, h, w], data),
            Op::Stack(xs.to_vec()),
            needs,
        )
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let [n, _, h, w] = self.shape(xs[0]);
        let c_total: usize = xs.iter().map(|&x| self.shape(x)[1]).sum();
        let mut value = Tensor::zeros([n, c_total, h, w]);
        for item in 0..n {
            let mut offset = 0;
            for &x in xs {
                let src = self.nodes[x.0].value.item(item);
                value.item_mut(item)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        self.push(value, Op::Concat(xs.to_vec()), needs)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims");
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut value = Tensor::zeros([n, c, ho, wo]);
        let out = value.data_mut();
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = plane * h * w + 2 * oy * w + 2 * ox;
                    out[plane * ho * wo + oy * wo + ox] =
                        0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                }
            }
        }
        let needs = self.needs(x);
        self.push(value, Op::AvgPool2(x), needs)
    }

    /// Nearest-neighbour upsampling by 2.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let (ho, wo) = (2 * h, 2 * w);
        let src = self.value(x).data();
        let mut value = Tensor::zeros([n, c, ho, wo]);
        let out = value.data_mut();
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[plane * ho * wo + oy * wo + ox] =
                        src[plane * h * w + (oy / 2) * w + ox / 2];
                }
            }
        }
        let needs = self.needs(x);
        self.push(value, Op::Upsample2(x), needs)
    }

    /// Sub-pixel rearrangement `(N, C*r*r, H, W) -> (N, C, H*r, W*r)`.
    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Var {
        let [n, cr, h, w] = self.shape(x);
        let r2 = factor * factor;
        assert!(cr % r2 == 0, "pixel_shuffle channel count");
        let c = cr / r2;
        let (ho, wo) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut value = Tensor::zeros([n, c, ho, wo]);
        let out = value.data_mut();
        for item in 0..n {
            for ci in 0..c {
                for i in 0..factor {
                    for j in 0..factor {
                        let sc = ci * r2 + i * factor + j;
                        for y in 0..h {
                            for xx in 0..w {
                                out[((item * c + ci) * ho + y * factor + i) * wo
                                    + xx * factor
                                    + j] = src[((item * cr + sc) * h + y) * w + xx];
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(value, Op::PixelShuffle { x, factor }, needs)
    }

    pub fn data_consistency(&mut self, x: Var, log_lambda: Var, target: Arc<DcTarget>) -> Var {
        let ll = self.value(log_lambda).data()[0];
        let value = dc_forward(self.value(x), ll, &target);
        let needs = self.needs(x) || self.needs(log_lambda);
        self.push(
            value,
            Op::DataConsistency {
                x,
                log_lambda,
                target,
            },
            needs,
        )
    }

    /// Backpropagate the given output gradients through the tape.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.shape(v), "seed gradient shape");
            accumulate(&mut grads[v.0], g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    x,
                    weight,
                    bias,
                    stride,
                } => {
                    let cg = conv2d_backward(
                        self.value(*x),
                        self.value(*weight),
                        *stride,
                        &g,
                        self.needs(*x),
                        self.needs(*weight),
                        bias.is_some_and(|b| self.needs(b)),
                    );
                    if let Some(dx) = cg.dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                    if let Some(dw) = cg.dw {
                        accumulate(&mut grads[weight.0], dw);
                    }
                    if let (Some(db), Some(b)) = (cg.db, bias) {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Relu(a) => {
                    let mut g = g;
                    for (gv, &out) in g.data_mut().iter_mut().zip(node.value.data()) {
                        if out <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::Select { x, index } => {
                    let mut full = Tensor::zeros(self.shape(*x));
                    full.item_mut(*index).copy_from_slice(g.data());
                    accumulate(&mut grads[x.0], full);
                }
                Op::Stack(xs) => {
                    let mut offset = 0;
                    for x in xs {
                        let shape = self.shape(*x);
                        let len: usize = shape.iter().product();
                        if self.needs(*x) {
                            let part =
                                Tensor::from_vec(shape, g.data()[offset..offset + len].to_vec());
                            accumulate(&mut grads[x.0], part);
                        }
                        offset += len;
                    }
                }
                Op::Concat(xs) => {
                    let n = g.shape()[0];
                    let mut offset = 0;
                    for x in xs {
                        let shape = self.shape(*x);
                        let item_len = shape[1] * shape[2] * shape[3];
                        if self.needs(*x) {
                            let mut part = Tensor::zeros(shape);
                            for item in 0..n {
                                part.item_mut(item)
                                    .copy_from_slice(&g.item(item)[offset..offset + item_len]);
                            }
                            accumulate(&mut grads[x.0], part);
                        }
                        offset += item_len;
                    }
                }
                Op::AvgPool2(x) => {
                    let [n, c, h, w] = self.shape(*x);
                    let (ho, wo) = (h / 2, w / 2);
                    let mut dx = Tensor::zeros([n, c, h, w]);
                    let out = dx.data_mut();
                    for plane in 0..n * c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = 0.25 * g.data()[plane * ho * wo + oy * wo + ox];
                                let base = plane * h * w + 2 * oy * w + 2 * ox;
                                out[base] += gv;
                                out[base + 1] += gv;
                                out[base + w] += gv;
                                out[base + w + 1] += gv;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Upsample2(x) => {
                    let [n, c, h, w] = self.shape(*x);
                    let (ho, wo) = (2 * h, 2 * w);
                    let mut dx = Tensor::zeros([n, c, h, w]);
                    let out = dx.data_mut();
                    for plane in 0..n * c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                out[plane * h * w + (oy / 2) * w + ox / 2] +=
                                    g.data()[plane * ho * wo + oy * wo + ox];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::PixelShuffle { x, factor } => {
                    let factor = *factor;
                    let [n, cr, h, w] = self.shape(*x);
                    let r2 = factor * factor;
                    let c = cr / r2;
                    let (ho, wo) = (h * factor, w * factor);
                    let mut dx = Tensor::zeros([n, cr, h, w]);
                    let out = dx.data_mut();
                    for item in 0..n {
                        for ci in 0..c {
                            for i in 0..factor {
                                for j in 0..factor {
                                    let sc = ci * r2 + i * factor + j;
                                    for y in 0..h {
                                        for xx in 0..w {
                                            out[((item * cr + sc) * h + y) * w + xx] = g.data()
                                                [((item * c + ci) * ho + y * factor + i) * wo
                                                    + xx * factor
                                                    + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::DataConsistency {
                    x,
                    log_lambda,
                    target,
                } => {
                    let ll = self.value(*log_lambda).data()[0];
                    let (dx, dll) = dc_backward(self.value(*x), ll, target, &g);
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.needs(*log_lambda) {
                        accumulate(&mut grads[log_lambda.0], Tensor::scalar(dll));
                    }
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// Central finite-difference check of d<out, probe>/d(leaf).
    fn check_leaf_gradient(build: impl Fn(&mut Graph, Tensor) -> Var, leaf: Tensor, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.leaf(leaf.clone());
        let out = build(&mut g, leaf.clone());
        let _ = x;
        let probe = random(g.shape(out), &mut rng);
        let grads = g.backward(vec![(out, probe.clone())]);
        let analytic = grads
            .get(Var(0))
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()));
        let eps = 1e-6;
        for i in 0..leaf.len() {
            let eval = |delta: f64| {
                let mut l = leaf.clone();
                l.data_mut()[i] += delta;
                let mut g = Graph::new();
                g.leaf(l.clone());
                let out = build(&mut g, l);
                dot(g.value(out), &probe)
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                "entry {i}: analytic {a} numeric {numeric}"
            );
        }
    }

    #[test]
    fn pool_upsample_shuffle_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random([2, 3, 4, 6], &mut rng);
        check_leaf_gradient(|g, _| g.avg_pool2(Var(0)), x.clone(), 1);
        check_leaf_gradient(|g, _| g.upsample2(Var(0)), x.clone(), 2);
        let x4 = random([1, 8, 3, 2], &mut rng);
        check_leaf_gradient(|g, _| g.pixel_shuffle(Var(0), 2), x4, 3);
    }

    #[test]
    fn select_stack_concat_relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random([3, 2, 3, 3], &mut rng);
        check_leaf_gradient(
            |g, _| {
                let a = g.select(Var(0), 2);
                let b = g.select(Var(0), 0);
                let s = g.stack(&[a, b, a]);
                let r = g.relu(s);
                let c = g.concat(&[r, s]);
                g.add(c, c)
            },
            x,
            5,
        );
    }

    #[test]
    fn conv_gradient_through_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random([2, 2, 5, 4], &mut rng);
        let w = random([3, 2, 3, 3], &mut rng);
        check_leaf_gradient(
            move |g, _| {
                let wv = g.constant(w.clone());
                g.conv2d(Var(0), wv, None, 2)
            },
            x,
            7,
        );
    }

    fn random_target(t: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Arc<DcTarget> {
        let weights: Vec<f64> = (0..w)
            .map(|j| if j % 3 == 0 || j == w / 2 { 1.0 } else { 0.0 })
            .collect();
        let k: Vec<C64> = (0..t * h * w)
            .map(|p| {
                if weights[p % w] > 0.0 {
                    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        Arc::new(DcTarget::new(t, h, w, k, weights))
    }

    #[test]
    fn dc_gradient_in_image_and_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let target = random_target(2, 4, 6, &mut rng);
        let x = random([2, 2, 4, 6], &mut rng);
        let ll = Tensor::scalar(-0.7);
        let t1 = target.clone();
        let llc = ll.clone();
        check_leaf_gradient(
            move |g, _| {
                let l = g.constant(llc.clone());
                g.data_consistency(Var(0), l, t1.clone())
            },
            x.clone(),
            9,
        );
        check_leaf_gradient(
            move |g, _| {
                let xv = g.constant(x.clone());
                g.data_consistency(xv, Var(0), target.clone())
            },
            ll,
            10,
        );
    }

    #[test]
    fn dc_zero_lambda_is_identity_and_large_lambda_replaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target = random_target(1, 4, 6, &mut rng);
        let x = random([1, 2, 4, 6], &mut rng);
        assert_eq!(dc_forward(&x, f64::NEG_INFINITY, &target), x);

        let out = dc_forward(&x, 30.0, &target);
        let mut k = frame_to_complex(out.item(0), 24);
        transform_in_place(&mut k, 4, 6, FftDirection::Forward);
        for (p, v) in k.iter().enumerate() {
            if target.weights[p % 6] > 0.0 {
                assert!((v - target.kspace[p]).norm() < 1e-6);
            }
        }
    }
}
