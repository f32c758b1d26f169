//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op as it executes. Node ids are handed out in
//! execution order, so the node vector is already topologically sorted and the
//! backward pass is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::{col2im, gemm, im2col, ConvGeometry, Layout, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        geom: ConvGeometry,
        /// Unrolled patches per image, kept only when the kernel needs a gradient.
        cols: Vec<f64>,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    Relu {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
    },
    LogSoftmax {
        x: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Reshape {
        x: NodeId,
    },
    Sum {
        x: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds a constant leaf (no gradient).
    pub fn input(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward root with respect to leaf `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.nodes[id.0].value.take_grad()
    }

    /// Clears all gradients so `backward` may run again.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        debug_assert!(
            value.is_finite() || inputs.iter().any(|i| !self.nodes[i.0].value.is_finite()),
            "non-finite output from finite inputs in {op:?}"
        );
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// `[m×k]·[k×n] → [m×n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.val(a).dims2()?;
        let (k2, n) = self.val(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: [{m}x{k}]·[{k2}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            self.val(a).data(),
            Layout::Normal,
            self.val(b).data(),
            Layout::Normal,
            0.0,
            &mut out,
        );
        let value = Tensor::new([m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// Cross-correlation of `x: [N×C×H×W]` with `w: [F×C×kh×kw]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let (n, c, h, wd) = self.val(x).dims4()?;
        let (f, c2, kh, kw) = self.val(w).dims4()?;
        if c != c2 {
            return Err(Error::dim(format!(
                "conv2d channel mismatch: input has {c}, kernel expects {c2}"
            )));
        }
        let geom = ConvGeometry::new((c, h, wd), (kh, kw), stride, padding)?;
        let (p, l) = (geom.out_h * geom.out_w, geom.patch_len());
        let keep_cols = self.needs(w);
        let mut cols = vec![0.0; if keep_cols { n * p * l } else { p * l }];
        let mut out = vec![0.0; n * f * p];
        let image_len = c * h * wd;
        for i in 0..n {
            let img = &self.val(x).data()[i * image_len..(i + 1) * image_len];
            let cols_i = if keep_cols {
                &mut cols[i * p * l..(i + 1) * p * l]
            } else {
                &mut cols[..]
            };
            im2col(img, &geom, cols_i);
            gemm(
                f,
                l,
                p,
                1.0,
                self.val(w).data(),
                Layout::Normal,
                cols_i,
                Layout::Transposed,
                0.0,
                &mut out[i * f * p..(i + 1) * f * p],
            );
        }
        if !keep_cols {
            cols = Vec::new();
        }
        let value = Tensor::new([n, f, geom.out_h, geom.out_w], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, geom, cols }, &[x, w]))
    }

    /// Adds `bias[j]` along axis 1 (features of `[B×F]` or channels of `[N×C×H×W]`).
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let shape = self.val(x).shape().to_vec();
        let blen = self.val(bias).numel();
        if shape.len() < 2 || shape[1] != blen || self.val(bias).ndim() != 1 {
            return Err(Error::dim(format!(
                "bias of shape {:?} does not match axis 1 of {shape:?}",
                self.val(bias).shape()
            )));
        }
        let inner: usize = shape[2..].iter().product();
        let b = self.val(bias).data();
        let mut out = self.val(x).data().to_vec();
        for (chunk_idx, chunk) in out.chunks_mut(inner).enumerate() {
            let bj = b[chunk_idx % blen];
            chunk.iter_mut().for_each(|v| *v += bj);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::AddBias { x, bias }, &[x, bias]))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.val(a).shape(),
                self.val(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let out = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.val(a).shape(), out)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let out = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.val(a).shape(), out)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out = self.val(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.val(x).shape(), out).expect("shape preserved");
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.val(x).data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(self.val(x).shape(), out).expect("shape preserved");
        self.push(value, Op::Relu { x }, &[x])
    }

    /// Row-wise softmax over the class axis of `[B×C]`.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, c) = self.val(x).dims2()?;
        let mut out = vec![0.0; b * c];
        for (row, dst) in self.val(x).data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(row, dst);
        }
        let value = Tensor::new([b, c], out)?;
        Ok(self.push(value, Op::Softmax { x }, &[x]))
    }

    /// Row-wise log-softmax over the class axis of `[B×C]`.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, c) = self.val(x).dims2()?;
        let mut out = vec![0.0; b * c];
        for (row, dst) in self.val(x).data().chunks(c).zip(out.chunks_mut(c)) {
            log_softmax_row(row, dst);
        }
        let value = Tensor::new([b, c], out)?;
        Ok(self.push(value, Op::LogSoftmax { x }, &[x]))
    }

    /// Mean over the batch of `-log_softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (b, c) = self.val(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::dim(format!(
                "{} labels for a batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut logp = vec![0.0; c];
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for (i, row) in self.val(logits).data().chunks(c).enumerate() {
            log_softmax_row(row, &mut logp);
            total -= logp[labels[i]];
            for (p, lp) in probs[i * c..(i + 1) * c].iter_mut().zip(&logp) {
                *p = lp.exp();
            }
        }
        let value = Tensor::scalar(total / b as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(value, op, &[logits]))
    }

    /// Non-overlapping `size×size` max pooling; trailing rows/columns that do
    /// not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.val(x).dims4()?;
        if size == 0 || size > h || size > w {
            return Err(Error::dim(format!(
                "pool window {size} does not fit {h}x{w}"
            )));
        }
        let (oh, ow) = (h / size, w / size);
        let src = self.val(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = base + (oy * size + dy) * w + ox * size + dx;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    let o = plane * oh * ow + oy * ow + ox;
                    out[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }, &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let value = self.val(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Collapses `[B×...]` into `[B×features]`.
    pub fn flatten_batch(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.val(x).shape();
        if shape.len() == 2 {
            return Ok(x);
        }
        let b = shape[0];
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(x, [b, rest])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.val(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Populates the gradient of `root` with respect to every trainable leaf.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; call reset() first".into(),
            ));
        }
        if self.val(root).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.val(root).shape()
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                self.nodes[id].value.set_grad(g);
                continue;
            }
            for (input, ig) in self.input_grads(id, &g)? {
                accumulate(&mut grads[input.0], ig);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for each input that needs a gradient.
    fn input_grads(&self, id: usize, g: &[f64]) -> Result<Vec<(NodeId, Vec<f64>)>> {
        let node = &self.nodes[id];
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.val(*a).dims2()?;
                let (_, n) = self.val(*b).dims2()?;
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g, Layout::Normal, self.val(*b).data(), Layout::Transposed, 0.0, &mut da);
                    out.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, self.val(*a).data(), Layout::Transposed, g, Layout::Normal, 0.0, &mut db);
                    out.push((*b, db));
                }
            }
            Op::Conv2d { x, w, geom, cols } => {
                let n = self.val(*x).shape()[0];
                let f = self.val(*w).shape()[0];
                let (p, l) = (geom.out_h * geom.out_w, geom.patch_len());
                let image_len = geom.channels * geom.height * geom.width;
                if self.needs(*w) {
                    let mut dw = vec![0.0; f * l];
                    for i in 0..n {
                        gemm(
                            f,
                            p,
                            l,
                            1.0,
                            &g[i * f * p..(i + 1) * f * p],
                            Layout::Normal,
                            &cols[i * p * l..(i + 1) * p * l],
                            Layout::Normal,
                            1.0,
                            &mut dw,
                        );
                    }
                    out.push((*w, dw));
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; n * image_len];
                    let mut dcols = vec![0.0; p * l];
                    for i in 0..n {
                        gemm(
                            p,
                            f,
                            l,
                            1.0,
                            &g[i * f * p..(i + 1) * f * p],
                            Layout::Transposed,
                            self.val(*w).data(),
                            Layout::Normal,
                            0.0,
                            &mut dcols,
                        );
                        col2im(&dcols, geom, &mut dx[i * image_len..(i + 1) * image_len]);
                    }
                    out.push((*x, dx));
                }
            }
            Op::AddBias { x, bias } => {
                if self.needs(*x) {
                    out.push((*x, g.to_vec()));
                }
                if self.needs(*bias) {
                    let shape = self.val(*x).shape();
                    let blen = shape[1];
                    let inner: usize = shape[2..].iter().product();
                    let mut db = vec![0.0; blen];
                    for (chunk_idx, chunk) in g.chunks(inner).enumerate() {
                        db[chunk_idx % blen] += chunk.iter().sum::<f64>();
                    }
                    out.push((*bias, db));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().zip(av).map(|(g, a)| g * a).collect()));
                }
            }
            Op::Scale { x, factor } => {
                out.push((*x, g.iter().map(|v| v * factor).collect()));
            }
            Op::Relu { x } => {
                let xv = self.val(*x).data();
                out.push((
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                ));
            }
            Op::Softmax { x } => {
                let c = node.value.shape()[1];
                let mut dx = vec![0.0; g.len()];
                for ((y, gr), d) in node.value.data().chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[j] = y[j] * (gr[j] - dot);
                    }
                }
                out.push((*x, dx));
            }
            Op::LogSoftmax { x } => {
                let c = node.value.shape()[1];
                let mut dx = vec![0.0; g.len()];
                for ((y, gr), d) in node.value.data().chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..c {
                        d[j] = gr[j] - y[j].exp() * gsum;
                    }
                }
                out.push((*x, dx));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    dx[i * c + y] -= scale;
                }
                out.push((*logits, dx));
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![0.0; self.val(*x).numel()];
                for (gv, &src) in g.iter().zip(argmax) {
                    dx[src] += gv;
                }
                out.push((*x, dx));
            }
            Op::Reshape { x } => out.push((*x, g.to_vec())),
            Op::Sum { x } => out.push((*x, vec![g[0]; self.val(*x).numel()])),
        }
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Log-softmax of one row via max-subtracted log-sum-exp.
pub fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let i2 = g.input(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = g.input(t(&[2, 2], &[1., 2., 3., 4.]));
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1., 2., 3., 4.]);

        let a = g.input(t(&[1, 2], &[1., 2.]));
        let b = g.input(t(&[2, 1], &[3., 4.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 1]);
        assert_eq!(g.value(c).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros([2, 3]));
        let b = g.input(Tensor::zeros([2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv2d_sum_of_ones_and_delta_kernel() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 1, 3, 3], 1.0));
        let w = g.input(Tensor::full([1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);

        let img: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = g.input(t(&[1, 1, 4, 5], &img));
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let w = g.input(t(&[1, 1, 3, 3], &delta));
        let y = g.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &img[..]);
    }

    #[test]
    fn conv2d_bad_geometry() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([1, 1, 5, 5]));
        let w = g.input(Tensor::zeros([1, 1, 2, 2]));
        assert!(matches!(g.conv2d(x, w, 2, 0), Err(Error::Dimension(_))));
        let w3 = g.input(Tensor::zeros([1, 2, 3, 3]));
        assert!(g.conv2d(x, w3, 1, 0).is_err());
    }

    #[test]
    fn softmax_relu_examples() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[0., 0.]));
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);

        let x = g.input(t(&[1, 2], &[-1., 2.]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0., 2.]);

        let x = g.input(t(&[1, 3], &[1., 2., 3.]));
        let s = g.softmax(x).unwrap();
        let z: f64 = [1f64, 2., 3.].iter().map(|v| v.exp()).sum();
        for (i, v) in g.value(s).data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([3, 10], 0.7));
        let l = g.cross_entropy(x, &[0, 4, 9]).unwrap();
        assert!((g.value(l).data()[0] - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_peaked_goes_to_zero() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 3], &[0., 800., 0.]));
        let l = g.cross_entropy(x, &[1]).unwrap();
        assert!(g.value(l).data()[0] < 1e-300);
    }

    #[test]
    fn cross_entropy_label_errors() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([2, 3]));
        assert!(matches!(g.cross_entropy(x, &[0, 3]), Err(Error::Input(_))));
        assert!(matches!(g.cross_entropy(x, &[0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([2, 3, 2], 0.3));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 12]);
    }

    #[test]
    fn backward_of_half_square_norm_is_identity() {
        let mut g = Graph::new();
        let data = [1.5, -2.0, 0.25, 3.0];
        let x = g.param(t(&[2, 2], &data));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let l = g.scale(s, 0.5);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &data);
    }

    #[test]
    fn backward_twice_requires_reset() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([2], 1.0));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
        g.reset();
        assert!(g.grad(x).is_none());
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([2], 1.0));
        let r = g.relu(x);
        assert!(matches!(g.backward(r), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 2], 1.0));
        let w = g.param(Tensor::full([2, 1], 2.0));
        let y = g.matmul(x, w).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 1, 2, 4], &[1., 5., 2., 0., 3., 4., 8., 7.]));
        let p = g.max_pool2d(x, 2).unwrap();
        assert_eq!(g.value(p).data(), &[5., 8.]);
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., 1., 0., 0., 0., 0., 1., 0.]);
    }
}
