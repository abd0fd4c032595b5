//! Matrix-valued reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its value and the ids of its inputs. Nodes are appended in evaluation
//! order, so the node list is already a topological order; [`Graph::backward`]
//! walks it once in reverse and accumulates gradients in that fixed order.
//!
//! ```
//! use rd2v_core::numeric::{Graph, Matrix};
//!
//! let mut g = Graph::new();
//! let x = g.param(Matrix::scalar(3.0));
//! let y = g.mul(x, x);
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

use std::fmt;

use super::matrix::{gemm, Matrix};
use super::reduce::{cosine_grad_lhs, cosine_unchecked};
use crate::error::{Error, Result};

/// Arithmetic precision of values stored on a graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Full 64-bit arithmetic.
    #[default]
    F64,
    /// Every stored value is rounded through `f32`.
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation implemented outside this module.
///
/// `backward` receives the input values, the forward output and the
/// upstream gradient, and returns one optional gradient per input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad_out: &Matrix) -> Vec<Option<Matrix>>;
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Scale(NodeId, f64),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kernel: usize,
        stride: usize,
    },
    ReplaceRows {
        x: NodeId,
        fill: NodeId,
        mask: Vec<bool>,
    },
    Mean(NodeId),
    Sum(NodeId),
    Cosine(NodeId, NodeId),
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
    inference: bool,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("precision", &self.precision)
            .field("inference", &self.inference)
            .finish()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
            inference: false,
        }
    }

    /// A graph on which [`Graph::param`] records constants. Used for the
    /// teacher branch and diagnostics.
    pub fn inference(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
            inference: true,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of leaves that will receive gradients.
    pub fn trainable_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Leaf) && n.requires_grad)
            .count()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, mut value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        if self.precision == Precision::F32 {
            value.round_to_f32();
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Trainable leaf (a constant on inference graphs).
    pub fn param(&mut self, value: Matrix) -> NodeId {
        let rg = !self.inference;
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).matmul(self.value(b)).expect("matmul shape");
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_nt inner dimension");
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, (av.data(), k, 1), (bv.data(), 1, k), 0.0, &mut out, n);
        let rg = self.rg(&[a, b]);
        self.push(Matrix::from_raw(m, n, out), Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y).expect("add shape");
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y).expect("sub shape");
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y).expect("mul shape");
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Adds a `1 x cols` bias to every row.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!((1, av.cols()), bv.shape(), "row bias shape");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        self.push(out, Op::AddRowBias(a, bias), rg)
    }

    /// `x · w + b` with `w` of shape `in x out` and `b` of shape `1 x out`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row_bias(xw, b)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let out = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Per-row normalisation over columns with learned `1 x cols` scale and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        assert_eq!(gv.shape(), (1, cols), "layer norm gamma shape");
        assert_eq!(bv.shape(), (1, cols), "layer norm beta shape");
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for (h, v) in xh.iter_mut().zip(row) {
                *h = (v - mu) * is;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = xh[c] * gv.data()[c] + bv.data()[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let s = super::reduce::softmax(xv.row(r));
            out.row_mut(r).copy_from_slice(&s);
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "column slice out of range");
        let out = Matrix::from_fn(xv.rows(), len, |r, c| xv.get(r, start + c));
        let rg = self.rg(&[x]);
        self.push(out, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let rg = self.rg(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Strided 1-D convolution without padding.
    ///
    /// `x` is `T_in x C_in` (time along rows), `w` is `C_out x (kernel*C_in)`
    /// with taps laid out time-major, `b` is `1 x C_out`. Because rows of `x`
    /// are contiguous, the receptive window of output frame `t` is the flat
    /// slice starting at `t*stride*C_in` of length `kernel*C_in`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, kernel: usize, stride: usize) -> NodeId {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (t_in, c_in) = xv.shape();
        let c_out = wv.rows();
        assert_eq!(wv.cols(), kernel * c_in, "conv weight shape");
        assert_eq!(bv.shape(), (1, c_out), "conv bias shape");
        assert!(t_in >= kernel && stride >= 1, "conv input too short");
        let t_out = (t_in - kernel) / stride + 1;
        let kc = kernel * c_in;
        let mut out = vec![0.0; t_out * c_out];
        for r in 0..t_out {
            out[r * c_out..(r + 1) * c_out].copy_from_slice(bv.data());
        }
        gemm(
            t_out,
            kc,
            c_out,
            1.0,
            (xv.data(), stride * c_in, 1),
            (wv.data(), 1, kc),
            1.0,
            &mut out,
            c_out,
        );
        let rg = self.rg(&[x, w, b]);
        self.push(
            Matrix::from_raw(t_out, c_out, out),
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                stride,
            },
            rg,
        )
    }

    /// Replaces the rows of `x` where `mask` is set by the `1 x cols` row `fill`.
    pub fn replace_rows(&mut self, x: NodeId, fill: NodeId, mask: &[bool]) -> NodeId {
        let (xv, fv) = (self.value(x), self.value(fill));
        assert_eq!(mask.len(), xv.rows(), "mask length");
        assert_eq!(fv.shape(), (1, xv.cols()), "fill row shape");
        let mut out = xv.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(r).copy_from_slice(fv.data());
            }
        }
        let rg = self.rg(&[x, fill]);
        self.push(
            out,
            Op::ReplaceRows {
                x,
                fill,
                mask: mask.to_vec(),
            },
            rg,
        )
    }

    /// Mean of all entries as a `1 x 1` node.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let m = xv.sum() / xv.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Matrix::scalar(m), Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Matrix::scalar(s), Op::Sum(x), rg)
    }

    /// Cosine similarity of two `1 x D` rows as a `1 x 1` node.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), 1, "cosine expects row vectors");
        assert_eq!(av.shape(), bv.shape(), "cosine shape");
        let s = cosine_unchecked(av.data(), bv.data());
        let rg = self.rg(&[a, b]);
        self.push(Matrix::scalar(s), Op::Cosine(a, b), rg)
    }

    /// Records an externally defined operation whose forward value has
    /// already been computed.
    pub fn custom(&mut self, inputs: &[NodeId], value: Matrix, op: Box<dyn CustomOp>) -> NodeId {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut acc = |id: NodeId, d: Matrix| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_scaled(&d, 1.0),
                slot => *slot = Some(d),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, (g.data(), n, 1), (bv.data(), 1, n), 0.0, &mut da, k);
                    acc(*a, Matrix::from_raw(m, k, da));
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, (av.data(), 1, k), (g.data(), n, 1), 0.0, &mut db, n);
                    acc(*b, Matrix::from_raw(k, n, db));
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, (g.data(), n, 1), (bv.data(), k, 1), 0.0, &mut da, k);
                    acc(*a, Matrix::from_raw(m, k, da));
                }
                if wants(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, 1.0, (g.data(), 1, n), (av.data(), k, 1), 0.0, &mut db, k);
                    acc(*b, Matrix::from_raw(n, k, db));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.zip_map(bv, |x, y| x * y).unwrap());
                }
                if wants(*b) {
                    acc(*b, g.zip_map(av, |x, y| x * y).unwrap());
                }
            }
            Op::AddRowBias(a, bias) => {
                acc(*a, g.clone());
                if wants(*bias) {
                    acc(*bias, column_sums(g));
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = val(*gamma);
                let (rows, cols) = g.shape();
                if wants(*gamma) {
                    let dg = g.zip_map(xhat, |a, b| a * b).unwrap();
                    acc(*gamma, column_sums(&dg));
                }
                if wants(*beta) {
                    acc(*beta, column_sums(g));
                }
                if wants(*x) {
                    let mut dx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    #[allow(clippy::needless_range_loop)]
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let d = gr[c] * gv.data()[c];
                            mean_d += d;
                            mean_dx += d * xh[c];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        let out = dx.row_mut(r);
                        for c in 0..cols {
                            let d = gr[c] * gv.data()[c];
                            out[c] = inv_std[r] * (d - mean_d - xh[c] * mean_dx);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Gelu(x) => {
                let d = val(*x)
                    .zip_map(g, |v, gi| {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .unwrap();
                acc(*x, d);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yy, gg)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yy * (gg - inner);
                    }
                }
                acc(*x, dx);
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if wants(p) {
                        let d = Matrix::from_fn(g.rows(), pc, |r, c| g.get(r, off + c));
                        acc(p, d);
                    }
                    off += pc;
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                stride,
            } => {
                let (xv, wv) = (val(*x), val(*w));
                let (t_in, c_in) = xv.shape();
                let (t_out, c_out) = g.shape();
                let kc = kernel * c_in;
                if wants(*b) {
                    acc(*b, column_sums(g));
                }
                if wants(*w) {
                    // dW (C_out x kC) = gᵀ · X_win
                    let mut dw = vec![0.0; c_out * kc];
                    gemm(
                        c_out,
                        t_out,
                        kc,
                        1.0,
                        (g.data(), 1, c_out),
                        (xv.data(), stride * c_in, 1),
                        0.0,
                        &mut dw,
                        kc,
                    );
                    acc(*w, Matrix::from_raw(c_out, kc, dw));
                }
                if wants(*x) {
                    // Window gradients (T_out x kC) = g · W, then scatter-add
                    // into the overlapping input windows in time order.
                    let mut dwin = vec![0.0; t_out * kc];
                    gemm(
                        t_out,
                        c_out,
                        kc,
                        1.0,
                        (g.data(), c_out, 1),
                        (wv.data(), kc, 1),
                        0.0,
                        &mut dwin,
                        kc,
                    );
                    let mut dx = vec![0.0; t_in * c_in];
                    for t in 0..t_out {
                        let base = t * stride * c_in;
                        for (d, s) in dx[base..base + kc].iter_mut().zip(&dwin[t * kc..(t + 1) * kc]) {
                            *d += s;
                        }
                    }
                    acc(*x, Matrix::from_raw(t_in, c_in, dx));
                }
            }
            Op::ReplaceRows { x, fill, mask } => {
                if wants(*x) {
                    let mut dx = g.clone();
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            dx.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    acc(*x, dx);
                }
                if wants(*fill) {
                    let mut df = vec![0.0; g.cols()];
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            for (d, v) in df.iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    }
                    acc(*fill, Matrix::from_raw(1, g.cols(), df));
                }
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let s = g.data()[0] / xv.len() as f64;
                acc(*x, Matrix::filled(xv.rows(), xv.cols(), s));
            }
            Op::Sum(x) => {
                let xv = val(*x);
                acc(*x, Matrix::filled(xv.rows(), xv.cols(), g.data()[0]));
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let s = g.data()[0];
                if wants(*a) {
                    let mut d = vec![0.0; av.cols()];
                    cosine_grad_lhs(av.data(), bv.data(), s, &mut d);
                    acc(*a, Matrix::from_raw(1, av.cols(), d));
                }
                if wants(*b) {
                    let mut d = vec![0.0; bv.cols()];
                    cosine_grad_lhs(bv.data(), av.data(), s, &mut d);
                    acc(*b, Matrix::from_raw(1, bv.cols(), d));
                }
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Matrix> = inputs.iter().map(|&i| val(i)).collect();
                let ds = op.backward(&ins, &node.value, g);
                debug_assert_eq!(ds.len(), inputs.len(), "custom op {} gradient count", op.name());
                for (&i, d) in inputs.iter().zip(ds) {
                    if let Some(d) = d {
                        acc(i, d);
                    }
                }
            }
        }
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut s = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (a, b) in s.iter_mut().zip(g.row(r)) {
            *a += b;
        }
    }
    Matrix::from_raw(1, g.cols(), s)
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`; `None` if the node does
    /// not require gradients or the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but materialises zeros of the node's shape.
    pub fn get_or_zeros(&self, graph: &Graph, id: NodeId) -> Matrix {
        self.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = graph.value(id).shape();
            Matrix::zeros(r, c)
        })
    }
}
