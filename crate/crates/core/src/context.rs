//! Span masking, the pre-norm transformer context network and top-M target
//! averaging.
//!
//! Parameter names: `context.proj.{weight,bias}` (feature projection),
//! `context.mask_emb`, `context.layer{i}.{ln1,ln2}.{gamma,beta}`,
//! `context.layer{i}.attn.{wq,bq,wk,bk,wv,bv,wo,bo}`,
//! `context.layer{i}.ffn.{w1,b1,w2,b2}` and `context.final_norm.{gamma,beta}`.
//! Linear weights are stored `in x out`.

use serde::{Deserialize, Serialize};

use crate::ema::{BoundParams, ParameterSet};
use crate::encoder::FeatureSequence;
use crate::error::{Error, Result};
use crate::numeric::{Graph, Matrix, NodeId, Precision, SeededRng};

/// Which time steps are masked and the spans that produced them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    masked: Vec<bool>,
    spans: Vec<(usize, usize)>,
}

impl MaskSpec {
    pub fn none(len: usize) -> Self {
        Self {
            masked: vec![false; len],
            spans: Vec::new(),
        }
    }

    /// Builds the mask covered by `spans`, clipping each at `len`.
    pub fn from_spans(len: usize, starts: &[usize], span: usize) -> Self {
        let mut masked = vec![false; len];
        let mut spans = Vec::with_capacity(starts.len());
        for &s in starts {
            if s >= len {
                continue;
            }
            let l = span.min(len - s);
            masked[s..s + l].iter_mut().for_each(|m| *m = true);
            spans.push((s, l));
        }
        Self { masked, spans }
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn is_masked(&self, t: usize) -> bool {
        self.masked[t]
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&t| self.masked[t]).collect()
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.masked.len().max(1) as f64
    }
}

/// Span-masking parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    /// Probability that a step starts a span.
    pub prob: f64,
    pub span: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { prob: 0.065, span: 10 }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) || self.span == 0 {
            return Err(Error::Config(format!(
                "mask needs 0 <= prob <= 1 and span >= 1, got {} and {}",
                self.prob, self.span
            )));
        }
        Ok(())
    }
}

/// Every step starts a span independently with probability `p`; spans of
/// `span` steps are clipped at `len` and overlaps merge.
pub fn sample_mask(len: usize, p: f64, span: usize, rng: &mut SeededRng) -> MaskSpec {
    let starts: Vec<usize> = (0..len).filter(|_| rng.bernoulli(p)).collect();
    MaskSpec::from_spans(len, &starts, span)
}

/// Replaces masked frames by `embedding`.
pub fn apply_mask(f: &FeatureSequence, m: &MaskSpec, embedding: &[f64]) -> Result<FeatureSequence> {
    if m.len() != f.len() {
        return Err(Error::Shape(format!(
            "mask covers {} steps but the sequence has {}",
            m.len(),
            f.len()
        )));
    }
    if embedding.len() != f.dim() {
        return Err(Error::Shape(format!(
            "mask embedding has {} dims, frames have {}",
            embedding.len(),
            f.dim()
        )));
    }
    let mut out = f.frames().clone();
    for t in 0..m.len() {
        if m.is_masked(t) {
            out.row_mut(t).copy_from_slice(embedding);
        }
    }
    FeatureSequence::new(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub top_m: usize,
    /// Add fixed sinusoidal position encodings after masking.
    pub positional: bool,
    /// Amplitude applied to the position encodings.
    pub positional_scale: f64,
}

impl TransformerConfig {
    /// 12 layers of width 768, FFN 3072, 12 heads, targets from the top 8.
    pub fn base() -> Self {
        Self {
            layers: 12,
            model_dim: 768,
            heads: 12,
            ffn_dim: 3072,
            top_m: 8,
            positional: true,
            positional_scale: 1.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            layers: 4,
            model_dim: 64,
            heads: 4,
            ffn_dim: 256,
            top_m: 3,
            positional: true,
            positional_scale: 1.0,
        }
    }

    pub fn toy() -> Self {
        Self {
            layers: 2,
            model_dim: 32,
            heads: 4,
            ffn_dim: 64,
            top_m: 2,
            positional: true,
            positional_scale: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(format!("transformer sizes must be positive: {self:?}")));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.top_m == 0 || self.top_m > self.layers {
            return Err(Error::Config(format!(
                "top-M {} must lie in 1..={}",
                self.top_m, self.layers
            )));
        }
        Ok(())
    }

    /// Fresh parameters for a context network fed by `in_dim` features.
    pub fn init_params(&self, in_dim: usize, rng: &mut SeededRng, params: &mut ParameterSet) {
        let d = self.model_dim;
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| b * (2.0 * rng.unit() - 1.0))
        };
        params.insert("context.proj.weight", uniform(in_dim, d, in_dim));
        params.insert("context.proj.bias", Matrix::zeros(1, d));
        params.insert("context.mask_emb", uniform(1, d, d));
        for i in 0..self.layers {
            let p = format!("context.layer{i}");
            for ln in ["ln1", "ln2"] {
                params.insert(format!("{p}.{ln}.gamma"), Matrix::filled(1, d, 1.0));
                params.insert(format!("{p}.{ln}.beta"), Matrix::zeros(1, d));
            }
            for w in ["q", "k", "v", "o"] {
                params.insert(format!("{p}.attn.w{w}"), uniform(d, d, d));
                params.insert(format!("{p}.attn.b{w}"), Matrix::zeros(1, d));
            }
            params.insert(format!("{p}.ffn.w1"), uniform(d, self.ffn_dim, d));
            params.insert(format!("{p}.ffn.b1"), Matrix::zeros(1, self.ffn_dim));
            params.insert(format!("{p}.ffn.w2"), uniform(self.ffn_dim, d, self.ffn_dim));
            params.insert(format!("{p}.ffn.b2"), Matrix::zeros(1, d));
        }
        params.insert("context.final_norm.gamma", Matrix::filled(1, d, 1.0));
        params.insert("context.final_norm.beta", Matrix::zeros(1, d));
    }
}

/// `PE[t, 2i] = sin(t / 10000^(2i/D))`, `PE[t, 2i+1] = cos(...)`.
pub fn sinusoidal_positions(len: usize, dim: usize, scale: f64) -> Matrix {
    Matrix::from_fn(len, dim, |t, c| {
        let i = (c / 2) as f64;
        let angle = t as f64 / 10_000f64.powf(2.0 * i / dim as f64);
        scale * if c % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

/// Per-layer outputs `c^1 .. c^L`, all `T x D`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutputs {
    layers: Vec<Matrix>,
}

impl LayerOutputs {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Shape("layer outputs are empty".into()))?
            .shape();
        if layers.iter().any(|l| l.shape() != first) {
            return Err(Error::Shape("layer outputs have differing shapes".into()));
        }
        Ok(Self { layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn last(&self) -> &Matrix {
        self.layers.last().expect("non-empty by construction")
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter()
    }
}

/// Graph nodes of one context-network pass.
#[derive(Clone, Debug)]
pub struct ContextNodes {
    /// Input to the first block (projected, masked, position-encoded).
    pub input: NodeId,
    /// `c^1 .. c^L`; the last one has the final normalisation applied.
    pub layers: Vec<NodeId>,
}

impl ContextNodes {
    pub fn last(&self) -> NodeId {
        *self.layers.last().expect("at least one layer")
    }
}

/// Records projection, optional masking, position encodings and the
/// transformer blocks on `graph`.
pub fn forward_graph(
    graph: &mut Graph,
    cfg: &TransformerConfig,
    params: &BoundParams,
    features: NodeId,
    mask: Option<&MaskSpec>,
) -> Result<ContextNodes> {
    let t = graph.value(features).rows();
    let proj = graph.linear(
        features,
        params.id("context.proj.weight")?,
        params.id("context.proj.bias")?,
    );
    let mut x = proj;
    if let Some(m) = mask {
        if m.len() != t {
            return Err(Error::Shape(format!("mask covers {} steps, sequence has {t}", m.len())));
        }
        if m.count() > 0 {
            x = graph.replace_rows(x, params.id("context.mask_emb")?, m.masked());
        }
    }
    if cfg.positional {
        let pe = graph.constant(sinusoidal_positions(t, cfg.model_dim, cfg.positional_scale));
        x = graph.add(x, pe);
    }
    let input = x;
    let dh = cfg.model_dim / cfg.heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        let p = |n: &str| params.id(&format!("context.layer{i}.{n}"));
        let h = graph.layer_norm(x, p("ln1.gamma")?, p("ln1.beta")?);
        let q = graph.linear(h, p("attn.wq")?, p("attn.bq")?);
        let k = graph.linear(h, p("attn.wk")?, p("attn.bk")?);
        let v = graph.linear(h, p("attn.wv")?, p("attn.bv")?);
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let qh = graph.slice_cols(q, head * dh, dh);
            let kh = graph.slice_cols(k, head * dh, dh);
            let vh = graph.slice_cols(v, head * dh, dh);
            let scores = graph.matmul_nt(qh, kh);
            let scores = graph.scale(scores, inv_sqrt);
            let attn = graph.softmax_rows(scores);
            heads.push(graph.matmul(attn, vh));
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            graph.concat_cols(&heads)
        };
        let o = graph.linear(cat, p("attn.wo")?, p("attn.bo")?);
        x = graph.add(x, o);
        let h2 = graph.layer_norm(x, p("ln2.gamma")?, p("ln2.beta")?);
        let f1 = graph.linear(h2, p("ffn.w1")?, p("ffn.b1")?);
        let f1 = graph.gelu(f1);
        let f2 = graph.linear(f1, p("ffn.w2")?, p("ffn.b2")?);
        x = graph.add(x, f2);
        layers.push(x);
    }
    let last = layers.pop().expect("at least one layer");
    let fin = graph.layer_norm(
        last,
        params.id("context.final_norm.gamma")?,
        params.id("context.final_norm.beta")?,
    );
    layers.push(fin);
    Ok(ContextNodes { input, layers })
}

/// Runs the context network without recording gradients.
pub fn forward(
    cfg: &TransformerConfig,
    params: &ParameterSet,
    f: &FeatureSequence,
    mask: Option<&MaskSpec>,
) -> Result<LayerOutputs> {
    let mut g = Graph::inference(Precision::F64);
    let bound = params.bind(&mut g);
    let x = g.constant(f.frames().clone());
    let nodes = forward_graph(&mut g, cfg, &bound, x, mask)?;
    LayerOutputs::new(nodes.layers.iter().map(|&n| g.value(n).clone()).collect())
}

/// Zero-mean, unit-variance normalisation of each row. Constant rows map
/// to zeros.
pub fn normalize_frames(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let d = m.cols() as f64;
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let mu = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
        if var > 0.0 {
            let inv = 1.0 / var.sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mu) * inv);
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

/// Mean of the last `m` layers after per-frame normalisation.
pub fn average_top_m(lo: &LayerOutputs, m: usize) -> Result<FeatureSequence> {
    if m == 0 || m > lo.len() {
        return Err(Error::Domain(format!("top-M {m} outside 1..={}", lo.len())));
    }
    let (rows, cols) = lo.last().shape();
    let mut acc = Matrix::zeros(rows, cols);
    for layer in &lo.layers[lo.len() - m..] {
        acc.add_scaled(&normalize_frames(layer), 1.0);
    }
    FeatureSequence::new(acc.scale(1.0 / m as f64))
}
