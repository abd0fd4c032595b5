//! Seven-layer strided 1-D convolutional waveform encoder.
//!
//! Each layer is a no-padding convolution followed by per-frame
//! normalisation over channels (learned scale and shift) and GELU.
//! Parameters live under `encoder.conv{i}.{weight,bias}` and
//! `encoder.norm{i}.{gamma,beta}`; weights are `C_out x (kernel * C_in)`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::ema::{BoundParams, ParameterSet};
use crate::error::{Error, Result};
use crate::numeric::{Graph, Matrix, NodeId, Precision, SeededRng};
use crate::signal::Waveform;

pub const CONV_KERNELS: [usize; 7] = [10, 3, 3, 3, 3, 2, 2];
pub const CONV_STRIDES: [usize; 7] = [5, 2, 2, 2, 2, 2, 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub layers: Vec<ConvLayer>,
}

impl ConvSpec {
    /// Standard kernels and strides with a uniform channel count.
    pub fn with_channels(channels: usize) -> Self {
        Self {
            layers: CONV_KERNELS
                .iter()
                .zip(CONV_STRIDES)
                .map(|(&kernel, stride)| ConvLayer {
                    kernel,
                    stride,
                    channels,
                })
                .collect(),
        }
    }

    /// 512 channels per layer.
    pub fn base() -> Self {
        Self::with_channels(512)
    }

    /// 64 channels per layer.
    pub fn desk() -> Self {
        Self::with_channels(64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("conv spec has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.channels == 0 {
                return Err(Error::Config(format!(
                    "conv layer {i} needs kernel, stride and channels >= 1, got {l:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.channels).unwrap_or(0)
    }

    /// Fewest input samples that yield one output frame.
    pub fn receptive_field(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .fold(1, |need, l| (need - 1) * l.stride + l.kernel)
    }

    /// Product of strides: input samples between consecutive output frames.
    pub fn hop(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Input samples that influence output frame `t`.
    pub fn receptive_window(&self, t: usize) -> Range<usize> {
        let start = t * self.hop();
        start..start + self.receptive_field()
    }

    /// `floor((L - kernel) / stride) + 1`, layer by layer.
    pub fn output_length(&self, input_samples: usize) -> Result<usize> {
        let min = self.receptive_field();
        if input_samples < min {
            return Err(Error::Length(format!(
                "{input_samples} samples is shorter than the encoder's minimum of {min}"
            )));
        }
        Ok(self
            .layers
            .iter()
            .fold(input_samples, |len, l| (len - l.kernel) / l.stride + 1))
    }

    /// Fresh parameters: weights uniform in ±1/sqrt(fan_in), zero biases,
    /// unit scales and zero shifts.
    pub fn init_params(&self, rng: &mut SeededRng, params: &mut ParameterSet) {
        let mut c_in = 1;
        for (i, l) in self.layers.iter().enumerate() {
            let fan_in = l.kernel * c_in;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Matrix::from_fn(l.channels, fan_in, |_, _| bound * (2.0 * rng.unit() - 1.0));
            params.insert(format!("encoder.conv{i}.weight"), w);
            params.insert(format!("encoder.conv{i}.bias"), Matrix::zeros(1, l.channels));
            params.insert(format!("encoder.norm{i}.gamma"), Matrix::filled(1, l.channels, 1.0));
            params.insert(format!("encoder.norm{i}.beta"), Matrix::zeros(1, l.channels));
            c_in = l.channels;
        }
    }
}

/// `T x D` frame matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence(Matrix);

impl FeatureSequence {
    pub fn new(frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::Shape(format!(
                "feature sequence needs T, D >= 1, got {:?}",
                frames.shape()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::Numeric("feature sequence has non-finite entries".into()));
        }
        Ok(Self(frames))
    }

    pub fn frames(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }
}

/// Records the encoder on `graph` and returns the `T x C` output node.
pub fn encode_graph(graph: &mut Graph, spec: &ConvSpec, params: &BoundParams, w: &Waveform) -> Result<NodeId> {
    spec.output_length(w.len())?;
    let mut x = graph.constant(Matrix::from_raw(w.len(), 1, w.samples().to_vec()));
    for (i, l) in spec.layers.iter().enumerate() {
        let weight = params.id(&format!("encoder.conv{i}.weight"))?;
        let bias = params.id(&format!("encoder.conv{i}.bias"))?;
        let gamma = params.id(&format!("encoder.norm{i}.gamma"))?;
        let beta = params.id(&format!("encoder.norm{i}.beta"))?;
        let c_in = graph.value(x).cols();
        if graph.value(weight).shape() != (l.channels, l.kernel * c_in) {
            return Err(Error::Structure(format!(
                "encoder.conv{i}.weight has shape {:?}, expected {:?}",
                graph.value(weight).shape(),
                (l.channels, l.kernel * c_in)
            )));
        }
        let y = graph.conv1d(x, weight, bias, l.kernel, l.stride);
        let n = graph.layer_norm(y, gamma, beta);
        x = graph.gelu(n);
    }
    Ok(x)
}

/// Encodes a waveform without recording gradients.
pub fn encode(spec: &ConvSpec, params: &ParameterSet, w: &Waveform) -> Result<FeatureSequence> {
    let mut g = Graph::inference(Precision::F64);
    let bound = params.bind(&mut g);
    let out = encode_graph(&mut g, spec, &bound, w)?;
    FeatureSequence::new(g.value(out).clone())
}

/// First-layer convolution without bias, normalisation or activation: the
/// linear part of the encoder.
pub fn linear_response(spec: &ConvSpec, params: &ParameterSet, w: &Waveform) -> Result<Matrix> {
    let l = spec
        .layers
        .first()
        .ok_or_else(|| Error::Config("conv spec has no layers".into()))?;
    let mut g = Graph::inference(Precision::F64);
    let x = g.constant(Matrix::from_raw(w.len(), 1, w.samples().to_vec()));
    let weight = g.constant(params.get("encoder.conv0.weight")?.clone());
    let zero = g.constant(Matrix::zeros(1, l.channels));
    if w.len() < l.kernel {
        return Err(Error::Length(format!(
            "{} samples shorter than kernel {}",
            w.len(),
            l.kernel
        )));
    }
    let y = g.conv1d(x, weight, zero, l.kernel, l.stride);
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_difference_gradient, relative_error};
    use crate::signal::synth_utterance;

    /// Per-layer formula applied by hand.
    fn oracle_length(kernels: &[usize], strides: &[usize], mut len: usize) -> Option<usize> {
        for (&k, &s) in kernels.iter().zip(strides) {
            if len < k {
                return None;
            }
            len = (len - k) / s + 1;
        }
        Some(len)
    }

    #[test]
    fn base_framing() {
        let spec = ConvSpec::base();
        assert_eq!(oracle_length(&CONV_KERNELS, &CONV_STRIDES, 16_000), Some(49));
        assert_eq!(spec.output_length(16_000).unwrap(), 49);
        assert_eq!(spec.output_length(32_000).unwrap(), 99);
        assert_eq!(spec.output_length(400).unwrap(), 1);
        assert_eq!(spec.receptive_field(), 400);
        assert_eq!(spec.hop(), 320);
        let err = spec.output_length(399).unwrap_err();
        assert!(matches!(err, Error::Length(ref m) if m.contains("400")));
    }

    #[test]
    fn zero_waveform_gives_shift_only() {
        let spec = ConvSpec::with_channels(4);
        let mut params = ParameterSet::new();
        spec.init_params(&mut SeededRng::new(0, "init"), &mut params);
        for (_, m) in params.iter_mut() {
            m.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let w = Waveform::new(vec![0.0; 1040], 16_000).unwrap();
        let f = encode(&spec, &params, &w).unwrap();
        assert_eq!(f.len(), 3);
        assert!(f.frames().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_part_scales() {
        let spec = ConvSpec::with_channels(8);
        let mut params = ParameterSet::new();
        spec.init_params(&mut SeededRng::new(1, "init"), &mut params);
        let w = synth_utterance(3, 0.05, 16_000).unwrap();
        let a = -2.5;
        let scaled = Waveform::new(w.samples().iter().map(|s| a * s).collect(), 16_000).unwrap();
        let base = linear_response(&spec, &params, &w).unwrap();
        let lin = linear_response(&spec, &params, &scaled).unwrap();
        assert!(lin.max_abs_diff(&base.scale(a)) < 1e-9);
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let spec = ConvSpec {
            layers: vec![
                ConvLayer {
                    kernel: 4,
                    stride: 2,
                    channels: 3,
                },
                ConvLayer {
                    kernel: 3,
                    stride: 2,
                    channels: 4,
                },
            ],
        };
        let mut params = ParameterSet::new();
        spec.init_params(&mut SeededRng::new(2, "init"), &mut params);
        let w = synth_utterance(4, 0.003, 16_000).unwrap();
        let mut rng = SeededRng::new(3, "readout");
        let t = spec.output_length(w.len()).unwrap();
        let readout = Matrix::from_fn(t, 4, |_, _| rng.normal());

        let eval = |p: &ParameterSet, grad: bool| {
            let mut g = Graph::new();
            let bound = p.bind(&mut g);
            let out = encode_graph(&mut g, &spec, &bound, &w).unwrap();
            let r = g.constant(readout.clone());
            let prod = g.mul(out, r);
            let loss = g.sum(prod);
            let value = g.value(loss).data()[0];
            let grads = grad.then(|| {
                let gr = g.backward(loss).unwrap();
                gr.get_or_zeros(&g, bound.id("encoder.conv0.weight").unwrap())
            });
            (value, grads)
        };
        let analytic = eval(&params, true).1.unwrap();
        let base = params.get("encoder.conv0.weight").unwrap().clone();
        let numeric = finite_difference_gradient(
            |x| {
                let mut p = params.clone();
                *p.get_mut("encoder.conv0.weight").unwrap() = x.clone();
                eval(&p, false).0
            },
            &base,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn frame_depends_only_on_receptive_window() {
        let spec = ConvSpec::with_channels(4);
        let mut params = ParameterSet::new();
        spec.init_params(&mut SeededRng::new(5, "init"), &mut params);
        let w = synth_utterance(6, 0.1, 16_000).unwrap();
        let base = encode(&spec, &params, &w).unwrap();
        let t = 2;
        let window = spec.receptive_window(t);
        let mut perturbed = w.samples().to_vec();
        for (i, s) in perturbed.iter_mut().enumerate() {
            if !window.contains(&i) {
                *s += 0.3;
            }
        }
        let p = encode(&spec, &params, &Waveform::new(perturbed, 16_000).unwrap()).unwrap();
        assert_eq!(base.frame(t), p.frame(t));
        assert_ne!(base.frame(t + 1), p.frame(t + 1));
    }
}
