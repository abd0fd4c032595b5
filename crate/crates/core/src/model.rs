//! The full branch: waveform encoder followed by the context network.

use serde::{Deserialize, Serialize};

use crate::context::{average_top_m, forward_graph, LayerOutputs, MaskSpec, TransformerConfig};
use crate::ema::{BoundParams, ParameterSet};
use crate::encoder::{encode_graph, ConvSpec, FeatureSequence};
use crate::error::Result;
use crate::numeric::{Graph, Matrix, NodeId, Precision, SeededRng};
use crate::signal::Waveform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv: ConvSpec,
    pub transformer: TransformerConfig,
}

impl ModelConfig {
    pub fn base() -> Self {
        Self {
            conv: ConvSpec::base(),
            transformer: TransformerConfig::base(),
        }
    }

    pub fn desk() -> Self {
        Self {
            conv: ConvSpec::desk(),
            transformer: TransformerConfig::desk(),
        }
    }

    pub fn toy() -> Self {
        Self {
            conv: ConvSpec::with_channels(32),
            transformer: TransformerConfig::toy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.conv.validate()?;
        self.transformer.validate()
    }

    /// Frames produced for `samples` input samples.
    pub fn frames(&self, samples: usize) -> Result<usize> {
        self.conv.output_length(samples)
    }

    /// Fresh student parameters for `seed`.
    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let root = SeededRng::new(seed, "init");
        let mut params = ParameterSet::new();
        self.conv.init_params(&mut root.child("encoder"), &mut params);
        self.transformer
            .init_params(self.conv.out_channels(), &mut root.child("context"), &mut params);
        params
    }
}

/// Whether a parameter belongs to the context network.
pub fn is_transformer_param(name: &str) -> bool {
    name.starts_with("context.")
}

/// Records encoder and context network on `graph`; returns the final-layer
/// node (the predictions when `mask` is set).
pub fn branch_graph(
    graph: &mut Graph,
    cfg: &ModelConfig,
    params: &BoundParams,
    w: &Waveform,
    mask: Option<&MaskSpec>,
) -> Result<Vec<NodeId>> {
    let z = encode_graph(graph, &cfg.conv, params, w)?;
    Ok(forward_graph(graph, &cfg.transformer, params, z, mask)?.layers)
}

/// All layer outputs without recording gradients.
pub fn layer_outputs(
    cfg: &ModelConfig,
    params: &ParameterSet,
    w: &Waveform,
    mask: Option<&MaskSpec>,
    precision: Precision,
) -> Result<LayerOutputs> {
    let mut g = Graph::inference(precision);
    let bound = params.bind(&mut g);
    let layers = branch_graph(&mut g, cfg, &bound, w, mask)?;
    LayerOutputs::new(layers.iter().map(|&n| g.value(n).clone()).collect())
}

/// Targets: top-M average of the unmasked branch.
pub fn teacher_targets(
    cfg: &ModelConfig,
    teacher: &ParameterSet,
    clean: &Waveform,
    precision: Precision,
) -> Result<FeatureSequence> {
    let lo = layer_outputs(cfg, teacher, clean, None, precision)?;
    average_top_m(&lo, cfg.transformer.top_m)
}

/// Final-layer output of the masked branch.
pub fn predictions(
    cfg: &ModelConfig,
    student: &ParameterSet,
    noisy: &Waveform,
    mask: &MaskSpec,
    precision: Precision,
) -> Result<Matrix> {
    let lo = layer_outputs(cfg, student, noisy, Some(mask), precision)?;
    Ok(lo.last().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::synth_utterance;

    #[test]
    fn toy_shapes() {
        let cfg = ModelConfig::toy();
        cfg.validate().unwrap();
        let p = cfg.init_params(1);
        let w = synth_utterance(2, 1.0, 16_000).unwrap();
        let tar = teacher_targets(&cfg, &p, &w, Precision::F64).unwrap();
        assert_eq!((tar.len(), tar.dim()), (49, 32));
        let mask = MaskSpec::from_spans(49, &[3], 10);
        let pre = predictions(&cfg, &p, &w, &mask, Precision::F64).unwrap();
        assert_eq!(pre.shape(), (49, 32));
        assert!(pre.is_finite());
    }

    #[test]
    fn init_is_seeded_and_partitioned() {
        let cfg = ModelConfig::toy();
        assert_eq!(cfg.init_params(3), cfg.init_params(3));
        assert_ne!(cfg.init_params(3), cfg.init_params(4));
        let p = cfg.init_params(3);
        assert!(p.names().any(is_transformer_param));
        assert!(p.names().any(|n| !is_transformer_param(n)));
    }

    #[test]
    fn unmasked_prediction_matches_top_layer() {
        let cfg = ModelConfig::toy();
        let p = cfg.init_params(5);
        let w = synth_utterance(6, 0.5, 16_000).unwrap();
        let lo = layer_outputs(&cfg, &p, &w, None, Precision::F64).unwrap();
        let pre = predictions(&cfg, &p, &w, &MaskSpec::none(lo.last().rows()), Precision::F64).unwrap();
        assert_eq!(&pre, lo.last());
    }
}
