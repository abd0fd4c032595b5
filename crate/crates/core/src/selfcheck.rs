//! Finite-difference audit of every analytic gradient used in training.

use serde::Serialize;

use crate::context::{MaskSpec, TransformerConfig};
use crate::ema::ParameterSet;
use crate::encoder::{ConvLayer, ConvSpec};
use crate::error::Result;
use crate::model::{branch_graph, ModelConfig};
use crate::negatives::{NegativePool, Provenance};
use crate::numeric::{finite_difference_gradient, relative_error, Graph, Matrix, NodeId, SeededRng};
use crate::objectives::{
    contrastive_grad, contrastive_loss, regression_grad, regression_loss, step_objective, step_objective_node,
    Ablation, LossConfig,
};
use crate::signal::synth_utterance;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_relative_error: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

fn randn(rng: &mut SeededRng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.normal())
}

fn random_pool(rng: &mut SeededRng, n: usize, d: usize) -> NegativePool {
    let mut pool = NegativePool::new();
    for i in 0..n {
        let p = if i % 2 == 0 {
            Provenance::Standard
        } else {
            Provenance::NonSemantic
        };
        pool.push((0..d).map(|_| rng.normal()).collect(), p, i);
    }
    pool
}

fn random_mask(rng: &mut SeededRng, t: usize) -> MaskSpec {
    let start = rng.index(t);
    let span = rng.int_inclusive(1, t);
    MaskSpec::from_spans(t, &[start], span)
}

fn check(
    name: &'static str,
    instances: usize,
    mut case: impl FnMut(&mut SeededRng) -> Result<f64>,
    rng: &SeededRng,
) -> Result<GradientCheck> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        worst = worst.max(case(&mut rng.child(format!("{name}/{i}")))?);
    }
    Ok(GradientCheck {
        name,
        instances,
        max_relative_error: worst,
    })
}

fn regression_case(rng: &mut SeededRng) -> Result<f64> {
    let (t, d) = (rng.int_inclusive(2, 8), rng.int_inclusive(1, 6));
    let pre = randn(rng, t, d);
    let tar = randn(rng, t, d);
    let beta = rng.uniform(0.2, 2.0)?;
    let mask = random_mask(rng, t);
    let analytic = regression_grad(&pre, &tar, &mask, beta)?;
    let numeric = finite_difference_gradient(|m| regression_loss(m, &tar, &mask, beta).unwrap(), &pre, STEP)?;
    Ok(relative_error(&analytic, &numeric))
}

fn contrastive_case(rng: &mut SeededRng) -> Result<f64> {
    let d = rng.int_inclusive(2, 8);
    let n = rng.int_inclusive(1, 12);
    let pre = randn(rng, 1, d);
    let tar: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let pool = random_pool(rng, n, d);
    let kappa = rng.uniform(0.05, 1.0)?;
    let analytic = Matrix::row_vector(&contrastive_grad(pre.data(), &tar, &pool, kappa)?);
    let numeric = finite_difference_gradient(|m| contrastive_loss(m.data(), &tar, &pool, kappa).unwrap(), &pre, STEP)?;
    Ok(relative_error(&analytic, &numeric))
}

fn step_objective_case(rng: &mut SeededRng) -> Result<f64> {
    let (t, d) = (rng.int_inclusive(2, 8), rng.int_inclusive(2, 6));
    let pre = randn(rng, t, d);
    let tar = randn(rng, t, d);
    let mask = random_mask(rng, t);
    let pools: Vec<NegativePool> = (0..mask.count()).map(|_| random_pool(rng, 6, d)).collect();
    let cfg = LossConfig {
        beta: rng.uniform(0.2, 2.0)?,
        kappa: rng.uniform(0.05, 1.0)?,
        lambda: rng.uniform(0.0, 2.0)?,
        ablation: Ablation::JointNonsemantic,
    };
    let mut g = Graph::new();
    let x = g.param(pre.clone());
    let (loss, _) = step_objective_node(&mut g, x, &tar, &mask, &pools, &cfg)?;
    let analytic = g.backward(loss)?.get_or_zeros(&g, x);
    let numeric = finite_difference_gradient(
        |m| step_objective(m, &tar, &mask, &pools, &cfg).unwrap().total,
        &pre,
        STEP,
    )?;
    Ok(relative_error(&analytic, &numeric))
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        conv: ConvSpec {
            layers: vec![
                ConvLayer {
                    kernel: 10,
                    stride: 5,
                    channels: 4,
                },
                ConvLayer {
                    kernel: 3,
                    stride: 2,
                    channels: 6,
                },
            ],
        },
        transformer: TransformerConfig {
            layers: 2,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            top_m: 2,
            positional: true,
            positional_scale: 1.0,
        },
    }
}

// Small tensors spread over the whole student branch.
const MODEL_PARAMS: [&str; 6] = [
    "encoder.conv1.bias",
    "context.proj.bias",
    "context.mask_emb",
    "context.layer0.attn.bq",
    "context.layer1.ffn.b1",
    "context.final_norm.gamma",
];

fn model_case(rng: &mut SeededRng) -> Result<f64> {
    let cfg = tiny_model();
    let mut params = ParameterSet::new();
    let mut init = rng.child("init");
    cfg.conv.init_params(&mut init, &mut params);
    cfg.transformer
        .init_params(cfg.conv.out_channels(), &mut init, &mut params);
    let w = synth_utterance(rng.int_inclusive(0, 1 << 20) as u64, 0.01, 16_000)?;
    let t = cfg.frames(w.len())?;
    let tar = randn(rng, t, cfg.transformer.model_dim);
    let mask = random_mask(rng, t);
    let pools: Vec<NegativePool> = (0..mask.count())
        .map(|_| random_pool(rng, 4, cfg.transformer.model_dim))
        .collect();
    let loss_cfg = LossConfig::default();
    let name = MODEL_PARAMS[rng.index(MODEL_PARAMS.len())];
    let eval = |p: &ParameterSet| -> Result<(Graph, NodeId, NodeId)> {
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let layers = branch_graph(&mut g, &cfg, &bound, &w, Some(&mask))?;
        let (loss, _) = step_objective_node(&mut g, *layers.last().unwrap(), &tar, &mask, &pools, &loss_cfg)?;
        Ok((g, loss, bound.id(name)?))
    };
    let (g, loss, x) = eval(&params)?;
    let analytic = g.backward(loss)?.get_or_zeros(&g, x);
    let numeric = finite_difference_gradient(
        |m| {
            let mut p = params.clone();
            *p.get_mut(name).unwrap() = m.clone();
            let (g, loss, _) = eval(&p).unwrap();
            g.value(loss).data()[0]
        },
        params.get(name)?,
        STEP,
    )?;
    Ok(relative_error(&analytic, &numeric))
}

/// Runs `instances` random cases per check. The end-to-end model check
/// uses a tenth as many because every case rebuilds the network.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<GradientCheck>> {
    let rng = SeededRng::new(seed, "gradcheck");
    Ok(vec![
        check("regression", instances, regression_case, &rng)?,
        check("contrastive", instances, contrastive_case, &rng)?,
        check("step_objective", instances, step_objective_case, &rng)?,
        check("student_branch", instances.div_ceil(10), model_case, &rng)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let checks = gradient_suite(5, 1).unwrap();
        assert_eq!(checks.len(), 4);
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
        assert_eq!(checks[3].instances, 1);
    }
}
