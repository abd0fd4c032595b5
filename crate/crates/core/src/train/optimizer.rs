//! Adam with bias correction and a linear-warmup learning rate.

use crate::ema::ParameterSet;
use crate::error::Result;
use crate::numeric::Matrix;
use crate::train::config::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// First-moment estimates, same structure as the parameters.
    pub m: ParameterSet,
    /// Second-moment estimates.
    pub v: ParameterSet,
    /// Updates applied so far.
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &ParameterSet) -> Self {
        let zeros = |p: &ParameterSet| {
            let mut z = ParameterSet::new();
            for (name, m) in p.iter() {
                z.insert(name, Matrix::zeros(m.rows(), m.cols()));
            }
            z
        };
        Self {
            config,
            m: zeros(like),
            v: zeros(like),
            t: 0,
        }
    }

    /// One update of `params` along `grads` with step size `lr`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
        params.check_same_structure(grads)?;
        params.check_same_structure(&self.m)?;
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powf(self.t as f64);
        let bc2 = 1.0 - c.beta2.powf(self.t as f64);
        let moments = self.m.iter_mut().zip(self.v.iter_mut());
        for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((pv, &gv), (mv, vv)) in it {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate for the update at `step` (0-based): linear ramp over
/// `warmup` updates, then constant at `peak`.
pub fn learning_rate(peak: f64, warmup: u64, step: u64) -> f64 {
    if warmup == 0 || step >= warmup {
        peak
    } else {
        peak * (step + 1) as f64 / warmup as f64
    }
}
