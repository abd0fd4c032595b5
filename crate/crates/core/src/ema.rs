//! Teacher parameters as an exponential moving average of the student.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Graph, Matrix, NodeId};

/// Named trainable matrices of one branch, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    params: BTreeMap<String, Matrix>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Structure(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Structure(format!("missing parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Matrix::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Same names, each with the same shape.
    pub fn check_same_structure(&self, other: &ParameterSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Structure(format!(
                "parameter sets have {} and {} entries",
                self.params.len(),
                other.params.len()
            )));
        }
        for ((na, a), (nb, b)) in self.params.iter().zip(&other.params) {
            if na != nb {
                return Err(Error::Structure(format!("parameter {na:?} paired with {nb:?}")));
            }
            if a.shape() != b.shape() {
                return Err(Error::Structure(format!(
                    "parameter {na:?} has shapes {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Largest absolute entry-wise difference over all parameters.
    pub fn max_abs_diff(&self, other: &ParameterSet) -> Result<f64> {
        self.check_same_structure(other)?;
        Ok(self
            .params
            .values()
            .zip(other.params.values())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max))
    }

    /// Records every parameter as a leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        BoundParams {
            ids: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), graph.param(v.clone())))
                .collect(),
        }
    }
}

/// Node ids of a [`ParameterSet`] recorded on a graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Structure(format!("parameter {name:?} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Linear ramp of the EMA decay from `tau0` to `tau_e` over `tau_n` updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaSchedule {
    pub tau0: f64,
    pub tau_e: f64,
    pub tau_n: u64,
}

impl Default for EmaSchedule {
    fn default() -> Self {
        Self {
            tau0: 0.999,
            tau_e: 0.9999,
            tau_n: 30_000,
        }
    }
}

impl EmaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau0 && self.tau0 <= self.tau_e && self.tau_e <= 1.0) {
            return Err(Error::Config(format!(
                "EMA schedule needs 0 <= tau0 ({}) <= tau_e ({}) <= 1",
                self.tau0, self.tau_e
            )));
        }
        if self.tau_n == 0 {
            return Err(Error::Config("EMA schedule needs tau_n >= 1".into()));
        }
        Ok(())
    }

    /// Decay at `step`: `tau0 + (tau_e - tau0) * min(step / tau_n, 1)`.
    pub fn tau_at(&self, step: u64) -> f64 {
        if step >= self.tau_n {
            return self.tau_e;
        }
        self.tau0 + (self.tau_e - self.tau0) * (step as f64 / self.tau_n as f64)
    }
}

/// Which parameters the teacher tracks by moving average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaScope {
    /// Every parameter, feature encoder included.
    #[default]
    All,
    /// Only transformer parameters; the rest are copied from the student.
    TransformerOnly,
}

/// Deep copy of the student taken at step 0.
pub fn init_teacher(student: &ParameterSet) -> ParameterSet {
    student.clone()
}

/// `teacher <- tau * teacher + (1 - tau) * student`, entry-wise.
pub fn ema_update(teacher: &mut ParameterSet, student: &ParameterSet, tau: f64) -> Result<()> {
    ema_update_scoped(teacher, student, tau, |_| true)
}

/// [`ema_update`] restricted to names accepted by `tracked`; the other
/// teacher entries are overwritten with the student's values.
pub fn ema_update_scoped(
    teacher: &mut ParameterSet,
    student: &ParameterSet,
    tau: f64,
    tracked: impl Fn(&str) -> bool,
) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("EMA decay {tau} outside [0, 1]")));
    }
    teacher.check_same_structure(student)?;
    for ((name, t), (_, s)) in teacher.params.iter_mut().zip(&student.params) {
        if tracked(name) {
            for (tv, sv) in t.data_mut().iter_mut().zip(s.data()) {
                *tv = tau * *tv + (1.0 - tau) * sv;
            }
        } else {
            t.data_mut().copy_from_slice(s.data());
        }
    }
    Ok(())
}
