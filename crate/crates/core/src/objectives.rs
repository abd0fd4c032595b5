//! Smooth-L1 regression, the contrastive term over target and negatives,
//! and their weighted sum, evaluated at masked time steps.

use serde::{Deserialize, Serialize};

use crate::context::MaskSpec;
use crate::error::{Error, Result};
use crate::negatives::{NegativeCounts, NegativePool, PoolPlan};
use crate::numeric::{cosine_grad_lhs, cosine_unchecked, log_sum_exp, softmax, CustomOp, Graph, Matrix, NodeId};

/// Which loss terms and negative kinds are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    RegressionOnly,
    /// Contrastive term with standard negatives only.
    JointStandard,
    /// Standard plus non-semantic negatives, unfiltered.
    JointNonsemantic,
    /// Standard plus non-semantic negatives, keeping the `k` hardest.
    #[default]
    JointNonsemanticRemoval,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::RegressionOnly,
        Ablation::JointStandard,
        Ablation::JointNonsemantic,
        Ablation::JointNonsemanticRemoval,
    ];

    /// Pool recipe for this switch. The standard-only switch spends the
    /// combined budget on standard negatives.
    pub fn plan(&self, counts: &NegativeCounts) -> Option<PoolPlan> {
        match self {
            Ablation::RegressionOnly => None,
            Ablation::JointStandard => Some(PoolPlan {
                standard: counts.standard + counts.non_semantic,
                non_semantic: 0,
                keep: None,
            }),
            Ablation::JointNonsemantic => Some(PoolPlan {
                standard: counts.standard,
                non_semantic: counts.non_semantic,
                keep: None,
            }),
            Ablation::JointNonsemanticRemoval => Some(PoolPlan {
                standard: counts.standard,
                non_semantic: counts.non_semantic,
                keep: Some(counts.k),
            }),
        }
    }

    pub fn uses_contrastive(&self) -> bool {
        !matches!(self, Ablation::RegressionOnly)
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "regression_only" => Ok(Ablation::RegressionOnly),
            "joint_standard" => Ok(Ablation::JointStandard),
            "joint_nonsemantic" => Ok(Ablation::JointNonsemantic),
            "joint_nonsemantic_removal" => Ok(Ablation::JointNonsemanticRemoval),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Smooth-L1 transition point.
    pub beta: f64,
    /// Contrastive temperature.
    pub kappa: f64,
    /// Weight of the contrastive term.
    pub lambda: f64,
    pub ablation: Ablation,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            kappa: 0.1,
            lambda: 1.0,
            ablation: Ablation::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.kappa > 0.0 && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "need beta > 0, kappa > 0, lambda >= 0; got {}, {}, {}",
                self.beta, self.kappa, self.lambda
            )));
        }
        Ok(())
    }
}

/// `d^2 / (2 beta)` for `|d| <= beta`, else `|d| - beta / 2`.
pub fn smooth_l1(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a <= beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1`] in `d`.
pub fn smooth_l1_grad(d: f64, beta: f64) -> f64 {
    if d.abs() <= beta {
        d / beta
    } else {
        d.signum()
    }
}

fn check_pair(c_pre: &Matrix, c_tar: &Matrix, mask: &MaskSpec) -> Result<()> {
    if c_pre.shape() != c_tar.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} and targets {:?} differ",
            c_pre.shape(),
            c_tar.shape()
        )));
    }
    if mask.len() != c_pre.rows() {
        return Err(Error::Shape(format!(
            "mask covers {} steps, sequence has {}",
            mask.len(),
            c_pre.rows()
        )));
    }
    Ok(())
}

/// Smooth-L1 averaged over masked frames and dimensions.
pub fn regression_loss(c_pre: &Matrix, c_tar: &Matrix, mask: &MaskSpec, beta: f64) -> Result<f64> {
    check_pair(c_pre, c_tar, mask)?;
    let masked = mask.masked_indices();
    if masked.is_empty() {
        return Err(Error::Domain("regression loss needs at least one masked step".into()));
    }
    let mut total = 0.0;
    for &t in &masked {
        for (p, q) in c_pre.row(t).iter().zip(c_tar.row(t)) {
            total += smooth_l1(p - q, beta);
        }
    }
    Ok(total / (masked.len() * c_pre.cols()) as f64)
}

/// Gradient of [`regression_loss`] with respect to `c_pre`.
pub fn regression_grad(c_pre: &Matrix, c_tar: &Matrix, mask: &MaskSpec, beta: f64) -> Result<Matrix> {
    check_pair(c_pre, c_tar, mask)?;
    let masked = mask.masked_indices();
    if masked.is_empty() {
        return Err(Error::Domain("regression loss needs at least one masked step".into()));
    }
    let n = (masked.len() * c_pre.cols()) as f64;
    let mut g = Matrix::zeros(c_pre.rows(), c_pre.cols());
    for &t in &masked {
        let (p, q) = (c_pre.row(t), c_tar.row(t));
        for (c, o) in g.row_mut(t).iter_mut().enumerate() {
            *o = smooth_l1_grad(p[c] - q[c], beta) / n;
        }
    }
    Ok(g)
}

fn logits(c_pre_t: &[f64], c_tar_t: &[f64], pool: &NegativePool, kappa: f64) -> Result<Vec<f64>> {
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!("temperature {kappa} must be positive")));
    }
    let d = c_pre_t.len();
    if d == 0 || c_tar_t.len() != d || pool.frames().iter().any(|f| f.len() != d) {
        return Err(Error::Shape("contrastive inputs have mismatched dimensions".into()));
    }
    let mut z = Vec::with_capacity(pool.len() + 1);
    z.push(cosine_unchecked(c_pre_t, c_tar_t) / kappa);
    z.extend(pool.frames().iter().map(|f| cosine_unchecked(c_pre_t, f) / kappa));
    Ok(z)
}

/// `-log softmax` of the target's similarity among the target and the pool,
/// with similarities divided by `kappa`.
pub fn contrastive_loss(c_pre_t: &[f64], c_tar_t: &[f64], pool: &NegativePool, kappa: f64) -> Result<f64> {
    let z = logits(c_pre_t, c_tar_t, pool, kappa)?;
    Ok(log_sum_exp(&z)? - z[0])
}

/// Gradient of [`contrastive_loss`] with respect to `c_pre_t`.
pub fn contrastive_grad(c_pre_t: &[f64], c_tar_t: &[f64], pool: &NegativePool, kappa: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; c_pre_t.len()];
    accumulate_contrastive_grad(c_pre_t, c_tar_t, pool, kappa, 1.0, &mut g)?;
    Ok(g)
}

fn accumulate_contrastive_grad(
    c_pre_t: &[f64],
    c_tar_t: &[f64],
    pool: &NegativePool,
    kappa: f64,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let z = logits(c_pre_t, c_tar_t, pool, kappa)?;
    let p = softmax(&z);
    cosine_grad_lhs(c_pre_t, c_tar_t, scale * (p[0] - 1.0) / kappa, out);
    for (f, &pj) in pool.frames().iter().zip(&p[1..]) {
        cosine_grad_lhs(c_pre_t, f, scale * pj / kappa, out);
    }
    Ok(())
}

pub fn total_loss(reg: f64, con: f64, lambda: f64) -> f64 {
    reg + lambda * con
}

/// Loss values and similarity samples of one utterance at one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLossReport {
    pub regression: f64,
    pub contrastive: f64,
    pub total: f64,
    pub masked_count: usize,
    /// Similarity of each masked prediction with its target.
    pub positive_similarities: Vec<f64>,
    /// Similarity of each masked prediction with each of its negatives.
    pub negative_similarities: Vec<f64>,
}

impl StepLossReport {
    pub fn mean_positive_similarity(&self) -> f64 {
        crate::numeric::mean(&self.positive_similarities)
    }
}

fn check_pools(mask: &MaskSpec, pools: &[NegativePool], cfg: &LossConfig) -> Result<Vec<usize>> {
    let masked = mask.masked_indices();
    if masked.is_empty() {
        return Err(Error::Domain("objective needs at least one masked step".into()));
    }
    if cfg.ablation.uses_contrastive() && pools.len() != masked.len() {
        return Err(Error::Shape(format!(
            "{} pools for {} masked steps",
            pools.len(),
            masked.len()
        )));
    }
    if !cfg.ablation.uses_contrastive() && !pools.is_empty() {
        return Err(Error::Config(
            "regression-only objective received negative pools".into(),
        ));
    }
    Ok(masked)
}

/// Regression, contrastive and total losses of one utterance plus the
/// similarity samples. `pools[i]` belongs to the `i`-th masked step.
pub fn step_objective(
    c_pre: &Matrix,
    c_tar: &Matrix,
    mask: &MaskSpec,
    pools: &[NegativePool],
    cfg: &LossConfig,
) -> Result<StepLossReport> {
    cfg.validate()?;
    check_pair(c_pre, c_tar, mask)?;
    let masked = check_pools(mask, pools, cfg)?;
    let regression = regression_loss(c_pre, c_tar, mask, cfg.beta)?;
    let mut report = StepLossReport {
        regression,
        masked_count: masked.len(),
        ..StepLossReport::default()
    };
    let mut con = 0.0;
    for (i, &t) in masked.iter().enumerate() {
        report
            .positive_similarities
            .push(cosine_unchecked(c_pre.row(t), c_tar.row(t)));
        if let Some(pool) = pools.get(i) {
            con += contrastive_loss(c_pre.row(t), c_tar.row(t), pool, cfg.kappa)?;
            report
                .negative_similarities
                .extend(pool.frames().iter().map(|f| cosine_unchecked(c_pre.row(t), f)));
        }
    }
    if cfg.ablation.uses_contrastive() {
        report.contrastive = con / masked.len() as f64;
    }
    report.total = total_loss(report.regression, report.contrastive, cfg.lambda);
    Ok(report)
}

struct RegressionOp {
    grad: Matrix,
}

impl CustomOp for RegressionOp {
    fn name(&self) -> &str {
        "smooth_l1"
    }

    fn backward(&self, _: &[&Matrix], _: &Matrix, grad_out: &Matrix) -> Vec<Option<Matrix>> {
        vec![Some(self.grad.scale(grad_out.data()[0]))]
    }
}

struct ContrastiveOp {
    grad: Matrix,
}

impl CustomOp for ContrastiveOp {
    fn name(&self) -> &str {
        "contrastive"
    }

    fn backward(&self, _: &[&Matrix], _: &Matrix, grad_out: &Matrix) -> Vec<Option<Matrix>> {
        vec![Some(self.grad.scale(grad_out.data()[0]))]
    }
}

/// Records [`regression_loss`] on `graph` as a function of the `c_pre` node.
pub fn regression_node(graph: &mut Graph, c_pre: NodeId, c_tar: &Matrix, mask: &MaskSpec, beta: f64) -> Result<NodeId> {
    let pre = graph.value(c_pre);
    let value = regression_loss(pre, c_tar, mask, beta)?;
    let grad = regression_grad(pre, c_tar, mask, beta)?;
    Ok(graph.custom(&[c_pre], Matrix::scalar(value), Box::new(RegressionOp { grad })))
}

/// Records the mean contrastive loss over masked steps on `graph`.
pub fn contrastive_node(
    graph: &mut Graph,
    c_pre: NodeId,
    c_tar: &Matrix,
    mask: &MaskSpec,
    pools: &[NegativePool],
    kappa: f64,
) -> Result<NodeId> {
    let pre = graph.value(c_pre);
    check_pair(pre, c_tar, mask)?;
    let masked = mask.masked_indices();
    if masked.is_empty() || pools.len() != masked.len() {
        return Err(Error::Shape(format!(
            "{} pools for {} masked steps",
            pools.len(),
            masked.len()
        )));
    }
    let inv = 1.0 / masked.len() as f64;
    let mut grad = Matrix::zeros(pre.rows(), pre.cols());
    let mut value = 0.0;
    for (&t, pool) in masked.iter().zip(pools) {
        value += contrastive_loss(pre.row(t), c_tar.row(t), pool, kappa)?;
        accumulate_contrastive_grad(pre.row(t), c_tar.row(t), pool, kappa, inv, grad.row_mut(t))?;
    }
    Ok(graph.custom(&[c_pre], Matrix::scalar(value * inv), Box::new(ContrastiveOp { grad })))
}

/// [`step_objective`] recorded on `graph`; returns the total-loss node.
pub fn step_objective_node(
    graph: &mut Graph,
    c_pre: NodeId,
    c_tar: &Matrix,
    mask: &MaskSpec,
    pools: &[NegativePool],
    cfg: &LossConfig,
) -> Result<(NodeId, StepLossReport)> {
    let report = step_objective(graph.value(c_pre), c_tar, mask, pools, cfg)?;
    let reg = regression_node(graph, c_pre, c_tar, mask, cfg.beta)?;
    if !cfg.ablation.uses_contrastive() || cfg.lambda == 0.0 {
        return Ok((reg, report));
    }
    let con = contrastive_node(graph, c_pre, c_tar, mask, pools, cfg.kappa)?;
    let weighted = graph.scale(con, cfg.lambda);
    Ok((graph.add(reg, weighted), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::negatives::Provenance;
    use crate::numeric::{finite_difference_gradient, relative_error, SeededRng};
    use proptest::prelude::*;

    fn random(rng: &mut SeededRng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.normal())
    }

    fn random_pool(rng: &mut SeededRng, n: usize, d: usize) -> NegativePool {
        let mut pool = NegativePool::new();
        for i in 0..n {
            pool.push((0..d).map(|_| rng.normal()).collect(), Provenance::Standard, i);
        }
        pool
    }

    // Softmax cross-entropy written out without max-shifting.
    fn brute_contrastive(pre: &[f64], tar: &[f64], pool: &NegativePool, kappa: f64) -> f64 {
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        let num = (cos(pre, tar) / kappa).exp();
        let den = num + pool.frames().iter().map(|f| (cos(pre, f) / kappa).exp()).sum::<f64>();
        -(num / den).ln()
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.5, 1.0), 0.125);
        assert_eq!(smooth_l1(2.0, 1.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 1.0), 1.5);
        let m = Matrix::row_vector(&[0.5]);
        let z = Matrix::row_vector(&[0.0]);
        let mask = MaskSpec::from_spans(1, &[0], 1);
        assert_eq!(regression_loss(&m, &z, &mask, 1.0).unwrap(), 0.125);
        assert_eq!(regression_loss(&m, &m, &mask, 1.0).unwrap(), 0.0);
        assert!(matches!(
            regression_loss(&m, &z, &MaskSpec::none(1), 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn smooth_l1_is_c1_at_the_transition() {
        let beta = 0.7;
        let h = 1e-7;
        for s in [-1.0, 1.0] {
            let at = s * beta;
            assert!((smooth_l1(at - h, beta) - smooth_l1(at + h, beta)).abs() < 2e-7);
            let left = (smooth_l1(at, beta) - smooth_l1(at - h, beta)) / h;
            let right = (smooth_l1(at + h, beta) - smooth_l1(at, beta)) / h;
            assert!((left - right).abs() < 1e-5, "{left} {right}");
            assert!((left - s).abs() < 1e-5);
        }
    }

    #[test]
    fn contrastive_examples() {
        let pre = [0.3, -1.0, 2.0];
        let tar = [1.0, 0.5, 0.2];
        assert_eq!(contrastive_loss(&pre, &tar, &NegativePool::new(), 0.1).unwrap(), 0.0);
        for kappa in [0.05, 0.1, 1.0, 3.0] {
            let mut pool = NegativePool::new();
            pool.push(tar.to_vec(), Provenance::Standard, 0);
            let l = contrastive_loss(&pre, &tar, &pool, kappa).unwrap();
            assert!((l - 2f64.ln()).abs() < 1e-12);
        }
        let mut rng = SeededRng::new(0, "x");
        let pool = random_pool(&mut rng, 6, 3);
        let l = contrastive_loss(&pre, &tar, &pool, 0.5).unwrap();
        assert!((l - brute_contrastive(&pre, &tar, &pool, 0.5)).abs() < 1e-10);
        assert!(contrastive_loss(&pre, &tar, &pool, 0.0).is_err());
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(0.3, 0.9, 0.0), 0.3);
        assert!((total_loss(0.3, 0.7, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn temperature_sharpens_the_gap() {
        let pre = [1.0, 0.0];
        let tar = [1.0, 0.1];
        let mut separated = NegativePool::new();
        separated.push(vec![0.0, 1.0], Provenance::Standard, 0);
        separated.push(vec![-1.0, 0.3], Provenance::Standard, 1);
        let mut uniform = NegativePool::new();
        uniform.push(tar.to_vec(), Provenance::Standard, 0);
        uniform.push(tar.to_vec(), Provenance::Standard, 1);
        let mut last = f64::NEG_INFINITY;
        for kappa in [2.0, 1.0, 0.5, 0.2, 0.1, 0.05] {
            let gap = contrastive_loss(&pre, &tar, &uniform, kappa).unwrap()
                - contrastive_loss(&pre, &tar, &separated, kappa).unwrap();
            assert!(gap > last, "kappa {kappa}: {gap} <= {last}");
            last = gap;
        }
    }

    #[test]
    fn regression_only_report() {
        let mut rng = SeededRng::new(1, "x");
        let pre = random(&mut rng, 6, 4);
        let tar = random(&mut rng, 6, 4);
        let mask = MaskSpec::from_spans(6, &[1], 3);
        let cfg = LossConfig {
            ablation: Ablation::RegressionOnly,
            ..LossConfig::default()
        };
        let r = step_objective(&pre, &tar, &mask, &[], &cfg).unwrap();
        assert_eq!(r.contrastive, 0.0);
        assert_eq!(r.total, r.regression);
        assert_eq!(r.masked_count, 3);
        assert_eq!(r.positive_similarities.len(), 3);
        assert!(r.negative_similarities.is_empty());
        let pool = random_pool(&mut rng, 2, 4);
        assert!(step_objective(&pre, &tar, &mask, &[pool.clone(), pool.clone(), pool], &cfg).is_err());
    }

    #[test]
    fn ablation_plans() {
        let c = NegativeCounts::default();
        assert_eq!(Ablation::RegressionOnly.plan(&c), None);
        let p = Ablation::JointStandard.plan(&c).unwrap();
        assert_eq!((p.standard, p.non_semantic, p.kept()), (100, 0, 100));
        let p = Ablation::JointNonsemantic.plan(&c).unwrap();
        assert_eq!((p.standard, p.non_semantic, p.kept()), (50, 50, 100));
        let p = Ablation::JointNonsemanticRemoval.plan(&c).unwrap();
        assert_eq!((p.standard, p.non_semantic, p.kept()), (50, 50, 50));
        assert_eq!("joint-standard".parse::<Ablation>().unwrap(), Ablation::JointStandard);
        assert!("nope".parse::<Ablation>().is_err());
    }

    #[test]
    fn step_objective_matches_straight_line_oracle() {
        let mut rng = SeededRng::new(2, "x");
        let (t, d) = (9, 5);
        let pre = random(&mut rng, t, d);
        let tar = random(&mut rng, t, d);
        let mask = MaskSpec::from_spans(t, &[2, 6], 2);
        let pools: Vec<NegativePool> = (0..mask.count()).map(|_| random_pool(&mut rng, 4, d)).collect();
        let cfg = LossConfig {
            beta: 0.8,
            kappa: 0.3,
            lambda: 0.7,
            ablation: Ablation::JointNonsemantic,
        };
        let r = step_objective(&pre, &tar, &mask, &pools, &cfg).unwrap();
        let masked = [2, 3, 6, 7];
        let mut reg = 0.0;
        for &i in &masked {
            for c in 0..d {
                let e = (pre.get(i, c) - tar.get(i, c)).abs();
                reg += if e < 0.8 { e * e / 1.6 } else { e - 0.4 };
            }
        }
        reg /= (masked.len() * d) as f64;
        let con: f64 = masked
            .iter()
            .zip(&pools)
            .map(|(&i, p)| brute_contrastive(pre.row(i), tar.row(i), p, 0.3))
            .sum::<f64>()
            / masked.len() as f64;
        assert!((r.regression - reg).abs() < 1e-9);
        assert!((r.contrastive - con).abs() < 1e-9);
        assert!((r.total - (reg + 0.7 * con)).abs() < 1e-9);
        assert_eq!(r.negative_similarities.len(), 16);
        let mut g = Graph::new();
        let x = g.param(pre.clone());
        let (loss, _) = step_objective_node(&mut g, x, &tar, &mask, &pools, &cfg).unwrap();
        assert!((g.value(loss).data()[0] - r.total).abs() < 1e-12);
    }

    #[test]
    fn step_objective_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(3, "x");
        for case in 0..20 {
            let (t, d) = (6, 4);
            let pre = random(&mut rng, t, d);
            let tar = random(&mut rng, t, d);
            let mask = MaskSpec::from_spans(t, &[case % 4], 2);
            let pools: Vec<NegativePool> = (0..mask.count()).map(|_| random_pool(&mut rng, 5, d)).collect();
            let cfg = LossConfig::default();
            let mut g = Graph::new();
            let x = g.param(pre.clone());
            let (loss, _) = step_objective_node(&mut g, x, &tar, &mask, &pools, &cfg).unwrap();
            let analytic = g.backward(loss).unwrap().get_or_zeros(&g, x);
            let numeric = finite_difference_gradient(
                |m| step_objective(m, &tar, &mask, &pools, &cfg).unwrap().total,
                &pre,
                1e-5,
            )
            .unwrap();
            assert!(relative_error(&analytic, &numeric) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn contrastive_matches_brute_force(seed: u64, n in 0usize..=12, d in 1usize..8, kappa in 0.05f64..2.0) {
            let mut rng = SeededRng::new(seed, "c");
            let pre: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let tar: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let pool = random_pool(&mut rng, n, d);
            let l = contrastive_loss(&pre, &tar, &pool, kappa).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!((l - brute_contrastive(&pre, &tar, &pool, kappa)).abs() < 1e-10);
        }

        #[test]
        fn contrastive_ignores_target_scale(seed: u64, alpha in 1e-3f64..1e3) {
            let mut rng = SeededRng::new(seed, "s");
            let pre: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let tar: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let pool = random_pool(&mut rng, 5, 6);
            let scaled: Vec<f64> = tar.iter().map(|v| alpha * v).collect();
            let a = contrastive_loss(&pre, &tar, &pool, 0.1).unwrap();
            let b = contrastive_loss(&pre, &scaled, &pool, 0.1).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn contrastive_gradient_matches_finite_differences(seed: u64, n in 0usize..8) {
            let mut rng = SeededRng::new(seed, "g");
            let pre = random(&mut rng, 1, 5);
            let tar: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let pool = random_pool(&mut rng, n, 5);
            let analytic = Matrix::row_vector(&contrastive_grad(pre.data(), &tar, &pool, 0.2).unwrap());
            let numeric = finite_difference_gradient(
                |m| contrastive_loss(m.data(), &tar, &pool, 0.2).unwrap(),
                &pre,
                1e-5,
            ).unwrap();
            prop_assert!(relative_error(&analytic, &numeric) < 1e-4);
        }

        #[test]
        fn regression_gradient_matches_finite_differences(seed: u64, beta in 0.1f64..2.0) {
            let mut rng = SeededRng::new(seed, "r");
            let pre = random(&mut rng, 5, 3);
            let tar = random(&mut rng, 5, 3);
            let mask = MaskSpec::from_spans(5, &[1], 3);
            let analytic = regression_grad(&pre, &tar, &mask, beta).unwrap();
            let numeric = finite_difference_gradient(
                |m| regression_loss(m, &tar, &mask, beta).unwrap(),
                &pre,
                1e-5,
            ).unwrap();
            prop_assert!(relative_error(&analytic, &numeric) < 1e-4);
        }
    }
}
