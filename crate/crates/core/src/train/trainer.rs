//! The pre-training loop: clean teacher targets, noisy masked student,
//! joint loss, Adam and the EMA teacher update.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{sample_mask, MaskSpec};
use crate::ema::{ema_update, ema_update_scoped, init_teacher, EmaScope, ParameterSet};
use crate::error::{Error, Result};
use crate::model::{branch_graph, is_transformer_param, teacher_targets};
use crate::negatives::{annealed_k, build_pools, PoolPlan};
use crate::numeric::{Graph, SeededRng};
use crate::objectives::{step_objective_node, StepLossReport};
use crate::train::checkpoint::Checkpoint;
use crate::train::config::{LossSupport, TrainConfig};
use crate::train::corpus::{Corpus, Pair};
use crate::train::optimizer::{learning_rate, Adam};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Completed updates, counting this one.
    pub step: u64,
    pub regression: f64,
    pub contrastive: f64,
    pub total: f64,
    /// EMA decay applied after this update.
    pub tau: f64,
    pub learning_rate: f64,
    pub masked_count: usize,
}

impl StepRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed updates.
    pub step: u64,
    pub student: ParameterSet,
    pub teacher: ParameterSet,
    pub adam: Adam,
}

impl TrainState {
    /// Student from the seed; teacher a copy of it.
    pub fn fresh(cfg: &TrainConfig) -> Self {
        let student = cfg.model.init_params(cfg.seed);
        Self {
            step: 0,
            teacher: init_teacher(&student),
            adam: Adam::new(cfg.optimizer, &student),
            student,
        }
    }

    pub fn from_checkpoint(cfg: &TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        if ckpt.config_digest != cfg.digest() {
            return Err(Error::Config("checkpoint was written under a different config".into()));
        }
        let fresh = cfg.model.init_params(cfg.seed);
        fresh.check_same_structure(&ckpt.student)?;
        Ok(Self {
            step: ckpt.step,
            student: ckpt.student,
            teacher: ckpt.teacher,
            adam: Adam {
                config: cfg.optimizer,
                m: ckpt.adam_m,
                v: ckpt.adam_v,
                t: ckpt.step,
            },
        })
    }

    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config_digest: cfg.digest(),
            step: self.step,
            seed: cfg.seed,
            student: self.student.clone(),
            teacher: self.teacher.clone(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
        }
    }
}

/// Student input mask and the steps the losses are evaluated on. Under
/// masked support an empty draw is replaced by one span at a random start.
pub fn draw_masks(cfg: &TrainConfig, frames: usize, rng: &mut SeededRng) -> (MaskSpec, MaskSpec) {
    let mut mask = sample_mask(frames, cfg.mask.prob, cfg.mask.span, rng);
    match cfg.loss_support {
        LossSupport::Masked => {
            if mask.count() == 0 {
                let start = rng.index(frames);
                mask = MaskSpec::from_spans(frames, &[start], cfg.mask.span);
            }
            (mask.clone(), mask)
        }
        LossSupport::All => (mask, MaskSpec::from_spans(frames, &[0], frames)),
    }
}

/// Pool recipe at `step`, with the kept count annealed when configured.
pub fn plan_at(cfg: &TrainConfig, step: u64) -> Option<PoolPlan> {
    let mut plan = cfg.pool_plan()?;
    if let Some(k) = plan.keep {
        plan.keep = Some(annealed_k(plan.pool_size(), k, step, cfg.negatives.k_anneal_steps));
    }
    Some(plan)
}

struct UtteranceOutcome {
    report: StepLossReport,
    grads: ParameterSet,
}

fn utterance(cfg: &TrainConfig, state: &TrainState, pair: &Pair, rng: &SeededRng) -> Result<UtteranceOutcome> {
    let c_tar = teacher_targets(&cfg.model, &state.teacher, &pair.clean, cfg.precision)?;
    let frames = c_tar.len();
    let student_frames = cfg.model.frames(pair.noisy.len())?;
    if student_frames != frames {
        return Err(Error::Shape(format!(
            "clean and noisy inputs give {frames} and {student_frames} frames"
        )));
    }
    let (input_mask, loss_mask) = draw_masks(cfg, frames, &mut rng.child("mask"));

    let mut g = Graph::with_precision(cfg.precision);
    let bound = state.student.bind(&mut g);
    let layers = branch_graph(&mut g, &cfg.model, &bound, &pair.noisy, Some(&input_mask))?;
    let c_pre = *layers.last().expect("at least one layer");

    let pools = match plan_at(cfg, state.step) {
        Some(plan) => build_pools(
            g.value(c_pre),
            &c_tar,
            &loss_mask.masked_indices(),
            &plan,
            cfg.patch,
            &rng.child("pools"),
        )?,
        None => Vec::new(),
    };
    let (loss, report) = step_objective_node(&mut g, c_pre, c_tar.frames(), &loss_mask, &pools, &cfg.loss)?;
    let grads = g.backward(loss)?;
    let mut out = ParameterSet::new();
    for (name, id) in bound.iter() {
        out.insert(name, grads.get_or_zeros(&g, id));
    }
    Ok(UtteranceOutcome { report, grads: out })
}

/// One update on `batch`. Returns the log record and per-utterance reports.
pub fn train_step(
    state: &mut TrainState,
    batch: &[Pair],
    cfg: &TrainConfig,
) -> Result<(StepRecord, Vec<StepLossReport>)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let step = state.step;
    let root = SeededRng::new(cfg.seed, format!("train/step{step}"));
    let outcomes: Vec<UtteranceOutcome> = batch
        .par_iter()
        .enumerate()
        .map(|(b, pair)| utterance(cfg, state, pair, &root.child(format!("utt{b}"))))
        .collect::<Result<_>>()?;

    let n = outcomes.len() as f64;
    let mut grads = outcomes[0].grads.clone();
    for (_, m) in grads.iter_mut() {
        m.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rec = StepRecord {
        step: step + 1,
        regression: 0.0,
        contrastive: 0.0,
        total: 0.0,
        tau: 0.0,
        learning_rate: learning_rate(cfg.optimizer.lr, cfg.warmup_steps(), step),
        masked_count: 0,
    };
    for o in &outcomes {
        rec.regression += o.report.regression / n;
        rec.contrastive += o.report.contrastive / n;
        rec.total += o.report.total / n;
        rec.masked_count += o.report.masked_count;
        for ((_, acc), (_, g)) in grads.iter_mut().zip(o.grads.iter()) {
            acc.add_scaled(g, 1.0 / n);
        }
    }
    if !rec.total.is_finite() {
        return Err(Error::Divergence {
            step: step + 1,
            detail: format!("loss is {}", rec.total),
        });
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::Divergence {
            step: step + 1,
            detail: format!("gradient of {name} is not finite"),
        });
    }

    state.adam.step(&mut state.student, &grads, rec.learning_rate)?;
    state.step += 1;
    rec.tau = cfg.ema.tau_at(state.step);
    match cfg.ema_scope {
        EmaScope::All => ema_update(&mut state.teacher, &state.student, rec.tau)?,
        EmaScope::TransformerOnly => {
            ema_update_scoped(&mut state.teacher, &state.student, rec.tau, is_transformer_param)?
        }
    }
    Ok((rec, outcomes.into_iter().map(|o| o.report).collect()))
}

/// Config, data and state of a run in progress.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub corpus: Corpus,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let corpus = Corpus::new(&cfg.data, cfg.data_seed())?;
        let state = TrainState::fresh(&cfg);
        Ok(Self { cfg, corpus, state })
    }

    pub fn resume(cfg: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let corpus = Corpus::new(&cfg.data, cfg.data_seed())?;
        let state = TrainState::from_checkpoint(&cfg, ckpt)?;
        Ok(Self { cfg, corpus, state })
    }

    pub fn step(&mut self) -> Result<(StepRecord, Vec<StepLossReport>)> {
        let batch = self.corpus.batch(self.state.step, self.cfg.batch_size)?;
        train_step(&mut self.state, &batch, &self.cfg)
    }

    pub fn done(&self) -> bool {
        self.state.step >= self.cfg.steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.state.checkpoint(&self.cfg)
    }
}

pub const LOG_FILE: &str = "train.jsonl";

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt-{step:08}.rd2v"))
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains to `cfg.steps`, writing the JSON-lines log and checkpoints into
/// `cfg.output_dir` when set. On resume, log lines past the checkpoint are
/// dropped so the log matches an uninterrupted run.
pub fn run(cfg: TrainConfig, resume: Option<Checkpoint>) -> Result<RunSummary> {
    let mut trainer = match resume {
        Some(c) => Trainer::resume(cfg, c)?,
        None => Trainer::new(cfg)?,
    };
    let dir = trainer.cfg.output_dir.clone();
    let mut log = match &dir {
        Some(d) => Some(open_log(d, trainer.state.step)?),
        None => None,
    };
    let mut summary = RunSummary {
        records: Vec::new(),
        checkpoints: Vec::new(),
    };
    if let Some(d) = &dir {
        if trainer.state.step == 0 {
            let p = checkpoint_path(d, 0);
            trainer.checkpoint().save(&p)?;
            summary.checkpoints.push(p);
        }
    }
    while !trainer.done() {
        let (rec, _) = trainer.step()?;
        if let (Some(d), Some(w)) = (&dir, log.as_mut()) {
            writeln!(w, "{}", rec.to_json_line()).map_err(|e| Error::io(d.join(LOG_FILE), e))?;
            let every = trainer.cfg.checkpoint_every;
            if (every > 0 && rec.step % every == 0) || trainer.done() {
                w.flush().map_err(|e| Error::io(d.join(LOG_FILE), e))?;
                let p = checkpoint_path(d, rec.step);
                trainer.checkpoint().save(&p)?;
                summary.checkpoints.push(p);
            }
        }
        summary.records.push(rec);
    }
    if let (Some(d), Some(mut w)) = (&dir, log) {
        w.flush().map_err(|e| Error::io(d.join(LOG_FILE), e))?;
    }
    Ok(summary)
}

fn open_log(dir: &Path, keep_through: u64) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(LOG_FILE);
    let mut kept = Vec::new();
    if keep_through > 0 && path.exists() {
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let rec: StepRecord =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            if rec.step <= keep_through {
                kept.push(line);
            }
        }
    }
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    for line in kept {
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(w)
}
