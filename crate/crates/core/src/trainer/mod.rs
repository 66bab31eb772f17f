//! Training loop: oracle-mode supervision, decision sampling, Adam with
//! global-norm clipping, per-epoch metrics and best-checkpoint retention.

mod adam;

pub use adam::Adam;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::evaluator::{perplexity, EvalError, PplReport, TreeSource};
use crate::numkernel::{DType, Graph, Gradients, KernelError, RngStream, StreamKind};
use crate::oracle::{left_branching_labels, static_labels, OracleError, OracleMode};
use crate::parallel::map_ordered;
use crate::som::{save_checkpoint, Noise, Policy, SomError, SomModel, Supervision};
use crate::treebank::Sentence;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("sentence {sentence}: {message}")]
    Data { sentence: usize, message: String },
    #[error("non-finite {what} at sentence {sentence}, epoch {epoch}, step {step}")]
    NonFinite { what: String, sentence: usize, epoch: usize, step: u64 },
    #[error("sentence {sentence}: {source}")]
    Model { sentence: usize, source: SomError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Som(#[from] SomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TrainError {
    pub fn is_numeric(&self) -> bool {
        match self {
            TrainError::NonFinite { .. } => true,
            TrainError::Model { source, .. } | TrainError::Som(source) => matches!(source, SomError::Kernel(_)),
            TrainError::Eval(e) => e.is_numeric(),
            _ => false,
        }
    }
}

fn default_mode() -> OracleMode {
    OracleMode::Dynamic
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    10
}
fn default_clip() -> f64 {
    1.0
}
fn default_patience() -> usize {
    5
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_mode")]
    pub mode: OracleMode,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default)]
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Overrides the model's structure-loss weight when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    /// Gradient workers. Results do not depend on this value, so it is
    /// left out of saved configs.
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) outside [0, 1)", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch == 0 || self.epochs == 0 {
            return bad("batch and epochs must be at least 1".into());
        }
        if let Some(l) = self.lambda_s {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lambda_s = {l}"));
            }
        }
        Ok(())
    }
}

/// Gradients and traces of one training sentence.
#[derive(Debug, Clone)]
pub struct SentenceStep {
    pub grads: Gradients,
    pub lm_nll: f64,
    pub s_nll: f64,
    /// Next-token targets, end of sentence included.
    pub n_targets: usize,
    pub decisions: Vec<usize>,
    pub labels: Vec<usize>,
    pub p_total: usize,
    pub p_correct: usize,
    pub q_total: usize,
    pub q_correct: usize,
    pub clamped: usize,
}

/// Random streams for one sentence of one epoch.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey {
    pub seed: u64,
    pub epoch: usize,
    pub sentence: usize,
}

impl StreamKey {
    fn keys(self) -> [u64; 2] {
        [self.epoch as u64, self.sentence as u64]
    }
}

/// Forward and backward pass for one sentence. Returns `Ok(None)` when the
/// gold tree is deeper than the grid allows, so the caller can skip it.
pub fn train_sentence(
    model: &SomModel,
    sentence: &Sentence,
    mode: OracleMode,
    key: StreamKey,
    emb_keep: Option<&[bool]>,
) -> Result<Option<SentenceStep>, TrainError> {
    let n = model.config.n_slots;
    let id = key.sentence;
    let tree = sentence.tree.as_ref();
    let need_tree = || TrainError::Data { sentence: id, message: format!("{} oracle needs a gold tree", mode.name()) };
    let fixed = match mode {
        OracleMode::Dynamic | OracleMode::Static => match static_labels(tree.ok_or_else(need_tree)?, n) {
            Ok(labels) => Some(labels),
            Err(OracleError::InsufficientSlots { .. }) => return Ok(None),
            Err(e) => return Err(TrainError::Model { sentence: id, source: e.into() }),
        },
        OracleMode::LeftBranch => match left_branching_labels(sentence.len(), n) {
            Ok(labels) => Some(labels),
            Err(OracleError::InsufficientSlots { .. }) => return Ok(None),
            Err(e) => return Err(TrainError::Model { sentence: id, source: e.into() }),
        },
    };
    let mut decide = RngStream::derive(key.seed, StreamKind::Decisions, &key.keys());
    let mut noise = Noise::new(model.config.dropout, RngStream::derive(key.seed, StreamKind::Dropout, &key.keys()));
    let (supervision, policy) = match mode {
        OracleMode::Dynamic => (Supervision::Dynamic(tree.expect("checked above")), Policy::Sample),
        _ => (Supervision::Fixed(fixed.expect("checked above")), Policy::Forced),
    };
    let mut g = Graph::new(&model.params);
    let wrap = |source: SomError| TrainError::Model { sentence: id, source };
    let out = model
        .run_sentence(&mut g, &sentence.tokens, supervision, policy, Some(&mut decide), &mut noise, emb_keep)
        .map_err(|e| match e {
            SomError::Kernel(k) => TrainError::NonFinite { what: k.to_string(), sentence: id, epoch: key.epoch, step: 0 },
            other => wrap(other),
        })?;
    let loss = model.total_loss(&mut g, &out);
    let value = g.scalar(loss);
    if !value.is_finite() || g.fault().is_some() {
        return Err(TrainError::NonFinite { what: "loss".into(), sentence: id, epoch: key.epoch, step: 0 });
    }
    let grads = g.backward(loss).map_err(|e| match e {
        KernelError::NonFinite(_) => TrainError::NonFinite { what: "gradient".into(), sentence: id, epoch: key.epoch, step: 0 },
        other => wrap(other.into()),
    })?;
    Ok(Some(SentenceStep {
        grads,
        lm_nll: out.lm_nll(),
        s_nll: out.s_loss.map_or(0.0, |v| g.scalar(v)),
        n_targets: out.token_nll.len(),
        decisions: out.decisions,
        labels: out.labels,
        p_total: out.p_total,
        p_correct: out.p_correct,
        q_total: out.q_total,
        q_correct: out.q_correct,
        clamped: out.clamped,
    }))
}

/// Running sums over the sentences of an epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Totals {
    pub lm_nll: f64,
    pub s_nll: f64,
    pub n_targets: usize,
    pub p_total: usize,
    pub p_correct: usize,
    pub q_total: usize,
    pub q_correct: usize,
    pub clamped: usize,
    pub skipped: usize,
    pub sentences: usize,
}

impl Totals {
    fn add(&mut self, s: &SentenceStep) {
        self.lm_nll += s.lm_nll;
        self.s_nll += s.s_nll;
        self.n_targets += s.n_targets;
        self.p_total += s.p_total;
        self.p_correct += s.p_correct;
        self.q_total += s.q_total;
        self.q_correct += s.q_correct;
        self.clamped += s.clamped;
        self.sentences += 1;
    }

    fn merge(&mut self, o: &Totals) {
        self.lm_nll += o.lm_nll;
        self.s_nll += o.s_nll;
        self.n_targets += o.n_targets;
        self.p_total += o.p_total;
        self.p_correct += o.p_correct;
        self.q_total += o.q_total;
        self.q_correct += o.q_correct;
        self.clamped += o.clamped;
        self.skipped += o.skipped;
        self.sentences += o.sentences;
    }

    fn per_target(&self, x: f64) -> f64 {
        if self.n_targets == 0 {
            0.0
        } else {
            x / self.n_targets as f64
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub totals: Totals,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm after clipping.
    pub clipped_norm: f64,
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: SomModel,
    pub config: TrainConfig,
    adam: Adam,
    steps: u64,
}

impl Trainer {
    pub fn new(mut model: SomModel, config: TrainConfig) -> Result<Trainer, TrainError> {
        config.validate()?;
        if let Some(l) = config.lambda_s {
            model.config.lambda_s = l;
        }
        let adam = Adam::new(&model.params, config.lr, config.beta1, config.beta2, config.eps);
        Ok(Trainer { model, config, adam, steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Embedding-row keep mask shared by one batch.
    fn emb_keep(&self, epoch: usize, batch: usize) -> Option<Vec<bool>> {
        let rate = self.model.config.dropout.emb;
        if rate == 0.0 {
            return None;
        }
        let mut rng = RngStream::derive(self.config.seed, StreamKind::Dropout, &[epoch as u64, batch as u64, 1 << 63]);
        Some((0..self.model.config.vocab_size).map(|_| rng.bernoulli(1.0 - rate)).collect())
    }

    /// One optimizer step on `batch` (pairs of sentence id and sentence).
    pub fn step(&mut self, batch: &[(usize, &Sentence)], epoch: usize, batch_idx: usize) -> Result<StepReport, TrainError> {
        let keep = self.emb_keep(epoch, batch_idx);
        let model = &self.model;
        let (mode, seed) = (self.config.mode, self.config.seed);
        let results = map_ordered(batch, self.config.workers, |_, &(sid, s)| {
            train_sentence(model, s, mode, StreamKey { seed, epoch, sentence: sid }, keep.as_deref())
        });
        let mut totals = Totals::default();
        let mut grads = Gradients::zeros_like(&self.model.params);
        for r in results {
            match r {
                Ok(Some(s)) => {
                    totals.add(&s);
                    grads.add_assign(&s.grads);
                }
                Ok(None) => totals.skipped += 1,
                Err(TrainError::NonFinite { what, sentence, epoch, .. }) => {
                    return Err(TrainError::NonFinite { what, sentence, epoch, step: self.steps });
                }
                Err(e) => return Err(e),
            }
        }
        if totals.n_targets == 0 {
            return Ok(StepReport { totals, grad_norm: 0.0, clipped_norm: 0.0 });
        }
        grads.scale(1.0 / totals.n_targets as f64);
        grads.apply_structure(&self.model.params);
        if !grads.is_finite() {
            let sentence = batch.first().map_or(0, |b| b.0);
            return Err(TrainError::NonFinite { what: "batch gradient".into(), sentence, epoch, step: self.steps });
        }
        let grad_norm = grads.clip_global_norm(self.config.clip);
        let clipped_norm = grads.global_norm();
        self.adam.step(&mut self.model.params, &grads);
        self.steps += 1;
        Ok(StepReport { totals, grad_norm, clipped_norm })
    }

    /// Batches for `epoch`: shuffle, group by length, shuffle batch order.
    pub fn batches(&self, train: &[Sentence], epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = RngStream::derive(self.config.seed, StreamKind::Shuffle, &[epoch as u64]);
        order.shuffle(rng.inner());
        order.sort_by_key(|&i| train[i].len());
        let mut batches: Vec<Vec<usize>> = order.chunks(self.config.batch).map(<[usize]>::to_vec).collect();
        batches.shuffle(rng.inner());
        batches
    }

    pub fn run_epoch(&mut self, train: &[Sentence], epoch: usize) -> Result<(Totals, f64), TrainError> {
        let mut totals = Totals::default();
        let mut norm_sum = 0.0;
        let batches = self.batches(train, epoch);
        for (b, ids) in batches.iter().enumerate() {
            let batch: Vec<(usize, &Sentence)> = ids.iter().map(|&i| (i, &train[i])).collect();
            let r = self.step(&batch, epoch, b)?;
            totals.merge(&r.totals);
            norm_sum += r.grad_norm;
        }
        Ok((totals, norm_sum / batches.len().max(1) as f64))
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: u64,
    pub train_lm: f64,
    pub train_s: f64,
    pub train_ppl: f64,
    pub train_p_acc: f64,
    pub train_q_acc: f64,
    pub valid_lm: f64,
    pub valid_s: f64,
    pub valid_ppl: f64,
    pub valid_p_acc: f64,
    pub valid_q_acc: f64,
    pub grad_norm: f64,
    pub skipped: usize,
    pub clamped: usize,
    pub best: bool,
}

impl EpochMetrics {
    fn new(epoch: usize, steps: u64, t: &Totals, grad_norm: f64, v: &PplReport, best: bool) -> Self {
        let train_lm = t.per_target(t.lm_nll);
        EpochMetrics {
            epoch,
            steps,
            train_lm,
            train_s: t.per_target(t.s_nll),
            train_ppl: train_lm.exp(),
            train_p_acc: ratio(t.p_correct, t.p_total),
            train_q_acc: ratio(t.q_correct, t.q_total),
            valid_lm: v.nll / v.n_tokens.max(1) as f64,
            valid_s: v.s_loss,
            valid_ppl: v.ppl,
            valid_p_acc: v.p_acc,
            valid_q_acc: v.q_acc,
            grad_norm,
            skipped: t.skipped,
            clamped: t.clamped,
            best,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub best_model: SomModel,
    pub best_epoch: usize,
    pub best_valid_ppl: f64,
    pub metrics: Vec<EpochMetrics>,
    pub stopped_early: bool,
}

/// Where `fit` writes its artifacts.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub dir: PathBuf,
    /// Extra checkpoint metadata (vocabulary, config).
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl FitOutput {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn best_dir(&self) -> PathBuf {
        self.dir.join("best")
    }
}

/// Trains until `epochs` or early stop. With `out`, metrics are appended
/// to `metrics.jsonl` after every epoch and the best model is saved under
/// `best/`.
pub fn fit(
    model: SomModel,
    train: &[Sentence],
    valid: &[Sentence],
    config: &TrainConfig,
    out: Option<&FitOutput>,
) -> Result<FitReport, TrainError> {
    if train.is_empty() || valid.is_empty() {
        return Err(TrainError::Config("train and valid splits must be nonempty".into()));
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut log = match out {
        Some(o) => {
            fs::create_dir_all(&o.dir)?;
            Some(File::create(o.metrics_path())?)
        }
        None => None,
    };
    let mut best: Option<(SomModel, usize, f64)> = None;
    let mut metrics = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..config.epochs {
        let (totals, grad_norm) = trainer.run_epoch(train, epoch)?;
        let v = perplexity(&trainer.model, valid, TreeSource::Predicted, config.workers)?;
        if !v.ppl.is_finite() {
            return Err(TrainError::NonFinite { what: "validation perplexity".into(), sentence: 0, epoch, step: trainer.steps });
        }
        let improved = best.as_ref().map_or(true, |b| v.ppl < b.2);
        let m = EpochMetrics::new(epoch, trainer.steps, &totals, grad_norm, &v, improved);
        log::info!("epoch {epoch}: train ppl {:.3}, valid ppl {:.3}, grad norm {:.3}", m.train_ppl, m.valid_ppl, grad_norm);
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&m)?)?;
            f.flush()?;
        }
        metrics.push(m);
        if improved {
            if let Some(o) = out {
                let mut meta = o.metadata.clone();
                meta.insert("epoch".into(), epoch.into());
                meta.insert("valid_ppl".into(), v.ppl.into());
                meta.insert("train".into(), serde_json::to_value(config)?);
                save_checkpoint(&trainer.model, &o.best_dir(), DType::F64, meta)?;
            }
            best = Some((trainer.model.clone(), epoch, v.ppl));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_model, best_epoch, best_valid_ppl) = best.expect("at least one epoch ran");
    Ok(FitReport { best_model, best_epoch, best_valid_ppl, metrics, stopped_early })
}

/// Reads a metric log written by [`fit`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, TrainError> {
    let text = fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[cfg(test)]
mod tests;
