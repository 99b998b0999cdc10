//! Supervised training on the copy task.
//!
//! The model is an eLSTM over one-hot inputs followed by a linear readout
//! `h → 2` logits. Cross-entropy is averaged over every target position of
//! the batch. Three learners share the model, data stream and optimizer and
//! differ only in how the gradient is obtained:
//!
//! * `Rtrl`: sensitivities carried forward, gradients accumulated online;
//! * `Bptt`: full reverse mode over each sequence;
//! * `Tbptt { span }`: reverse mode truncated to consecutive spans.
//!
//! With the default schedule the optimizer steps once per batch of complete
//! sequences, so RTRL and BPTT follow the same parameter trajectory up to
//! rounding. The `PerStep` schedule (RTRL only) steps after every time step
//! that carried a loss, keeping the sensitivities across updates.

use serde::{Deserialize, Serialize};

use crate::elstm::{elstm_bptt, elstm_forward, elstm_tbptt, ElstmParams};
use crate::error::{Error, Result};
use crate::numeric::{fan_in_scale, init_uniform, RealMatrix, RealVector, Rng};
use crate::optim::AdamState;
use crate::params::{clip_global_norm, ParamBlocks};
use crate::rtrl::{rtrl_grad, RtrlStream};
use crate::tasks::copy::{copy_accuracy, copy_sample, CopyBatch, CopySequence, ALPHABET};

/// Number of output classes (`0` and `1`).
pub const CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyModel {
    pub cell: ElstmParams,
    pub readout_w: RealMatrix,
    pub readout_b: RealVector,
}

impl ParamBlocks for CopyModel {
    fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut b = self.cell.blocks();
        b.push(("readout_w", self.readout_w.as_slice()));
        b.push(("readout_b", self.readout_b.as_slice()));
        b
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut b = self.cell.blocks_mut();
        b.push(("readout_w", self.readout_w.as_mut_slice()));
        b.push(("readout_b", self.readout_b.as_mut_slice()));
        b
    }
}

impl CopyModel {
    pub fn zeros(hidden: usize) -> Self {
        CopyModel {
            cell: ElstmParams::zeros(hidden, ALPHABET),
            readout_w: RealMatrix::zeros(CLASSES, hidden),
            readout_b: RealVector::zeros(CLASSES),
        }
    }

    pub fn init(rng: &mut Rng, hidden: usize) -> Self {
        CopyModel {
            cell: ElstmParams::init(rng, hidden, ALPHABET),
            readout_w: init_uniform(rng, CLASSES, hidden, fan_in_scale(hidden)).expect("positive scale"),
            readout_b: RealVector::zeros(CLASSES),
        }
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden()
    }

    fn logits(&self, h: &[f64]) -> [f64; CLASSES] {
        let mut out = [0.0; CLASSES];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.readout_b[k] + crate::numeric::dot(self.readout_w.row(k), h);
        }
        out
    }

    /// Cross-entropy head at one target position. Accumulates the readout
    /// gradients (scaled by `scale`) and returns `(loss, prediction, dL/dh)`.
    fn head_backward(&self, h: &[f64], target: usize, scale: f64, grads: &mut CopyModel) -> (f64, usize, RealVector) {
        let logits = self.logits(h);
        let (loss, probs) = softmax_xent(&logits, target);
        let pred = argmax(&logits);
        let mut dlogits = probs;
        dlogits[target] -= 1.0;
        dlogits.iter_mut().for_each(|g| *g *= scale);
        grads.readout_w.add_outer(1.0, &dlogits, h);
        let mut dl_dh = RealVector::zeros(h.len());
        for (k, &g) in dlogits.iter().enumerate() {
            grads.readout_b[k] += g;
            dl_dh.iter_mut().zip(self.readout_w.row(k)).for_each(|(d, &w)| *d += g * w);
        }
        (loss, pred, dl_dh)
    }

    /// Predicted symbols and summed loss for one sequence, without gradients.
    pub fn predict(&self, seq: &CopySequence) -> Result<(Vec<usize>, f64)> {
        let mut c = RealVector::zeros(self.hidden());
        let mut preds = Vec::with_capacity(seq.pattern_len());
        let mut loss = 0.0;
        for t in 0..seq.len() {
            let (c_next, h, _) = crate::elstm::elstm_step(&self.cell, &c, &seq.input(t))?;
            if let Some(target) = seq.target(t) {
                let logits = self.logits(&h);
                loss += softmax_xent(&logits, target).0;
                preds.push(argmax(&logits));
            }
            c = c_next;
        }
        Ok((preds, loss))
    }
}

fn softmax_xent(logits: &[f64; CLASSES], target: usize) -> (f64, [f64; CLASSES]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; CLASSES];
    let mut z = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - m).exp();
        z += *p;
    }
    probs.iter_mut().for_each(|p| *p /= z);
    (-(logits[target] - m - z.ln()), probs)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CopyLearner {
    Rtrl,
    Bptt,
    Tbptt { span: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateSchedule {
    /// One optimizer step per batch of complete sequences.
    #[default]
    PerSequence,
    /// One optimizer step after every time step that carries a loss.
    PerStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopyConfig {
    pub l_max: usize,
    pub hidden: usize,
    pub batch: usize,
    pub lr: f64,
    /// Global-norm gradient clipping threshold.
    pub clip_norm: f64,
    pub learner: CopyLearner,
    #[serde(default)]
    pub schedule: UpdateSchedule,
    pub max_updates: u64,
    pub eval_every: u64,
    pub eval_size: usize,
    /// Stop once the evaluated per-sequence accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

impl CopyConfig {
    /// Desk-scale preset: `ℓ = 20`, 128 hidden units, batch 64, Adam at 1e-3.
    pub fn desk(seed: u64) -> Self {
        CopyConfig {
            l_max: 20,
            hidden: 128,
            batch: 64,
            lr: 1e-3,
            clip_norm: 1.0,
            learner: CopyLearner::Rtrl,
            schedule: UpdateSchedule::PerSequence,
            max_updates: 20_000,
            eval_every: 250,
            eval_size: 512,
            target_accuracy: Some(0.99),
            seed,
        }
    }

    /// Published settings for `ℓ ∈ {50, 500}`.
    pub fn paper(l_max: usize, seed: u64) -> Result<Self> {
        let (lr, batch, hidden) = match l_max {
            50 => (1e-4, 512, 1024),
            500 => (3e-5, 128, 2048),
            other => return Err(Error::Config(format!("no published preset for l_max = {other}"))),
        };
        Ok(CopyConfig {
            l_max,
            hidden,
            batch,
            lr,
            clip_norm: 1.0,
            max_updates: 1_000_000,
            target_accuracy: Some(1.0),
            ..Self::desk(seed)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.l_max == 0 {
            return fail("l_max must be at least 1");
        }
        if self.hidden == 0 || self.batch == 0 || self.eval_size == 0 {
            return fail("hidden, batch and eval_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be finite and non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        if let CopyLearner::Tbptt { span: 0 } = self.learner {
            return fail("truncation span must be at least 1");
        }
        if self.schedule == UpdateSchedule::PerStep && self.learner != CopyLearner::Rtrl {
            return fail("per-step updates need the rtrl learner");
        }
        if let Some(a) = self.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return fail("target_accuracy must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Summary of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyMetrics {
    /// Input symbols consumed by training so far.
    pub step: u64,
    pub updates: u64,
    /// Mean cross-entropy per target on the evaluation batch.
    pub loss: f64,
    pub per_symbol_acc: f64,
    pub per_sequence_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub per_symbol_acc: f64,
    pub per_sequence_acc: f64,
}

/// Complete training state; serializing it is a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyTrainer {
    pub config: CopyConfig,
    pub model: CopyModel,
    pub opt: AdamState<CopyModel>,
    pub data_rng: Rng,
    pub eval_rng: Rng,
    pub updates: u64,
    pub steps: u64,
    pub next_eval: u64,
    pub last_metrics: Option<CopyMetrics>,
}

/// Gradient of the summed loss over one sequence, scaled by `scale`.
/// Returns `(summed loss, predictions)`.
fn sequence_grads(
    model: &CopyModel,
    seq: &CopySequence,
    learner: CopyLearner,
    scale: f64,
    grads: &mut CopyModel,
) -> Result<(f64, Vec<usize>)> {
    let n = model.hidden();
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(seq.pattern_len());
    match learner {
        CopyLearner::Rtrl => {
            let mut stream = RtrlStream::new(n, ALPHABET);
            for t in 0..seq.len() {
                let (h, cache) = stream.step(&model.cell, &seq.input(t))?;
                if let Some(target) = seq.target(t) {
                    let (l, p, dl_dh) = model.head_backward(&h, target, scale, grads);
                    rtrl_grad(&model.cell, &stream.sens, &cache, &dl_dh, &mut grads.cell)?;
                    loss += l;
                    preds.push(p);
                }
            }
        }
        CopyLearner::Bptt | CopyLearner::Tbptt { .. } => {
            let xs = seq.inputs();
            let (hs, tape) = elstm_forward(&model.cell, &vec![0.0; n], &xs)?;
            let mut dl = Vec::with_capacity(xs.len());
            for (t, h) in hs.iter().enumerate() {
                match seq.target(t) {
                    Some(target) => {
                        let (l, p, dl_dh) = model.head_backward(h, target, scale, grads);
                        loss += l;
                        preds.push(p);
                        dl.push(dl_dh);
                    }
                    None => dl.push(RealVector::zeros(n)),
                }
            }
            let g = match learner {
                CopyLearner::Tbptt { span } => elstm_tbptt(&model.cell, &tape, &dl, span)?,
                _ => elstm_bptt(&model.cell, &tape, &dl)?,
            };
            grads.cell.add_assign_blocks(&g);
        }
    }
    Ok((loss, preds))
}

impl CopyTrainer {
    pub fn new(config: CopyConfig) -> Result<Self> {
        config.validate()?;
        let mut root = Rng::seed_from_u64(config.seed);
        let mut init_rng = root.fork();
        let data_rng = root.fork();
        let eval_rng = root.fork();
        let model = CopyModel::init(&mut init_rng, config.hidden);
        Ok(Self::with_model(config, model, data_rng, eval_rng))
    }

    /// Start from explicit parameters (used for hand-built or shared initializations).
    pub fn with_model(config: CopyConfig, model: CopyModel, data_rng: Rng, eval_rng: Rng) -> Self {
        let opt = AdamState::new(&model, config.lr);
        let next_eval = config.eval_every;
        CopyTrainer { config, model, opt, data_rng, eval_rng, updates: 0, steps: 0, next_eval, last_metrics: None }
    }

    fn apply(&mut self, mut grads: CopyModel) -> Result<()> {
        clip_global_norm(&mut grads, self.config.clip_norm);
        self.opt.step(&mut self.model, &grads)?;
        self.updates += 1;
        Ok(())
    }

    /// Draw one training batch and apply its update(s).
    pub fn train_batch(&mut self) -> Result<BatchStats> {
        let batch = copy_sample(&mut self.data_rng, self.config.l_max, self.config.batch)?;
        self.steps += batch.sequences.iter().map(|s| s.len() as u64).sum::<u64>();
        match self.config.schedule {
            UpdateSchedule::PerSequence => self.train_batch_whole(&batch),
            UpdateSchedule::PerStep => self.train_batch_online(&batch),
        }
    }

    fn train_batch_whole(&mut self, batch: &CopyBatch) -> Result<BatchStats> {
        let scale = 1.0 / batch.num_targets() as f64;
        let mut grads = CopyModel::zeros(self.config.hidden);
        let mut loss = 0.0;
        let mut preds = Vec::with_capacity(batch.len());
        for seq in &batch.sequences {
            let (l, p) = sequence_grads(&self.model, seq, self.config.learner, scale, &mut grads)?;
            loss += l;
            preds.push(p);
        }
        self.apply(grads)?;
        let (sym, seq) = copy_accuracy(&preds, batch)?;
        Ok(BatchStats { loss: loss * scale, per_symbol_acc: sym, per_sequence_acc: seq })
    }

    fn train_batch_online(&mut self, batch: &CopyBatch) -> Result<BatchStats> {
        let n = self.config.hidden;
        let scale = 1.0 / batch.num_targets() as f64;
        let mut streams: Vec<RtrlStream> = (0..batch.len()).map(|_| RtrlStream::new(n, ALPHABET)).collect();
        let longest = batch.sequences.iter().map(CopySequence::len).max().unwrap_or(0);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); batch.len()];
        let mut loss = 0.0;
        for t in 0..longest {
            let mut grads = CopyModel::zeros(n);
            let mut any = false;
            for (i, seq) in batch.sequences.iter().enumerate() {
                if t >= seq.len() {
                    continue;
                }
                let (h, cache) = streams[i].step(&self.model.cell, &seq.input(t))?;
                if let Some(target) = seq.target(t) {
                    let (l, p, dl_dh) = self.model.head_backward(&h, target, scale, &mut grads);
                    rtrl_grad(&self.model.cell, &streams[i].sens, &cache, &dl_dh, &mut grads.cell)?;
                    loss += l;
                    preds[i].push(p);
                    any = true;
                }
            }
            if any {
                self.apply(grads)?;
            }
        }
        let (sym, seq) = copy_accuracy(&preds, batch)?;
        Ok(BatchStats { loss: loss * scale, per_symbol_acc: sym, per_sequence_acc: seq })
    }

    /// Accuracy and mean loss on a fresh evaluation batch.
    pub fn evaluate(&mut self) -> Result<CopyMetrics> {
        let batch = copy_sample(&mut self.eval_rng, self.config.l_max, self.config.eval_size)?;
        let mut preds = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for seq in &batch.sequences {
            let (p, l) = self.model.predict(seq)?;
            preds.push(p);
            loss += l;
        }
        let (sym, seq) = copy_accuracy(&preds, &batch)?;
        let metrics = CopyMetrics {
            step: self.steps,
            updates: self.updates,
            loss: loss / batch.num_targets() as f64,
            per_symbol_acc: sym,
            per_sequence_acc: seq,
        };
        self.last_metrics = Some(metrics);
        Ok(metrics)
    }

    pub fn solved(&self) -> bool {
        match (self.config.target_accuracy, self.last_metrics) {
            (Some(target), Some(m)) => m.per_sequence_acc >= target,
            _ => false,
        }
    }

    pub fn finished(&self) -> bool {
        self.updates >= self.config.max_updates || self.solved()
    }

    /// Train one batch and evaluate if an evaluation point was crossed.
    /// Returns the evaluation, if one happened.
    pub fn advance(&mut self) -> Result<Option<CopyMetrics>> {
        self.train_batch()?;
        if self.updates >= self.next_eval || self.updates >= self.config.max_updates {
            while self.next_eval <= self.updates {
                self.next_eval += self.config.eval_every;
            }
            return self.evaluate().map(Some);
        }
        Ok(None)
    }

    /// Train until the update budget is spent or the target accuracy is reached.
    pub fn run(&mut self, mut on_eval: impl FnMut(&CopyTrainer, &CopyMetrics) -> Result<()>) -> Result<Option<CopyMetrics>> {
        while !self.finished() {
            if let Some(m) = self.advance()? {
                on_eval(self, &m)?;
            }
        }
        Ok(self.last_metrics)
    }
}
