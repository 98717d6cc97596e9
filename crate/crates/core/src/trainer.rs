//! The optimization loop: token-budget batches of labeled data, an
//! independently cycling stream of unlabeled batches, word dropout, the mixed
//! loss, clipping, Adam, per-epoch decay, dev evaluation and checkpoints.
//!
//! Every random draw comes from a sub-stream keyed by the root seed and the
//! epoch or step index, so a run resumed from a checkpoint continues exactly
//! as the uninterrupted run would have.

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::error_rate;
use crate::batching::plan_batches;
use crate::checkpoint::{Checkpoint, Progress};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::objectives::{loss_mixed, BatchRef, LossBreakdown, LossRngs, ObjectiveConfig};
use crate::optim::{adam_step, clip_gradients, global_grad_norm, lr_schedule, AdamConfig, OptimizerState, StepOutcome};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::vocab::{apply_word_dropout_indices, Vocabulary};

/// How the size of an unlabeled batch is matched to the labeled one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnlabeledBatching {
    /// Same token budget as labeled batches.
    #[default]
    TokenBudget,
    /// Same number of examples as the labeled batch of that step.
    MatchCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub token_budget: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub decay_rate: f64,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    pub word_dropout: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    /// Extra dev evaluations every this many steps, besides each epoch end.
    pub eval_every: Option<u64>,
    pub unlabeled_batching: UnlabeledBatching,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            token_budget: 3000,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            decay_rate: 0.95,
            max_epochs: 50,
            clip_norm: 1.0,
            dropout: 0.5,
            word_dropout: 0.1,
            seed: 0,
            objective: ObjectiveConfig::default(),
            eval_every: None,
            unlabeled_batching: UnlabeledBatching::TokenBudget,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.token_budget == 0 {
            return bad("token_budget", "must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad("decay_rate", format!("must be in (0, 1], got {}", self.decay_rate));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be >= 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm", format!("must be > 0, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return bad("word_dropout", format!("must be in [0, 1), got {}", self.word_dropout));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam", format!("invalid hyperparameters {a:?}"));
        }
        if self.eval_every == Some(0) {
            return bad("eval_every", "must be >= 1".into());
        }
        self.objective.validate()
    }
}

/// Index-encoded training material.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub labeled: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub unlabeled: Vec<Vec<usize>>,
    pub dev: Option<(Vec<Vec<usize>>, Vec<usize>)>,
}

impl TrainData {
    pub fn encode(train: &Dataset, dev: Option<&Dataset>, vocab: &Vocabulary) -> Self {
        let split = |d: &Dataset| -> (Vec<Vec<usize>>, Vec<usize>) {
            d.labeled()
                .iter()
                .map(|e| (vocab.encode(&e.tokens), e.label.expect("labeled example")))
                .unzip()
        };
        let (labeled, labels) = split(train);
        TrainData {
            labeled,
            labels,
            unlabeled: train.unlabeled().iter().map(|e| vocab.encode(&e.tokens)).collect(),
            dev: dev.map(split),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub grad_norm: f64,
    pub clipped: bool,
    pub clip_events: u64,
    pub skipped: bool,
    pub dev_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub mean_loss: f64,
    pub dev_error: Option<f64>,
    pub best_dev_error: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

/// What one step consumed and produced.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub record: StepRecord,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    /// Global gradient norm after clipping.
    pub post_clip_norm: f64,
}

pub struct TrainOutcome<S> {
    pub model: ModelParams<S>,
    pub best_model: Option<ModelParams<S>>,
    pub best_dev_error: Option<f64>,
    pub records: Vec<MetricsRecord>,
}

struct CheckpointTarget {
    dir: PathBuf,
    vocab_hash: String,
    snapshot: serde_json::Value,
}

pub struct Trainer<S> {
    pub model: ModelParams<S>,
    pub optimizer: OptimizerState<S>,
    pub progress: Progress,
    config: TrainConfig,
    data: TrainData,
    plan: Vec<Vec<usize>>,
    unlabeled_plan: Vec<Vec<usize>>,
    best_model: Option<ModelParams<S>>,
    records: Vec<MetricsRecord>,
    sink: Option<Box<dyn Write>>,
    checkpoints: Option<CheckpointTarget>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: ModelParams<S>, data: TrainData, config: TrainConfig) -> Result<Self> {
        let optimizer = {
            let tensors: Vec<_> = model.named_tensors().into_iter().map(|(_, t)| t).collect();
            OptimizerState::new(&tensors)
        };
        Self::resume(model, optimizer, Progress::default(), data, config)
    }

    /// Continues from saved parameters, optimizer state and progress.
    pub fn resume(
        model: ModelParams<S>,
        optimizer: OptimizerState<S>,
        progress: Progress,
        data: TrainData,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let needs_labeled = config.objective.lambda_ml > 0.0 || config.objective.lambda_at > 0.0;
        if needs_labeled && data.labeled.is_empty() {
            return Err(Error::Contract("training needs at least one labeled example".into()));
        }
        if data.labels.len() != data.labeled.len() {
            return Err(Error::Contract("one label per labeled example".into()));
        }
        if let Some(l) = data.labels.iter().find(|&&y| y >= model.head.classes()) {
            return Err(Error::Contract(format!("label {l} out of range for the model")));
        }
        for (kind, pool) in [("labeled", &data.labeled), ("unlabeled", &data.unlabeled)] {
            if let Some((i, d)) = pool.iter().enumerate().find(|(_, d)| d.len() > config.token_budget) {
                return Err(Error::Config(format!(
                    "{kind} document {i} has {} tokens, more than the token budget {}",
                    d.len(),
                    config.token_budget
                )));
            }
        }
        let mut t = Trainer {
            model,
            optimizer,
            progress,
            config,
            data,
            plan: Vec::new(),
            unlabeled_plan: Vec::new(),
            best_model: None,
            records: Vec::new(),
            sink: None,
            checkpoints: None,
        };
        t.plan = t.plan_epoch(t.progress.epoch)?;
        t.unlabeled_plan = t.plan_unlabeled(t.progress.unlabeled_epoch)?;
        Ok(t)
    }

    /// Streams every metrics record as one JSON line.
    pub fn with_metrics_sink(mut self, sink: Box<dyn Write>) -> Self {
        self.sink = Some(sink);
        self
    }

    /// Saves `last.json` after every epoch and `best.json` on dev improvement.
    pub fn with_checkpoints(mut self, dir: PathBuf, vocab_hash: String, snapshot: serde_json::Value) -> Self {
        self.checkpoints = Some(CheckpointTarget {
            dir,
            vocab_hash,
            snapshot,
        });
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// Labeled batches of the current epoch, as example indices.
    pub fn epoch_plan(&self) -> &[Vec<usize>] {
        &self.plan
    }

    pub fn is_finished(&self) -> bool {
        self.progress.epoch >= self.config.max_epochs
    }

    fn labeled_plan_for(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let lengths: Vec<usize> = self.data.labeled.iter().map(Vec::len).collect();
        let mut rng = stream_rng(self.config.seed, Stream::Batching, epoch as u64);
        plan_batches(&lengths, self.config.token_budget, &mut rng)
    }

    fn plan_epoch(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        if self.data.labeled.is_empty() {
            // unsupervised-only runs: an "epoch" is one pass over the unlabeled pool
            let lengths: Vec<usize> = self.data.unlabeled.iter().map(Vec::len).collect();
            let mut rng = stream_rng(self.config.seed, Stream::Batching, epoch as u64);
            return Ok(plan_batches(&lengths, self.config.token_budget, &mut rng)?
                .into_iter()
                .map(|_| Vec::new())
                .collect());
        }
        self.labeled_plan_for(epoch)
    }

    fn plan_unlabeled(&self, pass: usize) -> Result<Vec<Vec<usize>>> {
        if self.data.unlabeled.is_empty() {
            return Ok(Vec::new());
        }
        let mut rng = stream_rng(self.config.seed, Stream::UnlabeledBatching, pass as u64);
        match self.config.unlabeled_batching {
            UnlabeledBatching::TokenBudget => {
                let lengths: Vec<usize> = self.data.unlabeled.iter().map(Vec::len).collect();
                plan_batches(&lengths, self.config.token_budget, &mut rng)
            }
            UnlabeledBatching::MatchCount => {
                // a single shuffled order, consumed in slices
                crate::batching::plan_fixed_count(self.data.unlabeled.len(), self.data.unlabeled.len(), &mut rng)
            }
        }
    }

    fn next_unlabeled(&mut self, labeled_count: usize) -> Result<Vec<usize>> {
        let exhausted = match self.config.unlabeled_batching {
            UnlabeledBatching::TokenBudget => self.progress.unlabeled_cursor >= self.unlabeled_plan.len(),
            UnlabeledBatching::MatchCount => self.progress.unlabeled_cursor >= self.data.unlabeled.len(),
        };
        if exhausted {
            self.progress.unlabeled_epoch += 1;
            self.progress.unlabeled_cursor = 0;
            self.unlabeled_plan = self.plan_unlabeled(self.progress.unlabeled_epoch)?;
        }
        let cursor = self.progress.unlabeled_cursor;
        Ok(match self.config.unlabeled_batching {
            UnlabeledBatching::TokenBudget => {
                self.progress.unlabeled_cursor += 1;
                self.unlabeled_plan[cursor].clone()
            }
            UnlabeledBatching::MatchCount => {
                let order = &self.unlabeled_plan[0];
                let end = (cursor + labeled_count.max(1)).min(order.len());
                self.progress.unlabeled_cursor = end;
                order[cursor..end].to_vec()
            }
        })
    }

    fn emit(&mut self, record: MetricsRecord) -> Result<()> {
        if let Some(sink) = self.sink.as_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(sink, "{line}").map_err(|e| Error::io("writing metrics", e))?;
        }
        self.records.push(record);
        Ok(())
    }

    fn dev_error(&self) -> Result<Option<f64>> {
        match &self.data.dev {
            Some((seqs, labels)) if !seqs.is_empty() => {
                Ok(Some(error_rate(&self.model, seqs, labels, self.config.token_budget)?))
            }
            _ => Ok(None),
        }
    }

    /// Runs one optimization step on the next labeled batch of the epoch.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.is_finished() {
            return Err(Error::Contract("training already finished".into()));
        }
        if self.progress.batch_in_epoch >= self.plan.len() {
            return Err(Error::Contract("epoch exhausted; call end_epoch".into()));
        }
        let step = self.progress.step;
        let seed = self.config.seed;
        let labeled = self.plan[self.progress.batch_in_epoch].clone();
        let unlabeled = if self.config.objective.needs_unlabeled() && !self.data.unlabeled.is_empty() {
            self.next_unlabeled(labeled.len())?
        } else {
            Vec::new()
        };

        let mut word_rng = stream_rng(seed, Stream::WordDropout, step);
        let mut take = |pool: &[Vec<usize>], idx: &[usize]| -> Result<Vec<Vec<usize>>> {
            idx.iter()
                .map(|&i| {
                    let mut s = pool[i].clone();
                    apply_word_dropout_indices(&mut s, self.config.word_dropout, &mut word_rng)?;
                    Ok(s)
                })
                .collect()
        };
        let lseqs = take(&self.data.labeled, &labeled)?;
        let useqs = take(&self.data.unlabeled, &unlabeled)?;
        let labels: Vec<usize> = labeled.iter().map(|&i| self.data.labels[i]).collect();

        let lr = lr_schedule(self.progress.epoch, self.config.learning_rate, self.config.decay_rate)?;
        let mut dropout_rng = stream_rng(seed, Stream::Dropout, step);
        let mut vat_rng = stream_rng(seed, Stream::VatNoise, step);
        let loss = loss_mixed(
            &self.model,
            (!lseqs.is_empty()).then(|| BatchRef::labeled(&lseqs, &labels)),
            (!useqs.is_empty()).then(|| BatchRef::unlabeled(&useqs)),
            &self.config.objective,
            self.config.dropout,
            LossRngs {
                dropout: &mut dropout_rng,
                vat_noise: &mut vat_rng,
            },
        )?;
        self.model.zero_grads();
        loss.backward_into(&mut self.model)?;
        let breakdown = loss.breakdown.clone();
        drop(loss);

        let mut tensors = self.model.tensors_mut();
        let (norm, clipped) = clip_gradients(&mut tensors, S::lit(self.config.clip_norm));
        let post_clip_norm = global_grad_norm(&tensors).as_f64();
        let outcome = adam_step(&mut tensors, &mut self.optimizer, S::lit(lr), &self.config.adam)?;
        drop(tensors);

        self.progress.step += 1;
        self.progress.batch_in_epoch += 1;
        if clipped {
            self.progress.clip_events += 1;
        }
        let skipped = outcome == StepOutcome::Skipped;
        if !skipped {
            self.progress.epoch_loss_sum += breakdown.total;
            self.progress.epoch_steps += 1;
        }
        let dev_error = match self.config.eval_every {
            Some(n) if self.progress.step.is_multiple_of(n) => self.dev_error()?,
            _ => None,
        };
        let record = StepRecord {
            step: self.progress.step,
            epoch: self.progress.epoch,
            lr,
            losses: breakdown,
            grad_norm: norm.as_f64(),
            clipped,
            clip_events: self.progress.clip_events,
            skipped,
            dev_error,
        };
        self.emit(MetricsRecord::Step(record.clone()))?;
        Ok(StepReport {
            record,
            labeled,
            unlabeled,
            post_clip_norm,
        })
    }

    /// Closes the current epoch: dev evaluation, best/last checkpoints, and
    /// the next epoch's batch plan.
    pub fn end_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.progress.epoch;
        let lr = lr_schedule(epoch, self.config.learning_rate, self.config.decay_rate)?;
        let dev_error = self.dev_error()?;
        let improved = match (dev_error, self.progress.best_dev_error) {
            (Some(e), Some(best)) => e < best,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            self.progress.best_dev_error = dev_error;
            self.progress.best_epoch = Some(epoch);
            self.best_model = Some(self.model.clone());
        }
        let mean_loss = if self.progress.epoch_steps > 0 {
            self.progress.epoch_loss_sum / self.progress.epoch_steps as f64
        } else {
            0.0
        };
        let record = EpochRecord {
            epoch,
            step: self.progress.step,
            lr,
            mean_loss,
            dev_error,
            best_dev_error: self.progress.best_dev_error,
            best_epoch: self.progress.best_epoch,
        };
        self.emit(MetricsRecord::Epoch(record.clone()))?;

        self.progress.epoch += 1;
        self.progress.batch_in_epoch = 0;
        self.progress.epoch_loss_sum = 0.0;
        self.progress.epoch_steps = 0;
        self.plan = self.plan_epoch(self.progress.epoch)?;

        if let Some(target) = &self.checkpoints {
            if improved {
                Checkpoint::capture(&self.model, &target.vocab_hash, target.snapshot.clone(), None, None)
                    .save(&target.dir.join("best.json"))?;
            }
            self.checkpoint(&target.vocab_hash, target.snapshot.clone())
                .save(&target.dir.join("last.json"))?;
        }
        Ok(record)
    }

    /// Full resumable state.
    pub fn checkpoint(&self, vocab_hash: &str, snapshot: serde_json::Value) -> Checkpoint<S> {
        Checkpoint::capture(&self.model, vocab_hash, snapshot, Some(&self.optimizer), Some(&self.progress))
    }

    /// Trains until `max_epochs` epochs have completed.
    pub fn run(mut self) -> Result<TrainOutcome<S>> {
        while !self.is_finished() {
            while self.progress.batch_in_epoch < self.plan.len() {
                self.step()?;
            }
            self.end_epoch()?;
        }
        if let Some(sink) = self.sink.as_mut() {
            sink.flush().map_err(|e| Error::io("flushing metrics", e))?;
        }
        Ok(TrainOutcome {
            model: self.model,
            best_model: self.best_model,
            best_dev_error: self.progress.best_dev_error,
            records: self.records,
        })
    }
}

/// Trains `model` on `data` from scratch.
pub fn train<S: Scalar>(model: ModelParams<S>, data: TrainData, config: TrainConfig) -> Result<TrainOutcome<S>> {
    Trainer::new(model, data, config)?.run()
}
