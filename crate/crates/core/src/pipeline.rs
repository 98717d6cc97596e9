//! Glue from a resolved [`RunConfig`] to a trained, evaluated model.

use crate::analysis::{evaluate, EvalReport};
use crate::config::RunConfig;
use crate::corpus::{read_labeled, read_unlabeled, Dataset, Split};
use crate::embedding::{load_pretrained, EmbeddingMatrix, EmbeddingMode};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};
use crate::scalar::Scalar;
use crate::trainer::{TrainData, TrainOutcome, Trainer};
use crate::vocab::{build_vocabulary, Vocabulary};

/// Train/dev/test splits read from the configured files.
#[derive(Clone, Debug)]
pub struct Corpora {
    pub train: Dataset,
    pub dev: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl Corpora {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let d = &config.data;
        let labeled_path = d
            .labeled
            .as_deref()
            .ok_or_else(|| Error::Config("data.labeled: a labeled training file is required".into()))?;
        let mut labeled = read_labeled(labeled_path, d.classes, d.preprocessing)?;
        let mut unlabeled = match &d.unlabeled {
            Some(p) => read_unlabeled(p, d.preprocessing)?,
            None => Vec::new(),
        };
        if let Some(n) = d.labeled_limit {
            labeled.truncate(n);
        }
        if let Some(n) = d.unlabeled_limit {
            unlabeled.truncate(n);
        }
        let mut train = Dataset::new(labeled, unlabeled, d.classes, Split::Train)?;
        let read_split = |p: &std::path::Path, split: Split| -> Result<Dataset> {
            Dataset::new(read_labeled(p, d.classes, d.preprocessing)?, Vec::new(), d.classes, split)
        };
        let dev = match &d.dev {
            Some(p) => Some(read_split(p, Split::Dev)?),
            None if d.dev_fraction > 0.0 => {
                let (t, dev) = train.hold_out_dev(d.dev_fraction, config.train.seed)?;
                train = t;
                Some(dev)
            }
            None => None,
        };
        let test = d.test.as_deref().map(|p| read_split(p, Split::Test)).transpose()?;
        Ok(Corpora { train, dev, test })
    }

    /// The split reported as the run's result: test when present, else dev.
    pub fn report_split(&self) -> Option<&Dataset> {
        self.test.as_ref().or(self.dev.as_ref())
    }
}

/// Vocabulary over labeled and unlabeled training text.
pub fn vocabulary(config: &RunConfig, corpora: &Corpora) -> Result<Vocabulary> {
    let t = &corpora.train;
    build_vocabulary(t.labeled().iter().chain(t.unlabeled()), config.data.vocab_size)
}

pub fn model_shape(config: &RunConfig, vocab: &Vocabulary) -> ModelShape {
    ModelShape {
        vocab_size: vocab.len(),
        embed_dim: config.model.embed_dim,
        hidden: config.model.hidden,
        layers: config.model.layers,
        classes: config.data.classes,
    }
}

pub fn embedding<S: Scalar>(config: &RunConfig, vocab: &Vocabulary) -> Result<EmbeddingMatrix<S>> {
    let m = &config.model;
    let seed = config.train.seed;
    match (&m.embed_path, m.embed_mode) {
        (Some(path), EmbeddingMode::Finetune | EmbeddingMode::Static) => {
            load_pretrained(path, vocab, m.embed_dim, seed, m.embed_mode.finetune())
        }
        (None, EmbeddingMode::Static) => Err(Error::Config("model.embed_mode: static embeddings need an embedding file".into())),
        _ => EmbeddingMatrix::random(vocab.len(), m.embed_dim, seed, true),
    }
}

/// Everything needed to start a trainer.
pub struct Prepared<S> {
    pub vocab: Vocabulary,
    pub model: ModelParams<S>,
    pub data: TrainData,
}

pub fn prepare<S: Scalar>(config: &RunConfig, corpora: &Corpora) -> Result<Prepared<S>> {
    config.validate()?;
    let vocab = vocabulary(config, corpora)?;
    let emb = embedding(config, &vocab)?;
    let model = ModelParams::init(model_shape(config, &vocab), emb, config.train.seed)?;
    let data = TrainData::encode(&corpora.train, corpora.dev.as_ref(), &vocab);
    Ok(Prepared { vocab, model, data })
}

pub struct Experiment<S> {
    pub vocab: Vocabulary,
    pub outcome: TrainOutcome<S>,
    /// Report on the test split (or dev when there is no test split).
    pub report: Option<EvalReport>,
}

impl<S: Scalar> Experiment<S> {
    /// The best-on-dev model when dev selection ran, else the final one.
    pub fn selected_model(&self) -> &ModelParams<S> {
        self.outcome.best_model.as_ref().unwrap_or(&self.outcome.model)
    }
}

/// Trains and evaluates with no files written.
pub fn run_experiment<S: Scalar>(config: &RunConfig, corpora: &Corpora) -> Result<Experiment<S>> {
    let Prepared { vocab, model, data } = prepare::<S>(config, corpora)?;
    let outcome = Trainer::new(model, data, config.train.clone())?.run()?;
    let selected = outcome.best_model.as_ref().unwrap_or(&outcome.model);
    let report = corpora
        .report_split()
        .map(|split| evaluate(selected, split, &vocab, config.train.token_budget))
        .transpose()?;
    Ok(Experiment { vocab, outcome, report })
}
