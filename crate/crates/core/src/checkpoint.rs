//! Self-describing JSON checkpoints: named parameter tensors with shapes,
//! the vocabulary hash, a config snapshot, and optional optimizer/progress
//! state for resuming.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};
use crate::optim::OptimizerState;
use crate::scalar::Scalar;

pub const FORMAT: &str = "mixedobj-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct NamedTensor<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

/// Position of a training run, enough to continue it exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Epoch currently in progress (0-based).
    pub epoch: usize,
    /// Labeled batches of `epoch` already consumed.
    pub batch_in_epoch: usize,
    /// Optimizer steps attempted so far (including skipped ones).
    pub step: u64,
    /// Pass over the unlabeled pool currently in progress.
    pub unlabeled_epoch: usize,
    /// Unlabeled batches of that pass already consumed.
    pub unlabeled_cursor: usize,
    pub best_dev_error: Option<f64>,
    pub best_epoch: Option<usize>,
    pub clip_events: u64,
    /// Sum of step losses within the current epoch.
    pub epoch_loss_sum: f64,
    pub epoch_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Checkpoint<S> {
    pub format: String,
    pub version: u32,
    pub vocab_hash: String,
    pub model_shape: ModelShape,
    pub finetune: bool,
    pub config: serde_json::Value,
    pub tensors: Vec<NamedTensor<S>>,
    pub optimizer: Option<OptimizerState<S>>,
    pub progress: Option<Progress>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn capture(
        model: &ModelParams<S>,
        vocab_hash: &str,
        config: serde_json::Value,
        optimizer: Option<&OptimizerState<S>>,
        progress: Option<&Progress>,
    ) -> Self {
        Checkpoint {
            format: FORMAT.to_owned(),
            version: VERSION,
            vocab_hash: vocab_hash.to_owned(),
            model_shape: model.shape(),
            finetune: model.embedding.finetune,
            config,
            tensors: model
                .named_tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
            progress: progress.cloned(),
        }
    }

    /// Writes atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ck: Checkpoint<S> = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint {}: {e}", path.display())))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Rebuilds the model, checking the vocabulary hash when one is given.
    pub fn restore_model(&self, expected_vocab_hash: Option<&str>) -> Result<ModelParams<S>> {
        if let Some(h) = expected_vocab_hash {
            if h != self.vocab_hash {
                return Err(Error::Checkpoint(format!(
                    "vocabulary hash mismatch: checkpoint {} vs current {h}",
                    self.vocab_hash
                )));
            }
        }
        let mut model = ModelParams::zeros(self.model_shape, self.finetune)
            .map_err(|e| Error::Checkpoint(format!("invalid model shape: {e}")))?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Copies tensors into an existing model of identical layout.
    pub fn load_into(&self, model: &mut ModelParams<S>) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if names.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for ((name, shape), stored) in names.iter().zip(&self.tensors) {
            if *name != stored.name || *shape != stored.shape || stored.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: model {name} {shape:?} vs checkpoint {} {:?}",
                    stored.name, stored.shape
                )));
            }
        }
        for (t, stored) in model.tensors_mut().into_iter().zip(&self.tensors) {
            t.data_mut().copy_from_slice(&stored.data);
            t.zero_grad();
        }
        model.embedding.finetune = self.finetune;
        Ok(())
    }
}
