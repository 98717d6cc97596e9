//! Resolved run configuration and its layering:
//! defaults < named preset < JSON config file < command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Preprocessing;
use crate::embedding::EmbeddingMode;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// `label<TAB>text` training file.
    pub labeled: Option<PathBuf>,
    /// One raw document per line.
    pub unlabeled: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Fraction of labeled data held out as dev when no dev file is given.
    pub dev_fraction: f64,
    pub classes: usize,
    pub vocab_size: usize,
    pub preprocessing: Preprocessing,
    /// Keep only the first n labeled / unlabeled training examples.
    pub labeled_limit: Option<usize>,
    pub unlabeled_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            labeled: None,
            unlabeled: None,
            dev: None,
            test: None,
            dev_fraction: 0.0,
            classes: 2,
            vocab_size: 80_000,
            preprocessing: Preprocessing::Standard,
            labeled_limit: None,
            unlabeled_limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Per direction.
    pub hidden: usize,
    pub layers: usize,
    /// word2vec text file; absent means randomly initialized rows.
    pub embed_path: Option<PathBuf>,
    pub embed_mode: EmbeddingMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            hidden: 512,
            layers: 1,
            embed_path: None,
            embed_mode: EmbeddingMode::Finetune,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if self.data.classes < 2 {
            return bad("data.classes", "need at least 2 classes");
        }
        if self.data.vocab_size < 3 {
            return bad("data.vocab_size", "must leave room for UNK, PAD and one word");
        }
        if !(0.0..1.0).contains(&self.data.dev_fraction) {
            return bad("data.dev_fraction", "must be in [0, 1)");
        }
        if self.model.embed_dim == 0 || self.model.hidden == 0 || self.model.layers == 0 {
            return bad("model", "embed_dim, hidden and layers must be positive");
        }
        match (self.model.embed_mode, &self.model.embed_path) {
            (EmbeddingMode::Static, None) => return bad("model.embed_mode", "static embeddings need an embedding file"),
            (EmbeddingMode::Random, Some(_)) => return bad("model.embed_mode", "random mode ignores the embedding file; drop one of them"),
            _ => {}
        }
        if self.train.objective.use_unlabeled
            && self.train.objective.needs_unlabeled()
            && self.data.unlabeled.is_none()
            && self.data.labeled.is_some()
        {
            log::info!("no unlabeled file: EM/VAT see labeled batches only");
        }
        self.train.validate()
    }

    /// Per-dataset token budget, vocabulary size, epsilon and class count.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let p = preset(name)?;
        self.preset = Some(p.name.to_owned());
        self.train.token_budget = p.token_budget;
        self.data.vocab_size = p.vocab_size;
        self.train.objective.epsilon = p.epsilon;
        self.data.classes = p.classes;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub token_budget: usize,
    pub vocab_size: usize,
    pub epsilon: f64,
    pub classes: usize,
}

pub const PRESETS: [Preset; 7] = [
    Preset { name: "acl-imdb", token_budget: 3000, vocab_size: 80_000, epsilon: 5.0, classes: 2 },
    Preset { name: "elec", token_budget: 2000, vocab_size: 40_000, epsilon: 2.0, classes: 2 },
    Preset { name: "ag-news", token_budget: 2000, vocab_size: 75_000, epsilon: 1.0, classes: 4 },
    Preset { name: "dbpedia", token_budget: 7500, vocab_size: 50_000, epsilon: 1.0, classes: 14 },
    Preset { name: "rcv1", token_budget: 2000, vocab_size: 100_000, epsilon: 2.0, classes: 51 },
    Preset { name: "imdb", token_budget: 15_000, vocab_size: 150_000, epsilon: 5.0, classes: 5 },
    Preset { name: "arxiv", token_budget: 8000, vocab_size: 100_000, epsilon: 1.0, classes: 127 },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Config(format!("preset: unknown {name:?}, expected one of {}", known.join(", ")))
    })
}

/// Shorthand for a λ vector plus its default epoch count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Ml,
    At,
    Em,
    Vat,
    Mixed,
}

impl ObjectiveKind {
    /// (λ_ML, λ_AT, λ_EM, λ_VAT)
    pub fn lambdas(self) -> [f64; 4] {
        match self {
            ObjectiveKind::Ml => [1.0, 0.0, 0.0, 0.0],
            ObjectiveKind::At => [1.0, 1.0, 0.0, 0.0],
            ObjectiveKind::Em => [1.0, 0.0, 1.0, 0.0],
            ObjectiveKind::Vat => [1.0, 0.0, 0.0, 1.0],
            ObjectiveKind::Mixed => [1.0, 1.0, 1.0, 1.0],
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            ObjectiveKind::Ml => 20,
            _ => 50,
        }
    }

    pub fn apply(self, config: &mut RunConfig) {
        let [ml, at, em, vat] = self.lambdas();
        let o = &mut config.train.objective;
        o.lambda_ml = ml;
        o.lambda_at = at;
        o.lambda_em = em;
        o.lambda_vat = vat;
        config.train.max_epochs = self.default_epochs();
    }
}

/// Recursively overlays `top` onto `base`; objects merge key by key,
/// everything else is replaced.
pub fn merge_json(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Error::Config(format!("config {}: top level must be an object", path.display())));
    }
    Ok(v)
}

/// Defaults, then the preset (from `preset_override` or the file's
/// `preset` key), then the file itself. Command-line overrides are applied
/// by the caller on the result.
pub fn layered(file: Option<&Value>, preset_override: Option<&str>) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    let file_preset = file.and_then(|f| f.get("preset")).and_then(Value::as_str);
    if let Some(name) = preset_override.or(file_preset) {
        config.apply_preset(name)?;
    }
    if let Some(file) = file {
        let mut merged = serde_json::to_value(&config)?;
        merge_json(&mut merged, file);
        if let Some(name) = preset_override {
            merged["preset"] = Value::String(name.to_owned());
        }
        config = serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn presets_resolve() {
        let mut c = RunConfig::default();
        c.apply_preset("acl-imdb").unwrap();
        assert_eq!((c.train.token_budget, c.data.vocab_size, c.train.objective.epsilon), (3000, 80_000, 5.0));
        c.apply_preset("ag-news").unwrap();
        assert_eq!((c.train.token_budget, c.data.vocab_size, c.train.objective.epsilon), (2000, 75_000, 1.0));
        assert!(matches!(c.apply_preset("mnist"), Err(Error::Config(_))));
    }

    #[test]
    fn ml_objective_sets_twenty_epochs() {
        let mut c = RunConfig::default();
        ObjectiveKind::Ml.apply(&mut c);
        assert_eq!(c.train.objective.lambdas(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.train.max_epochs, 20);
        ObjectiveKind::Mixed.apply(&mut c);
        assert_eq!(c.train.max_epochs, 50);
    }

    #[test]
    fn file_overrides_preset() {
        let file = json!({"preset": "elec", "train": {"token_budget": 123}, "model": {"hidden": 8}});
        let c = layered(Some(&file), None).unwrap();
        assert_eq!(c.train.token_budget, 123);
        assert_eq!(c.data.vocab_size, 40_000);
        assert_eq!(c.model.hidden, 8);
        assert_eq!(c.model.layers, 1);
        let c = layered(Some(&file), Some("acl-imdb")).unwrap();
        assert_eq!(c.preset.as_deref(), Some("acl-imdb"));
        assert_eq!(c.data.vocab_size, 80_000);
        assert_eq!(c.train.token_budget, 123);
    }

    #[test]
    fn unknown_field_value_is_a_config_error() {
        let file = json!({"train": {"token_budget": "lots"}});
        assert!(matches!(layered(Some(&file), None), Err(Error::Config(_))));
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.apply_preset("dbpedia").unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }
}
