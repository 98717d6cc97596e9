//! Ablation grids and the curve runner. Each setting is an independent run
//! seeded from (base seed, setting index); settings may run in parallel, up
//! to `MIXEDOBJ_THREADS` at a time.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::Preprocessing;
use crate::embedding::EmbeddingMode;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

pub const THREADS_ENV: &str = "MIXEDOBJ_THREADS";

/// Changes one setting makes to the base configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub use_labeled: Option<bool>,
    pub use_unlabeled: Option<bool>,
    /// (λ_ML, λ_AT, λ_EM, λ_VAT)
    pub lambdas: Option<[f64; 4]>,
    pub labeled_count: Option<usize>,
    pub unlabeled_count: Option<usize>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub embed_mode: Option<EmbeddingMode>,
    pub word_dropout: Option<f64>,
    pub token_budget: Option<usize>,
    pub vocab_size: Option<usize>,
    pub preprocessing: Option<Preprocessing>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        let o = &mut config.train.objective;
        if let Some(v) = self.use_labeled {
            o.use_labeled = v;
        }
        if let Some(v) = self.use_unlabeled {
            o.use_unlabeled = v;
        }
        if let Some([ml, at, em, vat]) = self.lambdas {
            (o.lambda_ml, o.lambda_at, o.lambda_em, o.lambda_vat) = (ml, at, em, vat);
        }
        if let Some(n) = self.labeled_count {
            config.data.labeled_limit = Some(n);
        }
        if let Some(n) = self.unlabeled_count {
            config.data.unlabeled_limit = Some(n);
        }
        if let Some(h) = self.hidden {
            config.model.hidden = h;
        }
        if let Some(n) = self.layers {
            config.model.layers = n;
        }
        if let Some(mode) = self.embed_mode {
            config.model.embed_mode = mode;
            if mode == EmbeddingMode::Random {
                config.model.embed_path = None;
            }
        }
        if let Some(p) = self.word_dropout {
            config.train.word_dropout = p;
        }
        if let Some(b) = self.token_budget {
            config.train.token_budget = b;
        }
        if let Some(v) = self.vocab_size {
            config.data.vocab_size = v;
        }
        if let Some(p) = self.preprocessing {
            config.data.preprocessing = p;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub name: String,
    pub overrides: Overrides,
}

/// Objective ablation: rows of (L, U, λ_ML, λ_AT, λ_EM, λ_VAT).
pub const TABLE5_ROWS: [[u8; 6]; 9] = [
    [1, 0, 1, 0, 0, 0],
    [1, 0, 1, 1, 0, 0],
    [1, 0, 1, 0, 1, 0],
    [1, 0, 1, 0, 0, 1],
    [1, 0, 1, 1, 1, 1],
    [1, 1, 1, 0, 1, 0],
    [1, 1, 1, 0, 0, 1],
    [1, 1, 1, 0, 1, 1],
    [1, 1, 1, 1, 1, 1],
];

pub fn table5() -> Vec<Setting> {
    TABLE5_ROWS
        .iter()
        .map(|r| {
            let lambdas = [r[2], r[3], r[4], r[5]].map(f64::from);
            let terms: Vec<&str> = ["ml", "at", "em", "vat"]
                .into_iter()
                .zip(lambdas)
                .filter(|(_, l)| *l > 0.0)
                .map(|(n, _)| n)
                .collect();
            Setting {
                name: format!("{}:{}", if r[1] == 1 { "L+U" } else { "L" }, terms.join("+")),
                overrides: Overrides {
                    use_labeled: Some(r[0] == 1),
                    use_unlabeled: Some(r[1] == 1),
                    lambdas: Some(lambdas),
                    ..Overrides::default()
                },
            }
        })
        .collect()
}

/// Model and training-regimen variations around the reference row.
/// Every row states all ablated columns; unlisted columns match the first.
pub fn table7() -> Vec<Setting> {
    let base = Overrides {
        lambdas: Some([1.0, 0.0, 0.0, 0.0]),
        layers: Some(1),
        embed_mode: Some(EmbeddingMode::Finetune),
        word_dropout: Some(0.1),
        token_budget: Some(3000),
        hidden: Some(512),
        vocab_size: Some(80_000),
        preprocessing: Some(Preprocessing::Standard),
        ..Overrides::default()
    };
    let row = |name: &str, f: &dyn Fn(&mut Overrides)| {
        let mut o = base.clone();
        f(&mut o);
        Setting {
            name: name.to_owned(),
            overrides: o,
        }
    };
    vec![
        row("reference", &|_| {}),
        row("layers=2", &|o| o.layers = Some(2)),
        row("embedding=random", &|o| o.embed_mode = Some(EmbeddingMode::Random)),
        row("embedding=static", &|o| o.embed_mode = Some(EmbeddingMode::Static)),
        row("word-dropout=0.0", &|o| o.word_dropout = Some(0.0)),
        row("token-budget=1000", &|o| o.token_budget = Some(1000)),
        row("hidden=256", &|o| o.hidden = Some(256)),
        row("hidden=1024", &|o| o.hidden = Some(1024)),
        row("vocab=30000", &|o| o.vocab_size = Some(30_000)),
        row("no-preprocessing", &|o| o.preprocessing = Some(Preprocessing::None)),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    LabeledCount,
    UnlabeledCount,
    Hidden,
    Layers,
}

pub fn axis(axis: Axis, values: &[usize]) -> Vec<Setting> {
    values
        .iter()
        .map(|&v| {
            let mut o = Overrides::default();
            let name = match axis {
                Axis::LabeledCount => {
                    o.labeled_count = Some(v);
                    "labeled"
                }
                Axis::UnlabeledCount => {
                    o.unlabeled_count = Some(v);
                    "unlabeled"
                }
                Axis::Hidden => {
                    o.hidden = Some(v);
                    "hidden"
                }
                Axis::Layers => {
                    o.layers = Some(v);
                    "layers"
                }
            };
            Setting {
                name: format!("{name}={v}"),
                overrides: o,
            }
        })
        .collect()
}

pub fn setting_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(base_seed, Stream::Sweep, index as u64)
}

/// The configuration a setting actually runs with.
pub fn resolve(base: &RunConfig, setting: &Setting, index: usize) -> RunConfig {
    let mut c = base.clone();
    setting.overrides.apply(&mut c);
    c.train.seed = setting_seed(base.train.seed, index);
    c
}

/// One plot-ready line of a sweep table, describing the resolved run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub name: String,
    pub seed: u64,
    #[serde(rename = "L")]
    pub labeled: u8,
    #[serde(rename = "U")]
    pub unlabeled: u8,
    pub lambda_ml: f64,
    pub lambda_at: f64,
    pub lambda_em: f64,
    pub lambda_vat: f64,
    pub labeled_count: Option<usize>,
    pub unlabeled_count: Option<usize>,
    pub layers: usize,
    pub hidden: usize,
    pub embed_mode: EmbeddingMode,
    pub word_dropout: f64,
    pub token_budget: usize,
    pub vocab_size: usize,
    pub preprocessing: Preprocessing,
    pub error_rate: Option<f64>,
}

impl SweepRow {
    pub fn describe(index: usize, name: &str, c: &RunConfig, error_rate: Option<f64>) -> Self {
        let o = &c.train.objective;
        SweepRow {
            index,
            name: name.to_owned(),
            seed: c.train.seed,
            labeled: o.use_labeled as u8,
            unlabeled: o.use_unlabeled as u8,
            lambda_ml: o.lambda_ml,
            lambda_at: o.lambda_at,
            lambda_em: o.lambda_em,
            lambda_vat: o.lambda_vat,
            labeled_count: c.data.labeled_limit,
            unlabeled_count: c.data.unlabeled_limit,
            layers: c.model.layers,
            hidden: c.model.hidden,
            embed_mode: c.model.embed_mode,
            word_dropout: c.train.word_dropout,
            token_budget: c.train.token_budget,
            vocab_size: c.data.vocab_size,
            preprocessing: c.data.preprocessing,
            error_rate,
        }
    }
}

pub const CSV_HEADER: &str = "index,name,seed,L,U,lambda_ml,lambda_at,lambda_em,lambda_vat,labeled_count,unlabeled_count,layers,hidden,embed_mode,word_dropout,token_budget,vocab_size,preprocessing,error_rate";

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.index.to_string(),
            r.name.clone(),
            r.seed.to_string(),
            r.labeled.to_string(),
            r.unlabeled.to_string(),
            r.lambda_ml.to_string(),
            r.lambda_at.to_string(),
            r.lambda_em.to_string(),
            r.lambda_vat.to_string(),
            opt(r.labeled_count),
            opt(r.unlabeled_count),
            r.layers.to_string(),
            r.hidden.to_string(),
            enum_name(&r.embed_mode),
            r.word_dropout.to_string(),
            r.token_budget.to_string(),
            r.vocab_size.to_string(),
            enum_name(&r.preprocessing),
            r.error_rate.map(|e| e.to_string()).unwrap_or_default(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn to_jsonl(rows: &[SweepRow]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parallelism cap from the environment, defaulting to the core count.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV}: expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Rows describing each resolved setting, without running anything.
pub fn plan(base: &RunConfig, settings: &[Setting]) -> Vec<SweepRow> {
    settings
        .iter()
        .enumerate()
        .map(|(i, s)| SweepRow::describe(i, &s.name, &resolve(base, s, i), None))
        .collect()
}

/// Runs every setting through `run` (which returns an error rate) and
/// returns rows in setting order.
pub fn curve_runner<F>(base: &RunConfig, settings: &[Setting], threads: usize, run: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&RunConfig) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.clamp(1, settings.len().max(1)))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        settings
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let c = resolve(base, s, i);
                log::info!("sweep setting {i} ({})", s.name);
                let err = run(&c)?;
                Ok(SweepRow::describe(i, &s.name, &c, Some(err)))
            })
            .collect()
    })
}
