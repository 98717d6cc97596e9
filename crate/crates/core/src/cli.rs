//! Command-line surface: train, evaluate, analyze, ablate, synth.
//!
//! Failures print one line `error[code=N kind=K]: message` to stderr and
//! exit with N: 2 configuration/usage, 3 data, 4 checkpoint, 1 other.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{evaluate, grid_search_weights, nearest_neighbors, predict_all, report_from_probs, DEFAULT_GRID_STEP, DEFAULT_HISTOGRAM_BINS};
use crate::checkpoint::Checkpoint;
use crate::config::{layered, read_config_file, ObjectiveKind, RunConfig};
use crate::corpus::{generate_synthetic, read_labeled, write_labeled, write_unlabeled, Dataset, Preprocessing, Split, SyntheticSpec};
use crate::embedding::EmbeddingMode;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::pipeline::{prepare, Corpora, Prepared};
use crate::rng::{derive_seed, Stream};
use crate::sweep::{self, Axis};
use crate::trainer::{TrainData, Trainer};
use crate::vocab::Vocabulary;

#[derive(Parser, Debug)]
#[command(name = "mixedobj", version, about = "BiLSTM-max text classifier with a mixed supervised/semi-supervised objective")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled file.
    Evaluate(EvaluateArgs),
    /// Embedding neighbors, probability histograms, ensembles.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run (or list) an ablation grid.
    Ablate(AblateArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

/// Flags layered over defaults, preset and config file.
#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub token_budget: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub lambda_ml: Option<f64>,
    #[arg(long)]
    pub lambda_at: Option<f64>,
    #[arg(long)]
    pub lambda_em: Option<f64>,
    #[arg(long)]
    pub lambda_vat: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub embed: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub embed_mode: Option<EmbedModeArg>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub word_dropout: Option<f64>,
    #[arg(long, value_enum)]
    pub preprocessing: Option<PreprocessingArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EmbedModeArg {
    Finetune,
    Static,
    Random,
}

impl From<EmbedModeArg> for EmbeddingMode {
    fn from(m: EmbedModeArg) -> Self {
        match m {
            EmbedModeArg::Finetune => EmbeddingMode::Finetune,
            EmbedModeArg::Static => EmbeddingMode::Static,
            EmbedModeArg::Random => EmbeddingMode::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PreprocessingArg {
    Standard,
    None,
}

impl From<PreprocessingArg> for Preprocessing {
    fn from(p: PreprocessingArg) -> Self {
        match p {
            PreprocessingArg::Standard => Preprocessing::Standard,
            PreprocessingArg::None => Preprocessing::None,
        }
    }
}

impl RunArgs {
    /// defaults < preset < config file < these flags
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = self.config.as_deref().map(read_config_file).transpose()?;
        let mut c = layered(file.as_ref(), self.preset.as_deref())?;
        self.apply(&mut c);
        c.validate()?;
        Ok(c)
    }

    fn apply(&self, c: &mut RunConfig) {
        if let Some(kind) = self.objective {
            kind.apply(c);
        }
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_some<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        set_some(&mut c.data.labeled, &self.labeled);
        set_some(&mut c.data.unlabeled, &self.unlabeled);
        set_some(&mut c.data.dev, &self.dev);
        set_some(&mut c.data.test, &self.test);
        set(&mut c.data.dev_fraction, &self.dev_fraction);
        set(&mut c.data.classes, &self.classes);
        set(&mut c.data.vocab_size, &self.vocab_size);
        set(&mut c.data.preprocessing, &self.preprocessing.map(Into::into));
        set(&mut c.train.max_epochs, &self.epochs);
        set(&mut c.train.token_budget, &self.token_budget);
        set(&mut c.train.learning_rate, &self.learning_rate);
        set(&mut c.train.dropout, &self.dropout);
        set(&mut c.train.word_dropout, &self.word_dropout);
        set(&mut c.train.seed, &self.seed);
        let o = &mut c.train.objective;
        set(&mut o.epsilon, &self.epsilon);
        set(&mut o.xi, &self.xi);
        set(&mut o.lambda_ml, &self.lambda_ml);
        set(&mut o.lambda_at, &self.lambda_at);
        set(&mut o.lambda_em, &self.lambda_em);
        set(&mut o.lambda_vat, &self.lambda_vat);
        set(&mut c.model.hidden, &self.hidden);
        set(&mut c.model.layers, &self.layers);
        set(&mut c.model.embed_dim, &self.embed_dim);
        set_some(&mut c.model.embed_path, &self.embed);
        set(&mut c.model.embed_mode, &self.embed_mode.map(Into::into));
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue the run in `--out` from its last checkpoint. The stored
    /// config is used, with any flags given here layered on top.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary file; defaults to `vocab.tsv` in the run directory.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub ck: CheckpointArgs,
    /// `label<TAB>text` file to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Report file; defaults to `<checkpoint>.eval.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Cosine nearest neighbors in the embedding layer.
    Neighbors {
        #[command(flatten)]
        ck: CheckpointArgs,
        #[arg(long)]
        word: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Histogram of max-class probabilities, split by correctness.
    Histogram {
        #[command(flatten)]
        ck: CheckpointArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
    },
    /// Grid search over interpolation weights of four models.
    Ensemble {
        #[arg(long)]
        ml: PathBuf,
        #[arg(long)]
        at: PathBuf,
        #[arg(long)]
        vat: PathBuf,
        #[arg(long)]
        em: PathBuf,
        /// Shared vocabulary of the four models.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GridArg {
    Table5,
    Table7,
    Axis,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub grid: GridArg,
    /// Swept quantity for `--grid axis`.
    #[arg(long, value_enum)]
    pub axis: Option<Axis>,
    /// Comma-separated values for `--grid axis`.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    /// List resolved settings without training.
    #[arg(long)]
    pub dry_run: bool,
    /// Directory for the CSV and JSONL tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub labeled: usize,
    #[arg(long, default_value_t = 0)]
    pub unlabeled: usize,
    /// Size of an extra labeled test file (0 writes none).
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 10)]
    pub min_len: usize,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.9)]
    pub signal: f64,
    #[arg(long, default_value_t = 0.5)]
    pub indicator_fraction: f64,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_owned();
            eprintln!("error[code=2 kind=usage]: {first}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[code={code} kind={}]: {msg}", e.kind());
            code
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a).map(|dir| println!("{}", dir.display())),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Trains per the resolved config and fills the run directory with the
/// config, vocabulary, metrics log, checkpoints and the final report.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let dir = &args.out;
    let ck_dir = dir.join(CHECKPOINT_DIR);
    let config = if args.resume {
        let stored = read_config_file(&dir.join(CONFIG_FILE))?;
        let mut c: RunConfig = serde_json::from_value(stored).map_err(|e| Error::Config(format!("stored config: {e}")))?;
        args.run.apply(&mut c);
        c.validate()?;
        c
    } else {
        args.run.resolve()?
    };
    let corpora = Corpora::load(&config)?;
    create_dir(&ck_dir)?;
    write_text(&dir.join(CONFIG_FILE), &pretty(&config)?)?;
    let snapshot = serde_json::to_value(&config)?;

    let metrics_path = dir.join(METRICS_FILE);
    let (trainer, vocab) = if args.resume {
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let ck = Checkpoint::<f64>::load(&ck_dir.join("last.json"))?;
        let model = ck.restore_model(Some(&vocab.hash()))?;
        let (Some(optimizer), Some(progress)) = (ck.optimizer, ck.progress) else {
            return Err(Error::Checkpoint("last.json carries no optimizer or progress state".into()));
        };
        let data = TrainData::encode(&corpora.train, corpora.dev.as_ref(), &vocab);
        let sink = fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(format!("opening {}", metrics_path.display()), e))?;
        let t = Trainer::resume(model, optimizer, progress, data, config.train.clone())?.with_metrics_sink(Box::new(sink));
        (t, vocab)
    } else {
        let Prepared { vocab, model, data } = prepare::<f64>(&config, &corpora)?;
        vocab.save(&dir.join(VOCAB_FILE))?;
        let sink = fs::File::create(&metrics_path).map_err(|e| Error::io(format!("creating {}", metrics_path.display()), e))?;
        let t = Trainer::new(model, data, config.train.clone())?.with_metrics_sink(Box::new(std::io::BufWriter::new(sink)));
        (t, vocab)
    };
    let outcome = trainer.with_checkpoints(ck_dir.clone(), vocab.hash(), snapshot).run()?;

    let best = ck_dir.join("best.json");
    let selected = if best.exists() {
        Checkpoint::<f64>::load(&best)?.restore_model(Some(&vocab.hash()))?
    } else {
        outcome.model
    };
    match corpora.report_split() {
        Some(split) => {
            let report = evaluate(&selected, split, &vocab, config.train.token_budget)?;
            log::info!("final error rate {:.4} on {} examples", report.error_rate, report.examples);
            write_text(&dir.join(REPORT_FILE), &pretty(&report)?)?;
        }
        None => log::warn!("no test or dev split configured; {REPORT_FILE} not written"),
    }
    Ok(dir.clone())
}

/// A checkpoint with its vocabulary and the settings it was trained with.
struct Loaded {
    model: ModelParams<f64>,
    vocab: Vocabulary,
    preprocessing: Preprocessing,
    token_budget: usize,
}

fn default_vocab_path(checkpoint: &Path) -> PathBuf {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    if dir.file_name().is_some_and(|n| n == CHECKPOINT_DIR) {
        dir.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE)
    } else {
        dir.join(VOCAB_FILE)
    }
}

fn load_checkpoint(args: &CheckpointArgs) -> Result<Loaded> {
    let ck = Checkpoint::<f64>::load(&args.checkpoint)?;
    let vocab_path = args.vocab.clone().unwrap_or_else(|| default_vocab_path(&args.checkpoint));
    let vocab = Vocabulary::load(&vocab_path)?;
    let model = ck.restore_model(Some(&vocab.hash()))?;
    let stored: Option<RunConfig> = serde_json::from_value(ck.config.clone()).ok();
    Ok(Loaded {
        model,
        vocab,
        preprocessing: stored.as_ref().map_or(Preprocessing::Standard, |c| c.data.preprocessing),
        token_budget: stored.as_ref().map_or(3000, |c| c.train.token_budget),
    })
}

fn read_split(path: &Path, loaded: &Loaded) -> Result<Dataset> {
    let classes = loaded.model.head.classes();
    Dataset::new(read_labeled(path, classes, loaded.preprocessing)?, Vec::new(), classes, Split::Test)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<crate::analysis::EvalReport> {
    let loaded = load_checkpoint(&args.ck)?;
    let split = read_split(&args.data, &loaded)?;
    let report = evaluate(&loaded.model, &split, &loaded.vocab, loaded.token_budget)?;
    let text = pretty(&report)?;
    print!("{text}");
    let out = args.out.clone().unwrap_or_else(|| args.ck.checkpoint.with_extension("eval.json"));
    write_text(&out, &text)?;
    Ok(report)
}

fn encode_split(split: &Dataset, vocab: &Vocabulary) -> (Vec<Vec<usize>>, Vec<usize>) {
    split
        .labeled()
        .iter()
        .map(|e| (vocab.encode(&e.tokens), e.label.expect("labeled split")))
        .unzip()
}

pub fn cmd_analyze(command: AnalyzeCommand) -> Result<()> {
    let out = match command {
        AnalyzeCommand::Neighbors { ck, word, k } => {
            let loaded = load_checkpoint(&ck)?;
            let ranked = nearest_neighbors(&word, &loaded.model.embedding, &loaded.vocab, k)?;
            let rows: Vec<serde_json::Value> = ranked
                .into_iter()
                .map(|(w, cos)| serde_json::json!({"word": w, "cosine": cos}))
                .collect();
            pretty(&serde_json::json!({"query": word, "neighbors": rows}))?
        }
        AnalyzeCommand::Histogram { ck, data, bins } => {
            if bins == 0 {
                return Err(Error::Argument("--bins must be positive".into()));
            }
            let loaded = load_checkpoint(&ck)?;
            let split = read_split(&data, &loaded)?;
            if split.labeled().is_empty() {
                return Err(Error::Contract("evaluation split has no labeled examples".into()));
            }
            let (seqs, labels) = encode_split(&split, &loaded.vocab);
            let probs = predict_all(&loaded.model, &seqs, loaded.token_budget)?;
            let report = report_from_probs(&probs, &labels, loaded.model.head.classes(), bins)?;
            pretty(&report.histogram)?
        }
        AnalyzeCommand::Ensemble { ml, at, vat, em, vocab, data, grid_step } => {
            let mut sets: Vec<Vec<Vec<f64>>> = Vec::with_capacity(4);
            let mut labels = Vec::new();
            let mut single = Vec::new();
            for path in [&ml, &at, &vat, &em] {
                let loaded = load_checkpoint(&CheckpointArgs {
                    checkpoint: path.clone(),
                    vocab: Some(vocab.clone()),
                })?;
                let split = read_split(&data, &loaded)?;
                if split.labeled().is_empty() {
                    return Err(Error::Contract("evaluation split has no labeled examples".into()));
                }
                let (seqs, l) = encode_split(&split, &loaded.vocab);
                let probs = predict_all(&loaded.model, &seqs, loaded.token_budget)?;
                single.push(report_from_probs(&probs, &l, loaded.model.head.classes(), 1)?.error_rate);
                labels = l;
                sets.push(probs);
            }
            let sets: [Vec<Vec<f64>>; 4] = sets.try_into().expect("four probability sets");
            let result = grid_search_weights(&sets, &labels, grid_step)?;
            pretty(&serde_json::json!({
                "weights": result.weights,
                "error_rate": result.error_rate,
                "candidates": result.candidates,
                "single_model_error_rates": {"ml": single[0], "at": single[1], "vat": single[2], "em": single[3]},
            }))?
        }
    };
    print!("{out}");
    Ok(())
}

/// Lists or runs the requested grid; writes `sweep.csv`/`sweep.jsonl`
/// (`grid.csv`/`grid.jsonl` for a dry run) when `--out` is given.
pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<sweep::SweepRow>> {
    let base = if args.dry_run {
        // listing needs no data files
        let file = args.run.config.as_deref().map(read_config_file).transpose()?;
        let mut c = layered(file.as_ref(), args.run.preset.as_deref())?;
        args.run.apply(&mut c);
        c
    } else {
        args.run.resolve()?
    };
    let settings = match args.grid {
        GridArg::Table5 => sweep::table5(),
        GridArg::Table7 => sweep::table7(),
        GridArg::Axis => {
            let axis = args
                .axis
                .ok_or_else(|| Error::Config("--grid axis needs --axis".into()))?;
            sweep::axis(axis, &args.values)
        }
    };
    let rows = if args.dry_run {
        sweep::plan(&base, &settings)
    } else {
        let threads = sweep::thread_cap()?;
        sweep::curve_runner(&base, &settings, threads, |c| {
            c.validate()?;
            let corpora = Corpora::load(c)?;
            if corpora.report_split().is_none() {
                return Err(Error::Config("ablation runs need --test or --dev data".into()));
            }
            let exp = crate::pipeline::run_experiment::<f64>(c, &corpora)?;
            Ok(exp.report.expect("report split present").error_rate)
        })?
    };
    let csv = sweep::to_csv(&rows);
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let stem = if args.dry_run { "grid" } else { "sweep" };
        write_text(&dir.join(format!("{stem}.csv")), &csv)?;
        write_text(&dir.join(format!("{stem}.jsonl")), &sweep::to_jsonl(&rows)?)?;
    }
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(csv.as_bytes())
        .map_err(|e| Error::io("writing to stdout", e))?;
    Ok(rows)
}

pub const SYNTH_TRAIN: &str = "train.tsv";
pub const SYNTH_UNLABELED: &str = "unlabeled.txt";
pub const SYNTH_TEST: &str = "test.tsv";

pub fn synth_spec(args: &SynthArgs) -> SyntheticSpec {
    SyntheticSpec {
        labeled: args.labeled,
        unlabeled: args.unlabeled,
        classes: args.classes,
        vocab_size: args.vocab_size,
        min_len: args.min_len,
        max_len: args.max_len,
        signal_strength: args.signal,
        indicator_fraction: args.indicator_fraction,
    }
}

/// Seed of the held-out test draw for a given corpus seed.
pub fn synth_test_seed(seed: u64) -> u64 {
    derive_seed(seed, Stream::Synthetic, 1)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = synth_spec(args);
    let data = generate_synthetic(args.seed, &spec)?;
    create_dir(&args.out)?;
    write_labeled(&args.out.join(SYNTH_TRAIN), data.labeled())?;
    if !data.unlabeled().is_empty() {
        write_unlabeled(&args.out.join(SYNTH_UNLABELED), data.unlabeled())?;
    }
    if args.test > 0 {
        let test_spec = SyntheticSpec {
            labeled: args.test,
            unlabeled: 0,
            ..spec
        };
        let test = generate_synthetic(synth_test_seed(args.seed), &test_spec)?;
        write_labeled(&args.out.join(SYNTH_TEST), test.labeled())?;
    }
    Ok(())
}
