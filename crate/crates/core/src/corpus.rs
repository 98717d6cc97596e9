//! Tokenization, dataset files, and the synthetic corpus generator.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

const EXTRA_SYMBOLS: &[char] = &['$', '+', '<', '=', '>', '^', '`', '|', '~'];

/// Unicode punctuation (P*) plus a fixed set of ASCII symbols.
pub fn is_punctuation(c: char) -> bool {
    EXTRA_SYMBOLS.contains(&c)
        || matches!(
            get_general_category(c),
            GeneralCategory::ConnectorPunctuation
                | GeneralCategory::DashPunctuation
                | GeneralCategory::OpenPunctuation
                | GeneralCategory::ClosePunctuation
                | GeneralCategory::InitialPunctuation
                | GeneralCategory::FinalPunctuation
                | GeneralCategory::OtherPunctuation
        )
}

/// Lowercases and splits on whitespace, emitting every punctuation character as its own token.
pub fn preprocess(raw: &str) -> Result<Vec<String>> {
    let lower = raw.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in lower.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    if tokens.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Ok(tokens)
}

/// Text normalization applied when reading corpora.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocessing {
    /// Lowercase and split punctuation.
    #[default]
    Standard,
    /// Whitespace split only.
    None,
}

impl Preprocessing {
    pub fn tokenize(self, raw: &str) -> Result<Vec<String>> {
        match self {
            Preprocessing::Standard => preprocess(raw),
            Preprocessing::None => {
                let tokens: Vec<String> = raw.split_whitespace().map(str::to_owned).collect();
                if tokens.is_empty() {
                    Err(Error::EmptyDocument)
                } else {
                    Ok(tokens)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: Option<usize>,
}

impl Example {
    pub fn labeled(tokens: Vec<String>, label: usize) -> Self {
        Example {
            tokens,
            label: Some(label),
        }
    }

    pub fn unlabeled(tokens: Vec<String>) -> Self {
        Example { tokens, label: None }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    labeled: Vec<Example>,
    unlabeled: Vec<Example>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(labeled: Vec<Example>, unlabeled: Vec<Example>, num_classes: usize, split: Split) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Argument(format!("need at least 2 classes, got {num_classes}")));
        }
        for (i, ex) in labeled.iter().enumerate() {
            if ex.tokens.is_empty() {
                return Err(Error::Argument(format!("labeled example {i} has no tokens")));
            }
            match ex.label {
                Some(k) if k < num_classes => {}
                Some(k) => {
                    return Err(Error::Argument(format!(
                        "labeled example {i} has label {k} >= {num_classes}"
                    )))
                }
                None => return Err(Error::Argument(format!("labeled example {i} carries no label"))),
            }
        }
        for (i, ex) in unlabeled.iter().enumerate() {
            if ex.tokens.is_empty() || ex.label.is_some() {
                return Err(Error::Argument(format!("unlabeled example {i} is empty or labeled")));
            }
        }
        Ok(Dataset {
            labeled,
            unlabeled,
            num_classes,
            split,
        })
    }

    pub fn labeled(&self) -> &[Example] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[Example] {
        &self.unlabeled
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Seeded hold-out of `fraction` of the labeled examples as a dev split.
    /// Returns `(train, dev)`; unlabeled data stays with the train split.
    pub fn hold_out_dev(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Argument(format!("dev fraction {fraction} not in [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.labeled.len()).collect();
        order.shuffle(&mut stream_rng(seed, Stream::DevSplit, 0));
        let n_dev = ((self.labeled.len() as f64) * fraction).round() as usize;
        let n_dev = n_dev.min(self.labeled.len().saturating_sub(1));
        let (dev_ix, train_ix) = order.split_at(n_dev);
        let mut train_ix = train_ix.to_vec();
        let mut dev_ix = dev_ix.to_vec();
        train_ix.sort_unstable();
        dev_ix.sort_unstable();
        let pick = |ix: &[usize]| ix.iter().map(|&i| self.labeled[i].clone()).collect::<Vec<_>>();
        let train = Dataset::new(pick(&train_ix), self.unlabeled.clone(), self.num_classes, Split::Train)?;
        let dev = Dataset::new(pick(&dev_ix), Vec::new(), self.num_classes, Split::Dev)?;
        Ok((train, dev))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Parses `label<TAB>text` rows.
pub fn read_labeled(path: &Path, num_classes: usize, pre: Preprocessing) -> Result<Vec<Example>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `label<TAB>text`".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid label {label:?}")))?;
        if label >= num_classes {
            return Err(Error::LabelRange {
                path: path.to_path_buf(),
                line: line_no,
                label,
                classes: num_classes,
            });
        }
        let tokens = pre.tokenize(body).map_err(|_| parse_err("empty document".into()))?;
        out.push(Example::labeled(tokens, label));
    }
    Ok(out)
}

/// Parses one raw document per line.
pub fn read_unlabeled(path: &Path, pre: Preprocessing) -> Result<Vec<Example>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            pre.tokenize(line).map(Example::unlabeled).map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty document".into(),
            })
        })
        .collect()
}

pub fn load_dataset(
    labeled_path: &Path,
    unlabeled_path: Option<&Path>,
    num_classes: usize,
    pre: Preprocessing,
) -> Result<Dataset> {
    let labeled = read_labeled(labeled_path, num_classes, pre)?;
    let unlabeled = match unlabeled_path {
        Some(p) => read_unlabeled(p, pre)?,
        None => Vec::new(),
    };
    Dataset::new(labeled, unlabeled, num_classes, Split::Train)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(body.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_labeled(path: &Path, examples: &[Example]) -> Result<()> {
    let mut body = String::new();
    for ex in examples {
        let label = ex
            .label
            .ok_or_else(|| Error::Argument("cannot write an unlabeled example as labeled".into()))?;
        body.push_str(&label.to_string());
        body.push('\t');
        body.push_str(&ex.tokens.join(" "));
        body.push('\n');
    }
    write_file(path, &body)
}

pub fn write_unlabeled(path: &Path, examples: &[Example]) -> Result<()> {
    let mut body = String::new();
    for ex in examples {
        body.push_str(&ex.tokens.join(" "));
        body.push('\n');
    }
    write_file(path, &body)
}

/// Parameters of the synthetic topic corpus.
///
/// The vocabulary is `w0 .. w{vocab_size-1}`. The first
/// `indicator_fraction * vocab_size` words are split into `classes` disjoint
/// indicator blocks; block `k` belongs to class `k`. A class-`k` document
/// draws each token from block `k` with probability `signal_strength`, and
/// uniformly from the whole vocabulary otherwise. The assignment depends only
/// on these parameters, so corpora drawn with different seeds share it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub labeled: usize,
    pub unlabeled: usize,
    pub classes: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub signal_strength: f64,
    #[serde(default = "default_indicator_fraction")]
    pub indicator_fraction: f64,
}

fn default_indicator_fraction() -> f64 {
    0.5
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            labeled: 200,
            unlabeled: 0,
            classes: 2,
            vocab_size: 200,
            min_len: 10,
            max_len: 30,
            signal_strength: 0.9,
            indicator_fraction: default_indicator_fraction(),
        }
    }
}

impl SyntheticSpec {
    pub fn indicators_per_class(&self) -> usize {
        (((self.vocab_size as f64) * self.indicator_fraction) as usize / self.classes).max(1)
    }

    /// Indicator block owned by `class`, as word indices.
    pub fn indicator_range(&self, class: usize) -> std::ops::Range<usize> {
        let n = self.indicators_per_class();
        class * n..(class + 1) * n
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Argument("synthetic corpus needs K >= 2".into()));
        }
        if self.vocab_size < 2 * self.classes {
            return Err(Error::Argument(format!(
                "vocab_size {} < 2K = {}",
                self.vocab_size,
                2 * self.classes
            )));
        }
        if !(self.signal_strength > 0.5 && self.signal_strength <= 1.0) {
            return Err(Error::Argument(format!(
                "signal_strength {} not in (0.5, 1]",
                self.signal_strength
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Argument(format!(
                "invalid length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if !(self.indicator_fraction > 0.0 && self.indicator_fraction <= 1.0)
            || self.indicators_per_class() * self.classes > self.vocab_size
        {
            return Err(Error::Argument(format!(
                "indicator_fraction {} not in (0, 1]",
                self.indicator_fraction
            )));
        }
        Ok(())
    }

    fn document<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<String> {
        let len = rng.gen_range(self.min_len..=self.max_len);
        let block = self.indicator_range(class);
        (0..len)
            .map(|_| {
                let w = if rng.gen_bool(self.signal_strength.clamp(0.0, 1.0)) {
                    rng.gen_range(block.clone())
                } else {
                    rng.gen_range(0..self.vocab_size)
                };
                format!("w{w}")
            })
            .collect()
    }

    pub(crate) fn sample_unchecked(&self, seed: u64) -> Result<Dataset> {
        let mut rng = stream_rng(seed, Stream::Synthetic, 0);
        let mut labeled = Vec::with_capacity(self.labeled);
        for _ in 0..self.labeled {
            let k = rng.gen_range(0..self.classes);
            labeled.push(Example::labeled(self.document(k, &mut rng), k));
        }
        let mut unlabeled = Vec::with_capacity(self.unlabeled);
        for _ in 0..self.unlabeled {
            let k = rng.gen_range(0..self.classes);
            unlabeled.push(Example::unlabeled(self.document(k, &mut rng)));
        }
        Dataset::new(labeled, unlabeled, self.classes, Split::Train)
    }
}

/// Draws a synthetic corpus; deterministic in `(seed, spec)`.
pub fn generate_synthetic(seed: u64, spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    spec.sample_unchecked(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn splits_punctuation() {
        assert_eq!(preprocess("Great movie!").unwrap(), toks(&["great", "movie", "!"]));
        assert_eq!(preprocess("A-B").unwrap(), toks(&["a", "-", "b"]));
        assert_eq!(preprocess("  DON'T  ").unwrap(), toks(&["don", "'", "t"]));
        assert_eq!(preprocess("1+1=2 $5").unwrap(), toks(&["1", "+", "1", "=", "2", "$", "5"]));
        assert_eq!(preprocess("«quoted»").unwrap(), toks(&["«", "quoted", "»"]));
    }

    #[test]
    fn empty_document_is_an_error() {
        assert!(matches!(preprocess(""), Err(Error::EmptyDocument)));
        assert!(matches!(preprocess(" \t\n "), Err(Error::EmptyDocument)));
    }

    #[test]
    fn raw_mode_keeps_case_and_punctuation() {
        assert_eq!(
            Preprocessing::None.tokenize("Great movie!").unwrap(),
            toks(&["Great", "movie!"])
        );
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(s in "[a-zA-Z0-9 ,.!?'\"()\\-_$+<=>^|~:;éÀß«»—]{1,40}") {
            if let Ok(first) = preprocess(&s) {
                let again = preprocess(&first.join(" ")).unwrap();
                prop_assert_eq!(again, first);
            }
        }
    }

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            labeled: 30,
            unlabeled: 10,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(5, &spec()).unwrap();
        let b = generate_synthetic(5, &spec()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(6, &spec()).unwrap());
        assert_eq!(a.labeled().len(), 30);
        assert_eq!(a.unlabeled().len(), 10);
        assert!(a.unlabeled().iter().all(|e| e.label.is_none()));
    }

    #[test]
    fn synthetic_rejects_bad_arguments() {
        let bad = [
            SyntheticSpec { classes: 1, ..spec() },
            SyntheticSpec { vocab_size: 3, ..spec() },
            SyntheticSpec { signal_strength: 0.5, ..spec() },
            SyntheticSpec { signal_strength: 1.1, ..spec() },
            SyntheticSpec { min_len: 0, ..spec() },
            SyntheticSpec { min_len: 5, max_len: 4, ..spec() },
        ];
        for s in bad {
            assert!(matches!(generate_synthetic(0, &s), Err(Error::Argument(_))), "{s:?}");
        }
    }

    #[test]
    fn synthetic_without_unlabeled() {
        let d = generate_synthetic(1, &SyntheticSpec { unlabeled: 0, ..spec() }).unwrap();
        assert!(d.unlabeled().is_empty());
        assert_eq!(d.labeled().len(), 30);
    }

    /// Multinomial naive Bayes over unigram counts (add-one smoothing).
    fn unigram_error(train: &Dataset, test: &Dataset) -> f64 {
        let k = train.num_classes();
        let mut counts: Vec<HashMap<&str, f64>> = vec![HashMap::new(); k];
        let mut totals = vec![0.0f64; k];
        let mut priors = vec![0.0f64; k];
        for ex in train.labeled() {
            let y = ex.label.unwrap();
            priors[y] += 1.0;
            for t in &ex.tokens {
                *counts[y].entry(t.as_str()).or_default() += 1.0;
                totals[y] += 1.0;
            }
        }
        let vocab = 1000.0;
        let mut wrong = 0;
        for ex in test.labeled() {
            let scores: Vec<f64> = (0..k)
                .map(|c| {
                    (priors[c] + 1.0).ln()
                        + ex.tokens
                            .iter()
                            .map(|t| {
                                ((counts[c].get(t.as_str()).copied().unwrap_or(0.0) + 1.0) / (totals[c] + vocab)).ln()
                            })
                            .sum::<f64>()
                })
                .collect();
            let pred = (0..k).fold(0, |b, c| if scores[c] > scores[b] { c } else { b });
            if pred != ex.label.unwrap() {
                wrong += 1;
            }
        }
        wrong as f64 / test.labeled().len() as f64
    }

    #[test]
    fn full_signal_is_perfectly_separable_by_unigrams() {
        let s = SyntheticSpec {
            labeled: 200,
            signal_strength: 1.0,
            ..SyntheticSpec::default()
        };
        let train = generate_synthetic(11, &s).unwrap();
        let test = generate_synthetic(12, &SyntheticSpec { labeled: 500, ..s }).unwrap();
        assert_eq!(unigram_error(&train, &test), 0.0);
    }

    #[test]
    fn no_signal_gives_chance_accuracy() {
        let mut errs = Vec::new();
        for seed in 0..5 {
            let s = SyntheticSpec {
                labeled: 400,
                signal_strength: 0.0,
                ..SyntheticSpec::default()
            };
            let train = s.sample_unchecked(seed).unwrap();
            let test = SyntheticSpec { labeled: 2000, ..s }.sample_unchecked(seed + 100).unwrap();
            errs.push(unigram_error(&train, &test));
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!((mean - 0.5).abs() <= 0.05, "mean error {mean} ({errs:?})");
    }

    #[test]
    fn dev_hold_out_partitions_labeled() {
        let d = generate_synthetic(2, &SyntheticSpec { labeled: 100, ..spec() }).unwrap();
        let (train, dev) = d.hold_out_dev(0.1, 9).unwrap();
        assert_eq!(dev.labeled().len(), 10);
        assert_eq!(train.labeled().len(), 90);
        assert_eq!(train.unlabeled().len(), d.unlabeled().len());
        assert_eq!(dev.split(), Split::Dev);
    }
}
