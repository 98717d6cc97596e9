//! Frequency-ranked vocabulary with reserved UNK/PAD slots, and word dropout.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::corpus::Example;
use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const PAD: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
const RESERVED: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    words: Vec<String>,
    freqs: Vec<u64>,
    max_size: usize,
}

impl Vocabulary {
    fn from_ranked(ranked: Vec<(String, u64)>, max_size: usize) -> Self {
        let mut words = vec![UNK_TOKEN.to_owned(), PAD_TOKEN.to_owned()];
        let mut freqs = vec![0, 0];
        for (w, f) in ranked {
            words.push(w);
            freqs.push(f);
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary {
            index,
            words,
            freqs,
            max_size,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn frequency(&self, index: usize) -> u64 {
        self.freqs[index]
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Index of `word`, or `UNK` when out of vocabulary.
    pub fn index_of(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }

    /// SHA-256 over the index-ordered word list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    /// `index<TAB>word<TAB>frequency` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (w, f)) in self.words.iter().zip(&self.freqs).enumerate() {
            let _ = writeln!(out, "{i}\t{w}\t{f}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut ranked = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: &str| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: message.to_owned(),
            };
            let mut parts = line.split('\t');
            let (Some(ix), Some(word), Some(freq), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err("expected `index<TAB>word<TAB>frequency`"));
            };
            let ix: usize = ix.parse().map_err(|_| err("invalid index"))?;
            let freq: u64 = freq.parse().map_err(|_| err("invalid frequency"))?;
            if ix != i {
                return Err(err("indices must be dense and ordered"));
            }
            let expected_reserved = [UNK_TOKEN, PAD_TOKEN];
            if i < RESERVED {
                if word != expected_reserved[i] {
                    return Err(err("reserved slot mismatch"));
                }
                continue;
            }
            ranked.push((word.to_owned(), freq));
        }
        let n = ranked.len();
        Ok(Vocabulary::from_ranked(ranked, n))
    }
}

/// Keeps the `max_size` most frequent words; ties broken lexicographically.
pub fn build_vocabulary<'a, I>(examples: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a Example>,
{
    if max_size == 0 {
        return Err(Error::Argument("vocabulary max_size must be >= 1".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut seen = 0usize;
    for ex in examples {
        seen += 1;
        for t in &ex.tokens {
            if t != UNK_TOKEN && t != PAD_TOKEN {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    if seen == 0 {
        return Err(Error::Argument("cannot build a vocabulary from zero examples".into()));
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    Ok(Vocabulary::from_ranked(
        ranked.into_iter().map(|(w, f)| (w.to_owned(), f)).collect(),
        max_size,
    ))
}

/// Replaces each token by the UNK token with probability `p`.
pub fn apply_word_dropout<R: Rng + ?Sized>(tokens: &[String], p: f64, rng: &mut R) -> Result<Vec<String>> {
    check_word_dropout(p)?;
    Ok(tokens
        .iter()
        .map(|t| {
            if p > 0.0 && rng.gen_bool(p) {
                UNK_TOKEN.to_owned()
            } else {
                t.clone()
            }
        })
        .collect())
}

/// Index-level word dropout used by the trainer.
pub fn apply_word_dropout_indices<R: Rng + ?Sized>(indices: &mut [usize], p: f64, rng: &mut R) -> Result<()> {
    check_word_dropout(p)?;
    if p > 0.0 {
        for ix in indices.iter_mut() {
            if rng.gen_bool(p) {
                *ix = UNK;
            }
        }
    }
    Ok(())
}

fn check_word_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Argument(format!("word dropout {p} not in [0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::preprocess;
    use crate::rng::{stream_rng, Stream};

    fn examples(texts: &[&str]) -> Vec<Example> {
        texts
            .iter()
            .map(|t| Example::unlabeled(preprocess(t).unwrap()))
            .collect()
    }

    #[test]
    fn frequency_then_lexicographic() {
        let ex = examples(&["a a b", "a c"]);
        let v = build_vocabulary(&ex, 2).unwrap();
        assert_eq!(v.words(), &["<unk>", "<pad>", "a", "b"]);
        assert_eq!(v.index_of("c"), UNK);
        assert_eq!(v.frequency(2), 3);
        assert_eq!(v.frequency(3), 1);
    }

    #[test]
    fn large_max_size_keeps_everything() {
        let ex = examples(&["the cat sat", "on the mat ."]);
        let v = build_vocabulary(&ex, 100).unwrap();
        for e in &ex {
            assert!(v.encode(&e.tokens).iter().all(|&i| i != UNK));
        }
        assert_eq!(v.len(), 6 + 2);
    }

    #[test]
    fn tsv_round_trip_and_hash() {
        let v = build_vocabulary(&examples(&["x y y z z z"]), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        v.save(&p).unwrap();
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back.words(), v.words());
        assert_eq!(back.hash(), v.hash());
        assert!(v.to_tsv().starts_with("0\t<unk>\t0\n1\t<pad>\t0\n2\tz\t3\n"));
    }

    #[test]
    fn errors() {
        assert!(build_vocabulary(&examples(&["a"]), 0).is_err());
        assert!(build_vocabulary(std::iter::empty(), 5).is_err());
    }

    #[test]
    fn word_dropout_zero_is_identity() {
        let toks: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut rng = stream_rng(0, Stream::WordDropout, 0);
        assert_eq!(apply_word_dropout(&toks, 0.0, &mut rng).unwrap(), toks);
        assert!(apply_word_dropout(&toks, 1.0, &mut rng).is_err());
    }

    #[test]
    fn word_dropout_rate() {
        let toks = vec!["w".to_string(); 100_000];
        let mut rng = stream_rng(4, Stream::WordDropout, 0);
        let out = apply_word_dropout(&toks, 0.1, &mut rng).unwrap();
        let frac = out.iter().filter(|t| *t == UNK_TOKEN).count() as f64 / toks.len() as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }
}
