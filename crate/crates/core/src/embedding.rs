//! Embedding tables and the word2vec text format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{sample_uniform, stream_rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, PAD};

/// How the embedding layer is initialized and whether it trains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Pretrained rows, updated during training.
    #[default]
    Finetune,
    /// Pretrained rows, frozen.
    Static,
    /// Entire matrix randomly initialized and trained.
    Random,
}

impl EmbeddingMode {
    pub fn finetune(self) -> bool {
        !matches!(self, EmbeddingMode::Static)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EmbeddingMatrix<S> {
    pub matrix: Tensor<S>,
    pub finetune: bool,
}

fn init_bound(dim: usize) -> f64 {
    0.1 / (dim as f64).sqrt()
}

impl<S: Scalar> EmbeddingMatrix<S> {
    /// Uniform `[-0.1/sqrt(d), 0.1/sqrt(d)]` rows, PAD row zero.
    pub fn random(rows: usize, dim: usize, seed: u64, finetune: bool) -> Result<Self> {
        if dim == 0 || rows <= PAD {
            return Err(Error::Argument(format!("invalid embedding shape {rows}x{dim}")));
        }
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut matrix: Tensor<S> = sample_uniform(&[rows, dim], init_bound(dim), &mut rng);
        matrix.row_mut(PAD).iter_mut().for_each(|v| *v = S::zero());
        Ok(EmbeddingMatrix { matrix, finetune })
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, index: usize) -> &[S] {
        self.matrix.row(index)
    }

    /// SHA-256 over the raw little-endian bit patterns.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.matrix.data() {
            h.update(v.as_f64().to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Copies rows for vocabulary words found in a word2vec text file; every
/// other row is drawn uniformly in `[-0.1/sqrt(d), 0.1/sqrt(d)]` and PAD is zero.
pub fn load_pretrained<S: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    expected_dim: usize,
    seed: u64,
    finetune: bool,
) -> Result<EmbeddingMatrix<S>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let (_, header) = lines.next().ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?;
    let mut hp = header.split_whitespace();
    let (Some(count), Some(dim), None) = (hp.next(), hp.next(), hp.next()) else {
        return Err(parse_err(1, "header must be `count dim`".into()));
    };
    let count: usize = count.parse().map_err(|_| parse_err(1, format!("invalid count {count:?}")))?;
    let dim: usize = dim.parse().map_err(|_| parse_err(1, format!("invalid dim {dim:?}")))?;
    if dim != expected_dim {
        return Err(Error::Format(format!(
            "{}: embedding dimension {dim} does not match expected {expected_dim}",
            path.display()
        )));
    }

    let mut emb = EmbeddingMatrix::random(vocab.len(), dim, seed, finetune)?;
    let mut rows_read = 0;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let mut values = Vec::with_capacity(dim);
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| parse_err(line_no, format!("malformed float {p:?}")))?;
            values.push(S::lit(v));
        }
        if values.len() != dim {
            return Err(Error::Format(format!(
                "{}:{line_no}: expected {dim} values, found {}",
                path.display(),
                values.len()
            )));
        }
        rows_read += 1;
        if let Some(ix) = vocab.get(word) {
            if ix != PAD {
                emb.matrix.row_mut(ix).copy_from_slice(&values);
            }
        }
    }
    if rows_read != count {
        return Err(Error::Format(format!(
            "{}: header declares {count} vectors, found {rows_read}",
            path.display()
        )));
    }
    Ok(emb)
}

/// Writes `count dim` then `word v1 .. vd` with 17 significant digits.
pub fn write_word2vec_text<S: Scalar>(path: &Path, words: &[String], matrix: &Tensor<S>) -> Result<()> {
    let shape = matrix.shape();
    if shape.len() != 2 || shape[0] != words.len() {
        return Err(Error::shape("write_word2vec_text", shape, &[words.len()]));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", shape[0], shape[1]);
    for (i, w) in words.iter().enumerate() {
        out.push_str(w);
        for v in matrix.row(i) {
            let _ = write!(out, " {:.16e}", v.as_f64());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Plain (non-differentiable) row lookup: `T x d`.
pub fn lookup<S: Scalar>(tokens: &[String], vocab: &Vocabulary, emb: &EmbeddingMatrix<S>) -> Result<Tensor<S>> {
    if tokens.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let d = emb.dim();
    let mut data = Vec::with_capacity(tokens.len() * d);
    for t in tokens {
        data.extend_from_slice(emb.row(vocab.index_of(t)));
    }
    Tensor::new(vec![tokens.len(), d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;
    use crate::vocab::{build_vocabulary, UNK};

    fn vocab() -> Vocabulary {
        let ex = vec![Example::unlabeled(
            ["good", "bad", "good", "meh"].iter().map(|s| s.to_string()).collect(),
        )];
        build_vocabulary(&ex, 10).unwrap()
    }

    #[test]
    fn copies_rows_and_fills_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        fs::write(&p, "2 3\ngood 0.1 0.2 0.3\nother 1 2 3\n").unwrap();
        let v = vocab();
        let e: EmbeddingMatrix<f64> = load_pretrained(&p, &v, 3, 1, true).unwrap();
        assert_eq!(e.row(v.index_of("good")), &[0.1, 0.2, 0.3]);
        let bound = 0.1 / 3f64.sqrt();
        for w in ["bad", "meh"] {
            assert!(e.row(v.index_of(w)).iter().all(|x| x.abs() <= bound));
        }
        assert!(e.row(UNK).iter().all(|x| x.abs() <= bound));
        assert!(e.row(PAD).iter().all(|&x| x == 0.0));
        let again: EmbeddingMatrix<f64> = load_pretrained(&p, &v, 3, 1, true).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        fs::write(&p, "1 3\ngood 0.1 0.2 0.3\n").unwrap();
        assert!(matches!(
            load_pretrained::<f64>(&p, &vocab(), 4, 0, true),
            Err(Error::Format(_))
        ));
        fs::write(&p, "1 3\ngood 0.1 zz 0.3\n").unwrap();
        assert!(matches!(
            load_pretrained::<f64>(&p, &vocab(), 3, 0, true),
            Err(Error::Parse { line: 2, .. })
        ));
        fs::write(&p, "1 3\ngood 0.1 0.3\n").unwrap();
        assert!(matches!(
            load_pretrained::<f64>(&p, &vocab(), 3, 0, true),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn lookup_rows() {
        let v = vocab();
        let e: EmbeddingMatrix<f64> = EmbeddingMatrix::random(v.len(), 4, 3, true).unwrap();
        let toks: Vec<String> = vec!["zzz".into(), "qqq".into()];
        let t = lookup(&toks, &v, &e).unwrap();
        assert_eq!(t.row(0), e.row(UNK));
        assert_eq!(t.row(1), e.row(UNK));
        let t = lookup(&["good".to_string()], &v, &e).unwrap();
        assert_eq!(t.shape(), &[1, 4]);
        assert_eq!(t.row(0), e.row(v.index_of("good")));
    }
}
