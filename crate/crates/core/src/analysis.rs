//! Evaluation reports, embedding nearest neighbors, and ensemble
//! interpolation with a simplex grid search over the mixing weights.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::batching::pack_greedy;
use crate::corpus::Dataset;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::model::{predict_probs, ModelParams};
use crate::scalar::Scalar;
use crate::vocab::{Vocabulary, PAD, UNK};

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;
pub const DEFAULT_GRID_STEP: f64 = 0.05;

/// Evaluation-mode class probabilities for every sequence, computed in
/// in-order batches of at most `token_budget` tokens.
pub fn predict_all<S: Scalar>(model: &ModelParams<S>, sequences: &[Vec<usize>], token_budget: usize) -> Result<Vec<Vec<S>>> {
    let lengths: Vec<usize> = sequences.iter().map(Vec::len).collect();
    let budget = token_budget.max(lengths.iter().copied().max().unwrap_or(1));
    let order: Vec<usize> = (0..sequences.len()).collect();
    let mut out = Vec::with_capacity(sequences.len());
    for batch in pack_greedy(&lengths, &order, budget)? {
        let seqs: Vec<Vec<usize>> = batch.iter().map(|&i| sequences[i].clone()).collect();
        out.extend(predict_probs(model, &seqs)?);
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(p: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

pub fn error_rate<S: Scalar>(model: &ModelParams<S>, sequences: &[Vec<usize>], labels: &[usize], token_budget: usize) -> Result<f64> {
    if sequences.is_empty() || sequences.len() != labels.len() {
        return Err(Error::Contract("error rate needs one label per sequence and at least one sequence".into()));
    }
    let probs = predict_all(model, sequences, token_budget)?;
    let wrong = probs.iter().zip(labels).filter(|(p, &y)| argmax(p) != y).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Max-class probability counts, split by whether the prediction was right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityHistogram {
    pub edges: Vec<f64>,
    pub correct: Vec<u64>,
    pub incorrect: Vec<u64>,
}

impl ProbabilityHistogram {
    /// `bins` equal-width bins over `[1/K, 1]`.
    pub fn new(classes: usize, bins: usize) -> Self {
        let lo = 1.0 / classes as f64;
        let edges = (0..=bins).map(|i| lo + (1.0 - lo) * i as f64 / bins as f64).collect();
        ProbabilityHistogram {
            edges,
            correct: vec![0; bins],
            incorrect: vec![0; bins],
        }
    }

    pub fn bin_of(&self, p: f64) -> usize {
        let bins = self.correct.len();
        let lo = self.edges[0];
        let pos = ((p - lo) / (1.0 - lo) * bins as f64).floor();
        if pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        }
    }

    pub fn add(&mut self, p: f64, correct: bool) {
        let b = self.bin_of(p);
        if correct {
            self.correct[b] += 1;
        } else {
            self.incorrect[b] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.correct.iter().chain(&self.incorrect).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub error_rate: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub histogram: ProbabilityHistogram,
    pub examples: usize,
}

/// Builds a report from per-example probabilities and gold labels.
pub fn report_from_probs<S: Scalar>(probs: &[Vec<S>], labels: &[usize], classes: usize, bins: usize) -> Result<EvalReport> {
    if probs.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut histogram = ProbabilityHistogram::new(classes, bins);
    let mut wrong = 0;
    for (p, &y) in probs.iter().zip(labels) {
        if p.len() != classes || y >= classes {
            return Err(Error::Contract(format!("prediction/label outside {classes} classes")));
        }
        let pred = argmax(p);
        confusion[y][pred] += 1;
        histogram.add(p[pred].as_f64(), pred == y);
        if pred != y {
            wrong += 1;
        }
    }
    Ok(EvalReport {
        error_rate: wrong as f64 / labels.len() as f64,
        confusion,
        histogram,
        examples: labels.len(),
    })
}

/// Deterministic evaluation with dropout and perturbations disabled.
pub fn evaluate<S: Scalar>(model: &ModelParams<S>, split: &Dataset, vocab: &Vocabulary, token_budget: usize) -> Result<EvalReport> {
    if split.labeled().is_empty() {
        return Err(Error::Contract("evaluation split has no labeled examples".into()));
    }
    let seqs: Vec<Vec<usize>> = split.labeled().iter().map(|e| vocab.encode(&e.tokens)).collect();
    let labels: Vec<usize> = split.labeled().iter().map(|e| e.label.expect("labeled")).collect();
    let probs = predict_all(model, &seqs, token_budget)?;
    report_from_probs(&probs, &labels, model.head.classes(), DEFAULT_HISTOGRAM_BINS)
}

fn cosine<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Exhaustive cosine ranking; excludes the query, UNK and PAD; ties by index.
pub fn nearest_neighbors<S: Scalar>(
    word: &str,
    emb: &EmbeddingMatrix<S>,
    vocab: &Vocabulary,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let q = vocab
        .get(word)
        .filter(|&i| i != UNK && i != PAD)
        .ok_or_else(|| Error::Lookup(format!("{word:?} is not in the vocabulary")))?;
    if k >= vocab.len() {
        return Err(Error::Argument(format!("k = {k} must be below the vocabulary size {}", vocab.len())));
    }
    if emb.rows() != vocab.len() {
        return Err(Error::shape("nearest_neighbors", &[emb.rows()], &[vocab.len()]));
    }
    let query = emb.row(q);
    let mut scored: Vec<(usize, f64)> = (0..vocab.len())
        .filter(|&i| i != q && i != UNK && i != PAD)
        .map(|i| (i, cosine(query, emb.row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, c)| (vocab.word(i).to_owned(), c))
        .collect())
}

/// Mixing weights for the four single-objective models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub ml: f64,
    pub at: f64,
    pub vat: f64,
    pub em: f64,
}

impl EnsembleWeights {
    pub fn new(ml: f64, at: f64, vat: f64, em: f64) -> Result<Self> {
        let w = EnsembleWeights { ml, at, vat, em };
        w.validate()?;
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.ml, self.at, self.vat, self.em]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|w| !(0.0..=1.0).contains(w)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("ensemble weights {a:?} are not on the simplex")));
        }
        Ok(())
    }
}

/// Per-example convex combination of four probability sets, ordered
/// ML, AT, VAT, EM.
pub fn ensemble_interpolate<S: Scalar>(prob_sets: &[Vec<Vec<S>>; 4], weights: &EnsembleWeights) -> Result<Vec<Vec<S>>> {
    weights.validate()?;
    let n = prob_sets[0].len();
    if prob_sets.iter().any(|s| s.len() != n) {
        return Err(Error::Contract("probability sets cover different example counts".into()));
    }
    let w = weights.as_array().map(S::lit);
    (0..n)
        .map(|i| {
            let k = prob_sets[0][i].len();
            if prob_sets.iter().any(|s| s[i].len() != k) {
                return Err(Error::Contract(format!("example {i} has inconsistent class counts")));
            }
            Ok((0..k)
                .map(|c| {
                    w[0] * prob_sets[0][i][c]
                        + w[1] * prob_sets[1][i][c]
                        + w[2] * prob_sets[2][i][c]
                        + w[3] * prob_sets[3][i][c]
                })
                .collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub weights: EnsembleWeights,
    pub error_rate: f64,
    pub candidates: usize,
}

/// Exhaustive search over the 4-simplex lattice with spacing `step`, in
/// lexicographic order of the weights; the first minimum wins.
pub fn grid_search_weights<S: Scalar>(prob_sets: &[Vec<Vec<S>>; 4], labels: &[usize], step: f64) -> Result<GridSearchResult> {
    let n = (1.0 / step).round();
    if !(step > 0.0) || n < 1.0 || (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("grid step {step} does not divide 1")));
    }
    let n = n as usize;
    if labels.is_empty() || prob_sets[0].len() != labels.len() {
        return Err(Error::Contract("one label per example required".into()));
    }
    let mut best: Option<(EnsembleWeights, f64)> = None;
    let mut candidates = 0;
    for a in 0..=n {
        for b in 0..=n - a {
            for c in 0..=n - a - b {
                let d = n - a - b - c;
                let f = |x: usize| x as f64 / n as f64;
                let w = EnsembleWeights {
                    ml: f(a),
                    at: f(b),
                    vat: f(c),
                    em: f(d),
                };
                candidates += 1;
                let mixed = ensemble_interpolate(prob_sets, &w)?;
                let wrong = mixed.iter().zip(labels).filter(|(p, &y)| argmax(p) != y).count();
                let err = wrong as f64 / labels.len() as f64;
                if best.is_none_or(|(_, e)| err < e) {
                    best = Some((w, err));
                }
            }
        }
    }
    let (weights, error_rate) = best.expect("lattice is non-empty");
    Ok(GridSearchResult {
        weights,
        error_rate,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins() {
        let h = ProbabilityHistogram::new(2, 20);
        assert_eq!(h.bin_of(0.5), 0);
        assert_eq!(h.bin_of(1.0), 19);
        assert_eq!(h.bin_of(0.4999999999), 0);
        assert_eq!(h.bin_of(0.76), 10);
        assert_eq!(h.edges.len(), 21);
    }

    #[test]
    fn report_counts() {
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]];
        let r = report_from_probs(&probs, &[0, 1, 1], 2, 20).unwrap();
        assert!((r.error_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![1, 0], vec![1, 1]]);
        assert_eq!(r.histogram.total(), 3);
        assert!(report_from_probs::<f64>(&[], &[], 2, 20).is_err());
    }

    #[test]
    fn neighbors_rank_duplicates_first() {
        let ex = vec![crate::corpus::Example::unlabeled(
            ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
        )];
        let vocab = crate::vocab::build_vocabulary(&ex, 10).unwrap();
        let mut emb = EmbeddingMatrix::<f64>::random(vocab.len(), 2, 0, true).unwrap();
        let rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]];
        for (w, r) in ["a", "b", "c", "d"].iter().zip(rows) {
            emb.matrix.row_mut(vocab.index_of(w)).copy_from_slice(&r);
        }
        emb.matrix.row_mut(UNK).copy_from_slice(&[1.0, 0.0]);
        let nn = nearest_neighbors("a", &emb, &vocab, 3).unwrap();
        assert_eq!(nn[0], ("c".to_owned(), 1.0));
        assert_eq!(nn[1], ("b".to_owned(), 0.0));
        assert_eq!(nn[2], ("d".to_owned(), -1.0));
        assert!(matches!(nearest_neighbors("zzz", &emb, &vocab, 2), Err(Error::Lookup(_))));
    }

    #[test]
    fn grid_counts_lattice_points() {
        let p = vec![vec![vec![0.6, 0.4]]; 4];
        let sets: [Vec<Vec<f64>>; 4] = [p[0].clone(), p[1].clone(), p[2].clone(), p[3].clone()];
        assert_eq!(grid_search_weights(&sets, &[0], 0.25).unwrap().candidates, 35);
        assert_eq!(grid_search_weights(&sets, &[0], 0.05).unwrap().candidates, 1771);
        assert!(grid_search_weights(&sets, &[0], 0.3).is_err());
        // every candidate ties, so the lexicographically smallest wins
        let best = grid_search_weights(&sets, &[0], 0.25).unwrap().weights;
        assert_eq!(best.as_array(), [0.0, 0.0, 0.0, 1.0]);
    }
}
