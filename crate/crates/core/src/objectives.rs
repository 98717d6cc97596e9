//! Loss terms: supervised cross-entropy, adversarial cross-entropy on
//! perturbed embeddings, entropy minimization, and virtual adversarial KL,
//! plus their weighted combination.
//!
//! Perturbations are built at the current parameters and then enter the
//! training graph as constants, so no second-order terms are formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{classify, embed, Binding, BoundParams, Classified, Dropout, ModelParams};
use crate::rng::{sample_gaussian, StreamRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub lambda_ml: f64,
    pub lambda_at: f64,
    pub lambda_em: f64,
    pub lambda_vat: f64,
    /// Perturbation norm in embedding space.
    pub epsilon: f64,
    /// Probe step of the virtual adversarial power iteration.
    pub xi: f64,
    pub use_labeled: bool,
    pub use_unlabeled: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda_ml: 1.0,
            lambda_at: 1.0,
            lambda_em: 1.0,
            lambda_vat: 1.0,
            epsilon: 5.0,
            xi: 0.1,
            use_labeled: true,
            use_unlabeled: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn with_lambdas(mut self, ml: f64, at: f64, em: f64, vat: f64) -> Self {
        self.lambda_ml = ml;
        self.lambda_at = at;
        self.lambda_em = em;
        self.lambda_vat = vat;
        self
    }

    pub fn lambdas(&self) -> [f64; 4] {
        [self.lambda_ml, self.lambda_at, self.lambda_em, self.lambda_vat]
    }

    /// Whether an unlabeled batch contributes to any term.
    pub fn needs_unlabeled(&self) -> bool {
        self.use_unlabeled && (self.lambda_em > 0.0 || self.lambda_vat > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in ["lambda_ml", "lambda_at", "lambda_em", "lambda_vat"].iter().zip(self.lambdas()) {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {l}")));
            }
        }
        if (self.lambda_at > 0.0 || self.lambda_vat > 0.0) && !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0 when adversarial terms are active, got {}",
                self.epsilon
            )));
        }
        if self.lambda_vat > 0.0 && !(self.xi > 0.0) {
            return Err(Error::Config(format!("xi must be > 0 when lambda_vat > 0, got {}", self.xi)));
        }
        if !self.use_labeled && (self.lambda_ml > 0.0 || self.lambda_at > 0.0) {
            return Err(Error::Config(
                "use_labeled = false is incompatible with lambda_ml or lambda_at > 0".into(),
            ));
        }
        if !self.use_labeled && !self.needs_unlabeled() {
            return Err(Error::Config("objective has no active data source".into()));
        }
        Ok(())
    }
}

/// Per-term values of one mixed-loss evaluation. Inactive terms are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ml: f64,
    pub at: f64,
    pub em: f64,
    pub vat: f64,
    pub labeled: usize,
    pub unlabeled: usize,
    pub clamp_events: usize,
}

/// Sequences with optional gold labels.
#[derive(Clone, Copy, Debug)]
pub struct BatchRef<'a> {
    pub sequences: &'a [Vec<usize>],
    pub labels: Option<&'a [usize]>,
}

impl<'a> BatchRef<'a> {
    pub fn labeled(sequences: &'a [Vec<usize>], labels: &'a [usize]) -> Self {
        BatchRef {
            sequences,
            labels: Some(labels),
        }
    }

    pub fn unlabeled(sequences: &'a [Vec<usize>]) -> Self {
        BatchRef {
            sequences,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    fn gold(&self) -> Result<&'a [usize]> {
        let labels = self
            .labels
            .ok_or_else(|| Error::Contract("supervised term needs labels".into()))?;
        if labels.len() != self.sequences.len() {
            return Err(Error::Contract(format!(
                "{} labels for {} sequences",
                labels.len(),
                self.sequences.len()
            )));
        }
        Ok(labels)
    }
}

/// Embeds a batch, optionally adds a constant perturbation, and classifies.
pub fn forward_batch<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    sequences: &[Vec<usize>],
    perturbation: Option<&Tensor<S>>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<(NodeId, Vec<usize>, Classified)> {
    let (v, lengths) = embed(graph, bound, sequences)?;
    let input = match perturbation {
        Some(r) => {
            if r.shape() != graph.value(v).shape() {
                return Err(Error::shape("perturb", graph.value(v).shape(), r.shape()));
            }
            let r = graph.constant(r.detached());
            graph.add(v, r)?
        }
        None => v,
    };
    let out = classify(graph, bound, input, &lengths, dropout)?;
    Ok((v, lengths, out))
}

/// `-Σ_i log p_i[y_i]` with the clamped log.
pub fn cross_entropy_sum<S: Scalar>(graph: &mut Graph<S>, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let k = graph.value(probs).shape()[1];
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!("label {y} out of range for {k} classes")));
    }
    let picked = graph.pick(probs, labels.to_vec())?;
    let logs = graph.clamped_log(picked)?;
    let s = graph.sum(logs)?;
    graph.scale(s, -S::one())
}

/// `-Σ_i Σ_k p log p`; zero-probability entries contribute zero.
pub fn entropy_sum<S: Scalar>(graph: &mut Graph<S>, probs: NodeId) -> Result<NodeId> {
    let logs = graph.clamped_log(probs)?;
    let plogp = graph.mul(probs, logs)?;
    let s = graph.sum(plogp)?;
    graph.scale(s, -S::one())
}

/// `Σ_i KL(p_i || q_i)` where `p` is a constant and `q` lives on the graph.
pub fn kl_sum<S: Scalar>(graph: &mut Graph<S>, p: &Tensor<S>, q: NodeId) -> Result<NodeId> {
    if p.shape() != graph.value(q).shape() {
        return Err(Error::shape("kl", p.shape(), graph.value(q).shape()));
    }
    // Summed as p * (ln p - ln q) term by term so that q == p gives exactly 0.
    let logp = p.map(|x| if x > S::zero() { x.ln() } else { S::zero() });
    let logp = graph.constant(logp);
    let pc = graph.constant(p.detached());
    let logq = graph.clamped_log(q)?;
    let neg_logq = graph.scale(logq, -S::one())?;
    let diff = graph.add(logp, neg_logq)?;
    let terms = graph.mul(pc, diff)?;
    graph.sum(terms)
}

/// Rescales each example's slice of a `[T, B, d]` tensor to L2 norm `epsilon`.
/// Examples with a zero slice stay zero.
pub fn normalize_per_example<S: Scalar>(g: &Tensor<S>, epsilon: S) -> Result<Tensor<S>> {
    let shape = g.shape();
    if shape.len() != 3 {
        return Err(Error::shape("normalize_per_example", shape, &[0, 0, 0]));
    }
    let (steps, b, d) = (shape[0], shape[1], shape[2]);
    let mut norms = vec![S::zero(); b];
    for t in 0..steps {
        for (j, n) in norms.iter_mut().enumerate() {
            for &x in &g.data()[(t * b + j) * d..(t * b + j + 1) * d] {
                *n += x * x;
            }
        }
    }
    let scale: Vec<S> = norms
        .iter()
        .map(|&n| if n > S::zero() { epsilon / n.sqrt() } else { S::zero() })
        .collect();
    let data = g
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| x * scale[(i / d) % b])
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Per-example L2 norms of a `[T, B, d]` tensor.
pub fn per_example_norms<S: Scalar>(r: &Tensor<S>) -> Vec<S> {
    let shape = r.shape();
    let (b, d) = (shape[1], shape[2]);
    let mut norms = vec![S::zero(); b];
    for (i, &x) in r.data().iter().enumerate() {
        norms[(i / d) % b] += x * x;
    }
    norms.into_iter().map(|n| n.sqrt()).collect()
}

fn dropout_for<'a>(p: f64, rng: &'a mut StreamRng) -> Option<Dropout<'a>> {
    (p > 0.0).then_some(Dropout { p, rng })
}

/// Gradient of `objective(probs)` with respect to the embedded input, holding
/// the parameters fixed.
fn input_gradient<S: Scalar>(
    model: &ModelParams<S>,
    v: &Tensor<S>,
    lengths: &[usize],
    dropout: Option<&mut Dropout<'_>>,
    objective: impl FnOnce(&mut Graph<S>, NodeId) -> Result<NodeId>,
) -> Result<Tensor<S>> {
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph, Binding::Frozen)?;
    let vid = graph.param(v.detached());
    let out = classify(&mut graph, &bound, vid, lengths, dropout)?;
    let root = objective(&mut graph, out.probs)?;
    let grads = graph.backward(root)?;
    Ok(grads.wrt(vid))
}

/// Adversarial direction for a labeled batch: the per-example gradient of
/// the cross-entropy with respect to the embeddings, scaled to norm `epsilon`.
/// `v` is the embedded batch `[T, B, d]`.
pub fn adversarial_perturbation<S: Scalar>(
    model: &ModelParams<S>,
    v: &Tensor<S>,
    lengths: &[usize],
    labels: &[usize],
    epsilon: S,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Tensor<S>> {
    let g = input_gradient(model, v, lengths, dropout, |graph, probs| {
        cross_entropy_sum(graph, probs, labels)
    })?;
    normalize_per_example(&g, epsilon)
}

/// Unit-norm Gaussian direction per example, zero at padded positions.
pub fn sample_probe_direction<S: Scalar>(shape: &[usize], lengths: &[usize], rng: &mut StreamRng) -> Result<Tensor<S>> {
    let mut d: Tensor<S> = sample_gaussian(shape, rng);
    let (b, dim) = (shape[1], shape[2]);
    for (i, x) in d.data_mut().iter_mut().enumerate() {
        let (t, j) = (i / (b * dim), (i / dim) % b);
        if t >= lengths[j] {
            *x = S::zero();
        }
    }
    normalize_per_example(&d, S::one())
}

/// Virtual adversarial direction: one power iteration from a random probe
/// `v + xi * d`, differentiating `KL(p_clean || p(v'))` at the probe.
#[allow(clippy::too_many_arguments)]
pub fn vat_perturbation<S: Scalar>(
    model: &ModelParams<S>,
    v: &Tensor<S>,
    lengths: &[usize],
    p_clean: &Tensor<S>,
    epsilon: S,
    xi: S,
    noise: &mut StreamRng,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Tensor<S>> {
    let d = sample_probe_direction(v.shape(), lengths, noise)?;
    let probe = v.zip_map(&d, |a, b| a + xi * b)?;
    let g = input_gradient(model, &probe, lengths, dropout, |graph, probs| kl_sum(graph, p_clean, probs))?;
    normalize_per_example(&g, epsilon)
}

/// Mean cross-entropy of a labeled batch, optionally at perturbed embeddings.
pub fn ml_term<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    batch: BatchRef<'_>,
    perturbation: Option<&Tensor<S>>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<NodeId> {
    let labels = batch.gold()?;
    let (_, _, out) = forward_batch(graph, bound, batch.sequences, perturbation, dropout)?;
    let s = cross_entropy_sum(graph, out.probs, labels)?;
    graph.scale(s, S::lit(1.0 / batch.len() as f64))
}

/// Adversarial term with a fixed perturbation.
pub fn at_term<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    batch: BatchRef<'_>,
    r_at: &Tensor<S>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<NodeId> {
    ml_term(graph, bound, batch, Some(r_at), dropout)
}

/// Mean prediction entropy over the union of `batches`.
pub fn em_term<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    batches: &[BatchRef<'_>],
    dropout_p: f64,
    rng: &mut StreamRng,
) -> Result<NodeId> {
    let m: usize = batches.iter().map(BatchRef::len).sum();
    let mut total: Option<NodeId> = None;
    for b in batches.iter().filter(|b| !b.is_empty()) {
        let mut d = dropout_for(dropout_p, rng);
        let (_, _, out) = forward_batch(graph, bound, b.sequences, None, d.as_mut())?;
        let e = entropy_sum(graph, out.probs)?;
        total = Some(match total {
            Some(t) => graph.add(t, e)?,
            None => e,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("entropy term over an empty batch".into()))?;
    graph.scale(total, S::lit(1.0 / m as f64))
}

/// Mean KL between fixed clean predictions and predictions at `v + r_vat`,
/// over the union of `batches`.
pub fn vat_term<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    batches: &[BatchRef<'_>],
    p_clean: &[Tensor<S>],
    r_vat: &[Tensor<S>],
    dropout_p: f64,
    rng: &mut StreamRng,
) -> Result<NodeId> {
    if p_clean.len() != batches.len() || r_vat.len() != batches.len() {
        return Err(Error::Contract("one clean prediction and perturbation per batch".into()));
    }
    let m: usize = batches.iter().map(BatchRef::len).sum();
    if m == 0 {
        return Err(Error::Contract("virtual adversarial term over an empty batch".into()));
    }
    let mut total: Option<NodeId> = None;
    for ((b, p), r) in batches.iter().zip(p_clean).zip(r_vat) {
        let mut d = dropout_for(dropout_p, rng);
        let (_, _, out) = forward_batch(graph, bound, b.sequences, Some(r), d.as_mut())?;
        let kl = kl_sum(graph, p, out.probs)?;
        total = Some(match total {
            Some(t) => graph.add(t, kl)?,
            None => kl,
        });
    }
    graph.scale(total.expect("non-empty"), S::lit(1.0 / m as f64))
}

/// Randomness consumed by one mixed-loss evaluation.
pub struct LossRngs<'a> {
    pub dropout: &'a mut StreamRng,
    pub vat_noise: &'a mut StreamRng,
}

/// A built training graph: call [`MixedLoss::backward_into`] to obtain
/// parameter gradients.
pub struct MixedLoss<S> {
    pub graph: Graph<S>,
    pub bound: BoundParams,
    pub total: NodeId,
    pub breakdown: LossBreakdown,
}

impl<S: Scalar> MixedLoss<S> {
    /// Accumulates `∂total/∂θ` into each trainable tensor's grad buffer.
    pub fn backward_into(&self, model: &mut ModelParams<S>) -> Result<()> {
        let grads = self.graph.backward(self.total)?;
        model.accumulate_grads(&self.bound, &grads)
    }
}

struct CleanPass {
    v: NodeId,
    lengths: Vec<usize>,
    out: Classified,
}

/// Weighted sum of the active terms. EM and VAT run over the labeled and
/// unlabeled batches together; ML and AT over the labeled batch only.
/// Terms with a zero weight are not computed.
pub fn loss_mixed<S: Scalar>(
    model: &ModelParams<S>,
    labeled: Option<BatchRef<'_>>,
    unlabeled: Option<BatchRef<'_>>,
    config: &ObjectiveConfig,
    dropout_p: f64,
    rngs: LossRngs<'_>,
) -> Result<MixedLoss<S>> {
    config.validate()?;
    let LossRngs { dropout, vat_noise } = rngs;
    let supervised = config.lambda_ml > 0.0 || config.lambda_at > 0.0;
    let unsupervised = config.lambda_em > 0.0 || config.lambda_vat > 0.0;

    let labeled = labeled.filter(|b| config.use_labeled && !b.is_empty());
    let unlabeled = unlabeled.filter(|b| config.needs_unlabeled() && !b.is_empty());
    if supervised && labeled.is_none() {
        return Err(Error::Contract("supervised terms need a non-empty labeled batch".into()));
    }

    let mut graph = Graph::new();
    let bound = model.bind(&mut graph, Binding::Trainable)?;
    let mut breakdown = LossBreakdown::default();

    let mut union: Vec<(BatchRef<'_>, CleanPass)> = Vec::new();
    for b in [labeled, unlabeled].into_iter().flatten() {
        let needed = (b.labels.is_some() && supervised) || unsupervised;
        if !needed {
            continue;
        }
        let mut d = dropout_for(dropout_p, dropout);
        let (v, lengths, out) = forward_batch(&mut graph, &bound, b.sequences, None, d.as_mut())?;
        union.push((b, CleanPass { v, lengths, out }));
    }
    breakdown.labeled = labeled.map_or(0, |b| b.len());
    breakdown.unlabeled = unlabeled.map_or(0, |b| b.len());
    let m_union: usize = union.iter().map(|(b, _)| b.len()).sum();

    let mut terms: Vec<(f64, NodeId)> = Vec::new();

    if let Some(lb) = labeled.filter(|_| supervised) {
        let labels = lb.gold()?;
        let clean = &union[0].1;
        let inv_m = S::lit(1.0 / lb.len() as f64);
        let ce = cross_entropy_sum(&mut graph, clean.out.probs, labels)?;
        let ml = graph.scale(ce, inv_m)?;
        breakdown.ml = graph.value(ml).item().as_f64();
        if config.lambda_ml > 0.0 {
            terms.push((config.lambda_ml, ml));
        }
        if config.lambda_at > 0.0 {
            let g = graph.backward(ce)?.wrt(clean.v);
            let r_at = normalize_per_example(&g, S::lit(config.epsilon))?;
            let mut d = dropout_for(dropout_p, dropout);
            let at = at_term(&mut graph, &bound, lb, &r_at, d.as_mut())?;
            breakdown.at = graph.value(at).item().as_f64();
            terms.push((config.lambda_at, at));
        }
    }

    if config.lambda_em > 0.0 {
        let mut total: Option<NodeId> = None;
        for (_, clean) in &union {
            let e = entropy_sum(&mut graph, clean.out.probs)?;
            total = Some(match total {
                Some(t) => graph.add(t, e)?,
                None => e,
            });
        }
        let total = total.ok_or_else(|| Error::Contract("entropy term over an empty batch".into()))?;
        let em = graph.scale(total, S::lit(1.0 / m_union as f64))?;
        breakdown.em = graph.value(em).item().as_f64();
        terms.push((config.lambda_em, em));
    }

    if config.lambda_vat > 0.0 {
        let mut batches = Vec::new();
        let mut p_clean = Vec::new();
        let mut r_vat = Vec::new();
        for (b, clean) in &union {
            let p = graph.value(clean.out.probs).detached();
            let v = graph.value(clean.v).detached();
            let mut d = dropout_for(dropout_p, dropout);
            let r = vat_perturbation(
                model,
                &v,
                &clean.lengths,
                &p,
                S::lit(config.epsilon),
                S::lit(config.xi),
                vat_noise,
                d.as_mut(),
            )?;
            batches.push(*b);
            p_clean.push(p);
            r_vat.push(r);
        }
        let vat = vat_term(&mut graph, &bound, &batches, &p_clean, &r_vat, dropout_p, dropout)?;
        breakdown.vat = graph.value(vat).item().as_f64();
        terms.push((config.lambda_vat, vat));
    }

    let mut total: Option<NodeId> = None;
    for (lambda, node) in terms {
        let weighted = graph.scale(node, S::lit(lambda))?;
        total = Some(match total {
            Some(t) => graph.add(t, weighted)?,
            None => weighted,
        });
    }
    let total = match total {
        Some(t) => t,
        None => graph.constant(Tensor::scalar(S::zero())),
    };
    breakdown.total = graph.value(total).item().as_f64();
    breakdown.clamp_events = graph.clamp_events();
    Ok(MixedLoss {
        graph,
        bound,
        total,
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs_node(g: &mut Graph<f64>, rows: &[Vec<f64>]) -> NodeId {
        g.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let p = probs_node(&mut g, &[vec![1.0, 0.0]]);
        let ce = cross_entropy_sum(&mut g, p, &[0]).unwrap();
        assert_eq!(g.value(ce).item(), 0.0);
        let p = probs_node(&mut g, &[vec![0.5, 0.5]]);
        let ce = cross_entropy_sum(&mut g, p, &[1]).unwrap();
        assert!((g.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let p = probs_node(&mut g, &[vec![0.0, 1.0]]);
        let ce = cross_entropy_sum(&mut g, p, &[0]).unwrap();
        assert_eq!(g.value(ce).item(), 745.0);
        assert_eq!(g.clamp_events(), 1);
    }

    #[test]
    fn entropy_values() {
        let mut g = Graph::new();
        let p = probs_node(&mut g, &[vec![0.25; 4]]);
        let e = entropy_sum(&mut g, p).unwrap();
        assert!((g.value(e).item() - 4f64.ln()).abs() < 1e-15);
        let p = probs_node(&mut g, &[vec![0.9, 0.1]]);
        let e = entropy_sum(&mut g, p).unwrap();
        assert!((g.value(e).item() - 0.325083).abs() < 1e-6);
        let p = probs_node(&mut g, &[vec![0.0, 1.0, 0.0]]);
        let e = entropy_sum(&mut g, p).unwrap();
        assert_eq!(g.value(e).item(), 0.0);
    }

    #[test]
    fn kl_values() {
        let mut g = Graph::new();
        let q = probs_node(&mut g, &[vec![0.9, 0.1]]);
        let p = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let kl = kl_sum(&mut g, &p, q).unwrap();
        assert!((g.value(kl).item() - 0.510826).abs() < 1e-6);
        let q = probs_node(&mut g, &[vec![0.3, 0.7]]);
        let p = Tensor::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let kl = kl_sum(&mut g, &p, q).unwrap();
        assert!(g.value(kl).item().abs() < 1e-15);
    }

    #[test]
    fn normalization_identity() {
        let g = Tensor::new(vec![2, 1, 2], vec![3.0, 0.0, 0.0, 4.0]).unwrap();
        let r = normalize_per_example(&g, 5.0).unwrap();
        assert_eq!(r.data(), &[3.0, 0.0, 0.0, 4.0]);
        let r = normalize_per_example(&g, 0.0).unwrap();
        assert!(r.data().iter().all(|&x| x == 0.0));
        let z = Tensor::<f64>::zeros(&[2, 2, 3]);
        assert!(normalize_per_example(&z, 1.0).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn per_example_norms_are_independent() {
        // example 0 holds (1, 2), example 1 holds (2, 0); T = 2, B = 2, d = 1
        let g = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 2.0, 0.0]).unwrap();
        let r = normalize_per_example(&g, 1.0).unwrap();
        let n: Vec<f64> = per_example_norms(&r);
        assert!((n[0] - 1.0).abs() < 1e-15 && (n[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ObjectiveConfig::default().validate().is_ok());
        let mut c = ObjectiveConfig::default();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let c = ObjectiveConfig::default().with_lambdas(1.0, 0.0, -1.0, 0.0);
        assert!(c.validate().is_err());
        let mut c = ObjectiveConfig::default();
        c.use_labeled = false;
        assert!(c.validate().is_err());
        let c = ObjectiveConfig::default().with_lambdas(0.0, 0.0, 0.0, 0.0);
        assert!(c.validate().is_ok());
    }
}
