//! BiLSTM-max classifier: embeddings, bidirectional LSTM encoder, max-pool
//! over time, affine head, softmax.
//!
//! Batches are laid out time-major: the embedded input is `[T, B, d]` and the
//! encoder output `[T, B, n]` with `n = 2 * hidden`. Shorter sequences are
//! padded with PAD; padded steps neither update the recurrent state nor take
//! part in pooling, so padding never changes a sequence's logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::{sample_uniform, stream_rng, Stream, StreamRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vocab::PAD;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Hidden size of each direction; the pooled feature has `2 * hidden` entries.
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn feature_dim(&self) -> usize {
        2 * self.hidden
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size <= PAD || self.embed_dim == 0 || self.hidden == 0 || self.layers == 0 || self.classes < 2 {
            return Err(Error::Argument(format!("invalid model shape {self:?}")));
        }
        Ok(())
    }
}

/// One LSTM direction. Each gate matrix is `hidden x (input + hidden)` and
/// acts on `[x_t; h_{t-1}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LstmParams<S> {
    pub w_input: Tensor<S>,
    pub w_forget: Tensor<S>,
    pub w_output: Tensor<S>,
    pub w_cell: Tensor<S>,
    pub b_input: Tensor<S>,
    pub b_forget: Tensor<S>,
    pub b_output: Tensor<S>,
    pub b_cell: Tensor<S>,
}

impl<S: Scalar> LstmParams<S> {
    /// Uniform `±1/sqrt(fan_in)` weights, forget bias 1, other biases 0.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let fan_in = input + hidden;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut w = || sample_uniform::<S, _>(&[hidden, fan_in], bound, rng);
        let (w_input, w_forget, w_output, w_cell) = (w(), w(), w(), w());
        LstmParams {
            w_input,
            w_forget,
            w_output,
            w_cell,
            b_input: Tensor::zeros(&[hidden]),
            b_forget: Tensor::full(&[hidden], S::one()),
            b_output: Tensor::zeros(&[hidden]),
            b_cell: Tensor::zeros(&[hidden]),
        }
    }

    /// All-zero weights and biases.
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input + hidden]);
        let b = || Tensor::zeros(&[hidden]);
        LstmParams {
            w_input: w(),
            w_forget: w(),
            w_output: w(),
            w_cell: w(),
            b_input: b(),
            b_forget: b(),
            b_output: b(),
            b_cell: b(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_input.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_input.shape()[1] - self.hidden()
    }

    fn tensors(&self) -> [(&'static str, &Tensor<S>); 8] {
        [
            ("w_input", &self.w_input),
            ("w_forget", &self.w_forget),
            ("w_output", &self.w_output),
            ("w_cell", &self.w_cell),
            ("b_input", &self.b_input),
            ("b_forget", &self.b_forget),
            ("b_output", &self.b_output),
            ("b_cell", &self.b_cell),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<S>; 8] {
        [
            &mut self.w_input,
            &mut self.w_forget,
            &mut self.w_output,
            &mut self.w_cell,
            &mut self.b_input,
            &mut self.b_forget,
            &mut self.b_output,
            &mut self.b_cell,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct BiLstmLayer<S> {
    pub forward: LstmParams<S>,
    pub backward: LstmParams<S>,
}

/// `logits = W h + b` with `W: K x n`, `b: K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ClassifierHead<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> ClassifierHead<S> {
    pub fn init<R: Rng>(features: usize, classes: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (features as f64).sqrt();
        ClassifierHead {
            weight: sample_uniform(&[classes, features], bound, rng),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ModelParams<S> {
    pub embedding: EmbeddingMatrix<S>,
    pub layers: Vec<BiLstmLayer<S>>,
    pub head: ClassifierHead<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Fresh encoder and head around an already initialized embedding table.
    pub fn init(shape: ModelShape, embedding: EmbeddingMatrix<S>, seed: u64) -> Result<Self> {
        shape.validate()?;
        if embedding.rows() != shape.vocab_size || embedding.dim() != shape.embed_dim {
            return Err(Error::shape(
                "model_init",
                &[shape.vocab_size, shape.embed_dim],
                embedding.matrix.shape(),
            ));
        }
        let mut rng = stream_rng(seed, Stream::Init, 1);
        let mut layers = Vec::with_capacity(shape.layers);
        for l in 0..shape.layers {
            let input = if l == 0 { shape.embed_dim } else { shape.feature_dim() };
            layers.push(BiLstmLayer {
                forward: LstmParams::init(input, shape.hidden, &mut rng),
                backward: LstmParams::init(input, shape.hidden, &mut rng),
            });
        }
        let head = ClassifierHead::init(shape.feature_dim(), shape.classes, &mut rng);
        Ok(ModelParams {
            embedding,
            layers,
            head,
        })
    }

    /// All-zero parameters of the given shape, e.g. as a target for loading.
    pub fn zeros(shape: ModelShape, finetune: bool) -> Result<Self> {
        shape.validate()?;
        let layers = (0..shape.layers)
            .map(|l| {
                let input = if l == 0 { shape.embed_dim } else { shape.feature_dim() };
                BiLstmLayer {
                    forward: LstmParams::zeros(input, shape.hidden),
                    backward: LstmParams::zeros(input, shape.hidden),
                }
            })
            .collect();
        Ok(ModelParams {
            embedding: EmbeddingMatrix {
                matrix: Tensor::zeros(&[shape.vocab_size, shape.embed_dim]),
                finetune,
            },
            layers,
            head: ClassifierHead {
                weight: Tensor::zeros(&[shape.classes, shape.feature_dim()]),
                bias: Tensor::zeros(&[shape.classes]),
            },
        })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            vocab_size: self.embedding.rows(),
            embed_dim: self.embedding.dim(),
            hidden: self.layers[0].forward.hidden(),
            layers: self.layers.len(),
            classes: self.head.classes(),
        }
    }

    /// Every parameter tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = vec![("embedding".to_owned(), &self.embedding.matrix)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                for (name, t) in p.tensors() {
                    out.push((format!("lstm.{l}.{dir}.{name}"), t));
                }
            }
        }
        out.push(("head.weight".to_owned(), &self.head.weight));
        out.push(("head.bias".to_owned(), &self.head.bias));
        out
    }

    /// Mutable view in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = vec![&mut self.embedding.matrix];
        for layer in &mut self.layers {
            out.extend(layer.forward.tensors_mut());
            out.extend(layer.backward.tensors_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Whether tensor `i` (in named order) receives updates.
    pub fn is_trainable(&self, i: usize) -> bool {
        i != 0 || self.embedding.finetune
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Places every parameter on `graph`. With [`Binding::Frozen`] all of them
    /// are constants; otherwise trainable tensors become differentiable leaves.
    pub fn bind(&self, graph: &mut Graph<S>, binding: Binding) -> Result<BoundParams> {
        let mut ids = Vec::new();
        let named = self.named_tensors();
        for (i, (_, t)) in named.iter().enumerate() {
            let trainable = binding == Binding::Trainable && self.is_trainable(i);
            ids.push(graph.leaf(t.detached(), trainable));
        }
        let mut cursor = 1;
        let mut layers = Vec::with_capacity(self.layers.len());
        for _ in &self.layers {
            let mut dirs = Vec::with_capacity(2);
            for _ in 0..2 {
                let slot = &ids[cursor..cursor + 8];
                dirs.push(BoundLstm {
                    wt_input: graph.transpose(slot[0])?,
                    wt_forget: graph.transpose(slot[1])?,
                    wt_output: graph.transpose(slot[2])?,
                    wt_cell: graph.transpose(slot[3])?,
                    b_input: slot[4],
                    b_forget: slot[5],
                    b_output: slot[6],
                    b_cell: slot[7],
                    hidden: self.layers[0].forward.hidden(),
                });
                cursor += 8;
            }
            let backward = dirs.pop().expect("two directions");
            let forward = dirs.pop().expect("two directions");
            layers.push((forward, backward));
        }
        let head_wt = graph.transpose(ids[cursor])?;
        Ok(BoundParams {
            embedding: ids[0],
            layers,
            head_wt,
            head_b: ids[cursor + 1],
            ids,
        })
    }

    /// Writes per-tensor gradients from `grads` into each tensor's `grad` buffer.
    pub fn accumulate_grads(&mut self, bound: &BoundParams, grads: &crate::graph::Gradients<S>) -> Result<()> {
        let ids = bound.ids.clone();
        for (t, id) in self.tensors_mut().into_iter().zip(ids) {
            if let Some(g) = grads.get(id) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    Trainable,
    Frozen,
}

#[derive(Clone, Debug)]
pub struct BoundLstm {
    pub wt_input: NodeId,
    pub wt_forget: NodeId,
    pub wt_output: NodeId,
    pub wt_cell: NodeId,
    pub b_input: NodeId,
    pub b_forget: NodeId,
    pub b_output: NodeId,
    pub b_cell: NodeId,
    pub hidden: usize,
}

/// Graph handles of one model's parameters.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub embedding: NodeId,
    pub layers: Vec<(BoundLstm, BoundLstm)>,
    pub head_wt: NodeId,
    pub head_b: NodeId,
    /// Leaf ids in [`ModelParams::named_tensors`] order.
    pub ids: Vec<NodeId>,
}

/// Inverted dropout: kept entries are scaled by `1/(1-p)`.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut StreamRng,
}

impl Dropout<'_> {
    pub fn mask<S: Scalar>(&mut self, len: usize) -> Vec<S> {
        let keep = S::lit(1.0 / (1.0 - self.p));
        (0..len)
            .map(|_| if self.rng.gen_bool(self.p) { S::zero() } else { keep })
            .collect()
    }

    fn apply<S: Scalar>(&mut self, graph: &mut Graph<S>, x: NodeId) -> Result<NodeId> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let mask = self.mask(graph.value(x).len());
        graph.apply_mask(x, mask)
    }
}

/// One LSTM step on a `[B, input]` batch.
pub fn lstm_step<S: Scalar>(
    graph: &mut Graph<S>,
    h_prev: NodeId,
    c_prev: NodeId,
    x_t: NodeId,
    p: &BoundLstm,
) -> Result<(NodeId, NodeId)> {
    let z = graph.concat(&[x_t, h_prev])?;
    let mut gate = |w: NodeId, b: NodeId| -> Result<NodeId> {
        let a = graph.matmul(z, w)?;
        graph.add(a, b)
    };
    let i_pre = gate(p.wt_input, p.b_input)?;
    let f_pre = gate(p.wt_forget, p.b_forget)?;
    let o_pre = gate(p.wt_output, p.b_output)?;
    let g_pre = gate(p.wt_cell, p.b_cell)?;
    let i = graph.sigmoid(i_pre)?;
    let f = graph.sigmoid(f_pre)?;
    let o = graph.sigmoid(o_pre)?;
    let g = graph.tanh(g_pre)?;
    let fc = graph.mul(f, c_prev)?;
    let ig = graph.mul(i, g)?;
    let c = graph.add(fc, ig)?;
    let tc = graph.tanh(c)?;
    let h = graph.mul(o, tc)?;
    Ok((h, c))
}

/// Padded `[T, B]` token matrix for a batch of index sequences.
pub fn pad_batch(sequences: &[Vec<usize>]) -> Result<(Vec<usize>, Vec<usize>)> {
    if sequences.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let lengths: Vec<usize> = sequences.iter().map(Vec::len).collect();
    if lengths.contains(&0) {
        return Err(Error::EmptyDocument);
    }
    let steps = *lengths.iter().max().expect("non-empty");
    let b = sequences.len();
    let mut indices = vec![PAD; steps * b];
    for (j, seq) in sequences.iter().enumerate() {
        for (t, &ix) in seq.iter().enumerate() {
            indices[t * b + j] = ix;
        }
    }
    Ok((indices, lengths))
}

/// Embedding lookup for a batch: `[T, B, d]` plus per-sequence lengths.
pub fn embed<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    sequences: &[Vec<usize>],
) -> Result<(NodeId, Vec<usize>)> {
    let (indices, lengths) = pad_batch(sequences)?;
    let steps = indices.len() / sequences.len();
    let v = graph.gather(bound.embedding, indices, vec![steps, sequences.len()])?;
    Ok((v, lengths))
}

fn run_direction<S: Scalar>(
    graph: &mut Graph<S>,
    xs: &[NodeId],
    lengths: &[usize],
    p: &BoundLstm,
    reverse: bool,
) -> Result<Vec<NodeId>> {
    let b = lengths.len();
    let steps = xs.len();
    let zero = || Tensor::zeros(&[b, p.hidden]);
    let mut h = graph.constant(zero());
    let mut c = graph.constant(zero());
    let mut outs = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let (h_new, c_new) = lstm_step(graph, h, c, xs[t], p)?;
        if lengths.iter().all(|&l| t < l) {
            h = h_new;
            c = c_new;
        } else {
            // padded steps carry the previous state through unchanged
            let mask: Vec<bool> = (0..b * p.hidden).map(|i| t < lengths[i / p.hidden]).collect();
            h = graph.select(mask.clone(), h_new, h)?;
            c = graph.select(mask, c_new, c)?;
        }
        outs[t] = h;
    }
    Ok(outs)
}

/// Bidirectional encoder over `v: [T, B, d]`, returning `H: [T, B, 2*hidden]`.
pub fn encode<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    v: NodeId,
    lengths: &[usize],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<NodeId> {
    let shape = graph.value(v).shape().to_vec();
    if shape.len() != 3 || shape[1] != lengths.len() {
        return Err(Error::shape("encode", &shape, &[lengths.len()]));
    }
    let steps = shape[0];
    let mut input = v;
    for (fwd, bwd) in &bound.layers {
        if let Some(d) = dropout.as_deref_mut() {
            input = d.apply(graph, input)?;
        }
        let xs = (0..steps)
            .map(|t| graph.slice_axis0(input, t))
            .collect::<Result<Vec<_>>>()?;
        let hf = run_direction(graph, &xs, lengths, fwd, false)?;
        let hb = run_direction(graph, &xs, lengths, bwd, true)?;
        let rows = hf
            .iter()
            .zip(&hb)
            .map(|(&a, &b)| graph.concat(&[a, b]))
            .collect::<Result<Vec<_>>>()?;
        input = graph.stack(&rows)?;
    }
    Ok(input)
}

#[derive(Clone, Copy, Debug)]
pub struct Classified {
    pub pooled: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
}

/// Max over time (respecting lengths), then the affine head and softmax.
pub fn pool_classify<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    hidden: NodeId,
    lengths: &[usize],
) -> Result<Classified> {
    let pooled = graph.max_axis0(hidden, Some(lengths.to_vec()))?;
    let a = graph.matmul(pooled, bound.head_wt)?;
    let logits = graph.add(a, bound.head_b)?;
    let probs = graph.softmax(logits)?;
    Ok(Classified {
        pooled,
        logits,
        probs,
    })
}

/// Full classifier on an already embedded batch `v: [T, B, d]`.
pub fn classify<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    v: NodeId,
    lengths: &[usize],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Classified> {
    let mut hidden = encode(graph, bound, v, lengths, dropout.as_deref_mut())?;
    if let Some(d) = dropout {
        hidden = d.apply(graph, hidden)?;
    }
    pool_classify(graph, bound, hidden, lengths)
}

/// Evaluation-mode class probabilities, one row per sequence.
pub fn predict_probs<S: Scalar>(model: &ModelParams<S>, sequences: &[Vec<usize>]) -> Result<Vec<Vec<S>>> {
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph, Binding::Frozen)?;
    let (v, lengths) = embed(&mut graph, &bound, sequences)?;
    let out = classify(&mut graph, &bound, v, &lengths, None)?;
    let k = model.head.classes();
    Ok(graph.value(out.probs).data().chunks(k).map(<[S]>::to_vec).collect())
}

/// Evaluation-mode logits, one row per sequence.
pub fn predict_logits<S: Scalar>(model: &ModelParams<S>, sequences: &[Vec<usize>]) -> Result<Vec<Vec<S>>> {
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph, Binding::Frozen)?;
    let (v, lengths) = embed(&mut graph, &bound, sequences)?;
    let out = classify(&mut graph, &bound, v, &lengths, None)?;
    let k = model.head.classes();
    Ok(graph.value(out.logits).data().chunks(k).map(<[S]>::to_vec).collect())
}
