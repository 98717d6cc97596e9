#![allow(dead_code)]

use mixedobj::embedding::EmbeddingMatrix;
use mixedobj::model::{ModelParams, ModelShape};
use mixedobj::rng::{sample_uniform, stream_rng, Stream};
use rand::Rng;

pub const TINY: ModelShape = ModelShape {
    vocab_size: 12,
    embed_dim: 4,
    hidden: 8,
    layers: 1,
    classes: 3,
};

/// Small random model whose embeddings are large enough that the LSTM sees
/// non-trivial inputs.
pub fn tiny_model(seed: u64, layers: usize) -> ModelParams<f64> {
    let shape = ModelShape { layers, ..TINY };
    let mut emb = EmbeddingMatrix::random(shape.vocab_size, shape.embed_dim, seed, true).unwrap();
    emb.matrix = sample_uniform(&[shape.vocab_size, shape.embed_dim], 1.0, &mut stream_rng(seed, Stream::Init, 99));
    let mut model = ModelParams::init(shape, emb, seed).unwrap();
    let mut rng = stream_rng(seed, Stream::Init, 98);
    for b in &mut model.head.bias.data_mut()[..] {
        *b = rng.gen_range(-0.5..0.5);
    }
    model
}

/// Sequences of distinct lengths in 1..=6 (so padding is exercised) with labels.
pub fn tiny_batch(seed: u64, size: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut rng = stream_rng(seed, Stream::Synthetic, 7);
    let mut seqs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..size {
        let len = 6 - (i % 6);
        seqs.push((0..len).map(|_| rng.gen_range(2..TINY.vocab_size)).collect());
        labels.push(rng.gen_range(0..TINY.classes));
    }
    (seqs, labels)
}

/// Small synthetic corpus encoded against its own vocabulary, with a model
/// sized to match.
pub fn synthetic_setup(
    seed: u64,
    labeled: usize,
    unlabeled: usize,
    finetune: bool,
) -> (ModelParams<f64>, mixedobj::trainer::TrainData, mixedobj::vocab::Vocabulary) {
    use mixedobj::corpus::{generate_synthetic, SyntheticSpec};
    let spec = SyntheticSpec {
        labeled,
        unlabeled,
        vocab_size: 50,
        min_len: 2,
        max_len: 12,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(seed, &spec).unwrap();
    let vocab = mixedobj::vocab::build_vocabulary(ds.labeled().iter().chain(ds.unlabeled()), 1000).unwrap();
    let shape = ModelShape {
        vocab_size: vocab.len(),
        embed_dim: 5,
        hidden: 4,
        layers: 1,
        classes: 2,
    };
    let emb = EmbeddingMatrix::random(vocab.len(), 5, seed, finetune).unwrap();
    let model = ModelParams::init(shape, emb, seed).unwrap();
    let data = mixedobj::trainer::TrainData::encode(&ds, None, &vocab);
    (model, data, vocab)
}
