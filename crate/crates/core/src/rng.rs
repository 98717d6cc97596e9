//! Seeded randomness. Every stochastic component draws from its own named
//! sub-stream of one root seed so components can be re-seeded in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Batching,
    UnlabeledBatching,
    Dropout,
    WordDropout,
    VatNoise,
    DevSplit,
    Synthetic,
    Sweep,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x1,
            Stream::Batching => 0x2,
            Stream::UnlabeledBatching => 0x3,
            Stream::Dropout => 0x4,
            Stream::WordDropout => 0x5,
            Stream::VatNoise => 0x6,
            Stream::DevSplit => 0x7,
            Stream::Synthetic => 0x8,
            Stream::Sweep => 0x9,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `(stream, index)` under `root`.
pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream.tag()) ^ index)
}

pub fn stream_rng(root: u64, stream: Stream, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, stream, index))
}

/// I.i.d. standard-normal tensor.
pub fn sample_gaussian<S: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Uniform tensor in `[-bound, bound]`.
pub fn sample_uniform<S: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::lit(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_is_deterministic() {
        let a: Tensor<f64> = sample_gaussian(&[2, 3], &mut stream_rng(7, Stream::VatNoise, 0));
        let b: Tensor<f64> = sample_gaussian(&[2, 3], &mut stream_rng(7, Stream::VatNoise, 0));
        assert_eq!(a, b);
        let c: Tensor<f64> = sample_gaussian(&[2, 3], &mut stream_rng(7, Stream::VatNoise, 1));
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_moments() {
        let t: Tensor<f64> = sample_gaussian(&[1_000_000], &mut stream_rng(3, Stream::VatNoise, 0));
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn empty_shape() {
        let t: Tensor<f64> = sample_gaussian(&[0], &mut stream_rng(1, Stream::VatNoise, 0));
        assert!(t.is_empty());
        assert_eq!(t.shape(), &[0]);
    }

    #[test]
    fn streams_differ() {
        assert_ne!(
            derive_seed(1, Stream::Dropout, 0),
            derive_seed(1, Stream::WordDropout, 0)
        );
        assert_ne!(derive_seed(1, Stream::Dropout, 0), derive_seed(2, Stream::Dropout, 0));
    }
}
