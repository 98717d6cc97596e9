//! Token-budget batching: documents are shuffled, then packed greedily so
//! that no batch holds more than `token_budget` real tokens. Documents are
//! never split or truncated.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Packs documents in the given order. Each batch lists positions into `lengths`.
pub fn pack_greedy(lengths: &[usize], order: &[usize], token_budget: usize) -> Result<Vec<Vec<usize>>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &ix in order {
        let len = lengths[ix];
        if len > token_budget {
            return Err(Error::Config(format!(
                "document {ix} has {len} tokens, more than the token budget {token_budget}"
            )));
        }
        if used + len > token_budget && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(ix);
        used += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Shuffles document positions with `rng` and packs them greedily.
pub fn plan_batches(lengths: &[usize], token_budget: usize, rng: &mut StreamRng) -> Result<Vec<Vec<usize>>> {
    if token_budget == 0 {
        return Err(Error::Config("token budget must be positive".into()));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    pack_greedy(lengths, &order, token_budget)
}

/// Splits documents into groups of at most `size` examples after shuffling.
pub fn plan_fixed_count(count: usize, size: usize, rng: &mut StreamRng) -> Result<Vec<Vec<usize>>> {
    if size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    Ok(order.chunks(size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    #[test]
    fn greedy_trace() {
        let b = pack_greedy(&[10, 20, 30], &[0, 1, 2], 35).unwrap();
        assert_eq!(b, vec![vec![0, 1], vec![2]]);
        let b = pack_greedy(&[10, 20, 30], &[0, 1, 2], 60).unwrap();
        assert_eq!(b, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn oversized_document_is_named() {
        let err = pack_greedy(&[5, 50], &[0, 1], 20).unwrap_err();
        assert!(err.to_string().contains("document 1"), "{err}");
    }

    proptest! {
        #[test]
        fn every_document_once_and_within_budget(
            lengths in prop::collection::vec(1usize..40, 0..60),
            extra in 0usize..50,
            seed in any::<u64>(),
        ) {
            let budget = lengths.iter().copied().max().unwrap_or(1) + extra;
            let batches = plan_batches(&lengths, budget, &mut stream_rng(seed, Stream::Batching, 0)).unwrap();
            let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..lengths.len()).collect::<Vec<_>>());
            for b in &batches {
                prop_assert!(!b.is_empty());
                prop_assert!(b.iter().map(|&i| lengths[i]).sum::<usize>() <= budget);
            }
        }
    }
}
