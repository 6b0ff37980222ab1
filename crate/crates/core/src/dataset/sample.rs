//! Seeded sampling that reproduces across platforms.
//!
//! The generator is ChaCha8 keyed with SHA-256(`"stancekit-sample"` ‖ seed as
//! little-endian u64 ‖ optional cell label bytes). Bounded integers use
//! rejection sampling on `next_u64`, and selection is a partial Fisher–Yates
//! shuffle, so the draw depends only on the seed and the item count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::DatasetError;
use crate::record::TweetRecord;

pub(crate) fn rng_for(seed: u64, cell: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"stancekit-sample");
    h.update(seed.to_le_bytes());
    for part in cell {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Uniform integer in `0..bound`.
fn below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// `k` distinct indices from `0..n`, in draw order.
pub(crate) fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + below(rng, (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Draws `n` records uniformly without replacement. The result does not
/// depend on input order and is sorted by id.
pub fn sample_random_tweets(records: &[TweetRecord], n: usize, seed: u64) -> Result<Vec<TweetRecord>, DatasetError> {
    if n > records.len() {
        return Err(DatasetError::TooFewRecords {
            requested: n,
            available: records.len(),
        });
    }
    let mut sorted: Vec<&TweetRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.id, &a.target).cmp(&(&b.id, &b.target)));
    let mut rng = rng_for(seed, &[]);
    let mut picked: Vec<TweetRecord> = sample_indices(&mut rng, sorted.len(), n)
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect();
    picked.sort_by(|a, b| (&a.id, &a.target).cmp(&(&b.id, &b.target)));
    Ok(picked)
}
