//! Seeded synthetic inputs for tests and benchmarks: a corpus with planted
//! cluster structure and random co-occurrence tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cooc::CoocStats;
use crate::error::Result;

/// A corpus of sentences drawn from two disjoint vocabularies, `a…` and
/// `b…`. Each sentence sticks to one cluster, so tokens from different
/// clusters never co-occur: any embedding that respects the co-occurrence
/// geometry must separate the clusters.
///
/// Sentences alternate clusters; tokens are uniform within the cluster.
pub fn two_cluster_corpus(
    words_per_cluster: usize,
    sentences: usize,
    sentence_len: usize,
    seed: u64,
) -> Vec<String> {
    assert!(words_per_cluster > 0 && sentence_len > 0);
    let width = (words_per_cluster.max(2) - 1).ilog10() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sentences);
    for s in 0..sentences {
        let prefix = if s % 2 == 0 { 'a' } else { 'b' };
        let mut sentence = String::with_capacity(sentence_len * (width + 2));
        for t in 0..sentence_len {
            if t > 0 {
                sentence.push(' ');
            }
            let word = rng.random_range(0..words_per_cluster);
            sentence.push(prefix);
            sentence.push_str(&format!("{word:0width$}"));
        }
        out.push(sentence);
    }
    out
}

/// The cluster of a token from [`two_cluster_corpus`]: 0 for `a…`, 1 for
/// `b…`.
pub fn cluster_of(token: &str) -> Option<usize> {
    match token.as_bytes().first() {
        Some(b'a') => Some(0),
        Some(b'b') => Some(1),
        _ => None,
    }
}

/// Co-occurrence statistics with each cell present independently with
/// probability `density` and counts uniform in `1..=max_count`. At least one
/// cell is always present.
pub fn random_cooc_stats(
    vocab_size: usize,
    density: f64,
    max_count: u64,
    seed: u64,
) -> Result<CoocStats> {
    assert!((0.0..=1.0).contains(&density) && max_count >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for w in 0..vocab_size as u32 {
        for c in 0..vocab_size as u32 {
            if rng.random_bool(density) {
                entries.push((w, c, rng.random_range(1..=max_count)));
            }
        }
    }
    if entries.is_empty() {
        entries.push((0, 0, rng.random_range(1..=max_count)));
    }
    CoocStats::from_entries(vocab_size, entries)
}

/// Fully dense statistics: every cell holds a count uniform in
/// `1..=max_count`. With no zero cells, every objective sees exactly the
/// same data regardless of zero-cell handling.
pub fn dense_random_stats(vocab_size: usize, max_count: u64, seed: u64) -> Result<CoocStats> {
    random_cooc_stats(vocab_size, 1.0, max_count, seed)
}
