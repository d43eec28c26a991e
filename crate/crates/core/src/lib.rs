//! Word embeddings as explicit weighted matrix factorization.
//!
//! Skip-gram training with negative sampling is, cell for cell, a weighted
//! logistic regression on the word–context co-occurrence table: each cell
//! carries a response `n / (n + m)` and a weight `n + m`, where `n` is the
//! observed pair count and `m` the mass the negative sampler assigns the
//! pair. This crate makes that objective explicit and optimizes it directly
//! over the table — no corpus streaming, no sampled negatives at training
//! time — alongside a least-squares variant on the same responses and a
//! log-count baseline.
//!
//! The pipeline: count pairs from text ([`corpus`]), assemble the sparse
//! table ([`cooc`]), train factor matrices against a chosen objective
//! ([`trainer`]), then inspect or export the result ([`eval`]). Each cell's
//! closed-form quantities (response, weight, log-odds) live in [`cooc`];
//! the per-cell objectives and gradients in [`objective`].
//!
//! Everything downstream of a seed is deterministic, including parallel
//! runs with a single thread per stage; multi-threaded training trades
//! bit-reproducibility for throughput and says so loudly.

// `!(x > 0.0)` deliberately fails NaN; the positive-form comparison clippy
// suggests would silently accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cooc;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod synth;
pub mod trainer;
mod util;

pub use cooc::{
    cell_problem, context_distribution, pmi, shifted_pmi_entries, shifted_pmi_matrix, CellProblem,
    ContextDistribution, CoocStats,
};
pub use corpus::{
    build_vocab, build_vocab_from_files, extract_pairs, extract_pairs_from_files, PairCounts,
    PairExtractor, TokenizeOptions, VocabBuilder, Vocabulary,
};
pub use error::{Error, Result};
pub use eval::{
    check_logit_identity, export_embeddings, finite_difference_check, nearest_neighbors,
    similarity, ExportFormat, GradCheckReport, IdentityReport, Space,
};
pub use model::EmbeddingModel;
pub use objective::{GloveWeighting, Objective};
pub use trainer::{
    train, train_model, EpochStats, TrainConfig, TrainMode, TrainReport, ZeroCellPolicy,
};
pub use util::{atomic_write, CompensatedSum};
