//! Verification and inspection: the logit/shifted-PMI identity check, finite
//! difference gradient validation, cosine similarity queries, and embedding
//! export.
//!
//! A word-analogy benchmark is deliberately not included: at the corpus
//! scales this crate targets, analogy accuracy is noise. Cluster recovery on
//! synthetic corpora (see the acceptance suite) stands in for it.

use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cooc::{pmi, ContextDistribution, CoocStats};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::objective::{
    glove_cell_grad, glove_cell_objective, sgns_cell_grad, sgns_cell_objective, sgns_ls_cell_grad,
    sgns_ls_cell_objective, sigmoid, GloveWeighting, Objective,
};
use crate::util::atomic_write;

/// Outcome of [`check_logit_identity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    pub cells_checked: u64,
    /// Largest absolute difference between `logit(response)` and
    /// `PMI - ln(negative_samples)` over all stored cells.
    pub max_abs_deviation: f64,
}

/// Verify, cell by cell, that the log-odds of the response equal the PMI
/// shifted down by `ln(negative_samples)`.
///
/// The identity holds exactly when the context distribution uses exact count
/// ratios; any other exponent is refused rather than silently checked
/// against the wrong target.
pub fn check_logit_identity(
    stats: &CoocStats,
    dist: &ContextDistribution,
    negative_samples: f64,
) -> Result<IdentityReport> {
    if dist.exponent() != 1.0 {
        return Err(Error::invalid(format!(
            "the logit/PMI identity is stated for exact count ratios \
             (exponent 1), got exponent {}",
            dist.exponent()
        )));
    }
    if !(negative_samples > 0.0) || !negative_samples.is_finite() {
        return Err(Error::invalid(format!(
            "negative_samples must be positive and finite, got {negative_samples}"
        )));
    }
    if dist.len() != stats.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "context distribution covers {} ids, statistics cover {}",
            dist.len(),
            stats.vocab_size()
        )));
    }
    let shift = negative_samples.ln();
    let mut max_abs_deviation = 0.0f64;
    let mut cells_checked = 0u64;
    for (w, c, n) in stats.nonzero() {
        let negative_mass = negative_samples * stats.word_marginal(w) as f64 * dist.prob(c);
        let logit = crate::cooc::logit_from_masses(n, negative_mass);
        let target = pmi(stats, w, c)? - shift;
        max_abs_deviation = max_abs_deviation.max((logit - target).abs());
        cells_checked += 1;
    }
    Ok(IdentityReport {
        cells_checked,
        max_abs_deviation,
    })
}

/// Outcome of [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub cells_checked: usize,
    pub coordinates_checked: usize,
    /// Largest relative error among coordinates with non-negligible gradient.
    pub max_relative_error: f64,
    /// Largest absolute error among near-zero-gradient coordinates.
    pub max_absolute_error_near_zero: f64,
}

const FD_STEP: f64 = 1e-5;
/// Below this magnitude a coordinate is compared absolutely, not relatively.
const NEAR_ZERO: f64 = 1e-8;

/// Compare analytic cell gradients against central finite differences on
/// randomly generated cells.
///
/// The generator keeps every gradient coordinate comfortably away from zero
/// (bounded vector entries, residuals bounded away from zero), because the
/// difference quotient carries an irreducible rounding floor of roughly
/// `eps * |objective| / step`; coordinates below [`NEAR_ZERO`] — which only
/// constructed exact-zero cases reach — are held to an absolute bound
/// instead.
pub fn finite_difference_check(
    objective: Objective,
    with_biases: bool,
    cells: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if cells == 0 {
        return Err(Error::invalid("must check at least one cell"));
    }
    if with_biases && objective != Objective::Glove {
        return Err(Error::invalid(
            "bias terms are only part of the log-count objective",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weighting = GloveWeighting::default();
    let mut report = GradCheckReport {
        cells_checked: 0,
        coordinates_checked: 0,
        max_relative_error: 0.0,
        max_absolute_error_near_zero: 0.0,
    };

    for _ in 0..cells {
        let dimension = rng.random_range(2..=6);
        let mut word_vec = bounded_vector(&mut rng, dimension);
        let mut context_vec = bounded_vector(&mut rng, dimension);
        let score: f64 = word_vec.dot(&context_vec);

        match objective {
            Objective::SgnsLogistic | Objective::SgnsLs => {
                let weight = rng.random_range(1.0..6.0);
                let response = match objective {
                    // Keep |response - sigmoid(score)| away from zero so no
                    // coordinate degenerates.
                    Objective::SgnsLogistic => {
                        if rng.random_bool(0.25) {
                            0.0
                        } else {
                            let s = sigmoid(score);
                            let delta = rng.random_range(0.1..0.3);
                            if s > 0.5 {
                                (s - delta).max(0.005)
                            } else {
                                (s + delta).min(0.995)
                            }
                        }
                    }
                    _ => loop {
                        let x: f64 = rng.random_range(0.0..1.0);
                        if (x - score).abs() >= 0.2 {
                            break x;
                        }
                    },
                };
                let objective_at = |vw: &Array1<f64>, vc: &Array1<f64>| -> f64 {
                    let s = vw.dot(vc);
                    match objective {
                        Objective::SgnsLogistic => {
                            sgns_cell_objective(response, weight, s).unwrap()
                        }
                        _ => sgns_ls_cell_objective(response, weight, s).unwrap(),
                    }
                };
                let grad = match objective {
                    Objective::SgnsLogistic => {
                        sgns_cell_grad(response, weight, word_vec.view(), context_vec.view())?
                    }
                    _ => sgns_ls_cell_grad(response, weight, word_vec.view(), context_vec.view())?,
                };
                // The logistic objective is maximized: its gradient ascends
                // the value the closure computes. The least-squares loss is
                // minimized: its reported gradient *is* the derivative of the
                // closure value. Either way the analytic quantity must match
                // the difference quotient of the closure directly.
                for j in 0..dimension {
                    let numeric =
                        central_difference(&mut word_vec, j, |v| objective_at(v, &context_vec));
                    record(&mut report, grad.d_word[j], numeric);
                    let numeric =
                        central_difference(&mut context_vec, j, |v| objective_at(&word_vec, v));
                    record(&mut report, grad.d_context[j], numeric);
                }
            }
            Objective::Glove => {
                let biases = if with_biases {
                    Some((rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                } else {
                    None
                };
                let bias_sum = biases.map_or(0.0, |(a, b)| a + b);
                // Residual ln(count) - score bounded away from zero.
                let count = loop {
                    let n: u64 = rng.random_range(20..=300);
                    if ((n as f64).ln() - (score + bias_sum)).abs() >= 0.2 {
                        break n;
                    }
                };
                let objective_at = |vw: &Array1<f64>, vc: &Array1<f64>, bw: f64, bc: f64| -> f64 {
                    glove_cell_objective(count, vw.dot(vc) + bw + bc, &weighting).unwrap()
                };
                let (bw, bc) = biases.unwrap_or((0.0, 0.0));
                let grad = glove_cell_grad(
                    count,
                    word_vec.view(),
                    context_vec.view(),
                    biases,
                    &weighting,
                )?;
                for j in 0..dimension {
                    let numeric = central_difference(&mut word_vec, j, |v| {
                        objective_at(v, &context_vec, bw, bc)
                    });
                    record(&mut report, grad.d_word[j], numeric);
                    let numeric = central_difference(&mut context_vec, j, |v| {
                        objective_at(&word_vec, v, bw, bc)
                    });
                    record(&mut report, grad.d_context[j], numeric);
                }
                if with_biases {
                    let numeric = (objective_at(&word_vec, &context_vec, bw + FD_STEP, bc)
                        - objective_at(&word_vec, &context_vec, bw - FD_STEP, bc))
                        / (2.0 * FD_STEP);
                    record(&mut report, grad.d_word_bias.unwrap(), numeric);
                    let numeric = (objective_at(&word_vec, &context_vec, bw, bc + FD_STEP)
                        - objective_at(&word_vec, &context_vec, bw, bc - FD_STEP))
                        / (2.0 * FD_STEP);
                    record(&mut report, grad.d_context_bias.unwrap(), numeric);
                }
            }
        }
        report.cells_checked += 1;
    }
    Ok(report)
}

/// Entries with magnitude in [0.3, 0.7] and random sign: inner products stay
/// small enough that objective values don't wash out the difference
/// quotient, while no coordinate of the gradient can vanish by accident.
fn bounded_vector(rng: &mut ChaCha8Rng, dimension: usize) -> Array1<f64> {
    Array1::from_iter((0..dimension).map(|_| {
        let magnitude = rng.random_range(0.3..0.7);
        if rng.random_bool(0.5) {
            magnitude
        } else {
            -magnitude
        }
    }))
}

fn central_difference<F: FnMut(&Array1<f64>) -> f64>(
    vec: &mut Array1<f64>,
    j: usize,
    mut f: F,
) -> f64 {
    let original = vec[j];
    vec[j] = original + FD_STEP;
    let plus = f(vec);
    vec[j] = original - FD_STEP;
    let minus = f(vec);
    vec[j] = original;
    (plus - minus) / (2.0 * FD_STEP)
}

fn record(report: &mut GradCheckReport, analytic: f64, numeric: f64) {
    report.coordinates_checked += 1;
    let scale = analytic.abs().max(numeric.abs());
    if scale < NEAR_ZERO {
        report.max_absolute_error_near_zero = report
            .max_absolute_error_near_zero
            .max((analytic - numeric).abs());
    } else {
        report.max_relative_error = report
            .max_relative_error
            .max((analytic - numeric).abs() / scale);
    }
}

/// Which vectors similarity queries read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Word,
    Context,
    /// Elementwise mean of the word and context vectors.
    Averaged,
}

fn query_vector(model: &EmbeddingModel, id: u32, space: Space) -> Result<Array1<f64>> {
    if (id as usize) >= model.vocab_size() {
        return Err(Error::invalid(format!(
            "id {id} out of range for vocabulary of {}",
            model.vocab_size()
        )));
    }
    Ok(match space {
        Space::Word => model.word_vector(id).to_owned(),
        Space::Context => model.context_vector(id).to_owned(),
        Space::Averaged => {
            let mut v = model.word_vector(id).to_owned();
            v += &model.context_vector(id);
            v * 0.5
        }
    })
}

/// Cosine similarity between two ids in the chosen space. A zero vector on
/// either side is an error, not a NaN.
pub fn similarity(model: &EmbeddingModel, first: u32, second: u32, space: Space) -> Result<f64> {
    let a = query_vector(model, first, space)?;
    let b = query_vector(model, second, space)?;
    let norm_a = a.dot(&a).sqrt();
    let norm_b = b.dot(&b).sqrt();
    if norm_a == 0.0 {
        return Err(Error::ZeroVector(first));
    }
    if norm_b == 0.0 {
        return Err(Error::ZeroVector(second));
    }
    Ok(a.dot(&b) / (norm_a * norm_b))
}

/// Ids most similar to the query, descending by cosine similarity, ties
/// broken by ascending id. The query itself is excluded; ids whose vector is
/// zero in the chosen space are skipped rather than reported as errors.
pub fn nearest_neighbors(
    model: &EmbeddingModel,
    query: u32,
    top_n: usize,
    space: Space,
) -> Result<Vec<(u32, f64)>> {
    let q = query_vector(model, query, space)?;
    let q_norm = q.dot(&q).sqrt();
    if q_norm == 0.0 {
        return Err(Error::ZeroVector(query));
    }
    if top_n == 0 {
        return Ok(Vec::new());
    }
    let mut scored = Vec::with_capacity(model.vocab_size().saturating_sub(1));
    for id in 0..model.vocab_size() as u32 {
        if id == query {
            continue;
        }
        let v = query_vector(model, id, space)?;
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            continue;
        }
        scored.push((id, q.dot(&v) / (q_norm * norm)));
    }
    scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// `vocab_size dimension` header, then one `token v1 .. vd` line per id
    /// in id order, six significant digits.
    Text,
    /// The binary checkpoint format (bit-exact round trip).
    Checkpoint,
}

/// Write word vectors (text) or full parameters (checkpoint) to `path`.
///
/// The vocabulary must cover exactly the model's ids. Tokens are whitespace-
/// free by construction of the vocabulary, so the text format needs no
/// escaping.
pub fn export_embeddings(
    model: &EmbeddingModel,
    vocab: &Vocabulary,
    path: &Path,
    format: ExportFormat,
) -> Result<()> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "vocabulary has {} tokens, model covers {} ids",
            vocab.len(),
            model.vocab_size()
        )));
    }
    match format {
        ExportFormat::Checkpoint => model.write_checkpoint(path),
        ExportFormat::Text => atomic_write(path, |out| {
            writeln!(out, "{} {}", model.vocab_size(), model.dimension())?;
            for (id, token, _) in vocab.iter() {
                write!(out, "{token}")?;
                for &v in model.word_vector(id) {
                    write!(out, " {v:.5e}")?;
                }
                writeln!(out)?;
            }
            Ok(())
        })
        .map_err(|e| crate::util::io_at(path, e).into()),
    }
}
