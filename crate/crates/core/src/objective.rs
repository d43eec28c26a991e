//! Per-cell objectives and gradients for the three factorizations, plus two
//! whole-matrix evaluators used to cross-check them.
//!
//! Sign conventions, fixed here and relied on everywhere else:
//!
//! * the weighted logistic objective ([`sgns_cell_objective`]) is
//!   **maximized** — it is a log-likelihood;
//! * the weighted least-squares objective ([`sgns_ls_cell_objective`]) and
//!   the count-regression baseline ([`glove_cell_objective`]) are
//!   **minimized** — they are losses.
//!
//! Each `*_grad` function returns the gradient of its own cell value in that
//! native convention; optimizers ascend the first and descend the other two.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::cooc::{ContextDistribution, CoocStats};
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::util::CompensatedSum;

/// Which per-cell objective a trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Weighted logistic factorization; equivalent to skip-gram with negative
    /// sampling, maximized.
    SgnsLogistic,
    /// Weighted least squares on the same responses and weights, minimized.
    SgnsLs,
    /// Damped log-count regression on nonzero cells only, minimized.
    Glove,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::SgnsLogistic => "sgns",
            Objective::SgnsLs => "sgns-ls",
            Objective::Glove => "glove",
        })
    }
}

/// Numerically stable logistic function.
///
/// Branches on sign so the exponential argument is never positive: exact to
/// f64 precision over the whole axis, underflowing gracefully to 0 (never
/// NaN) for very negative inputs.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow: for positive `x` this is
/// `x + ln(1 + e^-x)`.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Gradient of one cell with respect to the two touched parameter rows (and
/// bias terms where the objective has them), in the objective's native
/// convention. `value` is the cell's objective/loss contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrad {
    pub d_word: Array1<f64>,
    pub d_context: Array1<f64>,
    pub d_word_bias: Option<f64>,
    pub d_context_bias: Option<f64>,
    pub value: f64,
}

fn check_response_weight(response: f64, weight: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&response) || !response.is_finite() {
        return Err(Error::invalid(format!(
            "response must lie in [0, 1], got {response}"
        )));
    }
    if !(weight > 0.0) || !weight.is_finite() {
        return Err(Error::invalid(format!(
            "weight must be positive and finite, got {weight}"
        )));
    }
    Ok(())
}

fn check_score(score: f64) -> Result<()> {
    if !score.is_finite() {
        return Err(Error::invalid(format!("score must be finite, got {score}")));
    }
    Ok(())
}

fn check_dims(word_vec: &ArrayView1<f64>, context_vec: &ArrayView1<f64>) -> Result<()> {
    if word_vec.len() != context_vec.len() {
        return Err(Error::DimensionMismatch(format!(
            "word vector has {} entries, context vector {}",
            word_vec.len(),
            context_vec.len()
        )));
    }
    Ok(())
}

/// Weighted binomial log-likelihood of one cell:
/// `weight * (response * score - ln(1 + e^score))`.
///
/// For positive scores this is computed as
/// `weight * (score * (response - 1) - ln(1 + e^-score))`, which avoids both
/// overflow in the exponential and cancellation when the response saturates.
/// Finite for every finite score; maximized at `score = logit(response)`.
pub fn sgns_cell_objective(response: f64, weight: f64, score: f64) -> Result<f64> {
    check_response_weight(response, weight)?;
    check_score(score)?;
    let value = if score > 0.0 {
        weight * (score * (response - 1.0) - (-score).exp().ln_1p())
    } else {
        weight * (response * score - score.exp().ln_1p())
    };
    Ok(value)
}

/// Gradient of [`sgns_cell_objective`] in the two parameter rows. The score
/// is the inner product of the given rows; the coefficient in the score is
/// `weight * (response - sigmoid(score))`, so the gradient vanishes exactly
/// where the sigmoid matches the response.
pub fn sgns_cell_grad(
    response: f64,
    weight: f64,
    word_vec: ArrayView1<f64>,
    context_vec: ArrayView1<f64>,
) -> Result<CellGrad> {
    check_response_weight(response, weight)?;
    check_dims(&word_vec, &context_vec)?;
    let score = word_vec.dot(&context_vec);
    check_score(score)?;
    let coef = weight * (response - sigmoid(score));
    Ok(CellGrad {
        d_word: &context_vec * coef,
        d_context: &word_vec * coef,
        d_word_bias: None,
        d_context_bias: None,
        value: sgns_cell_objective(response, weight, score)?,
    })
}

/// Weighted squared error of one cell: `weight * (response - score)^2`.
pub fn sgns_ls_cell_objective(response: f64, weight: f64, score: f64) -> Result<f64> {
    check_response_weight(response, weight)?;
    check_score(score)?;
    let r = response - score;
    Ok(weight * r * r)
}

/// Gradient of [`sgns_ls_cell_objective`] (a minimized loss):
/// `d_word = -2 * weight * (response - score) * context_vec`.
pub fn sgns_ls_cell_grad(
    response: f64,
    weight: f64,
    word_vec: ArrayView1<f64>,
    context_vec: ArrayView1<f64>,
) -> Result<CellGrad> {
    check_response_weight(response, weight)?;
    check_dims(&word_vec, &context_vec)?;
    let score = word_vec.dot(&context_vec);
    check_score(score)?;
    let coef = -2.0 * weight * (response - score);
    Ok(CellGrad {
        d_word: &context_vec * coef,
        d_context: &word_vec * coef,
        d_word_bias: None,
        d_context_bias: None,
        value: sgns_ls_cell_objective(response, weight, score)?,
    })
}

/// Damping curve for the log-count regression: each cell is weighted by
/// `min(count / x_max, 1)^exponent`, flattening the influence of very
/// frequent pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GloveWeighting {
    pub x_max: f64,
    pub exponent: f64,
}

impl Default for GloveWeighting {
    fn default() -> Self {
        Self {
            x_max: 100.0,
            exponent: 0.75,
        }
    }
}

impl GloveWeighting {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > 0.0) || !self.x_max.is_finite() {
            return Err(Error::invalid(format!(
                "x_max must be positive and finite, got {}",
                self.x_max
            )));
        }
        if !(self.exponent >= 0.0) || !self.exponent.is_finite() {
            return Err(Error::invalid(format!(
                "damping exponent must be non-negative and finite, got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, count: u64) -> f64 {
        let ratio = count as f64 / self.x_max;
        if ratio >= 1.0 {
            1.0
        } else {
            ratio.powf(self.exponent)
        }
    }
}

/// Log-count regression loss of one nonzero cell:
/// `weight(count) * (ln(count) - score)^2`, where the score of this
/// objective includes both bias terms when present. Zero-count cells are not
/// part of this objective at all and are rejected.
pub fn glove_cell_objective(count: u64, score: f64, weighting: &GloveWeighting) -> Result<f64> {
    weighting.validate()?;
    if count == 0 {
        return Err(Error::invalid(
            "the log-count objective is defined on nonzero cells only",
        ));
    }
    check_score(score)?;
    let r = (count as f64).ln() - score;
    Ok(weighting.weight(count) * r * r)
}

/// Gradient of [`glove_cell_objective`] (a minimized loss). When `biases` is
/// given, the regressed score is `word . context + word_bias + context_bias`
/// and the bias partials are populated; otherwise the raw inner product is
/// regressed and they are `None`.
pub fn glove_cell_grad(
    count: u64,
    word_vec: ArrayView1<f64>,
    context_vec: ArrayView1<f64>,
    biases: Option<(f64, f64)>,
    weighting: &GloveWeighting,
) -> Result<CellGrad> {
    weighting.validate()?;
    if count == 0 {
        return Err(Error::invalid(
            "the log-count objective is defined on nonzero cells only",
        ));
    }
    check_dims(&word_vec, &context_vec)?;
    let (word_bias, context_bias) = biases.unwrap_or((0.0, 0.0));
    let score = word_vec.dot(&context_vec) + word_bias + context_bias;
    check_score(score)?;
    let fw = weighting.weight(count);
    let r = (count as f64).ln() - score;
    let coef = -2.0 * fw * r;
    Ok(CellGrad {
        d_word: &context_vec * coef,
        d_context: &word_vec * coef,
        d_word_bias: biases.map(|_| coef),
        d_context_bias: biases.map(|_| coef),
        value: fw * r * r,
    })
}

/// The skip-gram negative-sampling objective in its expectation form:
///
/// ```text
/// sum_{w,c} n(w,c) * ( ln sigmoid(score(w,c))
///                      + negative_samples * E_{c' ~ P}[ln sigmoid(-score(w,c'))] )
/// ```
///
/// with the expectation over the context distribution computed **exactly** —
/// a full weighted sum, no sampling. This is the independent oracle for the
/// factorization view: reorganizing this sum cell by cell yields precisely
/// the sum of [`sgns_cell_objective`] over every non-degenerate cell, for
/// any distribution exponent and any `negative_samples >= 0`.
///
/// Deliberately direct and unoptimized (`O(V^2 * dimension)`); use it to
/// check trainers, not inside them.
pub fn sgns_expectation_objective(
    stats: &CoocStats,
    dist: &ContextDistribution,
    negative_samples: f64,
    model: &EmbeddingModel,
) -> Result<f64> {
    check_eval_inputs(stats, dist, model)?;
    if !(negative_samples >= 0.0) || !negative_samples.is_finite() {
        return Err(Error::invalid(format!(
            "negative_samples must be a non-negative finite real, got {negative_samples}"
        )));
    }
    let mut total = CompensatedSum::new();
    // Positive term: observed pairs scored as positives.
    for (w, c, n) in stats.nonzero() {
        // ln sigmoid(s) = -ln(1 + e^-s)
        total.add(n as f64 * -log1p_exp(-model.score(w, c)));
    }
    // Negative term: for each word occurrence, `negative_samples` contexts
    // drawn from the distribution and scored as negatives — in expectation.
    if negative_samples > 0.0 {
        let contexts: Vec<u32> = dist.valid_contexts().collect();
        for w in stats.valid_words() {
            let n_w = stats.word_marginal(w) as f64;
            let mut expectation = CompensatedSum::new();
            for &c in &contexts {
                expectation.add(dist.prob(c) * -log1p_exp(model.score(w, c)));
            }
            total.add(negative_samples * n_w * expectation.value());
        }
    }
    Ok(total.value())
}

/// Exact whole-matrix value of an objective for a given model, in the
/// objective's native convention (log-likelihood for the logistic objective,
/// loss for the other two).
///
/// The two response-based objectives sum over *every* non-degenerate cell,
/// zero counts included; the log-count baseline sums over stored cells only.
/// `O(V^2 * dimension)` for the former — fine at desk scale, and trainers
/// switch to a sampled estimate beyond that.
pub fn total_objective(
    stats: &CoocStats,
    dist: &ContextDistribution,
    negative_samples: f64,
    model: &EmbeddingModel,
    objective: Objective,
    weighting: &GloveWeighting,
) -> Result<f64> {
    check_eval_inputs(stats, dist, model)?;
    let mut total = CompensatedSum::new();
    match objective {
        Objective::SgnsLogistic | Objective::SgnsLs => {
            if !(negative_samples >= 0.0) || !negative_samples.is_finite() {
                return Err(Error::invalid(format!(
                    "negative_samples must be a non-negative finite real, got {negative_samples}"
                )));
            }
            let contexts: Vec<u32> = dist.valid_contexts().collect();
            for w in stats.valid_words() {
                let n_w = stats.word_marginal(w) as f64;
                let (row_cols, row_counts) = stats.row(w);
                let mut at = 0usize;
                for &c in &contexts {
                    while at < row_cols.len() && row_cols[at] < c {
                        at += 1;
                    }
                    let n = if at < row_cols.len() && row_cols[at] == c {
                        row_counts[at]
                    } else {
                        0
                    };
                    let negative_mass = negative_samples * n_w * dist.prob(c);
                    let weight = n as f64 + negative_mass;
                    if !(weight > 0.0) {
                        continue; // degenerate at negative_samples = 0
                    }
                    let response = if n == 0 { 0.0 } else { n as f64 / weight };
                    let score = model.score(w, c);
                    let value = match objective {
                        Objective::SgnsLogistic => sgns_cell_objective(response, weight, score)?,
                        _ => sgns_ls_cell_objective(response, weight, score)?,
                    };
                    total.add(value);
                }
            }
        }
        Objective::Glove => {
            weighting.validate()?;
            let with_biases = model.has_biases();
            for (w, c, n) in stats.nonzero() {
                let score = if with_biases {
                    model.score_with_biases(w, c)
                } else {
                    model.score(w, c)
                };
                total.add(glove_cell_objective(n, score, weighting)?);
            }
        }
    }
    Ok(total.value())
}

fn check_eval_inputs(
    stats: &CoocStats,
    dist: &ContextDistribution,
    model: &EmbeddingModel,
) -> Result<()> {
    if model.vocab_size() != stats.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "model covers {} ids, statistics cover {}",
            model.vocab_size(),
            stats.vocab_size()
        )));
    }
    if dist.len() != stats.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "context distribution covers {} ids, statistics cover {}",
            dist.len(),
            stats.vocab_size()
        )));
    }
    Ok(())
}
