//! Training: stochastic AdaGrad over matrix cells, or exact full-batch
//! gradient steps.
//!
//! The two response-based objectives are defined over *every* non-degenerate
//! cell of the co-occurrence matrix, zero counts included, so their stochastic
//! trainer must visit zero cells; a per-epoch Bernoulli sample with importance
//! weight `1 / rate` keeps that affordable without biasing the expected
//! gradient. The log-count baseline is defined on stored cells only and never
//! visits a zero cell — a counter proves it.
//!
//! Single-threaded runs are bit-reproducible for a fixed seed. With
//! `threads > 1` updates are hogwild-style (lock-free, racy) and
//! reproducibility is deliberately given up.

mod hogwild;

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cooc::{context_distribution, ContextDistribution, CoocStats};
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::objective::{sigmoid, total_objective, GloveWeighting, Objective};
use crate::util::CompensatedSum;
use hogwild::SharedSlice;

/// Scores beyond this magnitude are clamped before entering gradient
/// formulas, bounding a single stochastic step; each occurrence is counted
/// and surfaced in reports. A deliberate deviation from the pure likelihood
/// gradient — at |score| = 50 the logistic factor is already saturated to
/// machine precision, so for the logistic objective the numerical effect is
/// nil, while the least-squares residual stays bounded.
pub const SCORE_CLAMP: f64 = 50.0;

/// How zero-count cells enter stochastic training of the response-based
/// objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroCellPolicy {
    /// Visit every non-degenerate zero cell each epoch.
    All,
    /// Sample at `min(1, 10 * nnz / zero_cells)` — roughly ten visited zero
    /// cells per stored cell.
    Auto,
    /// Visit each zero cell independently with this probability per epoch,
    /// importance-weighted by its reciprocal.
    Sampled { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Shuffled per-cell AdaGrad updates.
    StochasticAdagrad,
    /// One exact, plain gradient step per epoch (no AdaGrad scaling) —
    /// always single-threaded and deterministic.
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Negative-to-positive sampling ratio; any positive real.
    pub negative_samples: f64,
    pub dimension: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adagrad_epsilon: f64,
    pub zero_cell_policy: ZeroCellPolicy,
    pub seed: u64,
    pub mode: TrainMode,
    /// Initial entries are uniform in `[-init_scale/dimension, +init_scale/dimension]`.
    pub init_scale: f64,
    /// Exponent of the context distribution (1 = exact count ratios).
    pub context_smoothing: f64,
    /// Train per-id bias terms (log-count objective only).
    pub glove_biases: bool,
    pub glove_weighting: GloveWeighting,
    /// Worker threads for stochastic epochs. More than one switches to
    /// lock-free hogwild updates and gives up bit-reproducibility.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::SgnsLogistic,
            negative_samples: 5.0,
            dimension: 50,
            epochs: 15,
            learning_rate: 0.05,
            adagrad_epsilon: 1e-8,
            zero_cell_policy: ZeroCellPolicy::Auto,
            seed: 42,
            mode: TrainMode::StochasticAdagrad,
            init_scale: 1.0,
            context_smoothing: 1.0,
            glove_biases: false,
            glove_weighting: GloveWeighting::default(),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.negative_samples > 0.0) || !self.negative_samples.is_finite() {
            return Err(Error::invalid(format!(
                "negative_samples must be positive and finite, got {}",
                self.negative_samples
            )));
        }
        if self.dimension == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.adagrad_epsilon > 0.0) || !self.adagrad_epsilon.is_finite() {
            return Err(Error::invalid(format!(
                "adagrad_epsilon must be positive and finite, got {}",
                self.adagrad_epsilon
            )));
        }
        if let ZeroCellPolicy::Sampled { rate } = self.zero_cell_policy {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(Error::invalid(format!(
                    "zero-cell sampling rate must lie in (0, 1], got {rate}"
                )));
            }
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::invalid(format!(
                "init_scale must be non-negative and finite, got {}",
                self.init_scale
            )));
        }
        if !(self.context_smoothing > 0.0) || !self.context_smoothing.is_finite() {
            return Err(Error::invalid(format!(
                "context_smoothing must be positive and finite, got {}",
                self.context_smoothing
            )));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        if self.glove_biases && self.objective != Objective::Glove {
            return Err(Error::invalid(
                "bias terms are only part of the log-count objective",
            ));
        }
        if self.objective == Objective::Glove {
            self.glove_weighting.validate()?;
        }
        Ok(())
    }

    /// The effective per-epoch zero-cell sampling probability.
    pub fn resolved_zero_rate(&self, nnz: usize, zero_cells: u64) -> f64 {
        match self.zero_cell_policy {
            ZeroCellPolicy::All => 1.0,
            ZeroCellPolicy::Sampled { rate } => rate,
            ZeroCellPolicy::Auto => {
                if zero_cells == 0 {
                    1.0
                } else {
                    (10.0 * nnz as f64 / zero_cells as f64).min(1.0)
                }
            }
        }
    }
}

/// Per-epoch training record. Epochs are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Whole-objective value after this epoch, in the objective's native
    /// convention (see [`TrainReport::objective_exact`] for how it was
    /// computed).
    pub objective: f64,
    /// Euclidean norm of the epoch's (stochastic or exact) gradient.
    pub grad_norm: f64,
    pub nonzero_cells_visited: u64,
    pub zero_cells_visited: u64,
    /// Number of visits where the score exceeded [`SCORE_CLAMP`].
    pub clamp_events: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_time: Duration,
    /// Whether per-epoch objectives are exact sums or sampled estimates
    /// (exact over stored cells plus an unbiased fixed-sample estimate of
    /// the zero-cell mass).
    pub objective_exact: bool,
}

impl TrainReport {
    pub fn final_objective(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.objective)
    }

    pub fn total_clamp_events(&self) -> u64 {
        self.epochs.iter().map(|e| e.clamp_events).sum()
    }
}

/// Full-matrix gradient in the **minimization** convention: the gradient of
/// the training loss (for the maximized logistic objective, the loss is its
/// negation). A full-batch step is `parameters -= learning_rate * gradient`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub word: Array2<f64>,
    pub context: Array2<f64>,
    pub word_bias: Option<Array1<f64>>,
    pub context_bias: Option<Array1<f64>>,
}

impl ModelGradient {
    fn zeros_like(model: &EmbeddingModel) -> Self {
        let shape = (model.vocab_size(), model.dimension());
        Self {
            word: Array2::zeros(shape),
            context: Array2::zeros(shape),
            word_bias: model
                .has_biases()
                .then(|| Array1::zeros(model.vocab_size())),
            context_bias: model
                .has_biases()
                .then(|| Array1::zeros(model.vocab_size())),
        }
    }

    pub fn norm(&self) -> f64 {
        let mut sq = CompensatedSum::new();
        for &v in self.word.iter().chain(self.context.iter()) {
            sq.add(v * v);
        }
        if let (Some(wb), Some(cb)) = (&self.word_bias, &self.context_bias) {
            for &v in wb.iter().chain(cb.iter()) {
                sq.add(v * v);
            }
        }
        sq.value().sqrt()
    }
}

/// Initialize a model shaped for `config`: seeded uniform entries, zero
/// biases (present only when the objective trains them).
pub fn init_model(vocab_size: usize, config: &TrainConfig) -> Result<EmbeddingModel> {
    config.validate()?;
    let with_biases = config.objective == Objective::Glove && config.glove_biases;
    EmbeddingModel::init(
        vocab_size,
        config.dimension,
        config.init_scale,
        config.seed,
        with_biases,
    )
}

/// Initialize and train a model against the given statistics.
pub fn train(stats: &CoocStats, config: &TrainConfig) -> Result<(EmbeddingModel, TrainReport)> {
    config.validate()?;
    let dist = context_distribution(stats, config.context_smoothing)?;
    let mut model = init_model(stats.vocab_size(), config)?;
    let report = train_model(stats, &dist, &mut model, config)?;
    Ok((model, report))
}

/// Train an existing model in place. The distribution must match the
/// config's smoothing exponent, and the model's shape must match both the
/// statistics and the config.
pub fn train_model(
    stats: &CoocStats,
    dist: &ContextDistribution,
    model: &mut EmbeddingModel,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    check_shapes(stats, dist, model, config)?;

    let ctx = TrainContext::build(stats, dist, config)?;
    let mut adagrad = AdagradState::for_model(model);
    let mut epochs = Vec::with_capacity(config.epochs);
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let counters = match config.mode {
            TrainMode::FullBatch => run_full_batch_epoch(&ctx, model, epoch)?,
            TrainMode::StochasticAdagrad => run_stochastic_epoch(&ctx, model, &mut adagrad, epoch)?,
        };
        let objective = ctx.evaluator.eval(&ctx, model, epoch)?;
        epochs.push(EpochStats {
            epoch,
            objective,
            grad_norm: counters.squared_grad_norm.sqrt(),
            nonzero_cells_visited: counters.nonzero_visited,
            zero_cells_visited: counters.zero_visited,
            clamp_events: counters.clamp_events,
        });
    }

    Ok(TrainReport {
        epochs,
        wall_time: start.elapsed(),
        objective_exact: ctx.evaluator.exact,
    })
}

fn check_shapes(
    stats: &CoocStats,
    dist: &ContextDistribution,
    model: &EmbeddingModel,
    config: &TrainConfig,
) -> Result<()> {
    if model.vocab_size() != stats.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "model covers {} ids, statistics cover {}",
            model.vocab_size(),
            stats.vocab_size()
        )));
    }
    if model.dimension() != config.dimension {
        return Err(Error::DimensionMismatch(format!(
            "model dimension {} differs from configured {}",
            model.dimension(),
            config.dimension
        )));
    }
    if dist.len() != stats.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "context distribution covers {} ids, statistics cover {}",
            dist.len(),
            stats.vocab_size()
        )));
    }
    if dist.exponent() != config.context_smoothing {
        return Err(Error::invalid(format!(
            "context distribution exponent {} differs from configured {}",
            dist.exponent(),
            config.context_smoothing
        )));
    }
    let needs_biases = config.objective == Objective::Glove && config.glove_biases;
    if model.has_biases() != needs_biases {
        return Err(Error::DimensionMismatch(
            "model bias terms do not match the configured objective".into(),
        ));
    }
    if config.mode == TrainMode::StochasticAdagrad && stats.vocab_size() >= (1usize << 31) {
        return Err(Error::invalid(
            "stochastic training supports vocabularies below 2^31 ids",
        ));
    }
    Ok(())
}

/// All non-degenerate zero-count cells, in `(word, context)` order: rows with
/// a nonzero word marginal crossed with contexts of nonzero probability,
/// minus the stored cells.
pub fn zero_cells<'a>(
    stats: &'a CoocStats,
    dist: &'a ContextDistribution,
) -> impl Iterator<Item = (u32, u32)> + 'a {
    let vocab = stats.vocab_size() as u32;
    stats.valid_words().flat_map(move |w| {
        let (row_cols, _) = stats.row(w);
        let mut at = 0usize;
        (0..vocab).filter_map(move |c| {
            while at < row_cols.len() && row_cols[at] < c {
                at += 1;
            }
            if at < row_cols.len() && row_cols[at] == c {
                return None;
            }
            if dist.prob(c) <= 0.0 {
                return None;
            }
            Some((w, c))
        })
    })
}

/// Independent Bernoulli sample of the zero cells: each is emitted with
/// probability `rate`, in deterministic `(word, context)` order for a given
/// seed. `rate = 1` yields every zero cell.
pub fn zero_cell_sampler<'a>(
    stats: &'a CoocStats,
    dist: &'a ContextDistribution,
    seed: u64,
    rate: f64,
) -> Result<impl Iterator<Item = (u32, u32)> + 'a> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!(
            "zero-cell sampling rate must lie in (0, 1], got {rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(zero_cells(stats, dist).filter(move |_| rng.random::<f64>() < rate))
}

/// Accumulate the loss gradient over an explicit set of `(word, context,
/// scale)` cells; scales are importance weights (1 for plainly-counted
/// cells). Returns the gradient and the number of clamped scores. Passing a
/// degenerate cell (or a zero cell under the log-count objective) is an
/// error.
pub fn gradient_for_cells<I>(
    stats: &CoocStats,
    dist: &ContextDistribution,
    model: &EmbeddingModel,
    config: &TrainConfig,
    cells: I,
) -> Result<(ModelGradient, u64)>
where
    I: IntoIterator<Item = (u32, u32, f64)>,
{
    config.validate()?;
    check_shapes(stats, dist, model, config)?;
    let mut grad = ModelGradient::zeros_like(model);
    let mut clamp_events = 0u64;
    let dimension = model.dimension();
    for (w, c, scale) in cells {
        if (w as usize) >= stats.vocab_size() || (c as usize) >= stats.vocab_size() {
            return Err(Error::invalid(format!(
                "cell ({w}, {c}) out of range for vocab_size {}",
                stats.vocab_size()
            )));
        }
        let n = stats.count(w, c);
        let raw_score = if model.has_biases() {
            model.score_with_biases(w, c)
        } else {
            model.score(w, c)
        };
        if !raw_score.is_finite() {
            return Err(Error::NonFiniteLoss {
                word: w,
                context: c,
                epoch: 0,
            });
        }
        let score = raw_score.clamp(-SCORE_CLAMP, SCORE_CLAMP);
        if raw_score != score {
            clamp_events += 1;
        }
        let coef = improvement_coefficient(
            config.objective,
            n,
            stats.word_marginal(w),
            dist.prob(c),
            config.negative_samples,
            score,
            &config.glove_weighting,
        )
        .ok_or(Error::DegenerateCell {
            word: w,
            context: c,
        })?;
        if !coef.is_finite() {
            return Err(Error::NonFiniteLoss {
                word: w,
                context: c,
                epoch: 0,
            });
        }
        // Loss gradient is the negated improvement direction.
        let g = -coef * scale;
        for j in 0..dimension {
            grad.word[(w as usize, j)] += g * model.context_vector(c)[j];
            grad.context[(c as usize, j)] += g * model.word_vector(w)[j];
        }
        if let (Some(wb), Some(cb)) = (&mut grad.word_bias, &mut grad.context_bias) {
            wb[w as usize] += g;
            cb[c as usize] += g;
        }
    }
    Ok((grad, clamp_events))
}

/// Exact gradient over every cell the objective is defined on.
pub fn full_batch_gradient(
    stats: &CoocStats,
    dist: &ContextDistribution,
    model: &EmbeddingModel,
    config: &TrainConfig,
) -> Result<(ModelGradient, u64)> {
    let nonzero = stats.nonzero().map(|(w, c, _)| (w, c, 1.0));
    match config.objective {
        Objective::Glove => gradient_for_cells(stats, dist, model, config, nonzero),
        _ => {
            let zeros = zero_cells(stats, dist).map(|(w, c)| (w, c, 1.0));
            gradient_for_cells(stats, dist, model, config, nonzero.chain(zeros))
        }
    }
}

/// The per-cell coefficient on the opposite vector, pointing in the
/// direction that improves the cell (ascent for the maximized logistic
/// objective, descent for the minimized losses). `None` marks a degenerate
/// cell (zero weight, or a zero count under the log-count objective).
#[inline]
fn improvement_coefficient(
    objective: Objective,
    count: u64,
    word_marginal: u64,
    context_prob: f64,
    negative_samples: f64,
    score: f64,
    weighting: &GloveWeighting,
) -> Option<f64> {
    match objective {
        Objective::SgnsLogistic | Objective::SgnsLs => {
            let negative_mass = negative_samples * word_marginal as f64 * context_prob;
            let weight = count as f64 + negative_mass;
            if !(weight > 0.0) {
                return None;
            }
            let response = if count == 0 {
                0.0
            } else {
                count as f64 / weight
            };
            Some(match objective {
                Objective::SgnsLogistic => weight * (response - sigmoid(score)),
                _ => 2.0 * weight * (response - score),
            })
        }
        Objective::Glove => {
            if count == 0 {
                return None;
            }
            let residual = (count as f64).ln() - score;
            Some(2.0 * weighting.weight(count) * residual)
        }
    }
}

// ---------------------------------------------------------------------------
// Internal training machinery.

const NONZERO_TAG: u64 = 1 << 63;
const EXACT_EVAL_CELL_LIMIT: u128 = 1_000_000;
const EVAL_SAMPLE_TARGET: f64 = 200_000.0;

const STREAM_ZERO_SAMPLE: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_EVAL: u64 = 3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent deterministic generator per (seed, purpose, epoch).
fn derived_rng(seed: u64, stream: u64, epoch: usize) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ epoch as u64);
    ChaCha8Rng::seed_from_u64(mixed)
}

struct TrainContext<'a> {
    stats: &'a CoocStats,
    dist: &'a ContextDistribution,
    config: &'a TrainConfig,
    /// Row id of each stored cell, aligned with CSR order.
    nonzero_rows: Vec<u32>,
    zero_cell_count: u64,
    rate: f64,
    evaluator: ObjectiveEvaluator,
}

impl<'a> TrainContext<'a> {
    fn build(
        stats: &'a CoocStats,
        dist: &'a ContextDistribution,
        config: &'a TrainConfig,
    ) -> Result<Self> {
        let mut nonzero_rows = Vec::with_capacity(stats.nnz());
        for w in 0..stats.vocab_size() as u32 {
            let (row_cols, _) = stats.row(w);
            nonzero_rows.extend(std::iter::repeat_n(w, row_cols.len()));
        }
        let valid_words = stats.valid_words().count() as u64;
        let valid_contexts = dist.valid_contexts().count() as u64;
        let zero_cell_count = valid_words * valid_contexts - stats.nnz() as u64;
        let rate = config.resolved_zero_rate(stats.nnz(), zero_cell_count);
        let evaluator = ObjectiveEvaluator::build(stats, dist, config, zero_cell_count)?;
        Ok(Self {
            stats,
            dist,
            config,
            nonzero_rows,
            zero_cell_count,
            rate,
            evaluator,
        })
    }

    fn visits_zero_cells(&self) -> bool {
        self.config.objective != Objective::Glove
    }
}

struct AdagradState {
    word: Vec<f64>,
    context: Vec<f64>,
    word_bias: Vec<f64>,
    context_bias: Vec<f64>,
}

impl AdagradState {
    fn for_model(model: &EmbeddingModel) -> Self {
        let total = model.vocab_size() * model.dimension();
        let bias_len = if model.has_biases() {
            model.vocab_size()
        } else {
            0
        };
        Self {
            word: vec![0.0; total],
            context: vec![0.0; total],
            word_bias: vec![0.0; bias_len],
            context_bias: vec![0.0; bias_len],
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct EpochCounters {
    nonzero_visited: u64,
    zero_visited: u64,
    clamp_events: u64,
    squared_grad_norm: f64,
}

/// Everything a visit needs besides the parameters themselves.
struct VisitParams<'a> {
    objective: Objective,
    negative_samples: f64,
    learning_rate: f64,
    epsilon: f64,
    weighting: GloveWeighting,
    dimension: usize,
    zero_scale: f64,
    stats: &'a CoocStats,
    dist: &'a ContextDistribution,
    nonzero_rows: &'a [u32],
}

impl VisitParams<'_> {
    #[inline]
    fn decode(&self, visit: u64) -> (u32, u32, u64, f64) {
        if visit & NONZERO_TAG != 0 {
            let idx = (visit & !NONZERO_TAG) as usize;
            let w = self.nonzero_rows[idx];
            let (c, n) = self.stats.entry_at(idx);
            (w, c, n, 1.0)
        } else {
            let w = (visit >> 32) as u32;
            let c = (visit & 0xFFFF_FFFF) as u32;
            (w, c, 0, self.zero_scale)
        }
    }
}

/// One stochastic AdaGrad update. Parameter slices are the full row-major
/// matrices; bias slices are empty when the model has none. Returns the
/// squared norm of the (scaled) stochastic gradient, or the offending cell
/// on a non-finite value.
#[inline]
#[allow(clippy::too_many_arguments)]
fn apply_visit(
    params: &VisitParams<'_>,
    w: u32,
    c: u32,
    count: u64,
    scale: f64,
    words: &mut [f64],
    contexts: &mut [f64],
    acc_word: &mut [f64],
    acc_context: &mut [f64],
    word_bias: &mut [f64],
    context_bias: &mut [f64],
    acc_word_bias: &mut [f64],
    acc_context_bias: &mut [f64],
    clamp_events: &mut u64,
) -> std::result::Result<f64, (u32, u32)> {
    let d = params.dimension;
    let (wi, ci) = (w as usize * d, c as usize * d);
    let word_row = &mut words[wi..wi + d];
    let context_row = &mut contexts[ci..ci + d];

    let mut raw_score = 0.0;
    for j in 0..d {
        raw_score += word_row[j] * context_row[j];
    }
    let with_biases = !word_bias.is_empty();
    if with_biases {
        raw_score += word_bias[w as usize] + context_bias[c as usize];
    }
    if !raw_score.is_finite() {
        return Err((w, c));
    }
    let score = raw_score.clamp(-SCORE_CLAMP, SCORE_CLAMP);
    if raw_score != score {
        *clamp_events += 1;
    }

    let Some(coef) = improvement_coefficient(
        params.objective,
        count,
        params.stats.word_marginal(w),
        params.dist.prob(c),
        params.negative_samples,
        score,
        &params.weighting,
    ) else {
        // Degenerate cells are excluded when visits are drawn; reaching one
        // would be a logic error upstream, not a numerical event.
        return Err((w, c));
    };
    let coef = coef * scale;
    if !coef.is_finite() {
        return Err((w, c));
    }

    let lr = params.learning_rate;
    let eps = params.epsilon;
    let mut squared_norm = 0.0;
    for j in 0..d {
        let gw = coef * context_row[j];
        let gc = coef * word_row[j];
        let aw = acc_word[wi + j] + gw * gw;
        acc_word[wi + j] = aw;
        word_row[j] += lr * gw / (aw + eps).sqrt();
        let ac = acc_context[ci + j] + gc * gc;
        acc_context[ci + j] = ac;
        context_row[j] += lr * gc / (ac + eps).sqrt();
        squared_norm += gw * gw + gc * gc;
    }
    if with_biases {
        let gb = coef;
        let aw = acc_word_bias[w as usize] + gb * gb;
        acc_word_bias[w as usize] = aw;
        word_bias[w as usize] += lr * gb / (aw + eps).sqrt();
        let ac = acc_context_bias[c as usize] + gb * gb;
        acc_context_bias[c as usize] = ac;
        context_bias[c as usize] += lr * gb / (ac + eps).sqrt();
        squared_norm += 2.0 * gb * gb;
    }
    Ok(squared_norm)
}

fn build_visits(ctx: &TrainContext<'_>, epoch: usize) -> Vec<u64> {
    let mut visits: Vec<u64> = Vec::with_capacity(
        ctx.stats.nnz()
            + if ctx.visits_zero_cells() {
                (ctx.zero_cell_count as f64 * ctx.rate * 1.05) as usize + 16
            } else {
                0
            },
    );
    visits.extend((0..ctx.stats.nnz() as u64).map(|idx| NONZERO_TAG | idx));
    if ctx.visits_zero_cells() {
        let mut rng = derived_rng(ctx.config.seed, STREAM_ZERO_SAMPLE, epoch);
        let rate = ctx.rate;
        if rate >= 1.0 {
            visits.extend(
                zero_cells(ctx.stats, ctx.dist).map(|(w, c)| ((w as u64) << 32) | c as u64),
            );
        } else {
            visits.extend(
                zero_cells(ctx.stats, ctx.dist)
                    .filter(|_| rng.random::<f64>() < rate)
                    .map(|(w, c)| ((w as u64) << 32) | c as u64),
            );
        }
    }
    let mut rng = derived_rng(ctx.config.seed, STREAM_SHUFFLE, epoch);
    visits.shuffle(&mut rng);
    visits
}

fn run_stochastic_epoch(
    ctx: &TrainContext<'_>,
    model: &mut EmbeddingModel,
    adagrad: &mut AdagradState,
    epoch: usize,
) -> Result<EpochCounters> {
    let visits = build_visits(ctx, epoch);
    let zero_scale = 1.0 / ctx.rate;
    let params = VisitParams {
        objective: ctx.config.objective,
        negative_samples: ctx.config.negative_samples,
        learning_rate: ctx.config.learning_rate,
        epsilon: ctx.config.adagrad_epsilon,
        weighting: ctx.config.glove_weighting,
        dimension: model.dimension(),
        zero_scale,
        stats: ctx.stats,
        dist: ctx.dist,
        nonzero_rows: &ctx.nonzero_rows,
    };

    let threads = ctx.config.threads.min(visits.len().max(1));
    let outcome = if threads <= 1 {
        let parts = model.parts_mut();
        run_visit_chunk(
            &params,
            &visits,
            parts.word_vectors,
            parts.context_vectors,
            &mut adagrad.word,
            &mut adagrad.context,
            parts.word_bias.unwrap_or(&mut []),
            parts.context_bias.unwrap_or(&mut []),
            &mut adagrad.word_bias,
            &mut adagrad.context_bias,
        )
    } else {
        run_visits_hogwild(&params, &visits, model, adagrad, threads)
    };

    match outcome {
        Ok(counters) => Ok(counters),
        Err((word, context)) => Err(Error::NonFiniteLoss {
            word,
            context,
            epoch,
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_visit_chunk(
    params: &VisitParams<'_>,
    visits: &[u64],
    words: &mut [f64],
    contexts: &mut [f64],
    acc_word: &mut [f64],
    acc_context: &mut [f64],
    word_bias: &mut [f64],
    context_bias: &mut [f64],
    acc_word_bias: &mut [f64],
    acc_context_bias: &mut [f64],
) -> std::result::Result<EpochCounters, (u32, u32)> {
    let mut counters = EpochCounters::default();
    for &visit in visits {
        let (w, c, count, scale) = params.decode(visit);
        if count > 0 {
            counters.nonzero_visited += 1;
        } else {
            counters.zero_visited += 1;
        }
        counters.squared_grad_norm += apply_visit(
            params,
            w,
            c,
            count,
            scale,
            words,
            contexts,
            acc_word,
            acc_context,
            word_bias,
            context_bias,
            acc_word_bias,
            acc_context_bias,
            &mut counters.clamp_events,
        )?;
    }
    Ok(counters)
}

fn run_visits_hogwild(
    params: &VisitParams<'_>,
    visits: &[u64],
    model: &mut EmbeddingModel,
    adagrad: &mut AdagradState,
    threads: usize,
) -> std::result::Result<EpochCounters, (u32, u32)> {
    let parts = model.parts_mut();
    let words = SharedSlice::new(parts.word_vectors);
    let contexts = SharedSlice::new(parts.context_vectors);
    let acc_word = SharedSlice::new(&mut adagrad.word);
    let acc_context = SharedSlice::new(&mut adagrad.context);
    let mut empty: [f64; 0] = [];
    let word_bias = SharedSlice::new(parts.word_bias.unwrap_or(&mut empty));
    let mut empty2: [f64; 0] = [];
    let context_bias = SharedSlice::new(parts.context_bias.unwrap_or(&mut empty2));
    let acc_word_bias = SharedSlice::new(&mut adagrad.word_bias);
    let acc_context_bias = SharedSlice::new(&mut adagrad.context_bias);

    let chunk_size = visits.len().div_ceil(threads);
    let results: Vec<std::result::Result<EpochCounters, (u32, u32)>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = visits
                .chunks(chunk_size)
                .map(|chunk| {
                    scope.spawn(move || {
                        // Racy by contract: see the hogwild module docs.
                        unsafe {
                            run_visit_chunk(
                                params,
                                chunk,
                                words.slice(),
                                contexts.slice(),
                                acc_word.slice(),
                                acc_context.slice(),
                                word_bias.slice(),
                                context_bias.slice(),
                                acc_word_bias.slice(),
                                acc_context_bias.slice(),
                            )
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

    let mut total = EpochCounters::default();
    for result in results {
        let c = result?;
        total.nonzero_visited += c.nonzero_visited;
        total.zero_visited += c.zero_visited;
        total.clamp_events += c.clamp_events;
        total.squared_grad_norm += c.squared_grad_norm;
    }
    Ok(total)
}

fn run_full_batch_epoch(
    ctx: &TrainContext<'_>,
    model: &mut EmbeddingModel,
    epoch: usize,
) -> Result<EpochCounters> {
    let (grad, clamp_events) = full_batch_gradient(ctx.stats, ctx.dist, model, ctx.config)
        .map_err(|e| match e {
            Error::NonFiniteLoss { word, context, .. } => Error::NonFiniteLoss {
                word,
                context,
                epoch,
            },
            other => other,
        })?;
    let lr = ctx.config.learning_rate;
    // Plain gradient step, no AdaGrad scaling: the exact mode is meant for
    // verification, where the unmodified descent/ascent direction matters.
    {
        let parts = model.parts_mut();
        let gw = grad.word.as_slice().expect("contiguous");
        let gc = grad.context.as_slice().expect("contiguous");
        for (p, g) in parts.word_vectors.iter_mut().zip(gw) {
            *p -= lr * g;
        }
        for (p, g) in parts.context_vectors.iter_mut().zip(gc) {
            *p -= lr * g;
        }
        if let (Some(bias), Some(g)) = (parts.word_bias, &grad.word_bias) {
            for (p, g) in bias.iter_mut().zip(g.iter()) {
                *p -= lr * g;
            }
        }
        if let (Some(bias), Some(g)) = (parts.context_bias, &grad.context_bias) {
            for (p, g) in bias.iter_mut().zip(g.iter()) {
                *p -= lr * g;
            }
        }
    }
    Ok(EpochCounters {
        nonzero_visited: ctx.stats.nnz() as u64,
        zero_visited: if ctx.visits_zero_cells() {
            ctx.zero_cell_count
        } else {
            0
        },
        clamp_events,
        squared_grad_norm: {
            let n = grad.norm();
            n * n
        },
    })
}

/// Per-epoch objective reporting: exact when the non-degenerate cell count
/// is small enough, otherwise exact over stored cells plus an unbiased
/// estimate of the zero-cell mass from one fixed sample (drawn once per run,
/// so successive epochs are comparable).
struct ObjectiveEvaluator {
    exact: bool,
    zero_sample: Vec<(u32, u32)>,
    inv_inclusion: f64,
}

impl ObjectiveEvaluator {
    fn build(
        stats: &CoocStats,
        dist: &ContextDistribution,
        config: &TrainConfig,
        zero_cell_count: u64,
    ) -> Result<Self> {
        if config.objective == Objective::Glove {
            // Defined on stored cells only; summing them is always exact.
            return Ok(Self {
                exact: true,
                zero_sample: Vec::new(),
                inv_inclusion: 1.0,
            });
        }
        let cells = stats.nnz() as u128 + zero_cell_count as u128;
        if cells <= EXACT_EVAL_CELL_LIMIT {
            return Ok(Self {
                exact: true,
                zero_sample: Vec::new(),
                inv_inclusion: 1.0,
            });
        }
        let inclusion = (EVAL_SAMPLE_TARGET / zero_cell_count as f64).min(1.0);
        let mut rng = derived_rng(config.seed, STREAM_EVAL, 0);
        let zero_sample: Vec<(u32, u32)> = zero_cells(stats, dist)
            .filter(|_| rng.random::<f64>() < inclusion)
            .collect();
        Ok(Self {
            exact: false,
            zero_sample,
            inv_inclusion: 1.0 / inclusion,
        })
    }

    fn eval(&self, ctx: &TrainContext<'_>, model: &EmbeddingModel, epoch: usize) -> Result<f64> {
        let value = if self.exact {
            total_objective(
                ctx.stats,
                ctx.dist,
                ctx.config.negative_samples,
                model,
                ctx.config.objective,
                &ctx.config.glove_weighting,
            )
            // Every static input was validated up front, so an error here can
            // only mean the model's scores left the finite range; fall through
            // to the diagnostic below, which names the offending cell.
            .unwrap_or(f64::NAN)
        } else {
            self.sampled_estimate(ctx, model)
        };
        if !value.is_finite() {
            let (word, context) = self
                .find_non_finite_cell(ctx, model)
                .unwrap_or((u32::MAX, u32::MAX));
            return Err(Error::NonFiniteLoss {
                word,
                context,
                epoch,
            });
        }
        Ok(value)
    }

    fn sampled_estimate(&self, ctx: &TrainContext<'_>, model: &EmbeddingModel) -> f64 {
        let k = ctx.config.negative_samples;
        let ls = ctx.config.objective == Objective::SgnsLs;
        let mut total = CompensatedSum::new();
        for (w, c, n) in ctx.stats.nonzero() {
            let negative_mass = k * ctx.stats.word_marginal(w) as f64 * ctx.dist.prob(c);
            let weight = n as f64 + negative_mass;
            let response = n as f64 / weight;
            let score = model.score(w, c);
            total.add(cell_value(ls, response, weight, score));
        }
        let mut zero_mass = CompensatedSum::new();
        for &(w, c) in &self.zero_sample {
            let weight = k * ctx.stats.word_marginal(w) as f64 * ctx.dist.prob(c);
            let score = model.score(w, c);
            zero_mass.add(cell_value(ls, 0.0, weight, score));
        }
        total.add(zero_mass.value() * self.inv_inclusion);
        total.value()
    }

    /// Slow diagnostic pass run only after a non-finite total: finds a cell
    /// whose value is non-finite so the error can name it.
    fn find_non_finite_cell(
        &self,
        ctx: &TrainContext<'_>,
        model: &EmbeddingModel,
    ) -> Option<(u32, u32)> {
        let k = ctx.config.negative_samples;
        let ls = ctx.config.objective == Objective::SgnsLs;
        for (w, c, n) in ctx.stats.nonzero() {
            let score = if model.has_biases() {
                model.score_with_biases(w, c)
            } else {
                model.score(w, c)
            };
            let value = match ctx.config.objective {
                Objective::Glove => {
                    let r = (n as f64).ln() - score;
                    ctx.config.glove_weighting.weight(n) * r * r
                }
                _ => {
                    let negative_mass = k * ctx.stats.word_marginal(w) as f64 * ctx.dist.prob(c);
                    let weight = n as f64 + negative_mass;
                    cell_value(ls, n as f64 / weight, weight, score)
                }
            };
            if !value.is_finite() {
                return Some((w, c));
            }
        }
        if ctx.config.objective != Objective::Glove {
            for (w, c) in zero_cells(ctx.stats, ctx.dist) {
                let weight = k * ctx.stats.word_marginal(w) as f64 * ctx.dist.prob(c);
                if !cell_value(ls, 0.0, weight, model.score(w, c)).is_finite() {
                    return Some((w, c));
                }
            }
        }
        None
    }
}

#[inline]
fn cell_value(least_squares: bool, response: f64, weight: f64, score: f64) -> f64 {
    if least_squares {
        let r = response - score;
        weight * r * r
    } else if score > 0.0 {
        weight * (score * (response - 1.0) - (-score).exp().ln_1p())
    } else {
        weight * (response * score - score.exp().ln_1p())
    }
}
