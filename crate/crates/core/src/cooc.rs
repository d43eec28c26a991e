//! Sparse co-occurrence statistics and the quantities derived from them:
//! marginals, the (optionally smoothed) context distribution, per-cell
//! responses and weights, and pointwise mutual information.
//!
//! Everything downstream — objectives, training, the identity checks — reads
//! from [`CoocStats`]. Counts are stored CSR-style sorted by `(word,
//! context)`, so iteration order is always deterministic.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::corpus::PairCounts;
use crate::error::{Error, Result};
use crate::util::{atomic_write, io_at, CompensatedSum};

/// Magic prefix of the binary co-occurrence format.
pub const COOC_MAGIC: &[u8; 4] = b"LXF1";

/// Sparse co-occurrence counts with precomputed marginals.
///
/// Invariants, established at construction and re-verified when loading from
/// disk: stored cells have `count >= 1`; `word_marginal(w)` is the sum of row
/// `w`; `context_marginal(c)` the sum of column `c`; and `total()` — the
/// number of pair observations — equals the sum of all cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoocStats {
    vocab_size: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    cell_counts: Vec<u64>,
    word_marginals: Vec<u64>,
    context_marginals: Vec<u64>,
    total: u64,
}

impl CoocStats {
    /// Aggregate extracted pair counts into sorted sparse form.
    pub fn from_pairs(pairs: &PairCounts) -> Result<Self> {
        Self::from_entries(pairs.vocab_size(), pairs.iter())
    }

    /// Build from raw `(word, context, count)` entries. Duplicate cells are
    /// summed. Fails on out-of-range ids, zero counts, or no entries at all.
    pub fn from_entries<I>(vocab_size: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32, u64)>,
    {
        let mut items: Vec<(u32, u32, u64)> = entries.into_iter().collect();
        if items.is_empty() {
            return Err(Error::EmptyCooc);
        }
        if vocab_size == 0 || vocab_size > u32::MAX as usize {
            return Err(Error::invalid("vocab_size out of range"));
        }
        items.sort_unstable_by_key(|&(w, c, _)| (w, c));

        let mut row_ptr = vec![0usize; vocab_size + 1];
        let mut cols = Vec::with_capacity(items.len());
        let mut cell_counts: Vec<u64> = Vec::with_capacity(items.len());
        let mut word_marginals = vec![0u64; vocab_size];
        let mut context_marginals = vec![0u64; vocab_size];
        let mut total = 0u64;
        let mut prev: Option<(u32, u32)> = None;

        for &(w, c, n) in &items {
            if (w as usize) >= vocab_size || (c as usize) >= vocab_size {
                return Err(Error::invalid(format!(
                    "cell ({w}, {c}) out of range for vocab_size {vocab_size}"
                )));
            }
            if n == 0 {
                return Err(Error::invalid(format!(
                    "cell ({w}, {c}) has zero count; zero cells are implicit"
                )));
            }
            if prev == Some((w, c)) {
                // duplicate of the previous entry after sorting: fold it in
                *cell_counts.last_mut().unwrap() += n;
            } else {
                cols.push(c);
                cell_counts.push(n);
                row_ptr[w as usize + 1] = cols.len();
                prev = Some((w, c));
            }
            word_marginals[w as usize] += n;
            context_marginals[c as usize] += n;
            total += n;
        }
        // row_ptr so far only marks rows that appeared; make it cumulative.
        for w in 0..vocab_size {
            if row_ptr[w + 1] < row_ptr[w] {
                row_ptr[w + 1] = row_ptr[w];
            }
        }

        Ok(Self {
            vocab_size,
            row_ptr,
            cols,
            cell_counts,
            word_marginals,
            context_marginals,
            total,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of stored (nonzero) cells.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Total number of pair observations, i.e. the sum over all cells.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn word_marginal(&self, word: u32) -> u64 {
        self.word_marginals[word as usize]
    }

    pub fn context_marginal(&self, context: u32) -> u64 {
        self.context_marginals[context as usize]
    }

    /// Count for one cell; zero when the pair was never observed.
    pub fn count(&self, word: u32, context: u32) -> u64 {
        let (cols, counts) = self.row(word);
        match cols.binary_search(&context) {
            Ok(i) => counts[i],
            Err(_) => 0,
        }
    }

    /// Column ids and counts of one row, sorted by column.
    pub fn row(&self, word: u32) -> (&[u32], &[u64]) {
        let lo = self.row_ptr[word as usize];
        let hi = self.row_ptr[word as usize + 1];
        (&self.cols[lo..hi], &self.cell_counts[lo..hi])
    }

    /// Context id and count of the stored cell at a flat index in
    /// `(word, context)` order. Used by trainers that shuffle cell indices.
    pub(crate) fn entry_at(&self, index: usize) -> (u32, u64) {
        (self.cols[index], self.cell_counts[index])
    }

    /// All stored cells in `(word, context)` order.
    pub fn nonzero(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        (0..self.vocab_size as u32).flat_map(move |w| {
            let (cols, counts) = self.row(w);
            cols.iter().zip(counts).map(move |(&c, &n)| (w, c, n))
        })
    }

    /// Ids that occur at all as words (nonzero row sum).
    pub fn valid_words(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.vocab_size as u32).filter(move |&w| self.word_marginals[w as usize] > 0)
    }

    /// Write the binary format: `LXF1` magic, vocab size (u32), nnz (u64),
    /// total (u64), then one `(u32 word, u32 context, u64 count)` record per
    /// stored cell in `(word, context)` order. All integers little-endian.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            w.write_all(COOC_MAGIC)?;
            w.write_all(&(self.vocab_size as u32).to_le_bytes())?;
            w.write_all(&(self.nnz() as u64).to_le_bytes())?;
            w.write_all(&self.total.to_le_bytes())?;
            for (word, context, count) in self.nonzero() {
                w.write_all(&word.to_le_bytes())?;
                w.write_all(&context.to_le_bytes())?;
                w.write_all(&count.to_le_bytes())?;
            }
            Ok(())
        })
        .map_err(|e| io_at(path, e).into())
    }

    /// Read the binary format, re-deriving marginals from the records and
    /// verifying them against the recorded total.
    pub fn read_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| io_at(path, e))?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic).map_err(|e| io_at(path, e))?;
        if &magic != COOC_MAGIC {
            return Err(Error::malformed(
                path,
                "bad magic, not a co-occurrence file",
            ));
        }
        let vocab_size = read_u32(&mut reader, path)? as usize;
        let nnz = read_u64(&mut reader, path)?;
        let total = read_u64(&mut reader, path)?;
        if nnz == 0 {
            return Err(Error::malformed(path, "no stored cells"));
        }
        if vocab_size == 0 {
            return Err(Error::malformed(path, "vocab_size is zero"));
        }
        if (nnz as u128) > (vocab_size as u128) * (vocab_size as u128) {
            return Err(Error::malformed(path, "nnz exceeds vocab_size^2"));
        }

        let mut entries = Vec::with_capacity(nnz as usize);
        let mut prev: Option<(u32, u32)> = None;
        for _ in 0..nnz {
            let w = read_u32(&mut reader, path)?;
            let c = read_u32(&mut reader, path)?;
            let n = read_u64(&mut reader, path)?;
            if let Some(p) = prev {
                if p >= (w, c) {
                    return Err(Error::malformed(
                        path,
                        "records not strictly sorted by (word, context)",
                    ));
                }
            }
            prev = Some((w, c));
            entries.push((w, c, n));
        }
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing).map_err(|e| io_at(path, e))? != 0 {
            return Err(Error::malformed(path, "trailing bytes after records"));
        }

        let stats = Self::from_entries(vocab_size, entries).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::malformed(path, msg),
            other => other,
        })?;
        if stats.total != total {
            return Err(Error::malformed(
                path,
                format!(
                    "recorded total {total} does not match sum of cells {}",
                    stats.total
                ),
            ));
        }
        Ok(stats)
    }

    /// Write the debug TSV form: `word<TAB>context<TAB>count` per stored
    /// cell, ids in `(word, context)` order.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            for (word, context, count) in self.nonzero() {
                writeln!(w, "{word}\t{context}\t{count}")?;
            }
            Ok(())
        })
        .map_err(|e| io_at(path, e).into())
    }

    /// Read the debug TSV form. `vocab_size` is inferred as one past the
    /// largest id unless given explicitly.
    pub fn read_tsv(path: &Path, vocab_size: Option<usize>) -> Result<Self> {
        let file = File::open(path).map_err(|e| io_at(path, e))?;
        let reader = BufReader::new(file);
        let mut entries = Vec::new();
        let mut max_id = 0u32;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| io_at(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let parsed = (|| -> Option<(u32, u32, u64)> {
                let w = fields.next()?.parse().ok()?;
                let c = fields.next()?.parse().ok()?;
                let n = fields.next()?.parse().ok()?;
                if fields.next().is_some() {
                    return None;
                }
                Some((w, c, n))
            })();
            let Some((w, c, n)) = parsed else {
                return Err(Error::malformed(
                    path,
                    format!("line {}: expected `word<TAB>context<TAB>count`", lineno + 1),
                ));
            };
            max_id = max_id.max(w).max(c);
            entries.push((w, c, n));
        }
        let inferred = vocab_size.unwrap_or(max_id as usize + 1);
        Self::from_entries(inferred, entries).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::malformed(path, msg),
            other => other,
        })
    }
}

fn read_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|e| io_at(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(reader: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf).map_err(|e| io_at(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

/// Distribution over contexts used for negative weighting.
///
/// With exponent 1 this is exactly `context_marginal(c) / total()`. The
/// word2vec-style smoothed variant raises marginals to a power in (0, 1)
/// before normalizing, which shifts mass toward rare contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextDistribution {
    probs: Vec<f64>,
    exponent: f64,
}

impl ContextDistribution {
    pub fn prob(&self, context: u32) -> f64 {
        self.probs[context as usize]
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Ids with nonzero probability, i.e. ids that occur as contexts.
    pub fn valid_contexts(&self) -> impl Iterator<Item = u32> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, _)| c as u32)
    }
}

/// Normalized context distribution with marginals raised to `exponent`.
///
/// `exponent = 1` uses exact count ratios (required by the logit/PMI
/// identity); `0.75` is the common smoothed choice.
pub fn context_distribution(stats: &CoocStats, exponent: f64) -> Result<ContextDistribution> {
    if !(exponent > 0.0) || !exponent.is_finite() {
        return Err(Error::invalid(format!(
            "context distribution exponent must be positive and finite, got {exponent}"
        )));
    }
    // CoocStats always holds at least one cell, so some marginal is nonzero;
    // guard anyway so a future constructor cannot break normalization.
    if stats.total() == 0 {
        return Err(Error::invalid("all context marginals are zero"));
    }
    let probs = if exponent == 1.0 {
        let total = stats.total() as f64;
        (0..stats.vocab_size() as u32)
            .map(|c| stats.context_marginal(c) as f64 / total)
            .collect()
    } else {
        let powered: Vec<f64> = (0..stats.vocab_size() as u32)
            .map(|c| (stats.context_marginal(c) as f64).powf(exponent))
            .collect();
        let norm: CompensatedSum = powered.iter().copied().collect();
        let norm = norm.value();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("context distribution failed to normalize"));
        }
        powered.into_iter().map(|p| p / norm).collect()
    };
    Ok(ContextDistribution { probs, exponent })
}

/// One cell of the weighted logistic factorization problem.
///
/// For a cell with count `n`, word marginal `n_w`, and negative mass
/// `t = negative_samples * n_w * P(context)`:
///
/// * `response  = n / (n + t)` — the fraction of observations at this cell
///   that are positive rather than sampled negatives,
/// * `weight    = n + t` — how many observations inform the cell.
///
/// `response` is zero iff the raw count is zero, and the weight is strictly
/// positive (zero-weight cells are rejected as degenerate at construction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellProblem {
    pub word: u32,
    pub context: u32,
    /// Raw co-occurrence count `n`.
    pub count: u64,
    /// Negative mass `t`: expected number of sampled negatives at this cell.
    pub negative_mass: f64,
    /// Target in [0, 1] the factorization tries to match through a sigmoid.
    pub response: f64,
    /// Observation weight `n + t`, strictly positive.
    pub weight: f64,
}

impl CellProblem {
    /// Log-odds of the response: the score a saturated model would assign.
    ///
    /// Computed from the raw count and negative mass rather than from
    /// `response` itself, so values survive `response -> 1` without the
    /// cancellation in `ln(x / (1 - x))`. Zero-count cells give `-inf`
    /// (an explicit sentinel, never NaN).
    pub fn logit(&self) -> f64 {
        logit_from_masses(self.count, self.negative_mass)
    }
}

pub(crate) fn logit_from_masses(count: u64, negative_mass: f64) -> f64 {
    if count == 0 {
        return f64::NEG_INFINITY;
    }
    let n = count as f64;
    let denom = n + negative_mass;
    (n / denom).ln() - (negative_mass / denom).ln()
}

/// Assemble the factorization problem for one cell.
///
/// `negative_samples` is the negative-to-positive sampling ratio; any
/// non-negative real is accepted (integrality is never required). Cells in a
/// row with zero word marginal, or a column with zero context probability,
/// have zero weight and are rejected as [`Error::DegenerateCell`] — as is any
/// zero-count cell when `negative_samples` is zero.
pub fn cell_problem(
    stats: &CoocStats,
    dist: &ContextDistribution,
    word: u32,
    context: u32,
    negative_samples: f64,
) -> Result<CellProblem> {
    if (word as usize) >= stats.vocab_size() || (context as usize) >= stats.vocab_size() {
        return Err(Error::invalid(format!(
            "cell ({word}, {context}) out of range for vocab_size {}",
            stats.vocab_size()
        )));
    }
    if dist.len() != stats.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "context distribution covers {} ids, stats cover {}",
            dist.len(),
            stats.vocab_size()
        )));
    }
    if !(negative_samples >= 0.0) || !negative_samples.is_finite() {
        return Err(Error::invalid(format!(
            "negative_samples must be a non-negative finite real, got {negative_samples}"
        )));
    }
    let count = stats.count(word, context);
    let word_marginal = stats.word_marginal(word) as f64;
    let negative_mass = negative_samples * word_marginal * dist.prob(context);
    let weight = count as f64 + negative_mass;
    if !(weight > 0.0) {
        return Err(Error::DegenerateCell { word, context });
    }
    let response = if count == 0 {
        0.0
    } else {
        count as f64 / weight
    };
    Ok(CellProblem {
        word,
        context,
        count,
        negative_mass,
        response,
        weight,
    })
}

/// Pointwise mutual information `ln(n * total / (n_w * n_c))`.
///
/// Unobserved pairs give `-inf`; a zero marginal means PMI is undefined for
/// every cell in that row/column and is reported as a degenerate cell.
pub fn pmi(stats: &CoocStats, word: u32, context: u32) -> Result<f64> {
    if (word as usize) >= stats.vocab_size() || (context as usize) >= stats.vocab_size() {
        return Err(Error::invalid(format!(
            "cell ({word}, {context}) out of range for vocab_size {}",
            stats.vocab_size()
        )));
    }
    let n_w = stats.word_marginal(word);
    let n_c = stats.context_marginal(context);
    if n_w == 0 || n_c == 0 {
        return Err(Error::DegenerateCell { word, context });
    }
    let n = stats.count(word, context);
    if n == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(((n as f64 * stats.total() as f64) / (n_w as f64 * n_c as f64)).ln())
}

/// Dense matrix of saturated scores: `logit(response)` per cell.
///
/// With exponent 1 this equals `PMI - ln(negative_samples)` cell for cell;
/// with a smoothed exponent the same construction applies with the smoothed
/// context probability in place of `n_c / total` (a labeled extension of the
/// printed identity, not the identity itself). Cells with zero count — and
/// cells in degenerate rows or columns — hold `-inf`.
///
/// Materializes `vocab_size^2` floats; meant for desk-scale vocabularies.
pub fn shifted_pmi_matrix(
    stats: &CoocStats,
    dist: &ContextDistribution,
    negative_samples: f64,
) -> Result<Array2<f64>> {
    validate_shift(negative_samples)?;
    if dist.len() != stats.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "context distribution covers {} ids, stats cover {}",
            dist.len(),
            stats.vocab_size()
        )));
    }
    let v = stats.vocab_size();
    let mut m = Array2::from_elem((v, v), f64::NEG_INFINITY);
    for (w, c, n) in stats.nonzero() {
        let negative_mass = negative_samples * stats.word_marginal(w) as f64 * dist.prob(c);
        m[(w as usize, c as usize)] = logit_from_masses(n, negative_mass);
    }
    Ok(m)
}

/// Sparse variant of [`shifted_pmi_matrix`]: saturated scores for stored
/// cells only, in `(word, context)` order.
pub fn shifted_pmi_entries<'a>(
    stats: &'a CoocStats,
    dist: &'a ContextDistribution,
    negative_samples: f64,
) -> Result<impl Iterator<Item = (u32, u32, f64)> + 'a> {
    validate_shift(negative_samples)?;
    if dist.len() != stats.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "context distribution covers {} ids, stats cover {}",
            dist.len(),
            stats.vocab_size()
        )));
    }
    Ok(stats.nonzero().map(move |(w, c, n)| {
        let negative_mass = negative_samples * stats.word_marginal(w) as f64 * dist.prob(c);
        (w, c, logit_from_masses(n, negative_mass))
    }))
}

fn validate_shift(negative_samples: f64) -> Result<()> {
    if !(negative_samples > 0.0) || !negative_samples.is_finite() {
        return Err(Error::invalid(format!(
            "negative_samples must be positive and finite, got {negative_samples}"
        )));
    }
    Ok(())
}
