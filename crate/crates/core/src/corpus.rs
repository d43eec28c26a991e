//! Corpus ingestion: vocabulary construction and sliding-window pair counting.
//!
//! Tokenization is whitespace splitting with optional lowercasing. Word and
//! context vocabularies are shared. Out-of-vocabulary tokens are removed from
//! the stream *before* windowing, so surviving tokens become adjacent — the
//! standard word2vec-style treatment.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::thread;

use crate::error::{Error, Result};
use crate::util::{atomic_write, io_at};

/// How raw text becomes tokens.
#[derive(Debug, Clone)]
pub struct TokenizeOptions {
    /// Lowercase tokens before counting. On by default.
    pub lowercase: bool,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

/// Bidirectional token/id map with corpus frequencies.
///
/// Ids are dense and zero-based, assigned in descending frequency order with
/// ties broken by first occurrence in the corpus. An empty vocabulary (every
/// token filtered out) is representable; operations that need a non-empty
/// vocabulary fail at their own call sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    counts: Vec<u64>,
}

impl Vocabulary {
    fn from_ordered(entries: Vec<(String, u64)>) -> Self {
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut ids = HashMap::with_capacity(entries.len());
        for (id, (token, count)) in entries.into_iter().enumerate() {
            ids.insert(token.clone(), id as u32);
            tokens.push(token);
            counts.push(count);
        }
        Self {
            tokens,
            ids,
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    /// Iterate `(id, token, count)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &str, u64)> + '_ {
        self.tokens
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(id, (token, count))| (id as u32, token.as_str(), *count))
    }

    /// Write as TSV, one `token<TAB>count<TAB>id` row per entry, in id order.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            for (id, token, count) in self.iter() {
                writeln!(w, "{token}\t{count}\t{id}")?;
            }
            Ok(())
        })
        .map_err(|e| io_at(path, e).into())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| io_at(path, e))?;
        let reader = BufReader::new(file);
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| io_at(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (token, count, id) = match (fields.next(), fields.next(), fields.next()) {
                (Some(t), Some(c), Some(i)) if fields.next().is_none() => (t, c, i),
                _ => {
                    return Err(Error::malformed(
                        path,
                        format!("line {}: expected 3 tab-separated fields", lineno + 1),
                    ))
                }
            };
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::malformed(
                    path,
                    format!("line {}: invalid token", lineno + 1),
                ));
            }
            let count: u64 = count.parse().map_err(|_| {
                Error::malformed(path, format!("line {}: bad count `{count}`", lineno + 1))
            })?;
            let id: u32 = id.parse().map_err(|_| {
                Error::malformed(path, format!("line {}: bad id `{id}`", lineno + 1))
            })?;
            if id as usize != entries.len() {
                return Err(Error::malformed(
                    path,
                    format!("line {}: ids must be dense and in order", lineno + 1),
                ));
            }
            if seen.insert(token.to_string(), id).is_some() {
                return Err(Error::malformed(
                    path,
                    format!("line {}: duplicate token `{token}`", lineno + 1),
                ));
            }
            entries.push((token.to_string(), count));
        }
        Ok(Self::from_ordered(entries))
    }
}

/// Streaming vocabulary accumulator. Feed tokens with [`VocabBuilder::push`],
/// then call [`VocabBuilder::finish`].
pub struct VocabBuilder {
    counts: HashMap<String, (u64, usize)>,
    total_tokens: u64,
    min_count: u64,
    max_vocab: Option<usize>,
}

impl VocabBuilder {
    pub fn new(min_count: u64, max_vocab: Option<usize>) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::invalid("min_count must be at least 1"));
        }
        if max_vocab == Some(0) {
            return Err(Error::invalid("max_vocab must be at least 1 when set"));
        }
        Ok(Self {
            counts: HashMap::new(),
            total_tokens: 0,
            min_count,
            max_vocab,
        })
    }

    /// Count one token. Tokens are single whitespace-free words; anything
    /// containing whitespace (or nothing at all) is rejected here so that
    /// downstream TSV formats never need escaping.
    pub fn push(&mut self, token: &str) -> Result<()> {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "token {token:?} is empty or contains whitespace"
            )));
        }
        let next_index = self.counts.len();
        match self.counts.get_mut(token) {
            Some(entry) => entry.0 += 1,
            None => {
                self.counts.insert(token.to_string(), (1, next_index));
            }
        }
        self.total_tokens += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<Vocabulary> {
        if self.total_tokens == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut survivors: Vec<(String, u64, usize)> = self
            .counts
            .into_iter()
            .filter(|(_, (count, _))| *count >= self.min_count)
            .map(|(token, (count, first))| (token, count, first))
            .collect();
        // Descending frequency; ties broken by first occurrence.
        survivors.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        if let Some(cap) = self.max_vocab {
            survivors.truncate(cap);
        }
        if survivors.len() > u32::MAX as usize {
            return Err(Error::invalid("vocabulary exceeds u32 id space"));
        }
        Ok(Vocabulary::from_ordered(
            survivors.into_iter().map(|(t, c, _)| (t, c)).collect(),
        ))
    }
}

/// Build a vocabulary from an in-memory token stream.
pub fn build_vocab<I, S>(tokens: I, min_count: u64, max_vocab: Option<usize>) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut builder = VocabBuilder::new(min_count, max_vocab)?;
    for token in tokens {
        builder.push(token.as_ref())?;
    }
    builder.finish()
}

/// Aggregated co-occurrence pair counts from one or more corpus shards.
///
/// `total()` is the number of pair observations — every `(word, context)`
/// emission counts once, so the grand total equals the sum over all cells.
#[derive(Debug, Clone)]
pub struct PairCounts {
    counts: HashMap<(u32, u32), u64>,
    total: u64,
    vocab_size: usize,
    window: usize,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of distinct pairs with a nonzero count.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, word: u32, context: u32) -> u64 {
        self.counts.get(&(word, context)).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        self.counts.iter().map(|(&(w, c), &n)| (w, c, n))
    }

    /// Merge counts from another shard by summation. Shards must have been
    /// extracted against the same vocabulary and window.
    pub fn merge(&mut self, other: PairCounts) -> Result<()> {
        if self.vocab_size != other.vocab_size || self.window != other.window {
            return Err(Error::invalid(
                "cannot merge pair counts from different vocabularies or windows",
            ));
        }
        for (pair, n) in other.counts {
            *self.counts.entry(pair).or_insert(0) += n;
        }
        self.total += other.total;
        Ok(())
    }
}

/// Streaming symmetric-window pair counter.
///
/// Push tokens one at a time; out-of-vocabulary tokens are dropped before
/// windowing. Each surviving token co-occurs with up to `window` in-vocabulary
/// predecessors, and every such encounter is counted in both directions with
/// unit weight (no distance discount).
pub struct PairExtractor<'a> {
    vocab: &'a Vocabulary,
    window: usize,
    recent: VecDeque<u32>,
    counts: HashMap<(u32, u32), u64>,
    total: u64,
}

impl<'a> PairExtractor<'a> {
    pub fn new(vocab: &'a Vocabulary, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        Ok(Self {
            vocab,
            window,
            recent: VecDeque::with_capacity(window),
            counts: HashMap::new(),
            total: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, token: &str) {
        let Some(id) = self.vocab.id(token) else {
            return; // OOV tokens vanish before windowing
        };
        for &prev in &self.recent {
            *self.counts.entry((prev, id)).or_insert(0) += 1;
            *self.counts.entry((id, prev)).or_insert(0) += 1;
            self.total += 2;
        }
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(id);
    }

    /// End the current token sequence: windows never span a boundary created
    /// here. Used between independent shards (e.g. separate input files).
    pub fn break_sequence(&mut self) {
        self.recent.clear();
    }

    pub fn finish(self) -> PairCounts {
        PairCounts {
            counts: self.counts,
            total: self.total,
            vocab_size: self.vocab.len(),
            window: self.window,
        }
    }
}

/// Count symmetric-window pairs over an in-memory token stream.
///
/// A stream with fewer than two in-vocabulary tokens yields empty counts —
/// not an error at this stage.
pub fn extract_pairs<I, S>(tokens: I, vocab: &Vocabulary, window: usize) -> Result<PairCounts>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut extractor = PairExtractor::new(vocab, window)?;
    for token in tokens {
        extractor.push(token.as_ref());
    }
    Ok(extractor.finish())
}

fn for_each_file_token<F>(path: &Path, options: &TokenizeOptions, mut f: F) -> Result<()>
where
    F: FnMut(&str) -> Result<()>,
{
    let file = File::open(path).map_err(|e| io_at(path, e))?;
    let reader = BufReader::new(file);
    let mut lowered = String::new();
    for line in reader.lines() {
        let line = line.map_err(|e| io_at(path, e))?;
        for token in line.split_whitespace() {
            if options.lowercase && token.chars().any(char::is_uppercase) {
                lowered.clear();
                for ch in token.chars().flat_map(char::to_lowercase) {
                    lowered.push(ch);
                }
                f(&lowered)?;
            } else {
                f(token)?;
            }
        }
    }
    Ok(())
}

/// First corpus pass: count token frequencies across all input files.
pub fn build_vocab_from_files(
    paths: &[PathBuf],
    options: &TokenizeOptions,
    min_count: u64,
    max_vocab: Option<usize>,
) -> Result<Vocabulary> {
    let mut builder = VocabBuilder::new(min_count, max_vocab)?;
    for path in paths {
        for_each_file_token(path, options, |token| builder.push(token))?;
    }
    builder.finish()
}

/// Second corpus pass: count co-occurrence pairs across all input files.
///
/// Each file is an independent shard — windows do not cross file boundaries —
/// which makes the result identical whether shards are processed sequentially
/// or in parallel. With `threads > 1`, files are distributed across that many
/// workers and the per-shard counts merged by summation.
pub fn extract_pairs_from_files(
    paths: &[PathBuf],
    vocab: &Vocabulary,
    window: usize,
    options: &TokenizeOptions,
    threads: usize,
) -> Result<PairCounts> {
    if paths.is_empty() {
        return Err(Error::invalid("no input files"));
    }
    let workers = threads.clamp(1, paths.len());
    if workers == 1 {
        let mut extractor = PairExtractor::new(vocab, window)?;
        for path in paths {
            for_each_file_token(path, options, |token| {
                extractor.push(token);
                Ok(())
            })?;
            extractor.break_sequence();
        }
        return Ok(extractor.finish());
    }

    // Validate the window once up front so workers cannot fail on it.
    PairExtractor::new(vocab, window)?;
    let shards: Vec<Result<PairCounts>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|worker| {
                let options = options.clone();
                scope.spawn(move || -> Result<PairCounts> {
                    let mut extractor = PairExtractor::new(vocab, window)?;
                    for path in paths.iter().skip(worker).step_by(workers) {
                        for_each_file_token(path, &options, |token| {
                            extractor.push(token);
                            Ok(())
                        })?;
                        extractor.break_sequence();
                    }
                    Ok(extractor.finish())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut merged: Option<PairCounts> = None;
    for shard in shards {
        let shard = shard?;
        match &mut merged {
            Some(acc) => acc.merge(shard)?,
            None => merged = Some(shard),
        }
    }
    Ok(merged.expect("at least one worker"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(text: &str, min_count: u64) -> Vocabulary {
        build_vocab(text.split_whitespace(), min_count, None).unwrap()
    }

    #[test]
    fn vocab_orders_by_frequency_then_first_occurrence() {
        let v = vocab_of("c b c a b c", 1);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("c"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.count(0), Some(3));
        let v = vocab_of("b a a b", 1);
        assert_eq!(v.id("b"), Some(0), "tie broken by first occurrence");
        assert_eq!(v.id("a"), Some(1));
    }

    #[test]
    fn vocab_min_count_can_empty_the_vocabulary() {
        let v = vocab_of("a b a b", 3);
        assert!(v.is_empty());
    }

    #[test]
    fn vocab_rejects_empty_stream() {
        let err = build_vocab(std::iter::empty::<&str>(), 1, None).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn vocab_validates_arguments() {
        assert!(matches!(
            build_vocab(["a"], 0, None).unwrap_err(),
            Error::InvalidArgument(_)
        ));
        assert!(matches!(
            build_vocab(["a"], 1, Some(0)).unwrap_err(),
            Error::InvalidArgument(_)
        ));
        assert!(matches!(
            build_vocab(["a b"], 1, None).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn vocab_max_vocab_keeps_most_frequent() {
        let v = build_vocab("c c c b b a".split_whitespace(), 1, Some(2)).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.id("c"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.id("a"), None);
    }

    #[test]
    fn pairs_on_four_token_fixture() {
        // "a b a b", window 1: three adjacent encounters, each counted both ways.
        let v = vocab_of("a b a b", 1);
        let pairs = extract_pairs("a b a b".split_whitespace(), &v, 1).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(pairs.count(a, b), 3);
        assert_eq!(pairs.count(b, a), 3);
        assert_eq!(pairs.count(a, a), 0);
        assert_eq!(pairs.total(), 6);
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn pairs_singleton_corpus_is_empty_not_error() {
        let v = vocab_of("x", 1);
        let pairs = extract_pairs(["x"], &v, 3).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(pairs.total(), 0);
    }

    #[test]
    fn pairs_two_tokens_wide_window() {
        let v = vocab_of("a b", 1);
        let pairs = extract_pairs(["a", "b"], &v, 5).unwrap();
        assert_eq!(pairs.count(0, 1), 1);
        assert_eq!(pairs.count(1, 0), 1);
        assert_eq!(pairs.total(), 2);
    }

    #[test]
    fn pairs_window_zero_rejected() {
        let v = vocab_of("a b", 1);
        assert!(matches!(
            extract_pairs(["a", "b"], &v, 0).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn oov_tokens_removed_before_windowing() {
        // "c" is out of vocabulary, so a and b become adjacent.
        let v = build_vocab(["a", "b"], 1, None).unwrap();
        let pairs = extract_pairs(["a", "c", "b"], &v, 1).unwrap();
        assert_eq!(pairs.count(v.id("a").unwrap(), v.id("b").unwrap()), 1);
        assert_eq!(pairs.total(), 2);
    }

    #[test]
    fn marginals_symmetric_on_small_corpus() {
        let text = "the quick brown fox jumps over the lazy dog the fox";
        let v = vocab_of(text, 1);
        let pairs = extract_pairs(text.split_whitespace(), &v, 3).unwrap();
        let vs = v.len() as u32;
        for w in 0..vs {
            let row: u64 = (0..vs).map(|c| pairs.count(w, c)).sum();
            let col: u64 = (0..vs).map(|c| pairs.count(c, w)).sum();
            assert_eq!(row, col, "marginals differ for id {w}");
        }
        let grand: u64 = pairs.iter().map(|(_, _, n)| n).sum();
        assert_eq!(grand, pairs.total());
    }

    #[test]
    fn shard_merge_equals_single_pass_with_boundary() {
        let v = vocab_of("a b c a b c", 1);
        let mut one = PairExtractor::new(&v, 2).unwrap();
        for t in ["a", "b", "c"] {
            one.push(t);
        }
        one.break_sequence();
        for t in ["c", "b", "a"] {
            one.push(t);
        }
        let single = one.finish();

        let mut first = extract_pairs(["a", "b", "c"], &v, 2).unwrap();
        let second = extract_pairs(["c", "b", "a"], &v, 2).unwrap();
        first.merge(second).unwrap();

        assert_eq!(first.total(), single.total());
        for (w, c, n) in single.iter() {
            assert_eq!(first.count(w, c), n);
        }
        assert_eq!(first.len(), single.len());
    }

    #[test]
    fn merge_rejects_mismatched_shards() {
        let v1 = vocab_of("a b", 1);
        let v2 = vocab_of("a b c", 1);
        let mut p1 = extract_pairs(["a", "b"], &v1, 2).unwrap();
        let p2 = extract_pairs(["a", "b"], &v2, 2).unwrap();
        assert!(p1.merge(p2).is_err());
    }

    #[test]
    fn vocab_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let v = vocab_of("a b a b c", 1);
        v.write_tsv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a\t2\t0\nb\t2\t1\nc\t1\t2\n");
        let back = Vocabulary::read_tsv(&path).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn vocab_tsv_rejects_duplicates_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        std::fs::write(&path, "a\t2\t0\na\t1\t1\n").unwrap();
        assert!(matches!(
            Vocabulary::read_tsv(&path).unwrap_err(),
            Error::MalformedFile { .. }
        ));
        std::fs::write(&path, "a\t2\t0\nb\t1\t2\n").unwrap();
        assert!(matches!(
            Vocabulary::read_tsv(&path).unwrap_err(),
            Error::MalformedFile { .. }
        ));
    }

    #[test]
    fn file_extraction_parallel_matches_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for (i, text) in ["a b c a", "b c b c", "c a a b"].iter().enumerate() {
            let p = dir.path().join(format!("shard{i}.txt"));
            std::fs::write(&p, text).unwrap();
            paths.push(p);
        }
        let opts = TokenizeOptions::default();
        let vocab = build_vocab_from_files(&paths, &opts, 1, None).unwrap();
        let seq = extract_pairs_from_files(&paths, &vocab, 2, &opts, 1).unwrap();
        let par = extract_pairs_from_files(&paths, &vocab, 2, &opts, 3).unwrap();
        assert_eq!(seq.total(), par.total());
        for (w, c, n) in seq.iter() {
            assert_eq!(par.count(w, c), n);
        }
    }

    #[test]
    fn lowercasing_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.txt");
        std::fs::write(&path, "The the THE bird").unwrap();
        let folded = build_vocab_from_files(
            std::slice::from_ref(&path),
            &TokenizeOptions { lowercase: true },
            1,
            None,
        )
        .unwrap();
        assert_eq!(folded.count(folded.id("the").unwrap()), Some(3));
        let raw = build_vocab_from_files(
            std::slice::from_ref(&path),
            &TokenizeOptions { lowercase: false },
            1,
            None,
        )
        .unwrap();
        assert_eq!(raw.count(raw.id("The").unwrap()), Some(1));
        assert_eq!(raw.len(), 4);
    }
}
