//! Embedding parameters: a word matrix, a context matrix, and (for the
//! weighted least-squares baseline) optional bias vectors.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::{atomic_write, io_at};

/// Magic prefix of the binary checkpoint format.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LXM1";

/// Word and context embedding matrices (`vocab_size x dimension`), plus
/// optional per-id bias terms. All entries stay finite; training aborts
/// rather than store a non-finite value, and checkpoint loading re-verifies.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    word_vectors: Array2<f64>,
    context_vectors: Array2<f64>,
    word_bias: Option<Array1<f64>>,
    context_bias: Option<Array1<f64>>,
}

/// Mutable views of every parameter block, for update loops that need the
/// word and context sides simultaneously.
pub struct ModelPartsMut<'a> {
    pub word_vectors: &'a mut [f64],
    pub context_vectors: &'a mut [f64],
    pub word_bias: Option<&'a mut [f64]>,
    pub context_bias: Option<&'a mut [f64]>,
    pub vocab_size: usize,
    pub dimension: usize,
}

impl EmbeddingModel {
    /// Fresh model with entries drawn uniformly from
    /// `[-init_scale / dimension, +init_scale / dimension]`, seeded and
    /// platform-independent: the same seed always yields the same model.
    /// Bias vectors start at zero. `init_scale = 0` gives an exactly-zero
    /// model.
    pub fn init(
        vocab_size: usize,
        dimension: usize,
        init_scale: f64,
        seed: u64,
        with_biases: bool,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be at least 1"));
        }
        if dimension == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(init_scale >= 0.0) || !init_scale.is_finite() {
            return Err(Error::invalid(format!(
                "init_scale must be a non-negative finite real, got {init_scale}"
            )));
        }
        let bound = init_scale / dimension as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Array1<f64> {
            if bound == 0.0 {
                Array1::zeros(n)
            } else {
                Array1::from_iter((0..n).map(|_| rng.random_range(-bound..=bound)))
            }
        };
        let total = vocab_size * dimension;
        let word_vectors = draw(total)
            .into_shape_with_order((vocab_size, dimension))
            .expect("shape matches length");
        let context_vectors = draw(total)
            .into_shape_with_order((vocab_size, dimension))
            .expect("shape matches length");
        let (word_bias, context_bias) = if with_biases {
            (
                Some(Array1::zeros(vocab_size)),
                Some(Array1::zeros(vocab_size)),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            word_vectors,
            context_vectors,
            word_bias,
            context_bias,
        })
    }

    pub fn from_parts(
        word_vectors: Array2<f64>,
        context_vectors: Array2<f64>,
        word_bias: Option<Array1<f64>>,
        context_bias: Option<Array1<f64>>,
    ) -> Result<Self> {
        if word_vectors.dim() != context_vectors.dim() {
            return Err(Error::DimensionMismatch(format!(
                "word matrix is {:?}, context matrix is {:?}",
                word_vectors.dim(),
                context_vectors.dim()
            )));
        }
        if word_bias.is_some() != context_bias.is_some() {
            return Err(Error::DimensionMismatch(
                "bias vectors must be present for both sides or neither".into(),
            ));
        }
        if let (Some(wb), Some(cb)) = (&word_bias, &context_bias) {
            if wb.len() != word_vectors.nrows() || cb.len() != word_vectors.nrows() {
                return Err(Error::DimensionMismatch(
                    "bias length must equal vocab size".into(),
                ));
            }
        }
        Ok(Self {
            word_vectors,
            context_vectors,
            word_bias,
            context_bias,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.word_vectors.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.word_vectors.ncols()
    }

    pub fn has_biases(&self) -> bool {
        self.word_bias.is_some()
    }

    pub fn word_vector(&self, id: u32) -> ArrayView1<'_, f64> {
        self.word_vectors.row(id as usize)
    }

    pub fn context_vector(&self, id: u32) -> ArrayView1<'_, f64> {
        self.context_vectors.row(id as usize)
    }

    pub fn word_vector_mut(&mut self, id: u32) -> ArrayViewMut1<'_, f64> {
        self.word_vectors.row_mut(id as usize)
    }

    pub fn context_vector_mut(&mut self, id: u32) -> ArrayViewMut1<'_, f64> {
        self.context_vectors.row_mut(id as usize)
    }

    pub fn word_vectors(&self) -> &Array2<f64> {
        &self.word_vectors
    }

    pub fn context_vectors(&self) -> &Array2<f64> {
        &self.context_vectors
    }

    pub fn word_bias(&self, id: u32) -> f64 {
        self.word_bias.as_ref().map_or(0.0, |b| b[id as usize])
    }

    pub fn context_bias(&self, id: u32) -> f64 {
        self.context_bias.as_ref().map_or(0.0, |b| b[id as usize])
    }

    pub fn biases(&self) -> Option<(&Array1<f64>, &Array1<f64>)> {
        match (&self.word_bias, &self.context_bias) {
            (Some(w), Some(c)) => Some((w, c)),
            _ => None,
        }
    }

    /// Inner product of a word vector and a context vector — the model's
    /// predicted log-odds for that cell (biases not included).
    pub fn score(&self, word: u32, context: u32) -> f64 {
        self.word_vector(word).dot(&self.context_vector(context))
    }

    /// Score plus both bias terms, as used by the bias-carrying baseline.
    pub fn score_with_biases(&self, word: u32, context: u32) -> f64 {
        self.score(word, context) + self.word_bias(word) + self.context_bias(context)
    }

    pub fn parts_mut(&mut self) -> ModelPartsMut<'_> {
        let vocab_size = self.vocab_size();
        let dimension = self.dimension();
        ModelPartsMut {
            word_vectors: self
                .word_vectors
                .as_slice_mut()
                .expect("row-major contiguous"),
            context_vectors: self
                .context_vectors
                .as_slice_mut()
                .expect("row-major contiguous"),
            word_bias: self
                .word_bias
                .as_mut()
                .map(|b| b.as_slice_mut().expect("contiguous")),
            context_bias: self
                .context_bias
                .as_mut()
                .map(|b| b.as_slice_mut().expect("contiguous")),
            vocab_size,
            dimension,
        }
    }

    /// Write the binary checkpoint: `LXM1` magic, vocab size (u32), dimension
    /// (u32), a flags byte (bit 0: biases present), then row-major f64
    /// little-endian payloads — word matrix, context matrix, and, when
    /// flagged, word then context biases.
    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_all(&(self.vocab_size() as u32).to_le_bytes())?;
            w.write_all(&(self.dimension() as u32).to_le_bytes())?;
            let flags: u8 = if self.has_biases() { 1 } else { 0 };
            w.write_all(&[flags])?;
            let mut write_all_f64 = |values: &mut dyn Iterator<Item = f64>| -> std::io::Result<()> {
                for v in values {
                    w.write_all(&v.to_le_bytes())?;
                }
                Ok(())
            };
            write_all_f64(&mut self.word_vectors.iter().copied())?;
            write_all_f64(&mut self.context_vectors.iter().copied())?;
            if let Some((wb, cb)) = self.biases() {
                write_all_f64(&mut wb.iter().copied())?;
                write_all_f64(&mut cb.iter().copied())?;
            }
            Ok(())
        })
        .map_err(|e| io_at(path, e).into())
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| io_at(path, e))?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic).map_err(|e| io_at(path, e))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::malformed(path, "bad magic, not a checkpoint"));
        }
        let mut u32buf = [0u8; 4];
        reader.read_exact(&mut u32buf).map_err(|e| io_at(path, e))?;
        let vocab_size = u32::from_le_bytes(u32buf) as usize;
        reader.read_exact(&mut u32buf).map_err(|e| io_at(path, e))?;
        let dimension = u32::from_le_bytes(u32buf) as usize;
        let mut flags = [0u8; 1];
        reader.read_exact(&mut flags).map_err(|e| io_at(path, e))?;
        if flags[0] > 1 {
            return Err(Error::malformed(
                path,
                format!("unknown flags {:#x}", flags[0]),
            ));
        }
        if vocab_size == 0 || dimension == 0 {
            return Err(Error::malformed(path, "zero vocab size or dimension"));
        }
        let has_biases = flags[0] & 1 == 1;

        let mut read_block = |n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                reader.read_exact(&mut buf).map_err(|e| io_at(path, e))?;
                let v = f64::from_le_bytes(buf);
                if !v.is_finite() {
                    return Err(Error::malformed(path, "non-finite parameter entry"));
                }
                out.push(v);
            }
            Ok(out)
        };
        let total = vocab_size * dimension;
        let word_vectors =
            Array2::from_shape_vec((vocab_size, dimension), read_block(total)?).unwrap();
        let context_vectors =
            Array2::from_shape_vec((vocab_size, dimension), read_block(total)?).unwrap();
        let (word_bias, context_bias) = if has_biases {
            (
                Some(Array1::from_vec(read_block(vocab_size)?)),
                Some(Array1::from_vec(read_block(vocab_size)?)),
            )
        } else {
            (None, None)
        };
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing).map_err(|e| io_at(path, e))? != 0 {
            return Err(Error::malformed(path, "trailing bytes after parameters"));
        }
        Self::from_parts(word_vectors, context_vectors, word_bias, context_bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = EmbeddingModel::init(7, 4, 1.0, 99, false).unwrap();
        let b = EmbeddingModel::init(7, 4, 1.0, 99, false).unwrap();
        assert_eq!(a, b);
        let c = EmbeddingModel::init(7, 4, 1.0, 100, false).unwrap();
        assert_ne!(a, c);
        let bound = 1.0 / 4.0;
        for &v in a.word_vectors().iter().chain(a.context_vectors().iter()) {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn init_scale_zero_is_exactly_zero() {
        let m = EmbeddingModel::init(3, 5, 0.0, 7, true).unwrap();
        assert!(m.word_vectors().iter().all(|&v| v == 0.0));
        assert!(m.context_vectors().iter().all(|&v| v == 0.0));
        assert_eq!(m.score(0, 2), 0.0);
        assert_eq!(m.score_with_biases(0, 2), 0.0);
    }

    #[test]
    fn init_validates_arguments() {
        assert!(EmbeddingModel::init(0, 4, 1.0, 0, false).is_err());
        assert!(EmbeddingModel::init(4, 0, 1.0, 0, false).is_err());
        assert!(EmbeddingModel::init(4, 4, -1.0, 0, false).is_err());
        assert!(EmbeddingModel::init(4, 4, f64::NAN, 0, false).is_err());
    }

    #[test]
    fn score_is_plain_inner_product() {
        let mut m = EmbeddingModel::init(2, 2, 0.0, 0, false).unwrap();
        m.word_vector_mut(0).assign(&ndarray::arr1(&[1.0, 2.0]));
        m.context_vector_mut(1).assign(&ndarray::arr1(&[3.0, -1.0]));
        assert_eq!(m.score(0, 1), 1.0);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lxm");
        for with_biases in [false, true] {
            let mut m = EmbeddingModel::init(5, 3, 2.0, 11, with_biases).unwrap();
            if with_biases {
                m.word_bias = m.word_bias.map(|mut b| {
                    b[2] = 0.125;
                    b
                });
            }
            m.write_checkpoint(&path).unwrap();
            let back = EmbeddingModel::read_checkpoint(&path).unwrap();
            assert_eq!(back, m, "with_biases = {with_biases}");
            // Same model written twice produces identical bytes.
            let first = std::fs::read(&path).unwrap();
            m.write_checkpoint(&path).unwrap();
            assert_eq!(first, std::fs::read(&path).unwrap());
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lxm");
        let m = EmbeddingModel::init(3, 2, 1.0, 5, false).unwrap();
        m.write_checkpoint(&path).unwrap();

        let good = std::fs::read(&path).unwrap();

        // Non-finite entry.
        let mut bytes = good.clone();
        let nan = f64::NAN.to_le_bytes();
        bytes[13..21].copy_from_slice(&nan);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            EmbeddingModel::read_checkpoint(&path).unwrap_err(),
            Error::MalformedFile { .. }
        ));

        // Truncation.
        std::fs::write(&path, &good[..good.len() - 1]).unwrap();
        assert!(EmbeddingModel::read_checkpoint(&path).is_err());

        // Trailing garbage.
        let mut bytes = good.clone();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            EmbeddingModel::read_checkpoint(&path).unwrap_err(),
            Error::MalformedFile { .. }
        ));
    }
}
