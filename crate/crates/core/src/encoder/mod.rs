//! Sentence encoders producing per-character representations.
//!
//! Three implementations share one interface: the trainable transformer
//! ([`TransformerEncoder`]), a deterministic table-lookup encoder for tests
//! and fixtures ([`LookupEncoder`]), and a frozen wrapper whose parameters
//! can never change ([`FrozenEncoder`]). The spell-checking model
//! ([`CscModel`]) is the trainable encoder plus a per-position linear head
//! over the vocabulary.

mod checkpoint;
mod transformer;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_auto, read_checkpoint_meta, save_checkpoint, CheckpointMeta,
    ModelKind,
};
pub use transformer::{CscModel, ForwardTrace, ModelGrads, ParamSet, TransformerEncoder};

use std::collections::HashMap;

use thiserror::Error;

use crate::math::Mat;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sentence length {len} exceeds the maximum {max}")]
    SentenceTooLong { len: usize, max: usize },
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("non-finite value produced in {0}")]
    NonFinite(String),
    #[error("row range {start}..={end} is outside the valid length {valid}")]
    RangeOutOfBounds {
        start: usize,
        end: usize,
        valid: usize,
    },
    #[error("character `{0}` is not in the vocabulary")]
    CharOutsideVocab(char),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("checkpoint parameter `{name}`: expected shape {expected}, found {found}")]
    ShapeMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and vocabulary of an encoder. All encoders participating in
/// one training run must share `hidden_size` and `vocab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Ordered character list; the prediction head distributes over exactly
    /// these characters. Characters outside the list map to a reserved
    /// unknown symbol on input.
    pub vocab: Vec<char>,
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_length: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab.is_empty() {
            return Err(ModelError::Config("empty vocabulary".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &c in &self.vocab {
            if !seen.insert(c) {
                return Err(ModelError::Config(format!("duplicate vocab character `{c}`")));
            }
        }
        if self.hidden_size == 0 || self.heads == 0 || self.layers == 0 {
            return Err(ModelError::Config(
                "hidden_size, heads, and layers must be positive".into(),
            ));
        }
        if !self.hidden_size.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "hidden_size {} is not divisible by heads {}",
                self.hidden_size, self.heads
            )));
        }
        if self.max_length == 0 {
            return Err(ModelError::Config("max_length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Encoder output for one sentence: a `T x h` matrix with `valid_length`
/// meaningful rows; rows beyond `valid_length` are padding and are excluded
/// from pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct RepSequence {
    values: Mat,
    valid_length: usize,
}

impl RepSequence {
    pub fn new(values: Mat, valid_length: usize) -> Result<Self, ModelError> {
        if valid_length > values.rows() {
            return Err(ModelError::Config(format!(
                "valid_length {} exceeds row count {}",
                valid_length,
                values.rows()
            )));
        }
        if !values.is_finite() {
            return Err(ModelError::NonFinite("representation matrix".into()));
        }
        Ok(RepSequence {
            values,
            valid_length,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], valid_length: usize) -> Result<Self, ModelError> {
        Self::new(Mat::from_rows(rows), valid_length)
    }

    /// Total rows `T`, padding included.
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    /// Representation width `h`.
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn valid_length(&self) -> usize {
        self.valid_length
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn matrix(&self) -> &Mat {
        &self.values
    }

    /// Mean of rows `start..=end`; the range must lie inside the valid
    /// region.
    pub fn mean_pool(&self, start: usize, end: usize) -> Result<Vec<f64>, ModelError> {
        if start > end || end >= self.valid_length {
            return Err(ModelError::RangeOutOfBounds {
                start,
                end,
                valid: self.valid_length,
            });
        }
        Ok(self.values.mean_rows(start, end))
    }

    /// Mean over all valid rows (padding excluded).
    pub fn mean_pool_valid(&self) -> Result<Vec<f64>, ModelError> {
        if self.valid_length == 0 {
            return Err(ModelError::RangeOutOfBounds {
                start: 0,
                end: 0,
                valid: 0,
            });
        }
        self.mean_pool(0, self.valid_length - 1)
    }
}

/// Maps sentences to per-character representations.
pub trait Encoder {
    fn hidden_size(&self) -> usize;
    fn max_length(&self) -> usize;
    fn vocab(&self) -> &[char];
    /// Deterministic given parameters and input. Characters outside the
    /// vocabulary map to the reserved unknown symbol rather than failing.
    fn encode(&self, sentence: &[char]) -> Result<RepSequence, ModelError>;
}

/// Pure embedding-table encoder: each character's representation is a fixed
/// table row, independent of context. Deterministic by construction; used in
/// tests and as a trivial similarity encoder.
#[derive(Debug, Clone)]
pub struct LookupEncoder {
    vocab: Vec<char>,
    index: HashMap<char, usize>,
    /// One row per vocab character, in vocab order.
    table: Mat,
    unknown: Vec<f64>,
    max_length: usize,
}

impl LookupEncoder {
    pub fn new(vocab: Vec<char>, table: Mat, max_length: usize) -> Result<Self, ModelError> {
        if table.rows() != vocab.len() {
            return Err(ModelError::Config(format!(
                "table has {} rows for {} vocab characters",
                table.rows(),
                vocab.len()
            )));
        }
        if max_length == 0 {
            return Err(ModelError::Config("max_length must be at least 1".into()));
        }
        let index = vocab.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let unknown = vec![0.0; table.cols()];
        Ok(LookupEncoder {
            vocab,
            index,
            table,
            unknown,
            max_length,
        })
    }

    /// Random table drawn uniformly from ±1/sqrt(h).
    pub fn from_seed(
        vocab: Vec<char>,
        hidden_size: usize,
        max_length: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "lookup-encoder");
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let mut table = Mat::zeros(vocab.len(), hidden_size);
        for v in table.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Self::new(vocab, table, max_length)
    }

    pub fn table(&self) -> &Mat {
        &self.table
    }
}

impl Encoder for LookupEncoder {
    fn hidden_size(&self) -> usize {
        self.table.cols()
    }

    fn max_length(&self) -> usize {
        self.max_length
    }

    fn vocab(&self) -> &[char] {
        &self.vocab
    }

    fn encode(&self, sentence: &[char]) -> Result<RepSequence, ModelError> {
        if sentence.len() > self.max_length {
            return Err(ModelError::SentenceTooLong {
                len: sentence.len(),
                max: self.max_length,
            });
        }
        let h = self.table.cols();
        let mut out = Mat::zeros(sentence.len(), h);
        for (t, c) in sentence.iter().enumerate() {
            let row = match self.index.get(c) {
                Some(&i) => self.table.row(i),
                None => &self.unknown,
            };
            out.row_mut(t).copy_from_slice(row);
        }
        RepSequence::new(out, sentence.len())
    }
}

/// An encoder whose parameters can never change: freezing consumes the
/// trainable encoder and exposes only read access, so no training step can
/// touch it.
#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    inner: TransformerEncoder,
}

/// Freezes a trainable encoder.
pub fn freeze(encoder: TransformerEncoder) -> FrozenEncoder {
    FrozenEncoder { inner: encoder }
}

impl FrozenEncoder {
    /// Read-only view of the frozen parameters, for snapshots and audits.
    pub fn params(&self) -> &ParamSet {
        self.inner.params()
    }

    pub fn config(&self) -> &EncoderConfig {
        self.inner.config()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, seed: u64) -> Result<(), ModelError> {
        save_checkpoint(&self.inner, path, seed, 0)
    }
}

impl Encoder for FrozenEncoder {
    fn hidden_size(&self) -> usize {
        self.inner.hidden_size()
    }

    fn max_length(&self) -> usize {
        self.inner.max_length()
    }

    fn vocab(&self) -> &[char] {
        self.inner.vocab()
    }

    fn encode(&self, sentence: &[char]) -> Result<RepSequence, ModelError> {
        self.inner.encode(sentence)
    }
}

/// Rounds to the nearest f32 and widens back; parameters are kept on this
/// grid so checkpoints (stored as f32) round-trip bit-exactly.
pub(crate) fn canon_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rep_sequence_pooling_respects_valid_length() {
        let rows = vec![
            vec![1.0, 3.0],
            vec![3.0, 5.0],
            vec![100.0, 100.0], // padding, must be ignored
        ];
        let rep = RepSequence::from_rows(&rows, 2).unwrap();
        let pooled = rep.mean_pool_valid().unwrap();
        assert_eq!(pooled, vec![2.0, 4.0]);
        assert!(rep.mean_pool(1, 2).is_err());
        assert_eq!(rep.mean_pool(1, 1).unwrap(), vec![3.0, 5.0]);
    }

    #[test]
    fn rep_sequence_rejects_non_finite() {
        let rows = vec![vec![f64::NAN]];
        assert!(RepSequence::from_rows(&rows, 1).is_err());
    }

    #[test]
    fn lookup_encoder_returns_table_rows() {
        let vocab: Vec<char> = "甲乙丙丁".chars().collect();
        let table = Mat::from_rows(&[
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![2.0, 2.0],
            vec![3.0, -1.0],
        ]);
        let enc = LookupEncoder::new(vocab, table, 8).unwrap();
        let rep = enc.encode(&['丁', '甲']).unwrap();
        assert_eq!(rep.row(0), &[3.0, -1.0]); // character with id 3 -> row 3
        assert_eq!(rep.row(1), &[0.0, 1.0]);
        assert_eq!(rep.valid_length(), 2);

        // unknown character maps to the reserved zero row, not an error
        let rep = enc.encode(&['戊']).unwrap();
        assert_eq!(rep.row(0), &[0.0, 0.0]);

        // too long is an error
        let long: Vec<char> = std::iter::repeat_n('甲', 9).collect();
        assert!(matches!(
            enc.encode(&long),
            Err(ModelError::SentenceTooLong { len: 9, max: 8 })
        ));
    }

    #[test]
    fn encoders_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<TransformerEncoder>();
        assert_send_sync::<FrozenEncoder>();
        assert_send_sync::<LookupEncoder>();
    }

    #[test]
    fn config_validation() {
        let ok = EncoderConfig {
            vocab: vec!['a', 'b'],
            hidden_size: 8,
            layers: 1,
            heads: 2,
            max_length: 4,
        };
        assert!(ok.validate().is_ok());

        let mut bad = ok.clone();
        bad.hidden_size = 9;
        assert!(bad.validate().is_err());

        let mut bad = ok.clone();
        bad.vocab = vec!['a', 'a'];
        assert!(bad.validate().is_err());

        let mut bad = ok;
        bad.max_length = 0;
        assert!(bad.validate().is_err());
    }
}
