//! Binary copy task.
//!
//! A sequence shows `ℓ` binary symbols followed by `ℓ` blanks (`#`); during
//! the blank half the model must emit the pattern in order. Inputs are
//! one-hot over `{0, 1, #}`; the loss only reads the second half.
//!
//! Sequences in a batch keep their own length instead of being padded.
//! Padding with `#` and masking the padded positions would contribute
//! nothing to either the loss or the gradient, so the two are equivalent.

use crate::error::{Error, Result};
use crate::numeric::{RealVector, Rng};

/// Index of `#`; symbols `0` and `1` are their own indices.
pub const BLANK: usize = 2;
/// Size of the one-hot input alphabet.
pub const ALPHABET: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopySequence {
    pub pattern: Vec<usize>,
}

impl CopySequence {
    pub fn new(pattern: Vec<usize>) -> Result<Self> {
        if pattern.is_empty() || pattern.iter().any(|&b| b > 1) {
            return Err(Error::Contract("copy pattern must be a non-empty binary string".into()));
        }
        Ok(CopySequence { pattern })
    }

    pub fn pattern_len(&self) -> usize {
        self.pattern.len()
    }

    /// Total sequence length `2ℓ`.
    pub fn len(&self) -> usize {
        2 * self.pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }

    /// Input symbol at position `t` (0-based).
    pub fn symbol(&self, t: usize) -> usize {
        if t < self.pattern.len() {
            self.pattern[t]
        } else {
            BLANK
        }
    }

    pub fn input(&self, t: usize) -> RealVector {
        RealVector::one_hot(ALPHABET, self.symbol(t))
    }

    pub fn inputs(&self) -> Vec<RealVector> {
        (0..self.len()).map(|t| self.input(t)).collect()
    }

    /// Target at position `t`, `None` on the no-loss first half.
    pub fn target(&self, t: usize) -> Option<usize> {
        let l = self.pattern.len();
        (t >= l && t < 2 * l).then(|| self.pattern[t - l])
    }

    pub fn targets(&self) -> Vec<Option<usize>> {
        (0..self.len()).map(|t| self.target(t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopyBatch {
    pub sequences: Vec<CopySequence>,
}

impl CopyBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.sequences.iter().map(CopySequence::pattern_len).collect()
    }

    pub fn num_targets(&self) -> usize {
        self.lengths().iter().sum()
    }
}

/// `ℓ_i` uniform on `1..=l_max`, patterns uniform on `{0,1}^ℓ_i`.
pub fn copy_sample(rng: &mut Rng, l_max: usize, batch: usize) -> Result<CopyBatch> {
    if l_max == 0 || batch == 0 {
        return Err(Error::Config("copy task needs l_max >= 1 and batch >= 1".into()));
    }
    let sequences = (0..batch)
        .map(|_| {
            let l = rng.int_inclusive(1, l_max);
            let pattern = (0..l).map(|_| usize::from(rng.bernoulli(0.5))).collect();
            CopySequence { pattern }
        })
        .collect();
    Ok(CopyBatch { sequences })
}

/// `predictions[i]` holds the predicted symbols for the `ℓ_i` target
/// positions of sequence `i`. Returns `(per_symbol, per_sequence)` accuracy.
pub fn copy_accuracy(predictions: &[Vec<usize>], batch: &CopyBatch) -> Result<(f64, f64)> {
    if predictions.len() != batch.len() {
        return Err(Error::Contract(format!("{} prediction rows for a batch of {}", predictions.len(), batch.len())));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut perfect = 0usize;
    for (pred, seq) in predictions.iter().zip(&batch.sequences) {
        if pred.len() != seq.pattern_len() {
            return Err(Error::Contract(format!("{} predictions for a pattern of length {}", pred.len(), seq.pattern_len())));
        }
        let hits = pred.iter().zip(&seq.pattern).filter(|(a, b)| a == b).count();
        correct += hits;
        total += pred.len();
        perfect += usize::from(hits == pred.len());
    }
    Ok((correct as f64 / total as f64, perfect as f64 / batch.len() as f64))
}
