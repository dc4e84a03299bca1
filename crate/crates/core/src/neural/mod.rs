//! A small recurrent-network stack with exact analytic gradients.
//!
//! Tensors are `batch × time × dim`. Padding is described by a
//! [`FrameMask`] of per-sequence valid lengths: every sequence is a valid
//! prefix followed by padded frames. Recurrent layers never read padded
//! frames, write zero outputs there, and propagate no gradient into them.

mod bidir;
mod checkpoint;
mod dense;
mod dropout;
mod gru;
mod init;
mod lstm;
mod model;
mod recurrent;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub use bidir::{bidirectional_backward, bidirectional_forward, reverse_valid, BiCache, Bidirectional};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
};
pub use dense::{dense_backward, dense_forward, Activation, DenseCache, DenseParams};
pub use dropout::{dropout, DropoutMask};
pub use gru::{gru_backward, gru_forward, GruCache, GruParams};
pub use init::{glorot_uniform, orthogonal};
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmParams};
pub use model::{model_backward, model_forward, Architecture, ModelCache, ModelParams, ModelSpec, RecurrentLayer};
pub use recurrent::{RecurrentCache, RecurrentCell};

/// `batch × time × dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3(pub Array3<f64>);

impl Tensor3 {
    pub fn zeros(batch: usize, time: usize, dim: usize) -> Self {
        Self(Array3::zeros((batch, time, dim)))
    }

    pub fn batch(&self) -> usize {
        self.0.dim().0
    }

    pub fn time(&self) -> usize {
        self.0.dim().1
    }

    pub fn dim(&self) -> usize {
        self.0.dim().2
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Data(format!("{what} contains non-finite values")))
        }
    }

    pub(crate) fn ensure_shape(&self, batch: usize, time: usize, dim: usize, what: &str) -> Result<()> {
        if self.0.dim() != (batch, time, dim) {
            return Err(Error::Shape(format!(
                "{what}: expected {batch}x{time}x{dim}, got {:?}",
                self.0.dim()
            )));
        }
        Ok(())
    }

    /// Zeroes every padded frame.
    pub fn masked(mut self, mask: &FrameMask) -> Self {
        for (b, &len) in mask.lengths().iter().enumerate() {
            self.0.slice_mut(ndarray::s![b, len.., ..]).fill(0.0);
        }
        self
    }
}

/// Per-sequence valid lengths; frames `[0, len)` are valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    lengths: Vec<usize>,
    time: usize,
}

impl FrameMask {
    pub fn from_lengths(lengths: Vec<usize>, time: usize) -> Result<Self> {
        if let Some(&l) = lengths.iter().find(|&&l| l > time) {
            return Err(Error::Shape(format!("valid length {l} exceeds {time} frames")));
        }
        Ok(Self { lengths, time })
    }

    pub fn full(batch: usize, time: usize) -> Self {
        Self {
            lengths: vec![time; batch],
            time,
        }
    }

    /// Accepts only true-prefix / false-suffix rows.
    pub fn from_bools(flags: &Array2<bool>) -> Result<Self> {
        let (batch, time) = flags.dim();
        let mut lengths = Vec::with_capacity(batch);
        for (b, row) in flags.rows().into_iter().enumerate() {
            let len = row.iter().take_while(|&&v| v).count();
            if row.iter().skip(len).any(|&v| v) {
                return Err(Error::Shape(format!("mask row {b} is not a contiguous valid prefix")));
            }
            lengths.push(len);
        }
        Ok(Self { lengths, time })
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn is_valid(&self, b: usize, t: usize) -> bool {
        t < self.lengths[b]
    }

    pub fn valid_count(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn to_bools(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.batch(), self.time), |(b, t)| self.is_valid(b, t))
    }

    pub(crate) fn ensure_matches(&self, x: &Tensor3) -> Result<()> {
        if self.batch() != x.batch() || self.time != x.time() {
            return Err(Error::Shape(format!(
                "mask is {}x{}, tensor is {}x{}",
                self.batch(),
                self.time,
                x.batch(),
                x.time()
            )));
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order; gradients share the layout of
/// the parameters they belong to.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every tensor set to zero, same shapes.
    fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_from_bools_requires_prefix() {
        let ok = ndarray::array![[true, true, false], [false, false, false]];
        assert_eq!(FrameMask::from_bools(&ok).unwrap().lengths(), &[2, 0]);
        let bad = ndarray::array![[true, false, true]];
        assert!(FrameMask::from_bools(&bad).is_err());
        assert!(FrameMask::from_lengths(vec![4], 3).is_err());
        assert_eq!(FrameMask::from_lengths(vec![2, 0], 3).unwrap().to_bools(), ok);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
