//! Inverted dropout: kept units are scaled by `1 / (1 − rate)` during
//! training so inference is the identity.

use ndarray::Array3;
use rand::Rng;

use super::Tensor3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DropoutMask {
    Identity,
    /// Per-element multiplier, either 0 or `1 / (1 − rate)`.
    Scale(Array3<f64>),
}

impl DropoutMask {
    pub fn apply(&self, x: &Tensor3) -> Tensor3 {
        match self {
            DropoutMask::Identity => x.clone(),
            DropoutMask::Scale(m) => Tensor3(&x.0 * m),
        }
    }
}

pub fn dropout(inputs: &Tensor3, rate: f64, rng: &mut impl Rng, training: bool) -> Result<(Tensor3, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((inputs.clone(), DropoutMask::Identity));
    }
    let keep = 1.0 / (1.0 - rate);
    let m = Array3::from_shape_simple_fn(inputs.0.dim(), || if rng.gen::<f64>() < rate { 0.0 } else { keep });
    let mask = DropoutMask::Scale(m);
    Ok((mask.apply(inputs), mask))
}
