//! Shared driver for unidirectional recurrent cells.
//!
//! Cells run on time-major data in which, at every step, the still-valid
//! sequences occupy a prefix of the batch. The driver sorts sequences by
//! descending valid length to establish that layout and undoes the
//! permutation on the way out.

use ndarray::{s, Array3};

use super::{FrameMask, ParamTensors, Tensor3};
use crate::error::{Error, Result};

pub trait RecurrentCell: ParamTensors + Clone {
    type Cache;

    fn input_dim(&self) -> usize;
    fn hidden_dim(&self) -> usize;

    /// `x` is `time × batch × input`; `active[t]` rows are valid at step `t`
    /// and `active` is non-increasing. Returns `time × batch × hidden`
    /// outputs with zeros in inactive rows.
    fn forward_sorted(&self, x: Array3<f64>, active: &[usize]) -> (Array3<f64>, Self::Cache);

    /// Gradients of the parameters and of the time-major input.
    fn backward_sorted(&self, cache: &Self::Cache, dy: &Array3<f64>, active: &[usize]) -> (Self, Array3<f64>);
}

pub struct RecurrentCache<C: RecurrentCell> {
    inner: C::Cache,
    order: Vec<usize>,
    active: Vec<usize>,
    mask: FrameMask,
}

impl<C: RecurrentCell> RecurrentCache<C> {
    pub fn mask(&self) -> &FrameMask {
        &self.mask
    }

    #[cfg(test)]
    pub(crate) fn inner(&self) -> &C::Cache {
        &self.inner
    }
}

fn sort_order(mask: &FrameMask) -> (Vec<usize>, Vec<usize>) {
    let lengths = mask.lengths();
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
    let active = (0..mask.time())
        .map(|t| order.iter().take_while(|&&i| lengths[i] > t).count())
        .collect();
    (order, active)
}

fn to_time_major(x: &Array3<f64>, order: &[usize]) -> Array3<f64> {
    let (b, t, d) = x.dim();
    let mut out = Array3::zeros((t, b, d));
    for (i, &src) in order.iter().enumerate() {
        out.slice_mut(s![.., i, ..]).assign(&x.slice(s![src, .., ..]));
    }
    out
}

fn from_time_major(x: &Array3<f64>, order: &[usize]) -> Array3<f64> {
    let (t, b, d) = x.dim();
    let mut out = Array3::zeros((b, t, d));
    for (i, &dst) in order.iter().enumerate() {
        out.slice_mut(s![dst, .., ..]).assign(&x.slice(s![.., i, ..]));
    }
    out
}

pub(crate) fn run_forward<C: RecurrentCell>(
    cell: &C,
    x: &Tensor3,
    mask: &FrameMask,
) -> Result<(Tensor3, RecurrentCache<C>)> {
    mask.ensure_matches(x)?;
    if x.dim() != cell.input_dim() {
        return Err(Error::Shape(format!(
            "recurrent layer expects {} input features, got {}",
            cell.input_dim(),
            x.dim()
        )));
    }
    x.ensure_finite("recurrent input")?;
    let (order, active) = sort_order(mask);
    let (y_tm, inner) = cell.forward_sorted(to_time_major(&x.0, &order), &active);
    let y = from_time_major(&y_tm, &order);
    Ok((
        Tensor3(y),
        RecurrentCache {
            inner,
            order,
            active,
            mask: mask.clone(),
        },
    ))
}

pub(crate) fn run_backward<C: RecurrentCell>(
    cell: &C,
    cache: &RecurrentCache<C>,
    dy: &Tensor3,
) -> Result<(C, Tensor3)> {
    dy.ensure_shape(
        cache.mask.batch(),
        cache.mask.time(),
        cell.hidden_dim(),
        "recurrent output gradient",
    )?;
    // Gradients arriving at padded frames are ignored: those outputs are
    // constant zeros.
    let dy = dy.clone().masked(&cache.mask);
    let dy_tm = to_time_major(&dy.0, &cache.order);
    let (grads, dx_tm) = cell.backward_sorted(&cache.inner, &dy_tm, &cache.active);
    Ok((grads, Tensor3(from_time_major(&dx_tm, &cache.order))))
}
