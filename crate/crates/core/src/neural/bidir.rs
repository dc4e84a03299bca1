//! Bidirectional wrapper. The backward direction reads each sequence
//! reversed within its valid region, so padding stays at the end.

use ndarray::{s, Array2};

use super::recurrent::{run_backward, run_forward, RecurrentCache, RecurrentCell};
use super::{FrameMask, ParamTensors, Tensor3};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Bidirectional<C> {
    pub fwd: C,
    pub bwd: C,
}

impl<C: RecurrentCell> Bidirectional<C> {
    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim()
    }
}

impl<C: RecurrentCell> ParamTensors for Bidirectional<C> {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (dir, cell) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            out.extend(cell.tensors().into_iter().map(|(n, t)| (format!("{dir}.{n}"), t)));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = self.fwd.tensors_mut();
        out.extend(self.bwd.tensors_mut());
        out
    }
}

pub struct BiCache<C: RecurrentCell> {
    fwd: RecurrentCache<C>,
    bwd: RecurrentCache<C>,
}

/// Reverses frames `[0, len)` of every sequence; padded frames are copied
/// unchanged.
pub fn reverse_valid(x: &Tensor3, mask: &FrameMask) -> Tensor3 {
    let mut out = x.clone();
    for (b, &len) in mask.lengths().iter().enumerate() {
        out.0
            .slice_mut(s![b, ..len, ..])
            .assign(&x.0.slice(s![b, ..len;-1, ..]));
    }
    out
}

pub fn bidirectional_forward<C: RecurrentCell>(
    layer: &Bidirectional<C>,
    inputs: &Tensor3,
    mask: &FrameMask,
) -> Result<(Tensor3, BiCache<C>)> {
    let (yf, fwd) = run_forward(&layer.fwd, inputs, mask)?;
    let (yb, bwd) = run_forward(&layer.bwd, &reverse_valid(inputs, mask), mask)?;
    let yb = reverse_valid(&yb, mask);
    let h = layer.fwd.hidden_dim();
    let mut y = Tensor3::zeros(mask.batch(), mask.time(), 2 * h);
    y.0.slice_mut(s![.., .., ..h]).assign(&yf.0);
    y.0.slice_mut(s![.., .., h..]).assign(&yb.0);
    Ok((y, BiCache { fwd, bwd }))
}

pub fn bidirectional_backward<C: RecurrentCell>(
    layer: &Bidirectional<C>,
    cache: &BiCache<C>,
    output_grad: &Tensor3,
) -> Result<(Bidirectional<C>, Tensor3)> {
    let mask = cache.fwd.mask();
    let h = layer.fwd.hidden_dim();
    output_grad.ensure_shape(mask.batch(), mask.time(), 2 * h, "bidirectional output gradient")?;
    let dyf = Tensor3(output_grad.0.slice(s![.., .., ..h]).to_owned());
    let dyb = reverse_valid(&Tensor3(output_grad.0.slice(s![.., .., h..]).to_owned()), mask);
    let (gf, mut dx) = run_backward(&layer.fwd, &cache.fwd, &dyf)?;
    let (gb, dxb) = run_backward(&layer.bwd, &cache.bwd, &dyb)?;
    dx.0 += &reverse_valid(&dxb, mask).0;
    Ok((Bidirectional { fwd: gf, bwd: gb }, dx))
}
