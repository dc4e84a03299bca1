//! Gated recurrent unit with the reset gate applied to the previous state
//! before the recurrent product:
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Axis, Zip};
use rand::Rng;

use super::init::{glorot_uniform, orthogonal};
use super::recurrent::{run_backward, run_forward, RecurrentCache, RecurrentCell};
use super::{sigmoid, FrameMask, ParamTensors, Tensor3};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    /// `input × 3·hidden`, gate blocks ordered update, reset, candidate.
    pub w: Array2<f64>,
    /// `hidden × 3·hidden`, same block order.
    pub u: Array2<f64>,
    /// `1 × 3·hidden`.
    pub b: Array2<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((input, 3 * hidden)),
            u: Array2::zeros((hidden, 3 * hidden)),
            b: Array2::zeros((1, 3 * hidden)),
        }
    }

    /// Glorot-uniform input weights and orthogonal recurrent weights per
    /// gate block, zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        for g in 0..3 {
            let cols = s![.., g * hidden..(g + 1) * hidden];
            p.w.slice_mut(cols).assign(&glorot_uniform(input, hidden, rng));
            p.u.slice_mut(cols).assign(&orthogonal(hidden, rng));
        }
        p
    }
}

impl ParamTensors for GruParams {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        vec![("w".into(), &self.w), ("u".into(), &self.u), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }
}

pub struct GruSteps {
    x: Array3<f64>,
    /// States before (index t) and after (t + 1) each step.
    hs: Array3<f64>,
    z: Array3<f64>,
    r: Array3<f64>,
    c: Array3<f64>,
}

pub type GruCache = RecurrentCache<GruParams>;

impl RecurrentCell for GruParams {
    type Cache = GruSteps;

    fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    fn hidden_dim(&self) -> usize {
        self.u.nrows()
    }

    fn forward_sorted(&self, x: Array3<f64>, active: &[usize]) -> (Array3<f64>, GruSteps) {
        let (steps, batch, input) = x.dim();
        let h = self.hidden_dim();
        let flat = x.view().into_shape_with_order((steps * batch, input)).unwrap();
        let mut xw = flat.dot(&self.w);
        xw += &self.b;
        let xw = xw.into_shape_with_order((steps, batch, 3 * h)).unwrap();

        let mut hs = Array3::zeros((steps + 1, batch, h));
        let mut z = Array3::zeros((steps, batch, h));
        let mut r = Array3::zeros((steps, batch, h));
        let mut c = Array3::zeros((steps, batch, h));
        let mut y = Array3::zeros((steps, batch, h));
        let u_zr = self.u.slice(s![.., ..2 * h]);
        let u_c = self.u.slice(s![.., 2 * h..]);

        for t in 0..steps {
            let n = active[t];
            let (prev, mut next) = hs.multi_slice_mut((s![t, .., ..], s![t + 1, .., ..]));
            next.assign(&prev);
            if n == 0 {
                continue;
            }
            let h_prev = prev.slice(s![..n, ..]);
            let a = xw.slice(s![t, ..n, ..]);

            let mut zr = a.slice(s![.., ..2 * h]).to_owned();
            general_mat_mul(1.0, &h_prev, &u_zr, 1.0, &mut zr);
            zr.mapv_inplace(sigmoid);
            let (zt, rt) = zr.view().split_at(Axis(1), h);

            let rh = &rt * &h_prev;
            let mut ct = a.slice(s![.., 2 * h..]).to_owned();
            general_mat_mul(1.0, &rh, &u_c, 1.0, &mut ct);
            ct.mapv_inplace(f64::tanh);

            Zip::from(next.slice_mut(s![..n, ..]))
                .and(&h_prev)
                .and(&zt)
                .and(&ct)
                .for_each(|hn, &hp, &zz, &cc| *hn = hp + zz * (cc - hp));
            y.slice_mut(s![t, ..n, ..]).assign(&next.slice(s![..n, ..]));
            z.slice_mut(s![t, ..n, ..]).assign(&zt);
            r.slice_mut(s![t, ..n, ..]).assign(&rt);
            c.slice_mut(s![t, ..n, ..]).assign(&ct);
        }
        (y, GruSteps { x, hs, z, r, c })
    }

    fn backward_sorted(&self, cache: &GruSteps, dy: &Array3<f64>, active: &[usize]) -> (Self, Array3<f64>) {
        let (steps, batch, input) = cache.x.dim();
        let h = self.hidden_dim();
        let mut grads = Self::zeros(input, h);
        let mut da = Array3::<f64>::zeros((steps, batch, 3 * h));
        let mut dh = Array2::<f64>::zeros((batch, h));
        let u_zr = self.u.slice(s![.., ..2 * h]);
        let u_c = self.u.slice(s![.., 2 * h..]);

        for t in (0..steps).rev() {
            let n = active[t];
            if n == 0 {
                continue;
            }
            let h_prev = cache.hs.slice(s![t, ..n, ..]);
            let zt = cache.z.slice(s![t, ..n, ..]);
            let rt = cache.r.slice(s![t, ..n, ..]);
            let ct = cache.c.slice(s![t, ..n, ..]);
            let dht = &dh.slice(s![..n, ..]) + &dy.slice(s![t, ..n, ..]);

            let mut dz_pre = Array2::zeros((n, h));
            Zip::from(&mut dz_pre)
                .and(&dht)
                .and(&zt)
                .and(&ct)
                .and(&h_prev)
                .for_each(|o, &g, &zz, &cc, &hp| *o = g * (cc - hp) * zz * (1.0 - zz));
            let mut dc_pre = Array2::zeros((n, h));
            let mut dh_prev = Array2::zeros((n, h));
            Zip::from(&mut dc_pre)
                .and(&mut dh_prev)
                .and(&dht)
                .and(&zt)
                .and(&ct)
                .for_each(|o, dp, &g, &zz, &cc| {
                    *o = g * zz * (1.0 - cc * cc);
                    *dp = g * (1.0 - zz);
                });

            let drh = dc_pre.dot(&u_c.t());
            let mut dr_pre = Array2::zeros((n, h));
            Zip::from(&mut dr_pre)
                .and(&mut dh_prev)
                .and(&drh)
                .and(&rt)
                .and(&h_prev)
                .for_each(|o, dp, &g, &rr, &hp| {
                    *o = g * hp * rr * (1.0 - rr);
                    *dp += g * rr;
                });

            let mut da_t = da.slice_mut(s![t, ..n, ..]);
            da_t.slice_mut(s![.., ..h]).assign(&dz_pre);
            da_t.slice_mut(s![.., h..2 * h]).assign(&dr_pre);
            da_t.slice_mut(s![.., 2 * h..]).assign(&dc_pre);
            let dzr = da_t.slice(s![.., ..2 * h]);

            general_mat_mul(1.0, &dzr, &u_zr.t(), 1.0, &mut dh_prev);
            general_mat_mul(1.0, &h_prev.t(), &dzr, 1.0, &mut grads.u.slice_mut(s![.., ..2 * h]));
            let rh = &rt * &h_prev;
            general_mat_mul(1.0, &rh.t(), &dc_pre, 1.0, &mut grads.u.slice_mut(s![.., 2 * h..]));
            dh.slice_mut(s![..n, ..]).assign(&dh_prev);
        }

        let x_flat = cache.x.view().into_shape_with_order((steps * batch, input)).unwrap();
        let da_flat = da.view().into_shape_with_order((steps * batch, 3 * h)).unwrap();
        grads.w = x_flat.t().dot(&da_flat);
        grads.b = da_flat.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx = da_flat
            .dot(&self.w.t())
            .into_shape_with_order((steps, batch, input))
            .unwrap();
        (grads, dx)
    }
}

pub fn gru_forward(params: &GruParams, inputs: &Tensor3, mask: &FrameMask) -> Result<(Tensor3, GruCache)> {
    run_forward(params, inputs, mask)
}

pub fn gru_backward(params: &GruParams, cache: &GruCache, output_grad: &Tensor3) -> Result<(GruParams, Tensor3)> {
    run_backward(params, cache, output_grad)
}
