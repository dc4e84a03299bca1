//! Standard LSTM cell (input, forget and output gates, no peepholes).

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Axis, Zip};
use rand::Rng;

use super::init::{glorot_uniform, orthogonal};
use super::recurrent::{run_backward, run_forward, RecurrentCache, RecurrentCell};
use super::{sigmoid, FrameMask, ParamTensors, Tensor3};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `input × 4·hidden`, blocks ordered input gate, forget gate,
    /// candidate, output gate.
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array2<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((input, 4 * hidden)),
            u: Array2::zeros((hidden, 4 * hidden)),
            b: Array2::zeros((1, 4 * hidden)),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        for g in 0..4 {
            let cols = s![.., g * hidden..(g + 1) * hidden];
            p.w.slice_mut(cols).assign(&glorot_uniform(input, hidden, rng));
            p.u.slice_mut(cols).assign(&orthogonal(hidden, rng));
        }
        p
    }
}

impl ParamTensors for LstmParams {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        vec![("w".into(), &self.w), ("u".into(), &self.u), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }
}

pub struct LstmSteps {
    x: Array3<f64>,
    hs: Array3<f64>,
    cs: Array3<f64>,
    /// Post-activation gates `[i | f | g | o]` per step.
    gates: Array3<f64>,
    tanh_c: Array3<f64>,
}

pub type LstmCache = RecurrentCache<LstmParams>;

impl RecurrentCell for LstmParams {
    type Cache = LstmSteps;

    fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    fn hidden_dim(&self) -> usize {
        self.u.nrows()
    }

    fn forward_sorted(&self, x: Array3<f64>, active: &[usize]) -> (Array3<f64>, LstmSteps) {
        let (steps, batch, input) = x.dim();
        let h = self.hidden_dim();
        let flat = x.view().into_shape_with_order((steps * batch, input)).unwrap();
        let mut xw = flat.dot(&self.w);
        xw += &self.b;
        let xw = xw.into_shape_with_order((steps, batch, 4 * h)).unwrap();

        let mut hs = Array3::zeros((steps + 1, batch, h));
        let mut cs = Array3::zeros((steps + 1, batch, h));
        let mut gates = Array3::zeros((steps, batch, 4 * h));
        let mut tanh_c = Array3::zeros((steps, batch, h));
        let mut y = Array3::zeros((steps, batch, h));

        for t in 0..steps {
            let n = active[t];
            let (h_prev_all, mut h_next) = hs.multi_slice_mut((s![t, .., ..], s![t + 1, .., ..]));
            let (c_prev_all, mut c_next) = cs.multi_slice_mut((s![t, .., ..], s![t + 1, .., ..]));
            h_next.assign(&h_prev_all);
            c_next.assign(&c_prev_all);
            if n == 0 {
                continue;
            }
            let h_prev = h_prev_all.slice(s![..n, ..]);
            let c_prev = c_prev_all.slice(s![..n, ..]);
            let mut a = xw.slice(s![t, ..n, ..]).to_owned();
            general_mat_mul(1.0, &h_prev, &self.u, 1.0, &mut a);
            a.slice_mut(s![.., ..2 * h]).mapv_inplace(sigmoid);
            a.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
            a.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
            let gi = a.slice(s![.., ..h]);
            let gf = a.slice(s![.., h..2 * h]);
            let gg = a.slice(s![.., 2 * h..3 * h]);
            let go = a.slice(s![.., 3 * h..]);

            let mut tc = Array2::zeros((n, h));
            Zip::from(c_next.slice_mut(s![..n, ..]))
                .and(&mut tc)
                .and(&c_prev)
                .and(&gi)
                .and(&gf)
                .and(&gg)
                .for_each(|cn: &mut f64, tcv: &mut f64, &cp, &i, &f, &g| {
                    *cn = f * cp + i * g;
                    *tcv = cn.tanh();
                });
            Zip::from(h_next.slice_mut(s![..n, ..]))
                .and(&go)
                .and(&tc)
                .for_each(|hn, &o, &tcv| *hn = o * tcv);
            y.slice_mut(s![t, ..n, ..]).assign(&h_next.slice(s![..n, ..]));
            gates.slice_mut(s![t, ..n, ..]).assign(&a);
            tanh_c.slice_mut(s![t, ..n, ..]).assign(&tc);
        }
        (
            y,
            LstmSteps {
                x,
                hs,
                cs,
                gates,
                tanh_c,
            },
        )
    }

    fn backward_sorted(&self, cache: &LstmSteps, dy: &Array3<f64>, active: &[usize]) -> (Self, Array3<f64>) {
        let (steps, batch, input) = cache.x.dim();
        let h = self.hidden_dim();
        let mut grads = Self::zeros(input, h);
        let mut da = Array3::<f64>::zeros((steps, batch, 4 * h));
        let mut dh = Array2::<f64>::zeros((batch, h));
        let mut dc = Array2::<f64>::zeros((batch, h));

        for t in (0..steps).rev() {
            let n = active[t];
            if n == 0 {
                continue;
            }
            let h_prev = cache.hs.slice(s![t, ..n, ..]);
            let c_prev = cache.cs.slice(s![t, ..n, ..]);
            let g = cache.gates.slice(s![t, ..n, ..]);
            let (gi, gf, gg, go) = (
                g.slice(s![.., ..h]),
                g.slice(s![.., h..2 * h]),
                g.slice(s![.., 2 * h..3 * h]),
                g.slice(s![.., 3 * h..]),
            );
            let tc = cache.tanh_c.slice(s![t, ..n, ..]);
            let dht = &dh.slice(s![..n, ..]) + &dy.slice(s![t, ..n, ..]);

            // Total cell-state gradient at this step.
            let mut dct = dc.slice(s![..n, ..]).to_owned();
            Zip::from(&mut dct)
                .and(&dht)
                .and(&go)
                .and(&tc)
                .for_each(|d, &gh, &o, &tcv| *d += gh * o * (1.0 - tcv * tcv));

            let mut da_t = da.slice_mut(s![t, ..n, ..]);
            Zip::from(da_t.slice_mut(s![.., ..h]))
                .and(&dct)
                .and(&gi)
                .and(&gg)
                .for_each(|o, &d, &i, &gv| *o = d * gv * i * (1.0 - i));
            Zip::from(da_t.slice_mut(s![.., h..2 * h]))
                .and(&dct)
                .and(&gf)
                .and(&c_prev)
                .for_each(|o, &d, &f, &cp| *o = d * cp * f * (1.0 - f));
            Zip::from(da_t.slice_mut(s![.., 2 * h..3 * h]))
                .and(&dct)
                .and(&gi)
                .and(&gg)
                .for_each(|o, &d, &i, &gv| *o = d * i * (1.0 - gv * gv));
            Zip::from(da_t.slice_mut(s![.., 3 * h..]))
                .and(&dht)
                .and(&go)
                .and(&tc)
                .for_each(|o, &gh, &ov, &tcv| *o = gh * tcv * ov * (1.0 - ov));

            let da_t = da_t.view();
            let dh_prev = da_t.dot(&self.u.t());
            general_mat_mul(1.0, &h_prev.t(), &da_t, 1.0, &mut grads.u);
            dh.slice_mut(s![..n, ..]).assign(&dh_prev);
            let dc_prev = &dct * &gf;
            dc.slice_mut(s![..n, ..]).assign(&dc_prev);
        }

        let x_flat = cache.x.view().into_shape_with_order((steps * batch, input)).unwrap();
        let da_flat = da.view().into_shape_with_order((steps * batch, 4 * h)).unwrap();
        grads.w = x_flat.t().dot(&da_flat);
        grads.b = da_flat.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx = da_flat
            .dot(&self.w.t())
            .into_shape_with_order((steps, batch, input))
            .unwrap();
        (grads, dx)
    }
}

pub fn lstm_forward(params: &LstmParams, inputs: &Tensor3, mask: &FrameMask) -> Result<(Tensor3, LstmCache)> {
    run_forward(params, inputs, mask)
}

pub fn lstm_backward(params: &LstmParams, cache: &LstmCache, output_grad: &Tensor3) -> Result<(LstmParams, Tensor3)> {
    run_backward(params, cache, output_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::testutil::*;
    use crate::seeding;

    fn oracle(p: &LstmParams, x: &Tensor3, mask: &FrameMask) -> Array3<f64> {
        let (batch, steps, input) = x.0.dim();
        let h = p.hidden_dim();
        let mut y = Array3::zeros((batch, steps, h));
        for b in 0..batch {
            let mut hv = vec![0.0; h];
            let mut cv = vec![0.0; h];
            for t in 0..mask.lengths()[b] {
                let pre = |g: usize, j: usize| {
                    let col = g * h + j;
                    let mut acc = p.b[[0, col]];
                    for i in 0..input {
                        acc += x.0[[b, t, i]] * p.w[[i, col]];
                    }
                    for k in 0..h {
                        acc += hv[k] * p.u[[k, col]];
                    }
                    acc
                };
                let gi: Vec<f64> = (0..h).map(|j| sigmoid(pre(0, j))).collect();
                let gf: Vec<f64> = (0..h).map(|j| sigmoid(pre(1, j))).collect();
                let gg: Vec<f64> = (0..h).map(|j| pre(2, j).tanh()).collect();
                let go: Vec<f64> = (0..h).map(|j| sigmoid(pre(3, j))).collect();
                for j in 0..h {
                    cv[j] = gf[j] * cv[j] + gi[j] * gg[j];
                    hv[j] = go[j] * cv[j].tanh();
                    y[[b, t, j]] = hv[j];
                }
            }
        }
        y
    }

    fn random_params(rng: &mut impl rand::Rng, d: usize, h: usize) -> LstmParams {
        LstmParams {
            w: random_matrix(rng, d, 4 * h, 0.8),
            u: random_matrix(rng, h, 4 * h, 0.8),
            b: random_matrix(rng, 1, 4 * h, 0.5),
        }
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        // i = f = o = 0.5, g = 0: the cell state and output stay at zero.
        let p = LstmParams::zeros(3, 4);
        let mut rng = seeding::rng(0, "lstm0");
        let x = random_tensor(&mut rng, 2, 5, 3);
        let (y, _) = lstm_forward(&p, &x, &FrameMask::full(2, 5)).unwrap();
        assert!(y.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_oracle() {
        for seed in 0..5 {
            let mut rng = seeding::rng_indexed(1, "lstm-oracle", seed);
            let p = random_params(&mut rng, 3, 4);
            let x = random_tensor(&mut rng, 2, 5, 3);
            let mask = FrameMask::from_lengths(vec![2, 5], 5).unwrap();
            let (y, _) = lstm_forward(&p, &x, &mask).unwrap();
            for (a, b) in y.0.iter().zip(oracle(&p, &x, &mask).iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = seeding::rng_indexed(2, "lstm-fd", seed);
            let p = random_params(&mut rng, 3, 4);
            let x = random_tensor(&mut rng, 2, 5, 3);
            let dy = random_tensor(&mut rng, 2, 5, 4);
            let mask = FrameMask::from_lengths(vec![4, 5], 5).unwrap();
            let loss = |q: &LstmParams| {
                let (y, _) = lstm_forward(q, &x, &mask).unwrap();
                (&y.0 * &dy.0).sum()
            };
            let (_, cache) = lstm_forward(&p, &x, &mask).unwrap();
            let (g, dx) = lstm_backward(&p, &cache, &dy).unwrap();
            let worst = check_grads(&p, &g, loss, 1e-4);
            assert!(worst <= 1e-4, "seed {seed}: rel err {worst}");
            let idx = [1, 2, 1];
            let f = |v: f64| {
                let mut x2 = x.clone();
                x2.0[idx] = v;
                let (y, _) = lstm_forward(&p, &x2, &mask).unwrap();
                (&y.0 * &dy.0).sum()
            };
            let v = x.0[idx];
            assert!(rel_err(dx.0[idx], (f(v + 1e-4) - f(v - 1e-4)) / 2e-4) <= 1e-4);
        }
    }

    #[test]
    fn padded_frames_get_no_gradient() {
        let mut rng = seeding::rng(3, "lstm-pad");
        let p = random_params(&mut rng, 3, 4);
        let x = random_tensor(&mut rng, 2, 6, 3);
        let mask = FrameMask::from_lengths(vec![6, 1], 6).unwrap();
        let (_, cache) = lstm_forward(&p, &x, &mask).unwrap();
        let (g, dx) = lstm_backward(&p, &cache, &Tensor3::zeros(2, 6, 4)).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
        assert!(dx.0.iter().all(|&v| v == 0.0));
        let (_, dx) = lstm_backward(&p, &cache, &random_tensor(&mut rng, 2, 6, 4)).unwrap();
        assert!(dx.0.slice(s![1, 1.., ..]).iter().all(|&v| v == 0.0));
    }
}
