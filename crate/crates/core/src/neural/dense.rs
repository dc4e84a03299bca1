//! Time-distributed affine layer.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use super::init::glorot_uniform;
use super::{ParamTensors, Tensor3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
}

impl Activation {
    pub fn id(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Activation::Linear),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `input × output`.
    pub w: Array2<f64>,
    /// `1 × output`.
    pub b: Array2<f64>,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array2::zeros((1, output)),
        }
    }

    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: glorot_uniform(input, output, rng),
            b: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }
}

impl ParamTensors for DenseParams {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}

pub struct DenseCache {
    x: Array2<f64>,
    y: Array2<f64>,
    activation: Activation,
    shape: (usize, usize),
}

pub fn dense_forward(params: &DenseParams, activation: Activation, inputs: &Tensor3) -> Result<(Tensor3, DenseCache)> {
    let (b, t, d) = inputs.0.dim();
    if d != params.input_dim() {
        return Err(Error::Shape(format!(
            "dense layer expects {} input features, got {d}",
            params.input_dim()
        )));
    }
    let x = inputs
        .0
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * t, d))
        .unwrap();
    let mut y = x.dot(&params.w);
    y += &params.b;
    if activation == Activation::Tanh {
        y.mapv_inplace(f64::tanh);
    }
    let out = y.clone().into_shape_with_order((b, t, params.output_dim())).unwrap();
    Ok((
        Tensor3(out),
        DenseCache {
            x,
            y,
            activation,
            shape: (b, t),
        },
    ))
}

pub fn dense_backward(
    params: &DenseParams,
    cache: &DenseCache,
    output_grad: &Tensor3,
) -> Result<(DenseParams, Tensor3)> {
    let (b, t) = cache.shape;
    output_grad.ensure_shape(b, t, params.output_dim(), "dense output gradient")?;
    let mut da = output_grad
        .0
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * t, params.output_dim()))
        .unwrap();
    if cache.activation == Activation::Tanh {
        da.zip_mut_with(&cache.y, |g, &y| *g *= 1.0 - y * y);
    }
    let grads = DenseParams {
        w: cache.x.t().dot(&da),
        b: da.sum_axis(Axis(0)).insert_axis(Axis(0)),
    };
    let dx: Array3<f64> = da
        .dot(&params.w.t())
        .into_shape_with_order((b, t, params.input_dim()))
        .unwrap();
    Ok((grads, Tensor3(dx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::testutil::*;
    use crate::seeding;

    #[test]
    fn identity_weights_pass_through() {
        let mut rng = seeding::rng(0, "dense-id");
        let p = DenseParams {
            w: Array2::eye(4),
            b: Array2::zeros((1, 4)),
        };
        let x = random_tensor(&mut rng, 2, 3, 4);
        let (y, _) = dense_forward(&p, Activation::Linear, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias_rows() {
        let mut rng = seeding::rng(0, "dense-bias");
        let p = DenseParams {
            w: random_matrix(&mut rng, 3, 2, 1.0),
            b: ndarray::array![[0.25, -1.5]],
        };
        let (y, _) = dense_forward(&p, Activation::Linear, &Tensor3::zeros(2, 4, 3)).unwrap();
        for row in y.0.lanes(Axis(2)) {
            assert_eq!(row.to_vec(), vec![0.25, -1.5]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            for act in [Activation::Linear, Activation::Tanh] {
                let mut rng = seeding::rng_indexed(1, "dense-fd", seed);
                let p = DenseParams {
                    w: random_matrix(&mut rng, 3, 4, 1.0),
                    b: random_matrix(&mut rng, 1, 4, 0.5),
                };
                let x = random_tensor(&mut rng, 2, 3, 3);
                let dy = random_tensor(&mut rng, 2, 3, 4);
                let loss = |q: &DenseParams| {
                    let (y, _) = dense_forward(q, act, &x).unwrap();
                    (&y.0 * &dy.0).sum()
                };
                let (_, cache) = dense_forward(&p, act, &x).unwrap();
                let (g, dx) = dense_backward(&p, &cache, &dy).unwrap();
                assert!(check_grads(&p, &g, loss, 1e-4) <= 1e-4);
                let f = |v: f64| {
                    let mut x2 = x.clone();
                    x2.0[[1, 2, 0]] = v;
                    let (y, _) = dense_forward(&p, act, &x2).unwrap();
                    (&y.0 * &dy.0).sum()
                };
                let v = x.0[[1, 2, 0]];
                assert!(rel_err(dx.0[[1, 2, 0]], (f(v + 1e-4) - f(v - 1e-4)) / 2e-4) <= 1e-4);
            }
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let p = DenseParams::zeros(3, 2);
        assert!(dense_forward(&p, Activation::Linear, &Tensor3::zeros(1, 1, 4)).is_err());
    }
}
