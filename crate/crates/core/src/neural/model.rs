//! The full regression network: masked input, a stack of bidirectional
//! recurrent layers with dropout after each, a hidden dense layer with
//! dropout, and a linear output layer. Padded frames output zero.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::bidir::{bidirectional_backward, bidirectional_forward, BiCache, Bidirectional};
use super::dense::{dense_backward, dense_forward, Activation, DenseCache, DenseParams};
use super::dropout::{dropout, DropoutMask};
use super::{FrameMask, GruParams, LstmParams, ParamTensors, Tensor3};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Bigrnn,
    Bilstm,
}

impl Architecture {
    pub fn id(self) -> &'static str {
        match self {
            Architecture::Bigrnn => "bigrnn",
            Architecture::Bilstm => "bilstm",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Architecture::Bigrnn => 1,
            Architecture::Bilstm => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Architecture::Bigrnn),
            2 => Some(Architecture::Bilstm),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bigrnn" => Some(Architecture::Bigrnn),
            "bilstm" => Some(Architecture::Bilstm),
            _ => None,
        }
    }

    fn gates(self) -> usize {
        match self {
            Architecture::Bigrnn => 3,
            Architecture::Bilstm => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub n_recurrent_layers: usize,
    pub hidden: usize,
    pub dense_hidden: usize,
    pub dense_activation: Activation,
    pub output_dim: usize,
    pub dropout: f64,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, input_dim: usize) -> Self {
        Self {
            architecture,
            input_dim,
            n_recurrent_layers: 3,
            hidden: 256,
            dense_hidden: 128,
            dense_activation: Activation::Tanh,
            output_dim: crate::N_TVS,
            dropout: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.dense_hidden == 0 || self.n_recurrent_layers == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.output_dim != crate::N_TVS {
            return Err(Error::Config(format!(
                "output dimension must be {}, got {}",
                crate::N_TVS,
                self.output_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let g = self.architecture.gates();
        let h = self.hidden;
        let mut total = 0;
        for l in 0..self.n_recurrent_layers {
            let input = if l == 0 { self.input_dim } else { 2 * h };
            total += 2 * g * h * (input + h + 1);
        }
        total + (2 * h + 1) * self.dense_hidden + (self.dense_hidden + 1) * self.output_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentLayer {
    Gru(Bidirectional<GruParams>),
    Lstm(Bidirectional<LstmParams>),
}

impl RecurrentLayer {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        match self {
            RecurrentLayer::Gru(l) => l.tensors(),
            RecurrentLayer::Lstm(l) => l.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            RecurrentLayer::Gru(l) => l.tensors_mut(),
            RecurrentLayer::Lstm(l) => l.tensors_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub layers: Vec<RecurrentLayer>,
    pub dense1: DenseParams,
    pub dense2: DenseParams,
}

impl ModelParams {
    /// Every tensor zero; used for gradients and as a load target.
    pub fn zeros(spec: &ModelSpec) -> Self {
        let h = spec.hidden;
        let layers = (0..spec.n_recurrent_layers)
            .map(|l| {
                let input = if l == 0 { spec.input_dim } else { 2 * h };
                match spec.architecture {
                    Architecture::Bigrnn => RecurrentLayer::Gru(Bidirectional {
                        fwd: GruParams::zeros(input, h),
                        bwd: GruParams::zeros(input, h),
                    }),
                    Architecture::Bilstm => RecurrentLayer::Lstm(Bidirectional {
                        fwd: LstmParams::zeros(input, h),
                        bwd: LstmParams::zeros(input, h),
                    }),
                }
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
            dense1: DenseParams::zeros(2 * h, spec.dense_hidden),
            dense2: DenseParams::zeros(spec.dense_hidden, spec.output_dim),
        }
    }

    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeding::rng(seed, "model-init");
        let h = spec.hidden;
        let layers = (0..spec.n_recurrent_layers)
            .map(|l| {
                let input = if l == 0 { spec.input_dim } else { 2 * h };
                match spec.architecture {
                    Architecture::Bigrnn => RecurrentLayer::Gru(Bidirectional {
                        fwd: GruParams::init(input, h, &mut rng),
                        bwd: GruParams::init(input, h, &mut rng),
                    }),
                    Architecture::Bilstm => RecurrentLayer::Lstm(Bidirectional {
                        fwd: LstmParams::init(input, h, &mut rng),
                        bwd: LstmParams::init(input, h, &mut rng),
                    }),
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            dense1: DenseParams::init(2 * h, spec.dense_hidden, &mut rng),
            dense2: DenseParams::init(spec.dense_hidden, spec.output_dim, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec)
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if !t.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence(format!("parameter {name} is not finite")));
            }
        }
        Ok(())
    }
}

impl ParamTensors for ModelParams {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.tensors().into_iter().map(|(n, t)| (format!("rnn{i}.{n}"), t)));
        }
        for (prefix, d) in [("dense0", &self.dense1), ("dense1", &self.dense2)] {
            out.extend(d.tensors().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend(self.dense1.tensors_mut());
        out.extend(self.dense2.tensors_mut());
        out
    }
}

enum LayerCache {
    Gru(BiCache<GruParams>),
    Lstm(BiCache<LstmParams>),
}

pub struct ModelCache {
    mask: FrameMask,
    layers: Vec<(LayerCache, DropoutMask)>,
    dense1: DenseCache,
    drop1: DropoutMask,
    dense2: DenseCache,
}

impl ModelCache {
    pub fn mask(&self) -> &FrameMask {
        &self.mask
    }
}

/// Dropout is active only when `training` supplies a generator.
pub fn model_forward(
    params: &ModelParams,
    features: &Tensor3,
    mask: &FrameMask,
    mut training: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor3, ModelCache)> {
    let spec = &params.spec;
    if features.dim() != spec.input_dim {
        return Err(Error::Shape(format!(
            "model expects {} feature dimensions, got {}",
            spec.input_dim,
            features.dim()
        )));
    }
    mask.ensure_matches(features)?;
    let mut x = features.clone().masked(mask);
    let mut drop = |x: &Tensor3| -> Result<(Tensor3, DropoutMask)> {
        match training.as_deref_mut() {
            Some(rng) => dropout(x, spec.dropout, rng, true),
            None => Ok((x.clone(), DropoutMask::Identity)),
        }
    };
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (y, cache) = match layer {
            RecurrentLayer::Gru(l) => {
                let (y, c) = bidirectional_forward(l, &x, mask)?;
                (y, LayerCache::Gru(c))
            }
            RecurrentLayer::Lstm(l) => {
                let (y, c) = bidirectional_forward(l, &x, mask)?;
                (y, LayerCache::Lstm(c))
            }
        };
        let (y, dm) = drop(&y)?;
        layers.push((cache, dm));
        x = y;
    }
    let (h1, dense1) = dense_forward(&params.dense1, spec.dense_activation, &x)?;
    let (h1, drop1) = drop(&h1)?;
    let (out, dense2) = dense_forward(&params.dense2, Activation::Linear, &h1)?;
    Ok((
        out.masked(mask),
        ModelCache {
            mask: mask.clone(),
            layers,
            dense1,
            drop1,
            dense2,
        },
    ))
}

pub fn model_backward(
    params: &ModelParams,
    cache: &ModelCache,
    output_grad: &Tensor3,
) -> Result<(ModelParams, Tensor3)> {
    let mask = &cache.mask;
    output_grad.ensure_shape(
        mask.batch(),
        mask.time(),
        params.spec.output_dim,
        "model output gradient",
    )?;
    let dy = output_grad.clone().masked(mask);
    let (g2, dh1) = dense_backward(&params.dense2, &cache.dense2, &dy)?;
    let dh1 = cache.drop1.apply(&dh1);
    let (g1, mut dx) = dense_backward(&params.dense1, &cache.dense1, &dh1)?;
    let mut grads_layers = Vec::with_capacity(params.layers.len());
    for (layer, (lc, dm)) in params.layers.iter().zip(&cache.layers).rev() {
        let dy = dm.apply(&dx);
        let g = match (layer, lc) {
            (RecurrentLayer::Gru(l), LayerCache::Gru(c)) => {
                let (g, d) = bidirectional_backward(l, c, &dy)?;
                dx = d;
                RecurrentLayer::Gru(g)
            }
            (RecurrentLayer::Lstm(l), LayerCache::Lstm(c)) => {
                let (g, d) = bidirectional_backward(l, c, &dy)?;
                dx = d;
                RecurrentLayer::Lstm(g)
            }
            _ => return Err(Error::Shape("cache does not match the model architecture".into())),
        };
        grads_layers.push(g);
    }
    grads_layers.reverse();
    Ok((
        ModelParams {
            spec: params.spec.clone(),
            layers: grads_layers,
            dense1: g1,
            dense2: g2,
        },
        dx.masked(mask),
    ))
}
