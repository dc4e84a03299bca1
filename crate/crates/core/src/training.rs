//! Optimization: Adam, the step learning-rate schedule, early-stopped
//! training, grid search and per-speaker adaptation.

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses_metrics::{loss, EvalReport, Evaluator, Granularity, LossSpec};
use crate::neural::{model_backward, model_forward, ModelParams, ParamTensors};
use crate::{seeding, N_TVS};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &impl ParamTensors) -> Self {
        let zeros: Vec<_> = params.tensors().iter().map(|(_, t)| Array2::zeros(t.dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<P: ParamTensors>(params: &mut P, grads: &P, state: &mut AdamState, lr: f64) -> Result<()> {
    let grads = grads.tensors();
    if grads.len() != state.m.len() {
        return Err(Error::Shape("optimizer state does not match the parameters".into()));
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.iter().all(|v| v.is_finite())) {
        return Err(Error::Divergence(format!("non-finite gradient in {name}")));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, (_, g)), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if p.dim() != g.dim() {
            return Err(Error::Shape("gradient shape differs from its parameter".into()));
        }
        ndarray::Zip::from(p).and(*g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub warm_epochs: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: LossSpec,
    pub granularity: Granularity,
    /// Parameter-name prefixes kept fixed during training.
    pub freeze: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            batch_size: 128,
            warm_epochs: 20,
            decay_every: 5,
            decay_factor: 0.9,
            patience: 5,
            max_epochs: 200,
            seed: 0,
            loss: LossSpec::Ppmc,
            granularity: Granularity::PerSequence,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay_factor {} outside (0, 1)",
                self.decay_factor
            )));
        }
        if self.patience == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config(
                "patience, batch_size and decay_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate for 1-based `epoch`: `lr0` through `warm_epochs`, then one
/// multiplication by `decay_factor` at epochs `warm + 1`,
/// `warm + 1 + decay_every`, and so on.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    if epoch <= config.warm_epochs {
        return config.lr0;
    }
    let decays = (epoch - config.warm_epochs - 1) / config.decay_every + 1;
    config.lr0 * config.decay_factor.powi(decays as i32)
}

/// Per-TV affine scaling of targets, fitted on training frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNorm {
    pub mean: [f64; N_TVS],
    pub std: [f64; N_TVS],
}

impl TargetNorm {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; N_TVS],
            std: [1.0; N_TVS],
        }
    }

    pub fn fit(data: &Dataset) -> Result<Self> {
        let n = data.valid_frames();
        if n == 0 {
            return Err(Error::Data("cannot fit target normalization on an empty set".into()));
        }
        let mut mean = [0.0; N_TVS];
        for e in &data.examples {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += e.targets.slice(s![..e.valid, c]).sum();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = [0.0; N_TVS];
        for e in &data.examples {
            for (c, v) in var.iter_mut().enumerate() {
                *v += e.targets.slice(s![..e.valid, c]).mapv(|x| (x - mean[c]).powi(2)).sum();
            }
        }
        let std = var.map(|v| (v / n as f64).sqrt().max(1e-8));
        Ok(Self { mean, std })
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((2, N_TVS));
        for c in 0..N_TVS {
            m[[0, c]] = self.mean[c];
            m[[1, c]] = self.std[c];
        }
        m
    }

    pub fn from_matrix(m: &Array2<f64>) -> Result<Self> {
        if m.dim() != (2, N_TVS) || m.row(1).iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Data("malformed target normalization block".into()));
        }
        Ok(Self {
            mean: std::array::from_fn(|c| m[[0, c]]),
            std: std::array::from_fn(|c| m[[1, c]]),
        })
    }

    /// In-place on the valid rows of a `frames × 6` matrix.
    pub fn normalize(&self, tv: &mut Array2<f64>, valid: usize) {
        for (c, mut col) in tv.slice_mut(s![..valid, ..]).axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|x| (x - self.mean[c]) / self.std[c]);
        }
    }

    pub fn denormalize(&self, tv: &mut Array2<f64>, valid: usize) {
        for (c, mut col) in tv.slice_mut(s![..valid, ..]).axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|x| x * self.std[c] + self.mean[c]);
        }
    }

    /// Copy of `data` with normalized targets.
    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for e in &mut out.examples {
            self.normalize(&mut e.targets, e.valid);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_ppmc: f64,
}

pub const HISTORY_HEADER: &str = "epoch\tlr\ttrain_loss\tdev_loss\tdev_ppmc";

impl EpochRecord {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.3e}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.lr, self.train_loss, self.dev_loss, self.dev_ppmc
        )
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the lowest dev loss.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_dev_loss: f64,
}

pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.to_tsv());
        out.push('\n');
    }
    out
}

const EVAL_BATCH: usize = 64;

/// Predictions for every example, `frames × 6` each, zero past `valid`.
pub fn predict(params: &ModelParams, data: &Dataset) -> Result<Vec<Array2<f64>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _, mask) = data.batch(chunk);
        let (y, _) = model_forward(params, &x, &mask, None)?;
        out.extend(y.0.outer_iter().map(|m| m.to_owned()));
    }
    Ok(out)
}

/// Metrics of `params` on `data`, whose targets are in raw units;
/// predictions are mapped back through `norm` first.
pub fn evaluate_model(
    params: &ModelParams,
    data: &Dataset,
    norm: &TargetNorm,
    granularity: Granularity,
) -> Result<EvalReport> {
    let mut ev = Evaluator::new();
    for (mut p, e) in predict(params, data)?.into_iter().zip(&data.examples) {
        norm.denormalize(&mut p, e.valid);
        ev.add(p.view(), e.targets.view(), e.valid)?;
    }
    ev.finish(granularity)
}

/// Dev loss (frame-weighted over batches) and pooled dev PPMC.
fn dev_metrics(params: &ModelParams, dev: &Dataset, config: &TrainConfig) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..dev.len()).collect();
    let mut ev = Evaluator::new();
    let (mut total, mut weight) = (0.0, 0.0);
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y, mask) = dev.batch(chunk);
        let (p, _) = model_forward(params, &x, &mask, None)?;
        let (l, _) = loss(config.loss, &p, &y, &mask, config.granularity)?;
        let w = mask.valid_count() as f64;
        total += l * w;
        weight += w;
        ev.add_batch(&p, &y, &mask)?;
    }
    Ok((total / weight, ev.finish(Granularity::Pooled)?.average.ppmc))
}

fn check_sets(train: &Dataset, dev: &Dataset, params: &ModelParams) -> Result<()> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("training and dev sets must be non-empty".into()));
    }
    for d in [train, dev] {
        if d.dims != params.spec.input_dim {
            return Err(Error::Config(format!(
                "model expects {} feature dims, data has {}",
                params.spec.input_dim, d.dims
            )));
        }
    }
    Ok(())
}

/// Trains with seeded shuffling and dropout until the dev loss has not
/// improved for `patience` epochs. Targets must already be normalized.
pub fn fit(initial: ModelParams, train: &Dataset, dev: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    fit_with(initial, train, dev, config, &mut |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    initial: ModelParams,
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitResult> {
    config.validate()?;
    check_sets(train, dev, &initial)?;
    let frozen: Vec<bool> = initial
        .tensors()
        .iter()
        .map(|(name, _)| config.freeze.iter().any(|p| name.starts_with(p.as_str())))
        .collect();
    let mut params = initial;
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let lr = lr_at(epoch, config);
        order.sort_unstable();
        order.shuffle(&mut seeding::rng_indexed(config.seed, "train/shuffle", epoch as u64));
        let mut drop_rng = seeding::rng_indexed(config.seed, "train/dropout", epoch as u64);
        let (mut total, mut weight) = (0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let (x, y, mask) = train.batch(chunk);
            let (pred, cache) = model_forward(&params, &x, &mask, Some(&mut drop_rng))?;
            let (l, grad) = loss(config.loss, &pred, &y, &mask, config.granularity)?;
            if !l.is_finite() {
                return Err(Error::Divergence(format!("training loss is {l} in epoch {epoch}")));
            }
            let (mut grads, _) = model_backward(&params, &cache, &grad)?;
            for (g, &f) in grads.tensors_mut().into_iter().zip(&frozen) {
                if f {
                    g.fill(0.0);
                }
            }
            adam_step(&mut params, &grads, &mut adam, lr)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}: {e}")))?;
            let w = mask.valid_count() as f64;
            total += l * w;
            weight += w;
        }
        let (dev_loss, dev_ppmc) = dev_metrics(&params, dev, config)?;
        if !dev_loss.is_finite() {
            return Err(Error::Divergence(format!("dev loss is {dev_loss} in epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / weight,
            dev_loss,
            dev_ppmc,
        };
        on_epoch(&record);
        history.push(record);
        if dev_loss < best_loss {
            best_loss = dev_loss;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(FitResult {
        params: best,
        history,
        best_epoch,
        best_dev_loss: best_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub lr: f64,
    pub batch_size: usize,
    pub dev_loss: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Sorted by dev loss, ascending.
    pub table: Vec<GridCell>,
    pub best: GridCell,
}

impl GridResult {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lr\tbatch_size\tdev_loss\tbest_epoch\n");
        for c in &self.table {
            out.push_str(&format!(
                "{:e}\t{}\t{:.6}\t{}\n",
                c.lr, c.batch_size, c.dev_loss, c.best_epoch
            ));
        }
        out
    }
}

pub const DEFAULT_LR_GRID: [f64; 3] = [1e-3, 3e-4, 1e-4];
pub const DEFAULT_BATCH_GRID: [usize; 4] = [16, 32, 64, 128];

/// One training run per (lr, batch size) cell, each with its own derived
/// seed. Model initialization uses `init_seed` in every cell.
pub fn grid_search(
    spec: &crate::neural::ModelSpec,
    init_seed: u64,
    train: &Dataset,
    dev: &Dataset,
    base: &TrainConfig,
    lrs: &[f64],
    batch_sizes: &[usize],
) -> Result<GridResult> {
    if lrs.is_empty() || batch_sizes.is_empty() {
        return Err(Error::Config(
            "grid search needs at least one lr and one batch size".into(),
        ));
    }
    let cells: Vec<(f64, usize)> = lrs
        .iter()
        .flat_map(|&lr| batch_sizes.iter().map(move |&b| (lr, b)))
        .collect();
    let initial = ModelParams::init(spec, init_seed)?;
    let mut table = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(lr, batch_size))| {
            let config = TrainConfig {
                lr0: lr,
                batch_size,
                seed: seeding::derive_indexed(base.seed, "grid", i as u64),
                ..base.clone()
            };
            let r = fit(initial.clone(), train, dev, &config)
                .map_err(|e| annotate(e, &format!("grid cell lr={lr:e} batch={batch_size}")))?;
            Ok(GridCell {
                lr,
                batch_size,
                dev_loss: r.best_dev_loss,
                best_epoch: r.best_epoch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    table.sort_by(|a, b| a.dev_loss.total_cmp(&b.dev_loss));
    Ok(GridResult {
        best: table[0].clone(),
        table,
    })
}

fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{context}: {m}")),
        Error::Data(m) => Error::Data(format!("{context}: {m}")),
        Error::Shape(m) => Error::Shape(format!("{context}: {m}")),
        Error::Divergence(m) => Error::Divergence(format!("{context}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub warm_epochs: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Train, dev and test shares of the speaker's utterances.
    pub fractions: (f64, f64, f64),
    pub seed: u64,
    pub loss: LossSpec,
    pub granularity: Granularity,
    pub freeze: Vec<String>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            lr0: 1e-4,
            warm_epochs: 2,
            decay_every: 2,
            decay_factor: 0.9,
            patience: 30,
            max_epochs: 200,
            fractions: (0.8, 0.1, 0.1),
            seed: 0,
            loss: LossSpec::Ppmc,
            granularity: Granularity::PerSequence,
            freeze: Vec::new(),
        }
    }
}

impl AdaptConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            batch_size: self.batch_size,
            warm_epochs: self.warm_epochs,
            decay_every: self.decay_every,
            decay_factor: self.decay_factor,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed: self.seed,
            loss: self.loss,
            granularity: self.granularity,
            freeze: self.freeze.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptResult {
    pub params: ModelParams,
    pub before: EvalReport,
    pub after: EvalReport,
    /// Utterance counts in the speaker's train, dev and test parts.
    pub sizes: (usize, usize, usize),
    pub history: Vec<EpochRecord>,
}

pub const MIN_ADAPT_UTTERANCES: usize = 10;

/// Utterance-level split of one speaker's examples.
pub fn speaker_split(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = fractions;
    if (a + b + c - 1.0).abs() > 1e-9 || a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(Error::Config(format!(
            "adaptation fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut utts: Vec<String> = data.examples.iter().map(|e| e.utterance_id.clone()).collect();
    utts.sort();
    utts.dedup();
    let n = utts.len();
    if n < MIN_ADAPT_UTTERANCES {
        return Err(Error::Data(format!(
            "speaker has {n} utterances, adaptation needs at least {MIN_ADAPT_UTTERANCES}"
        )));
    }
    utts.shuffle(&mut seeding::rng(seed, "adapt/split"));
    let n_dev = ((n as f64 * b).round() as usize).max(1);
    let n_test = ((n as f64 * c).round() as usize).max(1);
    let n_train = n - n_dev - n_test;
    let part = |ids: &[String]| data.filtered(|e| ids.contains(&e.utterance_id));
    Ok((
        part(&utts[..n_train]),
        part(&utts[n_train..n_train + n_dev]),
        part(&utts[n_train + n_dev..]),
    ))
}

/// Fine-tunes `pretrained` on one speaker. `speaker_data` holds raw-unit
/// targets; `norm` is the pretrained model's target normalization.
pub fn adapt_speaker(
    pretrained: &ModelParams,
    norm: &TargetNorm,
    speaker_data: &Dataset,
    config: &AdaptConfig,
) -> Result<AdaptResult> {
    let (train, dev, test) = speaker_split(speaker_data, config.fractions, config.seed)?;
    let count = |d: &Dataset| {
        let mut ids: Vec<&str> = d.examples.iter().map(|e| e.utterance_id.as_str()).collect();
        ids.dedup();
        ids.len()
    };
    let sizes = (count(&train), count(&dev), count(&test));
    let before = evaluate_model(pretrained, &test, norm, Granularity::Pooled)?;
    let fit = fit(
        pretrained.clone(),
        &norm.apply(&train),
        &norm.apply(&dev),
        &config.train_config(),
    )?;
    let after = evaluate_model(&fit.params, &test, norm, Granularity::Pooled)?;
    Ok(AdaptResult {
        params: fit.params,
        before,
        after,
        sizes,
        history: fit.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Example;
    use crate::neural::{Architecture, ModelSpec};

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn lr_schedule_values() {
        let c = cfg();
        assert_eq!(lr_at(1, &c), 1e-3);
        assert_eq!(lr_at(20, &c), 1e-3);
        assert!((lr_at(21, &c) - 9e-4).abs() < 1e-15);
        assert!((lr_at(25, &c) - 9e-4).abs() < 1e-15);
        assert!((lr_at(26, &c) - 8.1e-4).abs() < 1e-15);
        assert!((lr_at(31, &c) - 7.29e-4).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for e in 1..200 {
            let lr = lr_at(e, &c);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[derive(Clone)]
    struct Scalar(Array2<f64>);

    impl ParamTensors for Scalar {
        fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
            vec![("x".into(), &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn adam_matches_scalar_recurrence() {
        let g = 0.3;
        let lr = 0.01;
        let mut p = Scalar(Array2::from_elem((1, 1), 1.0));
        let grads = Scalar(Array2::from_elem((1, 1), g));
        let mut st = AdamState::new(&p);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for k in 1..=25 {
            adam_step(&mut p, &grads, &mut st, lr).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(k));
            let vh = v / (1.0 - 0.999f64.powi(k));
            x -= lr * mh / (vh.sqrt() + 1e-7);
            assert!((p.0[[0, 0]] - x).abs() < 1e-14);
        }
        assert_eq!(st.step, 25);
    }

    #[test]
    fn adam_zero_gradient_and_divergence() {
        let mut p = Scalar(Array2::from_elem((2, 2), 0.5));
        let zero = Scalar(Array2::zeros((2, 2)));
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &zero, &mut st, 0.1).unwrap();
        assert_eq!(p.0, Array2::from_elem((2, 2), 0.5));
        assert_eq!(st.step, 1);
        let bad = Scalar(Array2::from_elem((2, 2), f64::NAN));
        assert!(matches!(
            adam_step(&mut p, &bad, &mut st, 0.1),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn adam_sees_only_the_summed_gradient() {
        let mut a = Scalar(Array2::from_elem((1, 3), 0.2));
        let mut b = a.clone();
        let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
        let whole = Scalar(ndarray::array![[0.3, -0.1, 0.7]]);
        let half1 = ndarray::array![[0.1, -0.4, 0.2]];
        let summed = Scalar(&half1 + &(&whole.0 - &half1));
        adam_step(&mut a, &whole, &mut sa, 0.01).unwrap();
        adam_step(&mut b, &summed, &mut sb, 0.01).unwrap();
        assert_eq!(a.0, b.0);
    }

    /// Toy data: targets are a fixed linear map of the features.
    fn toy(seed: u64, n: usize, dims: usize) -> Dataset {
        use rand::Rng;
        let mut rng = seeding::rng(seed, "toy");
        let frames = 12;
        let map = Array2::from_shape_fn((dims, N_TVS), |(i, j)| ((i + 2 * j) as f64 * 0.7).sin());
        let examples = (0..n)
            .map(|i| {
                let valid = rng.gen_range(6..=frames);
                let mut features = Array2::zeros((frames, dims));
                for t in 0..valid {
                    for d in 0..dims {
                        features[[t, d]] = (0.4 * t as f64 + d as f64 + i as f64).sin() + rng.gen_range(-0.1..0.1);
                    }
                }
                let targets = features.dot(&map);
                Example {
                    utterance_id: format!("U{:03}", i / 2),
                    speaker: crate::corpus::SpeakerId::new("S01").unwrap(),
                    lineage: crate::corpus::Lineage::Clean,
                    segment: i % 2,
                    features,
                    targets,
                    valid,
                }
            })
            .collect();
        Dataset {
            kind: crate::features::FeatureKind::Mfcc,
            frames,
            dims,
            examples,
        }
    }

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            architecture: Architecture::Bigrnn,
            input_dim: 3,
            n_recurrent_layers: 1,
            hidden: 6,
            dense_hidden: 8,
            dense_activation: crate::neural::Activation::Tanh,
            output_dim: N_TVS,
            dropout: 0.1,
        }
    }

    #[test]
    fn fit_improves_and_is_deterministic() {
        let train = toy(1, 24, 3);
        let dev = toy(2, 8, 3);
        let config = TrainConfig {
            lr0: 1e-2,
            batch_size: 8,
            max_epochs: 6,
            loss: LossSpec::Mse,
            ..cfg()
        };
        let init = ModelParams::init(&tiny_spec(), 4).unwrap();
        let a = fit(init.clone(), &train, &dev, &config).unwrap();
        let b = fit(init, &train, &dev, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        let h = &a.history;
        assert!(h.windows(2).any(|w| w[1].dev_loss < w[0].dev_loss));
        let best = h.iter().map(|r| r.dev_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_dev_loss, best);
        assert_eq!(h[a.best_epoch - 1].dev_loss, best);
    }

    #[test]
    fn patience_one_stops_after_two_epochs() {
        let train = toy(1, 8, 3);
        let dev = toy(2, 4, 3);
        // Steps this small only move zero-valued entries, by subnormal
        // amounts, so the dev loss cannot improve after the first epoch.
        let config = TrainConfig {
            lr0: f64::MIN_POSITIVE,
            batch_size: 4,
            patience: 1,
            max_epochs: 50,
            loss: LossSpec::Mae,
            ..cfg()
        };
        let init = ModelParams::init(&tiny_spec(), 4).unwrap();
        let r = fit(init.clone(), &train, &dev, &config).unwrap();
        assert_eq!(r.history.len(), 2);
        assert_eq!(r.best_epoch, 1);
        for ((_, a), (_, b)) in r.params.tensors().iter().zip(init.tensors()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-300));
        }
    }

    #[test]
    fn frozen_tensors_stay_fixed() {
        let train = toy(1, 8, 3);
        let dev = toy(2, 4, 3);
        let config = TrainConfig {
            lr0: 1e-2,
            batch_size: 4,
            max_epochs: 2,
            loss: LossSpec::Mse,
            freeze: vec!["rnn".into()],
            ..cfg()
        };
        let init = ModelParams::init(&tiny_spec(), 4).unwrap();
        let r = fit(init.clone(), &train, &dev, &config).unwrap();
        assert_eq!(r.params.layers, init.layers);
        assert_ne!(r.params.dense2, init.dense2);
    }

    #[test]
    fn target_norm_round_trip() {
        let d = toy(3, 6, 3);
        let norm = TargetNorm::fit(&d).unwrap();
        let n = norm.apply(&d);
        let renorm = TargetNorm::fit(&n).unwrap();
        for c in 0..N_TVS {
            assert!(renorm.mean[c].abs() < 1e-9 && (renorm.std[c] - 1.0).abs() < 1e-9);
        }
        for (a, b) in n.examples.iter().zip(&d.examples) {
            let mut t = a.targets.clone();
            norm.denormalize(&mut t, a.valid);
            for (x, y) in t.iter().zip(b.targets.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_eq!(TargetNorm::from_matrix(&norm.to_matrix()).unwrap(), norm);
    }

    #[test]
    fn grid_table_is_sorted_and_complete() {
        let train = toy(1, 8, 3);
        let dev = toy(2, 4, 3);
        let base = TrainConfig {
            max_epochs: 2,
            loss: LossSpec::Mse,
            ..cfg()
        };
        let r = grid_search(&tiny_spec(), 1, &train, &dev, &base, &[1e-2, 1e-3], &[4, 8]).unwrap();
        assert_eq!(r.table.len(), 4);
        assert!(r.table.windows(2).all(|w| w[0].dev_loss <= w[1].dev_loss));
        assert_eq!(r.best, r.table[0]);
        let one = grid_search(&tiny_spec(), 1, &train, &dev, &base, &[1e-3], &[4]).unwrap();
        assert_eq!((one.best.lr, one.best.batch_size), (1e-3, 4));
        assert!(grid_search(&tiny_spec(), 1, &train, &dev, &base, &[], &[4]).is_err());
        assert_eq!(DEFAULT_LR_GRID.len() * DEFAULT_BATCH_GRID.len(), 12);
    }

    #[test]
    fn zero_epoch_adaptation_is_identity() {
        let data = toy(5, 24, 3);
        let init = ModelParams::init(&tiny_spec(), 4).unwrap();
        let norm = TargetNorm::fit(&data).unwrap();
        let config = AdaptConfig {
            max_epochs: 0,
            loss: LossSpec::Mse,
            ..AdaptConfig::default()
        };
        let r = adapt_speaker(&init, &norm, &data, &config).unwrap();
        assert_eq!(r.before, r.after);
        assert_eq!(r.params, init);
        assert_eq!(r.sizes, (10, 1, 1));
        let few = data.filtered(|e| e.utterance_id < "U009".to_string());
        assert!(matches!(
            adapt_speaker(&init, &norm, &few, &config),
            Err(Error::Data(_))
        ));
    }
}
