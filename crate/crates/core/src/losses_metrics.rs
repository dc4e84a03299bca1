//! Masked sequence-regression losses and evaluation metrics.
//!
//! All losses read only valid frames and return a gradient with respect
//! to the predictions that is exactly zero on padded frames.

use std::fmt;

use ndarray::{s, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::neural::{FrameMask, Tensor3};
use crate::{N_TVS, TV_NAMES};

/// Floor applied to `σx·σy` in the PPMC denominator.
pub const PPMC_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ppmc {
    pub value: f64,
    /// Either input was constant; `value` is 0 by definition.
    pub degenerate: bool,
}

/// Pearson correlation of two equal-length sequences.
pub fn ppmc(x: &[f64], y: &[f64]) -> Result<Ppmc> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "ppmc inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Data("ppmc needs at least two points".into()));
    }
    let s = PairStats::new(ArrayView1::from(x), ArrayView1::from(y));
    Ok(s.ppmc())
}

/// Centered second moments of a pair of sequences.
struct PairStats {
    n: f64,
    mx: f64,
    my: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl PairStats {
    fn new(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Self {
        let n = x.len() as f64;
        let mx = x.sum() / n;
        let my = y.sum() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(y.iter()) {
            let (da, db) = (a - mx, b - my);
            sxx += da * da;
            syy += db * db;
            sxy += da * db;
        }
        Self {
            n,
            mx,
            my,
            sxx,
            syy,
            sxy,
        }
    }

    fn sigma_prod(&self) -> f64 {
        (self.sxx * self.syy).sqrt() / self.n
    }

    fn ppmc(&self) -> Ppmc {
        if self.sxx == 0.0 || self.syy == 0.0 {
            return Ppmc {
                value: 0.0,
                degenerate: true,
            };
        }
        let r = (self.sxy / self.n) / self.sigma_prod().max(PPMC_EPS);
        Ppmc {
            value: r.clamp(-1.0, 1.0),
            degenerate: false,
        }
    }

    /// `r` with the ε floor, and `∂r/∂x_i` written into `out`.
    fn ppmc_grad(
        &self,
        x: ArrayView1<'_, f64>,
        y: ArrayView1<'_, f64>,
        mut out: ndarray::ArrayViewMut1<'_, f64>,
    ) -> f64 {
        let d = self.sigma_prod();
        let cov = self.sxy / self.n;
        if d <= PPMC_EPS {
            for (o, &b) in out.iter_mut().zip(y.iter()) {
                *o = (b - self.my) / (self.n * PPMC_EPS);
            }
            return cov / PPMC_EPS;
        }
        let r = cov / d;
        let var_x = self.sxx / self.n;
        for ((o, &a), &b) in out.iter_mut().zip(x.iter()).zip(y.iter()) {
            *o = ((b - self.my) / d - r * (a - self.mx) / var_x) / self.n;
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Mse,
    Mae,
    Ppmc,
    /// `α·(1 − PPMC) + (1 − α)·MAE`, `0 < α < 1`.
    Weighted {
        alpha: f64,
    },
}

impl LossSpec {
    pub fn weighted(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("weighted loss alpha {alpha} outside (0, 1)")));
        }
        Ok(LossSpec::Weighted { alpha })
    }

    /// `mse`, `mae`, `ppmc` or `weighted:<alpha>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossSpec::Mse),
            "mae" => Ok(LossSpec::Mae),
            "ppmc" => Ok(LossSpec::Ppmc),
            _ => {
                let alpha = s
                    .strip_prefix("weighted:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown loss {s:?}")))?;
                Self::weighted(alpha)
            }
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Mse => write!(f, "mse"),
            LossSpec::Mae => write!(f, "mae"),
            LossSpec::Ppmc => write!(f, "ppmc"),
            LossSpec::Weighted { alpha } => write!(f, "weighted:{alpha}"),
        }
    }
}

/// How PPMC groups frames: one correlation per (sequence, channel), or one
/// per channel over every valid frame pooled together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerSequence,
    Pooled,
}

impl Granularity {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sequence" => Ok(Granularity::PerSequence),
            "pooled" => Ok(Granularity::Pooled),
            _ => Err(Error::Config(format!("unknown granularity {s:?}"))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Granularity::PerSequence => "sequence",
            Granularity::Pooled => "pooled",
        }
    }
}

fn check_inputs(pred: &Tensor3, target: &Tensor3, mask: &FrameMask) -> Result<usize> {
    target.ensure_shape(pred.batch(), pred.time(), pred.dim(), "loss targets")?;
    mask.ensure_matches(pred)?;
    let n = mask.valid_count();
    if n == 0 {
        return Err(Error::Data("loss over a batch with no valid frames".into()));
    }
    Ok(n)
}

fn mae_term(pred: &Tensor3, target: &Tensor3, mask: &FrameMask, n: usize, weight: f64, grad: &mut Tensor3) -> f64 {
    let scale = 1.0 / (n * pred.dim()) as f64;
    let mut total = 0.0;
    for (b, &len) in mask.lengths().iter().enumerate() {
        let p = pred.0.slice(s![b, ..len, ..]);
        let t = target.0.slice(s![b, ..len, ..]);
        let mut g = grad.0.slice_mut(s![b, ..len, ..]);
        ndarray::Zip::from(&mut g).and(&p).and(&t).for_each(|g, &p, &t| {
            let d = p - t;
            total += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g += weight * sign * scale;
        });
    }
    total * scale
}

fn mse_term(pred: &Tensor3, target: &Tensor3, mask: &FrameMask, n: usize, grad: &mut Tensor3) -> f64 {
    let scale = 1.0 / (n * pred.dim()) as f64;
    let mut total = 0.0;
    for (b, &len) in mask.lengths().iter().enumerate() {
        let p = pred.0.slice(s![b, ..len, ..]);
        let t = target.0.slice(s![b, ..len, ..]);
        let mut g = grad.0.slice_mut(s![b, ..len, ..]);
        ndarray::Zip::from(&mut g).and(&p).and(&t).for_each(|g, &p, &t| {
            let d = p - t;
            total += d * d;
            *g += 2.0 * d * scale;
        });
    }
    total * scale
}

/// Returns `1 − mean PPMC` and accumulates `weight ×` its gradient.
fn ppmc_term(
    pred: &Tensor3,
    target: &Tensor3,
    mask: &FrameMask,
    granularity: Granularity,
    weight: f64,
    grad: &mut Tensor3,
) -> Result<f64> {
    let channels = pred.dim();
    let mut sum_r = 0.0;
    match granularity {
        Granularity::PerSequence => {
            let groups: Vec<(usize, usize)> = mask
                .lengths()
                .iter()
                .enumerate()
                .filter(|(_, &len)| len >= 2)
                .map(|(b, &len)| (b, len))
                .collect();
            if groups.is_empty() {
                return Err(Error::Data(
                    "ppmc loss needs a sequence with at least two valid frames".into(),
                ));
            }
            let k = -weight / (groups.len() * channels) as f64;
            for &(b, len) in &groups {
                for c in 0..channels {
                    let x = pred.0.slice(s![b, ..len, c]);
                    let y = target.0.slice(s![b, ..len, c]);
                    let st = PairStats::new(x, y);
                    let mut dr = ndarray::Array1::zeros(len);
                    sum_r += st.ppmc_grad(x, y, dr.view_mut());
                    grad.0.slice_mut(s![b, ..len, c]).scaled_add(k, &dr);
                }
            }
            Ok(1.0 - sum_r / (groups.len() * channels) as f64)
        }
        Granularity::Pooled => {
            let n = mask.valid_count();
            if n < 2 {
                return Err(Error::Data("ppmc loss needs at least two valid frames".into()));
            }
            let (x, y) = gather_valid(pred, target, mask);
            let k = -weight / channels as f64;
            let mut dr = Array2::zeros((n, channels));
            for c in 0..channels {
                let st = PairStats::new(x.column(c), y.column(c));
                sum_r += st.ppmc_grad(x.column(c), y.column(c), dr.column_mut(c));
            }
            let mut row = 0;
            for (b, &len) in mask.lengths().iter().enumerate() {
                grad.0
                    .slice_mut(s![b, ..len, ..])
                    .scaled_add(k, &dr.slice(s![row..row + len, ..]));
                row += len;
            }
            Ok(1.0 - sum_r / channels as f64)
        }
    }
}

/// Valid frames of every sequence stacked into `frames × channels`.
fn gather_valid(pred: &Tensor3, target: &Tensor3, mask: &FrameMask) -> (Array2<f64>, Array2<f64>) {
    let n = mask.valid_count();
    let c = pred.dim();
    let mut x = Array2::zeros((n, c));
    let mut y = Array2::zeros((n, c));
    let mut row = 0;
    for (b, &len) in mask.lengths().iter().enumerate() {
        x.slice_mut(s![row..row + len, ..])
            .assign(&pred.0.slice(s![b, ..len, ..]));
        y.slice_mut(s![row..row + len, ..])
            .assign(&target.0.slice(s![b, ..len, ..]));
        row += len;
    }
    (x, y)
}

/// Loss value and its gradient with respect to `pred`.
pub fn loss(
    spec: LossSpec,
    pred: &Tensor3,
    target: &Tensor3,
    mask: &FrameMask,
    granularity: Granularity,
) -> Result<(f64, Tensor3)> {
    let n = check_inputs(pred, target, mask)?;
    let mut grad = Tensor3::zeros(pred.batch(), pred.time(), pred.dim());
    let value = match spec {
        LossSpec::Mse => mse_term(pred, target, mask, n, &mut grad),
        LossSpec::Mae => mae_term(pred, target, mask, n, 1.0, &mut grad),
        LossSpec::Ppmc => ppmc_term(pred, target, mask, granularity, 1.0, &mut grad)?,
        LossSpec::Weighted { alpha } => {
            let p = ppmc_term(pred, target, mask, granularity, alpha, &mut grad)?;
            let m = mae_term(pred, target, mask, n, 1.0 - alpha, &mut grad);
            alpha * p + (1.0 - alpha) * m
        }
    };
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvMetrics {
    pub ppmc: f64,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_tv: [TvMetrics; N_TVS],
    /// Unweighted mean over the six tract variables.
    pub average: TvMetrics,
    pub frames: usize,
    /// (group, channel) pairs whose PPMC was degenerate.
    pub degenerate: usize,
}

impl EvalReport {
    pub fn header() -> String {
        let mut cols = vec!["metric".to_string()];
        cols.extend(TV_NAMES.iter().map(|s| s.to_string()));
        cols.push("Average".into());
        cols.join("\t")
    }

    /// Three rows (PPMC, MSE, MAE) under [`EvalReport::header`].
    pub fn rows(&self) -> Vec<String> {
        let pick: [(&str, fn(&TvMetrics) -> f64); 3] = [("PPMC", |m| m.ppmc), ("MSE", |m| m.mse), ("MAE", |m| m.mae)];
        pick.iter()
            .map(|(name, f)| {
                let mut cols = vec![name.to_string()];
                cols.extend(self.per_tv.iter().map(|m| format!("{:.4}", f(m))));
                cols.push(format!("{:.4}", f(&self.average)));
                cols.join("\t")
            })
            .collect()
    }
}

/// Collects aligned prediction/target sequences and reduces them to
/// per-TV metrics.
#[derive(Debug, Clone, Default)]
pub struct Evaluator {
    seqs: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the first `valid` frames of a `frames × 6` pair.
    pub fn add(&mut self, pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, valid: usize) -> Result<()> {
        if pred.dim() != target.dim() || pred.ncols() != N_TVS || valid > pred.nrows() {
            return Err(Error::Shape(format!(
                "evaluation pair {:?} / {:?} with {valid} valid frames",
                pred.dim(),
                target.dim()
            )));
        }
        if valid > 0 {
            self.seqs.push((
                pred.slice(s![..valid, ..]).to_owned(),
                target.slice(s![..valid, ..]).to_owned(),
            ));
        }
        Ok(())
    }

    pub fn add_batch(&mut self, pred: &Tensor3, target: &Tensor3, mask: &FrameMask) -> Result<()> {
        for (b, &len) in mask.lengths().iter().enumerate() {
            self.add(pred.0.slice(s![b, .., ..]), target.0.slice(s![b, .., ..]), len)?;
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.seqs.iter().map(|(p, _)| p.nrows()).sum()
    }

    pub fn finish(&self, granularity: Granularity) -> Result<EvalReport> {
        let frames = self.frames();
        if frames == 0 {
            return Err(Error::Data("evaluation set is empty".into()));
        }
        let mut pooled_p = Array2::zeros((frames, N_TVS));
        let mut pooled_t = Array2::zeros((frames, N_TVS));
        let mut row = 0;
        for (p, t) in &self.seqs {
            let n = p.nrows();
            pooled_p.slice_mut(s![row..row + n, ..]).assign(p);
            pooled_t.slice_mut(s![row..row + n, ..]).assign(t);
            row += n;
        }
        let mut degenerate = 0;
        let mut per_tv = [TvMetrics {
            ppmc: 0.0,
            mse: 0.0,
            mae: 0.0,
        }; N_TVS];
        for (c, m) in per_tv.iter_mut().enumerate() {
            let (x, y) = (pooled_p.column(c), pooled_t.column(c));
            let diff = &x - &y;
            m.mse = diff.mapv(|d| d * d).sum() / frames as f64;
            m.mae = diff.mapv(f64::abs).sum() / frames as f64;
            m.ppmc = match granularity {
                Granularity::Pooled => {
                    if frames < 2 {
                        return Err(Error::Data("pooled ppmc needs at least two frames".into()));
                    }
                    let r = PairStats::new(x, y).ppmc();
                    degenerate += usize::from(r.degenerate);
                    r.value
                }
                Granularity::PerSequence => {
                    let mut sum = 0.0;
                    let mut count = 0;
                    for (p, t) in self.seqs.iter().filter(|(p, _)| p.nrows() >= 2) {
                        let r = PairStats::new(p.column(c), t.column(c)).ppmc();
                        degenerate += usize::from(r.degenerate);
                        sum += r.value;
                        count += 1;
                    }
                    if count == 0 {
                        return Err(Error::Data("no sequence has two valid frames".into()));
                    }
                    sum / count as f64
                }
            };
        }
        let mean = |f: fn(&TvMetrics) -> f64| per_tv.iter().map(f).sum::<f64>() / N_TVS as f64;
        let average = TvMetrics {
            ppmc: mean(|m| m.ppmc),
            mse: mean(|m| m.mse),
            mae: mean(|m| m.mae),
        };
        Ok(EvalReport {
            per_tv,
            average,
            frames,
            degenerate,
        })
    }
}
