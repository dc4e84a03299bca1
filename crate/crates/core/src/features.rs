//! Frame-level acoustic features: log-mel spectrogram, MFCC, regression
//! deltas and per-utterance z-normalization.
//!
//! Frames are computed only over a segment's valid region and padded with
//! zero rows to the fixed per-segment frame count, so nothing depends on
//! the padded tail.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{Segment, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fft_size: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            win_ms: 20.0,
            hop_ms: 10.0,
            n_mels: 40,
            n_mfcc: 13,
            fft_size: 512,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn win_samples(&self) -> usize {
        (self.win_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    /// Frames that fit in `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        let win = self.win_samples();
        if len < win {
            0
        } else {
            (len - win) / self.hop_samples() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.win_ms > self.hop_ms && self.hop_ms > 0.0) {
            return Err(Error::Config(format!(
                "need win_ms > hop_ms > 0, got {} / {}",
                self.win_ms, self.hop_ms
            )));
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::Config(format!(
                "need 0 < n_mfcc <= n_mels, got {} / {}",
                self.n_mfcc, self.n_mels
            )));
        }
        if self.fft_size < self.win_samples() {
            return Err(Error::Config(format!(
                "fft_size {} is shorter than the {}-sample window",
                self.fft_size,
                self.win_samples()
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Mfcc,
    MfccDeltas,
    Mspec,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Mfcc, FeatureKind::MfccDeltas, FeatureKind::Mspec];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::MfccDeltas => "mfcc_deltas",
            FeatureKind::Mspec => "mspec",
        }
    }

    pub fn dims(self, config: &FeatureConfig) -> usize {
        match self {
            FeatureKind::Mfcc => config.n_mfcc,
            FeatureKind::MfccDeltas => 3 * config.n_mfcc,
            FeatureKind::Mspec => config.n_mels,
        }
    }

    pub fn id(self) -> u32 {
        match self {
            FeatureKind::Mfcc => 0,
            FeatureKind::MfccDeltas => 1,
            FeatureKind::Mspec => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature kind {s:?}")))
    }
}

/// Frames × dims. Rows at or beyond `valid_frames` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub valid_frames: usize,
}

impl FeatureMatrix {
    pub fn valid(&self) -> ArrayView2<'_, f64> {
        self.values.slice(s![..self.valid_frames, ..])
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    fn padded(valid: Array2<f64>, rows: usize) -> Self {
        let valid_frames = valid.nrows();
        let mut values = Array2::zeros((rows, valid.ncols()));
        values.slice_mut(s![..valid_frames, ..]).assign(&valid);
        Self { values, valid_frames }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel < min_log_mel {
        mel * F_SP
    } else {
        MIN_LOG_HZ * ((mel - min_log_mel) * logstep).exp()
    }
}

/// Center frequency (Hz) of each mel filter.
pub fn mel_centers(config: &FeatureConfig) -> Vec<f64> {
    mel_edges(config)[1..=config.n_mels].to_vec()
}

fn mel_edges(config: &FeatureConfig) -> Vec<f64> {
    let top = hz_to_mel(f64::from(config.sample_rate) / 2.0);
    (0..config.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (config.n_mels + 1) as f64))
        .collect()
}

/// Unit-height triangular filters, `n_mels × (fft_size/2 + 1)`.
pub fn mel_filterbank(config: &FeatureConfig) -> Array2<f64> {
    let n_bins = config.fft_size / 2 + 1;
    let edges = mel_edges(config);
    let bin_hz = f64::from(config.sample_rate) / config.fft_size as f64;
    Array2::from_shape_fn((config.n_mels, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f >= lo && f <= c && c > lo {
            (f - lo) / (c - lo)
        } else if f > c && f <= hi {
            (hi - f) / (hi - c)
        } else {
            0.0
        }
    })
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Orthonormal DCT-II basis, `n_out × n_in`.
fn dct_matrix(n_in: usize, n_out: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_out, n_in), |(k, m)| {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        scale * (PI * k as f64 * (2 * m + 1) as f64 / (2 * n_in) as f64).cos()
    })
}

/// Reusable analysis state: window, FFT plan, filterbank, DCT basis.
pub struct FeatureExtractor {
    config: FeatureConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Array2<f64>,
    dct: Array2<f64>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            window: hamming(config.win_samples()),
            filterbank: mel_filterbank(&config),
            dct: dct_matrix(config.n_mels, config.n_mfcc),
            fft,
            config,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    fn frame_rows(&self, segment: &Segment) -> usize {
        self.config.frames_for(segment.samples().len())
    }

    /// Log-mel energies over the valid region only (valid_frames × n_mels).
    fn log_mel_valid(&self, segment: &Segment) -> Result<Array2<f64>> {
        let cfg = &self.config;
        let win = cfg.win_samples();
        let hop = cfg.hop_samples();
        let valid = segment.valid();
        if valid.len() < win {
            return Err(Error::Data(format!(
                "segment {} has {} valid samples, fewer than one {win}-sample window",
                segment.index(),
                valid.len()
            )));
        }
        let n_frames = cfg.frames_for(valid.len());
        let n_bins = cfg.fft_size / 2 + 1;
        let mut power = Array2::zeros((n_frames, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        for (i, mut row) in power.axis_iter_mut(Axis(0)).enumerate() {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let frame = &valid[i * hop..i * hop + win];
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                b.re = x * w;
            }
            self.fft.process(&mut buf);
            for (p, c) in row.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
        }
        let energies = power.dot(&self.filterbank.t());
        Ok(energies.mapv(|e| e.max(cfg.log_floor).ln()))
    }

    pub fn melspectrogram(&self, segment: &Segment) -> Result<FeatureMatrix> {
        let rows = self.frame_rows(segment);
        Ok(FeatureMatrix::padded(self.log_mel_valid(segment)?, rows))
    }

    pub fn mfcc(&self, segment: &Segment) -> Result<FeatureMatrix> {
        let rows = self.frame_rows(segment);
        let cepstra = self.log_mel_valid(segment)?.dot(&self.dct.t());
        Ok(FeatureMatrix::padded(cepstra, rows))
    }

    /// Raw (not normalized) features of one segment.
    pub fn extract(&self, segment: &Segment, kind: FeatureKind) -> Result<FeatureMatrix> {
        match kind {
            FeatureKind::Mspec => self.melspectrogram(segment),
            FeatureKind::Mfcc => self.mfcc(segment),
            FeatureKind::MfccDeltas => {
                let base = self.mfcc(segment)?;
                let d1 = deltas(&base, 1)?;
                let d2 = deltas(&base, 2)?;
                let values = ndarray::concatenate(Axis(1), &[base.values.view(), d1.values.view(), d2.values.view()])
                    .expect("equal row counts");
                Ok(FeatureMatrix {
                    values,
                    valid_frames: base.valid_frames,
                })
            }
        }
    }

    /// Features for all segments of one utterance, z-normalized together.
    pub fn utterance(&self, segments: &[Segment], kind: FeatureKind) -> Result<Vec<FeatureMatrix>> {
        let raw = segments
            .iter()
            .map(|s| self.extract(s, kind))
            .collect::<Result<Vec<_>>>()?;
        znorm_utterance(&raw)
    }
}

pub fn melspectrogram(segment: &Segment, config: &FeatureConfig) -> Result<FeatureMatrix> {
    FeatureExtractor::new(config.clone())?.melspectrogram(segment)
}

pub fn mfcc(segment: &Segment, config: &FeatureConfig) -> Result<FeatureMatrix> {
    FeatureExtractor::new(config.clone())?.mfcc(segment)
}

const DELTA_HALF_WINDOW: isize = 2;

/// Regression deltas (half-window 2, edge frames replicated) of order 1 or
/// 2; order 2 is the delta of the delta.
pub fn deltas(feat: &FeatureMatrix, order: u8) -> Result<FeatureMatrix> {
    if !(1..=2).contains(&order) {
        return Err(Error::Config(format!("delta order must be 1 or 2, got {order}")));
    }
    let n = feat.valid_frames;
    if n < 2 {
        return Err(Error::Data(format!("deltas need at least 2 valid frames, got {n}")));
    }
    let denom: f64 = 2.0 * (1..=DELTA_HALF_WINDOW).map(|k| (k * k) as f64).sum::<f64>();
    let src = feat.valid();
    let mut out = Array2::zeros(src.raw_dim());
    for t in 0..n as isize {
        let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
        for k in 1..=DELTA_HALF_WINDOW {
            let diff = &src.row(clamp(t + k)) - &src.row(clamp(t - k));
            out.row_mut(t as usize).scaled_add(k as f64 / denom, &diff);
        }
    }
    let first = FeatureMatrix::padded(out, feat.values.nrows());
    if order == 1 {
        Ok(first)
    } else {
        deltas(&first, 1)
    }
}

const ZNORM_EPS: f64 = 1e-8;

/// Per-dimension z-normalization over all valid frames of one utterance.
pub fn znorm_utterance(feats: &[FeatureMatrix]) -> Result<Vec<FeatureMatrix>> {
    let total: usize = feats.iter().map(|f| f.valid_frames).sum();
    if total == 0 {
        return Err(Error::Data("utterance has no valid frames to normalize".into()));
    }
    let dims = feats[0].dims();
    if feats.iter().any(|f| f.dims() != dims) {
        return Err(Error::Shape("segments disagree on feature dims".into()));
    }
    let mut mean = ndarray::Array1::<f64>::zeros(dims);
    for f in feats {
        mean += &f.valid().sum_axis(Axis(0));
    }
    mean /= total as f64;
    let mut var = ndarray::Array1::<f64>::zeros(dims);
    for f in feats {
        for row in f.valid().rows() {
            let d = &row - &mean;
            var += &(&d * &d);
        }
    }
    var /= total as f64;
    let scale = var.mapv(|v| 1.0 / v.sqrt().max(ZNORM_EPS));
    Ok(feats
        .iter()
        .map(|f| {
            let normalized = (&f.valid() - &mean) * &scale;
            FeatureMatrix::padded(normalized, f.values.nrows())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{segment, Waveform};
    use crate::seeding;
    use rand::Rng;

    fn seg_of(samples: Vec<f64>) -> Segment {
        segment(&Waveform::new(samples, SAMPLE_RATE).unwrap()).remove(0)
    }

    fn matrix(rows: Vec<Vec<f64>>, pad: usize) -> FeatureMatrix {
        let n = rows.len();
        let d = rows[0].len();
        let a = Array2::from_shape_vec((n, d), rows.concat()).unwrap();
        FeatureMatrix::padded(a, n + pad)
    }

    #[test]
    fn frame_counts() {
        let cfg = FeatureConfig::default();
        assert_eq!((cfg.win_samples(), cfg.hop_samples()), (320, 160));
        let m = mfcc(&seg_of(vec![0.01; 32_000]), &cfg).unwrap();
        assert_eq!(m.values.dim(), (199, 13));
        assert_eq!(m.valid_frames, 199);
        let m = melspectrogram(&seg_of(vec![0.01; 32_000]), &cfg).unwrap();
        assert_eq!(m.values.dim(), (199, 40));
        let short = mfcc(&seg_of(vec![0.01; 1_600]), &cfg).unwrap();
        assert_eq!(short.values.dim(), (199, 13));
        assert_eq!(short.valid_frames, 9);
        assert!(short.values.slice(s![9.., ..]).iter().all(|&v| v == 0.0));
        assert!(mfcc(&seg_of(vec![0.01; 319]), &cfg).is_err());
        for len in [320, 321, 479, 480, 12_345, 32_000] {
            assert_eq!(cfg.frames_for(len), (len - 320) / 160 + 1);
        }
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let cfg = FeatureConfig::default();
        let m = melspectrogram(&seg_of(vec![0.0; 32_000]), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(m.valid().iter().all(|&v| v == floor));
        let c = mfcc(&seg_of(vec![0.0; 32_000]), &cfg).unwrap();
        for row in c.valid().rows() {
            assert!((row[0] - 40f64.sqrt() * floor).abs() < 1e-9);
            assert!(row.iter().skip(1).all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn tone_at_filter_center_peaks_in_that_filter() {
        let cfg = FeatureConfig::default();
        let ex = FeatureExtractor::new(cfg.clone()).unwrap();
        for (m, &fc) in mel_centers(&cfg).iter().enumerate().skip(2) {
            let tone: Vec<f64> = (0..32_000)
                .map(|n| (2.0 * PI * fc * n as f64 / 16_000.0).sin())
                .collect();
            let spec = ex.melspectrogram(&seg_of(tone)).unwrap();
            for row in spec.valid().rows() {
                let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                assert_eq!(argmax, m, "tone at {fc:.1} Hz");
            }
        }
    }

    #[test]
    fn mel_scale_inverts() {
        for hz in [0.0, 200.0, 999.0, 1000.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn deltas_of_constant_and_linear() {
        let c = matrix(vec![vec![3.0, -1.0]; 6], 2);
        let d = deltas(&c, 1).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));
        let slope = 0.7;
        let lin = matrix((0..10).map(|t| vec![slope * t as f64, 1.0]).collect(), 3);
        let d = deltas(&lin, 1).unwrap();
        for t in 2..8 {
            assert!((d.values[[t, 0]] - slope).abs() < 1e-12);
        }
        assert!(d.values.slice(s![10.., ..]).iter().all(|&v| v == 0.0));
        let dd = deltas(&lin, 2).unwrap();
        for t in 4..6 {
            assert!(dd.values[[t, 0]].abs() < 1e-12);
        }
        assert!(deltas(&matrix(vec![vec![1.0]], 0), 1).is_err());
        assert!(deltas(&lin, 3).is_err());
    }

    #[test]
    fn mfcc_with_deltas_has_39_dims() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let mut rng = seeding::rng(1, "d");
        let noise: Vec<f64> = (0..20_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let f = ex.extract(&seg_of(noise), FeatureKind::MfccDeltas).unwrap();
        assert_eq!(f.dims(), 39);
        assert_eq!(FeatureKind::MfccDeltas.dims(ex.config()), 39);
    }

    #[test]
    fn znorm_statistics_and_idempotence() {
        let mut rng = seeding::rng(4, "z");
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize, pad: usize| {
            matrix(
                (0..n)
                    .map(|_| vec![rng.gen_range(-3.0..5.0), 2.5, rng.gen_range(0.0..0.1)])
                    .collect(),
                pad,
            )
        };
        let feats = vec![mk(&mut rng, 30, 0), mk(&mut rng, 11, 19)];
        let z = znorm_utterance(&feats).unwrap();
        let all: Vec<_> = z
            .iter()
            .flat_map(|f| f.valid().rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .collect();
        let n = all.len() as f64;
        for d in [0, 2] {
            let mean = all.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = all.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6 && (var.sqrt() - 1.0).abs() < 1e-6);
        }
        assert!(all.iter().all(|r| r[1].abs() < 1e-6));
        assert!(z[1].values.slice(s![11.., ..]).iter().all(|&v| v == 0.0));
        let zz = znorm_utterance(&z).unwrap();
        for (a, b) in z.iter().zip(&zz) {
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn padded_content_never_leaks() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let mut rng = seeding::rng(8, "tail");
        let audio: Vec<f64> = (0..21_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let clean = seg_of(audio);
        let dirty = clean.clone().with_tail(|i| ((i * 7919) % 13) as f64 - 6.0);
        for kind in FeatureKind::ALL {
            assert_eq!(ex.extract(&clean, kind).unwrap(), ex.extract(&dirty, kind).unwrap());
        }
    }
}
