//! Audio augmentation: additive background noise and music, Gaussian noise,
//! and room impulse responses, all with exact SNR semantics.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{read_wav, rms_of, write_wav, Waveform, SAMPLE_RATE};
use crate::corpus::{CorpusManifest, Lineage};
use crate::error::{Error, Result};
use crate::seeding;

/// Inclusive range from which per-copy SNRs are drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrRange {
    low_db: f64,
    high_db: f64,
}

impl SnrRange {
    pub fn new(low_db: f64, high_db: f64) -> Result<Self> {
        if !(low_db.is_finite() && high_db.is_finite()) || low_db > high_db {
            return Err(Error::Config(format!("invalid SNR range [{low_db}, {high_db}] dB")));
        }
        Ok(Self { low_db, high_db })
    }

    pub fn low_db(&self) -> f64 {
        self.low_db
    }

    pub fn high_db(&self) -> f64 {
        self.high_db
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.low_db == self.high_db {
            self.low_db
        } else {
            rng.gen_range(self.low_db..=self.high_db)
        }
    }
}

impl Default for SnrRange {
    fn default() -> Self {
        Self {
            low_db: 5.0,
            high_db: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BankKind {
    BackgroundNoise,
    Music,
    ImpulseResponse,
}

impl BankKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BankKind::BackgroundNoise => "background_noise",
            BankKind::Music => "music",
            BankKind::ImpulseResponse => "impulse_response",
        }
    }
}

impl FromStr for BankKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background_noise" => Ok(BankKind::BackgroundNoise),
            "music" => Ok(BankKind::Music),
            "impulse_response" => Ok(BankKind::ImpulseResponse),
            _ => Err(Error::Data(format!("unknown bank kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub name: String,
    pub wave: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    kind: BankKind,
    clips: Vec<NoiseClip>,
}

impl NoiseBank {
    pub fn new(kind: BankKind, clips: Vec<NoiseClip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Data(format!("{} bank is empty", kind.as_str())));
        }
        for c in &clips {
            c.wave.ensure_canonical()?;
            if c.wave.is_empty() {
                return Err(Error::Data(format!("clip {} is empty", c.name)));
            }
        }
        Ok(Self { kind, clips })
    }

    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn clips(&self) -> &[NoiseClip] {
        &self.clips
    }

    /// Drops clips by name (e.g. music found to contain vocals).
    pub fn excluding(self, names: &[String]) -> Result<Self> {
        let kind = self.kind;
        let clips = self.clips.into_iter().filter(|c| !names.contains(&c.name)).collect();
        Self::new(kind, clips)
    }

    fn pick<'a>(&'a self, rng: &mut impl Rng) -> &'a Waveform {
        &self.clips[rng.gen_range(0..self.clips.len())].wave
    }
}

pub const BANK_INDEX_HEADER: &str = "kind\tpath";

/// Loads the banks listed in a tab-separated index (`kind`, `path` relative
/// to the index). Clips named in `exclude` (file stem) are skipped.
pub fn load_banks(index: impl AsRef<Path>, exclude: &[String]) -> Result<Vec<NoiseBank>> {
    let index = index.as_ref();
    let text = fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
    let dir = index.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines();
    if lines.next() != Some(BANK_INDEX_HEADER) {
        return Err(Error::format(
            "bank index",
            index,
            format!("header must be {BANK_INDEX_HEADER:?}"),
        ));
    }
    let mut grouped: Vec<(BankKind, Vec<NoiseClip>)> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let (kind, path) = line
            .split_once('\t')
            .ok_or_else(|| Error::format("bank index", index, format!("bad line {line:?}")))?;
        let kind: BankKind = kind.parse()?;
        let path = PathBuf::from(path);
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if exclude.contains(&name) {
            continue;
        }
        let clip = NoiseClip {
            name,
            wave: read_wav(dir.join(&path))?,
        };
        match grouped.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, v)) => v.push(clip),
            None => grouped.push((kind, vec![clip])),
        }
    }
    grouped.sort_by_key(|(k, _)| *k);
    grouped.into_iter().map(|(k, clips)| NoiseBank::new(k, clips)).collect()
}

/// `noise` tiled end-to-end and cropped to `len` samples starting at a
/// random offset.
fn fit_noise(noise: &[f64], len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let offset = rng.gen_range(0..noise.len());
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// The additive component `g·noise′` that [`mix_at_snr`] adds to `signal`.
pub fn scaled_noise(signal: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if signal.is_empty() || noise.is_empty() {
        return Err(Error::Data("mixing needs non-empty signal and noise".into()));
    }
    let signal_rms = rms_of(signal.samples())?;
    if signal_rms == 0.0 {
        return Err(Error::Data("signal is silent; noise gain is undefined".into()));
    }
    let fitted = fit_noise(noise.samples(), signal.len(), rng);
    let noise_rms = rms_of(&fitted)?;
    if noise_rms == 0.0 {
        return Err(Error::Data("noise is silent; noise gain is undefined".into()));
    }
    let gain = signal_rms / (noise_rms * 10f64.powf(snr_db / 20.0));
    Ok(fitted.into_iter().map(|x| gain * x).collect())
}

/// Adds `noise` to `signal` with the gain that makes
/// `20·log10(rms(signal) / rms(added))` equal `snr_db`.
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut impl Rng) -> Result<Waveform> {
    let added = scaled_noise(signal, noise, snr_db, rng)?;
    let samples = signal.samples().iter().zip(&added).map(|(s, n)| s + n).collect();
    Waveform::new(samples, signal.sample_rate())
}

pub fn add_gaussian_noise(signal: &Waveform, snr_db: f64, rng: &mut impl Rng) -> Result<Waveform> {
    let signal_rms = rms_of(signal.samples())?;
    if signal_rms == 0.0 {
        return Err(Error::Data("signal is silent; noise level is undefined".into()));
    }
    let sigma = gaussian_sigma(signal_rms, snr_db);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Data(e.to_string()))?;
    let samples = signal.samples().iter().map(|x| x + normal.sample(rng)).collect();
    Waveform::new(samples, signal.sample_rate())
}

pub fn gaussian_sigma(signal_rms: f64, snr_db: f64) -> f64 {
    signal_rms / 10f64.powf(snr_db / 20.0)
}

/// Linear convolution with `ir`, truncated to the signal length and rescaled
/// so the output peak matches the input peak.
pub fn convolve_ir(signal: &Waveform, ir: &Waveform) -> Result<Waveform> {
    if signal.is_empty() || ir.is_empty() {
        return Err(Error::Data("convolution needs non-empty signal and IR".into()));
    }
    if ir.samples().iter().all(|&h| h == 0.0) {
        return Err(Error::Data("impulse response is all zeros".into()));
    }
    let mut out = fft_convolve(signal.samples(), ir.samples());
    let peak_in = signal.peak();
    let peak_out = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak_out > 0.0 {
        let g = peak_in / peak_out;
        out.iter_mut().for_each(|x| *x *= g);
    }
    Waveform::new(out, signal.sample_rate())
}

/// First `x.len()` samples of the full linear convolution `x * h`.
pub(crate) fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h = &h[..h.len().min(n)];
    let size = (n + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let to_complex = |v: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for (b, &s) in buf.iter_mut().zip(v) {
            b.re = s;
        }
        buf
    };
    let mut xs = to_complex(x);
    let mut hs = to_complex(h);
    fwd.process(&mut xs);
    fwd.process(&mut hs);
    for (a, b) in xs.iter_mut().zip(&hs) {
        *a *= b;
    }
    inv.process(&mut xs);
    let scale = 1.0 / size as f64;
    xs[..n].iter().map(|c| c.re * scale).collect()
}

/// Which pair of augmented copies to create per clean utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AugmentPlan {
    BackgroundAndMusic,
    Gaussian,
    RoomIr,
}

impl AugmentPlan {
    pub const ALL: [AugmentPlan; 3] = [
        AugmentPlan::BackgroundAndMusic,
        AugmentPlan::Gaussian,
        AugmentPlan::RoomIr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentPlan::BackgroundAndMusic => "background_and_music",
            AugmentPlan::Gaussian => "gaussian",
            AugmentPlan::RoomIr => "room_ir",
        }
    }

    /// Lineages of the two copies, in creation order.
    pub fn copy_lineages(self) -> [Lineage; 2] {
        match self {
            AugmentPlan::BackgroundAndMusic => [Lineage::Background, Lineage::Music],
            AugmentPlan::Gaussian => [Lineage::Gaussian, Lineage::Gaussian],
            AugmentPlan::RoomIr => [Lineage::RoomIr, Lineage::RoomIr],
        }
    }

    pub fn of_lineage(lineage: Lineage) -> Option<Self> {
        match lineage {
            Lineage::Clean => None,
            Lineage::Background | Lineage::Music => Some(AugmentPlan::BackgroundAndMusic),
            Lineage::Gaussian => Some(AugmentPlan::Gaussian),
            Lineage::RoomIr => Some(AugmentPlan::RoomIr),
        }
    }

    fn required_banks(self) -> &'static [BankKind] {
        match self {
            AugmentPlan::BackgroundAndMusic => &[BankKind::BackgroundNoise, BankKind::Music],
            AugmentPlan::Gaussian => &[],
            AugmentPlan::RoomIr => &[BankKind::ImpulseResponse],
        }
    }
}

impl fmt::Display for AugmentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentPlan {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AugmentPlan::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation plan {s:?}")))
    }
}

/// The two augmented copies of one clean utterance.
fn augment_one(
    clean: &Waveform,
    banks: &[NoiseBank],
    plan: AugmentPlan,
    snr: SnrRange,
    rng: &mut impl Rng,
) -> Result<[Waveform; 2]> {
    let bank = |kind: BankKind| {
        banks
            .iter()
            .find(|b| b.kind() == kind)
            .expect("checked before augmentation")
    };
    Ok(match plan {
        AugmentPlan::BackgroundAndMusic => {
            let noise = bank(BankKind::BackgroundNoise).pick(rng).clone();
            let a = mix_at_snr(clean, &noise, snr.sample(rng), rng)?;
            let music = bank(BankKind::Music).pick(rng).clone();
            let b = mix_at_snr(clean, &music, snr.sample(rng), rng)?;
            [a, b]
        }
        AugmentPlan::Gaussian => {
            let a = add_gaussian_noise(clean, snr.sample(rng), rng)?;
            let b = add_gaussian_noise(clean, snr.sample(rng), rng)?;
            [a, b]
        }
        AugmentPlan::RoomIr => {
            let irs = bank(BankKind::ImpulseResponse);
            let a = convolve_ir(clean, irs.pick(rng))?;
            let b = convolve_ir(clean, irs.pick(rng))?;
            [a, b]
        }
    })
}

/// Creates two augmented copies of every clean utterance, writing audio to
/// `out_dir/audio/` and returning the extended manifest rebased onto
/// `out_dir`. Each utterance uses its own seed derived from `seed` and its
/// id, so the result does not depend on `jobs`.
pub fn augment_corpus(
    manifest: &CorpusManifest,
    banks: &[NoiseBank],
    plan: AugmentPlan,
    snr: SnrRange,
    seed: u64,
    out_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    for &kind in plan.required_banks() {
        if !banks.iter().any(|b| b.kind() == kind && !b.clips().is_empty()) {
            return Err(Error::Data(format!(
                "plan {plan} needs a non-empty {} bank",
                kind.as_str()
            )));
        }
    }
    let parents: Vec<_> = manifest.records().iter().filter(|r| r.lineage.is_clean()).collect();
    if parents.is_empty() {
        return Err(Error::Data("manifest has no clean utterances to augment".into()));
    }
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;

    let work = || {
        parents
            .par_iter()
            .map(|r| {
                let clean = read_wav(manifest.resolve(&r.audio_path))?;
                let mut rng = seeding::rng(seed, &format!("augment/{plan}/{}", r.utterance_id));
                augment_one(&clean, banks, plan, snr, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    };
    let copies = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?
        .install(work)?;

    let mut out = manifest.clone();
    for (parent, pair) in parents.iter().zip(copies) {
        for (lineage, wave) in plan.copy_lineages().into_iter().zip(pair) {
            let id = out.child_id(&parent.utterance_id, lineage);
            let path = audio_dir.join(format!("{id}.wav"));
            write_wav(&wave, &path)?;
            let abs = std::path::absolute(&path).map_err(|e| Error::io(&path, e))?;
            out.attach_augmented(&parent.utterance_id, lineage, abs)?;
        }
    }
    Ok(out.rebased(out_dir))
}

/// Writes a small synthetic set of noise, music and impulse-response clips
/// plus their index (`index.tsv`) under `out_dir`, and returns the banks.
pub fn synth_banks(seed: u64, out_dir: impl AsRef<Path>) -> Result<Vec<NoiseBank>> {
    const CLIPS: usize = 6;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let sr = f64::from(SAMPLE_RATE);
    let mut index = String::from(BANK_INDEX_HEADER);
    index.push('\n');
    let mut banks = Vec::new();
    for kind in [BankKind::BackgroundNoise, BankKind::Music, BankKind::ImpulseResponse] {
        let mut clips = Vec::new();
        for i in 0..CLIPS {
            let mut rng = seeding::rng_indexed(seed, &format!("banks/{}", kind.as_str()), i as u64);
            let samples = match kind {
                BankKind::BackgroundNoise => background_noise(&mut rng, (3.0 * sr) as usize),
                BankKind::Music => music(&mut rng, (4.0 * sr) as usize),
                BankKind::ImpulseResponse => room_ir(&mut rng),
            };
            // Quantize exactly like the file on disk so banks returned here
            // match banks loaded from the index.
            let samples = samples
                .into_iter()
                .map(|x| f64::from(crate::audio::quantize_i16(x)) / 32768.0)
                .collect();
            let name = format!("{}_{i:02}", kind.as_str());
            let wave = Waveform::new(samples, SAMPLE_RATE)?;
            let rel = format!("{}/{name}.wav", kind.as_str());
            let path = out_dir.join(&rel);
            fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(&path, e))?;
            write_wav(&wave, &path)?;
            index.push_str(&format!("{}\t{rel}\n", kind.as_str()));
            clips.push(NoiseClip { name, wave });
        }
        banks.push(NoiseBank::new(kind, clips)?);
    }
    let index_path = out_dir.join("index.tsv");
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
    Ok(banks)
}

fn normalize_peak(mut v: Vec<f64>, peak: f64) -> Vec<f64> {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x *= peak / m);
    }
    v
}

/// Low-passed white noise with a slow random amplitude envelope.
fn background_noise(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let sr = f64::from(SAMPLE_RATE);
    let cutoff = rng.gen_range(300.0..2000.0);
    let alpha = 1.0 - (-TAU * cutoff / sr).exp();
    let mod_hz = rng.gen_range(0.5..3.0);
    let mod_depth = rng.gen_range(0.2..0.6);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut state = 0.0;
    let v = (0..n)
        .map(|i| {
            state += alpha * (normal.sample(rng) - state);
            let env = 1.0 - mod_depth * (0.5 + 0.5 * (TAU * mod_hz * i as f64 / sr).sin());
            state * env
        })
        .collect();
    normalize_peak(v, 0.5)
}

/// A sequence of short harmonic chords.
fn music(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let sr = f64::from(SAMPLE_RATE);
    let mut out = vec![0.0; n];
    let mut start = 0usize;
    while start < n {
        let len = ((rng.gen_range(0.2..0.5) * sr) as usize).min(n - start);
        let voices = rng.gen_range(2..=3);
        for _ in 0..voices {
            let midi: f64 = f64::from(rng.gen_range(48u8..=84));
            let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
            for k in 0..len {
                let t = k as f64 / sr;
                let env = (-4.0 * t).exp() * (1.0 - (-200.0 * t).exp());
                let tone: f64 = (1..=4).map(|h| (TAU * f0 * h as f64 * t).sin() / h as f64).sum();
                out[start + k] += env * tone;
            }
        }
        start += len;
    }
    normalize_peak(out, 0.5)
}

/// Direct path followed by exponentially decaying diffuse noise.
fn room_ir(rng: &mut impl Rng) -> Vec<f64> {
    let sr = f64::from(SAMPLE_RATE);
    let rt60 = rng.gen_range(0.2..0.6);
    let len = (rng.gen_range(0.25..0.5) * sr) as usize;
    let pre_delay = (rng.gen_range(0.005..0.02) * sr) as usize;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut h = vec![0.0; len];
    h[0] = 1.0;
    for (i, x) in h.iter_mut().enumerate().skip(pre_delay) {
        let decay = (-6.9 * i as f64 / (rt60 * sr)).exp();
        *x += 0.4 * normal.sample(rng) * decay;
    }
    normalize_peak(h, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    fn noise_of(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn measured_snr(signal: &Waveform, added: &[f64]) -> f64 {
        20.0 * (rms_of(signal.samples()).unwrap() / rms_of(added).unwrap()).log10()
    }

    #[test]
    fn equal_power_at_zero_db_has_unit_gain() {
        let s = wave(vec![0.1, -0.1, 0.1, -0.1]);
        let n = wave(vec![-0.1, 0.1]);
        let mut rng = seeding::rng(0, "t");
        let added = scaled_noise(&s, &n, 0.0, &mut rng).unwrap();
        assert!(added.iter().all(|x| (x.abs() - 0.1).abs() < 1e-15));
    }

    #[test]
    fn gain_at_twenty_db() {
        let s = wave(vec![0.2, -0.2, 0.2, -0.2]);
        let n = wave(vec![0.1, -0.1, 0.1, -0.1]);
        let mut rng = seeding::rng(0, "t");
        let added = scaled_noise(&s, &n, 20.0, &mut rng).unwrap();
        for x in &added {
            assert!((x.abs() - 0.02).abs() < 1e-15);
        }
        assert!((measured_snr(&s, &added) - 20.0).abs() < 1e-6);
    }

    #[test]
    fn silent_inputs_are_rejected() {
        let mut rng = seeding::rng(0, "t");
        let s = wave(vec![0.0; 8]);
        let n = wave(vec![0.3; 8]);
        assert!(mix_at_snr(&s, &n, 10.0, &mut rng).is_err());
        assert!(mix_at_snr(&n, &s, 10.0, &mut rng).is_err());
        assert!(add_gaussian_noise(&s, 10.0, &mut rng).is_err());
    }

    #[test]
    fn short_noise_is_tiled() {
        let mut rng = seeding::rng(3, "t");
        let fitted = fit_noise(&[1.0, 2.0, 3.0], 7, &mut rng);
        let start = fitted[0] as usize - 1;
        let expected: Vec<f64> = (0..7).map(|i| ((start + i) % 3 + 1) as f64).collect();
        assert_eq!(fitted, expected);
    }

    #[test]
    fn gaussian_sigma_and_determinism() {
        assert!((gaussian_sigma(0.1, 20.0) - 0.01).abs() < 1e-15);
        let mut r = seeding::rng(1, "sig");
        let s = wave(noise_of(&mut r, 50_000));
        let a = add_gaussian_noise(&s, 20.0, &mut seeding::rng(9, "g")).unwrap();
        let b = add_gaussian_noise(&s, 20.0, &mut seeding::rng(9, "g")).unwrap();
        assert_eq!(a, b);
        let resid: Vec<f64> = a.samples().iter().zip(s.samples()).map(|(x, y)| x - y).collect();
        let expected = gaussian_sigma(rms_of(s.samples()).unwrap(), 20.0);
        let got = rms_of(&resid).unwrap();
        assert!((got / expected - 1.0).abs() < 0.02, "{got} vs {expected}");
    }

    #[test]
    fn snr_endpoints_attainable() {
        let r = SnrRange::default();
        assert_eq!((r.low_db(), r.high_db()), (5.0, 20.0));
        let fixed_low = SnrRange::new(5.0, 5.0).unwrap();
        let fixed_high = SnrRange::new(20.0, 20.0).unwrap();
        let mut rng = seeding::rng(0, "snr");
        assert_eq!(fixed_low.sample(&mut rng), 5.0);
        assert_eq!(fixed_high.sample(&mut rng), 20.0);
        let draws: Vec<f64> = (0..10_000).map(|_| r.sample(&mut rng)).collect();
        assert!(draws.iter().all(|d| (5.0..=20.0).contains(d)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 12.5).abs() < 0.2);
        assert!(SnrRange::new(20.0, 5.0).is_err());
    }

    #[test]
    fn impulse_identity_and_delay() {
        let mut rng = seeding::rng(2, "ir");
        let mut x = noise_of(&mut rng, 1000);
        x[10] = 2.0; // keep the peak away from the truncated tail
        let s = wave(x.clone());
        let mut delta = vec![0.0; 16];
        delta[0] = 1.0;
        let y = convolve_ir(&s, &wave(delta)).unwrap();
        for (a, b) in y.samples().iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        let k = 5;
        let mut shifted = vec![0.0; 16];
        shifted[k] = 0.7;
        let y = convolve_ir(&s, &wave(shifted)).unwrap();
        for n in 0..x.len() {
            let expected = if n < k { 0.0 } else { x[n - k] };
            assert!((y.samples()[n] - expected).abs() < 1e-12);
        }
        assert!(convolve_ir(&s, &wave(vec![0.0; 4])).is_err());
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let mut rng = seeding::rng(5, "conv");
        let x = noise_of(&mut rng, 16_000);
        let h = noise_of(&mut rng, 64);
        let fast = fft_convolve(&x, &h);
        for n in 0..x.len() {
            let direct: f64 = (0..h.len().min(n + 1)).map(|k| h[k] * x[n - k]).sum();
            assert!((fast[n] - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn plan_parsing() {
        for p in AugmentPlan::ALL {
            assert_eq!(p.as_str().parse::<AugmentPlan>().unwrap(), p);
        }
        assert!("reverb".parse::<AugmentPlan>().is_err());
    }

    proptest! {
        #[test]
        fn snr_is_exact(seed in any::<u64>(), snr in 5.0f64..20.0, n in 16usize..4000, m in 1usize..3000) {
            let mut rng = seeding::rng(seed, "prop");
            let mut s = noise_of(&mut rng, n);
            s[0] = 0.5;
            let mut noise = noise_of(&mut rng, m);
            noise[0] = 0.25;
            let s = wave(s);
            let added = scaled_noise(&s, &wave(noise), snr, &mut rng).unwrap();
            prop_assert!((measured_snr(&s, &added) - snr).abs() < 1e-6);
        }

        #[test]
        fn mixing_is_scale_equivariant(seed in any::<u64>(), c in 0.01f64..10.0) {
            let mut rng = seeding::rng(seed, "eq");
            let mut s = noise_of(&mut rng, 500);
            s[0] = 0.5;
            let mut n = noise_of(&mut rng, 300);
            n[0] = 0.5;
            let (s, n) = (wave(s), wave(n));
            let a = mix_at_snr(&s.scaled(c), &n, 12.0, &mut seeding::rng(seed, "m")).unwrap();
            let b = mix_at_snr(&s, &n, 12.0, &mut seeding::rng(seed, "m")).unwrap().scaled(c);
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!((x - y).abs() <= 1e-12 * c.max(1.0));
            }
        }
    }
}
