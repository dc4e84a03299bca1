//! Synthetic articulatory-acoustic corpus with known ground truth.
//!
//! Each utterance has six slow tract-variable trajectories. The audio is a
//! sum of three sinusoidal carriers; carrier `k` takes its instantaneous
//! frequency from TV `2k` and its amplitude from TV `2k + 1`, both through
//! fixed affine maps, plus a constant per-speaker frequency offset.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{make_split, CorpusManifest, Lineage, Sex, SpeakerId, SplitAssignment, UtteranceRecord};
use crate::audio::{write_wav, Waveform, HOP_SAMPLES, SAMPLE_RATE};
use crate::binfmt;
use crate::error::{Error, Result};
use crate::{seeding, N_TVS};

/// Carrier frequencies when every TV and the speaker offset are zero.
pub const CARRIER_INTERCEPT_HZ: [f64; 3] = [600.0, 1600.0, 3200.0];
const CARRIER_SLOPE_HZ: [f64; 3] = [250.0, 450.0, 700.0];
const AMP_INTERCEPT: f64 = 0.2;
const AMP_SLOPE: f64 = 0.12;
/// Per-carrier frequency shift for a speaker offset of 1.0.
const SPEAKER_SHIFT_HZ: [f64; 3] = [70.0, 120.0, 180.0];
const TV_COMPONENTS: usize = 4;
const TV_MIN_HZ: f64 = 1.0;
const TV_MAX_HZ: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
}

impl SynthOptions {
    pub fn new(seed: u64, n_speakers: usize, utts_per_speaker: usize, duration_s: f64) -> Self {
        Self {
            seed,
            n_speakers,
            utts_per_speaker,
            duration_s,
            sample_rate: SAMPLE_RATE,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_speakers < 3 {
            return Err(Error::Config(format!(
                "synthetic corpus needs at least 3 speakers, got {}",
                self.n_speakers
            )));
        }
        if self.utts_per_speaker == 0 {
            return Err(Error::Config("utterances per speaker must be positive".into()));
        }
        if !(self.duration_s >= 0.5) || !self.duration_s.is_finite() {
            return Err(Error::Config(format!(
                "duration must be at least 0.5 s, got {}",
                self.duration_s
            )));
        }
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!(
                "synthetic corpus is generated at {SAMPLE_RATE} Hz only"
            )));
        }
        Ok(())
    }
}

/// Renders audio from tract variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArticulatorySynth {
    /// Speaker offset in [-1, 1], scaled per carrier.
    pub speaker_offset: f64,
}

impl ArticulatorySynth {
    pub fn carrier_intercepts(&self) -> [f64; 3] {
        std::array::from_fn(|k| CARRIER_INTERCEPT_HZ[k] + self.speaker_offset * SPEAKER_SHIFT_HZ[k])
    }

    /// `tvs` holds one row per 10 ms frame; values between frames are
    /// linearly interpolated. Phase is the running sum of instantaneous
    /// frequency, so each carrier starts at phase zero.
    pub fn render(&self, tvs: ArrayView2<'_, f64>, n_samples: usize) -> Vec<f64> {
        let n_frames = tvs.nrows();
        assert!(n_frames > 0 && tvs.ncols() == N_TVS);
        let intercepts = self.carrier_intercepts();
        let mut freq_sum = [0.0f64; 3];
        let mut out = Vec::with_capacity(n_samples);
        for n in 0..n_samples {
            let pos = n as f64 / HOP_SAMPLES as f64;
            let j = (pos.floor() as usize).min(n_frames - 1);
            let j1 = (j + 1).min(n_frames - 1);
            let frac = (pos - j as f64).clamp(0.0, 1.0);
            let tv = |c: usize| tvs[[j, c]] + frac * (tvs[[j1, c]] - tvs[[j, c]]);
            let mut x = 0.0;
            for k in 0..3 {
                let freq = intercepts[k] + CARRIER_SLOPE_HZ[k] * tv(2 * k);
                let amp = AMP_INTERCEPT + AMP_SLOPE * tv(2 * k + 1);
                let phase = TAU * freq_sum[k] / f64::from(SAMPLE_RATE);
                x += amp * phase.sin();
                freq_sum[k] += freq;
            }
            out.push(x);
        }
        out
    }
}

/// Six trajectories, each a weighted sum of four random-phase sinusoids in
/// [1, 8) Hz divided by the total weight, so values stay in [-1, 1].
pub(crate) fn random_trajectories(rng: &mut impl Rng, n_frames: usize) -> Array2<f64> {
    let frame_s = HOP_SAMPLES as f64 / f64::from(SAMPLE_RATE);
    let mut tvs = Array2::zeros((n_frames, N_TVS));
    for c in 0..N_TVS {
        let comps: Vec<(f64, f64, f64)> = (0..TV_COMPONENTS)
            .map(|_| {
                (
                    rng.gen_range(TV_MIN_HZ..TV_MAX_HZ),
                    rng.gen_range(0.0..TAU),
                    rng.gen_range(0.5..1.0),
                )
            })
            .collect();
        let total: f64 = comps.iter().map(|c| c.2).sum();
        for j in 0..n_frames {
            let t = j as f64 * frame_s;
            let v: f64 = comps.iter().map(|&(f, ph, w)| w * (TAU * f * t + ph).sin()).sum();
            tvs[[j, c]] = v / total;
        }
    }
    binfmt::f32_exact(&mut tvs);
    tvs
}

/// Generates the corpus under `out_dir` (`audio/`, `tv/`, `manifest.tsv`,
/// `speakers.tsv`) and returns the manifest. Output is a pure function of
/// the options.
pub fn synth_corpus(options: &SynthOptions, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    options.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["audio", "tv"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let n_samples = (options.duration_s * f64::from(options.sample_rate)).round() as usize;
    let n_frames = n_samples.div_ceil(HOP_SAMPLES);

    let mut speaker_rng = seeding::rng(options.seed, "synth/speakers");
    let mut records = Vec::new();
    let mut sexes = BTreeMap::new();
    for s in 0..options.n_speakers {
        let speaker = SpeakerId::new(format!("S{:02}", s + 1))?;
        let sex = if speaker_rng.gen_bool(0.5) {
            Sex::Male
        } else {
            Sex::Female
        };
        let synth = ArticulatorySynth {
            speaker_offset: speaker_rng.gen_range(-1.0..=1.0),
        };
        sexes.insert(speaker.clone(), sex);
        for u in 0..options.utts_per_speaker {
            let id = format!("{speaker}_U{:03}", u + 1);
            let mut rng = seeding::rng(options.seed, &format!("synth/utt/{id}"));
            let tvs = random_trajectories(&mut rng, n_frames);
            let audio = Waveform::new(synth.render(tvs.view(), n_samples), options.sample_rate)?;

            let audio_path = PathBuf::from(format!("audio/{id}.wav"));
            let tv_path = PathBuf::from(format!("tv/{id}.aif"));
            write_wav(&audio, out_dir.join(&audio_path))?;
            binfmt::write_matrix(&out_dir.join(&tv_path), tvs.view(), n_frames)?;
            records.push(UtteranceRecord {
                utterance_id: id,
                speaker: speaker.clone(),
                audio_path,
                tv_path,
                lineage: Lineage::Clean,
                parent_id: None,
            });
        }
    }

    let provisional = SplitAssignment {
        train: sexes.keys().cloned().collect(),
        ..SplitAssignment::default()
    };
    let manifest = CorpusManifest::new(records, provisional, out_dir)?.with_sexes(sexes);
    let held_out = ((options.n_speakers as f64 * 5.0 / 46.0).round() as usize).max(1);
    let split = make_split(
        &manifest,
        held_out,
        held_out,
        seeding::derive(options.seed, "synth/split"),
    )?;
    let manifest = manifest.with_split(split)?;
    manifest.save(out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::read_wav;

    #[test]
    fn zero_tvs_render_intercept_carriers() {
        let synth = ArticulatorySynth { speaker_offset: 0.37 };
        let tvs = Array2::zeros((20, N_TVS));
        let audio = synth.render(tvs.view(), 3000);
        let f = synth.carrier_intercepts();
        assert_eq!(f[0], 600.0 + 0.37 * 70.0);
        for (n, &x) in audio.iter().enumerate() {
            let t = n as f64 / f64::from(SAMPLE_RATE);
            let expected: f64 = f.iter().map(|&fk| AMP_INTERCEPT * (TAU * fk * t).sin()).sum();
            assert!((x - expected).abs() < 1e-9, "sample {n}: {x} vs {expected}");
        }
    }

    #[test]
    fn trajectories_are_bounded() {
        let mut rng = seeding::rng(1, "t");
        let tvs = random_trajectories(&mut rng, 500);
        assert!(tvs.iter().all(|v| v.abs() <= 1.0));
        for c in 0..N_TVS {
            let col = tvs.column(c);
            let spread = col.fold(f64::MIN, |a, &b| a.max(b)) - col.fold(f64::MAX, |a, &b| a.min(b));
            assert!(spread > 0.3);
        }
    }

    #[test]
    fn small_corpus_counts_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_corpus(&SynthOptions::new(3, 3, 2, 0.5), dir.path()).unwrap();
        assert_eq!(m.records().len(), 6);
        assert_eq!(m.speakers().len(), 3);
        let s = m.split();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (1, 1, 1));
        let loaded = CorpusManifest::load(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(loaded, m);
        let r = &m.records()[0];
        let audio = read_wav(m.resolve(&r.audio_path)).unwrap();
        assert_eq!(audio.len(), 8000);
        let (tv, valid) = binfmt::read_matrix(&m.resolve(&r.tv_path)).unwrap();
        assert_eq!((tv.nrows(), tv.ncols(), valid), (50, 6, 50));
    }

    #[test]
    fn invalid_options() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_corpus(&SynthOptions::new(1, 2, 2, 1.0), dir.path()).is_err());
        assert!(synth_corpus(&SynthOptions::new(1, 3, 2, 0.4), dir.path()).is_err());
        assert!(synth_corpus(&SynthOptions::new(1, 3, 0, 1.0), dir.path()).is_err());
    }
}
