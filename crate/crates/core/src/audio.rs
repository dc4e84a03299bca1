//! Waveform I/O, RMS, and fixed-length masked segmentation.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE: u32 = 16_000;
/// Segment duration in seconds.
pub const SEGMENT_SECONDS: u32 = 2;
/// Segment length in samples at the canonical rate.
pub const SEGMENT_SAMPLES: usize = (SAMPLE_RATE * SEGMENT_SECONDS) as usize;
/// 10 ms frame shift at the canonical rate.
pub const HOP_SAMPLES: usize = 160;
/// Target (tract variable) frames per segment.
pub const TV_FRAMES_PER_SEGMENT: usize = SEGMENT_SAMPLES / HOP_SAMPLES;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Rejects non-finite samples. Empty waveforms are representable so that
    /// segmentation of nothing is well defined; operations that need audio
    /// (rms, mixing, writing) reject them.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub(crate) fn ensure_canonical(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::Data(format!(
                "sample rate {} Hz is not the canonical {SAMPLE_RATE} Hz (resampling is not supported)",
                self.sample_rate
            )));
        }
        Ok(())
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV file, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |message: String| Error::Wav {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = WavReader::open(path).map_err(|e| wav_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(wav_err(format!(
            "sample rate {} Hz; only {SAMPLE_RATE} Hz is accepted",
            spec.sample_rate
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(e.to_string()))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(e.to_string()))?,
        (fmt, bits) => {
            return Err(wav_err(format!(
                "unsupported encoding {fmt:?} {bits}-bit (need 16-bit PCM or 32-bit float)"
            )))
        }
    };
    let channels = usize::from(spec.channels.max(1));
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Waveform::new(samples, spec.sample_rate).map_err(|e| wav_err(e.to_string()))
}

/// Quantizes one sample to a 16-bit code, clipping to [-1, 1).
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes mono 16-bit PCM.
pub fn write_wav(waveform: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |e: hound::Error| Error::Wav {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if waveform.is_empty() {
        return Err(Error::Data(format!(
            "refusing to write empty waveform to {}",
            path.display()
        )));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &x in waveform.samples() {
        writer.write_sample(quantize_i16(x)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub fn rms(waveform: &Waveform) -> Result<f64> {
    rms_of(waveform.samples())
}

pub fn rms_of(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("rms of an empty signal".into()));
    }
    let mean_sq = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    Ok(mean_sq.sqrt())
}

/// A fixed-length slice of an utterance. Samples past `valid_len` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    samples: Vec<f64>,
    valid_len: usize,
    index: usize,
}

impl Segment {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn valid(&self) -> &[f64] {
        &self.samples[..self.valid_len]
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    /// Position of this segment within its utterance.
    pub fn index(&self) -> usize {
        self.index
    }

    /// Frame-level valid length for targets sampled every `hop` samples.
    pub fn valid_frames(&self, hop: usize, frames_per_segment: usize) -> usize {
        self.valid_len.div_ceil(hop).min(frames_per_segment)
    }

    /// Test hook: overwrites the padded tail with arbitrary values, breaking
    /// the zero-tail invariant so mask hygiene can be checked downstream.
    #[doc(hidden)]
    pub fn with_tail(mut self, fill: impl Fn(usize) -> f64) -> Self {
        for (i, x) in self.samples[self.valid_len..].iter_mut().enumerate() {
            *x = fill(i);
        }
        self
    }
}

/// Splits a waveform into consecutive non-overlapping 2 s segments; the last
/// one is zero padded.
pub fn segment(waveform: &Waveform) -> Vec<Segment> {
    segment_samples(waveform.samples(), SEGMENT_SAMPLES)
}

pub(crate) fn segment_samples(samples: &[f64], segment_len: usize) -> Vec<Segment> {
    samples
        .chunks(segment_len)
        .enumerate()
        .map(|(index, chunk)| {
            let mut padded = vec![0.0; segment_len];
            padded[..chunk.len()].copy_from_slice(chunk);
            Segment {
                samples: padded,
                valid_len: chunk.len(),
                index,
            }
        })
        .collect()
}

/// Concatenates the valid regions of `segments`.
pub fn unsegment(segments: &[Segment]) -> Vec<f64> {
    segments.iter().flat_map(|s| s.valid().iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&wave(vec![0.5; 100])).unwrap(), 0.5);
        assert_eq!(rms(&wave(vec![0.0; 100])).unwrap(), 0.0);
        let n = 16_000;
        let sine: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 100.0 * i as f64 / n as f64).sin())
            .collect();
        assert!((rms(&wave(sine)).unwrap() - 0.707_106_8).abs() < 1e-6);
        assert!(rms(&wave(vec![])).is_err());
    }

    #[test]
    fn segmentation_counts() {
        let segs = segment(&wave(vec![0.1; 56_000]));
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].valid_len(), 32_000);
        assert_eq!(segs[1].valid_len(), 24_000);
        assert!(segs[1].samples()[24_000..].iter().all(|&x| x == 0.0));

        let segs = segment(&wave(vec![0.1; 32_000]));
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].valid_len(), 32_000);

        let segs = segment(&wave(vec![0.1; 1_600]));
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].valid_len(), 1_600);
        assert_eq!(segs[0].samples().len(), SEGMENT_SAMPLES);

        assert!(segment(&wave(vec![])).is_empty());
    }

    #[test]
    fn frame_valid_length_rounds_up_and_caps() {
        let segs = segment(&wave(vec![0.1; 32_000 + 161]));
        assert_eq!(segs[0].valid_frames(HOP_SAMPLES, TV_FRAMES_PER_SEGMENT), 200);
        assert_eq!(segs[1].valid_frames(HOP_SAMPLES, TV_FRAMES_PER_SEGMENT), 2);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Waveform::new(vec![0.0, f64::NAN], SAMPLE_RATE).is_err());
    }

    #[test]
    fn wav_scaling_and_clipping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_wav(&wave(vec![0.5, 1.5, -2.0, 0.0]), &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples(), &[0.5, 32767.0 / 32768.0, -1.0, 0.0]);
        assert!(write_wav(&wave(vec![]), &path).is_err());
    }

    #[test]
    fn silence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        write_wav(&wave(vec![0.0; 16_000]), &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 16_000);
        assert!(back.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn multichannel_float_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for (l, r) in [(0.5f32, 0.25f32), (-1.0, 1.0)] {
            w.write_sample(l).unwrap();
            w.write_sample(r).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&path).unwrap().samples(), &[0.375, 0.0]);
    }

    #[test]
    fn rejects_other_rates_and_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("r.wav");
        write_wav(&Waveform::new(vec![0.1; 10], 8_000).unwrap(), &p1).unwrap();
        assert!(read_wav(&p1).is_err());

        let p2 = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p2, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(read_wav(&p2).is_err());

        let p3 = dir.path().join("junk.wav");
        std::fs::write(&p3, b"RIFFnope").unwrap();
        assert!(read_wav(&p3).is_err());
    }

    proptest! {
        #[test]
        fn wav_round_trip_is_bit_identical(codes in proptest::collection::vec(any::<i16>(), 1..2000)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.wav");
            let w = wave(codes.iter().map(|&c| f64::from(c) / 32768.0).collect());
            write_wav(&w, &path).unwrap();
            let back = read_wav(&path).unwrap();
            prop_assert_eq!(back.samples(), w.samples());
            let again = dir.path().join("rt2.wav");
            write_wav(&back, &again).unwrap();
            prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        }

        #[test]
        fn unsegment_reconstructs(samples in proptest::collection::vec(-1.0f64..1.0, 0..70_000)) {
            let segs = segment_samples(&samples, SEGMENT_SAMPLES);
            prop_assert_eq!(segs.len(), samples.len().div_ceil(SEGMENT_SAMPLES));
            for s in &segs[..segs.len().saturating_sub(1)] {
                prop_assert_eq!(s.valid_len(), SEGMENT_SAMPLES);
            }
            prop_assert_eq!(unsegment(&segs), samples);
        }

        #[test]
        fn rms_is_absolutely_homogeneous(
            samples in proptest::collection::vec(-1.0f64..1.0, 1..500),
            g in -10.0f64..10.0,
        ) {
            let w = wave(samples);
            let lhs = rms(&w.scaled(g)).unwrap();
            let rhs = g.abs() * rms(&w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }
}
