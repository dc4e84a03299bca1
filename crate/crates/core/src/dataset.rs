//! Turns manifest records into model-ready segment examples.
//!
//! Every utterance is cut into 2 s segments, each segment yields a padded
//! feature matrix (199 frames) and the matching slice of its tract-variable
//! trajectory. Feature frame `i` spans samples `[160·i, 160·i + 320)` and is
//! paired with the TV frame at its window centre, TV frame `i + 1` of the
//! segment.

use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::audio::{read_wav, segment, Segment, TV_FRAMES_PER_SEGMENT};
use crate::binfmt;
use crate::corpus::{CorpusManifest, Lineage, SpeakerId, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor, FeatureKind, FeatureMatrix};
use crate::neural::{FrameMask, Tensor3};
use crate::N_TVS;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub utterance_id: String,
    pub speaker: SpeakerId,
    pub lineage: Lineage,
    pub segment: usize,
    /// `frames × dims`, zero past `valid`.
    pub features: Array2<f64>,
    /// `frames × 6`, zero past `valid`.
    pub targets: Array2<f64>,
    pub valid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: FeatureKind,
    pub frames: usize,
    pub dims: usize,
    pub examples: Vec<Example>,
}

/// TV rows for one segment, aligned to its feature frames.
pub fn segment_targets(tvs: &Array2<f64>, tv_valid: usize, segment: usize, frames: usize) -> (Array2<f64>, usize) {
    let start = segment * TV_FRAMES_PER_SEGMENT + 1;
    let available = tv_valid.saturating_sub(start).min(frames);
    let mut out = Array2::zeros((frames, N_TVS));
    if available > 0 {
        out.slice_mut(s![..available, ..])
            .assign(&tvs.slice(s![start..start + available, ..]));
    }
    (out, available)
}

/// Features and aligned targets for one utterance. Segments shorter than
/// one analysis window, and segments left with fewer than two aligned
/// frames (no correlation is defined on them), are dropped.
pub fn utterance_examples(
    manifest: &CorpusManifest,
    record: &UtteranceRecord,
    extractor: &FeatureExtractor,
    kind: FeatureKind,
) -> Result<Vec<Example>> {
    let wave = read_wav(manifest.resolve(&record.audio_path))?;
    let (tvs, tv_valid) = binfmt::read_matrix(&manifest.resolve(&record.tv_path))?;
    if tvs.ncols() != N_TVS {
        return Err(Error::Data(format!(
            "{}: TV file has {} channels, expected {N_TVS}",
            record.utterance_id,
            tvs.ncols()
        )));
    }
    let win = extractor.config().win_samples();
    let segments: Vec<Segment> = segment(&wave).into_iter().filter(|s| s.valid_len() >= win).collect();
    if segments.is_empty() {
        return Err(Error::Data(format!(
            "{}: utterance is shorter than one analysis window",
            record.utterance_id
        )));
    }
    let feats = extractor.utterance(&segments, kind)?;
    Ok(segments
        .iter()
        .zip(feats)
        .map(|(seg, f)| {
            let FeatureMatrix { values, valid_frames } = f;
            let (targets, tv_frames) = segment_targets(&tvs, tv_valid, seg.index(), values.nrows());
            let valid = valid_frames.min(tv_frames);
            let mut features = values;
            features.slice_mut(s![valid.., ..]).fill(0.0);
            let mut targets = targets;
            targets.slice_mut(s![valid.., ..]).fill(0.0);
            Example {
                utterance_id: record.utterance_id.clone(),
                speaker: record.speaker.clone(),
                lineage: record.lineage,
                segment: seg.index(),
                features,
                targets,
                valid,
            }
        })
        .filter(|e| e.valid >= 2)
        .collect())
}

impl Dataset {
    /// Builds examples for `records` in order; extraction runs on `jobs`
    /// threads and does not affect the result.
    pub fn build(
        manifest: &CorpusManifest,
        records: &[&UtteranceRecord],
        config: &FeatureConfig,
        kind: FeatureKind,
        jobs: usize,
    ) -> Result<Self> {
        let extractor = FeatureExtractor::new(config.clone())?;
        let frames = config.frames_for(crate::audio::SEGMENT_SAMPLES);
        let work = || {
            records
                .par_iter()
                .map(|r| utterance_examples(manifest, r, &extractor, kind))
                .collect::<Result<Vec<_>>>()
        };
        let per_utt = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?;
        Ok(Self {
            kind,
            frames,
            dims: kind.dims(config),
            examples: per_utt.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn valid_frames(&self) -> usize {
        self.examples.iter().map(|e| e.valid).sum()
    }

    /// Examples matching `keep`, same feature layout.
    pub fn filtered(&self, keep: impl Fn(&Example) -> bool) -> Self {
        Self {
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
            ..self.empty_like()
        }
    }

    pub fn empty_like(&self) -> Self {
        Self {
            kind: self.kind,
            frames: self.frames,
            dims: self.dims,
            examples: Vec::new(),
        }
    }

    /// Stacks the chosen examples into model inputs, targets and mask.
    pub fn batch(&self, indices: &[usize]) -> (Tensor3, Tensor3, FrameMask) {
        let mut x = Tensor3::zeros(indices.len(), self.frames, self.dims);
        let mut y = Tensor3::zeros(indices.len(), self.frames, N_TVS);
        let mut lengths = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            let e = &self.examples[i];
            x.0.slice_mut(s![b, .., ..]).assign(&e.features);
            y.0.slice_mut(s![b, .., ..]).assign(&e.targets);
            lengths.push(e.valid);
        }
        let mask = FrameMask::from_lengths(lengths, self.frames).expect("valid lengths fit the frame count");
        (x, y, mask)
    }
}
