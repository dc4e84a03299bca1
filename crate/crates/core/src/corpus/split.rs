use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{CorpusManifest, Sex, SpeakerId, SplitAssignment};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOptions {
    /// Accepted range for the share of clean utterances that land in train.
    /// Draws are resampled until one falls inside; if none does within
    /// `max_attempts`, the draw closest to the range midpoint wins.
    pub train_share: Option<(f64, f64)>,
    /// Exact number of male speakers in each held-out split.
    pub males_per_heldout: Option<usize>,
    pub max_attempts: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            train_share: Some((0.75, 0.85)),
            males_per_heldout: None,
            max_attempts: 256,
        }
    }
}

pub fn make_split(
    manifest: &CorpusManifest,
    n_dev_speakers: usize,
    n_test_speakers: usize,
    seed: u64,
) -> Result<SplitAssignment> {
    make_split_with(
        manifest,
        n_dev_speakers,
        n_test_speakers,
        seed,
        &SplitOptions::default(),
    )
}

pub fn make_split_with(
    manifest: &CorpusManifest,
    n_dev: usize,
    n_test: usize,
    seed: u64,
    options: &SplitOptions,
) -> Result<SplitAssignment> {
    let speakers: Vec<SpeakerId> = manifest.speakers().into_iter().collect();
    if speakers.len() < n_dev + n_test + 1 {
        return Err(Error::Data(format!(
            "need at least {} speakers for {n_dev} dev + {n_test} test + 1 train, manifest has {}",
            n_dev + n_test + 1,
            speakers.len()
        )));
    }
    let utt_count = |s: &SpeakerId| {
        manifest
            .records()
            .iter()
            .filter(|r| r.lineage.is_clean() && &r.speaker == s)
            .count()
    };
    let counts: Vec<usize> = speakers.iter().map(utt_count).collect();
    let total: usize = counts.iter().sum();

    let mut best: Option<(f64, SplitAssignment)> = None;
    for attempt in 0..options.max_attempts.max(1) {
        let mut rng = seeding::rng_indexed(seed, "split", attempt as u64);
        let draw = match options.males_per_heldout {
            None => {
                let mut order: Vec<usize> = (0..speakers.len()).collect();
                order.shuffle(&mut rng);
                let pick = |range: std::ops::Range<usize>| -> BTreeSet<SpeakerId> {
                    order[range].iter().map(|&i| speakers[i].clone()).collect()
                };
                SplitAssignment {
                    test: pick(0..n_test),
                    dev: pick(n_test..n_test + n_dev),
                    train: pick(n_test + n_dev..order.len()),
                }
            }
            Some(males) => stratified(manifest, &speakers, n_dev, n_test, males, &mut rng)?,
        };
        let Some((lo, hi)) = options.train_share else {
            return Ok(draw);
        };
        let train_utts: usize = speakers
            .iter()
            .zip(&counts)
            .filter(|(s, _)| draw.train.contains(s))
            .map(|(_, c)| c)
            .sum();
        let share = if total == 0 {
            0.0
        } else {
            train_utts as f64 / total as f64
        };
        if (lo..=hi).contains(&share) {
            return Ok(draw);
        }
        let dist = (share - 0.5 * (lo + hi)).abs();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, draw));
        }
    }
    Ok(best.expect("at least one attempt").1)
}

fn stratified(
    manifest: &CorpusManifest,
    speakers: &[SpeakerId],
    n_dev: usize,
    n_test: usize,
    males: usize,
    rng: &mut impl rand::Rng,
) -> Result<SplitAssignment> {
    if males > n_dev.min(n_test) {
        return Err(Error::Config(format!(
            "{males} males per held-out split exceeds split size"
        )));
    }
    let mut by_sex = |sex: Sex| -> Result<Vec<SpeakerId>> {
        let mut v = Vec::new();
        for s in speakers {
            let known = manifest
                .sex(s)
                .ok_or_else(|| Error::Data(format!("sex of speaker {s} unknown")))?;
            if known == sex {
                v.push(s.clone());
            }
        }
        v.shuffle(rng);
        Ok(v)
    };
    let mut m = by_sex(Sex::Male)?;
    let mut f = by_sex(Sex::Female)?;
    let need_m = 2 * males;
    let need_f = (n_dev - males) + (n_test - males);
    if m.len() < need_m || f.len() < need_f {
        return Err(Error::Data(format!(
            "stratified split needs {need_m} male and {need_f} female speakers, have {} and {}",
            m.len(),
            f.len()
        )));
    }
    let test: BTreeSet<_> = m.drain(..males).chain(f.drain(..n_test - males)).collect();
    let dev: BTreeSet<_> = m.drain(..males).chain(f.drain(..n_dev - males)).collect();
    let train: BTreeSet<_> = m.into_iter().chain(f).collect();
    Ok(SplitAssignment { train, dev, test })
}
