//! Dataset model: utterance manifests, speaker-independent splits,
//! augmentation lineage, and the synthetic articulatory corpus.

mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::audio::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::TV_NAMES;

pub use split::{make_split, make_split_with, SplitOptions};
pub use synth::{synth_corpus, ArticulatorySynth, SynthOptions, CARRIER_INTERCEPT_HZ};

pub const MANIFEST_HEADER: &str = "utt\tspeaker\tsplit\tlineage\tparent\taudio\ttv";
const SPEAKERS_HEADER: &str = "speaker\tsex";
/// Sidecar next to a manifest carrying optional speaker metadata.
pub const SPEAKERS_FILE: &str = "speakers.tsv";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeakerId(String);

impl SpeakerId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(['\t', '\n']) {
            return Err(Error::Data(format!("invalid speaker id {id:?}")));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Sex::Male),
            "female" => Ok(Sex::Female),
            _ => Err(Error::Data(format!("unknown sex {s:?}"))),
        }
    }
}

/// Where an utterance's audio came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lineage {
    Clean,
    Background,
    Music,
    Gaussian,
    RoomIr,
}

impl Lineage {
    pub const ALL: [Lineage; 5] = [
        Lineage::Clean,
        Lineage::Background,
        Lineage::Music,
        Lineage::Gaussian,
        Lineage::RoomIr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Lineage::Clean => "clean",
            Lineage::Background => "background",
            Lineage::Music => "music",
            Lineage::Gaussian => "gaussian",
            Lineage::RoomIr => "room_ir",
        }
    }

    pub fn is_clean(self) -> bool {
        self == Lineage::Clean
    }
}

impl fmt::Display for Lineage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lineage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Lineage::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown lineage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker: SpeakerId,
    pub audio_path: PathBuf,
    pub tv_path: PathBuf,
    pub lineage: Lineage,
    pub parent_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: BTreeSet<SpeakerId>,
    pub dev: BTreeSet<SpeakerId>,
    pub test: BTreeSet<SpeakerId>,
}

impl SplitAssignment {
    pub fn split_of(&self, speaker: &SpeakerId) -> Option<Split> {
        if self.train.contains(speaker) {
            Some(Split::Train)
        } else if self.dev.contains(speaker) {
            Some(Split::Dev)
        } else if self.test.contains(speaker) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn speakers(&self, split: Split) -> &BTreeSet<SpeakerId> {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn validate(&self, speakers: &BTreeSet<SpeakerId>) -> Result<()> {
        let overlap = self
            .train
            .intersection(&self.dev)
            .chain(self.train.intersection(&self.test))
            .chain(self.dev.intersection(&self.test))
            .next();
        if let Some(s) = overlap {
            return Err(Error::Data(format!("speaker {s} is assigned to two splits")));
        }
        let all: BTreeSet<_> = self.train.iter().chain(&self.dev).chain(&self.test).cloned().collect();
        if &all != speakers {
            return Err(Error::Data(
                "split assignment does not cover exactly the manifest speakers".into(),
            ));
        }
        Ok(())
    }
}

/// An immutable-after-load set of utterances with a speaker split.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    records: Vec<UtteranceRecord>,
    split: SplitAssignment,
    sexes: BTreeMap<SpeakerId, Sex>,
    base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn new(records: Vec<UtteranceRecord>, split: SplitAssignment, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let manifest = Self {
            records,
            split,
            sexes: BTreeMap::new(),
            base_dir: base_dir.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn with_sexes(mut self, sexes: BTreeMap<SpeakerId, Sex>) -> Self {
        self.sexes = sexes;
        self
    }

    fn validate(&self) -> Result<()> {
        let mut by_id: BTreeMap<&str, &UtteranceRecord> = BTreeMap::new();
        for r in &self.records {
            if r.utterance_id.is_empty() || r.utterance_id.contains(['\t', '\n']) {
                return Err(Error::Data(format!("invalid utterance id {:?}", r.utterance_id)));
            }
            if by_id.insert(&r.utterance_id, r).is_some() {
                return Err(Error::Data(format!("duplicate utterance id {}", r.utterance_id)));
            }
        }
        for r in &self.records {
            match (&r.parent_id, r.lineage.is_clean()) {
                (None, true) => {}
                (Some(p), false) => {
                    let parent = by_id
                        .get(p.as_str())
                        .ok_or_else(|| Error::Data(format!("{}: unknown parent {p}", r.utterance_id)))?;
                    if !parent.lineage.is_clean() {
                        return Err(Error::Data(format!(
                            "{}: parent {p} is itself augmented",
                            r.utterance_id
                        )));
                    }
                    if parent.speaker != r.speaker || parent.tv_path != r.tv_path {
                        return Err(Error::Data(format!(
                            "{}: speaker and tv path must match parent {p}",
                            r.utterance_id
                        )));
                    }
                }
                (None, false) => {
                    return Err(Error::Data(format!(
                        "{}: augmented record without parent",
                        r.utterance_id
                    )))
                }
                (Some(_), true) => return Err(Error::Data(format!("{}: clean record with a parent", r.utterance_id))),
            }
        }
        self.split.validate(&self.speakers())
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn split(&self) -> &SplitAssignment {
        &self.split
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn tv_names(&self) -> [&'static str; 6] {
        TV_NAMES
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn sex(&self, speaker: &SpeakerId) -> Option<Sex> {
        self.sexes.get(speaker).copied()
    }

    pub fn speakers(&self) -> BTreeSet<SpeakerId> {
        self.records.iter().map(|r| r.speaker.clone()).collect()
    }

    pub fn record(&self, utterance_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utterance_id == utterance_id)
    }

    pub fn split_of(&self, record: &UtteranceRecord) -> Split {
        self.split
            .split_of(&record.speaker)
            .expect("validated manifests assign every speaker")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Replaces the split, e.g. after [`make_split`].
    pub fn with_split(mut self, split: SplitAssignment) -> Result<Self> {
        split.validate(&self.speakers())?;
        self.split = split;
        Ok(self)
    }

    /// Rebases relative paths so the manifest can be saved in `new_base`.
    pub fn rebased(mut self, new_base: &Path) -> Self {
        let old = self.base_dir.clone();
        for r in &mut self.records {
            for p in [&mut r.audio_path, &mut r.tv_path] {
                let abs = if p.is_absolute() { p.clone() } else { old.join(&*p) };
                *p = pathdiff(&abs, new_base);
            }
        }
        self.base_dir = new_base.to_path_buf();
        self
    }

    /// Adds an augmented copy of a clean utterance. The copy shares the
    /// parent's speaker (hence split) and target file.
    pub fn attach_augmented(
        &mut self,
        parent_id: &str,
        lineage: Lineage,
        audio_path: impl Into<PathBuf>,
    ) -> Result<&UtteranceRecord> {
        let parent = self
            .record(parent_id)
            .ok_or_else(|| Error::Data(format!("unknown parent utterance {parent_id}")))?;
        if !parent.lineage.is_clean() {
            return Err(Error::Data(format!(
                "{parent_id} is a {} copy; augmented copies must derive from clean audio",
                parent.lineage
            )));
        }
        if lineage.is_clean() {
            return Err(Error::Data("an augmented copy cannot have lineage clean".into()));
        }
        let (speaker, tv_path) = (parent.speaker.clone(), parent.tv_path.clone());
        let utterance_id = self.child_id(parent_id, lineage);
        self.records.push(UtteranceRecord {
            utterance_id,
            speaker,
            audio_path: audio_path.into(),
            tv_path,
            lineage,
            parent_id: Some(parent_id.to_string()),
        });
        Ok(self.records.last().unwrap())
    }

    /// Id the next augmented copy of `parent_id` with `lineage` will get.
    pub fn child_id(&self, parent_id: &str, lineage: Lineage) -> String {
        let existing = self
            .records
            .iter()
            .filter(|r| r.parent_id.as_deref() == Some(parent_id) && r.lineage == lineage)
            .count();
        format!("{parent_id}__{lineage}{}", existing + 1)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let bad = |line: usize, msg: String| Error::format("manifest", path, format!("line {line}: {msg}"));

        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(bad(1, format!("header must be {MANIFEST_HEADER:?}")));
        }
        let mut records = Vec::new();
        let mut split = SplitAssignment::default();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [utt, speaker, split_name, lineage, parent, audio, tv] = cols[..] else {
                return Err(bad(lineno, format!("expected 7 columns, got {}", cols.len())));
            };
            let speaker = SpeakerId::new(speaker).map_err(|e| bad(lineno, e.to_string()))?;
            let which: Split = split_name.parse().map_err(|e: Error| bad(lineno, e.to_string()))?;
            match split.split_of(&speaker) {
                Some(s) if s != which => {
                    return Err(bad(lineno, format!("speaker {speaker} listed in {s} and {which}")))
                }
                Some(_) => {}
                None => {
                    match which {
                        Split::Train => split.train.insert(speaker.clone()),
                        Split::Dev => split.dev.insert(speaker.clone()),
                        Split::Test => split.test.insert(speaker.clone()),
                    };
                }
            }
            records.push(UtteranceRecord {
                utterance_id: utt.to_string(),
                speaker,
                audio_path: PathBuf::from(audio),
                tv_path: PathBuf::from(tv),
                lineage: lineage.parse().map_err(|e: Error| bad(lineno, e.to_string()))?,
                parent_id: (parent != "-").then(|| parent.to_string()),
            });
        }
        let mut manifest = Self::new(records, split, base_dir)?;
        for r in &manifest.records {
            for p in [&r.audio_path, &r.tv_path] {
                let full = manifest.resolve(p);
                if !full.is_file() {
                    return Err(Error::Data(format!(
                        "{}: referenced file {} does not exist",
                        r.utterance_id,
                        full.display()
                    )));
                }
            }
        }
        let sidecar = manifest.base_dir.join(SPEAKERS_FILE);
        if sidecar.is_file() {
            manifest.sexes = read_speakers(&sidecar)?;
        }
        Ok(manifest)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            let cols = [
                r.utterance_id.as_str(),
                r.speaker.as_str(),
                self.split_of(r).as_str(),
                r.lineage.as_str(),
                r.parent_id.as_deref().unwrap_or("-"),
                &r.audio_path.to_string_lossy(),
                &r.tv_path.to_string_lossy(),
            ]
            .join("\t");
            out.push_str(&cols);
            out.push('\n');
        }
        out
    }

    /// Writes the manifest (and the speaker sidecar when sexes are known).
    /// Relative paths are written as stored, so `path` should live in
    /// [`Self::base_dir`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))?;
        if !self.sexes.is_empty() {
            let sidecar = path
                .parent()
                .map(|p| p.join(SPEAKERS_FILE))
                .unwrap_or_else(|| PathBuf::from(SPEAKERS_FILE));
            let mut out = String::from(SPEAKERS_HEADER);
            out.push('\n');
            for (s, sex) in &self.sexes {
                out.push_str(&format!("{s}\t{}\n", sex.as_str()));
            }
            fs::write(&sidecar, out).map_err(|e| Error::io(&sidecar, e))?;
        }
        Ok(())
    }
}

fn read_speakers(path: &Path) -> Result<BTreeMap<SpeakerId, Sex>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(SPEAKERS_HEADER) {
        return Err(Error::format("speakers", path, "bad header"));
    }
    let mut out = BTreeMap::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let (id, sex) = line
            .split_once('\t')
            .ok_or_else(|| Error::format("speakers", path, format!("bad line {line:?}")))?;
        out.insert(SpeakerId::new(id)?, sex.parse()?);
    }
    Ok(out)
}

/// Relative path from directory `base` to `target`, walking up with `..`
/// where needed.
fn pathdiff(target: &Path, base: &Path) -> PathBuf {
    use std::path::Component;
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (target, base) = (abs(target), abs(base));
    let t: Vec<Component> = target.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return target;
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_manifest(n_speakers: usize, utts: usize) -> CorpusManifest {
        let mut records = Vec::new();
        let mut split = SplitAssignment::default();
        for s in 0..n_speakers {
            let speaker = SpeakerId::new(format!("S{s:02}")).unwrap();
            for u in 0..utts {
                let id = format!("S{s:02}_U{u:02}");
                records.push(UtteranceRecord {
                    utterance_id: id.clone(),
                    speaker: speaker.clone(),
                    audio_path: format!("audio/{id}.wav").into(),
                    tv_path: format!("tv/{id}.aif").into(),
                    lineage: Lineage::Clean,
                    parent_id: None,
                });
            }
            match s {
                0 => split.test.insert(speaker),
                1 => split.dev.insert(speaker),
                _ => split.train.insert(speaker),
            };
        }
        CorpusManifest::new(records, split, "/nonexistent").unwrap()
    }

    #[test]
    fn attach_inherits_speaker_tv_and_split() {
        let mut m = toy_manifest(3, 2);
        let rec = m
            .attach_augmented("S00_U01", Lineage::Gaussian, "aug/x.wav")
            .unwrap()
            .clone();
        assert_eq!(rec.utterance_id, "S00_U01__gaussian1");
        assert_eq!(rec.tv_path, PathBuf::from("tv/S00_U01.aif"));
        assert_eq!(m.split_of(&rec), Split::Test);
        let second = m.attach_augmented("S00_U01", Lineage::Gaussian, "aug/y.wav").unwrap();
        assert_eq!(second.utterance_id, "S00_U01__gaussian2");
    }

    #[test]
    fn attach_errors() {
        let mut m = toy_manifest(3, 2);
        assert!(m.attach_augmented("nope", Lineage::Music, "a.wav").is_err());
        m.attach_augmented("S01_U00", Lineage::Background, "a.wav").unwrap();
        let err = m
            .attach_augmented("S01_U00__background1", Lineage::Gaussian, "b.wav")
            .unwrap_err();
        assert!(err.to_string().contains("clean"));
        assert!(m.attach_augmented("S01_U00", Lineage::Clean, "c.wav").is_err());
    }

    #[test]
    fn tsv_layout() {
        let mut m = toy_manifest(3, 1);
        m.attach_augmented("S02_U00", Lineage::RoomIr, "aug/r.wav").unwrap();
        let tsv = m.to_tsv();
        let lines: Vec<_> = tsv.lines().collect();
        assert_eq!(lines[0], "utt\tspeaker\tsplit\tlineage\tparent\taudio\ttv");
        assert_eq!(
            lines[1],
            "S00_U00\tS00\ttest\tclean\t-\taudio/S00_U00.wav\ttv/S00_U00.aif"
        );
        assert_eq!(
            lines[4],
            "S02_U00__room_ir1\tS02\ttrain\troom_ir\tS02_U00\taug/r.wav\ttv/S02_U00.aif"
        );
    }

    #[test]
    fn load_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(3, 2);
        for r in m.records() {
            for p in [&r.audio_path, &r.tv_path] {
                let full = dir.path().join(p);
                fs::create_dir_all(full.parent().unwrap()).unwrap();
                fs::write(full, b"x").unwrap();
            }
        }
        let m = CorpusManifest {
            base_dir: dir.path().to_path_buf(),
            ..m
        };
        let path = dir.path().join("manifest.tsv");
        m.save(&path).unwrap();
        let back = CorpusManifest::load(&path).unwrap();
        assert_eq!(back, m);

        fs::remove_file(dir.path().join("tv/S01_U00.aif")).unwrap();
        assert!(CorpusManifest::load(&path).is_err());

        fs::write(&path, "utt\tspeaker\n").unwrap();
        assert!(CorpusManifest::load(&path).is_err());
    }

    #[test]
    fn relative_paths() {
        assert_eq!(
            pathdiff(Path::new("/a/b/c.wav"), Path::new("/a")),
            PathBuf::from("b/c.wav")
        );
        assert_eq!(
            pathdiff(Path::new("/a/b/c.wav"), Path::new("/a/d/e")),
            PathBuf::from("../../b/c.wav")
        );
    }

    #[test]
    fn rejects_speaker_in_two_splits() {
        let mut m = toy_manifest(3, 1);
        m.split.train.insert(SpeakerId::new("S00").unwrap());
        assert!(m.validate().is_err());
    }
}
