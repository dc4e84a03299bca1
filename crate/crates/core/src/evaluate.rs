//! Experiment drivers: train/test regimes over augmented corpora, the
//! cross-augmentation matrix, and per-frame trajectory dumps.

use std::fmt;
use std::str::FromStr;

use crate::augment::AugmentPlan;
use crate::corpus::{CorpusManifest, Lineage, Split};
use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureKind};
use crate::losses_metrics::{EvalReport, Granularity};
use crate::neural::{ModelParams, ModelSpec};
use crate::training::{evaluate_model, fit, predict, FitResult, TargetNorm, TrainConfig};
use crate::{N_TVS, TV_NAMES};

/// Which test utterances to score. "Augmented" means the augmented copies
/// only; "clean_plus_augmented" is their union with the clean originals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestSet {
    Clean,
    Augmented,
    CleanPlusAugmented,
}

impl TestSet {
    pub const ALL: [TestSet; 3] = [TestSet::Clean, TestSet::Augmented, TestSet::CleanPlusAugmented];

    pub fn as_str(self) -> &'static str {
        match self {
            TestSet::Clean => "clean",
            TestSet::Augmented => "augmented",
            TestSet::CleanPlusAugmented => "clean_plus_augmented",
        }
    }

    pub fn includes(self, lineage: Lineage) -> bool {
        match self {
            TestSet::Clean => lineage.is_clean(),
            TestSet::Augmented => !lineage.is_clean(),
            TestSet::CleanPlusAugmented => true,
        }
    }
}

impl fmt::Display for TestSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TestSet::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown test set {s:?}")))
    }
}

/// Training data: clean originals only, or originals plus augmented copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainRegime {
    Clean,
    Augmented,
}

impl TrainRegime {
    pub const ALL: [TrainRegime; 2] = [TrainRegime::Clean, TrainRegime::Augmented];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainRegime::Clean => "clean",
            TrainRegime::Augmented => "augmented",
        }
    }

    pub fn includes(self, lineage: Lineage) -> bool {
        self == TrainRegime::Augmented || lineage.is_clean()
    }
}

impl fmt::Display for TrainRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainRegime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TrainRegime::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown training regime {s:?}")))
    }
}

/// Examples of every record, grouped by split, built once and filtered per
/// experiment cell.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl SplitData {
    pub fn build(manifest: &CorpusManifest, config: &FeatureConfig, kind: FeatureKind, jobs: usize) -> Result<Self> {
        let part = |split: Split| {
            let records: Vec<_> = manifest
                .records()
                .iter()
                .filter(|r| manifest.split_of(r) == split)
                .collect();
            Dataset::build(manifest, &records, config, kind, jobs)
        };
        Ok(Self {
            train: part(Split::Train)?,
            dev: part(Split::Dev)?,
            test: part(Split::Test)?,
        })
    }

    /// Same examples restricted to `keep` lineages in every split.
    pub fn lineages(&self, keep: impl Fn(Lineage) -> bool) -> Self {
        Self {
            train: self.train.filtered(|e| keep(e.lineage)),
            dev: self.dev.filtered(|e| keep(e.lineage)),
            test: self.test.filtered(|e| keep(e.lineage)),
        }
    }
}

/// A trained model with the target scaling it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub norm: TargetNorm,
    pub fit: FitResult,
}

impl TrainedModel {
    pub fn evaluate(&self, data: &Dataset) -> Result<EvalReport> {
        evaluate_model(&self.params, data, &self.norm, Granularity::Pooled)
    }
}

/// Fits target normalization on `train`, then trains from a seeded init.
pub fn train_model(
    spec: &ModelSpec,
    init_seed: u64,
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    let norm = TargetNorm::fit(train)?;
    let initial = ModelParams::init(spec, init_seed)?;
    let fit = fit(initial, &norm.apply(train), &norm.apply(dev), config)?;
    Ok(TrainedModel {
        params: fit.params.clone(),
        norm,
        fit,
    })
}

fn non_empty(d: &Dataset, what: &str) -> Result<()> {
    if d.is_empty() {
        Err(Error::Data(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

/// Rows are training augmentation, columns test augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMatrix {
    pub plans: Vec<AugmentPlan>,
    /// Average PPMC over the six TVs.
    pub values: Vec<Vec<f64>>,
}

impl CrossMatrix {
    pub fn row_average(&self, row: usize) -> f64 {
        self.values[row].iter().sum::<f64>() / self.values[row].len() as f64
    }

    /// Rows whose diagonal entry is the row maximum.
    pub fn diagonal_dominant_rows(&self) -> usize {
        (0..self.plans.len())
            .filter(|&i| {
                let d = self.values[i][i];
                self.values[i].iter().all(|&v| v <= d)
            })
            .count()
    }

    /// Columns whose diagonal entry is the column maximum: on each plan's
    /// copies, the model trained on that plan scores best.
    pub fn diagonal_dominant_columns(&self) -> usize {
        (0..self.plans.len())
            .filter(|&j| {
                let d = self.values[j][j];
                self.values.iter().all(|row| row[j] <= d)
            })
            .count()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("train\\test");
        for p in &self.plans {
            out.push('\t');
            out.push_str(p.as_str());
        }
        out.push_str("\tAverage\n");
        for (i, p) in self.plans.iter().enumerate() {
            out.push_str(p.as_str());
            for v in &self.values[i] {
                out.push_str(&format!("\t{v:.4}"));
            }
            out.push_str(&format!("\t{:.4}\n", self.row_average(i)));
        }
        out
    }
}

/// Trains one model per augmentation plan (clean plus that plan's copies)
/// and tests each on every plan's augmented test copies. `data` must hold
/// all three plans.
pub fn cross_augmentation_matrix(
    data: &SplitData,
    spec: &ModelSpec,
    init_seed: u64,
    config: &TrainConfig,
) -> Result<CrossMatrix> {
    let plans = AugmentPlan::ALL.to_vec();
    let of_plan = |p: AugmentPlan| move |l: Lineage| AugmentPlan::of_lineage(l) == Some(p);
    for &p in &plans {
        non_empty(&data.test.filtered(|e| of_plan(p)(e.lineage)), &format!("{p} test set"))?;
    }
    let mut values = Vec::new();
    for &p in &plans {
        let sub = data.lineages(|l| l.is_clean() || of_plan(p)(l));
        let model = train_model(spec, init_seed, &sub.train, &sub.dev, config)?;
        let row = plans
            .iter()
            .map(|&q| {
                let test = data.test.filtered(|e| of_plan(q)(e.lineage));
                Ok(model.evaluate(&test)?.average.ppmc)
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    Ok(CrossMatrix { plans, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeRow {
    pub model: String,
    pub regime: TrainRegime,
    pub test_set: TestSet,
    pub report: EvalReport,
}

/// Every model under both training regimes, scored on the three test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeGrid {
    pub rows: Vec<RegimeRow>,
}

impl RegimeGrid {
    pub fn ppmc(&self, model: &str, regime: TrainRegime, test_set: TestSet) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.regime == regime && r.test_set == test_set)
            .map(|r| r.report.average.ppmc)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\tregime\ttest_set");
        for tv in TV_NAMES {
            out.push('\t');
            out.push_str(tv);
        }
        out.push_str("\tAverage\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}", r.model, r.regime, r.test_set));
            for m in &r.report.per_tv {
                out.push_str(&format!("\t{:.4}", m.ppmc));
            }
            out.push_str(&format!("\t{:.4}\n", r.report.average.ppmc));
        }
        out
    }

    /// Plot-ready bars: one line per (model, regime, test set).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,regime,test_set,ppmc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                r.model, r.regime, r.test_set, r.report.average.ppmc
            ));
        }
        out
    }
}

pub fn regime_comparison(
    data: &SplitData,
    models: &[(String, ModelSpec)],
    init_seed: u64,
    config: &TrainConfig,
) -> Result<RegimeGrid> {
    if models.is_empty() {
        return Err(Error::Config("regime comparison needs at least one model".into()));
    }
    for t in TestSet::ALL {
        non_empty(&data.test.filtered(|e| t.includes(e.lineage)), &format!("{t} test set"))?;
    }
    let mut rows = Vec::new();
    for (name, spec) in models {
        for regime in TrainRegime::ALL {
            let sub = data.lineages(|l| regime.includes(l));
            let model = train_model(spec, init_seed, &sub.train, &sub.dev, config)?;
            for test_set in TestSet::ALL {
                let test = data.test.filtered(|e| test_set.includes(e.lineage));
                rows.push(RegimeRow {
                    model: name.clone(),
                    regime,
                    test_set,
                    report: model.evaluate(&test)?,
                });
            }
        }
    }
    Ok(RegimeGrid { rows })
}

/// One utterance's examples in segment order.
pub fn utterance_examples<'a>(data: &'a Dataset, utterance_id: &str) -> Vec<&'a Example> {
    let mut out: Vec<_> = data
        .examples
        .iter()
        .filter(|e| e.utterance_id == utterance_id)
        .collect();
    out.sort_by_key(|e| e.segment);
    out
}

/// Plot-ready per-frame CSV for one utterance: `frame_time`, then for each
/// TV the truth column followed by one prediction column per model.
/// `frame_time` is the window centre in seconds.
pub fn dump_trajectories(
    models: &[(String, &ModelParams, &TargetNorm)],
    data: &Dataset,
    utterance_id: &str,
) -> Result<String> {
    let examples = utterance_examples(data, utterance_id);
    if examples.is_empty() {
        return Err(Error::Data(format!("no frames for utterance {utterance_id}")));
    }
    let single = Dataset {
        examples: examples.iter().map(|&e| e.clone()).collect(),
        ..data.empty_like()
    };
    let mut preds = Vec::new();
    for (_, params, norm) in models {
        let mut p = predict(params, &single)?;
        for (m, e) in p.iter_mut().zip(&single.examples) {
            if m.nrows() < e.valid {
                return Err(Error::Shape("prediction shorter than the truth".into()));
            }
            norm.denormalize(m, e.valid);
        }
        preds.push(p);
    }
    let mut out = String::from("frame_time");
    for tv in TV_NAMES {
        out.push_str(&format!(",{tv}_truth"));
        for (name, _, _) in models {
            out.push_str(&format!(",{tv}_{name}"));
        }
    }
    out.push('\n');
    let hop_s = 0.01;
    for (k, e) in single.examples.iter().enumerate() {
        for i in 0..e.valid {
            let t = (e.segment * crate::audio::TV_FRAMES_PER_SEGMENT + i + 1) as f64 * hop_s;
            out.push_str(&format!("{t:.2}"));
            for c in 0..N_TVS {
                out.push_str(&format!(",{:.6}", e.targets[[i, c]]));
                for p in &preds {
                    out.push_str(&format!(",{:.6}", p[k][[i, c]]));
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}
