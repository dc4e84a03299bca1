use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sinv_core::augment::{augment_corpus, load_banks, synth_banks, AugmentPlan, SnrRange};
use sinv_core::binfmt;
use sinv_core::corpus::{synth_corpus, CorpusManifest, SynthOptions};
use sinv_core::dataset::Dataset;
use sinv_core::evaluate::{dump_trajectories, train_model, SplitData, TestSet, TrainRegime};
use sinv_core::features::{FeatureConfig, FeatureKind};
use sinv_core::losses_metrics::{Granularity, LossSpec};
use sinv_core::neural::{
    read_checkpoint, write_checkpoint, Activation, Architecture, Checkpoint, ModelParams, ModelSpec,
};
use sinv_core::report::{adaptation_table, eval_table, write_text, Summary};
use sinv_core::seeding::derive;
use sinv_core::training::{adapt_speaker, grid_search, history_tsv, AdaptConfig, TargetNorm, TrainConfig};
use sinv_core::{Error, Result};

use crate::{
    AdaptArgs, AugmentArgs, Cli, Cmd, EvaluateArgs, FeaturizeArgs, FitArgs, GridArgs, ModelArgs, SynthArgs,
    SynthBanksArgs, TrainArgs,
};

const NORM_KEY: &str = "norm";

pub fn run(cli: &Cli, resolved: &str) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    // Grid cells run on the global pool; results do not depend on its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    let ctx = Ctx {
        seed: cli.seed,
        jobs: cli.jobs,
        resolved,
    };
    match &cli.command {
        Cmd::Synth(a) => synth(&ctx, a),
        Cmd::SynthBanks(a) => banks(&ctx, a),
        Cmd::Augment(a) => augment(&ctx, a),
        Cmd::Featurize(a) => featurize(&ctx, a),
        Cmd::Train(a) => train(&ctx, a),
        Cmd::Adapt(a) => adapt(&ctx, a),
        Cmd::Evaluate(a) => evaluate(&ctx, a),
        Cmd::Gridsearch(a) => gridsearch(&ctx, a),
    }
}

struct Ctx<'a> {
    seed: u64,
    jobs: usize,
    resolved: &'a str,
}

impl Ctx<'_> {
    /// Creates the run directory and writes `run.log`.
    fn start(&self, out: &Path, seeds: &[(&str, u64)]) -> Result<()> {
        let mut log = format!("version={}\n{}", env!("CARGO_PKG_VERSION"), self.resolved);
        for (name, s) in seeds {
            log.push_str(&format!("derived_seed.{name}={s}\n"));
        }
        write_text(&out.join("run.log"), &log)
    }
}

fn parse_arch(s: &str) -> Result<Architecture> {
    Architecture::parse(s).ok_or_else(|| Error::Config(format!("unknown model {s:?}, expected bigrnn or bilstm")))
}

fn model_spec(a: &ModelArgs, input_dim: usize) -> Result<ModelSpec> {
    let spec = ModelSpec {
        n_recurrent_layers: a.layers,
        hidden: a.hidden,
        dense_hidden: a.dense_hidden,
        dense_activation: Activation::parse(&a.dense_activation)
            .ok_or_else(|| Error::Config(format!("unknown activation {:?}", a.dense_activation)))?,
        dropout: a.dropout,
        ..ModelSpec::new(parse_arch(&a.model)?, input_dim)
    };
    spec.validate()?;
    Ok(spec)
}

fn train_config(a: &FitArgs, seed: u64) -> Result<TrainConfig> {
    let c = TrainConfig {
        lr0: a.lr,
        batch_size: a.batch_size,
        warm_epochs: a.warm_epochs,
        decay_every: a.decay_every,
        decay_factor: a.decay_factor,
        patience: a.patience,
        max_epochs: a.max_epochs,
        seed,
        loss: LossSpec::parse(&a.loss)?,
        granularity: Granularity::parse(&a.granularity)?,
        freeze: Vec::new(),
    };
    c.validate()?;
    Ok(c)
}

fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    CorpusManifest::load(path)
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    ctx.start(&a.out, &[])?;
    let m = synth_corpus(&SynthOptions::new(ctx.seed, a.speakers, a.utts, a.duration), &a.out)?;
    let s = m.split();
    println!(
        "wrote {} utterances ({} train / {} dev / {} test speakers) to {}",
        m.records().len(),
        s.train.len(),
        s.dev.len(),
        s.test.len(),
        a.out.join("manifest.tsv").display()
    );
    Ok(())
}

fn banks(ctx: &Ctx, a: &SynthBanksArgs) -> Result<()> {
    ctx.start(&a.out, &[])?;
    let banks = synth_banks(ctx.seed, &a.out)?;
    let clips: usize = banks.iter().map(|b| b.clips().len()).sum();
    println!("wrote {clips} clips to {}", a.out.join("index.tsv").display());
    Ok(())
}

fn augment(ctx: &Ctx, a: &AugmentArgs) -> Result<()> {
    let plan: AugmentPlan = a.plan.parse()?;
    let snr = SnrRange::new(a.snr_low, a.snr_high)?;
    let seed = derive(ctx.seed, "augment");
    ctx.start(&a.out, &[("augment", seed)])?;
    let manifest = load_manifest(&a.manifest)?;
    let banks = match &a.banks {
        Some(index) => load_banks(index, &a.exclude)?,
        None => Vec::new(),
    };
    let before = manifest.records().len();
    let out = augment_corpus(&manifest, &banks, plan, snr, seed, &a.out, ctx.jobs)?;
    out.save(a.out.join("manifest.tsv"))?;
    println!(
        "added {} {plan} copies; manifest at {}",
        out.records().len() - before,
        a.out.join("manifest.tsv").display()
    );
    Ok(())
}

fn featurize(ctx: &Ctx, a: &FeaturizeArgs) -> Result<()> {
    let kind: FeatureKind = a.features.parse()?;
    ctx.start(&a.out, &[])?;
    let manifest = load_manifest(&a.manifest)?;
    let records: Vec<_> = manifest.records().iter().collect();
    let data = Dataset::build(&manifest, &records, &FeatureConfig::default(), kind, ctx.jobs)?;
    let dir = a.out.join("features");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut index = String::from("utt\tspeaker\tsplit\tlineage\tsegment\tvalid\tpath\n");
    for e in &data.examples {
        let rel = PathBuf::from("features").join(format!("{}.s{:03}.aif", e.utterance_id, e.segment));
        binfmt::write_matrix(&a.out.join(&rel), e.features.view(), e.valid)?;
        let split = manifest.split().split_of(&e.speaker).map(|s| s.as_str()).unwrap_or("");
        index.push_str(&format!(
            "{}\t{}\t{split}\t{}\t{}\t{}\t{}\n",
            e.utterance_id,
            e.speaker,
            e.lineage,
            e.segment,
            e.valid,
            rel.display()
        ));
    }
    write_text(&a.out.join("index.tsv"), &index)?;
    println!(
        "wrote {} segments of {} {kind} features to {}",
        data.len(),
        data.dims,
        dir.display()
    );
    Ok(())
}

fn plans_of(data: &Dataset) -> String {
    let plans: BTreeSet<_> = data
        .examples
        .iter()
        .filter_map(|e| AugmentPlan::of_lineage(e.lineage))
        .map(|p| p.as_str())
        .collect();
    plans.into_iter().collect::<Vec<_>>().join(",")
}

fn checkpoint_for(params: ModelParams, norm: &TargetNorm, kind: FeatureKind, extra: &[(&str, String)]) -> Checkpoint {
    let mut c = Checkpoint::new(params);
    c.meta.insert("features".into(), kind.as_str().into());
    for (k, v) in extra {
        c.meta.insert((*k).into(), v.clone());
    }
    c.extras.insert(NORM_KEY.into(), norm.to_matrix());
    c
}

struct Loaded {
    name: String,
    ckpt: Checkpoint,
    norm: TargetNorm,
    kind: FeatureKind,
}

fn load_model(path: &Path) -> Result<Loaded> {
    let ckpt = read_checkpoint(path)?;
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    let kind: FeatureKind = ckpt
        .meta
        .get("features")
        .ok_or_else(|| bad("checkpoint does not record its feature kind"))?
        .parse()?;
    let norm = match ckpt.extras.get(NORM_KEY) {
        Some(m) => TargetNorm::from_matrix(m)?,
        None => TargetNorm::identity(),
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Loaded { name, ckpt, norm, kind })
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let regime: TrainRegime = a.regime.parse()?;
    let kind: FeatureKind = a.model.features.parse()?;
    let (init_seed, train_seed) = (derive(ctx.seed, "init"), derive(ctx.seed, "train"));
    let config = train_config(&a.fit, train_seed)?;
    parse_arch(&a.model.model)?;
    ctx.start(&a.out, &[("init", init_seed), ("train", train_seed)])?;

    let manifest = load_manifest(&a.manifest)?;
    let all = SplitData::build(&manifest, &FeatureConfig::default(), kind, ctx.jobs)?;
    let data = all.lineages(|l| regime.includes(l));
    let spec = model_spec(&a.model, data.train.dims)?;
    let model = train_model(&spec, init_seed, &data.train, &data.dev, &config)?;

    let ckpt = checkpoint_for(
        model.params.clone(),
        &model.norm,
        kind,
        &[
            ("regime", regime.to_string()),
            ("loss", config.loss.to_string()),
            ("plans", plans_of(&data.train)),
        ],
    );
    let path = a.out.join("model.ckpt");
    write_checkpoint(&path, &ckpt)?;
    write_text(&a.out.join("history.tsv"), &history_tsv(&model.fit.history))?;

    // Score what was saved (f32 blocks) so the numbers match `evaluate`.
    let saved = read_checkpoint(&path)?;
    let test = all.test.filtered(|e| TestSet::Clean.includes(e.lineage));
    let norm = TargetNorm::from_matrix(&saved.extras[NORM_KEY])?;
    let report = sinv_core::training::evaluate_model(&saved.params, &test, &norm, Granularity::Pooled)?;
    write_text(&a.out.join("test_clean.tsv"), &eval_table(&report))?;
    let mut s = Summary::new();
    s.push("train_segments", data.train.len())
        .push("dev_segments", data.dev.len())
        .push("parameters", spec.param_count())
        .push("epochs", model.fit.history.len())
        .push("best_epoch", model.fit.best_epoch)
        .push("best_dev_loss", format!("{:.6}", model.fit.best_dev_loss))
        .push_eval("test_clean", &report);
    write_text(&a.out.join("summary.txt"), &s.render())?;
    println!(
        "best epoch {} of {}; clean test average PPMC {:.4}",
        model.fit.best_epoch,
        model.fit.history.len(),
        report.average.ppmc
    );
    Ok(())
}

fn adapt(ctx: &Ctx, a: &AdaptArgs) -> Result<()> {
    let loaded = load_model(&a.checkpoint)?;
    let base = AdaptConfig {
        lr0: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        loss: LossSpec::parse(&a.loss)?,
        granularity: Granularity::parse(&a.granularity)?,
        freeze: a.freeze.clone(),
        ..AdaptConfig::default()
    };
    let seeds: Vec<(String, u64)> = a
        .speaker
        .iter()
        .map(|s| (format!("adapt.{s}"), derive(ctx.seed, &format!("adapt/{s}"))))
        .collect();
    let seed_refs: Vec<(&str, u64)> = seeds.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    ctx.start(&a.out, &seed_refs)?;

    let manifest = load_manifest(&a.manifest)?;
    let known = manifest.speakers();
    let mut rows = Vec::new();
    let mut summary = Summary::new();
    for (speaker, (_, seed)) in a.speaker.iter().zip(&seeds) {
        if !known.iter().any(|k| k.as_str() == speaker) {
            return Err(Error::Data(format!("speaker {speaker} is not in the manifest")));
        }
        let records: Vec<_> = manifest
            .records()
            .iter()
            .filter(|r| r.speaker.as_str() == speaker && r.lineage.is_clean())
            .collect();
        let data = Dataset::build(&manifest, &records, &FeatureConfig::default(), loaded.kind, ctx.jobs)?;
        let config = AdaptConfig {
            seed: *seed,
            ..base.clone()
        };
        let r = adapt_speaker(&loaded.ckpt.params, &loaded.norm, &data, &config)?;
        let mut ckpt = loaded.ckpt.clone();
        ckpt.params = r.params;
        ckpt.meta.insert("adapted_to".into(), speaker.clone());
        write_checkpoint(&a.out.join(format!("adapted_{speaker}.ckpt")), &ckpt)?;
        write_text(&a.out.join(format!("history_{speaker}.tsv")), &history_tsv(&r.history))?;
        summary
            .push(format!("{speaker}.train_utts"), r.sizes.0)
            .push(format!("{speaker}.dev_utts"), r.sizes.1)
            .push(format!("{speaker}.test_utts"), r.sizes.2)
            .push_eval(&format!("{speaker}.before"), &r.before)
            .push_eval(&format!("{speaker}.after"), &r.after);
        println!(
            "{speaker}: {}/{}/{} utterances, PPMC {:.4} -> {:.4}",
            r.sizes.0, r.sizes.1, r.sizes.2, r.before.average.ppmc, r.after.average.ppmc
        );
        rows.push((speaker.clone(), r.before.average.ppmc, r.after.average.ppmc));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&(String, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let avg = ("Average".to_string(), mean(|r| r.1), mean(|r| r.2));
    rows.push(avg);
    write_text(&a.out.join("adaptation.tsv"), &adaptation_table(&rows))?;
    write_text(&a.out.join("summary.txt"), &summary.render())?;
    Ok(())
}

fn unique_names(paths: &[PathBuf], loaded: &mut [Loaded]) {
    let mut counts = BTreeMap::new();
    for l in loaded.iter() {
        *counts.entry(l.name.clone()).or_insert(0) += 1;
    }
    for (p, l) in paths.iter().zip(loaded.iter_mut()) {
        if counts[&l.name] > 1 {
            let dir = p
                .parent()
                .and_then(|d| d.file_name())
                .map(|d| d.to_string_lossy().into_owned())
                .unwrap_or_default();
            l.name = format!("{dir}_{}", l.name);
        }
    }
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let test_set: TestSet = a.test_set.parse()?;
    ctx.start(&a.out, &[])?;
    let mut models = a.checkpoint.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    unique_names(&a.checkpoint, &mut models);
    let manifest = load_manifest(&a.manifest)?;
    let test_records: Vec<_> = manifest
        .records()
        .iter()
        .filter(|r| manifest.split_of(r) == sinv_core::corpus::Split::Test)
        .collect();
    let mut tests: BTreeMap<&str, Dataset> = BTreeMap::new();
    for m in &models {
        if !tests.contains_key(m.kind.as_str()) {
            let d = Dataset::build(&manifest, &test_records, &FeatureConfig::default(), m.kind, ctx.jobs)?;
            tests.insert(m.kind.as_str(), d);
        }
    }

    let mut bars = String::from("model,regime,test_set,ppmc\n");
    let mut summary = Summary::new();
    for m in &models {
        let test = tests[m.kind.as_str()].filtered(|e| test_set.includes(e.lineage));
        if test.is_empty() {
            return Err(Error::Data(format!("the {test_set} test set is empty")));
        }
        let report = sinv_core::training::evaluate_model(&m.ckpt.params, &test, &m.norm, Granularity::Pooled)?;
        write_text(&a.out.join(format!("metrics_{}.tsv", m.name)), &eval_table(&report))?;
        let regime = m.ckpt.meta.get("regime").map(String::as_str).unwrap_or("");
        bars.push_str(&format!("{},{regime},{test_set},{:.6}\n", m.name, report.average.ppmc));
        summary.push_eval(&format!("{}.{test_set}", m.name), &report);
        println!("{}: {test_set} average PPMC {:.4}", m.name, report.average.ppmc);
    }
    write_text(&a.out.join("bars.csv"), &bars)?;
    write_text(&a.out.join("summary.txt"), &summary.render())?;

    if a.by_plan {
        let plans: Vec<AugmentPlan> = AugmentPlan::ALL
            .into_iter()
            .filter(|&p| {
                tests
                    .values()
                    .all(|d| d.examples.iter().any(|e| AugmentPlan::of_lineage(e.lineage) == Some(p)))
            })
            .collect();
        if plans.is_empty() {
            return Err(Error::Data("the test split has no augmented copies".into()));
        }
        let mut out = String::from("model");
        for p in &plans {
            out.push_str(&format!("\t{p}"));
        }
        out.push_str("\tAverage\n");
        for m in &models {
            let mut vals = Vec::new();
            for &p in &plans {
                let test = tests[m.kind.as_str()].filtered(|e| AugmentPlan::of_lineage(e.lineage) == Some(p));
                let r = sinv_core::training::evaluate_model(&m.ckpt.params, &test, &m.norm, Granularity::Pooled)?;
                vals.push(r.average.ppmc);
            }
            out.push_str(&m.name);
            for v in &vals {
                out.push_str(&format!("\t{v:.4}"));
            }
            out.push_str(&format!("\t{:.4}\n", vals.iter().sum::<f64>() / vals.len() as f64));
        }
        write_text(&a.out.join("cross.tsv"), &out)?;
    }

    if let Some(utt) = &a.trajectory {
        let kind = models[0].kind;
        if models.iter().any(|m| m.kind != kind) {
            return Err(Error::Config(
                "trajectory dumps need checkpoints with one feature kind".into(),
            ));
        }
        let refs: Vec<_> = models
            .iter()
            .map(|m| (m.name.clone(), &m.ckpt.params, &m.norm))
            .collect();
        let csv = dump_trajectories(&refs, &tests[kind.as_str()], utt)?;
        write_text(&a.out.join("trajectories.csv"), &csv)?;
    }
    Ok(())
}

fn gridsearch(ctx: &Ctx, a: &GridArgs) -> Result<()> {
    let regime: TrainRegime = a.regime.parse()?;
    let kind: FeatureKind = a.model.features.parse()?;
    let (init_seed, train_seed) = (derive(ctx.seed, "init"), derive(ctx.seed, "train"));
    let base = train_config(&a.fit, train_seed)?;
    parse_arch(&a.model.model)?;
    ctx.start(&a.out, &[("init", init_seed), ("train", train_seed)])?;

    let manifest = load_manifest(&a.manifest)?;
    let data = SplitData::build(&manifest, &FeatureConfig::default(), kind, ctx.jobs)?.lineages(|l| regime.includes(l));
    let spec = model_spec(&a.model, data.train.dims)?;
    let norm = TargetNorm::fit(&data.train)?;
    let grid = grid_search(
        &spec,
        init_seed,
        &norm.apply(&data.train),
        &norm.apply(&data.dev),
        &base,
        &a.lrs,
        &a.batch_sizes,
    )?;
    write_text(&a.out.join("grid.tsv"), &grid.to_tsv())?;
    let mut s = Summary::new();
    s.push("cells", grid.table.len())
        .push("best.lr", format!("{:e}", grid.best.lr))
        .push("best.batch_size", grid.best.batch_size)
        .push("best.dev_loss", format!("{:.6}", grid.best.dev_loss));
    write_text(&a.out.join("summary.txt"), &s.render())?;
    println!(
        "best of {} cells: lr {:e}, batch {} (dev loss {:.4})",
        grid.table.len(),
        grid.best.lr,
        grid.best.batch_size,
        grid.best.dev_loss
    );
    Ok(())
}
