use std::path::Path;
use std::process::{Command, Output};

use sinv_core::binfmt::read_matrix;
use sinv_core::corpus::CorpusManifest;
use sinv_core::neural::read_checkpoint;
use sinv_core::report::Summary;

fn sinv(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinv"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = sinv(cwd, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn log_value(dir: &Path, key: &str) -> String {
    let log = std::fs::read_to_string(dir.join("run.log")).unwrap();
    Summary::parse(&log).unwrap().get(key).unwrap().to_string()
}

const TINY: [&str; 12] = [
    "--features",
    "mfcc",
    "--layers",
    "1",
    "--hidden",
    "3",
    "--dense-hidden",
    "3",
    "--batch-size",
    "8",
    "--max-epochs",
    "1",
];

/// 4 speakers x 10 one-second utterances.
fn corpus(dir: &Path) {
    ok(
        dir,
        &[
            "--seed",
            "1",
            "synth",
            "--speakers",
            "4",
            "--utts",
            "10",
            "--duration",
            "1.0",
            "--out",
            "c",
        ],
    );
}

#[test]
fn synth_counts_and_loader_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        dir.path(),
        &[
            "--seed",
            "1",
            "synth",
            "--speakers",
            "3",
            "--utts",
            "2",
            "--duration",
            "0.5",
            "--out",
            "c",
        ],
    );
    assert!(stdout.contains("wrote 6 utterances"));
    let m = CorpusManifest::load(dir.path().join("c/manifest.tsv")).unwrap();
    assert_eq!(m.records().len(), 6);
    assert_eq!(log_value(&dir.path().join("c"), "speakers"), "3");
    assert_eq!(log_value(&dir.path().join("c"), "seed"), "1");
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg"),
        "# synthetic\nutts = 2\nspeakers=4\nduration=0.5\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &["--config", "cfg", "synth", "--speakers", "3", "--out", "c"],
    );
    let out = dir.path().join("c");
    assert_eq!(log_value(&out, "speakers"), "3");
    assert_eq!(log_value(&out, "utts"), "2");
    assert_eq!(log_value(&out, "duration"), "0.5");
    assert_eq!(
        CorpusManifest::load(out.join("manifest.tsv")).unwrap().records().len(),
        6
    );
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad"), "speakerz=3\n").unwrap();
    let unknown = sinv(dir.path(), &["--config", "bad", "synth", "--out", "c"]);
    assert_eq!(code(&unknown), 2);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("speakerz"));
    assert_eq!(code(&sinv(dir.path(), &["synth", "--out", "c", "--bogus"])), 2);
    assert_eq!(code(&sinv(dir.path(), &["synth", "--speakers", "2", "--out", "c"])), 2);
    assert_eq!(
        code(&sinv(dir.path(), &["train", "--manifest", "missing.tsv", "--out", "t"])),
        3
    );
    let bad_loss = sinv(
        dir.path(),
        &["train", "--manifest", "missing.tsv", "--loss", "huber", "--out", "t"],
    );
    assert_eq!(code(&bad_loss), 2);
}

#[test]
fn augment_adds_two_copies_with_default_snr_bounds() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    ok(
        dir.path(),
        &[
            "augment",
            "--manifest",
            "c/manifest.tsv",
            "--plan",
            "gaussian",
            "--out",
            "g",
        ],
    );
    let m = CorpusManifest::load(dir.path().join("g/manifest.tsv")).unwrap();
    assert_eq!(m.records().len(), 40 * 3);
    assert_eq!(log_value(&dir.path().join("g"), "snr-low"), "5");
    assert_eq!(log_value(&dir.path().join("g"), "snr-high"), "20");
    let missing_bank = sinv(
        dir.path(),
        &[
            "augment",
            "--manifest",
            "c/manifest.tsv",
            "--plan",
            "room_ir",
            "--out",
            "r",
        ],
    );
    assert_eq!(code(&missing_bank), 3);
}

#[test]
fn featurize_writes_segment_matrices() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--speakers",
            "3",
            "--utts",
            "1",
            "--duration",
            "2.0",
            "--out",
            "c",
        ],
    );
    for (kind, dims) in [("mfcc", 13), ("mfcc_deltas", 39), ("mspec", 40)] {
        ok(
            dir.path(),
            &[
                "featurize",
                "--manifest",
                "c/manifest.tsv",
                "--features",
                kind,
                "--out",
                kind,
            ],
        );
        let index = std::fs::read_to_string(dir.path().join(kind).join("index.tsv")).unwrap();
        let rows: Vec<_> = index.lines().skip(1).collect();
        assert_eq!(rows.len(), 3);
        let path = rows[0].split('\t').last().unwrap();
        let (m, valid) = read_matrix(&dir.path().join(kind).join(path)).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (199, dims));
        assert_eq!(valid, 199);
    }
    let first = std::fs::read(dir.path().join("mfcc/features/S01_U001.s000.aif")).unwrap();
    ok(
        dir.path(),
        &[
            "featurize",
            "--manifest",
            "c/manifest.tsv",
            "--features",
            "mfcc",
            "--out",
            "mfcc",
        ],
    );
    assert_eq!(
        std::fs::read(dir.path().join("mfcc/features/S01_U001.s000.aif")).unwrap(),
        first
    );
}

#[test]
fn train_accepts_weighted_losses_and_evaluate_reports() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    for alpha in ["0.8", "0.5"] {
        let loss = format!("weighted:{alpha}");
        let mut args = vec!["train", "--manifest", "c/manifest.tsv", "--loss", &loss, "--out"];
        let out = format!("w{alpha}");
        args.push(&out);
        args.extend_from_slice(&TINY);
        ok(dir.path(), &args);
        let ckpt = read_checkpoint(&dir.path().join(&out).join("model.ckpt")).unwrap();
        assert_eq!(ckpt.meta["loss"], loss);
        assert_eq!(ckpt.meta["features"], "mfcc");
        assert_eq!(ckpt.params.spec.hidden, 3);
        assert_eq!(log_value(&dir.path().join(&out), "lr"), "0.001");
    }
    let history = std::fs::read_to_string(dir.path().join("w0.8/history.tsv")).unwrap();
    assert_eq!(
        history.lines().next().unwrap(),
        "epoch\tlr\ttrain_loss\tdev_loss\tdev_ppmc"
    );

    ok(
        dir.path(),
        &[
            "evaluate",
            "--checkpoint",
            "w0.8/model.ckpt,w0.5/model.ckpt",
            "--manifest",
            "c/manifest.tsv",
            "--out",
            "e",
        ],
    );
    let bars = std::fs::read_to_string(dir.path().join("e/bars.csv")).unwrap();
    let lines: Vec<_> = bars.lines().collect();
    assert_eq!(lines[0], "model,regime,test_set,ppmc");
    assert!(lines[1].starts_with("w0.8_model,clean,clean,"));
    assert!(lines[2].starts_with("w0.5_model,clean,clean,"));
    let table = std::fs::read_to_string(dir.path().join("e/metrics_w0.8_model.tsv")).unwrap();
    assert!(table.starts_with("metric\tLA\tLP\tTBCL\tTBCD\tTTCL\tTTCD\tAverage\n"));

    // The train summary scores the saved checkpoint, so it matches evaluate.
    let train = Summary::parse(&std::fs::read_to_string(dir.path().join("w0.8/summary.txt")).unwrap()).unwrap();
    let eval = Summary::parse(&std::fs::read_to_string(dir.path().join("e/summary.txt")).unwrap()).unwrap();
    assert_eq!(
        train.get("test_clean.average.ppmc"),
        eval.get("w0.8_model.clean.average.ppmc")
    );

    let empty = sinv(
        dir.path(),
        &[
            "evaluate",
            "--checkpoint",
            "w0.8/model.ckpt",
            "--manifest",
            "c/manifest.tsv",
            "--test-set",
            "augmented",
            "--out",
            "e2",
        ],
    );
    assert_eq!(code(&empty), 3);
}

#[test]
fn zero_epoch_adaptation_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let mut args = vec!["train", "--manifest", "c/manifest.tsv", "--out", "t"];
    args.extend_from_slice(&TINY);
    ok(dir.path(), &args);
    let stdout = ok(
        dir.path(),
        &[
            "adapt",
            "--checkpoint",
            "t/model.ckpt",
            "--manifest",
            "c/manifest.tsv",
            "--speaker",
            "S02",
            "--max-epochs",
            "0",
            "--out",
            "a",
        ],
    );
    assert!(stdout.contains("8/1/1 utterances"));
    let before = read_checkpoint(&dir.path().join("t/model.ckpt")).unwrap();
    let after = read_checkpoint(&dir.path().join("a/adapted_S02.ckpt")).unwrap();
    assert_eq!(before.params, after.params);
    let table = std::fs::read_to_string(dir.path().join("a/adaptation.tsv")).unwrap();
    let rows: Vec<_> = table.lines().collect();
    assert_eq!(rows[0], "speaker\tbefore\tafter");
    let cells: Vec<_> = rows[1].split('\t').collect();
    assert_eq!(cells[0], "S02");
    assert_eq!(cells[1], cells[2]);
    assert!(rows[2].starts_with("Average\t"));
    let summary = Summary::parse(&std::fs::read_to_string(dir.path().join("a/summary.txt")).unwrap()).unwrap();
    assert_eq!(summary.get("S02.train_utts"), Some("8"));
}

#[test]
fn gridsearch_defaults_to_twelve_cells() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "--seed",
            "1",
            "synth",
            "--speakers",
            "3",
            "--utts",
            "2",
            "--duration",
            "0.5",
            "--out",
            "c",
        ],
    );
    let mut args = vec!["gridsearch", "--manifest", "c/manifest.tsv", "--out", "g"];
    args.extend_from_slice(&TINY);
    ok(dir.path(), &args);
    let grid = std::fs::read_to_string(dir.path().join("g/grid.tsv")).unwrap();
    let rows: Vec<_> = grid.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    let losses: Vec<f64> = rows
        .iter()
        .map(|r| r.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(losses.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(log_value(&dir.path().join("g"), "lrs"), "0.001,0.0003,0.0001");
    assert_eq!(log_value(&dir.path().join("g"), "batch-sizes"), "16,32,64,128");
}
