use std::path::Path;
use std::process::{Command, Output};

use conjrules::binarizer::Binarizer;
use conjrules::conjnet::GraftedModel;
use conjrules::dataset::{load_csv, FeatureSchema};
use conjrules::grafting::discrete_accuracy;

const QUICK: &str = "[train]\nhidden_per_subnet = 6\npretrain_epochs = 3\njoint_epochs = 4\n[eval]\nk = 3\n[audit]\nsamples = 200\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conjrules"))
        .current_dir(dir)
        .args(args)
        .env_remove("CONJRULES_CONFIG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn quick_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("quick.toml"), QUICK).unwrap();
    ok(dir.path(), &["--out", "o", "synth", "--rules", "(f0&f2)|(f11&f13)", "--rows", "600"]);
    dir
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = quick_dir();
    let d = dir.path();
    let c = ["--config", "quick.toml", "--out", "o"];
    ok(d, &[&c[..], &["binarize"]].concat());
    ok(d, &[&c[..], &["train"]].concat());
    let rules = ok(d, &[&c[..], &["extract-rules"]].concat());
    assert!(rules.contains("Loan Information"));
    let explain = ok(d, &[&c[..], &["explain", "--row", "0"]].concat());
    assert!(explain.starts_with("decision: "));
    ok(d, &[&c[..], &["audit", "--row", "1", "--against", "all-active"]].concat());
    let table = ok(d, &[&c[..], &["evaluate", "--k", "3"]].concat());
    assert!(table.contains("| Model"));
    assert!(table.contains("CART"));
    for f in [
        "binarizer.json",
        "model.json",
        "trace.csv",
        "rulebook.json",
        "rulebook.txt",
        "explain_row0.json",
        "audit_row1.json",
        "metrics.csv",
        "metrics.txt",
        "config.snapshot.toml",
    ] {
        assert!(d.join("o").join(f).exists(), "missing {f}");
    }
    let audit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("o/audit_row1.json")).unwrap()).unwrap();
    assert!(audit["verdict"] == "faithful" || audit["verdict"] == "unfaithful");
    assert_eq!(audit["against"], "all-active");
}

#[test]
fn identical_runs_give_identical_bytes() {
    let dir = quick_dir();
    let d = dir.path();
    for out in ["a", "b"] {
        std::fs::create_dir_all(d.join(out)).unwrap();
        std::fs::copy(d.join("o/synthetic.csv"), d.join(out).join("synthetic.csv")).unwrap();
        std::fs::copy(d.join("o/schema.toml"), d.join(out).join("schema.toml")).unwrap();
        ok(d, &["--config", "quick.toml", "--out", out, "train"]);
        ok(d, &["--config", "quick.toml", "--out", out, "extract-rules"]);
    }
    for f in ["model.json", "rulebook.json", "rulebook.txt", "binarizer.json", "trace.csv"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn seed_flag_changes_the_model() {
    let dir = quick_dir();
    let d = dir.path();
    ok(d, &["--config", "quick.toml", "--out", "o", "train"]);
    let first = std::fs::read(d.join("o/model.json")).unwrap();
    ok(d, &["--config", "quick.toml", "--out", "o", "--seed", "7", "train"]);
    assert_ne!(first, std::fs::read(d.join("o/model.json")).unwrap());
    let snap = std::fs::read_to_string(d.join("o/config.snapshot.toml")).unwrap();
    assert!(snap.contains("seed = 7"));
}

#[test]
fn config_path_from_environment() {
    let dir = quick_dir();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_conjrules"))
        .current_dir(d)
        .args(["--out", "o", "train"])
        .env("CONJRULES_CONFIG", d.join("quick.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let snap = std::fs::read_to_string(d.join("o/config.snapshot.toml")).unwrap();
    assert!(snap.contains("joint_epochs = 4"));
}

#[test]
fn inline_record_is_explained() {
    let dir = quick_dir();
    let d = dir.path();
    ok(d, &["--config", "quick.toml", "--out", "o", "train"]);
    ok(d, &["--out", "o", "extract-rules"]);
    let record: String = format!(
        "{{{}}}",
        (0..30).map(|i| format!("\"f{i}\": {}", (i % 2))).collect::<Vec<_>>().join(", ")
    );
    ok(d, &["--out", "o", "explain", "--record", &record]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("o/explain_record.json")).unwrap()).unwrap();
    assert_eq!(report["input"].as_array().unwrap().len(), 60);

    let bad = run(d, &["--out", "o", "explain", "--record", "{\"f0\": 1}"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("f1"));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = quick_dir();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[train]\nbatch_size = 0\n").unwrap();
    let out = run(d, &["--config", "bad.toml", "--out", "o", "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));

    std::fs::write(d.join("typo.toml"), "[train]\nbatch_sise = 3\n").unwrap();
    let out = run(d, &["--config", "typo.toml", "--out", "o", "train"]);
    assert!(!out.status.success());

    let out = run(d, &["--out", "o", "extract-rules"]);
    assert!(!out.status.success(), "no model yet");

    let out = run(d, &["--out", "o", "explain"]);
    assert!(!out.status.success(), "row selector is required");
}

#[test]
fn mismatched_artifacts_are_reported() {
    let dir = quick_dir();
    let d = dir.path();
    ok(d, &["--config", "quick.toml", "--out", "o", "train"]);
    ok(d, &["--out", "o", "extract-rules"]);
    // retrain on a different feature set; the old rule book no longer fits
    ok(d, &["--out", "o", "synth", "--rules", "f0&f1", "--rows", "300", "--features", "12"]);
    ok(d, &["--config", "quick.toml", "--out", "o", "train"]);
    let out = run(d, &["--out", "o", "explain", "--row", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn default_config_recovers_planted_rules() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "o", "synth", "--rules", "(f0&f2)|(f1&f3)", "--rows", "5000"]);
    let stdout = ok(d, &["--out", "o", "train"]);
    assert!(stdout.contains("discrete train accuracy"));
    let schema = FeatureSchema::from_file(d.join("o/schema.toml")).unwrap();
    let (ds, _) = load_csv(d.join("o/synthetic.csv"), &schema).unwrap();
    let binarizer = Binarizer::load(d.join("o/binarizer.json")).unwrap();
    let model = GraftedModel::load(d.join("o/model.json")).unwrap();
    let acc = discrete_accuracy(&model, &binarizer.transform_dataset(&ds).unwrap());
    assert!(acc >= 0.95, "accuracy {acc}");
}
