use std::path::Path;
use std::process::{Command, Output};

use hgomics::config::Config;
use hgomics::dataset::write_dataset;
use hgomics::synthetic::{generate, SyntheticSpec};

fn hgomics(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgomics")).args(args).env("RUST_LOG", "warn").output().expect("spawn hgomics")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config() -> Config {
    let mut c = Config::default();
    c.folds = 3;
    c.aco.iterations = 3;
    c.aco.agents_per_omic = 3;
    c.aco.budget_per_agent = 4;
    c.aco.top_b = 12;
    c.gat.hidden = vec![8, 8, 4];
    c.gat.heads = 2;
    c.train.pretrain_epochs = 5;
    c.train.train_epochs = 5;
    c
}

fn raw_cohort(dir: &Path) -> std::path::PathBuf {
    let mut spec = SyntheticSpec::planted(3);
    spec.patients = 60;
    spec.dims = vec![20, 15, 10];
    spec.informative = 3;
    write_dataset(&generate(&spec).dataset, dir).unwrap()
}

#[test]
fn missing_manifest_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hgomics(&["preprocess", "--manifest", s(&tmp.path().join("nope.json")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = hgomics(&["evaluate", "--run", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"folds": 10, "learning_rate": 3}"#).unwrap();
    let manifest = raw_cohort(&tmp.path().join("raw"));
    let out = hgomics(&["select", "--data", s(manifest.parent().unwrap()), "--config", s(&cfg), "--out", s(&tmp.path().join("sel"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn default_config_prints_table_constants() {
    let out = hgomics(&["config"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let aco = &v["aco"];
    assert_eq!(aco["c_v"], 0.2);
    assert_eq!(aco["c_e"], 0.2);
    assert_eq!(aco["rho_v"], 0.1);
    assert_eq!(aco["q0"], 0.8);
    assert_eq!(aco["iterations"], 50);
    assert_eq!(aco["agents_per_omic"], 10);
    assert_eq!(aco["budget_per_agent"], 30);
    let schema = hgomics(&["config", "--schema"]);
    assert!(schema.status.success());
    serde_json::from_slice::<serde_json::Value>(&schema.stdout).unwrap();
}

#[test]
fn full_pipeline_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let manifest = raw_cohort(&t.join("raw"));
    let cfg = t.join("config.json");
    tiny_config().save(&cfg).unwrap();
    let (data, sel, run) = (t.join("data"), t.join("sel"), t.join("run"));

    let out = hgomics(&["preprocess", "--manifest", s(&manifest), "--out", s(&data), "--variance-threshold", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("provenance.json").is_file());

    let out = hgomics(&["select", "--data", s(&data), "--config", s(&cfg), "--out", s(&sel), "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["selection.json", "selected_features.json", "desirability.csv"] {
        assert!(sel.join("fold_00").join(f).is_file(), "{f}");
    }
    let reduced: Vec<_> = std::fs::read_dir(sel.join("fold_00"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("reduced_"))
        .collect();
    assert_eq!(reduced.len(), 3, "{reduced:?}");
    let text = std::fs::read_to_string(sel.join("fold_00").join(&reduced[0])).unwrap();
    assert!(text.starts_with("patient_id,"));

    let out = hgomics(&["train", "--data", s(&data), "--selection", s(&sel), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("predictions.csv").is_file());
    assert!(run.join("fold_02").join("vcdn.bin").is_file());
    assert_eq!(Config::load(&run.join("config.json")).unwrap(), tiny_config());

    let out = hgomics(&["evaluate", "--run", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["auroc"]["mean"].as_f64().is_some());

    let out = hgomics(&["biomarkers", "--run", s(&run), "--metric", "auroc"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let top = std::fs::read_to_string(run.join("top30.csv")).unwrap();
    assert!(top.starts_with("rank,id,name,omic\n"));
    let ranked = std::fs::read_to_string(run.join("biomarkers.csv")).unwrap();
    assert!(ranked.starts_with("rank,feature_id,omic,score,folds_present\n"));

    let single = t.join("single");
    let out = hgomics(&["train", "--data", s(&data), "--selection", s(&sel), "--out", s(&single), "--modalities", "omic2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!single.join("fold_00").join("vcdn.bin").exists());
    assert!(single.join("fold_00").join("model_omic2.bin").is_file());

    let out = hgomics(&["train", "--data", s(&data), "--selection", s(&sel), "--out", s(&t.join("bad")), "--modalities", "rna"]);
    assert_ne!(out.status.code(), Some(0));

    let homo = t.join("homo");
    let out = hgomics(&["train", "--data", s(&data), "--selection", s(&sel), "--out", s(&homo), "--ablation", "homogeneous"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(hgomics(&["evaluate", "--run", s(&homo)]).status.success());
}
