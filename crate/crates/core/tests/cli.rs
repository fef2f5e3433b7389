use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepprior::eval::ideal_apfd;
use deepprior::features::features_from_json_str;
use deepprior::synth::{self, NoiseSpec, SynthSpec};
use deepprior::NULL_REPORT_ID;
use serde_json::{json, Value};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepprior")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    corpus: PathBuf,
}

impl Fixture {
    fn new(clusters: &[(&str, usize)]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        synth::generate(&SynthSpec::new(21, clusters, NoiseSpec::all()), &corpus).unwrap();
        Fixture { dir, corpus }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn labels(&self) -> PathBuf {
        self.corpus.join("labels.json")
    }
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
}

#[test]
fn extract_counts_reports_plus_null_and_is_repeatable() {
    let f = Fixture::new(&[("a", 3), ("b", 2)]);
    let out = f.path("features.json");
    assert_eq!(code(&["extract", "--corpus", s(&f.corpus), "--out", s(&out)]), 0);
    let first = fs::read(&out).unwrap();
    let features = features_from_json_str(std::str::from_utf8(&first).unwrap()).unwrap();
    assert_eq!(features.len(), 6);
    assert_eq!(features.iter().filter(|x| x.report_id == NULL_REPORT_ID).count(), 1);

    assert_eq!(code(&["extract", "--corpus", s(&f.corpus), "--out", s(&out)]), 0);
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn extract_missing_manifest_is_corpus_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.json");
    assert_eq!(code(&["extract", "--corpus", s(dir.path()), "--out", s(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn extract_bad_model_file_is_model_error() {
    let f = Fixture::new(&[("a", 1)]);
    let model = f.path("widget.json");
    fs::write(&model, "{}").unwrap();
    let out = f.path("f.json");
    assert_eq!(
        code(&["extract", "--corpus", s(&f.corpus), "--out", s(&out), "--widget-model", s(&model)]),
        3
    );
}

#[test]
fn prioritize_writes_order_and_matrix() {
    let f = Fixture::new(&[("a", 3), ("b", 2), ("c", 1)]);
    let features = f.path("features.json");
    let order = f.path("out/order.json");
    assert_eq!(code(&["extract", "--corpus", s(&f.corpus), "--out", s(&features)]), 0);
    assert_eq!(code(&["prioritize", "--features", s(&features), "--out", s(&order)]), 0);
    let doc: Value = serde_json::from_slice(&fs::read(&order).unwrap()).unwrap();
    assert_eq!(doc["version"], 1);
    assert_eq!(doc["order"].as_array().unwrap().len(), 6);
    assert_eq!(doc["audit"].as_array().unwrap().len(), 6);
    let matrix: Value = serde_json::from_slice(&fs::read(f.path("out/matrix.json")).unwrap()).unwrap();
    assert_eq!(matrix["ids"].as_array().unwrap().len(), 7);
    for key in ["wp", "p", "wc", "r"] {
        assert_eq!(matrix["components"][key].as_array().unwrap().len(), 7);
    }
}

#[test]
fn prioritize_without_null_is_features_error() {
    let f = Fixture::new(&[("a", 2)]);
    let features = f.path("features.json");
    assert_eq!(code(&["extract", "--corpus", s(&f.corpus), "--out", s(&features)]), 0);
    let mut doc: Value = serde_json::from_slice(&fs::read(&features).unwrap()).unwrap();
    let list = doc["features"].as_array_mut().unwrap();
    list.retain(|x| x["report_id"] != NULL_REPORT_ID);
    write_json(&features, &doc);
    assert_eq!(code(&["prioritize", "--features", s(&features), "--out", s(&f.path("o.json"))]), 4);

    fs::write(&features, "not json").unwrap();
    assert_eq!(code(&["prioritize", "--features", s(&features), "--out", s(&f.path("o.json"))]), 4);
}

#[test]
fn gamma_one_ignores_context_weights() {
    let f = Fixture::new(&[("a", 4), ("b", 3), ("c", 2)]);
    let features = f.path("features.json");
    assert_eq!(code(&["extract", "--corpus", s(&f.corpus), "--out", s(&features)]), 0);
    let order_for = |beta: &str, name: &str| {
        let out = f.path(name);
        let args = ["prioritize", "--features", s(&features), "--out", s(&out), "--gamma", "1", "--beta", beta];
        assert_eq!(code(&args), 0);
        let doc: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
        doc["order"].clone()
    };
    assert_eq!(order_for("0", "o1.json"), order_for("1", "o2.json"));
}

#[test]
fn config_file_and_flag_override() {
    let f = Fixture::new(&[("a", 2), ("b", 2)]);
    let features = f.path("features.json");
    assert_eq!(code(&["extract", "--corpus", s(&f.corpus), "--out", s(&features)]), 0);
    let config = f.path("config.json");
    write_json(&config, &json!({"weights": {"alpha": 0.5, "beta": 0.5, "gamma": 2.0}}));
    let out = f.path("o.json");
    let base = ["prioritize", "--features", s(&features), "--out", s(&out), "--config", s(&config)];
    assert_eq!(code(&base), 1);
    let mut overridden = base.to_vec();
    overridden.extend(["--gamma", "0.3"]);
    assert_eq!(code(&overridden), 0);
    let matrix: Value = serde_json::from_slice(&fs::read(f.path("matrix.json")).unwrap()).unwrap();
    assert_eq!(matrix["weights"]["gamma"], 0.3);

    write_json(&config, &json!({"no_such_key": 1}));
    assert_eq!(code(&base), 1);
}

fn write_order(path: &Path, ids: &[String]) {
    let audit: Vec<Value> = ids.iter().map(|id| json!({"id": id, "min_sim": 0.0})).collect();
    write_json(path, &json!({"version": 1, "order": ids, "audit": audit}));
}

#[test]
fn evaluate_prints_ideal_for_large_shaped_corpus() {
    // 134 reports over 9 categories, each category's first report up front.
    let dir = tempfile::tempdir().unwrap();
    let mut labels = serde_json::Map::new();
    let mut ids = Vec::new();
    for i in 0..134 {
        let id = format!("r{i:03}");
        labels.insert(id.clone(), json!(format!("c{}", i.min(8))));
        ids.push(id);
    }
    let labels_path = dir.path().join("labels.json");
    let order_path = dir.path().join("order.json");
    write_json(&labels_path, &Value::Object(labels));
    write_order(&order_path, &ids);
    let out = run(&["evaluate", "--order", s(&order_path), "--labels", s(&labels_path)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.974");
    assert_eq!(format!("{:.3}", ideal_apfd(134, 9).unwrap()), "0.974");
}

#[test]
fn evaluate_label_mismatch_is_labels_error() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.json");
    let order = dir.path().join("order.json");
    write_order(&order, &["r1".to_string(), "r2".to_string()]);
    write_json(&labels, &json!({"r1": "a", "r2": "b", "ghost": "a"}));
    assert_eq!(code(&["evaluate", "--order", s(&order), "--labels", s(&labels)]), 5);
    write_json(&labels, &json!({}));
    assert_eq!(code(&["evaluate", "--order", s(&order), "--labels", s(&labels)]), 5);
}

#[test]
fn compare_writes_results_and_ranks_ideal_first() {
    let f = Fixture::new(&[("a", 5), ("b", 2), ("c", 1)]);
    let results = f.path("results.json");
    let out = run(&[
        "compare",
        "--corpus",
        s(&f.corpus),
        "--labels",
        s(&f.labels()),
        "--strategies",
        "ideal,random,deepprior,image",
        "--out",
        s(&results),
        "--random-runs",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(printed.contains("ideal") && printed.contains("random"));
    let doc: Value = serde_json::from_slice(&fs::read(&results).unwrap()).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let mean = |name: &str| rows.iter().find(|r| r["strategy"] == name).unwrap()["mean_apfd"].as_f64().unwrap();
    assert!(mean("ideal") >= mean("random"));
    assert_eq!(rows[1]["runs"], 20);
}

#[test]
fn compare_unknown_strategy_is_usage_error() {
    let f = Fixture::new(&[("a", 1)]);
    let labels = f.labels();
    let args = ["compare", "--corpus", s(&f.corpus), "--labels", s(&labels), "--strategies", "bddiv"];
    assert_eq!(code(&args), 1);
}

#[test]
fn compare_labels_with_unknown_id_is_labels_error() {
    let f = Fixture::new(&[("a", 2)]);
    let labels = f.path("bad_labels.json");
    write_json(&labels, &json!({"r1": "a", "r2": "a", "r99": "b"}));
    let results = f.path("r.json");
    let args = ["compare", "--corpus", s(&f.corpus), "--labels", s(&labels), "--out", s(&results)];
    assert_eq!(code(&args), 5);
}

#[test]
fn train_widget_from_rendered_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("widgets");
    synth::write_widget_dataset(&data, 4, 1).unwrap();
    let (m1, m2) = (dir.path().join("m1.json"), dir.path().join("m2.json"));
    assert_eq!(code(&["train-widget", "--data", s(&data), "--out", s(&m1)]), 0);
    assert_eq!(code(&["train-widget", "--data", s(&data), "--out", s(&m2)]), 0);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let model: Value = serde_json::from_slice(&fs::read(&m1).unwrap()).unwrap();
    assert_eq!(model["classes"].as_array().unwrap().len(), 14);

    // A declared class with no samples.
    let index = data.join("samples.json");
    let mut doc: Value = serde_json::from_slice(&fs::read(&index).unwrap()).unwrap();
    doc["samples"].as_array_mut().unwrap().retain(|x| x["type"] != "RBA");
    write_json(&index, &doc);
    assert_eq!(code(&["train-widget", "--data", s(&data), "--out", s(&m1)]), 3);
}

#[test]
fn train_text_priors_and_empty_class() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sentences.tsv");
    let out = dir.path().join("text.json");
    fs::write(&data, include_str!("../data/sentences.tsv")).unwrap();
    assert_eq!(code(&["train-text", "--data", s(&data), "--out", s(&out)]), 0);
    let first = fs::read(&out).unwrap();
    let model: Value = serde_json::from_slice(&first).unwrap();
    let priors: f64 = model["priors"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((priors - 1.0).abs() < 1e-12);
    assert_eq!(code(&["train-text", "--data", s(&data), "--out", s(&out)]), 0);
    assert_eq!(fs::read(&out).unwrap(), first);

    fs::write(&data, "bug\tThe app crashes\nbug\tNothing happens\n").unwrap();
    assert_eq!(code(&["train-text", "--data", s(&data), "--out", s(&out)]), 3);
}

#[test]
fn synth_is_deterministic_and_labels_match_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(
        &spec,
        &json!({"seed": 3, "clusters": [{"category": "x", "size": 2}, {"category": "y", "size": 1}, {"category": "z", "size": 3}]}),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&["synth", "--spec", s(&spec), "--out", s(&a)]), 0);
    assert_eq!(code(&["synth", "--spec", s(&spec), "--out", s(&b)]), 0);
    let labels: Value = serde_json::from_slice(&fs::read(a.join("labels.json")).unwrap()).unwrap();
    let categories: std::collections::BTreeSet<&str> =
        labels.as_object().unwrap().values().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(categories.len(), 3);
    for rel in ["manifest.json", "labels.json", "reports/r001/screenshot.png", "reports/r006/report.json"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    assert!(deepprior::corpus::load_corpus(&a).is_ok());
}

#[test]
fn synth_io_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&["synth", "--spec", s(&missing), "--out", s(&dir.path().join("o"))]), 6);

    let spec = dir.path().join("spec.json");
    write_json(&spec, &json!({"seed": 1, "clusters": [{"category": "a", "size": 1}]}));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&["synth", "--spec", s(&spec), "--out", s(&blocker)]), 6);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["evaluate"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["prioritize", "--features", "x", "--alpha", "1.5"]), 1);
    assert_eq!(code(&["prioritize", "--features", "x", "--null-policy", "sometimes"]), 1);
    assert_eq!(code(&["compare", "--corpus", "x", "--labels", "y", "--random-runs", "0"]), 1);
}
