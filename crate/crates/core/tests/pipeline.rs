//! Experiment orchestration on small synthetic configs.

use std::fs;
use std::path::Path;

use influence_lab::artifacts::ArtifactStore;
use influence_lab::experiment::{write_reports, ExperimentConfig, Workspace};
use influence_lab::scores::ScoreKind;
use influence_lab::Error;
use serde_json::{json, Value};

fn base_config() -> Value {
    json!({
        "name": "tiny",
        "dataset": {
            "source": {
                "kind": "synthetic",
                "seed": 3,
                "generator": {
                    "num_classes": 3, "num_examples": 240, "vocab_size": 120,
                    "templates_per_class": 4, "signal_vocab": 8, "signal_tokens": 2,
                    "min_len": 4, "max_len": 7, "redundancy": 0.5, "mutation_rate": 0.1,
                    "confusion": 0.1
                }
            },
            "test_fraction": 0.25,
            "split_seed": 1
        },
        "trainer": {
            "embed_dim": 8,
            "hidden_dims": [8],
            "schedule": {
                "epochs": 2, "batch_size": 16, "learning_rate": 0.02,
                "checkpoint_every": 5, "prediction_log_every": 3
            },
            "seeds": [0]
        },
        "score": { "scores": ["vog"], "norm": "class" },
        "prune": {
            "methods": ["hard"], "fractions": [0.0, 0.3], "ends": ["head"],
            "seeds": [0, 1], "random": false
        }
    })
}

fn config(v: Value) -> ExperimentConfig {
    let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn ws(root: &Path, v: Value) -> Workspace {
    Workspace::new(config(v), Some(root.to_path_buf()), false, 2)
}

#[test]
fn training_store_has_floor_total_over_every_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let w = ws(dir.path(), base_config());
    let run = w.train(0).unwrap();
    let store = ArtifactStore::open_read(run.join("store")).unwrap();
    let n = w.splits().unwrap().train.len();
    let s = &w.cfg.trainer.schedule;
    assert_eq!(n, 180);
    let total = s.epochs * n.div_ceil(s.batch_size);
    assert_eq!(store.num_checkpoints(), total / s.checkpoint_every);
    assert!(store.manifest().closed);
    // A second call reuses the finished run.
    let stamp = fs::read(run.join("stamp.json")).unwrap();
    w.train(0).unwrap();
    assert_eq!(fs::read(run.join("stamp.json")).unwrap(), stamp);
}

#[test]
fn sweep_grid_resume_and_baseline_rows() {
    let dir = tempfile::tempdir().unwrap();
    let w = ws(dir.path(), base_config());
    let (csv, rows) = w.sweep().unwrap();
    // 2 fractions × 2 seeds plus one baseline per seed.
    let cells = fs::read_dir(dir.path().join("cells")).unwrap().count();
    assert_eq!(cells, 6);
    let base = rows.iter().find(|r| r.score == "baseline").unwrap();
    let zero = rows.iter().find(|r| r.score == "vog" && r.prune_fraction == 0.0).unwrap();
    assert_eq!(base.metrics["accuracy"], zero.metrics["accuracy"]);
    assert_eq!(zero.kept, base.kept);
    let first = fs::read(&csv).unwrap();

    // Interrupt one cell and drop the report; the rerun must converge.
    let victim = dir.path().join("cells/vog-hard-head-p0.3-s1");
    let stamp = victim.join("stamp.json");
    let text = fs::read_to_string(&stamp).unwrap().replace("true", "false");
    fs::write(&stamp, text).unwrap();
    fs::remove_file(victim.join("metrics.json")).unwrap();
    fs::remove_file(&csv).unwrap();
    let (csv2, _) = ws(dir.path(), base_config()).sweep().unwrap();
    assert_eq!(fs::read(csv2).unwrap(), first);

    // An uninterrupted run elsewhere gives the same bytes.
    let other = tempfile::tempdir().unwrap();
    let (csv3, _) = ws(other.path(), base_config()).sweep().unwrap();
    assert_eq!(fs::read(csv3).unwrap(), first);

    // Changing a hashed block is refused.
    let mut changed = base_config();
    changed["trainer"]["schedule"]["epochs"] = json!(3);
    let err = ws(dir.path(), changed).sweep().unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("different configuration")), "{err}");

    // Reports from the finished sweep.
    let written = write_reports(dir.path()).unwrap();
    let svg = written.iter().find(|p| p.to_string_lossy().ends_with("curve_vog_accuracy.svg")).unwrap();
    roxmltree::Document::parse(&fs::read_to_string(svg).unwrap()).unwrap();
    let hist = fs::read_to_string(dir.path().join("reports/hist_vog.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 180);
}

#[test]
fn score_tables_are_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["score"]["scores"] = json!(["vog", "el2n", "forgetting", "tracin", "pvi"]);
    v["trainer"]["seeds"] = json!([0, 1]);
    let w = ws(dir.path(), v.clone());
    for kind in ScoreKind::ALL {
        let t = w.score(kind).unwrap();
        assert_eq!(t.len(), 180, "{}", kind.name());
        let first = fs::read(w.score_path(kind)).unwrap();
        let w2 = ws(dir.path(), v.clone());
        w2.score(kind).unwrap();
        assert_eq!(fs::read(w2.score_path(kind)).unwrap(), first, "{}", kind.name());
        let lines = String::from_utf8(first).unwrap().lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(lines, 181);
    }
}

#[test]
fn gen_data_is_reproducible_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let w = ws(dir.path(), base_config());
    let out = w.gen_data().unwrap();
    let train = fs::read(out.join("train.jsonl")).unwrap();
    let test = fs::read(out.join("test.jsonl")).unwrap();
    let lines = |b: &[u8]| b.iter().filter(|&&c| c == b'\n').count();
    assert_eq!(lines(&train) + lines(&test), 240);
    assert!(matches!(w.gen_data(), Err(Error::Config(_))));
    let forced = Workspace::new(config(base_config()), Some(dir.path().to_path_buf()), true, 1);
    forced.gen_data().unwrap();
    assert_eq!(fs::read(out.join("train.jsonl")).unwrap(), train);
    assert_eq!(fs::read(out.join("test.jsonl")).unwrap(), test);
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(write_reports(dir.path()), Err(Error::Config(_))));
}

#[test]
fn missing_jsonl_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["dataset"]["source"] = json!({ "kind": "jsonl", "train": dir.path().join("nope.jsonl") });
    let w = ws(dir.path(), v);
    assert!(matches!(w.train(0), Err(Error::Config(_))));
}

#[test]
fn nlu_sweep_reports_semantic_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["dataset"]["source"]["generator"]["hierarchy"] = json!([
        { "name": "music", "intents": [
            { "name": "play", "slots": ["artist", "song"] },
            { "name": "pause", "slots": [] }
        ]},
        { "name": "weather", "intents": [
            { "name": "forecast", "slots": ["city"] }
        ]}
    ]);
    v["eval"] = json!({ "nlu": true });
    v["prune"] = json!({
        "methods": ["combined"], "fractions": [0.3], "ends": ["head"],
        "seeds": [0], "random": true, "stratified": "domain"
    });
    let w = ws(dir.path(), v);
    let (_, rows) = w.sweep().unwrap();
    let combined = rows.iter().find(|r| r.method == "combined").unwrap();
    for m in ["accuracy", "dcer", "icer", "semer", "f_semer", "irer"] {
        assert!(combined.metrics.contains_key(m), "missing {m}");
    }
    assert!(rows.iter().any(|r| r.score == "stratified" && r.method == "domain"));
    for r in &rows {
        assert!(r.metrics["irer"].0 >= r.metrics["dcer"].0 - 1e-12);
    }
}
