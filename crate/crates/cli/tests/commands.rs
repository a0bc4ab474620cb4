use rolelink::corpus::load_jsonl;
use rolelink::decoder::{read_predictions, LinkPrediction};
use rolelink::ontology::Ontology;
use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn rolelink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rolelink"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rolelink(args);
    assert!(
        out.status.success(),
        "rolelink {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_MODEL: &str = "\
lstm_size = 16
ffnn_size = 32
role_size = 16
feature_size = 8
char_filters = 8
max_epochs = 2
";

/// A generated corpus and a trained model shared by the slower tests.
struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Trained {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("synth.toml"), "n_docs = 16\n").unwrap();
        fs::write(root.join("model.toml"), SMALL_MODEL).unwrap();
        ok(&[
            "gensynth",
            "--config",
            s(&root.join("synth.toml")),
            "--seed",
            "5",
            "--out",
            s(&root.join("train.jsonl")),
            "--dev-docs",
            "4",
            "--dev-out",
            s(&root.join("dev.jsonl")),
            "--ontology-out",
            s(&root.join("ontology.tsv")),
        ]);
        ok(&[
            "train",
            "--data",
            s(&root.join("train.jsonl")),
            "--dev",
            s(&root.join("dev.jsonl")),
            "--ontology",
            s(&root.join("ontology.tsv")),
            "--config",
            s(&root.join("model.toml")),
            "--out",
            s(&root.join("run")),
        ]);
        Trained { _dir: dir, root }
    })
}

fn predictions(path: &Path) -> Vec<LinkPrediction> {
    read_predictions(BufReader::new(fs::File::open(path).unwrap())).unwrap()
}

#[test]
fn gensynth_is_deterministic_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    fs::write(&cfg, "n_docs = 7\nroles_per_type = 3\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let ont = dir.path().join(format!("{name}.tsv"));
        ok(&["gensynth", "--config", s(&cfg), "--seed", "9", "--out", s(&out), "--ontology-out", s(&ont)]);
        (fs::read(&out).unwrap(), out, ont)
    };
    let (a, out, ont) = run("a.jsonl");
    let (b, _, _) = run("b.jsonl");
    assert_eq!(a, b);
    let ontology = Ontology::load(&ont).unwrap();
    let docs = load_jsonl(&out, Some(&ontology)).unwrap();
    assert_eq!(docs.len(), 7);
    for d in &docs {
        for e in &d.events {
            let links = d.gold_links.iter().filter(|l| l.event_id == e.event_id).count();
            assert_eq!(links, 3, "every role gets one filler");
        }
    }
    assert!(out.with_file_name("a.jsonl.manifest.json").is_file());

    let (c, _, _) = {
        let out = dir.path().join("c.jsonl");
        ok(&["gensynth", "--config", s(&cfg), "--seed", "10", "--out", s(&out)]);
        (fs::read(&out).unwrap(), (), ())
    };
    assert_ne!(a, c);
}

#[test]
fn gensynth_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    fs::write(&cfg, "n_documents = 7\n").unwrap();
    let out = rolelink(&["gensynth", "--config", s(&cfg), "--out", s(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_writes_checkpoint_log_and_manifest() {
    let t = trained();
    assert!(t.path("run/model.ckpt").is_file());
    let log = fs::read_to_string(t.path("run/training_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["lstm_size"], 16);
    assert_eq!(manifest["seed"], 0);
    for input in ["data", "dev", "ontology"] {
        assert_eq!(manifest["inputs"][input]["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn training_is_reproducible() {
    let t = trained();
    let out = t.path("again");
    ok(&[
        "train",
        "--data",
        s(&t.path("train.jsonl")),
        "--dev",
        s(&t.path("dev.jsonl")),
        "--ontology",
        s(&t.path("ontology.tsv")),
        "--config",
        s(&t.path("model.toml")),
        "--out",
        s(&out),
    ]);
    assert_eq!(fs::read(out.join("model.ckpt")).unwrap(), fs::read(t.path("run/model.ckpt")).unwrap());
}

#[test]
fn fine_tuning_starts_from_a_checkpoint() {
    let t = trained();
    let out = t.path("tuned");
    ok(&[
        "train",
        "--data",
        s(&t.path("train.jsonl")),
        "--dev",
        s(&t.path("dev.jsonl")),
        "--ontology",
        s(&t.path("ontology.tsv")),
        "--init-checkpoint",
        s(&t.path("run/model.ckpt")),
        "--set",
        "max_epochs=1",
        "--set",
        "learning_rate=0.0005",
        "--out",
        s(&out),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    // architecture comes from the checkpoint, training options from the flags
    assert_eq!(manifest["config"]["lstm_size"], 16);
    assert_eq!(manifest["config"]["max_epochs"], 1);
    assert!(manifest["inputs"]["init_checkpoint"].is_object());

    let changed = rolelink(&[
        "train",
        "--data",
        s(&t.path("train.jsonl")),
        "--dev",
        s(&t.path("dev.jsonl")),
        "--ontology",
        s(&t.path("ontology.tsv")),
        "--init-checkpoint",
        s(&t.path("run/model.ckpt")),
        "--set",
        "lstm_size=32",
        "--out",
        s(&t.path("bad")),
    ]);
    assert_eq!(changed.status.code(), Some(2));
}

#[test]
fn missing_ontology_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    fs::write(&data, "").unwrap();
    let out = rolelink(&[
        "train",
        "--data",
        s(&data),
        "--dev",
        s(&data),
        "--ontology",
        s(&dir.path().join("nope.tsv")),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ontology"), "{stderr}");
}

#[test]
fn bad_override_is_a_usage_error() {
    let t = trained();
    for set in ["lstm_size", "no_such_key=3", "lstm_size=big"] {
        let out = rolelink(&[
            "train",
            "--data",
            s(&t.path("train.jsonl")),
            "--dev",
            s(&t.path("dev.jsonl")),
            "--ontology",
            s(&t.path("ontology.tsv")),
            "--set",
            set,
            "--out",
            s(&t.path("never")),
        ]);
        assert_eq!(out.status.code(), Some(2), "--set {set}");
    }
}

#[test]
fn decoding_strategies_respect_their_contracts() {
    let t = trained();
    let ontology = Ontology::load(t.path("ontology.tsv")).unwrap();
    let docs = load_jsonl(t.path("dev.jsonl"), Some(&ontology)).unwrap();
    let types = rolelink::corpus::gold_types(&docs);
    for decoding in ["argmax", "greedy", "tcd"] {
        let out = t.path(format!("{decoding}.jsonl").as_str());
        ok(&[
            "predict",
            "--model",
            s(&t.path("run/model.ckpt")),
            "--data",
            s(&t.path("dev.jsonl")),
            "--decoding",
            decoding,
            "--out",
            s(&out),
        ]);
        assert!(out.with_file_name(format!("{decoding}.jsonl.manifest.json")).is_file());
        let preds = predictions(&out);
        let mut per_slot: BTreeMap<(String, String, String), usize> = BTreeMap::new();
        for p in &preds {
            *per_slot.entry((p.doc_id.clone(), p.event_id.clone(), p.role.clone())).or_default() += 1;
        }
        match decoding {
            "argmax" => assert!(per_slot.values().all(|&n| n <= 1)),
            "tcd" => assert!(ontology.violations(&preds, &types).is_empty()),
            _ => {}
        }
    }
    let again = t.path("greedy2.jsonl");
    ok(&[
        "predict",
        "--model",
        s(&t.path("run/model.ckpt")),
        "--data",
        s(&t.path("dev.jsonl")),
        "--decoding",
        "greedy",
        "--jobs",
        "3",
        "--out",
        s(&again),
    ]);
    assert_eq!(fs::read(&again).unwrap(), fs::read(t.path("greedy.jsonl")).unwrap());
}

#[test]
fn tcd_without_types_is_rejected() {
    let t = trained();
    let untyped = t.path("untyped.jsonl");
    let text: String = fs::read_to_string(t.path("dev.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            for e in v["events"].as_array_mut().unwrap() {
                e.as_object_mut().unwrap().remove("type");
            }
            v.to_string() + "\n"
        })
        .collect();
    fs::write(&untyped, text).unwrap();
    let args = |d: &'static str| {
        rolelink(&[
            "predict",
            "--model",
            s(&t.path("run/model.ckpt")),
            "--data",
            s(&untyped),
            "--decoding",
            d,
            "--out",
            s(&t.path("untyped.out")),
        ])
    };
    assert_eq!(args("tcd").status.code(), Some(2));
    assert!(args("greedy").status.success());
}

#[test]
fn evaluating_gold_against_itself() {
    let t = trained();
    let docs = load_jsonl(t.path("dev.jsonl"), None).unwrap();
    let gold_preds = t.path("gold_preds.jsonl");
    let lines: String = docs
        .iter()
        .flat_map(|d| {
            d.gold_links.iter().map(move |l| {
                serde_json::json!({"doc_id": d.doc_id, "event_id": l.event_id, "role": l.role,
                    "span": l.span, "score": 1.0})
                .to_string()
                    + "\n"
            })
        })
        .collect();
    fs::write(&gold_preds, lines).unwrap();
    let confusion = t.path("confusion.csv");
    let similarity = t.path("similarity.csv");
    let report_path = t.path("report.json");
    ok(&[
        "evaluate",
        "--pred",
        s(&gold_preds),
        "--gold",
        s(&t.path("dev.jsonl")),
        "--breakdown",
        "distance",
        "--confusion",
        s(&confusion),
        "--similarity",
        s(&similarity),
        "--model",
        s(&t.path("run/model.ckpt")),
        "--out",
        s(&report_path),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["f1"], 100.0);
    assert_eq!(report["distance"].as_array().unwrap().len(), 5);

    let csv = fs::read_to_string(&confusion).unwrap();
    let mut rows = csv.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), header.len());
        let sum: f64 = cells[1..].iter().map(|c| c.parse::<f64>().unwrap()).sum();
        assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-6, "row {row}");
    }
    let roles = Ontology::load(t.path("ontology.tsv")).unwrap().num_roles();
    assert_eq!(fs::read_to_string(&similarity).unwrap().lines().count(), roles + 1);

    let stdout = ok(&["evaluate", "--pred", s(&gold_preds), "--gold", s(&t.path("dev.jsonl"))]).stdout;
    let printed: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(printed["f1"], 100.0);
    assert!(printed.get("distance").is_none());
}
