//! End-to-end runs of the `lasas` binary on a tiny corpus, checking every
//! artifact it writes.

use std::path::{Path, PathBuf};
use std::process::Command;

use lasas::arhead::HeadConfig;
use lasas::encoder::EncoderConfig;
use lasas::harness::ExperimentConfig;
use lasas::lasas::LasasConfig;
use lasas::synthgen::{CorpusConfig, Span};
use serde_json::Value;

fn lasas(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_lasas")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "lasas {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_corpus() -> CorpusConfig {
    CorpusConfig {
        num_accents: 3,
        train_speakers: 3,
        dev_speakers: 1,
        test_speakers: 1,
        utterances_per_speaker: 4,
        lexicon_size: 12,
        num_merges: 6,
        words_per_utterance: Span::new(1, 2),
        frames_per_subword: Span::new(1, 3),
        silence_frames: Span::new(1, 1),
        feat_dim: 6,
        ..CorpusConfig::default()
    }
}

fn tiny_experiment(manifest: &Path, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        manifest: manifest.to_path_buf(),
        out_dir: out.to_path_buf(),
        encoder: EncoderConfig {
            num_layers: 2,
            d_model: 8,
            heads: 2,
            ff_dim: 8,
            taps: vec![1, 2],
        },
        lasas: LasasConfig {
            spaces: 2,
            hidden: 8,
            reduced_text_dim: 2,
            ..LasasConfig::default()
        },
        head: HeadConfig {
            context_layers: 1,
            context_dim: 8,
            heads: 2,
            ff_dim: 8,
            dnn_layers: 1,
            num_accents: 3,
        },
        ..ExperimentConfig::default()
    };
    cfg.optimizer.epochs = 2;
    cfg.optimizer.batch_size = 4;
    cfg
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

/// Generates a tiny corpus through the CLI and writes an experiment config.
fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus_cfg = root.join("corpus.json");
    std::fs::write(&corpus_cfg, serde_json::to_string(&tiny_corpus()).unwrap()).unwrap();
    let data = root.join("data");
    let printed = lasas(&["gen-data", "--config", s(&corpus_cfg), "--out", s(&data)]);
    let manifest = PathBuf::from(printed.trim());
    assert_eq!(manifest, data.join("manifest.json"));
    let config = root.join("experiment.json");
    tiny_experiment(&manifest, &root.join("run")).save(&config).unwrap();
    Workspace { _dir: dir, root, config }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Validates `value` against the subset of JSON Schema used by the docs:
/// `type`, `enum`, `required`, `properties`, `additionalProperties: false`,
/// `items`, `minItems`, `minimum` and `maximum`.
fn validate(schema: &Value, value: &Value, path: &str, errors: &mut Vec<String>) {
    if let Some(ty) = schema.get("type") {
        let allowed: Vec<&str> = match ty {
            Value::String(t) => vec![t.as_str()],
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).collect(),
            _ => panic!("bad type keyword at {path}"),
        };
        let matches = |t: &str| match t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_u64() || value.is_i64(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            other => panic!("unsupported type {other}"),
        };
        if !allowed.iter().any(|t| matches(t)) {
            errors.push(format!("{path}: expected {allowed:?}, found {value}"));
            return;
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            errors.push(format!("{path}: {value} not in {options:?}"));
        }
    }
    if let Some(x) = value.as_f64() {
        if let Some(lo) = schema.get("minimum").and_then(Value::as_f64) {
            if x < lo {
                errors.push(format!("{path}: {x} < {lo}"));
            }
        }
        if let Some(hi) = schema.get("maximum").and_then(Value::as_f64) {
            if x > hi {
                errors.push(format!("{path}: {x} > {hi}"));
            }
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = key.as_str().unwrap();
            if !obj.contains_key(key) {
                errors.push(format!("{path}: missing `{key}`"));
            }
        }
        for (key, v) in obj {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => validate(sub, v, &format!("{path}.{key}"), errors),
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{path}: unexpected `{key}`"))
                }
                None => {}
            }
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                errors.push(format!("{path}: {} items < {min}", items.len()));
            }
        }
        if let Some(sub) = schema.get("items") {
            for (i, v) in items.iter().enumerate() {
                validate(sub, v, &format!("{path}[{i}]"), errors);
            }
        }
    }
}

fn report_schema() -> Value {
    read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json"))
}

fn schema_errors(value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    validate(&report_schema(), value, "$", &mut errors);
    errors
}

#[test]
fn gen_data_writes_every_split() {
    let ws = workspace();
    let data = ws.root.join("data");
    for name in ["manifest.json", "inventory.json", "train.jsonl", "dev.jsonl", "test.jsonl"] {
        assert!(data.join(name).is_file(), "{name} missing");
    }
    let train = std::fs::read_to_string(data.join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 3 * 3 * 4);
    for line in train.lines() {
        let utt: Value = serde_json::from_str(line).unwrap();
        assert!(utt.is_object());
    }
}

#[test]
fn train_eval_and_export_round_trip() {
    let ws = workspace();
    let run = ws.root.join("run");
    let config = s(&ws.config);
    lasas(&["train", "--config", config, "--seed", "5"]);

    let report = read_json(&run.join("report.json"));
    assert_eq!(schema_errors(&report), Vec::<String>::new());
    assert_eq!(report["seed"], 5);
    assert_eq!(report["config"]["seed"], 5);
    assert_eq!(report["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(report["checkpoint"], "checkpoint.json");
    let timing = read_json(&run.join("timing.json"));
    assert_eq!(timing["seed"], 5);
    assert!(timing["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(read_json(&run.join("checkpoint.json"))["seed"], 5);

    // evaluating the saved checkpoint reproduces the reported accuracies
    lasas(&["eval", "--config", config, "--out", s(&run)]);
    let eval = read_json(&run.join("eval.json"));
    assert_eq!(eval["seed"], 5);
    assert_eq!(eval["dev_accuracy"], report["dev_accuracy"]);
    assert_eq!(eval["test_accuracy"], report["test_accuracy"]);

    let export = ws.root.join("export");
    let ckpt = run.join("checkpoint.json");
    lasas(&["export-shift", "--config", config, "--checkpoint", s(&ckpt), "--out", s(&export), "--split", "dev"]);
    let centroids = std::fs::read_to_string(export.join("shift_centroids.csv")).unwrap();
    let projection = std::fs::read_to_string(export.join("shift_pca.csv")).unwrap();
    let header: Vec<&str> = centroids.lines().next().unwrap().split(',').collect();
    assert_eq!(header, ["subword", "accent", "s1", "s2"]);
    assert_eq!(projection.lines().next().unwrap(), "subword,accent,x,y");
    assert_eq!(centroids.lines().count(), projection.lines().count());
    assert!(centroids.lines().count() > 1);
    for line in centroids.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4);
        for f in &fields[2..] {
            f.parse::<f64>().unwrap();
        }
    }
    let meta = read_json(&export.join("shift_export.json"));
    assert_eq!(meta["seed"], 5);
}

#[test]
fn reruns_are_byte_identical() {
    let ws = workspace();
    let run = ws.root.join("run");
    let read = |name: &str| std::fs::read(run.join(name)).unwrap();
    lasas(&["train", "--config", s(&ws.config)]);
    let first = (read("report.json"), read("checkpoint.json"));
    lasas(&["train", "--config", s(&ws.config)]);
    assert!(first == (read("report.json"), read("checkpoint.json")));
}

#[test]
fn ablate_writes_a_table_and_every_run() {
    let ws = workspace();
    let out = ws.root.join("ablate");
    let printed = lasas(&["ablate", "--config", s(&ws.config), "--axis", "variant", "--out", s(&out)]);
    assert!(printed.contains("lasas"));
    let table = read_json(&out.join("ablation_variant.json"));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(row["runs"].as_array().unwrap().len(), 3);
        let (lo, mean, hi) = (row["min"].as_f64().unwrap(), row["mean"].as_f64().unwrap(), row["max"].as_f64().unwrap());
        assert!(lo <= mean && mean <= hi);
    }
    let mut reports = 0;
    for entry in std::fs::read_dir(&out).unwrap() {
        let dir = entry.unwrap().path();
        if dir.is_dir() {
            for seed in std::fs::read_dir(&dir).unwrap() {
                let report = read_json(&seed.unwrap().path().join("report.json"));
                assert_eq!(schema_errors(&report), Vec::<String>::new());
                reports += 1;
            }
        }
    }
    assert_eq!(reports, 9);
}

#[test]
fn gradcheck_subcommand_reports_every_module() {
    let dir = tempfile::tempdir().unwrap();
    let printed = lasas(&["gradcheck", "--seed", "3", "--out", s(dir.path())]);
    for module in ["arhead", "encoder", "lasas"] {
        assert!(printed.contains(module), "{printed}");
    }
    let summary = read_json(&dir.path().join("gradcheck.json"));
    assert_eq!(summary["seed"], 3);
    assert!(summary["max_rel_error"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = Command::new(env!("CARGO_BIN_EXE_lasas"))
        .args(["train", "--config", s(&missing)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = Command::new(env!("CARGO_BIN_EXE_lasas"))
        .args(["ablate", "--axis", "depth"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn schema_rejects_malformed_reports() {
    let ws = workspace();
    lasas(&["train", "--config", s(&ws.config)]);
    let good = read_json(&ws.root.join("run/report.json"));
    assert!(schema_errors(&good).is_empty());

    let mut bad = good.clone();
    bad["test_accuracy"] = Value::from(1.5);
    assert_eq!(schema_errors(&bad).len(), 1);
    let mut bad = good.clone();
    bad.as_object_mut().unwrap().remove("seed");
    assert_eq!(schema_errors(&bad).len(), 1);
    let mut bad = good;
    bad["config"]["variant"] = Value::from("cnn");
    assert_eq!(schema_errors(&bad).len(), 1);
}
