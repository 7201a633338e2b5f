use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anno-audit"))
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = format!(
            "[paths]\ncorpus = \"data/corpus.jsonl\"\ncovariates = \"data/covariates.csv\"\nrun_dir = \"run\"\n\n\
             [pipeline]\nn_test = 30\ncodes = [\"aspiration_religious\", \"marriage\"]\nfamilies = [\"logistic\", \"decision_tree\"]\n\n\
             [synth.spec]\nn_interviews = 120\n\n{extra}"
        );
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("run.toml")
    }

    fn run_dir(&self) -> PathBuf {
        self.dir.path().join("run")
    }

    fn cmd(&self, command: &str, flags: &[&str]) -> Output {
        bin()
            .arg(command)
            .arg("--config")
            .arg(self.config())
            .args(flags)
            .output()
            .unwrap()
    }

    fn ok(&self, command: &str, flags: &[&str]) -> Value {
        let out = self.cmd(command, flags);
        assert!(
            out.status.success(),
            "{command} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.run_dir().join(rel)).unwrap()
    }
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn planted_signal_run_reaches_high_macro_f1() {
    let ws = Workspace::new("");
    ws.ok("synth", &[]);
    ws.ok("train", &[]);
    ws.ok("predict", &[]);
    let summary = ws.ok("evaluate", &[]);
    let model = summary["sources"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["source"] == "model")
        .unwrap();
    assert!(model["macro_f1"].as_f64().unwrap() >= 0.8, "{summary}");

    let metrics = ws.read("reports/metrics.csv");
    assert!(metrics.contains("code,source,f1,accuracy,baseline_f1,net_overprediction_pct,n_cells"));
    assert!(metrics.starts_with("# config_sha256="));
    assert!(ws.run_dir().join("scores/enhanced.csv").exists());
    assert!(ws.run_dir().join("models/marriage.json").exists());
}

#[test]
fn reruns_reproduce_reports() {
    let ws = Workspace::new("");
    ws.ok("synth", &[]);
    ws.ok("train", &["--codes", "marriage"]);
    ws.ok("predict", &["--codes", "marriage"]);
    ws.ok("evaluate", &["--codes", "marriage"]);
    let first: Vec<String> = ["reports/cv_summary.csv", "reports/metrics.csv", "annotations/model.json", "scores/model.csv"]
        .iter()
        .map(|f| ws.read(f))
        .collect();
    let model_first = ws.read("models/marriage.json");
    ws.ok("train", &["--codes", "marriage"]);
    ws.ok("predict", &["--codes", "marriage"]);
    ws.ok("evaluate", &["--codes", "marriage"]);
    let second: Vec<String> = ["reports/cv_summary.csv", "reports/metrics.csv", "annotations/model.json", "scores/model.csv"]
        .iter()
        .map(|f| ws.read(f))
        .collect();
    assert_eq!(first, second);
    assert_eq!(model_first, ws.read("models/marriage.json"));
}

#[test]
fn zero_error_source_audits_to_zero_f() {
    let ws = Workspace::new("[synth.errors]\nsource_id = \"exact\"\nbase_rate = 0.0\n\n[audit]\nsources = [\"exact\"]\n");
    ws.ok("synth", &[]);
    let out = ws.ok("audit", &["--svg"]);
    assert_eq!(out["tests"], 2);
    let rows = data_rows(&ws.read("reports/audit/summary.csv"));
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r[3], "0.0000", "{r:?}");
    }
    assert!(ws.read("reports/audit/log_f.svg").starts_with("<svg"));
    assert!(ws.run_dir().join("reports/audit/exact/marriage.csv").exists());
    let comparison: Value = serde_json::from_str(&ws.read("reports/audit/comparison.json")).unwrap();
    assert!(comparison["config_sha256"].is_string());
}

#[test]
fn correlated_errors_are_flagged() {
    let ws = Workspace::new(
        "[synth.errors]\nsource_id = \"skewed\"\nkind = \"covariate_flip\"\nbase_rate = 0.05\ncovariate = \"refugee\"\ndelta = 0.3\n",
    );
    ws.ok("synth", &["--seed", "5"]);
    let out = ws.ok("audit", &["--seed", "5"]);
    assert_eq!(out["rejections"]["skewed"]["0.05"], 2, "{out}");
}

#[test]
fn stub_annotation_is_offline_and_deterministic() {
    let ws = Workspace::new("[llm.provider.stub]\nrule = \"keyword\"\nneedle = \"zz-never\"\n");
    ws.ok("synth", &[]);
    let a = ws.ok("annotate-llm", &["--provider", "stub"]);
    let first = ws.read("annotations/llm.json");
    let summary = ws.read("reports/llm_summary.json");
    let b = ws.ok("annotate-llm", &["--provider", "stub"]);
    assert_eq!(a["summary"], b["summary"]);
    assert_eq!(first, ws.read("annotations/llm.json"));
    assert_eq!(summary, ws.read("reports/llm_summary.json"));
    assert_eq!(a["summary"]["failed"], 0);
    assert_eq!(a["summary"]["negative"], a["summary"]["requests"]);
    let log = ws.read("logs/llm_run_log.jsonl");
    assert_eq!(log.lines().count() as u64, a["summary"]["requests"].as_u64().unwrap());
    assert!(log.lines().all(|l| l.contains("\"cache_hit\":true")));
}

#[test]
fn augment_then_train_with_revisions() {
    let ws = Workspace::new("[llm]\nn_per_unit = 2\n[llm.augment_stub]\nrule = \"echo\"\nprefix = \"Well, \"\n");
    ws.ok("synth", &[]);
    let out = ws.ok("augment", &[]);
    let rows = ws.read("augmented/units.jsonl");
    let n_aug = rows.lines().filter(|l| l.contains("\"augmented\":true")).count();
    assert_eq!(out["accepted"].as_u64().unwrap() as usize, n_aug);
    assert!(n_aug > 0);
    let cfg = fs::read_to_string(ws.config()).unwrap().replace("[pipeline]\n", "[pipeline]\nuse_augmented = true\n");
    fs::write(ws.config(), cfg).unwrap();
    let trained = ws.ok("train", &["--codes", "marriage"]);
    let n_units = trained["codes"][0]["n_training_units"].as_u64().unwrap() as usize;
    assert!(n_units > n_aug);
}

#[test]
fn http_provider_failures_keep_credentials_out_of_artifacts() {
    let secret = "sk-test-4f1c0ffee";
    let ws = Workspace::new(
        "[llm]\ncodes = [\"marriage\"]\ncache = false\n[llm.provider]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\n\
         api_key_env = \"ANNO_AUDIT_TEST_KEY\"\nmax_retries = 0\nbackoff_base_ms = 1\ntimeout_secs = 2\n",
    );
    ws.ok("synth", &[]);
    let out = bin()
        .args(["annotate-llm", "--provider", "http", "--config"])
        .arg(ws.config())
        .env("ANNO_AUDIT_TEST_KEY", secret)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["summary"]["failed"], v["summary"]["requests"]);
    assert_eq!(v["summary"]["cells"], 0);
    assert!(!contains_recursive(&ws.run_dir(), secret));
}

fn contains_recursive(dir: &Path, needle: &str) -> bool {
    fs::read_dir(dir).unwrap().flatten().any(|e| {
        let p = e.path();
        if p.is_dir() {
            contains_recursive(&p, needle)
        } else {
            fs::read(&p).is_ok_and(|b| String::from_utf8_lossy(&b).contains(needle))
        }
    })
}

#[test]
fn validation_errors_exit_one_with_json() {
    let ws = Workspace::new("");
    let out = ws.cmd("ingest", &[]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "config");
    assert!(e["error"]["message"].as_str().unwrap().contains("path does not exist"));

    ws.ok("synth", &[]);
    let out = ws.cmd("train", &["--codes", "not_a_code"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "unknown_code");

    let out = ws.cmd("predict", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("run `train` first"));

    let out = bin().arg("ingest").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["frobnicate", "--config", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    fs::write(ws.config(), "[paths]\ncorpus = 3\n").unwrap();
    assert_eq!(ws.cmd("ingest", &[]).status.code(), Some(1));
}

#[test]
fn duplicate_interviews_rejected() {
    let ws = Workspace::new("");
    ws.ok("synth", &[]);
    let corpus = ws.dir.path().join("data/corpus.jsonl");
    let text = fs::read_to_string(&corpus).unwrap();
    let first = text.lines().next().unwrap().to_string();
    fs::write(&corpus, format!("{text}{first}\n")).unwrap();
    let out = ws.cmd("ingest", &[]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "duplicate_interview", "{e}");
}

#[test]
fn runtime_errors_exit_two() {
    let ws = Workspace::new("");
    ws.ok("synth", &[]);
    let blocker = ws.dir.path().join("blocker");
    fs::write(&blocker, "not a directory").unwrap();
    let out = ws.cmd("ingest", &["--out", blocker.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "io");
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for c in ["ingest", "train", "predict", "evaluate", "audit", "annotate-llm", "augment", "synth"] {
        assert!(text.contains(c), "{c}");
    }
}
