use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kg_linker::eval::{report_to_csv, EvalReport, QueryRow};
use kg_linker::graph::Polarity;

fn kg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kg-linker"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = kg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Exit code plus the parsed JSON error line.
fn fails(args: &[&str]) -> (i32, serde_json::Value) {
    let out = kg(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {stderr}"));
    let code = out.status.code().unwrap();
    assert_eq!(v["exit"], code);
    (code, v)
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn p(&self, rel: &str) -> String {
        self.dir.path().join(rel).to_str().unwrap().to_owned()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Synthetic data in `data/` and a short model in `run/`.
    fn trained(self) -> Self {
        ok(&["synth", "--seed", "3", "--out", &self.p("data")]);
        ok(&[
            "train", "--facts", &self.p("data/facts.tsv"), "--types", &self.p("data/types.tsv"),
            "--queries", &self.p("data/train.tsv"), "--dim", "8", "--t-max", "2", "--steps", "20",
            "--seed", "3", "--deterministic", "--out", &self.p("run"),
        ]);
        self
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert!(kg(&["--help"]).status.success());
    assert!(kg(&["--version"]).status.success());
    assert_eq!(kg(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(kg(&[]).status.code(), Some(2));
}

#[test]
fn full_pipeline_with_manifests() {
    let w = Work::new().trained();
    for f in ["model.ckpt", "model.ckpt.json", "runlog.csv", "manifest.json"] {
        assert!(w.path("run").join(f).exists(), "{f} missing");
    }
    let m = json(&w.path("run/manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["runlog_sha256"].as_str().unwrap().len(), 64);
    let runlog = std::fs::read_to_string(w.path("run/runlog.csv")).unwrap();
    assert_eq!(runlog.lines().count(), 21);

    let common = [
        "--checkpoint", &w.p("run/model.ckpt"), "--facts", &w.p("data/facts.tsv"),
        "--types", &w.p("data/types.tsv"),
    ];
    let test_q = w.p("data/test.tsv");
    let mut eval = vec!["eval"];
    eval.extend(common);
    eval.extend(["--queries", &test_q, "--deterministic"]);
    let (mut as_json, mut as_csv) = (eval.clone(), eval.clone());
    let (rj, rc) = (w.p("report.json"), w.p("report.csv"));
    as_json.extend(["--out", &rj]);
    as_csv.extend(["--out", &rc]);
    ok(&as_json);
    ok(&as_csv);
    let report = json(&w.path("report.json"));
    let map = report["map_at_k"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert!(w.path("report.json.manifest.json").exists());
    let from_csv = kg_linker::eval::read_report(&w.path("report.csv")).unwrap();
    assert_eq!(from_csv.map_at_k, map);

    let curve = w.p("curve.csv");
    ok(&["analyze", "--report", &rc, "--by", "path-length", "--bins", "3", "--out", &curve]);
    let text = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(text.lines().next().unwrap(), "bin_lo,bin_hi,n,map_at_5");

    // predict a pair taken from the test file
    let test = std::fs::read_to_string(w.path("data/test.tsv")).unwrap();
    let first = test.lines().find(|l| !l.starts_with('#')).unwrap();
    let cols: Vec<&str> = first.split('\t').collect();
    let mut predict = vec!["predict"];
    predict.extend(common);
    predict.extend(["--source", cols[0], "--target", cols[1]]);
    let out = ok(&predict);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ranking = v["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), 5);
}

#[test]
fn f32_training_runs() {
    let w = Work::new();
    ok(&["synth", "--seed", "2", "--out", &w.p("data")]);
    ok(&[
        "train", "--facts", &w.p("data/facts.tsv"), "--types", &w.p("data/types.tsv"),
        "--queries", &w.p("data/train.tsv"), "--dim", "8", "--t-max", "2", "--steps", "10",
        "--precision", "f32", "--out", &w.p("run"),
    ]);
    assert_eq!(json(&w.path("run/model.ckpt.json"))["precision"], "f32");
}

#[test]
fn config_file_and_flags_combine() {
    let w = Work::new();
    ok(&["synth", "--seed", "2", "--out", &w.p("data")]);
    let cfg = w.path("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "# short run\nfacts = {}\ntypes = {}\nqueries = {}\ndim = 8\nt-max = 2\nsteps = 50\n",
            w.p("data/facts.tsv"),
            w.p("data/types.tsv"),
            w.p("data/train.tsv")
        ),
    )
    .unwrap();
    ok(&["train", "--config", cfg.to_str().unwrap(), "--steps", "5", "--out", &w.p("run")]);
    let runlog = std::fs::read_to_string(w.path("run/runlog.csv")).unwrap();
    assert_eq!(runlog.lines().count(), 6);

    std::fs::write(&cfg, "dimm = 8\n").unwrap();
    let (code, v) = fails(&["train", "--config", cfg.to_str().unwrap(), "--out", &w.p("x")]);
    assert_eq!(code, 2);
    assert_eq!(v["error"], "config");
}

#[test]
fn exit_codes_by_failure_kind() {
    let w = Work::new().trained();
    let facts = w.p("data/facts.tsv");
    let ckpt = w.p("run/model.ckpt");

    let (code, _) = fails(&["ingest", "--facts", &w.p("missing.tsv"), "--out", &w.p("i")]);
    assert_eq!(code, 3);

    let bad = w.path("bad.tsv");
    std::fs::write(&bad, "a\tr\n").unwrap();
    let (code, v) = fails(&["ingest", "--facts", bad.to_str().unwrap(), "--out", &w.p("i")]);
    assert_eq!(code, 7, "{v}");

    // two entities with no path between them
    let iso = w.path("iso.tsv");
    let mut text = std::fs::read_to_string(&facts).unwrap();
    text.push_str("lonely_a\tr0\tlonely_a2\nlonely_b\tr0\tlonely_b2\n");
    std::fs::write(&iso, text).unwrap();
    let (code, v) = fails(&[
        "predict", "--checkpoint", &ckpt, "--facts", iso.to_str().unwrap(), "--types",
        &w.p("data/types.tsv"), "--source", "lonely_a", "--target", "lonely_b",
    ]);
    assert_eq!(code, 5, "{v}");

    // a KB with another relation vocabulary
    let other = w.path("other.tsv");
    std::fs::write(&other, "x\tzz\ty\n").unwrap();
    let (code, _) = fails(&[
        "predict", "--checkpoint", &ckpt, "--facts", other.to_str().unwrap(), "--source", "x",
        "--target", "y",
    ]);
    assert_eq!(code, 4);

    let (code, _) = fails(&[
        "predict", "--checkpoint", &ckpt, "--facts", &facts, "--types", &w.p("data/types.tsv"),
        "--source", "nobody", "--target", "e1",
    ]);
    assert_eq!(code, 7);

    // outputs may not overwrite inputs
    let (code, _) = fails(&[
        "eval", "--checkpoint", &ckpt, "--facts", &facts, "--types", &w.p("data/types.tsv"),
        "--queries", &w.p("data/test.tsv"), "--out", &facts,
    ]);
    assert_eq!(code, 2);
}

#[test]
fn resuming_with_other_settings_is_refused() {
    let w = Work::new().trained();
    let (code, v) = fails(&[
        "train", "--facts", &w.p("data/facts.tsv"), "--types", &w.p("data/types.tsv"),
        "--queries", &w.p("data/train.tsv"), "--dim", "8", "--t-max", "2", "--steps", "20",
        "--seed", "4", "--epochs", "2", "--checkpoint", &w.p("run/model.ckpt"), "--out", &w.p("r2"),
    ]);
    assert_eq!(code, 4);
    assert_eq!(v["error"], "checkpoint-mismatch");
}

#[test]
fn analyze_fills_every_bin_when_values_allow() {
    let w = Work::new();
    let rows: Vec<QueryRow> = (0..200)
        .map(|i| QueryRow {
            source: format!("s{i}"),
            target: format!("t{i}"),
            relation: Some(1 + i % 2),
            polarity: Polarity::Positive,
            ranking: if i % 3 == 0 { vec![1, 2, 0] } else { vec![2, 1, 0] },
            path_count: 1 + (i as u64 % 40),
            avg_path_len: 1.0 + (i % 25) as f64 / 5.0,
        })
        .collect();
    let classes = vec!["null".into(), "r1".into(), "r2".into()];
    let report = EvalReport::from_rows(classes, rows, 5, 20, 0).unwrap();
    let path = w.path("crafted.csv");
    std::fs::write(&path, report_to_csv(&report).unwrap()).unwrap();
    for by in ["parallel-paths", "path-length"] {
        let out = w.p(&format!("{by}.csv"));
        ok(&["analyze", "--report", path.to_str().unwrap(), "--by", by, "--out", &out]);
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 21, "{by}:\n{text}");
        let n: usize = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(n, 200);
    }

    // a tampered aggregate is caught
    let text = String::from_utf8(report_to_csv(&report).unwrap()).unwrap();
    let tampered: String = text
        .lines()
        .map(|l| if l.starts_with("# map_at_k") { "# map_at_k=0.123".to_owned() } else { l.to_owned() })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&path, tampered + "\n").unwrap();
    let (code, _) = fails(&["analyze", "--report", path.to_str().unwrap(), "--by", "path-length", "--out", &w.p("t.csv")]);
    assert_eq!(code, 4);
}
