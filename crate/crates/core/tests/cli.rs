use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "dataset": {"kind": "synthetic", "num_nodes": 16, "num_communities": 4, "horizon": 80.0},
  "models": [{"name": "m", "config": {"embed_dim": 6, "epochs": 30}}],
  "simulation": {"count": 12, "seed": {"seed_fraction": 0.2, "offset_jitter": 10.0}},
  "reference": {"n_ref": 8},
  "evaluator": {"hidden_dim": 8, "epochs": 5},
  "gcn": {"hidden_dim": 8, "epochs": 5},
  "master_seed": 3
}"#;

fn dyneval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyneval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dyneval(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("config.json"), SMALL).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn staged_commands_chain_together() {
    let w = Workspace::new();
    let cfg = w.path("config.json");
    let (csv, model, sim, ev) = (
        w.path("edges.csv"),
        w.path("model.json"),
        w.path("sim.json"),
        w.path("evaluator.json"),
    );

    ok(&["generate", "-c", s(&cfg), "-o", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("src,dst,t,w\n"));
    assert!(text.lines().count() > 100);

    ok(&["train-dgnn", "-c", s(&cfg), "-o", s(&model)]);
    ok(&["simulate", "-c", s(&cfg), "-m", s(&model), "-o", s(&sim)]);
    ok(&[
        "train-evaluator",
        "-c",
        s(&cfg),
        "-i",
        s(&sim),
        "-o",
        s(&ev),
    ]);

    let out = ok(&["estimate", "-c", s(&cfg), "-m", s(&model), "-e", s(&ev)]);
    let rows: serde_json::Value = serde_json::from_str(&out).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 8);
    for (j, row) in rows.iter().enumerate() {
        assert_eq!(row["variant"], format!("g{j}"));
        let e = row["estimate"].as_f64().unwrap();
        assert!(e > 0.0 && e < 1.0);
    }

    let out = ok(&[
        "estimate",
        "-c",
        s(&cfg),
        "-m",
        s(&model),
        "-e",
        s(&ev),
        "--test",
        s(&csv),
    ]);
    let rows: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
}

#[test]
fn staged_estimates_match_the_report() {
    let w = Workspace::new();
    let cfg = w.path("config.json");
    let (model, sim, ev) = (
        w.path("model.json"),
        w.path("sim.json"),
        w.path("evaluator.json"),
    );
    ok(&["train-dgnn", "-c", s(&cfg), "-o", s(&model)]);
    ok(&["simulate", "-c", s(&cfg), "-m", s(&model), "-o", s(&sim)]);
    ok(&[
        "train-evaluator",
        "-c",
        s(&cfg),
        "-i",
        s(&sim),
        "-o",
        s(&ev),
    ]);
    let staged: serde_json::Value = serde_json::from_str(&ok(&[
        "estimate",
        "-c",
        s(&cfg),
        "-m",
        s(&model),
        "-e",
        s(&ev),
    ]))
    .unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["report", "-c", s(&cfg), "-f", "json"])).unwrap();
    let variants = report["models"][0]["variants"].as_array().unwrap();
    for (row, v) in staged.as_array().unwrap().iter().zip(variants) {
        let main = v["estimates"]
            .as_array()
            .unwrap()
            .iter()
            .find(|e| e["method"] == "dyneval")
            .unwrap();
        assert_eq!(row["estimate"], main["estimate"]);
    }
}

#[test]
fn report_formats_and_determinism() {
    let w = Workspace::new();
    let cfg = w.path("config.json");
    let a = ok(&["report", "-c", s(&cfg), "-f", "json"]);
    let b = ok(&["report", "-c", s(&cfg), "-f", "json"]);
    assert_eq!(a, b);
    let other = ok(&["report", "-c", s(&cfg), "-f", "json", "--seed", "4"]);
    assert_ne!(a, other);

    let csv = ok(&["report", "-c", s(&cfg), "-f", "csv"]);
    assert_eq!(csv.lines().count(), 1 + 8 * 5);
    let md = w.path("report.md");
    ok(&["report", "-c", s(&cfg), "-f", "markdown", "-o", s(&md)]);
    assert!(std::fs::read_to_string(&md).unwrap().contains("| Avg. |"));

    let out = dyneval(&["report", "-c", s(&cfg), "--timings"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-evaluator"));
}

#[test]
fn ablation_commands() {
    let w = Workspace::new();
    let cfg = w.path("config.json");
    let k = ok(&["ablate-k", "-c", s(&cfg), "--counts", "6,12", "-f", "csv"]);
    let lines: Vec<&str> = k.lines().collect();
    assert_eq!(lines[0], "count,mae");
    assert!(lines[1].starts_with("6,") && lines[2].starts_with("12,"));
    let d = ok(&["ablate-discrepancy", "-c", s(&cfg), "-f", "csv"]);
    assert_eq!(d.lines().count(), 4);
    let b = ok(&["ablate-backbone", "-c", s(&cfg)]);
    assert!(b.contains("self_attention") && b.contains("mlp"));
}

#[test]
fn failures_exit_nonzero_with_the_stage_name() {
    let w = Workspace::new();
    let bad = w.path("bad.json");
    std::fs::write(
        &bad,
        r#"{"dataset": {"kind": "file", "path": "/nonexistent.csv"}}"#,
    )
    .unwrap();
    let out = dyneval(&["report", "-c", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `load`"));

    std::fs::write(&bad, r#"{"split_fraction": 1.5}"#).unwrap();
    let out = dyneval(&["report", "-c", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `config`"));

    let out = dyneval(&[
        "simulate",
        "-m",
        s(&w.path("missing.json")),
        "-o",
        s(&w.path("x")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `simulate`"));

    assert!(!dyneval(&["no-such-command"]).status.success());
}
