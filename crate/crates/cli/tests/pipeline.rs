use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn vocalmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vocalmap")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vocalmap(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_MODEL: &str = r#"{"model": {"layers": 1, "embed_dim": 32, "heads": 2}}"#;

/// synth → featurize → train (both presets), shared by every test.
struct Run {
    _dir: TempDir,
    root: PathBuf,
}

impl Run {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn pipeline(root: &Path) {
    fs::create_dir_all(root).unwrap();
    let cfg = root.join("small.json");
    fs::write(&cfg, SMALL_MODEL).unwrap();
    let corpus = root.join("corpus");
    let feat = root.join("feat");
    ok(&["synth", "--out", s(&corpus), "--n-healthy", "30", "--n-patho", "30", "--seed", "5"]);
    ok(&["featurize", "--manifest", s(&corpus.join("manifest.csv")), "--out", s(&feat), "--seed", "5"]);
    for preset in ["freeze", "finetune"] {
        ok(&[
            "--config",
            s(&cfg),
            "train",
            "--preset",
            preset,
            "--features",
            s(&feat),
            "--out",
            s(&root.join(preset)),
            "--epochs",
            "3",
        ]);
    }
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("a");
        pipeline(&root);
        Run { _dir: dir, root }
    })
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_flag_exits_1() {
    assert_eq!(vocalmap(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(vocalmap(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_1() {
    let out = vocalmap(&["featurize", "--manifest", "/definitely/not/here.csv", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file"));
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"model": {"embed_dim": 30, "heads": 4}}"#).unwrap();
    let r = run();
    let out = vocalmap(&[
        "--config",
        s(&cfg),
        "train",
        "--features",
        s(&r.path("feat")),
        "--out",
        s(&dir.path().join("t")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn freeze_preset_resolves_its_training_block() {
    let c = json(&run().path("freeze/resolved_config.json"));
    assert_eq!(c["preset"], "freeze");
    assert_eq!(c["train"]["learning_rate"].as_f64(), Some(0.001));
    assert_eq!(c["train"]["early_stopping_patience"].as_u64(), Some(5));
    assert_eq!(c["train"]["backbone_trainable"], false);
    assert_eq!(c["model"]["backbone_trainable"], false);
    // --epochs overrides the preset's 10
    assert_eq!(c["train"]["epochs"].as_u64(), Some(3));
}

#[test]
fn preset_epochs_apply_without_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    // file overrides apply beneath the preset for unrelated fields only
    fs::write(&cfg, r#"{"model": {"layers": 1, "embed_dim": 16, "heads": 1}, "train": {"early_stopping_patience": 1}}"#)
        .unwrap();
    let out = dir.path().join("ft");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--preset",
        "finetune",
        "--features",
        s(&run().path("feat")),
        "--out",
        s(&out),
    ]);
    let c = json(&out.join("resolved_config.json"));
    assert_eq!(c["train"]["learning_rate"].as_f64(), Some(0.00025));
    assert_eq!(c["train"]["epochs"].as_u64(), Some(40));
    assert_eq!(c["train"]["early_stopping_patience"].as_u64(), Some(1));
    assert_eq!(c["train"]["backbone_trainable"], true);
    let history = fs::read_to_string(out.join("history.jsonl")).unwrap();
    // patience 1 stops well before 40 epochs on this corpus
    assert!(history.lines().count() < 40);
}

#[test]
fn featurize_writes_a_complete_index() {
    let r = run();
    let text = fs::read_to_string(r.path("feat/features.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,split,gender,status,file,alignment"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 60);
    for row in &rows {
        assert!(r.path("feat").join(row[4]).is_file());
        assert!(Path::new(row[5]).is_file(), "alignment for {}", row[0]);
    }
    let per = |split: &str| rows.iter().filter(|r| r[1] == split).count();
    assert_eq!(per("train") + per("dev") + per("test"), 60);
    assert!(per("test") >= 4);
    let stats = json(&r.path("feat/stats.json"));
    assert!(stats["std"].as_f64().unwrap() > 0.0);
}

fn parse_table(stdout: &str) -> Vec<(String, f64, f64)> {
    stdout
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn eval_table_matches_metrics_recomputed_from_predictions() {
    let r = run();
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&r.path("freeze/model.ckpt")),
        "--checkpoint",
        s(&r.path("finetune/model.ckpt")),
        "--features",
        s(&r.path("feat")),
        "--out",
        s(dir.path()),
    ]);
    let table = parse_table(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(table.iter().map(|t| t.0.as_str()).collect::<Vec<_>>(), ["freeze", "finetune"]);
    for (name, printed_uar, printed_auc) in table {
        let mut rd = csv::Reader::from_path(dir.path().join(format!("{name}_predictions.csv"))).unwrap();
        let (mut truth, mut pred, mut score) = (vec![], vec![], vec![]);
        for rec in rd.records() {
            let rec = rec.unwrap();
            truth.push(rec[1].parse::<usize>().unwrap());
            pred.push(rec[2].parse::<usize>().unwrap());
            score.push(rec[3].parse::<f64>().unwrap());
        }
        let u = vocalmap::train::uar(&truth, &pred).unwrap();
        let (_, auc) = vocalmap::train::roc_auc(&truth, &score).unwrap();
        assert!((u - printed_uar).abs() <= 5e-5, "{name}: {u} vs {printed_uar}");
        assert!((auc - printed_auc).abs() <= 5e-5, "{name}: {auc} vs {printed_auc}");
        let m = json(&dir.path().join("metrics.json"));
        let entry = m.as_array().unwrap().iter().find(|e| e["label"] == name.as_str()).unwrap();
        assert_eq!(entry["metrics"]["uar"].as_f64(), Some(u));
    }
}

#[test]
fn explain_render_project_and_cases_run_end_to_end() {
    let r = run();
    let dir = tempfile::tempdir().unwrap();
    let d = |rel: &str| dir.path().join(rel);
    ok(&[
        "eval",
        "--checkpoint",
        s(&r.path("finetune/model.ckpt")),
        "--features",
        s(&r.path("feat")),
        "--split",
        "train",
        "--out",
        s(&d("eval")),
    ]);
    ok(&[
        "project",
        "--embeddings",
        s(&d("eval/finetune_embeddings.csv")),
        "--perplexity",
        "5",
        "--iterations",
        "300",
        "--out",
        s(&d("proj/ft.csv")),
    ]);
    for f in ["proj/ft.csv", "proj/ft_gender.png", "proj/ft_status.png", "proj/ft.json"] {
        assert!(d(f).is_file(), "{f}");
    }
    let summary = json(&d("proj/ft.json"));
    assert!(summary["final_kl"].as_f64().unwrap().is_finite());

    let id = "h0000";
    let fbnk = r.path(&format!("feat/features/{id}.fbnk"));
    ok(&["rollout", "--checkpoint", s(&r.path("finetune/model.ckpt")), "--input", s(&fbnk), "--out", s(&d("m.rmap"))]);
    let sidecar = json(&d("m.json"));
    assert_eq!(sidecar["id"], id);
    ok(&[
        "rollout",
        "--checkpoint",
        s(&r.path("finetune/model.ckpt")),
        "--input",
        s(&r.path(&format!("corpus/audio/{id}.wav"))),
        "--out",
        s(&d("w.rmap")),
    ]);
    // WAV input featurized with the stored statistics gives the same map, up
    // to the f32 storage of feature files
    let (m, w) = (vocalmap::rollout::load_map(&d("m.rmap")).unwrap(), vocalmap::rollout::load_map(&d("w.rmap")).unwrap());
    assert_eq!((m.bins(), m.frames()), (w.bins(), w.frames()));
    let worst = m.values().iter().zip(w.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "maps differ by {worst}");

    let bad_class = vocalmap(&[
        "rollout",
        "--checkpoint",
        s(&r.path("finetune/model.ckpt")),
        "--input",
        s(&fbnk),
        "--class",
        "7",
        "--out",
        s(&d("x.rmap")),
    ]);
    assert_eq!(bad_class.status.code(), Some(1));

    ok(&[
        "render",
        "--spec",
        s(&fbnk),
        "--map",
        s(&d("m.rmap")),
        "--alignment",
        s(&r.path(&format!("corpus/align/{id}.json"))),
        "--side-by-side",
        "--out",
        s(&d("fig.png")),
    ]);
    assert_eq!(&fs::read(d("fig.png")).unwrap()[..8], b"\x89PNG\r\n\x1a\n");

    let out = ok(&[
        "cases",
        "--checkpoint-a",
        s(&r.path("freeze/model.ckpt")),
        "--checkpoint-b",
        s(&r.path("finetune/model.ckpt")),
        "--features",
        s(&r.path("feat")),
        "--out",
        s(&d("cases")),
    ]);
    let printed = String::from_utf8(out.stdout).unwrap();
    let counts = json(&d("cases/case_counts.json"));
    let total: u64 = ["O", "X", "A", "B"].iter().map(|k| counts[*k].as_u64().unwrap()).sum();
    let rows = fs::read_to_string(d("cases/cases.csv")).unwrap().lines().count() - 1;
    assert_eq!(total as usize, rows);
    assert!(printed.contains("O: "));
    let mut rd = csv::Reader::from_path(d("cases/cases.csv")).unwrap();
    for rec in rd.records() {
        let rec = rec.unwrap();
        let name = format!("{}-{}_{}_{}.png", &rec[8], &rec[0], &rec[1], &rec[2]);
        assert_eq!(&rec[9], format!("figures/{name}"));
        assert!(d("cases").join(&rec[9]).is_file());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let first = run();
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("a");
    pipeline(&again);
    for rel in [
        "corpus/manifest.csv",
        "corpus/audio/p0003.wav",
        "feat/split.csv",
        "feat/stats.json",
        "feat/features/h0001.fbnk",
        "freeze/model.ckpt",
        "finetune/model.ckpt",
        "finetune/history.jsonl",
    ] {
        assert_eq!(fs::read(first.path(rel)).unwrap(), fs::read(again.join(rel)).unwrap(), "{rel} differs");
    }
}
