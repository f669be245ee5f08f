use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sbabi(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbabi"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn sbabi")
}

fn ok(o: Output) -> String {
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(o.status.success(), "stdout: {stdout}\nstderr: {}", String::from_utf8_lossy(&o.stderr));
    stdout
}

const SMALL: &str = r#"
version = 1
kind = "train-eval"
seed = 3
out = "unused"
runs_per_setting = 2

[splits]
train_files = 200
test_files = 50

[hyper]
epochs = 2
d = 8
hops = 2
"#;

#[test]
fn train_eval_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(sbabi(&["run", "--config", cfg.to_str().unwrap(), "--jobs", "2"], &a));
    ok(sbabi(&["run", "--config", cfg.to_str().unwrap()], &b));
    for f in ["metrics.csv", "confusion.csv", "vocab.json", "runs/run1/preds.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("runs/run0/model.ckpt").exists());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["runs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config"]["splits"]["train_files"], 200);
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("run,subset,queries,tp,fp,fn,tn,precision,recall,f1"));
}

#[test]
fn missing_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, SMALL.replace("runs_per_setting = 2", "")).unwrap();
    let o = sbabi(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("runs_per_setting"));

    fs::write(&cfg, SMALL.replace("version = 1", "version = 7")).unwrap();
    let o = sbabi(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));

    fs::write(&cfg, SMALL.replace("epochs = 2", "epochs = 2\nbatch_size = 6")).unwrap();
    let o = sbabi(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("hyper"));
}

#[test]
fn stage_by_stage_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let s = |p: &str| out.join(p).to_str().unwrap().to_string();
    ok(sbabi(&["generate", "--files", "120", "--name", "train"], out));
    ok(sbabi(&["generate", "--files", "40", "--name", "test"], out));
    let check = ok(sbabi(&["label-check", "--dataset", &s("train")], out));
    assert!(check.contains("0 mismatches"), "{check}");

    let stats = ok(sbabi(&["stats", "--dataset", &s("train"), "--test", &s("test")], out));
    assert!(stats.contains("files 120") && stats.contains("reference 67%"), "{stats}");

    ok(sbabi(&["tokenize", "--train", &s("train"), "--test", &s("test")], out));
    ok(sbabi(&["train", "--tensors", &s("tensors"), "--epochs", "2", "--d", "8"], out));
    ok(sbabi(&["predict", "--checkpoint", &s("run0/model.ckpt"), "--tensors", &s("tensors")], out));
    let eval = ok(sbabi(&["eval", "--preds", &s("preds.json"), "--manifest", &s("test/manifest.json")], out));
    assert!(eval.contains("full: precision"), "{eval}");
    assert!(out.join("confusion.csv").exists());

    ok(sbabi(&["predict", "--checkpoint", &s("run0/model.ckpt"), "--tensors", &s("tensors"), "--remap"], out));
    let remap = ok(sbabi(&["remap-eval", "--tensors", &s("tensors"), "--checkpoints", &s("run0/model.ckpt")], out));
    assert!(remap.contains("after: cross-block mass"), "{remap}");

    let sound = ok(sbabi(&["sound-subset", "--manifest", &s("test/manifest.json")], out));
    assert!(sound.contains("retained"), "{sound}");
}

#[test]
fn score_tool_on_exact_and_empty_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(sbabi(&["generate", "--files", "30", "--name", "test"], out));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("test/manifest.json")).unwrap()).unwrap();
    let mut report = String::new();
    for e in manifest["entries"].as_array().unwrap() {
        for w in e["writes"].as_array().unwrap().iter().filter(|w| w["safety"] == "UNSAFE") {
            report += &format!("{{\"tool\":\"t\",\"file\":{},\"line\":{}}}\n", e["file_name"], w["line"]);
        }
    }
    report += "{\"tool\":\"t\",\"file\":\"elsewhere.c\",\"line\":3}\n";
    let r = out.join("report.jsonl");
    fs::write(&r, &report).unwrap();
    let m = out.join("test/manifest.json");
    let text = ok(sbabi(&["score-tool", "--report", r.to_str().unwrap(), "--manifest", m.to_str().unwrap()], out));
    assert!(text.contains("t full: precision 1.0000 recall 1.0000 F1 1.0000"), "{text}");
    assert!(text.contains("unresolved file in report: elsewhere.c"), "{text}");
    fs::write(&r, "").unwrap();
    let text = ok(sbabi(&["score-tool", "--report", r.to_str().unwrap(), "--manifest", m.to_str().unwrap()], out));
    assert!(text.contains("full: precision 0.0000 recall 0.0000"), "{text}");
}

#[test]
fn sweep_writes_rows_per_size_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(sbabi(
        &["sweep", "--sizes", "40,80", "--runs", "2", "--test-files", "30", "--epochs", "1", "--d", "8", "--jobs", "2"],
        dir.path(),
    ));
    assert!(text.contains("size 80: median F1"), "{text}");
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn generate_with_plain_seed_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = ["generate", "--seed", "5", "--count", "20", "--max-cf-nodes", "2", "--int-max", "50"];
    ok(sbabi(&args, &a));
    ok(sbabi(&args, &b));
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["gen_config"]["seed"], 5);
    assert_eq!(m["gen_config"]["int_range"][1], 50);
    assert_eq!(fs::read_dir(a.join("src")).unwrap().count(), 20);
    let bad = sbabi(&["generate", "--count", "2", "--int-max", "500"], &a);
    assert!(!bad.status.success());
}

#[test]
fn empty_dataset_stats() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(sbabi(&["generate", "--files", "0", "--name", "empty"], dir.path()));
    assert!(text.contains("0 files"), "{text}");
    let stats = ok(sbabi(&["stats", "--dataset", dir.path().join("empty").to_str().unwrap()], dir.path()));
    assert!(stats.contains("files 0") && stats.contains("buffer writes 0"), "{stats}");
}
