//! Multi-run experiments shared by the `sweep`, `remap-eval` and `run` verbs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use log::info;
use sbabi::codegen::{DatasetManifest, GenConfig};
use sbabi::eval::{self, Metrics, SweepRow};
use sbabi::experiment::{self, Prepared, RunOutcome};
use sbabi::memnet::{self, HyperParams, MemNet};
use sbabi::seeds;

use crate::config::Seeds;

/// Output directory plus the list of files written into it.
pub struct Outputs {
    pub root: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(root: &Path) -> Outputs {
        Outputs { root: root.to_path_buf(), artifacts: Vec::new() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.artifacts.push(p.clone());
        Ok(p)
    }

    pub fn json(&mut self, rel: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
        self.write(rel, serde_json::to_string_pretty(value)?.as_bytes())
    }

    pub fn record(&mut self, rel: &str) -> PathBuf {
        let p = self.path(rel);
        self.artifacts.push(p.clone());
        p
    }
}

/// Applies `f` to every item on up to `jobs` threads, keeping input order.
pub fn parallel_map<T: Send, R: Send>(jobs: usize, items: Vec<T>, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let workers = jobs.clamp(1, items.len().max(1));
    let queue = Mutex::new(items.into_iter().enumerate());
    let results = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((i, item)) = next else { break };
                let r = f(item);
                results.lock().expect("results lock").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

pub fn seeds_for(root: u64, runs: usize) -> Seeds {
    Seeds {
        root,
        gen_train: seeds::stage_seed(root, "gen-train"),
        gen_test: seeds::stage_seed(root, "gen-test"),
        runs: (0..runs).map(|r| experiment::run_seed(root, r)).collect(),
    }
}

pub fn prepare(gen: &GenConfig, train_files: usize, test_files: usize, root: u64) -> Result<Prepared> {
    info!("generating {train_files} train and {test_files} test files");
    experiment::prepare(gen, train_files, test_files, root).context("prepare")
}

/// Trains `runs` networks on `data`, writes checkpoints, predictions,
/// histories, `metrics.csv` and `confusion.csv`.
pub fn train_eval(
    data: &Prepared,
    hyper: &HyperParams,
    runs: usize,
    root: u64,
    jobs: usize,
    out: &mut Outputs,
) -> Result<(Vec<RunOutcome>, Vec<MemNet>)> {
    out.write("vocab.json", data.vocab.to_json().as_bytes())?;
    let files = data.train.file_count();
    let results = parallel_map(jobs, (0..runs).collect(), |run| {
        info!("run {run}: training on {files} files");
        experiment::train_and_eval(data, files, hyper, root, run)
    });
    let mut outcomes = Vec::new();
    let mut nets = Vec::new();
    let hash = data.vocab.hash();
    for (run, r) in results.into_iter().enumerate() {
        let (outcome, net, preds) = r.with_context(|| format!("train run {run}"))?;
        let ckpt = out.record(&format!("runs/run{run}/model.ckpt"));
        if let Some(dir) = ckpt.parent() {
            fs::create_dir_all(dir)?;
        }
        memnet::save_checkpoint(&ckpt, &net, &hash)?;
        out.json(&format!("runs/run{run}/preds.json"), &preds)?;
        out.json(&format!("runs/run{run}/history.json"), &outcome.history)?;
        println!("run {run}: F1 full {:.4} sound {:.4}", outcome.full.f1, outcome.sound.f1);
        outcomes.push(outcome);
        nets.push(net);
    }
    let mut csv = Vec::new();
    eval::write_metrics_csv(&mut csv, &experiment::metrics_rows(&outcomes))?;
    out.write("metrics.csv", &csv)?;
    let confusions: Vec<_> = outcomes.iter().map(|o| o.confusion.clone()).collect();
    let median = eval::median_confusion(&confusions)?;
    let mut matrices = vec![("median".to_string(), median.clone())];
    matrices.extend(outcomes.iter().map(|o| (format!("run{}", o.run), o.confusion.to_f64())));
    let mut csv = Vec::new();
    eval::write_confusion_csv(&mut csv, &matrices)?;
    out.write("confusion.csv", &csv)?;
    let sound: Vec<f64> = outcomes.iter().map(|o| o.sound.f1).collect();
    println!(
        "median F1 full {:.4} sound {:.4}; cross-block mass {:.2}%",
        experiment::median_f1(&outcomes),
        eval::median(&sound),
        100.0 * eval::cross_block_mass(&median)
    );
    Ok((outcomes, nets))
}

/// Median confusion of `nets` on the test set before and after integer
/// remapping, written to `remap.csv`.
pub fn remap(data: &Prepared, nets: &[MemNet], out: &mut Outputs) -> Result<()> {
    let (before, after) = eval::remap_experiment(nets, &data.test, &data.vocab)?;
    report_remap(before, after, out)
}

pub fn report_remap(before: Vec<Vec<f64>>, after: Vec<Vec<f64>>, out: &mut Outputs) -> Result<()> {
    for (name, m) in [("before", &before), ("after", &after)] {
        println!(
            "{name}: cross-block mass {:.2}%, within-block accuracy {:.1}%",
            100.0 * eval::cross_block_mass(m),
            100.0 * eval::within_block_accuracy(m)
        );
    }
    let mut csv = Vec::new();
    eval::write_confusion_csv(&mut csv, &[("before".to_string(), before), ("after".to_string(), after)])?;
    out.write("remap.csv", &csv)?;
    Ok(())
}

/// Trains `runs` networks at each training-set size, every size a prefix of
/// the largest training corpus. A failed run becomes a row with its error.
pub fn sweep(
    data: &Prepared,
    sizes: &[usize],
    hyper: &HyperParams,
    runs: usize,
    root: u64,
    jobs: usize,
    out: &mut Outputs,
) -> Result<Vec<SweepRow>> {
    let tasks: Vec<(usize, usize)> = sizes.iter().flat_map(|&s| (0..runs).map(move |r| (s, r))).collect();
    let results = parallel_map(jobs, tasks, |(size, run)| {
        info!("sweep: size {size} run {run}");
        let r = experiment::train_and_eval(data, size, hyper, root, run);
        (size, run, r.map(|(o, _, _)| o))
    });
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for (size, run, r) in results {
        match r {
            Ok(o) => {
                println!("size {size} run {run}: F1 full {:.4} sound {:.4}", o.full.f1, o.sound.f1);
                rows.push(SweepRow { size, run, f1_full: Some(o.full.f1), f1_sound: Some(o.sound.f1), error: None });
                outcomes.push(o);
            }
            Err(e) => {
                println!("size {size} run {run}: failed: {e}");
                rows.push(SweepRow { size, run, f1_full: None, f1_sound: None, error: Some(e.to_string()) });
            }
        }
    }
    let mut csv = Vec::new();
    eval::write_sweep_csv(&mut csv, &rows)?;
    out.write("sweep.csv", &csv)?;
    let mut csv = Vec::new();
    eval::write_metrics_csv(&mut csv, &experiment::metrics_rows(&outcomes))?;
    out.write("metrics.csv", &csv)?;
    for s in eval::summarize_sweep(&rows) {
        println!("size {}: median F1 {:.4} (min {:.4}, max {:.4}, {} failed)", s.size, s.median, s.min, s.max, s.failed);
    }
    Ok(rows)
}

/// Scores a JSON-lines warning report against `manifest` on the full and
/// sound query sets and writes `metrics.csv`.
pub fn score_report(report: &str, manifest: &DatasetManifest, out: &mut Outputs) -> Result<(Metrics, Metrics)> {
    let ws = eval::ingest_warnings(report, manifest)?;
    let truth = eval::truth_of(manifest);
    let sound = eval::sound_subset(manifest);
    let full = eval::score(&ws.predictions, &truth, None)?;
    let sound = eval::score(&ws.predictions, &truth, Some(&sound))?;
    let tool = ws.tool.clone().unwrap_or_else(|| "tool".to_string());
    let mut csv = Vec::new();
    eval::write_metrics_csv(&mut csv, &[(tool.clone(), "full".into(), full), (tool.clone(), "sound".into(), sound)])?;
    out.write("metrics.csv", &csv)?;
    for (name, m) in [("full", full), ("sound", sound)] {
        println!("{tool} {name}: precision {:.4} recall {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    }
    if ws.off_target > 0 {
        println!("{} warnings on lines that are not buffer writes (not scored)", ws.off_target);
    }
    for f in &ws.unresolved {
        println!("unresolved file in report: {f}");
    }
    Ok((full, sound))
}
