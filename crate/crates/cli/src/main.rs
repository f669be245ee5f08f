//! `sbabi`: generate, label, tokenize, train, predict and evaluate.

mod config;
mod pipeline;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sbabi::codegen::{self, Corpus, DatasetManifest, GenConfig};
use sbabi::eval;
use sbabi::experiment;
use sbabi::memnet::{self, HyperParams, MemNet, Prediction};
use sbabi::oracle::{self, LineLabel, DEFAULT_ENUMERATION_BUDGET};
use sbabi::seeds;
use sbabi::tokenize::{self, TensorSet, Vocab};

use config::{ExperimentConfig, Kind, RunManifest, Versions};
use pipeline::Outputs;

#[derive(Parser)]
#[command(name = "sbabi", version, about = "Synthetic buffer-write benchmark and memory-network pipeline")]
struct Cli {
    /// Root seed; every stage seed derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Parallel training runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory (for `run`, overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GenArgs {
    /// TOML file with GenConfig fields; defaults otherwise.
    #[arg(long)]
    gen_config: Option<PathBuf>,
}

impl GenArgs {
    fn load(&self) -> Result<GenConfig> {
        let cfg: GenConfig = match &self.gen_config {
            Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("invalid generator config {}", p.display()))?,
            None => GenConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    hops: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
}

impl HyperArgs {
    fn hyper(&self) -> Result<HyperParams> {
        let h = HyperParams {
            d: self.d,
            hops: self.hops,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            dropout_p: self.dropout,
            ..HyperParams::default()
        };
        h.validate()?;
        Ok(h)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled corpus into `<out>`, or `<out>/<name>` with a seed
    /// derived from `gen-<name>` (the seeds `run` uses for `train`/`test`).
    Generate {
        #[arg(long, alias = "count")]
        files: usize,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        max_cf_nodes: Option<usize>,
        #[arg(long)]
        int_max: Option<i64>,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Regenerate every file from its seed and compare the stored labels with
    /// brute-force enumeration of rand() values.
    LabelCheck {
        #[arg(long)]
        dataset: PathBuf,
        /// Upper end of the enumerated rand() domain.
        #[arg(long, default_value_t = 200)]
        domain_max: i64,
    },
    /// Encode a train/test pair into `<out>/tensors/`.
    Tokenize {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Dataset statistics.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Test split sharing the grid shape and vocabulary.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Train one network on `<tensors>/train.bin`.
    Train {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// Use only the first N training files.
        #[arg(long)]
        train_files: Option<usize>,
        /// Report test F1 after every epoch.
        #[arg(long)]
        validate: bool,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Predict every query of a tensor file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Map every integer literal to `0` first.
        #[arg(long)]
        remap: bool,
    },
    /// Score predictions against a dataset manifest.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write the sound query subset of a manifest.
    SoundSubset {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score a JSON-lines warning report (`{"tool", "file", "line"}` rows).
    ScoreTool {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Median F1 over runs at several training-set sizes.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 2400)]
        test_files: usize,
        #[command(flatten)]
        gen: GenArgs,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Median confusion before and after integer remapping.
    RemapEval {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
    },
    /// Run an experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut out = Outputs::new(&out_dir);
    match cli.command {
        Command::Generate { files, name, max_cf_nodes, int_max, gen } => {
            let mut cfg = GenConfig { seed: cli.seed, file_count: files, ..gen.load()? };
            cfg.max_cf_nodes = max_cf_nodes.unwrap_or(cfg.max_cf_nodes);
            cfg.int_range.1 = int_max.unwrap_or(cfg.int_range.1);
            let dir = match &name {
                Some(n) => {
                    cfg.seed = seeds::stage_seed(cli.seed, &format!("gen-{n}"));
                    out.path(n)
                }
                None => out.root.clone(),
            };
            let manifest = codegen::generate_dataset(&cfg, &dir).context("generate")?;
            println!("{} files, {} buffer writes -> {}", manifest.entries.len(), manifest.write_count(), dir.display());
        }
        Command::LabelCheck { dataset, domain_max } => label_check(&dataset, domain_max)?,
        Command::Tokenize { train, test } => {
            let (train, test) = (load_corpus(&train)?, load_corpus(&test)?);
            let (vocab, train_set, test_set) =
                experiment::encode_splits(&train.manifest.gen_config, &train, &test).context("tokenize")?;
            fs::create_dir_all(out.path("tensors"))?;
            vocab.save(&out.record("tensors/vocab.json"))?;
            train_set.save(&out.record("tensors/train.bin"))?;
            test_set.save(&out.record("tensors/test.bin"))?;
            println!(
                "N {} J {} V {}; {} train and {} test queries",
                train_set.n,
                train_set.j,
                train_set.v,
                train_set.queries.len(),
                test_set.queries.len()
            );
        }
        Command::Stats { dataset, test } => stats(&dataset, test.as_deref())?,
        Command::Train { tensors, run, train_files, validate, hyper } => {
            let (vocab, mut train) = (Vocab::load(&tensors.join("vocab.json"))?, TensorSet::load(&tensors.join("train.bin"))?);
            if let Some(k) = train_files {
                train = train.take_files(k);
            }
            let test = if validate { Some(TensorSet::load(&tensors.join("test.bin"))?) } else { None };
            let hyper = HyperParams { seed: experiment::run_seed(cli.seed, run), ..hyper.hyper()? };
            let (net, history) = memnet::train(&train, &hyper, test.as_ref()).context("train")?;
            let ckpt = out.path(&format!("run{run}/model.ckpt"));
            fs::create_dir_all(ckpt.parent().expect("checkpoint has a parent"))?;
            memnet::save_checkpoint(&ckpt, &net, &vocab.hash())?;
            out.json(&format!("run{run}/history.json"), &history)?;
            for e in &history {
                let val = e.val_f1.map(|f| format!(" val F1 {f:.4}")).unwrap_or_default();
                println!("epoch {:>2} loss {:.4}{val}", e.epoch, e.mean_loss);
            }
            println!("checkpoint -> {}", ckpt.display());
        }
        Command::Predict { checkpoint, tensors, split, remap } => {
            let (net, hash) = memnet::load_checkpoint(&checkpoint)?;
            let vocab = Vocab::load(&tensors.join("vocab.json"))?;
            if hash != vocab.hash() {
                bail!("checkpoint was trained with a different vocabulary than {}", tensors.display());
            }
            let mut set = TensorSet::load(&tensors.join(format!("{split}.bin")))?;
            if remap {
                set = tokenize::remap_integers(&set, &vocab)?;
            }
            let preds = predict(&net, &set)?;
            let p = out.json("preds.json", &preds)?;
            println!("{} predictions -> {}", preds.len(), p.display());
        }
        Command::Eval { preds, manifest } => {
            let preds: Vec<Prediction> = serde_json::from_str(&read(&preds)?)?;
            let manifest = DatasetManifest::load(&manifest)?;
            let map = eval::prediction_map(&preds);
            let truth = eval::truth_of(&manifest);
            let sound = eval::sound_subset(&manifest);
            let full = eval::score(&map, &truth, None)?;
            let sub = eval::score(&map, &truth, Some(&sound))?;
            let mut csv = Vec::new();
            eval::write_metrics_csv(&mut csv, &[("preds".into(), "full".into(), full), ("preds".into(), "sound".into(), sub)])?;
            out.write("metrics.csv", &csv)?;
            let cm = eval::confusion(&map, &truth, None)?;
            let mut csv = Vec::new();
            eval::write_confusion_csv(&mut csv, &[("preds".into(), cm.to_f64())])?;
            out.write("confusion.csv", &csv)?;
            for (name, m) in [("full", full), ("sound", sub)] {
                println!("{name}: precision {:.4} recall {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
            }
        }
        Command::SoundSubset { manifest } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let filter = eval::sound_subset(&manifest);
            let p = out.json("sound_subset.json", &filter.retained)?;
            println!(
                "retained {} of {} writes ({:.1}%; reference 67%) -> {}",
                filter.len(),
                manifest.write_count(),
                100.0 * eval::retention(&filter, &manifest),
                p.display()
            );
        }
        Command::ScoreTool { report, manifest } => {
            pipeline::score_report(&read(&report)?, &DatasetManifest::load(&manifest)?, &mut out)?;
        }
        Command::Sweep { sizes, runs, test_files, gen, hyper } => {
            let largest = *sizes.iter().max().expect("clap requires sizes");
            let data = pipeline::prepare(&gen.load()?, largest, test_files, cli.seed)?;
            pipeline::sweep(&data, &sizes, &hyper.hyper()?, runs, cli.seed, cli.jobs, &mut out)?;
        }
        Command::RemapEval { tensors, checkpoints } => {
            let vocab = Vocab::load(&tensors.join("vocab.json"))?;
            let test = TensorSet::load(&tensors.join("test.bin"))?;
            let mut nets = Vec::new();
            for c in &checkpoints {
                let (net, hash) = memnet::load_checkpoint(c)?;
                if hash != vocab.hash() {
                    bail!("{} was trained with a different vocabulary", c.display());
                }
                nets.push(net);
            }
            let (before, after) = eval::remap_experiment(&nets, &test, &vocab)?;
            pipeline::report_remap(before, after, &mut out)?;
        }
        Command::Run { config } => run(&config, cli.out, cli.jobs)?,
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = DatasetManifest::load(&dir.join("manifest.json"))?;
    let sources = codegen::load_sources(&manifest, dir)?;
    Ok(Corpus { manifest, sources })
}

fn predict(net: &MemNet, set: &TensorSet) -> Result<Vec<Prediction>> {
    Ok(memnet::predict(net, set)?)
}

fn label_check(dataset: &Path, domain_max: i64) -> Result<()> {
    let corpus = load_corpus(dataset)?;
    let cfg = &corpus.manifest.gen_config;
    let (mut writes, mut mismatched) = (0, 0);
    for (entry, source) in corpus.manifest.entries.iter().zip(&corpus.sources) {
        let ast = codegen::generate_program(entry.seed, cfg)?;
        if codegen::render_c(&ast) != *source || codegen::content_hash(source) != entry.content_hash {
            bail!("{} does not match its generation seed", entry.file_name);
        }
        let brute = oracle::brute_force_oracle(&ast, 0..=domain_max, DEFAULT_ENUMERATION_BUDGET)?;
        for (w, b) in entry.writes.iter().zip(&brute) {
            writes += 1;
            if w.safety != *b {
                mismatched += 1;
                println!("{}:{} stored {:?}, enumeration says {:?}", entry.file_name, w.line, w.safety, b);
            }
        }
    }
    println!("{} files, {writes} writes, {mismatched} mismatches", corpus.manifest.entries.len());
    if mismatched > 0 {
        bail!("{mismatched} labels disagree with enumeration");
    }
    Ok(())
}

fn stats(dataset: &Path, test: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(dataset)?;
    let m = &corpus.manifest;
    let mut labels: BTreeMap<LineLabel, usize> = LineLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for e in &m.entries {
        for l in &e.labels {
            *labels.entry(*l).or_default() += 1;
        }
    }
    println!("files {}", m.entries.len());
    println!("buffer writes {}", m.write_count());
    for (l, n) in &labels {
        println!("{:<22} {n}", l.as_str());
    }
    let other = match test {
        Some(t) => load_corpus(t)?,
        None => Corpus { manifest: DatasetManifest::empty(&m.gen_config), sources: Vec::new() },
    };
    let (vocab, set, _) = experiment::encode_splits(&m.gen_config, &corpus, &other)?;
    println!("N {} J {} V {}", set.n, set.j, vocab.size());
    let retained = eval::retention(&eval::sound_subset(m), m);
    println!("sound-subset retention {:.1}% (reference 67%)", 100.0 * retained);
    Ok(())
}

fn run(path: &Path, out_override: Option<PathBuf>, jobs: usize) -> Result<()> {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out_override {
        cfg.out = o;
    }
    let mut out = Outputs::new(&cfg.out);
    let runs = if cfg.kind == Kind::ScoreTool { 0 } else { cfg.runs_per_setting };
    let seeds = pipeline::seeds_for(cfg.seed, runs);
    match cfg.kind {
        Kind::TrainEval | Kind::Remap => {
            let data = pipeline::prepare(&cfg.gen, cfg.splits.train_files, cfg.splits.test_files, cfg.seed)?;
            let (_, nets) = pipeline::train_eval(&data, &cfg.hyper, runs, cfg.seed, jobs, &mut out).context("train-eval")?;
            if cfg.kind == Kind::Remap {
                pipeline::remap(&data, &nets, &mut out).context("remap")?;
            }
        }
        Kind::Sweep => {
            let largest = *cfg.sizes.iter().max().expect("validated");
            let data = pipeline::prepare(&cfg.gen, largest, cfg.splits.test_files, cfg.seed)?;
            pipeline::sweep(&data, &cfg.sizes, &cfg.hyper, runs, cfg.seed, jobs, &mut out).context("sweep")?;
        }
        Kind::ScoreTool => {
            let report = cfg.report.clone().expect("validated");
            let gen = GenConfig { seed: seeds.gen_test, file_count: cfg.splits.test_files, ..cfg.gen.clone() };
            let dir = out.path("test");
            let manifest = if dir.join("manifest.json").exists() {
                DatasetManifest::load(&dir.join("manifest.json"))?
            } else {
                codegen::generate_dataset(&gen, &dir).context("generate")?
            };
            out.artifacts.push(dir.join("manifest.json"));
            pipeline::score_report(&read(&report)?, &manifest, &mut out).context("score-tool")?;
        }
    }
    let mut artifacts = out.artifacts.clone();
    artifacts.push(out.path("run.json"));
    let manifest = RunManifest {
        config: cfg,
        versions: Versions::default(),
        seeds,
        artifacts,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let p = out.json("run.json", &manifest)?;
    println!("run manifest -> {}", p.display());
    Ok(())
}
