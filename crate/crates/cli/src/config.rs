//! Experiment configuration file (TOML) and the run manifest written next to
//! every `run` output.
//!
//! ```toml
//! version = 1
//! kind = "train-eval"        # train-eval | sweep | remap | score-tool
//! seed = 1
//! out = "runs/desk"
//! runs_per_setting = 5
//! sizes = [9600, 19200]      # sweep only
//! report = "warnings.jsonl"  # score-tool only
//!
//! [splits]
//! train_files = 9600
//! test_files = 2400
//!
//! [gen]                      # optional, GenConfig fields
//! max_entities = 10
//!
//! [hyper]                    # optional, HyperParams fields
//! epochs = 30
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sbabi::codegen::GenConfig;
use sbabi::memnet::HyperParams;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    TrainEval,
    Sweep,
    Remap,
    ScoreTool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train_files: usize,
    pub test_files: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub kind: Kind,
    pub seed: u64,
    pub out: PathBuf,
    pub splits: Splits,
    pub runs_per_setting: usize,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub gen: GenConfig,
    /// `seed` is ignored; run seeds derive from the root seed.
    #[serde(default)]
    pub hyper: HyperParams,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ExperimentConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("version: expected {CONFIG_VERSION}, found {}", self.version);
        }
        if self.splits.test_files == 0 {
            bail!("splits.test_files must be at least 1");
        }
        if self.kind != Kind::ScoreTool && self.splits.train_files == 0 {
            bail!("splits.train_files must be at least 1");
        }
        if self.kind != Kind::ScoreTool && self.runs_per_setting == 0 {
            bail!("runs_per_setting must be at least 1");
        }
        if self.kind == Kind::Sweep && (self.sizes.is_empty() || self.sizes.contains(&0)) {
            bail!("sizes must list at least one positive training-set size");
        }
        if self.kind == Kind::ScoreTool && self.report.is_none() {
            bail!("report is required for kind = \"score-tool\"");
        }
        self.gen.validate().context("gen")?;
        self.hyper.validate().context("hyper")?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Versions {
    pub sbabi: String,
    pub generator: String,
    pub manifest_schema: u32,
    pub config: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            sbabi: env!("CARGO_PKG_VERSION").to_string(),
            generator: sbabi::codegen::GENERATOR_VERSION.to_string(),
            manifest_schema: sbabi::codegen::MANIFEST_SCHEMA_VERSION,
            config: CONFIG_VERSION,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub gen_train: u64,
    pub gen_test: u64,
    pub runs: Vec<u64>,
}

/// `run.json`: everything needed to repeat a run.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub versions: Versions,
    pub seeds: Seeds,
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_secs: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start().to_string() + "\n")
            .collect();
        let cfg = ExperimentConfig::parse(&doc).unwrap();
        assert_eq!(cfg.kind, Kind::TrainEval);
        assert_eq!(cfg.splits.train_files, 9600);
        assert_eq!(cfg.hyper.epochs, 30);
        assert_eq!(cfg.gen.max_entities, 10);
    }

    #[test]
    fn sweep_needs_sizes() {
        let text = "version = 1\nkind = \"sweep\"\nseed = 1\nout = \"x\"\nruns_per_setting = 1\n[splits]\ntrain_files = 1\ntest_files = 1\n";
        let err = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("sizes"), "{err}");
    }
}
