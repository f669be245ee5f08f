//! End-to-end memory network over token grids.
//!
//! Each line of a file is embedded twice (value and address embeddings,
//! position-weighted bag of tokens). The query line, embedded with the
//! address matrix, is refined over `H` hops of attention, a per-hop linear
//! map and batch normalization, then classified into the four write classes.

mod checkpoint;
pub mod gradcheck;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{
    backward, batch_loss, embed_lines, forward_batch, loss, position_encoding, sample_masks, ForwardCache, HopCache,
    Masks, Norm, Sample, SampleCache, BN_EPS, PROB_FLOOR,
};
pub use train::{
    adam_step, balanced_batches, fit, predict, predict_probs, samples_of, train, AdamState, EpochStats, Prediction,
    TrainHistory,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const BN_MOMENTUM: f64 = 0.99;
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum MemNetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value after hop {hop}")]
    Numeric { hop: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub d: usize,
    pub hops: usize,
    pub classes: usize,
    pub dropout_p: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { d: 32, hops: 3, classes: 4, dropout_p: 0.3, lr: 1e-3, epochs: 30, batch_size: 32, seed: 0 }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), MemNetError> {
        let bad = |m: &str| Err(MemNetError::Config(m.to_string()));
        if self.d == 0 || self.hops == 0 || self.classes == 0 {
            return bad("d, hops and classes must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.classes) {
            return bad("batch_size must be a positive multiple of classes");
        }
        Ok(())
    }
}

/// Trainable tensors, flattened row-major. The same shape holds gradients.
///
/// * `e_val`, `e_addr`: `V × d`
/// * `r`: `H × d × d`, `r[h][a][b]` maps `o_b` to `r_a`
/// * `gamma`, `beta`: `H × d`
/// * `w`: `C × d`
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub e_val: Vec<f64>,
    pub e_addr: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub w: Vec<f64>,
}

pub const WEIGHT_NAMES: [&str; 6] = ["e_val", "e_addr", "r", "gamma", "beta", "w"];

impl Weights {
    pub fn zeros_like(other: &Weights) -> Weights {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Weights {
            e_val: z(&other.e_val),
            e_addr: z(&other.e_addr),
            r: z(&other.r),
            gamma: z(&other.gamma),
            beta: z(&other.beta),
            w: z(&other.w),
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [&self.e_val, &self.e_addr, &self.r, &self.gamma, &self.beta, &self.w]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [&mut self.e_val, &mut self.e_addr, &mut self.r, &mut self.gamma, &mut self.beta, &mut self.w]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemNet {
    pub hyper: HyperParams,
    /// Vocabulary size including the padding id.
    pub v: usize,
    /// Grid width the position encoding was built for.
    pub j: usize,
    pub weights: Weights,
    /// `H × d` batch-norm running statistics.
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl MemNet {
    /// Random initialization: embeddings and classifier `N(0, 0.1²)`,
    /// `R_h` with std `1/√d`, `γ = 1`, `β = 0`. Padding rows are zero.
    pub fn init(hyper: &HyperParams, v: usize, j: usize, rng: &mut impl Rng) -> Result<MemNet, MemNetError> {
        hyper.validate()?;
        if v < 2 || j == 0 {
            return Err(MemNetError::Config(format!("need V ≥ 2 and J ≥ 1, got V = {v}, J = {j}")));
        }
        let (d, h, c) = (hyper.d, hyper.hops, hyper.classes);
        let normal = |std: f64, n: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| dist.sample(rng)).collect()
        };
        let mut e_val = normal(INIT_STD, v * d, rng);
        let mut e_addr = normal(INIT_STD, v * d, rng);
        e_val[..d].fill(0.0);
        e_addr[..d].fill(0.0);
        let r = normal(1.0 / (d as f64).sqrt(), h * d * d, rng);
        let w = normal(INIT_STD, c * d, rng);
        Ok(MemNet {
            hyper: hyper.clone(),
            v,
            j,
            weights: Weights { e_val, e_addr, r, gamma: vec![1.0; h * d], beta: vec![0.0; h * d], w },
            running_mean: vec![0.0; h * d],
            running_var: vec![1.0; h * d],
        })
    }

    /// Checks internal shapes and the zero padding rows.
    pub fn check(&self) -> Result<(), MemNetError> {
        let (d, h, c, v) = (self.hyper.d, self.hyper.hops, self.hyper.classes, self.v);
        let w = &self.weights;
        let expect = [v * d, v * d, h * d * d, h * d, h * d, c * d];
        for ((name, t), n) in WEIGHT_NAMES.iter().zip(w.tensors()).zip(expect) {
            if t.len() != n {
                return Err(MemNetError::Integrity(format!("{name} has {} entries, expected {n}", t.len())));
            }
        }
        if self.running_mean.len() != h * d || self.running_var.len() != h * d {
            return Err(MemNetError::Integrity("running statistics shape".into()));
        }
        if w.e_val[..d].iter().chain(&w.e_addr[..d]).any(|&x| x != 0.0) {
            return Err(MemNetError::Integrity("padding embedding row is not zero".into()));
        }
        if !w.all_finite() {
            return Err(MemNetError::Integrity("non-finite parameter".into()));
        }
        Ok(())
    }
}
