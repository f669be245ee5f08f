//! In-process pipeline: generate train and test corpora, tokenize them with a
//! shared vocabulary and grid shape, train networks and score them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codegen::{self, Corpus, GenConfig, GenError};
use crate::eval::{self, ConfusionMatrix, EvalError, Metrics, QueryFilter};
use crate::memnet::{self, HyperParams, MemNet, MemNetError, Prediction, TrainHistory};
use crate::seeds;
use crate::tokenize::{self, QueryClass, TensorSet, TokenizeError, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("generate: {0}")]
    Generate(#[from] GenError),
    #[error("tokenize: {0}")]
    Tokenize(#[from] TokenizeError),
    #[error("train: {0}")]
    Train(#[from] MemNetError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
}

/// Train and test corpora encoded with one vocabulary and one `(N, J)`.
pub struct Prepared {
    pub train_corpus: Corpus,
    pub test_corpus: Corpus,
    pub vocab: Vocab,
    pub train: TensorSet,
    pub test: TensorSet,
    pub test_truth: BTreeMap<eval::QueryKey, QueryClass>,
    pub test_sound: QueryFilter,
}

/// Generates `train_files` and `test_files` programs from independent seeds
/// derived from `root` and encodes them with [`encode_splits`].
pub fn prepare(gen: &GenConfig, train_files: usize, test_files: usize, root: u64) -> Result<Prepared, ExperimentError> {
    let train_corpus =
        codegen::generate_corpus(&GenConfig { seed: seeds::stage_seed(root, "gen-train"), file_count: train_files, ..gen.clone() })?;
    let test_corpus =
        codegen::generate_corpus(&GenConfig { seed: seeds::stage_seed(root, "gen-test"), file_count: test_files, ..gen.clone() })?;
    let (vocab, train, test) = encode_splits(gen, &train_corpus, &test_corpus)?;
    let test_truth = eval::truth_of(&test_corpus.manifest);
    let test_sound = eval::sound_subset(&test_corpus.manifest);
    Ok(Prepared { train_corpus, test_corpus, vocab, train, test, test_truth, test_sound })
}

/// Shared vocabulary and grid shape for a train/test pair. The vocabulary
/// holds the generator's alphabet and the training corpus; line tokens and
/// `(N, J)` cover both corpora.
pub fn encode_splits(
    gen: &GenConfig,
    train: &Corpus,
    test: &Corpus,
) -> Result<(Vocab, TensorSet, TensorSet), TokenizeError> {
    let all = train.sources.iter().chain(&test.sources).map(String::as_str);
    let (n, j) = tokenize::grid_dims(all)?;
    let alphabet = codegen::alphabet_source(gen);
    let sources = train.sources.iter().map(String::as_str).chain([alphabet.as_str()]);
    let vocab = tokenize::build_vocab(sources, n)?;
    let train_set = tokenize::tokenize_corpus(&train.manifest, &train.sources, &vocab, n, j)?;
    let test_set = tokenize::tokenize_corpus(&test.manifest, &test.sources, &vocab, n, j)?;
    Ok((vocab, train_set, test_set))
}

/// Seed of training run `run` under root seed `root`.
pub fn run_seed(root: u64, run: usize) -> u64 {
    seeds::derive(seeds::stage_seed(root, "train"), run as u64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub seed: u64,
    pub train_files: usize,
    pub full: Metrics,
    pub sound: Metrics,
    pub confusion: ConfusionMatrix,
    pub history: TrainHistory,
}

/// Trains on the first `train_files` files of the prepared training set and
/// scores on the whole test set.
pub fn train_and_eval(
    data: &Prepared,
    train_files: usize,
    hyper: &HyperParams,
    root: u64,
    run: usize,
) -> Result<(RunOutcome, MemNet, Vec<Prediction>), ExperimentError> {
    let train = data.train.take_files(train_files);
    let seed = run_seed(root, run);
    let (net, history) = memnet::train(&train, &HyperParams { seed, ..hyper.clone() }, None)?;
    let preds = memnet::predict(&net, &data.test)?;
    let map = eval::prediction_map(&preds);
    let outcome = RunOutcome {
        run,
        seed,
        train_files: train.file_count(),
        full: eval::score(&map, &data.test_truth, None)?,
        sound: eval::score(&map, &data.test_truth, Some(&data.test_sound))?,
        confusion: eval::confusion(&map, &data.test_truth, None)?,
        history,
    };
    Ok((outcome, net, preds))
}

/// `metrics.csv` rows for a set of runs.
pub fn metrics_rows(outcomes: &[RunOutcome]) -> Vec<(String, String, Metrics)> {
    outcomes
        .iter()
        .flat_map(|o| {
            let name = format!("n{}-run{}", o.train_files, o.run);
            [(name.clone(), "full".to_string(), o.full), (name, "sound".to_string(), o.sound)]
        })
        .collect()
}

pub fn median_f1(outcomes: &[RunOutcome]) -> f64 {
    eval::median(&outcomes.iter().map(|o| o.full.f1).collect::<Vec<_>>())
}
