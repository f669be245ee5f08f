use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, batch_loss, forward_batch, sample_masks, Norm, Sample};
use super::{HyperParams, MemNet, MemNetError, Weights, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, BN_MOMENTUM};
use crate::eval::Metrics;
use crate::seeds;
use crate::tokenize::{QueryClass, TensorSet};

const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Weights,
    pub v: Weights,
    pub t: u64,
}

impl AdamState {
    pub fn new(w: &Weights) -> AdamState {
        AdamState { m: Weights::zeros_like(w), v: Weights::zeros_like(w), t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(w: &mut Weights, g: &Weights, st: &mut AdamState, lr: f64) {
    st.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(st.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(st.t as i32);
    let params = w.tensors_mut();
    let grads = g.tensors();
    let ms = st.m.tensors_mut();
    let vs = st.v.tensors_mut();
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// One epoch of class-balanced batches as indices into `labels`. Each batch
/// draws `batch_size / classes` samples per class with replacement; an epoch
/// has `max(1, labels.len() / batch_size)` batches.
pub fn balanced_batches(
    labels: &[usize],
    classes: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>, MemNetError> {
    if classes == 0 || batch_size == 0 || !batch_size.is_multiple_of(classes) {
        return Err(MemNetError::Config(format!("batch size {batch_size} is not a multiple of {classes} classes")));
    }
    let mut pools = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools.get_mut(l).ok_or_else(|| MemNetError::Config(format!("label {l} ≥ {classes}")))?.push(i);
    }
    if let Some(c) = pools.iter().position(Vec::is_empty) {
        return Err(MemNetError::Config(format!("class {c} has no training queries")));
    }
    let per = batch_size / classes;
    let count = (labels.len() / batch_size).max(1);
    Ok((0..count)
        .map(|_| pools.iter().flat_map(|pool| (0..per).map(|_| *pool.choose(rng).unwrap()).collect::<Vec<_>>()).collect())
        .collect())
}

/// One [`Sample`] per query of `set`, in query order.
pub fn samples_of(set: &TensorSet) -> Vec<Sample<'_>> {
    let lines: Vec<usize> = (0..set.file_count()).map(|f| set.line_count(f)).collect();
    set.queries
        .iter()
        .map(|q| Sample { grid: set.grid(q.file as usize), lines: lines[q.file as usize], query: q.row as usize })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub clamped: usize,
    pub val_f1: Option<f64>,
}

pub type TrainHistory = Vec<EpochStats>;

/// Trains a freshly initialized network on `set`.
pub fn train(
    set: &TensorSet,
    hyper: &HyperParams,
    validation: Option<&TensorSet>,
) -> Result<(MemNet, TrainHistory), MemNetError> {
    let mut net = MemNet::init(hyper, set.v, set.j, &mut seeds::rng(seeds::stage_seed(hyper.seed, "init")))?;
    let history = fit(&mut net, set, validation)?;
    Ok((net, history))
}

/// Runs `net.hyper.epochs` epochs of balanced-batch Adam training in place.
pub fn fit(net: &mut MemNet, set: &TensorSet, validation: Option<&TensorSet>) -> Result<TrainHistory, MemNetError> {
    let hyper = net.hyper.clone();
    hyper.validate()?;
    check_compatible(net, set)?;
    let samples = samples_of(set);
    let labels: Vec<usize> = set.queries.iter().map(|q| q.label.index()).collect();
    if labels.is_empty() {
        return Err(MemNetError::Config("training set has no queries".into()));
    }
    let d = hyper.d;
    let batch_root = seeds::stage_seed(hyper.seed, "batches");
    let mut drop_rng = seeds::rng(seeds::stage_seed(hyper.seed, "dropout"));
    let mut adam = AdamState::new(&net.weights);
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut batch_rng = seeds::rng(seeds::derive(batch_root, epoch as u64));
        let batches = balanced_batches(&labels, hyper.classes, hyper.batch_size, &mut batch_rng)?;
        let (mut total, mut clamped) = (0.0, 0);
        for (bi, idx) in batches.iter().enumerate() {
            let batch: Vec<Sample> = idx.iter().map(|&i| samples[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let masks = (hyper.dropout_p > 0.0).then(|| sample_masks(&batch, d, hyper.dropout_p, &mut drop_rng));
            let cache = forward_batch(net, &batch, masks.as_deref(), Norm::Batch)
                .map_err(|_| MemNetError::Divergence { epoch, batch: bi })?;
            let (l, c) = batch_loss(&cache, &y);
            if !l.is_finite() {
                return Err(MemNetError::Divergence { epoch, batch: bi });
            }
            total += l;
            clamped += c;
            let grads = backward(net, &batch, masks.as_deref(), &cache, &y)?;
            adam_step(&mut net.weights, &grads, &mut adam, hyper.lr);
            let bsz = batch.len() as f64;
            let unbias = if batch.len() > 1 { bsz / (bsz - 1.0) } else { 1.0 };
            for (h, hc) in cache.hops.iter().enumerate() {
                for a in 0..d {
                    let k = h * d + a;
                    net.running_mean[k] = BN_MOMENTUM * net.running_mean[k] + (1.0 - BN_MOMENTUM) * hc.mean[a];
                    net.running_var[k] = BN_MOMENTUM * net.running_var[k] + (1.0 - BN_MOMENTUM) * hc.var[a] * unbias;
                }
            }
        }
        if clamped > 0 {
            log::warn!("epoch {epoch}: {clamped} loss terms clamped");
        }
        let val_f1 = match validation {
            Some(v) => Some(binary_f1(&predict(net, v)?)),
            None => None,
        };
        let mean_loss = total / batches.len() as f64;
        log::debug!("epoch {epoch}: loss {mean_loss:.5}");
        history.push(EpochStats { epoch, mean_loss, clamped, val_f1 });
    }
    Ok(history)
}

fn binary_f1(preds: &[Prediction]) -> f64 {
    Metrics::from_pairs(preds.iter().map(|p| (p.truth.is_unsafe(), p.predicted.is_unsafe()))).f1
}

fn check_compatible(net: &MemNet, set: &TensorSet) -> Result<(), MemNetError> {
    if net.v != set.v || net.j != set.j {
        return Err(MemNetError::Config(format!(
            "network expects V = {}, J = {} but data has V = {}, J = {}",
            net.v, net.j, set.v, set.j
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub file: String,
    pub line: u32,
    pub truth: QueryClass,
    pub predicted: QueryClass,
    pub probs: Vec<f64>,
}

/// Eval-mode class probabilities for every query, in query order.
pub fn predict_probs(net: &MemNet, set: &TensorSet) -> Result<Vec<Vec<f64>>, MemNetError> {
    check_compatible(net, set)?;
    let samples = samples_of(set);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let cache = forward_batch(net, chunk, None, Norm::Running)?;
        out.extend(cache.samples.into_iter().map(|s| s.probs));
    }
    Ok(out)
}

/// Argmax prediction for every query (ties go to the lower class index).
pub fn predict(net: &MemNet, set: &TensorSet) -> Result<Vec<Prediction>, MemNetError> {
    if net.hyper.classes != QueryClass::ALL.len() {
        return Err(MemNetError::Config(format!("prediction needs 4 classes, network has {}", net.hyper.classes)));
    }
    let probs = predict_probs(net, set)?;
    Ok(set
        .queries
        .iter()
        .zip(probs)
        .map(|(q, p)| {
            let best = (0..p.len()).fold(0, |b, c| if p[c] > p[b] { c } else { b });
            Prediction {
                file: set.file_names[q.file as usize].clone(),
                line: q.line(),
                truth: q.label,
                predicted: QueryClass::from_index(best).expect("four classes"),
                probs: p,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let hyper = HyperParams { d: 4, hops: 1, ..Default::default() };
        let net = MemNet::init(&hyper, 5, 3, &mut seeds::rng(0)).unwrap();
        let mut w = net.weights.clone();
        let mut st = AdamState::new(&w);
        let zero = Weights::zeros_like(&w);
        adam_step(&mut w, &zero, &mut st, 1e-3);
        assert_eq!(w, net.weights);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let hyper = HyperParams { d: 4, hops: 1, ..Default::default() };
        let net = MemNet::init(&hyper, 5, 3, &mut seeds::rng(0)).unwrap();
        let mut w = net.weights.clone();
        let mut g = Weights::zeros_like(&w);
        g.w.fill(0.37);
        let mut st = AdamState::new(&w);
        adam_step(&mut w, &g, &mut st, 1e-3);
        // first step: m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        let expect = 1e-3 * 0.37 / (0.37 + ADAM_EPS);
        for (a, b) in w.w.iter().zip(&net.weights.w) {
            assert!(((b - a) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn batches_are_balanced_and_reproducible() {
        let labels: Vec<usize> =
            [(0, 10), (1, 1000), (2, 10), (3, 1000)].iter().flat_map(|&(c, n)| vec![c; n]).collect();
        let a = balanced_batches(&labels, 4, 32, &mut seeds::rng(5)).unwrap();
        let b = balanced_batches(&labels, 4, 32, &mut seeds::rng(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), labels.len() / 32);
        let mut exposure = [0usize; 4];
        for batch in &a {
            let mut per = [0usize; 4];
            batch.iter().for_each(|&i| per[labels[i]] += 1);
            assert_eq!(per, [8; 4]);
            per.iter().enumerate().for_each(|(c, n)| exposure[c] += n);
        }
        assert!(exposure.iter().all(|&e| e == exposure[0]));
    }

    #[test]
    fn batch_configuration_errors() {
        assert!(matches!(balanced_batches(&[0, 1, 2], 4, 32, &mut seeds::rng(0)), Err(MemNetError::Config(_))));
        assert!(matches!(balanced_batches(&[0, 1, 2, 3], 4, 30, &mut seeds::rng(0)), Err(MemNetError::Config(_))));
    }
}
