//! Central finite-difference check of [`backward`] against [`batch_loss`].

use rand::Rng;

use super::model::{backward, batch_loss, forward_batch, sample_masks, Masks, Norm, Sample};
use super::{HyperParams, MemNet, MemNetError, WEIGHT_NAMES};

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, 0 when both vectors are zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Tensor name, analytic gradient, numeric gradient.
pub type GradientPair = (&'static str, Vec<f64>, Vec<f64>);

/// Analytic and central finite-difference gradients of every trainable
/// tensor (padding embedding rows excluded), in [`WEIGHT_NAMES`] order.
/// Masks stay fixed and batch normalization uses batch statistics.
pub fn gradient_pairs(
    net: &MemNet,
    batch: &[Sample],
    masks: Option<&[Masks]>,
    labels: &[usize],
    step: f64,
) -> Result<Vec<GradientPair>, MemNetError> {
    let cache = forward_batch(net, batch, masks, Norm::Batch)?;
    let grads = backward(net, batch, masks, &cache, labels)?;
    let d = net.hyper.d;
    let mut probe = net.clone();
    let mut out = Vec::new();
    for (t, name) in WEIGHT_NAMES.iter().enumerate() {
        let len = net.weights.tensors()[t].len();
        let skip = if t < 2 { d } else { 0 };
        let mut numeric = Vec::with_capacity(len - skip);
        for i in skip..len {
            let orig = net.weights.tensors()[t][i];
            probe.weights.tensors_mut()[t][i] = orig + step;
            let up = batch_loss(&forward_batch(&probe, batch, masks, Norm::Batch)?, labels).0;
            probe.weights.tensors_mut()[t][i] = orig - step;
            let down = batch_loss(&forward_batch(&probe, batch, masks, Norm::Batch)?, labels).0;
            probe.weights.tensors_mut()[t][i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        out.push((*name, grads.tensors()[t][skip..].to_vec(), numeric));
    }
    Ok(out)
}

/// Relative error per trainable tensor.
pub fn check_gradients(
    net: &MemNet,
    batch: &[Sample],
    masks: Option<&[Masks]>,
    labels: &[usize],
    step: f64,
) -> Result<Vec<(&'static str, f64)>, MemNetError> {
    Ok(gradient_pairs(net, batch, masks, labels, step)?
        .into_iter()
        .map(|(name, a, n)| (name, relative_error(&a, &n)))
        .collect())
}

/// A random small problem: network, grids, query rows, masks and labels.
pub struct GradProblem {
    pub net: MemNet,
    pub grids: Vec<Vec<u16>>,
    pub lines: Vec<usize>,
    pub queries: Vec<usize>,
    pub masks: Vec<Masks>,
    pub labels: Vec<usize>,
}

impl GradProblem {
    /// `V ≤ 16`, `N ≤ 4`, `J ≤ 5`, `d ≤ 8`, `H ≤ 3`, `C = 4`, batch 4..=8,
    /// default initialization with perturbed batch-norm affine parameters and
    /// dropout masks at 0.3.
    pub fn random(rng: &mut impl Rng) -> GradProblem {
        let v = rng.gen_range(3..=16);
        let n = rng.gen_range(1..=4);
        let j = rng.gen_range(2..=5);
        let d = rng.gen_range(2..=8);
        let hops = rng.gen_range(1..=3);
        let b = rng.gen_range(4..=8);
        let hyper = HyperParams { d, hops, classes: 4, batch_size: 4, dropout_p: 0.3, ..Default::default() };
        let mut net = MemNet::init(&hyper, v, j, rng).expect("valid small config");
        for x in net.weights.gamma.iter_mut() {
            *x += rng.gen_range(-0.5..0.5);
        }
        for x in net.weights.beta.iter_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
        let mut grids = Vec::new();
        let mut lines = Vec::new();
        let mut queries = Vec::new();
        for _ in 0..b {
            let l = rng.gen_range(1..=n);
            let mut g = vec![0u16; n * j];
            for row in 0..l {
                let len = rng.gen_range(1..=j);
                for c in 0..len {
                    g[row * j + c] = rng.gen_range(1..v) as u16;
                }
            }
            grids.push(g);
            lines.push(l);
            queries.push(rng.gen_range(0..l));
        }
        let labels = (0..b).map(|_| rng.gen_range(0..4)).collect();
        let samples: Vec<Sample> =
            (0..b).map(|i| Sample { grid: &grids[i], lines: lines[i], query: queries[i] }).collect();
        let masks = sample_masks(&samples, d, 0.3, rng);
        GradProblem { net, grids: grids.clone(), lines, queries, masks, labels }
    }

    pub fn samples(&self) -> Vec<Sample<'_>> {
        (0..self.grids.len())
            .map(|i| Sample { grid: &self.grids[i], lines: self.lines[i], query: self.queries[i] })
            .collect()
    }

    pub fn check(&self, step: f64) -> Result<Vec<(&'static str, f64)>, MemNetError> {
        check_gradients(&self.net, &self.samples(), Some(&self.masks), &self.labels, step)
    }
}
