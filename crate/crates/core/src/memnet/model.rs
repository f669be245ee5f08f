use rand::Rng;

use super::{MemNet, MemNetError, Weights};

pub const BN_EPS: f64 = 1e-5;
/// Lower clamp on the true-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `J × d` position weights, `l_j^k = (1 − j/J) − (k/d)(1 − 2j/J)` with
/// 1-based `j`, `k`.
pub fn position_encoding(j_max: usize, d: usize) -> Vec<f64> {
    let (jf, df) = (j_max as f64, d as f64);
    let mut out = Vec::with_capacity(j_max * d);
    for j in 1..=j_max {
        for k in 1..=d {
            let (j, k) = (j as f64, k as f64);
            out.push((1.0 - j / jf) - (k / df) * (1.0 - 2.0 * j / jf));
        }
    }
    out
}

/// Embeds the first `rows` rows of a `? × j` grid: `m_i = Σ_j l_j ⊙ E[w_ij]`.
/// Padding ids contribute nothing.
pub fn embed_lines(grid: &[u16], rows: usize, j: usize, e: &[f64], pe: &[f64], d: usize) -> Result<Vec<f64>, MemNetError> {
    let v = e.len() / d;
    if grid.len() < rows * j || pe.len() < j * d {
        return Err(MemNetError::Integrity(format!("grid of {} cells cannot hold {rows} rows of {j}", grid.len())));
    }
    let mut m = vec![0.0; rows * d];
    for i in 0..rows {
        let out = &mut m[i * d..(i + 1) * d];
        for (c, &tok) in grid[i * j..(i + 1) * j].iter().enumerate() {
            if tok == 0 {
                continue;
            }
            let t = tok as usize;
            if t >= v {
                return Err(MemNetError::Integrity(format!("token id {t} outside vocabulary of size {v}")));
            }
            let (row, l) = (&e[t * d..(t + 1) * d], &pe[c * d..(c + 1) * d]);
            for k in 0..d {
                out[k] += l[k] * row[k];
            }
        }
    }
    Ok(m)
}

/// One query: a file grid (`N × J`, row-major), its non-pad line count and
/// the 0-based query row.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub grid: &'a [u16],
    pub lines: usize,
    pub query: usize,
}

/// Inverted-dropout multipliers (`0` or `1/(1−p)`) for one sample's memory
/// rows, `lines × d` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Masks {
    pub val: Vec<f64>,
    pub addr: Vec<f64>,
}

pub fn sample_masks(batch: &[Sample], d: usize, p: f64, rng: &mut impl Rng) -> Vec<Masks> {
    let keep = 1.0 / (1.0 - p);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect() };
    batch.iter().map(|s| Masks { val: draw(s.lines * d), addr: draw(s.lines * d) }).collect()
}

/// Which statistics batch normalization uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    /// Statistics of the current batch (training).
    Batch,
    /// Stored running statistics (inference).
    Running,
}

#[derive(Clone, Debug)]
pub struct SampleCache {
    /// Memory rows after dropout, `lines × d`.
    pub m_val: Vec<f64>,
    pub m_addr: Vec<f64>,
    /// `u^1 ..= u^{H+1}`.
    pub u: Vec<Vec<f64>>,
    /// Per-hop attention over the sample's lines.
    pub p: Vec<Vec<f64>>,
    pub o: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HopCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub norm: Norm,
    pub samples: Vec<SampleCache>,
    pub hops: Vec<HopCache>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Forward pass over a batch. Batch normalization couples the samples, so
/// hops advance in lockstep. `masks = None` disables dropout.
pub fn forward_batch(
    net: &MemNet,
    batch: &[Sample],
    masks: Option<&[Masks]>,
    norm: Norm,
) -> Result<ForwardCache, MemNetError> {
    let (d, n_hops, n_cls, j) = (net.hyper.d, net.hyper.hops, net.hyper.classes, net.j);
    if batch.is_empty() {
        return Err(MemNetError::Integrity("empty batch".into()));
    }
    if masks.is_some_and(|m| m.len() != batch.len()) {
        return Err(MemNetError::Integrity("mask count differs from batch size".into()));
    }
    let pe = position_encoding(j, d);
    let w = &net.weights;
    let mut samples = Vec::with_capacity(batch.len());
    for (b, s) in batch.iter().enumerate() {
        if s.lines == 0 || s.query >= s.lines {
            return Err(MemNetError::Integrity(format!("query row {} outside {} lines", s.query, s.lines)));
        }
        let mut m_val = embed_lines(s.grid, s.lines, j, &w.e_val, &pe, d)?;
        let mut m_addr = embed_lines(s.grid, s.lines, j, &w.e_addr, &pe, d)?;
        if let Some(m) = masks {
            if m[b].val.len() != m_val.len() || m[b].addr.len() != m_addr.len() {
                return Err(MemNetError::Integrity("mask shape".into()));
            }
            m_val.iter_mut().zip(&m[b].val).for_each(|(x, k)| *x *= k);
            m_addr.iter_mut().zip(&m[b].addr).for_each(|(x, k)| *x *= k);
        }
        let u1 = embed_lines(&s.grid[s.query * j..], 1, j, &w.e_addr, &pe, d)?;
        samples.push(SampleCache {
            m_val,
            m_addr,
            u: vec![u1],
            p: Vec::with_capacity(n_hops),
            o: Vec::with_capacity(n_hops),
            r: Vec::with_capacity(n_hops),
            xhat: Vec::with_capacity(n_hops),
            probs: Vec::new(),
        });
    }

    let bsz = batch.len() as f64;
    let mut hops = Vec::with_capacity(n_hops);
    for h in 0..n_hops {
        let rm = &w.r[h * d * d..(h + 1) * d * d];
        for (s, sc) in batch.iter().zip(samples.iter_mut()) {
            let u = sc.u.last().unwrap();
            let mut p: Vec<f64> = (0..s.lines).map(|i| dot(&sc.m_addr[i * d..(i + 1) * d], u)).collect();
            softmax(&mut p);
            let mut o = vec![0.0; d];
            for (i, &pi) in p.iter().enumerate() {
                for (ok, mk) in o.iter_mut().zip(&sc.m_val[i * d..(i + 1) * d]) {
                    *ok += pi * mk;
                }
            }
            let r: Vec<f64> = (0..d).map(|a| dot(&rm[a * d..(a + 1) * d], &o)).collect();
            sc.p.push(p);
            sc.o.push(o);
            sc.r.push(r);
        }
        let (mean, var) = match norm {
            Norm::Batch => {
                let mut mean = vec![0.0; d];
                for sc in &samples {
                    mean.iter_mut().zip(&sc.r[h]).for_each(|(m, r)| *m += r / bsz);
                }
                let mut var = vec![0.0; d];
                for sc in &samples {
                    for a in 0..d {
                        var[a] += (sc.r[h][a] - mean[a]).powi(2) / bsz;
                    }
                }
                (mean, var)
            }
            Norm::Running => {
                (net.running_mean[h * d..(h + 1) * d].to_vec(), net.running_var[h * d..(h + 1) * d].to_vec())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gamma, beta) = (&w.gamma[h * d..(h + 1) * d], &w.beta[h * d..(h + 1) * d]);
        for sc in samples.iter_mut() {
            let xhat: Vec<f64> = (0..d).map(|a| (sc.r[h][a] - mean[a]) * inv_std[a]).collect();
            let u_next: Vec<f64> = (0..d).map(|a| sc.u[h][a] + gamma[a] * xhat[a] + beta[a]).collect();
            if u_next.iter().any(|x| !x.is_finite()) {
                return Err(MemNetError::Numeric { hop: h + 1 });
            }
            sc.xhat.push(xhat);
            sc.u.push(u_next);
        }
        hops.push(HopCache { mean, var, inv_std });
    }

    for sc in samples.iter_mut() {
        let u = sc.u.last().unwrap();
        let mut probs: Vec<f64> = (0..n_cls).map(|c| dot(&w.w[c * d..(c + 1) * d], u)).collect();
        softmax(&mut probs);
        if probs.iter().any(|x| !x.is_finite()) {
            return Err(MemNetError::Numeric { hop: n_hops });
        }
        sc.probs = probs;
    }
    Ok(ForwardCache { norm, samples, hops })
}

/// `−ln probs[label]`, clamped at [`PROB_FLOOR`]. The flag reports a clamp.
pub fn loss(probs: &[f64], label: usize) -> (f64, bool) {
    let p = probs[label];
    if p < PROB_FLOOR {
        (-PROB_FLOOR.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

/// Mean cross-entropy over the batch and the number of clamped terms.
pub fn batch_loss(cache: &ForwardCache, labels: &[usize]) -> (f64, usize) {
    let mut total = 0.0;
    let mut clamped = 0;
    for (sc, &l) in cache.samples.iter().zip(labels) {
        let (x, c) = loss(&sc.probs, l);
        total += x;
        clamped += c as usize;
    }
    (total / labels.len() as f64, clamped)
}

/// Gradients of [`batch_loss`] with respect to every trainable tensor.
/// Padding embedding rows always receive zero gradient.
pub fn backward(
    net: &MemNet,
    batch: &[Sample],
    masks: Option<&[Masks]>,
    cache: &ForwardCache,
    labels: &[usize],
) -> Result<Weights, MemNetError> {
    let (d, n_hops, n_cls, j) = (net.hyper.d, net.hyper.hops, net.hyper.classes, net.j);
    if cache.samples.len() != batch.len() || labels.len() != batch.len() {
        return Err(MemNetError::Integrity("batch, cache and labels differ in length".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_cls) {
        return Err(MemNetError::Integrity(format!("label {bad} outside {n_cls} classes")));
    }
    let w = &net.weights;
    let mut g = Weights::zeros_like(w);
    let bsz = batch.len() as f64;

    let mut du: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
    for (sc, &l) in cache.samples.iter().zip(labels) {
        let u = &sc.u[n_hops];
        let mut dui = vec![0.0; d];
        for c in 0..n_cls {
            let dl = (sc.probs[c] - if c == l { 1.0 } else { 0.0 }) / bsz;
            for a in 0..d {
                g.w[c * d + a] += dl * u[a];
                dui[a] += w.w[c * d + a] * dl;
            }
        }
        du.push(dui);
    }

    let mut dm_val: Vec<Vec<f64>> = batch.iter().map(|s| vec![0.0; s.lines * d]).collect();
    let mut dm_addr = dm_val.clone();
    for h in (0..n_hops).rev() {
        let hc = &cache.hops[h];
        let gamma = &w.gamma[h * d..(h + 1) * d];
        let mut sum_dx = vec![0.0; d];
        let mut sum_dx_x = vec![0.0; d];
        for (sc, dui) in cache.samples.iter().zip(&du) {
            for a in 0..d {
                let x = sc.xhat[h][a];
                g.gamma[h * d + a] += dui[a] * x;
                g.beta[h * d + a] += dui[a];
                let dx = dui[a] * gamma[a];
                sum_dx[a] += dx;
                sum_dx_x[a] += dx * x;
            }
        }
        let rm = &w.r[h * d * d..(h + 1) * d * d];
        for (b, (s, sc)) in batch.iter().zip(&cache.samples).enumerate() {
            let dr: Vec<f64> = (0..d)
                .map(|a| {
                    let dx = du[b][a] * gamma[a];
                    match cache.norm {
                        Norm::Batch => hc.inv_std[a] * (dx - sum_dx[a] / bsz - sc.xhat[h][a] * sum_dx_x[a] / bsz),
                        Norm::Running => hc.inv_std[a] * dx,
                    }
                })
                .collect();
            let o = &sc.o[h];
            let mut d_o = vec![0.0; d];
            for a in 0..d {
                let gr = &mut g.r[h * d * d + a * d..h * d * d + (a + 1) * d];
                for k in 0..d {
                    gr[k] += dr[a] * o[k];
                    d_o[k] += rm[a * d + k] * dr[a];
                }
            }
            let p = &sc.p[h];
            let dp: Vec<f64> = (0..s.lines).map(|i| dot(&sc.m_val[i * d..(i + 1) * d], &d_o)).collect();
            let pdp = dot(p, &dp);
            let u = &sc.u[h];
            let dub = &mut du[b];
            for i in 0..s.lines {
                let dlogit = p[i] * (dp[i] - pdp);
                let (mv, ma) = (&mut dm_val[b][i * d..(i + 1) * d], &sc.m_addr[i * d..(i + 1) * d]);
                let dma = &mut dm_addr[b][i * d..(i + 1) * d];
                for k in 0..d {
                    mv[k] += p[i] * d_o[k];
                    dma[k] += dlogit * u[k];
                    dub[k] += dlogit * ma[k];
                }
            }
        }
    }

    let pe = position_encoding(j, d);
    let scatter = |e: &mut [f64], row: &[u16], grad: &[f64]| {
        for (c, &tok) in row.iter().enumerate() {
            if tok == 0 {
                continue;
            }
            let t = tok as usize;
            for k in 0..d {
                e[t * d + k] += pe[c * d + k] * grad[k];
            }
        }
    };
    for (b, s) in batch.iter().enumerate() {
        scatter(&mut g.e_addr, &s.grid[s.query * j..(s.query + 1) * j], &du[b]);
        if let Some(m) = masks {
            dm_val[b].iter_mut().zip(&m[b].val).for_each(|(x, k)| *x *= k);
            dm_addr[b].iter_mut().zip(&m[b].addr).for_each(|(x, k)| *x *= k);
        }
        for i in 0..s.lines {
            let row = &s.grid[i * j..(i + 1) * j];
            scatter(&mut g.e_val, row, &dm_val[b][i * d..(i + 1) * d]);
            scatter(&mut g.e_addr, row, &dm_addr[b][i * d..(i + 1) * d]);
        }
    }
    Ok(g)
}
