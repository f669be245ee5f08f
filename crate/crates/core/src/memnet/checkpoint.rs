//! Checkpoint format:
//!
//! 1. the magic line `SBABI-CKPT1\n`;
//! 2. a u64 little-endian byte length of the JSON header;
//! 3. the JSON header: hyper-parameters, `V`, `J`, the vocabulary hash and
//!    one `{name, shape, offset}` record per tensor (offset counted in f64s
//!    from the start of the data block);
//! 4. the data block: every tensor as little-endian f64, in header order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HyperParams, MemNet, MemNetError, Weights};

pub const CHECKPOINT_MAGIC: &[u8] = b"SBABI-CKPT1\n";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyper: HyperParams,
    v: usize,
    j: usize,
    vocab_hash: String,
    tensors: Vec<TensorEntry>,
}

fn layout(net: &MemNet) -> Vec<(&'static str, Vec<usize>, &[f64])> {
    let (d, h, c, v) = (net.hyper.d, net.hyper.hops, net.hyper.classes, net.v);
    let w = &net.weights;
    vec![
        ("e_val", vec![v, d], &w.e_val[..]),
        ("e_addr", vec![v, d], &w.e_addr[..]),
        ("r", vec![h, d, d], &w.r[..]),
        ("gamma", vec![h, d], &w.gamma[..]),
        ("beta", vec![h, d], &w.beta[..]),
        ("w", vec![c, d], &w.w[..]),
        ("running_mean", vec![h, d], &net.running_mean[..]),
        ("running_var", vec![h, d], &net.running_var[..]),
    ]
}

pub fn write_checkpoint(w: &mut impl Write, net: &MemNet, vocab_hash: &str) -> Result<(), MemNetError> {
    net.check()?;
    let parts = layout(net);
    let mut offset = 0;
    let tensors = parts
        .iter()
        .map(|(name, shape, data)| {
            let e = TensorEntry { name: name.to_string(), shape: shape.clone(), offset };
            offset += data.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        hyper: net.hyper.clone(),
        v: net.v,
        j: net.j,
        vocab_hash: vocab_hash.to_string(),
        tensors,
    })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, _, data) in parts {
        for x in data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(MemNet, String), MemNetError> {
    let bad = |m: String| MemNetError::Checkpoint(m);
    let mut magic = vec![0; CHECKPOINT_MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut len = [0; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(bad(format!("header length {len} is implausible")));
    }
    let mut header = vec![0; len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    header.hyper.validate()?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(bad("data block is not a whole number of f64s".into()));
    }
    let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let (d, h) = (header.hyper.d, header.hyper.hops);
    let mut net = MemNet {
        hyper: header.hyper.clone(),
        v: header.v,
        j: header.j,
        weights: Weights { e_val: vec![], e_addr: vec![], r: vec![], gamma: vec![], beta: vec![], w: vec![] },
        running_mean: vec![0.0; h * d],
        running_var: vec![0.0; h * d],
    };
    let expected: Vec<(&str, Vec<usize>)> = layout(&net).into_iter().map(|(n, s, _)| (n, s)).collect();
    if header.tensors.len() != expected.len() {
        return Err(bad(format!("{} tensors, expected {}", header.tensors.len(), expected.len())));
    }
    let mut total = 0;
    for (t, (name, shape)) in header.tensors.iter().zip(&expected) {
        if t.name != *name || t.shape != *shape {
            return Err(bad(format!("tensor {} {:?}, expected {name} {shape:?}", t.name, t.shape)));
        }
        let n: usize = shape.iter().product();
        let slice = data.get(t.offset..t.offset + n).ok_or_else(|| bad(format!("tensor {name} out of bounds")))?.to_vec();
        total += n;
        match *name {
            "e_val" => net.weights.e_val = slice,
            "e_addr" => net.weights.e_addr = slice,
            "r" => net.weights.r = slice,
            "gamma" => net.weights.gamma = slice,
            "beta" => net.weights.beta = slice,
            "w" => net.weights.w = slice,
            "running_mean" => net.running_mean = slice,
            "running_var" => net.running_var = slice,
            _ => unreachable!(),
        }
    }
    if total != data.len() {
        return Err(bad(format!("{} data values, header describes {total}", data.len())));
    }
    net.check()?;
    Ok((net, header.vocab_hash))
}

pub fn save_checkpoint(path: &Path, net: &MemNet, vocab_hash: &str) -> Result<(), MemNetError> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut w, net, vocab_hash)?;
    w.flush()?;
    Ok(())
}

/// Loads a network and the hash of the vocabulary it was trained with.
pub fn load_checkpoint(path: &Path) -> Result<(MemNet, String), MemNetError> {
    read_checkpoint(&mut io::BufReader::new(fs::File::open(path)?))
}
