//! Trains one network at a given size and prints per-epoch loss and test F1.
//! Usage: train_probe [train_files] [test_files] [epochs] [seed]

use std::time::Instant;

use sbabi::codegen::GenConfig;
use sbabi::experiment;
use sbabi::memnet::{self, HyperParams};

fn main() {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let (n_train, n_test, epochs, seed) = (arg(0, 9600) as usize, arg(1, 2400) as usize, arg(2, 30) as usize, arg(3, 1));
    let t = Instant::now();
    let data = experiment::prepare(&GenConfig::default(), n_train, n_test, seed).unwrap();
    println!(
        "prepared in {:.1}s: N={} J={} V={} train queries {} test queries {}",
        t.elapsed().as_secs_f64(),
        data.train.n,
        data.train.j,
        data.train.v,
        data.train.queries.len(),
        data.test.queries.len()
    );
    let hyper = HyperParams { epochs, seed: experiment::run_seed(seed, 0), ..HyperParams::default() };
    let t = Instant::now();
    let (_, history) = memnet::train(&data.train, &hyper, Some(&data.test)).unwrap();
    for h in &history {
        println!("epoch {:2} loss {:.4} test f1 {:.4}", h.epoch, h.mean_loss, h.val_f1.unwrap());
    }
    println!("trained in {:.1}s", t.elapsed().as_secs_f64());
}
