//! Prints per-tensor gradient-check errors over many random problems, or the
//! errors of one problem at several step sizes.
//! Usage: gradcheck_scan [count] | gradcheck_scan one <seed>

use sbabi::memnet::gradcheck::GradProblem;
use sbabi::seeds;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.first().map(String::as_str) == Some("one") {
        let s: u64 = args[1].parse().unwrap();
        let p = GradProblem::random(&mut seeds::rng(s));
        println!("d={} H={} V={} J={} B={}", p.net.hyper.d, p.net.hyper.hops, p.net.v, p.net.j, p.grids.len());
        for step in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            println!("{step:e}: {:?}", p.check(step).unwrap());
        }
        return;
    }
    let count: u64 = args.first().map_or(200, |a| a.parse().unwrap());
    let mut worst = std::collections::BTreeMap::new();
    let mut bad = 0;
    for s in 0..count {
        let p = GradProblem::random(&mut seeds::rng(s));
        let errs = p.check(1e-3).unwrap();
        if errs.iter().any(|e| e.1 > 1e-3) {
            bad += 1;
        }
        for (name, e) in errs {
            let w = worst.entry(name).or_insert((0.0f64, 0));
            if e > w.0 {
                *w = (e, s);
            }
        }
    }
    println!("{bad}/{count} problems over 1e-3; worst {worst:?}");
}
