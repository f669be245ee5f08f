//! Prints label and shape statistics for a generated corpus.
//!
//! `cargo run --release -p sbabi-core --example corpus_stats -- [files] [seed]`

use std::collections::BTreeMap;

use sbabi::codegen::{generate_corpus, GenConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let files = args.next().and_then(|a| a.parse().ok()).unwrap_or(1000);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let cfg = GenConfig { file_count: files, seed, ..GenConfig::default() };
    let corpus = generate_corpus(&cfg).expect("generation");
    let mut labels = BTreeMap::new();
    let mut max_lines = 0;
    let mut total_lines = 0;
    for e in &corpus.manifest.entries {
        for w in &e.writes {
            *labels.entry(w.label().as_str()).or_insert(0usize) += 1;
        }
        max_lines = max_lines.max(e.line_count);
        total_lines += e.line_count as usize;
    }
    println!("files {files} writes {} mean lines {:.1} max lines {max_lines}", corpus.manifest.write_count(), total_lines as f64 / files as f64);
    for (l, n) in labels {
        println!("{l:<22} {n}");
    }
    if let Some(src) = corpus.sources.first() {
        println!("{src}");
    }
}
