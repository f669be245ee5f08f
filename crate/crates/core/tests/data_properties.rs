use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use sbabi::codegen::{self, generate_corpus, generate_file, GenConfig};
use sbabi::eval::{self, ConfusionMatrix, Metrics, QueryKey};
use sbabi::oracle::{LineLabel, SafetyLabel};
use sbabi::seeds;
use sbabi::tokenize::{self, QueryClass, TensorSet};

fn corpus(seed: u64, files: usize) -> sbabi::codegen::Corpus {
    generate_corpus(&GenConfig { seed, file_count: files, ..GenConfig::default() }).unwrap()
}

#[test]
fn generation_is_deterministic() {
    let a = corpus(9, 50);
    let b = corpus(9, 50);
    assert_eq!(a.sources, b.sources);
    assert_eq!(a.manifest.to_json().unwrap(), b.manifest.to_json().unwrap());
}

#[test]
fn thousand_files_cover_every_label() {
    let c = corpus(3, 1000);
    let mut seen = BTreeSet::new();
    for e in &c.manifest.entries {
        seen.extend(e.labels.iter().copied());
    }
    assert_eq!(seen, LineLabel::ALL.iter().copied().collect());
}

#[test]
fn alphabet_covers_large_corpus() {
    let c = corpus(12, 3000);
    let alphabet = codegen::alphabet_source(&GenConfig::default());
    let closed = tokenize::build_vocab([alphabet.as_str()], 0).unwrap();
    let seen = tokenize::build_vocab(c.sources.iter().map(String::as_str), 0).unwrap();
    assert_eq!(closed.tokens(), seen.tokens());
}

fn closed_vocab(c: &sbabi::codegen::Corpus, n: usize) -> tokenize::Vocab {
    let alphabet = codegen::alphabet_source(&GenConfig::default());
    tokenize::build_vocab(c.sources.iter().map(String::as_str).chain([alphabet.as_str()]), n).unwrap()
}

fn arb_pairs() -> impl Strategy<Value = Vec<(bool, bool)>> {
    prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)
}

fn arb_class() -> impl Strategy<Value = QueryClass> {
    (0usize..4).prop_map(|i| QueryClass::from_index(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn decode_inverts_encode(seed in any::<u64>()) {
        let f = generate_file(seed, &GenConfig::default()).unwrap();
        let (n, j) = tokenize::grid_dims([f.source.as_str()]).unwrap();
        let vocab = tokenize::build_vocab([f.source.as_str()], n).unwrap();
        let grid = tokenize::encode_file(&f.source, &vocab, n + 2, j + 3).unwrap();
        let lexed: Vec<Vec<String>> = f.source.lines().map(|l| tokenize::lex_line(l).unwrap()).collect();
        prop_assert_eq!(tokenize::decode(&grid, &vocab), lexed);
        for i in 0..grid.lines {
            prop_assert_eq!(Some(grid.row(i)[0]), vocab.id(&tokenize::line_token(i + 1)));
        }
        for i in grid.lines..grid.n {
            prop_assert!(grid.row(i).iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn test_split_encodes_with_train_vocab(seed in any::<u64>(), train_files in 1usize..30) {
        let train = corpus(seeds::stage_seed(seed, "gen-train"), train_files);
        let test = corpus(seeds::stage_seed(seed, "gen-test"), 60);
        let all = train.sources.iter().chain(&test.sources).map(String::as_str);
        let (n, j) = tokenize::grid_dims(all).unwrap();
        let vocab = closed_vocab(&train, n);
        prop_assert!(tokenize::tokenize_corpus(&test.manifest, &test.sources, &vocab, n, j).is_ok());
    }

    #[test]
    fn remap_keeps_shape_and_other_cells(seed in any::<u64>()) {
        let c = corpus(seed, 8);
        let (n, j) = tokenize::grid_dims(c.sources.iter().map(String::as_str)).unwrap();
        let vocab = closed_vocab(&c, n);
        let t = tokenize::tokenize_corpus(&c.manifest, &c.sources, &vocab, n, j).unwrap();
        let r = tokenize::remap_integers(&t, &vocab).unwrap();
        prop_assert_eq!((r.n, r.j, r.v, r.cells.len()), (t.n, t.j, t.v, t.cells.len()));
        prop_assert_eq!(&r.queries, &t.queries);
        for (a, b) in t.cells.iter().zip(&r.cells) {
            let int = *a != 0 && tokenize::is_integer_literal(vocab.token(*a).unwrap());
            prop_assert!(int || a == b);
        }
        prop_assert_eq!(tokenize::remap_integers(&r, &vocab).unwrap(), r);
    }

    #[test]
    fn tensor_file_round_trip(seed in any::<u64>()) {
        let c = corpus(seed, 4);
        let srcs: Vec<&str> = c.sources.iter().map(String::as_str).collect();
        let (n, j) = tokenize::grid_dims(srcs.iter().copied()).unwrap();
        let vocab = tokenize::build_vocab(srcs, n).unwrap();
        let t = tokenize::tokenize_corpus(&c.manifest, &c.sources, &vocab, n, j).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        prop_assert_eq!(TensorSet::read_from(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn metric_identities(pairs in arb_pairs()) {
        let m = Metrics::from_pairs(pairs.iter().copied());
        prop_assert_eq!(m.total() as usize, pairs.len());
        for x in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        if m.precision > 0.0 && m.recall > 0.0 {
            prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
            prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
        }
    }

    #[test]
    fn collapse_commutes_with_scoring(rows in prop::collection::vec((arb_class(), arb_class()), 1..100)) {
        let mut truth = BTreeMap::new();
        let mut four: HashMap<QueryKey, QueryClass> = HashMap::new();
        let mut two: HashMap<QueryKey, bool> = HashMap::new();
        for (i, (t, p)) in rows.iter().enumerate() {
            let k = (format!("f{i}.c"), 3);
            truth.insert(k.clone(), *t);
            four.insert(k.clone(), *p);
            two.insert(k, eval::collapse(LineLabel::from(*p)).unwrap());
        }
        prop_assert_eq!(eval::score(&four, &truth, None).unwrap(), eval::score(&two, &truth, None).unwrap());
        let cm = eval::confusion(&four, &truth, None).unwrap();
        let total: u64 = cm.counts.iter().flatten().sum();
        prop_assert_eq!(total as usize, rows.len());
    }

    #[test]
    fn median_confusion_ignores_order(
        cells in prop::collection::vec(prop::collection::vec(0u64..1000, 16), 1..8),
        seed in any::<u64>(),
    ) {
        let ms: Vec<ConfusionMatrix> = cells
            .iter()
            .map(|c| ConfusionMatrix { counts: c.chunks(4).map(<[u64]>::to_vec).collect() })
            .collect();
        let mut shuffled = ms.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut seeds::rng(seed));
        prop_assert_eq!(eval::median_confusion(&ms).unwrap(), eval::median_confusion(&shuffled).unwrap());
    }

    #[test]
    fn sound_subset_structure(seed in any::<u64>()) {
        let c = corpus(seed, 30);
        let f = eval::sound_subset(&c.manifest);
        for e in &c.manifest.entries {
            let kept = &f.retained[&e.file_name];
            let by_line: BTreeMap<u32, SafetyLabel> = e.writes.iter().map(|w| (w.line, w.safety)).collect();
            let unsafe_kept: Vec<u32> = kept.iter().copied().filter(|l| by_line[l] == SafetyLabel::Unsafe).collect();
            match e.writes.iter().filter(|w| w.safety == SafetyLabel::Unsafe).map(|w| w.line).min() {
                Some(first) => {
                    prop_assert_eq!(unsafe_kept, vec![first]);
                    prop_assert!(kept.iter().all(|&l| l <= first));
                }
                None => prop_assert_eq!(kept.len(), e.writes.len()),
            }
        }
    }
}
