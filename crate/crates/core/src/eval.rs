//! Metrics, label collapsing, sound subsets, confusion matrices and scoring
//! of external warning reports.
//!
//! Queries are identified by `(file name, 1-based line)`. UNSAFE is the
//! positive class.
//!
//! # CSV schemas
//!
//! * `metrics.csv`: `run,subset,queries,tp,fp,fn,tn,precision,recall,f1`
//! * `confusion.csv`: `matrix,true_label,COND_SAFE,COND_UNSAFE,TAUT_SAFE,TAUT_UNSAFE`
//!   (one row per true label; `matrix` names the run or `median`)
//! * `sweep.csv`: `size,run,f1_full,f1_sound,error`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::codegen::DatasetManifest;
use crate::memnet::{self, MemNet, Prediction};
use crate::oracle::{LineLabel, SafetyLabel};
use crate::tokenize::{self, QueryClass, TensorSet, Vocab};

pub type QueryKey = (String, u32);

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0} is not a buffer-write label")]
    NotAWrite(LineLabel),
    #[error("no prediction for retained query {0}:{1}")]
    MissingPrediction(String, u32),
    #[error("retained query {0}:{1} is not a buffer write")]
    NotAQuery(String, u32),
    #[error("report line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("empty list of confusion matrices")]
    Empty,
    #[error("confusion matrices differ in shape")]
    Shape,
    #[error(transparent)]
    MemNet(#[from] memnet::MemNetError),
    #[error(transparent)]
    Tokenize(#[from] tokenize::TokenizeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Two-class view of a buffer-write label: `true` for UNSAFE.
pub fn collapse(label: LineLabel) -> Result<bool, EvalError> {
    QueryClass::from_label(label).map(QueryClass::is_unsafe).ok_or(EvalError::NotAWrite(label))
}

/// Anything that can be scored as a positive/negative prediction.
pub trait Collapse {
    fn is_positive(&self) -> bool;
}

impl Collapse for bool {
    fn is_positive(&self) -> bool {
        *self
    }
}

impl Collapse for QueryClass {
    fn is_positive(&self) -> bool {
        self.is_unsafe()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Factor-2 harmonic mean; 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Metrics {
    /// Precision with no positive predictions is 1 if there were no positives
    /// to find, else 0; recall with no positives is 1 if nothing was flagged,
    /// else 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Metrics {
        let precision = match tp + fp {
            0 => (fn_ == 0) as u8 as f64,
            n => tp as f64 / n as f64,
        };
        let recall = match tp + fn_ {
            0 => (fp == 0) as u8 as f64,
            n => tp as f64 / n as f64,
        };
        Metrics { tp, fp, fn_, tn, precision, recall, f1: f1_score(precision, recall) }
    }

    /// From `(truth, predicted)` positive flags.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Metrics {
        let mut c = [0u64; 4];
        for (t, p) in pairs {
            c[match (t, p) {
                (true, true) => 0,
                (false, true) => 1,
                (true, false) => 2,
                (false, false) => 3,
            }] += 1;
        }
        Metrics::from_counts(c[0], c[1], c[2], c[3])
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Ground-truth class of every buffer write in a manifest.
pub fn truth_of(manifest: &DatasetManifest) -> BTreeMap<QueryKey, QueryClass> {
    let mut out = BTreeMap::new();
    for e in &manifest.entries {
        for w in &e.writes {
            if let Some(c) = QueryClass::from_label(w.label()) {
                out.insert((e.file_name.clone(), w.line), c);
            }
        }
    }
    out
}

pub fn prediction_map(preds: &[Prediction]) -> HashMap<QueryKey, QueryClass> {
    preds.iter().map(|p| ((p.file.clone(), p.line), p.predicted)).collect()
}

pub fn truth_of_predictions(preds: &[Prediction]) -> BTreeMap<QueryKey, QueryClass> {
    preds.iter().map(|p| ((p.file.clone(), p.line), p.truth)).collect()
}

/// Per-file buffer-write lines to score.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub retained: BTreeMap<String, BTreeSet<u32>>,
}

impl QueryFilter {
    pub fn all(manifest: &DatasetManifest) -> QueryFilter {
        let mut f = QueryFilter::default();
        for e in &manifest.entries {
            f.retained.insert(e.file_name.clone(), e.writes.iter().map(|w| w.line).collect());
        }
        f
    }

    pub fn contains(&self, key: &QueryKey) -> bool {
        self.retained.get(&key.0).is_some_and(|s| s.contains(&key.1))
    }

    pub fn len(&self) -> usize {
        self.retained.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Keeps, per file, the unsafe write with the smallest line and all safe
/// writes above it. Files without unsafe writes keep every write.
pub fn sound_subset(manifest: &DatasetManifest) -> QueryFilter {
    let mut f = QueryFilter::default();
    for e in &manifest.entries {
        let first_unsafe = e.writes.iter().filter(|w| w.safety == SafetyLabel::Unsafe).map(|w| w.line).min();
        let keep = e
            .writes
            .iter()
            .filter(|w| match first_unsafe {
                Some(u) => w.line == u || (w.safety == SafetyLabel::Safe && w.line < u),
                None => true,
            })
            .map(|w| w.line)
            .collect();
        f.retained.insert(e.file_name.clone(), keep);
    }
    f
}

/// Fraction of all buffer writes the filter keeps.
pub fn retention(filter: &QueryFilter, manifest: &DatasetManifest) -> f64 {
    let total = manifest.write_count();
    if total == 0 {
        1.0
    } else {
        filter.len() as f64 / total as f64
    }
}

fn retained_keys<'a, T>(
    truth: &'a BTreeMap<QueryKey, T>,
    filter: Option<&'a QueryFilter>,
) -> Result<Vec<(&'a QueryKey, &'a T)>, EvalError> {
    if let Some(f) = filter {
        for (file, lines) in &f.retained {
            for &l in lines {
                if !truth.contains_key(&(file.clone(), l)) {
                    return Err(EvalError::NotAQuery(file.clone(), l));
                }
            }
        }
    }
    Ok(truth.iter().filter(|(k, _)| filter.is_none_or(|f| f.contains(k))).collect())
}

/// Two-class metrics over the retained queries (all queries when `filter` is
/// `None`).
pub fn score<P: Collapse>(
    predictions: &HashMap<QueryKey, P>,
    truth: &BTreeMap<QueryKey, QueryClass>,
    filter: Option<&QueryFilter>,
) -> Result<Metrics, EvalError> {
    let keys = retained_keys(truth, filter)?;
    let mut pairs = Vec::with_capacity(keys.len());
    for (k, t) in keys {
        let p = predictions.get(k).ok_or_else(|| EvalError::MissingPrediction(k.0.clone(), k.1))?;
        pairs.push((t.is_unsafe(), p.is_positive()));
    }
    Ok(Metrics::from_pairs(pairs))
}

/// Square matrix of counts, rows = true class, columns = predicted class,
/// in [`QueryClass::ALL`] order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion(
    predictions: &HashMap<QueryKey, QueryClass>,
    truth: &BTreeMap<QueryKey, QueryClass>,
    filter: Option<&QueryFilter>,
) -> Result<ConfusionMatrix, EvalError> {
    let n = QueryClass::ALL.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (k, t) in retained_keys(truth, filter)? {
        let p = predictions.get(k).ok_or_else(|| EvalError::MissingPrediction(k.0.clone(), k.1))?;
        counts[t.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.counts.iter().map(|r| r.iter().map(|&c| c as f64).collect()).collect()
    }
}

/// Cell-wise median; even counts average the two middle values.
pub fn median_confusion(matrices: &[ConfusionMatrix]) -> Result<Vec<Vec<f64>>, EvalError> {
    let first = matrices.first().ok_or(EvalError::Empty)?;
    let (rows, cols) = (first.counts.len(), first.counts.first().map_or(0, Vec::len));
    if matrices.iter().any(|m| m.counts.len() != rows || m.counts.iter().any(|r| r.len() != cols)) {
        return Err(EvalError::Shape);
    }
    Ok((0..rows)
        .map(|i| (0..cols).map(|j| median(&matrices.iter().map(|m| m.counts[i][j] as f64).collect::<Vec<_>>())).collect())
        .collect())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn is_cond(i: usize) -> bool {
    QueryClass::from_index(i).is_some_and(QueryClass::is_cond)
}

/// Share of queries whose true and predicted classes fall in different
/// COND/TAUT blocks.
pub fn cross_block_mass(cells: &[Vec<f64>]) -> f64 {
    let (mut cross, mut total) = (0.0, 0.0);
    for (i, row) in cells.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            total += c;
            if is_cond(i) != is_cond(j) {
                cross += c;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        cross / total
    }
}

/// Safe/unsafe accuracy among queries predicted inside their true block.
pub fn within_block_accuracy(cells: &[Vec<f64>]) -> f64 {
    let (mut right, mut total) = (0.0, 0.0);
    for (i, row) in cells.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if is_cond(i) == is_cond(j) {
                total += c;
                if i == j {
                    right += c;
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        right / total
    }
}

#[derive(Deserialize)]
struct WarningLine {
    #[serde(default)]
    tool: Option<String>,
    file: String,
    line: u32,
}

/// Two-class predictions derived from a warning report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarningScore {
    pub tool: Option<String>,
    pub predictions: HashMap<QueryKey, bool>,
    /// Warnings on lines that are not buffer writes; not scored.
    pub off_target: usize,
    /// Report file names absent from the manifest.
    pub unresolved: BTreeSet<String>,
}

/// Reads a JSON-lines report (`{"tool": ..., "file": ..., "line": ...}` per
/// line). Every buffer write of the manifest gets a prediction: positive iff
/// some warning names its line.
pub fn ingest_warnings(report: &str, manifest: &DatasetManifest) -> Result<WarningScore, EvalError> {
    let truth = truth_of(manifest);
    let files: BTreeSet<&str> = manifest.entries.iter().map(|e| e.file_name.as_str()).collect();
    let mut out = WarningScore { predictions: truth.keys().map(|k| (k.clone(), false)).collect(), ..Default::default() };
    for (i, text) in report.lines().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        let w: WarningLine =
            serde_json::from_str(text).map_err(|e| EvalError::Parse { line: i + 1, reason: e.to_string() })?;
        if w.line == 0 {
            return Err(EvalError::Parse { line: i + 1, reason: "line numbers start at 1".into() });
        }
        if out.tool.is_none() {
            out.tool = w.tool.clone();
        }
        if !files.contains(w.file.as_str()) {
            out.unresolved.insert(w.file);
            continue;
        }
        match out.predictions.get_mut(&(w.file, w.line)) {
            Some(p) => *p = true,
            None => out.off_target += 1,
        }
    }
    Ok(out)
}

/// Median confusion cells before and after integer remapping.
pub type RemapConfusion = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Median confusion matrices of `nets` on `test` before and after integer
/// remapping.
pub fn remap_experiment(
    nets: &[MemNet],
    test: &TensorSet,
    vocab: &Vocab,
) -> Result<RemapConfusion, EvalError> {
    let remapped = tokenize::remap_integers(test, vocab)?;
    let mut before = Vec::with_capacity(nets.len());
    let mut after = Vec::with_capacity(nets.len());
    for net in nets {
        for (data, out) in [(test, &mut before), (&remapped, &mut after)] {
            let preds = memnet::predict(net, data)?;
            out.push(confusion(&prediction_map(&preds), &truth_of_predictions(&preds), None)?);
        }
    }
    Ok((median_confusion(&before)?, median_confusion(&after)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub run: usize,
    pub f1_full: Option<f64>,
    pub f1_sound: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub size: usize,
    pub runs: usize,
    pub failed: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Min/median/max full-test F1 per training size, over successful runs.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut by_size: BTreeMap<usize, Vec<&SweepRow>> = BTreeMap::new();
    rows.iter().for_each(|r| by_size.entry(r.size).or_default().push(r));
    by_size
        .into_iter()
        .map(|(size, rs)| {
            let f1s: Vec<f64> = rs.iter().filter_map(|r| r.f1_full).collect();
            SweepSummary {
                size,
                runs: rs.len(),
                failed: rs.len() - f1s.len(),
                min: f1s.iter().copied().fold(f64::NAN, f64::min),
                median: median(&f1s),
                max: f1s.iter().copied().fold(f64::NAN, f64::max),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    run: &'a str,
    subset: &'a str,
    queries: u64,
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    tn: u64,
    precision: f64,
    recall: f64,
    f1: f64,
}

/// `rows`: `(run, subset, metrics)`.
pub fn write_metrics_csv(w: impl Write, rows: &[(String, String, Metrics)]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    for (run, subset, m) in rows {
        out.serialize(MetricsRow {
            run,
            subset,
            queries: m.total(),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// `matrices`: `(name, cells)`.
pub fn write_confusion_csv(w: impl Write, matrices: &[(String, Vec<Vec<f64>>)]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["matrix".to_string(), "true_label".to_string()];
    header.extend(QueryClass::ALL.iter().map(|c| c.to_string()));
    out.write_record(&header)?;
    for (name, cells) in matrices {
        for (i, row) in cells.iter().enumerate() {
            let mut rec = vec![name.clone(), QueryClass::ALL[i].to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv(w: impl Write, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{ManifestEntry, Split, WriteRecord};
    use crate::ast::{Scope, WriteKind};

    fn entry(name: &str, writes: &[(u32, bool)]) -> ManifestEntry {
        ManifestEntry {
            file_name: name.into(),
            content_hash: String::new(),
            seed: 0,
            line_count: 30,
            labels: vec![],
            writes: writes
                .iter()
                .map(|&(line, unsafe_)| WriteRecord {
                    line,
                    array: "entity_1".into(),
                    array_len: 10,
                    index: "entity_2".into(),
                    structural_kind: WriteKind::Taut,
                    safety: if unsafe_ { SafetyLabel::Unsafe } else { SafetyLabel::Safe },
                    reachable: true,
                    scope: Scope::Main,
                })
                .collect(),
            split: Split::Test,
        }
    }

    fn manifest(entries: Vec<ManifestEntry>) -> DatasetManifest {
        let mut m = DatasetManifest::empty(&crate::codegen::GenConfig::default());
        m.entries = entries;
        m
    }

    #[test]
    fn collapse_maps_safety() {
        assert!(collapse(LineLabel::BufwriteCondUnsafe).unwrap());
        assert!(!collapse(LineLabel::BufwriteTautSafe).unwrap());
        assert!(matches!(collapse(LineLabel::Body), Err(EvalError::NotAWrite(_))));
    }

    #[test]
    fn f1_matches_reported_row() {
        assert!((f1_score(0.954, 0.882) - 0.917).abs() < 5e-4);
    }

    #[test]
    fn degenerate_conventions() {
        let m = Metrics::from_counts(0, 0, 5, 5);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = Metrics::from_counts(0, 0, 0, 5);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = Metrics::from_counts(0, 3, 0, 5);
        assert_eq!((m.precision, m.recall), (0.0, 0.0));
        let m = Metrics::from_counts(5, 5, 0, 0);
        assert_eq!((m.recall, m.precision), (1.0, 0.5));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sound_subset_rule() {
        let m = manifest(vec![
            entry("a.c", &[(5, false), (8, true), (12, false), (14, true)]),
            entry("b.c", &[(4, false), (6, false)]),
        ]);
        let f = sound_subset(&m);
        assert_eq!(f.retained["a.c"], BTreeSet::from([5, 8]));
        assert_eq!(f.retained["b.c"], BTreeSet::from([4, 6]));
        assert!((retention(&f, &m) - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn scoring_needs_every_retained_prediction() {
        let m = manifest(vec![entry("a.c", &[(5, false), (8, true)])]);
        let truth = truth_of(&m);
        let mut p: HashMap<QueryKey, bool> = HashMap::new();
        p.insert(("a.c".into(), 8), true);
        assert!(matches!(score(&p, &truth, None), Err(EvalError::MissingPrediction(_, 5))));
        let only8 = QueryFilter { retained: BTreeMap::from([("a.c".to_string(), BTreeSet::from([8]))]) };
        assert_eq!(score(&p, &truth, Some(&only8)).unwrap().f1, 1.0);
    }

    #[test]
    fn warnings_report() {
        let m = manifest(vec![entry("a.c", &[(5, false), (8, true)]), entry("b.c", &[(3, true)])]);
        let truth = truth_of(&m);
        let report = "{\"tool\":\"t\",\"file\":\"a.c\",\"line\":8}\n{\"tool\":\"t\",\"file\":\"b.c\",\"line\":3}\n\
                      {\"tool\":\"t\",\"file\":\"a.c\",\"line\":2}\n{\"tool\":\"t\",\"file\":\"z.c\",\"line\":1}\n";
        let w = ingest_warnings(report, &m).unwrap();
        assert_eq!(w.off_target, 1);
        assert_eq!(w.unresolved, BTreeSet::from(["z.c".to_string()]));
        assert_eq!(score(&w.predictions, &truth, None).unwrap().f1, 1.0);
        let empty = ingest_warnings("", &m).unwrap();
        let s = score(&empty.predictions, &truth, None).unwrap();
        assert_eq!((s.recall, s.precision), (0.0, 0.0));
        assert!(matches!(ingest_warnings("{\"file\": 3}", &m), Err(EvalError::Parse { line: 1, .. })));
    }

    #[test]
    fn median_of_matrices() {
        let a = ConfusionMatrix { counts: vec![vec![1, 0], vec![0, 4]] };
        let b = ConfusionMatrix { counts: vec![vec![3, 0], vec![1, 4]] };
        assert_eq!(median_confusion(std::slice::from_ref(&a)).unwrap(), a.to_f64());
        assert_eq!(median_confusion(&[a, b]).unwrap(), vec![vec![2.0, 0.0], vec![0.5, 4.0]]);
        assert!(matches!(median_confusion(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn block_statistics() {
        let cells = vec![
            vec![40.0, 10.0, 0.0, 0.0],
            vec![10.0, 40.0, 0.0, 0.0],
            vec![0.0, 0.0, 50.0, 0.0],
            vec![0.0, 0.0, 0.0, 48.0],
        ];
        assert_eq!(cross_block_mass(&cells), 0.0);
        assert!((within_block_accuracy(&cells) - 178.0 / 198.0).abs() < 1e-12);
        let mut c2 = cells.clone();
        c2[3][0] = 2.0;
        assert!((cross_block_mass(&c2) - 2.0 / 200.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_summary_counts_failures() {
        let rows = vec![
            SweepRow { size: 10, run: 0, f1_full: Some(0.5), f1_sound: None, error: None },
            SweepRow { size: 10, run: 1, f1_full: Some(0.7), f1_sound: None, error: None },
            SweepRow { size: 10, run: 2, f1_full: None, f1_sound: None, error: Some("diverged".into()) },
        ];
        let s = summarize_sweep(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].failed, s[0].min, s[0].median, s[0].max), (1, 0.5, 0.6, 0.7));
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("size,run,f1_full,f1_sound,error\n"));
    }
}
