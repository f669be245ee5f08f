//! Seeded generation of single-function C programs with labeled buffer writes.
//!
//! A program is assembled from independent *segments*, each owning its own
//! entities: a conditional (COND) segment sets up an index, runs it through one
//! or two control-flow nodes and writes with it in main scope; a tautological
//! (TAUT) segment assigns an index once and writes with it anywhere after that.
//! Distractor segments add control flow that no write depends on. Segment
//! values are resampled until the oracle agrees with a target safety, which
//! keeps safe and unsafe writes roughly balanced.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ast::{
    renumber, AstError, CmpOp, Cond, ElseBranch, Entity, Operand, ProgramAst, Scope, Stmt, StmtKind, WriteKind,
    MAX_ENTITY_NAMES,
};
use crate::oracle::{self, LineLabel, OracleError, SafetyLabel, WriteVerdict, RAND_MAX_STANDIN};
use crate::seeds;

pub const GENERATOR_VERSION: &str = "sbabi-gen/1";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
/// Hex characters of the content hash used as file name.
pub const NAME_HASH_CHARS: usize = 10;
const MAX_DUPLICATE_RETRIES: u64 = 16;
const TARGET_RETRIES: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub file_count: usize,
    pub max_entities: u8,
    /// Inclusive range of every integer literal.
    pub int_range: (i64, i64),
    pub max_cf_nodes: usize,
    pub max_nesting: usize,
    /// Inclusive range of buffer writes per file.
    pub writes_per_file: (usize, usize),
    pub write_char_set: String,
    pub max_rand_entities: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            file_count: 0,
            max_entities: 10,
            int_range: (0, 99),
            max_cf_nodes: 3,
            max_nesting: 2,
            writes_per_file: (1, 3),
            write_char_set: ('0'..='9').chain('a'..='z').chain('A'..='Z').collect(),
            max_rand_entities: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("generated program is malformed: {0}")]
    Ast(#[from] AstError),
    #[error("generated program could not be labeled: {0}")]
    Label(#[from] OracleError),
    #[error("file {index}: content hash collided {MAX_DUPLICATE_RETRIES} times")]
    DuplicateHash { index: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.to_string()));
        let (lo, hi) = self.int_range;
        if lo > hi {
            return bad("int_range is empty");
        }
        if lo < 0 {
            return bad("int_range must be non-negative");
        }
        if hi < 1 {
            return bad("int_range must admit a positive array length");
        }
        if 2 * hi + 8 > RAND_MAX_STANDIN {
            return bad("int_range upper bound too large for the modeled rand() domain");
        }
        if !(2..=MAX_ENTITY_NAMES).contains(&self.max_entities) {
            return bad("max_entities must be in 2..=10");
        }
        if self.max_cf_nodes == 0 {
            return bad("max_cf_nodes must be at least 1");
        }
        if self.max_nesting == 0 {
            return bad("max_nesting must be at least 1");
        }
        let (wlo, whi) = self.writes_per_file;
        if wlo == 0 || wlo > whi {
            return bad("writes_per_file must be a non-empty range starting at 1 or more");
        }
        if self.write_char_set.is_empty() || !self.write_char_set.chars().all(|c| c.is_ascii_alphanumeric()) {
            return bad("write_char_set must be non-empty ASCII letters/digits");
        }
        if self.max_rand_entities > 3 {
            return bad("max_rand_entities must be at most 3");
        }
        Ok(())
    }
}

struct Segment {
    entities: Vec<(Entity, Option<i64>)>,
    setup: Vec<Stmt>,
    blocks: Vec<Stmt>,
    post: Vec<Stmt>,
    write: Option<Stmt>,
    rand_used: usize,
}

impl Segment {
    fn decls(&self) -> Vec<Stmt> {
        self.entities
            .iter()
            .map(|&(e, len)| match len {
                Some(len) => Stmt::new(StmtKind::DeclArray { array: e, len }),
                None => Stmt::new(StmtKind::DeclInt(e)),
            })
            .collect()
    }

    fn cf_count(&self) -> usize {
        fn count(stmts: &[Stmt]) -> usize {
            stmts.iter().map(|s| s.is_control_flow() as usize + s.bodies().iter().map(|b| count(b)).sum::<usize>()).sum()
        }
        count(&self.blocks)
    }

    /// Labels the segment's write in isolation.
    fn verdict(&self) -> Result<WriteVerdict, GenError> {
        let mut body = self.decls();
        body.extend(self.setup.iter().cloned());
        body.extend(self.blocks.iter().cloned());
        body.extend(self.post.iter().cloned());
        body.extend(self.write.iter().cloned());
        renumber(&mut body);
        let ast = ProgramAst::assemble(body)?;
        let v = oracle::classify_writes(&ast)?;
        Ok(v.into_iter().next().expect("segment has a write"))
    }
}

#[derive(Clone, Copy, Debug)]
enum CondTemplate {
    /// `i = a; while (i < B) i++;` or the equivalent `for`.
    LoopLiteral,
    /// `i = a; b = v|rand(); while (i < b) i++;`
    LoopVariable,
    /// `i = v|rand(); if (i op c) { i = a; } [else { i = b; }]`
    Branch,
    /// A branch on the bound feeding a loop on the index.
    BranchThenLoop,
    /// A loop on the index nested inside a branch on another entity.
    NestedLoop,
}

impl CondTemplate {
    fn cf_nodes(self) -> usize {
        match self {
            CondTemplate::LoopLiteral | CondTemplate::LoopVariable | CondTemplate::Branch => 1,
            CondTemplate::BranchThenLoop | CondTemplate::NestedLoop => 2,
        }
    }

    fn entities(self) -> usize {
        match self {
            CondTemplate::LoopLiteral | CondTemplate::Branch => 2,
            _ => 3,
        }
    }

    fn weight(self) -> u32 {
        match self {
            CondTemplate::LoopLiteral => 5,
            CondTemplate::LoopVariable => 4,
            CondTemplate::Branch => 5,
            CondTemplate::BranchThenLoop => 3,
            CondTemplate::NestedLoop => 3,
        }
    }
}

const TEMPLATES: [CondTemplate; 5] = [
    CondTemplate::LoopLiteral,
    CondTemplate::LoopVariable,
    CondTemplate::Branch,
    CondTemplate::BranchThenLoop,
    CondTemplate::NestedLoop,
];

struct Builder<'a> {
    rng: ChaCha8Rng,
    cfg: &'a GenConfig,
    pool: Vec<Entity>,
    rand_used: usize,
    cf_left: usize,
}

impl Builder<'_> {
    fn lit(&mut self) -> i64 {
        self.rng.gen_range(self.cfg.int_range.0..=self.cfg.int_range.1)
    }

    fn len(&mut self) -> i64 {
        self.rng.gen_range(self.cfg.int_range.0.max(1)..=self.cfg.int_range.1)
    }

    fn ch(&mut self) -> char {
        let chars: Vec<char> = self.cfg.write_char_set.chars().collect();
        *chars.choose(&mut self.rng).unwrap()
    }

    fn take(&mut self) -> Entity {
        self.pool.pop().expect("entity budget checked by caller")
    }

    fn loop_op(&mut self) -> CmpOp {
        if self.rng.gen_bool(0.75) {
            CmpOp::Lt
        } else {
            CmpOp::Le
        }
    }

    fn any_op(&mut self) -> CmpOp {
        *CmpOp::ALL.choose(&mut self.rng).unwrap()
    }

    /// `v = literal` or, budget permitting, `v = rand()`.
    fn init(&mut self, v: Entity, p_rand: f64, rands: &mut usize) -> Stmt {
        if self.rand_used + *rands < self.cfg.max_rand_entities && self.rng.gen_bool(p_rand) {
            *rands += 1;
            Stmt::new(StmtKind::AssignRand(v))
        } else {
            let value = self.lit();
            Stmt::new(StmtKind::AssignLit { var: v, value })
        }
    }

    fn branch(&mut self, cond: Cond, then_body: Vec<Stmt>, else_body: Option<Vec<Stmt>>) -> Stmt {
        Stmt::new(StmtKind::If {
            id: 0,
            cond,
            then_body,
            else_branch: else_body.map(|body| ElseBranch { line: 0, body }),
            end_line: 0,
        })
    }

    fn index_loop(&mut self, idx: Entity, bound: Operand, init: Option<i64>) -> Stmt {
        let cond = Cond::new(idx, self.loop_op(), bound);
        match init {
            Some(init) => Stmt::new(StmtKind::For { id: 0, var: idx, init, cond, body: vec![], end_line: 0 }),
            None => Stmt::new(StmtKind::While { id: 0, cond, body: vec![Stmt::new(StmtKind::Increment(idx))], end_line: 0 }),
        }
    }

    fn cond_attempt(&mut self, t: CondTemplate, arr: Entity, idx: Entity, aux: Option<Entity>) -> Segment {
        let len = self.len();
        let mut rands = 0;
        let mut setup = Vec::new();
        let mut blocks = Vec::new();
        let mut entities = vec![(arr, Some(len)), (idx, None)];
        match t {
            CondTemplate::LoopLiteral => {
                let a = self.lit();
                let b = self.lit();
                if self.rng.gen_bool(0.35) {
                    blocks.push(self.index_loop(idx, Operand::Lit(b), Some(a)));
                } else {
                    setup.push(Stmt::new(StmtKind::AssignLit { var: idx, value: a }));
                    blocks.push(self.index_loop(idx, Operand::Lit(b), None));
                }
            }
            CondTemplate::LoopVariable => {
                let bound = aux.unwrap();
                entities.push((bound, None));
                let a = self.lit();
                setup.push(Stmt::new(StmtKind::AssignLit { var: idx, value: a }));
                let bset = self.init(bound, 0.3, &mut rands);
                setup.push(bset);
                blocks.push(self.index_loop(idx, Operand::Var(bound), None));
            }
            CondTemplate::Branch => {
                let first = self.init(idx, 0.5, &mut rands);
                setup.push(first);
                let c = self.lit();
                let op = self.any_op();
                let a = self.lit();
                let then_body = vec![Stmt::new(StmtKind::AssignLit { var: idx, value: a })];
                let else_body = if self.rng.gen_bool(0.6) {
                    let b = self.lit();
                    Some(vec![Stmt::new(StmtKind::AssignLit { var: idx, value: b })])
                } else {
                    None
                };
                blocks.push(self.branch(Cond::new(idx, op, Operand::Lit(c)), then_body, else_body));
            }
            CondTemplate::BranchThenLoop => {
                let bound = aux.unwrap();
                entities.push((bound, None));
                let a = self.lit();
                let mut s = vec![
                    Stmt::new(StmtKind::AssignLit { var: idx, value: a }),
                    self.init(bound, 0.6, &mut rands),
                ];
                s.shuffle(&mut self.rng);
                setup.extend(s);
                let c = self.lit();
                let op = self.any_op();
                let v1 = self.lit();
                let then_body = vec![Stmt::new(StmtKind::AssignLit { var: bound, value: v1 })];
                let else_body = if self.rng.gen_bool(0.6) {
                    let v2 = self.lit();
                    Some(vec![Stmt::new(StmtKind::AssignLit { var: bound, value: v2 })])
                } else {
                    None
                };
                blocks.push(self.branch(Cond::new(bound, op, Operand::Lit(c)), then_body, else_body));
                blocks.push(self.index_loop(idx, Operand::Var(bound), None));
            }
            CondTemplate::NestedLoop => {
                let g = aux.unwrap();
                entities.push((g, None));
                let a = self.lit();
                let mut s = vec![Stmt::new(StmtKind::AssignLit { var: idx, value: a }), self.init(g, 0.5, &mut rands)];
                s.shuffle(&mut self.rng);
                setup.extend(s);
                let c = self.lit();
                let op = self.any_op();
                let b = self.lit();
                let inner = self.index_loop(idx, Operand::Lit(b), None);
                let else_body = if self.rng.gen_bool(0.5) {
                    let v = self.lit();
                    Some(vec![Stmt::new(StmtKind::AssignLit { var: idx, value: v })])
                } else {
                    None
                };
                blocks.push(self.branch(Cond::new(g, op, Operand::Lit(c)), vec![inner], else_body));
            }
        }
        let mut post = Vec::new();
        if self.rng.gen_bool(0.1) {
            post.push(Stmt::new(StmtKind::Increment(idx)));
        }
        let ch = self.ch();
        let write = Stmt::new(StmtKind::Write { id: 0, array: arr, index: idx, ch, kind: WriteKind::Cond });
        Segment { entities, setup, blocks, post, write: Some(write), rand_used: rands }
    }

    fn cond_segment(&mut self, want_unsafe: bool) -> Result<Segment, GenError> {
        let fits: Vec<CondTemplate> = TEMPLATES
            .iter()
            .copied()
            .filter(|t| t.cf_nodes() <= self.cf_left && t.entities() < self.pool.len())
            .filter(|t| !matches!(t, CondTemplate::NestedLoop) || self.cfg.max_nesting >= 2)
            .collect();
        let t = *fits.choose_weighted(&mut self.rng, |t| t.weight()).expect("caller checked budget");
        let arr = self.take();
        let idx = self.take();
        let aux = (t.entities() == 3).then(|| self.take());
        let mut seg = self.cond_attempt(t, arr, idx, aux);
        for _ in 0..TARGET_RETRIES {
            let v = seg.verdict()?;
            if (v.safety == SafetyLabel::Unsafe) == want_unsafe {
                break;
            }
            seg = self.cond_attempt(t, arr, idx, aux);
        }
        self.cf_left -= seg.cf_count();
        self.rand_used += seg.rand_used;
        Ok(seg)
    }

    fn taut_segment(&mut self, want_unsafe: bool) -> Segment {
        let (lo, hi) = self.cfg.int_range;
        let arr = self.take();
        let idx = self.take();
        let len = self.len();
        let value = if want_unsafe && len < hi {
            self.rng.gen_range(len + 1..=hi)
        } else {
            self.rng.gen_range(lo..=len)
        };
        let ch = self.ch();
        Segment {
            entities: vec![(arr, Some(len)), (idx, None)],
            setup: vec![Stmt::new(StmtKind::AssignLit { var: idx, value })],
            blocks: vec![],
            post: vec![],
            write: Some(Stmt::new(StmtKind::Write { id: 0, array: arr, index: idx, ch, kind: WriteKind::Taut })),
            rand_used: 0,
        }
    }

    /// Control flow over a single entity that no write depends on.
    fn distractor(&mut self) -> Segment {
        let x = self.take();
        let mut rands = 0;
        let mut setup = Vec::new();
        let block = match self.rng.gen_range(0..3) {
            0 => {
                let s = self.init(x, 0.6, &mut rands);
                setup.push(s);
                let c = self.lit();
                let op = self.any_op();
                let v = self.lit();
                let else_body = if self.rng.gen_bool(0.5) {
                    let w = self.lit();
                    Some(vec![Stmt::new(StmtKind::AssignLit { var: x, value: w })])
                } else {
                    None
                };
                self.branch(Cond::new(x, op, Operand::Lit(c)), vec![Stmt::new(StmtKind::AssignLit { var: x, value: v })], else_body)
            }
            1 => {
                let a = self.lit();
                setup.push(Stmt::new(StmtKind::AssignLit { var: x, value: a }));
                let b = self.lit();
                self.index_loop(x, Operand::Lit(b), None)
            }
            _ => {
                let a = self.lit();
                let b = self.lit();
                self.index_loop(x, Operand::Lit(b), Some(a))
            }
        };
        self.cf_left -= 1;
        self.rand_used += rands;
        Segment { entities: vec![(x, None)], setup, blocks: vec![block], post: vec![], write: None, rand_used: rands }
    }
}

/// Paths to every body in the tree where a write may be placed. A path is a
/// sequence of (statement index, body index) steps from the top level.
fn write_slots(stmts: &[Stmt], prefix: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
    for (i, s) in stmts.iter().enumerate() {
        for (k, b) in s.bodies().into_iter().enumerate() {
            prefix.push((i, k));
            out.push(prefix.clone());
            write_slots(b, prefix, out);
            prefix.pop();
        }
    }
}

fn body_at<'a>(stmts: &'a mut Vec<Stmt>, path: &[(usize, usize)]) -> &'a mut Vec<Stmt> {
    match path.split_first() {
        None => stmts,
        Some((&(i, k), rest)) => {
            let body = stmts[i].bodies_mut().into_iter().nth(k).expect("valid slot path");
            body_at(body, rest)
        }
    }
}

fn assemble(b: &mut Builder<'_>, segments: Vec<Segment>) -> Result<ProgramAst, GenError> {
    let rng = &mut b.rng;
    let mut decls: Vec<Stmt> = segments.iter().flat_map(|s| s.decls()).collect();
    decls.shuffle(rng);

    // Interleave setup statements, keeping each segment's internal order.
    let mut queues: Vec<std::collections::VecDeque<Stmt>> = segments.iter().map(|s| s.setup.iter().cloned().collect()).collect();
    let mut setup = Vec::new();
    loop {
        let live: Vec<usize> = (0..queues.len()).filter(|&i| !queues[i].is_empty()).collect();
        let Some(&pick) = live.choose(rng) else { break };
        setup.push(queues[pick].pop_front().unwrap());
    }

    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(rng);
    let mut tail: Vec<Stmt> = Vec::new();
    let mut deferred = Vec::new();
    let mut taut_writes = Vec::new();
    for &i in &order {
        let seg = &segments[i];
        tail.extend(seg.blocks.iter().cloned());
        tail.extend(seg.post.iter().cloned());
        if let Some(w) = &seg.write {
            match &w.kind {
                StmtKind::Write { kind: WriteKind::Cond, .. } => {
                    if seg.post.is_empty() && rng.gen_bool(0.4) {
                        deferred.push(w.clone());
                    } else {
                        tail.push(w.clone());
                    }
                }
                _ => taut_writes.push(w.clone()),
            }
        }
    }
    deferred.shuffle(rng);
    tail.extend(deferred);

    for w in taut_writes {
        let mut slots = Vec::new();
        write_slots(&tail, &mut Vec::new(), &mut slots);
        let body = if !slots.is_empty() && rng.gen_bool(0.35) {
            let path = slots.choose(rng).unwrap().clone();
            body_at(&mut tail, &path)
        } else {
            &mut tail
        };
        let at = rng.gen_range(0..=body.len());
        body.insert(at, w);
    }

    let mut body = decls;
    body.extend(setup);
    body.extend(tail);
    renumber(&mut body);
    Ok(ProgramAst::assemble(body)?)
}

/// Generates one program; a pure function of `(seed, cfg)`.
pub fn generate_program(seed: u64, cfg: &GenConfig) -> Result<ProgramAst, GenError> {
    cfg.validate()?;
    let mut b = Builder {
        rng: seeds::rng(seed),
        cfg,
        pool: Vec::new(),
        rand_used: 0,
        cf_left: 0,
    };
    let mut names: Vec<Entity> = (0..MAX_ENTITY_NAMES).map(Entity).collect();
    names.shuffle(&mut b.rng);
    names.truncate(cfg.max_entities as usize);
    b.pool = names;

    let cf_total = b.rng.gen_range(1..=cfg.max_cf_nodes);
    b.cf_left = cf_total;
    // one name stays in reserve for a distractor
    let max_writes = (b.pool.len() - 1) / 2;
    let (wlo, whi) = cfg.writes_per_file;
    let n_writes = b.rng.gen_range(wlo..=whi).min(max_writes).max(1);

    let mut segments = Vec::new();
    for _ in 0..n_writes {
        let want_unsafe = b.rng.gen_bool(0.5);
        let want_cond = b.rng.gen_bool(0.5);
        if want_cond && b.cf_left >= 1 && b.pool.len() > 2 {
            segments.push(b.cond_segment(want_unsafe)?);
        } else if b.pool.len() > 2 {
            segments.push(b.taut_segment(want_unsafe));
        }
    }
    if b.cf_left == cf_total || (b.cf_left > 0 && !b.pool.is_empty() && b.rng.gen_bool(0.3)) {
        segments.push(b.distractor());
    }
    let ast = assemble(&mut b, segments)?;
    // surface any structural or grammar problem now rather than at labeling time
    oracle::classify_writes(&ast)?;
    Ok(ast)
}

/// Renders the program as C source, one statement per line.
pub fn render_c(ast: &ProgramAst) -> String {
    fn go(stmts: &[Stmt], depth: usize, out: &mut String, line: &mut u32) {
        let pad = "    ".repeat(depth);
        for s in stmts {
            debug_assert_eq!(s.line, *line, "ast line numbers out of sync");
            *line += 1;
            let _ = match &s.kind {
                StmtKind::DeclInt(e) => writeln!(out, "{pad}int {e};"),
                StmtKind::DeclArray { array, len } => writeln!(out, "{pad}char {array}[{len}];"),
                StmtKind::AssignLit { var, value } => writeln!(out, "{pad}{var} = {value};"),
                StmtKind::AssignRand(var) => writeln!(out, "{pad}{var} = rand();"),
                StmtKind::Increment(var) => writeln!(out, "{pad}{var}++;"),
                StmtKind::Write { array, index, ch, .. } => writeln!(out, "{pad}{array}[{index}] = '{ch}';"),
                StmtKind::If { cond, then_body, else_branch, .. } => {
                    let _ = writeln!(out, "{pad}if ({cond}) {{");
                    go(then_body, depth + 1, out, line);
                    if let Some(e) = else_branch {
                        let _ = writeln!(out, "{pad}}} else {{");
                        *line += 1;
                        go(&e.body, depth + 1, out, line);
                    }
                    *line += 1;
                    writeln!(out, "{pad}}}")
                }
                StmtKind::While { cond, body, .. } => {
                    let _ = writeln!(out, "{pad}while ({cond}) {{");
                    go(body, depth + 1, out, line);
                    *line += 1;
                    writeln!(out, "{pad}}}")
                }
                StmtKind::For { var, init, cond, body, .. } => {
                    let _ = writeln!(out, "{pad}for ({var} = {init}; {cond}; {var}++) {{");
                    go(body, depth + 1, out, line);
                    *line += 1;
                    writeln!(out, "{pad}}}")
                }
            };
        }
    }
    let mut out = String::from("#include <stdlib.h>\nvoid main() {\n");
    let mut line = crate::ast::HEADER_LINES + 1;
    go(&ast.statements, 1, &mut out, &mut line);
    out.push_str("}\n");
    out
}

/// Source text that mentions every token a corpus generated under `cfg` can
/// contain. Not a program; it only feeds vocabulary construction so that any
/// two corpora from one configuration share a closed vocabulary.
pub fn alphabet_source(cfg: &GenConfig) -> String {
    let mut out = String::from("#include <stdlib.h>\nvoid main() {\n");
    let entities = (0..cfg.max_entities.min(MAX_ENTITY_NAMES)).map(Entity);
    for e in entities {
        let _ = writeln!(out, "int {e}; {e} = rand(); {e}++;");
    }
    let ops: Vec<&str> = CmpOp::ALL.iter().map(|o| o.symbol()).collect();
    let _ = writeln!(out, "if (entity_0 {} 0) {{ }} else {{ }}", ops.join(" 0 "));
    out.push_str("while (entity_0) { } for (;;) { }\n");
    let ints: Vec<String> = (cfg.int_range.0..=cfg.int_range.1).map(|i| i.to_string()).collect();
    let _ = writeln!(out, "char entity_0[{}];", ints.join(" "));
    let chars: Vec<String> = cfg.write_char_set.chars().map(|c| format!("'{c}'")).collect();
    let _ = writeln!(out, "entity_0[0] = {};", chars.join(" "));
    out.push_str("}\n");
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteRecord {
    pub line: u32,
    pub array: String,
    pub array_len: i64,
    pub index: String,
    pub structural_kind: WriteKind,
    pub safety: SafetyLabel,
    pub reachable: bool,
    pub scope: Scope,
}

impl WriteRecord {
    pub fn label(&self) -> LineLabel {
        LineLabel::for_write(self.structural_kind, self.safety)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file_name: String,
    /// Full SHA-256 of the source bytes, lowercase hex.
    pub content_hash: String,
    pub seed: u64,
    pub line_count: u32,
    pub labels: Vec<LineLabel>,
    pub writes: Vec<WriteRecord>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator_version: String,
    pub gen_config: GenConfig,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn empty(cfg: &GenConfig) -> Self {
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            generator_version: GENERATOR_VERSION.to_string(),
            gen_config: cfg.clone(),
            entries: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String, GenError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = fs::read_to_string(path).map_err(|source| GenError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_count(&self) -> usize {
        self.entries.iter().map(|e| e.writes.len()).sum()
    }

    pub fn filter_split(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
            ..self.clone()
        }
    }
}

/// A generated file held in memory.
#[derive(Clone, Debug)]
pub struct GeneratedFile {
    pub entry: ManifestEntry,
    pub source: String,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub sources: Vec<String>,
}

pub fn content_hash(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

fn entity_name(e: Entity) -> String {
    e.to_string()
}

/// Generates, renders and labels one file.
pub fn generate_file(seed: u64, cfg: &GenConfig) -> Result<GeneratedFile, GenError> {
    let ast = generate_program(seed, cfg)?;
    let verdicts = oracle::classify_writes(&ast)?;
    let labels = oracle::lines_from_verdicts(&ast, &verdicts);
    let source = render_c(&ast);
    let hash = content_hash(&source);
    let writes = ast
        .writes
        .iter()
        .zip(&verdicts)
        .map(|(w, v)| WriteRecord {
            line: w.line,
            array: entity_name(w.array),
            array_len: w.array_len,
            index: entity_name(w.index),
            structural_kind: v.kind,
            safety: v.safety,
            reachable: v.reachable,
            scope: w.scope,
        })
        .collect();
    Ok(GeneratedFile {
        entry: ManifestEntry {
            file_name: format!("{}.c", &hash[..NAME_HASH_CHARS]),
            content_hash: hash,
            seed,
            line_count: ast.line_count,
            labels,
            writes,
            split: Split::Train,
        },
        source,
    })
}

/// Generates `cfg.file_count` files in memory. File `i` is seeded from
/// `(cfg.seed, i)`; a name collision retries with a perturbed seed.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Corpus, GenError> {
    cfg.validate()?;
    let mut manifest = DatasetManifest::empty(cfg);
    let mut sources = Vec::with_capacity(cfg.file_count);
    let mut names = BTreeSet::new();
    for index in 0..cfg.file_count {
        let base = seeds::derive(cfg.seed, index as u64);
        let mut attempt = 0;
        let file = loop {
            let seed = if attempt == 0 { base } else { seeds::derive(base, attempt) };
            let f = generate_file(seed, cfg)?;
            if names.insert(f.entry.file_name.clone()) {
                break f;
            }
            attempt += 1;
            if attempt > MAX_DUPLICATE_RETRIES {
                return Err(GenError::DuplicateHash { index });
            }
        };
        manifest.entries.push(file.entry);
        sources.push(file.source);
    }
    Ok(Corpus { manifest, sources })
}

/// Writes `<out>/src/<hash>.c` for every file and `<out>/manifest.json`.
/// On failure every file written by this call is removed again.
pub fn write_corpus(corpus: &Corpus, out: &Path) -> Result<(), GenError> {
    let src_dir = out.join("src");
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GenError::Io { path, source }
    };
    fs::create_dir_all(&src_dir).map_err(io(&src_dir))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        for (entry, source) in corpus.manifest.entries.iter().zip(&corpus.sources) {
            let p = src_dir.join(&entry.file_name);
            fs::write(&p, source).map_err(io(&p))?;
            written.push(p);
        }
        let p = out.join("manifest.json");
        fs::write(&p, corpus.manifest.to_json()?).map_err(io(&p))?;
        written.push(p);
        Ok(())
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

pub fn generate_dataset(cfg: &GenConfig, out: &Path) -> Result<DatasetManifest, GenError> {
    let corpus = generate_corpus(cfg)?;
    write_corpus(&corpus, out)?;
    Ok(corpus.manifest)
}

/// Reads the sources of every manifest entry from `<root>/src`.
pub fn load_sources(manifest: &DatasetManifest, root: &Path) -> Result<Vec<String>, GenError> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let p = root.join("src").join(&e.file_name);
            fs::read_to_string(&p).map_err(|source| GenError::Io { path: p, source })
        })
        .collect()
}

/// Split sizes by the largest-remainder method.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3], GenError> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(GenError::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        sizes[i] = quotas[i].floor() as usize;
    }
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..3).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in by_remainder.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    Ok(sizes)
}

/// Partitions files into train/val/test. Files keep their manifest order
/// within a split.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: [f64; 3],
    seed: u64,
) -> Result<[DatasetManifest; 3], GenError> {
    let n = manifest.entries.len();
    let sizes = split_sizes(n, fractions)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeds::rng(seed));
    let mut assign = vec![Split::Train; n];
    for (k, &i) in perm.iter().enumerate() {
        assign[i] = if k < sizes[0] {
            Split::Train
        } else if k < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    let part = |split: Split| DatasetManifest {
        entries: manifest
            .entries
            .iter()
            .zip(&assign)
            .filter(|(_, &s)| s == split)
            .map(|(e, _)| ManifestEntry { split, ..e.clone() })
            .collect(),
        ..manifest.clone()
    };
    Ok([part(Split::Train), part(Split::Val), part(Split::Test)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn cfg() -> GenConfig {
        GenConfig::default()
    }

    #[test]
    fn same_seed_same_program() {
        let a = generate_program(42, &cfg()).unwrap();
        let b = generate_program(42, &cfg()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(render_c(&a), render_c(&b));
    }

    #[test]
    fn literals_stay_in_range_and_cf_nodes_are_bounded() {
        for seed in 0..300 {
            let ast = generate_program(seed, &cfg()).unwrap();
            assert!(ast.literals().iter().all(|v| (0..=99).contains(v)), "seed {seed}");
            assert!((1..=3).contains(&ast.cf_nodes.len()), "seed {seed}: {} cf nodes", ast.cf_nodes.len());
            assert!(ast.cf_nodes.iter().all(|c| c.depth <= 2));
            assert!((1..=3).contains(&ast.writes.len()));
            assert!(ast.entities.len() <= 10);
        }
    }

    #[test]
    fn narrow_int_range_is_respected() {
        let c = GenConfig { int_range: (0, 9), ..cfg() };
        for seed in 0..100 {
            let ast = generate_program(seed, &c).unwrap();
            assert!(ast.literals().iter().all(|v| (0..=9).contains(v)));
        }
    }

    #[test]
    fn single_cf_node_budget() {
        let c = GenConfig { max_cf_nodes: 1, ..cfg() };
        for seed in 0..100 {
            assert_eq!(generate_program(seed, &c).unwrap().cf_nodes.len(), 1);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            GenConfig { int_range: (5, 4), ..cfg() },
            GenConfig { max_entities: 11, ..cfg() },
            GenConfig { max_cf_nodes: 0, ..cfg() },
            GenConfig { writes_per_file: (0, 2), ..cfg() },
            GenConfig { write_char_set: String::new(), ..cfg() },
        ] {
            assert!(matches!(generate_program(1, &c), Err(GenError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn empty_body_renders_minimal_main() {
        let ast = ProgramAst::assemble(vec![]).unwrap();
        assert_eq!(render_c(&ast), "#include <stdlib.h>\nvoid main() {\n}\n");
        assert_eq!(ast.line_count, 3);
    }

    #[test]
    fn motivating_example_renders_writes_on_lines_20_and_22() {
        let text = render_c(&fixtures::motivating_example());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 23);
        assert_eq!(lines[4].trim(), "char entity_8[11];");
        assert_eq!(lines[10].trim(), "if (entity_3 < 50) {");
        assert_eq!(lines[15].trim(), "while (entity_4 < entity_3) {");
        assert_eq!(lines[19].trim(), "entity_8[entity_4] = 'k';");
        assert_eq!(lines[21].trim(), "entity_7[entity_9] = 'Q';");
        assert_eq!(text, render_c(&fixtures::motivating_example()));
    }

    #[test]
    fn rendered_line_count_matches_ast() {
        for seed in 0..50 {
            let ast = generate_program(seed, &cfg()).unwrap();
            assert_eq!(render_c(&ast).lines().count() as u32, ast.line_count);
        }
    }

    #[test]
    fn empty_dataset() {
        let c = GenConfig { file_count: 0, ..cfg() };
        let corpus = generate_corpus(&c).unwrap();
        assert!(corpus.manifest.entries.is_empty());
    }

    #[test]
    fn manifest_is_reproducible_and_consistent() {
        let c = GenConfig { file_count: 100, seed: 9, ..cfg() };
        let a = generate_corpus(&c).unwrap();
        let b = generate_corpus(&c).unwrap();
        assert_eq!(a.manifest.to_json().unwrap(), b.manifest.to_json().unwrap());
        for (e, src) in a.manifest.entries.iter().zip(&a.sources) {
            assert_eq!(e.file_name, format!("{}.c", &content_hash(src)[..10]));
            assert_eq!(e.labels.len() as u32, e.line_count);
            assert_eq!(src.lines().count() as u32, e.line_count);
            for w in &e.writes {
                assert!(e.labels[w.line as usize - 1].is_write());
            }
            assert_eq!(e.labels.iter().filter(|l| l.is_write()).count(), e.writes.len());
        }
    }

    #[test]
    fn write_corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let c = GenConfig { file_count: 5, seed: 3, ..cfg() };
        let m = generate_dataset(&c, dir.path()).unwrap();
        let back = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(m, back);
        let sources = load_sources(&back, dir.path()).unwrap();
        assert_eq!(sources.len(), 5);
    }

    #[test]
    fn split_rounding_uses_largest_remainder() {
        assert_eq!(split_sizes(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert_eq!(split_sizes(10, [1.0, 0.0, 0.0]).unwrap(), [10, 0, 0]);
        assert_eq!(split_sizes(7, [0.5, 0.25, 0.25]).unwrap(), [3, 2, 2]);
        assert!(split_sizes(10, [0.5, 0.1, 0.1]).is_err());
    }

    #[test]
    fn split_partitions_deterministically() {
        let c = GenConfig { file_count: 10, seed: 1, ..cfg() };
        let m = generate_corpus(&c).unwrap().manifest;
        let [tr, va, te] = split_dataset(&m, [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!((tr.entries.len(), va.entries.len(), te.entries.len()), (8, 1, 1));
        let again = split_dataset(&m, [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!(tr, again[0]);
        let mut names: Vec<_> = tr.entries.iter().chain(&va.entries).chain(&te.entries).map(|e| e.file_name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 10);
        let [all, _, _] = split_dataset(&m, [1.0, 0.0, 0.0], 5).unwrap();
        assert_eq!(all.entries.len(), 10);
    }

    #[test]
    fn compiles_as_c99_when_a_compiler_is_available() {
        let Ok(cc) = which_cc() else { return };
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..20 {
            let p = dir.path().join(format!("f{seed}.c"));
            fs::write(&p, render_c(&generate_program(seed, &cfg()).unwrap())).unwrap();
            let out = std::process::Command::new(&cc).args(["-std=c99", "-fsyntax-only", "-w"]).arg(&p).output().unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }

    fn which_cc() -> Result<String, ()> {
        for cc in ["cc", "gcc", "clang"] {
            if std::process::Command::new(cc).arg("--version").output().is_ok() {
                return Ok(cc.to_string());
            }
        }
        Err(())
    }
}
