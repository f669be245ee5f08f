//! Ground-truth labeling of buffer writes.
//!
//! Labels follow the non-crash semantics: execution continues after an
//! unsafe write, so every write is judged independently of earlier ones. A
//! write is unsafe when its index exceeds the array length; an index equal to
//! the length counts as safe.
//!
//! `rand()` values range over `0..=RAND_MAX_STANDIN`. Conditional writes are
//! decided by running the concrete interpreter on one representative per
//! threshold interval of every rand-valued entity ([`rand_partition`]); the
//! grammar guarantees that behavior is constant inside an interval. The
//! exhaustive [`brute_force_oracle`] re-derives the same verdicts by plain
//! enumeration and is the cross-check used in tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::ast::{CmpOp, Entity, Operand, ProgramAst, Scope, Stmt, StmtKind, WriteKind, HEADER_LINES};

/// Upper bound of modeled `rand()` results.
pub const RAND_MAX_STANDIN: i64 = 255;

/// Interpreter step budget; generated programs need a few thousand at most.
const STEP_LIMIT: u64 = 1_000_000;

/// Default cap on joint assignments enumerated by [`brute_force_oracle`].
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SafetyLabel {
    Safe,
    Unsafe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LineLabel {
    BufwriteCondSafe,
    BufwriteCondUnsafe,
    BufwriteTautSafe,
    BufwriteTautUnsafe,
    Body,
    Other,
}

impl LineLabel {
    pub const ALL: [LineLabel; 6] = [
        LineLabel::BufwriteCondSafe,
        LineLabel::BufwriteCondUnsafe,
        LineLabel::BufwriteTautSafe,
        LineLabel::BufwriteTautUnsafe,
        LineLabel::Body,
        LineLabel::Other,
    ];

    pub fn for_write(kind: WriteKind, safety: SafetyLabel) -> LineLabel {
        match (kind, safety) {
            (WriteKind::Cond, SafetyLabel::Safe) => LineLabel::BufwriteCondSafe,
            (WriteKind::Cond, SafetyLabel::Unsafe) => LineLabel::BufwriteCondUnsafe,
            (WriteKind::Taut, SafetyLabel::Safe) => LineLabel::BufwriteTautSafe,
            (WriteKind::Taut, SafetyLabel::Unsafe) => LineLabel::BufwriteTautUnsafe,
        }
    }

    pub fn is_write(self) -> bool {
        !matches!(self, LineLabel::Body | LineLabel::Other)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LineLabel::BufwriteCondSafe => "BUFWRITE_COND_SAFE",
            LineLabel::BufwriteCondUnsafe => "BUFWRITE_COND_UNSAFE",
            LineLabel::BufwriteTautSafe => "BUFWRITE_TAUT_SAFE",
            LineLabel::BufwriteTautUnsafe => "BUFWRITE_TAUT_UNSAFE",
            LineLabel::Body => "BODY",
            LineLabel::Other => "OTHER",
        }
    }
}

impl fmt::Display for LineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("line {line}: loop did not terminate within {STEP_LIMIT} steps")]
    NonTermination { line: u32 },
    #[error("line {line}: {entity} read before assignment")]
    Uninitialized { line: u32, entity: Entity },
    #[error("no rand value supplied for {0}")]
    MissingRandValue(Entity),
    #[error("line {line}: grammar violation: {reason}")]
    Grammar { line: u32, reason: String },
    #[error("write at line {line} is tagged {tagged:?} but its structure says {actual}")]
    KindMismatch { line: u32, tagged: WriteKind, actual: String },
    #[error("write at line {line} is never reached by any execution")]
    UnreachableCond { line: u32 },
    #[error("enumeration of {needed} assignments exceeds the budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u64 },
}

/// What one execution observed at one buffer write.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteObservation {
    pub hits: u32,
    pub first_index: Option<i64>,
    pub max_index: Option<i64>,
    /// Some hit had `index > len`.
    pub unsafe_hit: bool,
    /// Index value in the store when the enclosing body was skipped.
    pub shadow_index: Option<i64>,
}

impl WriteObservation {
    pub fn reached(&self) -> bool {
        self.hits > 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub writes: Vec<WriteObservation>,
    /// Final value of every assigned integer entity.
    pub store: BTreeMap<Entity, i64>,
    pub steps: u64,
}

struct Machine<'a> {
    ast: &'a ProgramAst,
    rand: &'a BTreeMap<Entity, i64>,
    vals: [Option<i64>; 256],
    obs: Vec<WriteObservation>,
    steps: u64,
}

impl Machine<'_> {
    fn read(&self, e: Entity, line: u32) -> Result<i64, OracleError> {
        self.vals[e.0 as usize].ok_or(OracleError::Uninitialized { line, entity: e })
    }

    fn operand(&self, o: Operand, line: u32) -> Result<i64, OracleError> {
        match o {
            Operand::Lit(v) => Ok(v),
            Operand::Var(e) => self.read(e, line),
        }
    }

    fn test(&self, c: &crate::ast::Cond, line: u32) -> Result<bool, OracleError> {
        Ok(c.op.eval(self.read(c.lhs, line)?, self.operand(c.rhs, line)?))
    }

    fn tick(&mut self, line: u32) -> Result<(), OracleError> {
        self.steps += 1;
        if self.steps > STEP_LIMIT {
            return Err(OracleError::NonTermination { line });
        }
        Ok(())
    }

    fn run(&mut self, stmts: &[Stmt]) -> Result<(), OracleError> {
        for s in stmts {
            self.tick(s.line)?;
            match &s.kind {
                StmtKind::DeclInt(_) | StmtKind::DeclArray { .. } => {}
                StmtKind::AssignLit { var, value } => self.vals[var.0 as usize] = Some(*value),
                StmtKind::AssignRand(var) => {
                    let v = *self.rand.get(var).ok_or(OracleError::MissingRandValue(*var))?;
                    self.vals[var.0 as usize] = Some(v);
                }
                StmtKind::Increment(var) => {
                    let v = self.read(*var, s.line)?;
                    self.vals[var.0 as usize] = Some(v + 1);
                }
                StmtKind::Write { id, array, index, .. } => {
                    let idx = self.read(*index, s.line)?;
                    let len = self.ast.array_len(*array).expect("assembled ast has declared arrays");
                    let o = &mut self.obs[*id];
                    o.hits += 1;
                    o.first_index.get_or_insert(idx);
                    o.max_index = Some(o.max_index.map_or(idx, |m| m.max(idx)));
                    o.unsafe_hit |= idx > len;
                }
                StmtKind::If { cond, then_body, else_branch, .. } => {
                    if self.test(cond, s.line)? {
                        self.run(then_body)?;
                        if let Some(e) = else_branch {
                            self.shadow(&e.body);
                        }
                    } else {
                        self.shadow(then_body);
                        if let Some(e) = else_branch {
                            self.run(&e.body)?;
                        }
                    }
                }
                StmtKind::While { cond, body, .. } => {
                    if !self.test(cond, s.line)? {
                        self.shadow(body);
                    }
                    while self.test(cond, s.line)? {
                        self.tick(s.line)?;
                        self.run(body)?;
                    }
                }
                StmtKind::For { var, init, cond, body, .. } => {
                    self.vals[var.0 as usize] = Some(*init);
                    if !self.test(cond, s.line)? {
                        self.shadow(body);
                    }
                    while self.test(cond, s.line)? {
                        self.tick(s.line)?;
                        self.run(body)?;
                        let v = self.read(*var, s.line)?;
                        self.vals[var.0 as usize] = Some(v + 1);
                    }
                }
            }
        }
        Ok(())
    }

    /// Records the current index value of writes inside a body that is not executed.
    fn shadow(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            if let StmtKind::Write { id, index, .. } = &s.kind {
                if self.obs[*id].shadow_index.is_none() {
                    self.obs[*id].shadow_index = self.vals[index.0 as usize];
                }
            }
            for b in s.bodies() {
                self.shadow(b);
            }
        }
    }
}

/// Concrete execution under non-crash semantics.
pub fn interpret(ast: &ProgramAst, rand_values: &BTreeMap<Entity, i64>) -> Result<ExecutionTrace, OracleError> {
    let mut m = Machine {
        ast,
        rand: rand_values,
        vals: [None; 256],
        obs: vec![WriteObservation::default(); ast.writes.len()],
        steps: 0,
    };
    m.run(&ast.statements)?;
    let store = (0..=255u8)
        .filter_map(|i| m.vals[i as usize].map(|v| (Entity(i), v)))
        .collect();
    Ok(ExecutionTrace { writes: m.obs, store, steps: m.steps })
}

/// Threshold intervals of one rand-valued entity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPartition {
    pub entity: Entity,
    /// Points at which program behavior may change, sorted.
    pub thresholds: Vec<i64>,
    /// Maximal runs of values between thresholds, plus each threshold as a singleton.
    pub intervals: Vec<(i64, i64)>,
    /// Endpoints of every interval; includes 0, the domain max and each threshold ±1.
    pub representatives: Vec<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandPartition {
    pub entities: Vec<EntityPartition>,
}

impl RandPartition {
    /// Every joint assignment of representatives (one empty assignment when
    /// the program has no rand entities).
    pub fn assignments(&self) -> Vec<BTreeMap<Entity, i64>> {
        let mut out = vec![BTreeMap::new()];
        for p in &self.entities {
            out = out
                .into_iter()
                .flat_map(|a| {
                    p.representatives.iter().map(move |&v| {
                        let mut a = a.clone();
                        a.insert(p.entity, v);
                        a
                    })
                })
                .collect();
        }
        out
    }
}

fn intervals_for(thresholds: &BTreeSet<i64>, max: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let mut lo = 0;
    for &t in thresholds.iter().filter(|&&t| (0..=max).contains(&t)) {
        if lo < t {
            out.push((lo, t - 1));
        }
        out.push((t, t));
        lo = t + 1;
    }
    if lo <= max {
        out.push((lo, max));
    }
    out
}

/// Checks the grammar restrictions that make threshold partitioning exact and
/// returns, per entity, the set of rand sources its value can depend on.
fn rand_dependence(ast: &ProgramAst) -> Result<BTreeMap<Entity, BTreeSet<Entity>>, OracleError> {
    type Taint = BTreeMap<Entity, BTreeSet<Entity>>;

    fn sources(t: &Taint, o: Operand) -> BTreeSet<Entity> {
        match o {
            Operand::Var(e) => t.get(&e).cloned().unwrap_or_default(),
            Operand::Lit(_) => BTreeSet::new(),
        }
    }

    fn add(t: &mut Taint, e: Entity, s: &BTreeSet<Entity>, changed: &mut bool) {
        let entry = t.entry(e).or_default();
        for x in s {
            *changed |= entry.insert(*x);
        }
    }

    fn pass(stmts: &[Stmt], ctx: &BTreeSet<Entity>, in_loop: bool, t: &mut Taint, changed: &mut bool) -> Result<(), OracleError> {
        for s in stmts {
            match &s.kind {
                StmtKind::AssignLit { var, .. } | StmtKind::Increment(var) => add(t, *var, ctx, changed),
                StmtKind::AssignRand(var) => {
                    if in_loop {
                        return Err(OracleError::Grammar {
                            line: s.line,
                            reason: format!("{var} = rand() inside a loop body"),
                        });
                    }
                    let mut src = ctx.clone();
                    src.insert(*var);
                    add(t, *var, &src, changed);
                }
                StmtKind::If { cond, .. } => {
                    let mut inner = ctx.clone();
                    inner.extend(sources(t, Operand::Var(cond.lhs)));
                    inner.extend(sources(t, cond.rhs));
                    for b in s.bodies() {
                        pass(b, &inner, in_loop, t, changed)?;
                    }
                }
                StmtKind::While { cond, body, .. } | StmtKind::For { cond, body, .. } => {
                    if !matches!(cond.op, CmpOp::Lt | CmpOp::Le) {
                        return Err(OracleError::Grammar {
                            line: s.line,
                            reason: format!("loop guard `{cond}` must use < or <="),
                        });
                    }
                    let mut inner = ctx.clone();
                    inner.extend(sources(t, Operand::Var(cond.lhs)));
                    inner.extend(sources(t, cond.rhs));
                    add(t, cond.lhs, &inner, changed);
                    for b in body {
                        let ok = match &b.kind {
                            StmtKind::Increment(v) => matches!(s.kind, StmtKind::While { .. }) && *v == cond.lhs,
                            StmtKind::Write { .. } => true,
                            _ => false,
                        };
                        if !ok {
                            return Err(OracleError::Grammar {
                                line: b.line,
                                reason: "loop bodies may only increment the guard variable or write a buffer".into(),
                            });
                        }
                    }
                    if let StmtKind::While { .. } = s.kind {
                        if !body.iter().any(|b| b.kind == StmtKind::Increment(cond.lhs)) {
                            return Err(OracleError::Grammar {
                                line: s.line,
                                reason: format!("while body never increments {}", cond.lhs),
                            });
                        }
                    }
                    if let Operand::Var(v) = cond.rhs {
                        if v == cond.lhs {
                            return Err(OracleError::Grammar { line: s.line, reason: "guard compares a variable with itself".into() });
                        }
                    }
                    pass(body, &inner, true, t, changed)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    let mut t = Taint::new();
    loop {
        let mut changed = false;
        pass(&ast.statements, &BTreeSet::new(), false, &mut t, &mut changed)?;
        if !changed {
            break;
        }
    }

    // Every comparison may involve at most one rand source.
    for s in ast.walk() {
        let cond = match &s.kind {
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } | StmtKind::For { cond, .. } => cond,
            _ => continue,
        };
        let mut src = sources(&t, Operand::Var(cond.lhs));
        src.extend(sources(&t, cond.rhs));
        if src.len() > 1 {
            return Err(OracleError::Grammar {
                line: s.line,
                reason: format!("guard `{cond}` depends on {} rand values", src.len()),
            });
        }
    }
    for w in &ast.writes {
        if sources(&t, Operand::Var(w.index)).len() > 1 {
            return Err(OracleError::Grammar {
                line: w.line,
                reason: format!("index {} depends on several rand values", w.index),
            });
        }
    }
    Ok(t)
}

/// Representative rand values whose joint enumeration decides every
/// for-all / exists question about the program exactly.
pub fn rand_partition(ast: &ProgramAst) -> Result<RandPartition, OracleError> {
    rand_dependence(ast)?;
    // Values are max-combinations of literals and rand values shifted by at
    // most one unit per increment outside a loop body and per `<=` loop.
    let mut offset = 0i64;
    fn count(stmts: &[Stmt], in_loop: bool, offset: &mut i64) {
        for s in stmts {
            match &s.kind {
                StmtKind::Increment(_) if !in_loop => *offset += 1,
                StmtKind::While { cond, body, .. } | StmtKind::For { cond, body, .. } => {
                    if cond.op == CmpOp::Le {
                        *offset += 1;
                    }
                    count(body, true, offset);
                }
                StmtKind::If { .. } => {
                    for b in s.bodies() {
                        count(b, in_loop, offset);
                    }
                }
                _ => {}
            }
        }
    }
    count(&ast.statements, false, &mut offset);

    let literals: BTreeSet<i64> = ast.literals().into_iter().collect();
    let mut thresholds = BTreeSet::new();
    for &c in &literals {
        for d in -offset..=offset {
            thresholds.insert(c + d);
        }
    }
    let entities = ast
        .rand_entities()
        .into_iter()
        .map(|entity| {
            let intervals = intervals_for(&thresholds, RAND_MAX_STANDIN);
            let mut reps: BTreeSet<i64> = BTreeSet::new();
            for &(lo, hi) in &intervals {
                reps.insert(lo);
                reps.insert(hi);
            }
            EntityPartition {
                entity,
                thresholds: thresholds.iter().copied().filter(|t| (0..=RAND_MAX_STANDIN).contains(t)).collect(),
                intervals,
                representatives: reps.into_iter().collect(),
            }
        })
        .collect();
    Ok(RandPartition { entities })
}

/// Structural class of a write, derived from the program rather than the tag.
pub fn structural_kind(ast: &ProgramAst, write_id: usize) -> Option<WriteKind> {
    let w = &ast.writes[write_id];
    let idx = w.index;
    let mut main_lit_assigns = Vec::new();
    let mut other_mods = 0usize;
    let mut modified_in_cf = false;
    let mut in_guard = false;

    fn go(
        stmts: &[Stmt],
        depth: usize,
        idx: Entity,
        main_lit: &mut Vec<u32>,
        other: &mut usize,
        in_cf: &mut bool,
        in_guard: &mut bool,
    ) {
        for s in stmts {
            match &s.kind {
                StmtKind::AssignLit { var, .. } if *var == idx => {
                    if depth == 0 {
                        main_lit.push(s.line);
                    } else {
                        *other += 1;
                        *in_cf = true;
                    }
                }
                StmtKind::AssignRand(var) | StmtKind::Increment(var) if *var == idx => {
                    *other += 1;
                    *in_cf |= depth > 0;
                }
                StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => *in_guard |= cond.mentions(idx),
                StmtKind::For { var, cond, .. } => {
                    *in_guard |= cond.mentions(idx);
                    if *var == idx {
                        *other += 1;
                        *in_cf = true;
                    }
                }
                _ => {}
            }
            for b in s.bodies() {
                go(b, depth + 1, idx, main_lit, other, in_cf, in_guard);
            }
        }
    }
    go(&ast.statements, 0, idx, &mut main_lit_assigns, &mut other_mods, &mut modified_in_cf, &mut in_guard);

    if main_lit_assigns.len() == 1 && other_mods == 0 && !in_guard && main_lit_assigns[0] < w.line {
        Some(WriteKind::Taut)
    } else if w.scope == Scope::Main && modified_in_cf {
        Some(WriteKind::Cond)
    } else {
        None
    }
}

/// Value the index of a TAUT write holds: its unique main-scope literal.
fn taut_index_value(ast: &ProgramAst, write_id: usize) -> Option<i64> {
    let idx = ast.writes[write_id].index;
    ast.statements.iter().find_map(|s| match s.kind {
        StmtKind::AssignLit { var, value } if var == idx => Some(value),
        _ => None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteVerdict {
    pub id: usize,
    pub line: u32,
    pub kind: WriteKind,
    pub safety: SafetyLabel,
    /// Reached by at least one execution.
    pub reachable: bool,
}

impl WriteVerdict {
    pub fn line_label(&self) -> LineLabel {
        LineLabel::for_write(self.kind, self.safety)
    }
}

/// Labels every buffer write of `ast`.
pub fn classify_writes(ast: &ProgramAst) -> Result<Vec<WriteVerdict>, OracleError> {
    for w in &ast.writes {
        match structural_kind(ast, w.id) {
            Some(k) if k == w.structural_kind => {}
            other => {
                return Err(OracleError::KindMismatch {
                    line: w.line,
                    tagged: w.structural_kind,
                    actual: other.map_or("neither COND nor TAUT".to_string(), |k| format!("{k:?}")),
                })
            }
        }
    }

    let partition = rand_partition(ast)?;
    let mut unsafe_seen = vec![false; ast.writes.len()];
    let mut reached = vec![false; ast.writes.len()];
    for a in partition.assignments() {
        let trace = interpret(ast, &a)?;
        for (i, o) in trace.writes.iter().enumerate() {
            reached[i] |= o.reached();
            unsafe_seen[i] |= o.unsafe_hit;
        }
    }

    ast.writes
        .iter()
        .map(|w| {
            let unsafe_ = match w.structural_kind {
                WriteKind::Cond => {
                    if !reached[w.id] {
                        return Err(OracleError::UnreachableCond { line: w.line });
                    }
                    unsafe_seen[w.id]
                }
                WriteKind::Taut => {
                    let v = taut_index_value(ast, w.id).expect("structural check found the assignment");
                    v > w.array_len
                }
            };
            Ok(WriteVerdict {
                id: w.id,
                line: w.line,
                kind: w.structural_kind,
                safety: if unsafe_ { SafetyLabel::Unsafe } else { SafetyLabel::Safe },
                reachable: reached[w.id],
            })
        })
        .collect()
}

/// One label per source line, 1-based line `i` at index `i - 1`.
pub fn label_lines(ast: &ProgramAst) -> Result<Vec<LineLabel>, OracleError> {
    let verdicts = classify_writes(ast)?;
    Ok(lines_from_verdicts(ast, &verdicts))
}

pub fn lines_from_verdicts(ast: &ProgramAst, verdicts: &[WriteVerdict]) -> Vec<LineLabel> {
    let mut labels = vec![LineLabel::Body; ast.line_count as usize];
    labels[..HEADER_LINES as usize].fill(LineLabel::Other);
    labels[ast.closing_line() as usize - 1] = LineLabel::Other;
    for v in verdicts {
        labels[v.line as usize - 1] = v.line_label();
    }
    labels
}

/// Exhaustive verdicts over `domain` for every rand entity.
pub fn brute_force_oracle(ast: &ProgramAst, domain: RangeInclusive<i64>, budget: u64) -> Result<Vec<SafetyLabel>, OracleError> {
    let rands = ast.rand_entities();
    let width = (domain.end() - domain.start() + 1).max(0) as u128;
    let needed = width.pow(rands.len() as u32);
    if needed > budget as u128 {
        return Err(OracleError::BudgetExceeded { needed, budget });
    }
    let mut unsafe_seen = vec![false; ast.writes.len()];
    let mut assignment: BTreeMap<Entity, i64> = rands.iter().map(|&e| (e, *domain.start())).collect();
    loop {
        let trace = interpret(ast, &assignment)?;
        for (w, o) in ast.writes.iter().zip(&trace.writes) {
            let hit = o.unsafe_hit;
            let as_if_reached = w.structural_kind == WriteKind::Taut
                && !o.reached()
                && o.shadow_index.is_some_and(|v| v > w.array_len);
            unsafe_seen[w.id] |= hit || as_if_reached;
        }
        // odometer increment
        let mut carried = true;
        for e in &rands {
            let v = assignment.get_mut(e).unwrap();
            if *v < *domain.end() {
                *v += 1;
                carried = false;
                break;
            }
            *v = *domain.start();
        }
        if carried {
            break;
        }
    }
    Ok(unsafe_seen
        .into_iter()
        .map(|u| if u { SafetyLabel::Unsafe } else { SafetyLabel::Safe })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{Cond, ElseBranch};
    use crate::fixtures;

    fn s(kind: StmtKind) -> Stmt {
        Stmt::new(kind)
    }

    #[test]
    fn motivating_example_labels() {
        let ast = fixtures::motivating_example();
        let v = classify_writes(&ast).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!((v[0].line, v[0].line_label()), (20, LineLabel::BufwriteCondUnsafe));
        assert_eq!((v[1].line, v[1].line_label()), (22, LineLabel::BufwriteTautUnsafe));
        let labels = label_lines(&ast).unwrap();
        let writes: Vec<usize> = labels.iter().enumerate().filter(|(_, l)| l.is_write()).map(|(i, _)| i + 1).collect();
        assert_eq!(writes, vec![20, 22]);
        assert_eq!(labels[1], LineLabel::Other, "signature line");
        assert_eq!(labels[4], LineLabel::Body, "`char entity_8[11];`");
        assert_eq!(*labels.last().unwrap(), LineLabel::Other);
    }

    #[test]
    fn motivating_example_false_branch_trace() {
        let ast = fixtures::motivating_example();
        // rand >= 50 takes the else branch: entity_3 = 69, loop lifts entity_4 to 69.
        let trace = interpret(&ast, &BTreeMap::from([(Entity(3), 50)])).unwrap();
        let w = &trace.writes[0];
        assert_eq!(w.first_index, Some(69));
        assert!(w.unsafe_hit);
        assert_eq!(ast.writes[0].array_len, 11);
    }

    #[test]
    fn motivating_example_brute_force() {
        let ast = fixtures::motivating_example();
        let bf = brute_force_oracle(&ast, 0..=200, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(bf, vec![SafetyLabel::Unsafe, SafetyLabel::Unsafe]);
    }

    fn straight_line(index: i64, len: i64) -> ProgramAst {
        let (a, i) = (Entity(0), Entity(1));
        ProgramAst::assemble(vec![
            s(StmtKind::DeclArray { array: a, len }),
            s(StmtKind::DeclInt(i)),
            s(StmtKind::AssignLit { var: i, value: index }),
            s(StmtKind::Write { id: 0, array: a, index: i, ch: 'q', kind: WriteKind::Taut }),
        ])
        .unwrap()
    }

    #[test]
    fn straight_line_safe_write() {
        let ast = straight_line(5, 10);
        let t = interpret(&ast, &BTreeMap::new()).unwrap();
        assert!(t.writes[0].reached());
        assert_eq!(t.writes[0].first_index, Some(5));
        assert!(!t.writes[0].unsafe_hit);
        let v = classify_writes(&ast).unwrap();
        assert_eq!(v[0].safety, SafetyLabel::Safe);
        assert_eq!(brute_force_oracle(&ast, 0..=200, 1).unwrap(), vec![SafetyLabel::Safe]);
    }

    #[test]
    fn index_equal_to_length_is_safe() {
        let v = classify_writes(&straight_line(10, 10)).unwrap();
        assert_eq!((v[0].safety, v[0].kind), (SafetyLabel::Safe, WriteKind::Taut));
        let v = classify_writes(&straight_line(11, 10)).unwrap();
        assert_eq!(v[0].safety, SafetyLabel::Unsafe);
    }

    #[test]
    fn execution_continues_after_unsafe_write() {
        let (a, i, b, j) = (Entity(0), Entity(1), Entity(2), Entity(3));
        let ast = ProgramAst::assemble(vec![
            s(StmtKind::DeclArray { array: a, len: 3 }),
            s(StmtKind::DeclInt(i)),
            s(StmtKind::DeclArray { array: b, len: 4 }),
            s(StmtKind::DeclInt(j)),
            s(StmtKind::AssignLit { var: i, value: 50 }),
            s(StmtKind::AssignLit { var: j, value: 60 }),
            s(StmtKind::Write { id: 0, array: a, index: i, ch: 'a', kind: WriteKind::Taut }),
            s(StmtKind::Write { id: 1, array: b, index: j, ch: 'b', kind: WriteKind::Taut }),
        ])
        .unwrap();
        let t = interpret(&ast, &BTreeMap::new()).unwrap();
        assert!(t.writes.iter().all(|w| w.reached() && w.unsafe_hit));
    }

    fn one_rand(thresholds: &[i64]) -> ProgramAst {
        // r = rand(); x = t0; if (r < t0) { x = t1 } ...; a[x] with len t0
        let (a, r, x) = (Entity(0), Entity(1), Entity(2));
        let mut body = vec![
            s(StmtKind::DeclArray { array: a, len: thresholds[0] }),
            s(StmtKind::DeclInt(r)),
            s(StmtKind::DeclInt(x)),
            s(StmtKind::AssignRand(r)),
            s(StmtKind::AssignLit { var: x, value: thresholds[0] }),
        ];
        for (k, &t) in thresholds.iter().enumerate() {
            body.push(s(StmtKind::If {
                id: k,
                cond: Cond::new(r, CmpOp::Lt, Operand::Lit(t)),
                then_body: vec![s(StmtKind::AssignLit { var: x, value: t })],
                else_branch: None,
                end_line: 0,
            }));
        }
        body.push(s(StmtKind::Write { id: 0, array: a, index: x, ch: 'c', kind: WriteKind::Cond }));
        ProgramAst::assemble(body).unwrap()
    }

    #[test]
    fn partition_includes_threshold_neighbours() {
        let p = rand_partition(&one_rand(&[42])).unwrap();
        assert_eq!(p.entities.len(), 1);
        let reps = &p.entities[0].representatives;
        for v in [0, 41, 42, 43, RAND_MAX_STANDIN] {
            assert!(reps.contains(&v), "{v} missing from {reps:?}");
        }
    }

    #[test]
    fn partition_without_rand_is_single_empty_assignment() {
        let p = rand_partition(&straight_line(3, 4)).unwrap();
        assert_eq!(p.assignments(), vec![BTreeMap::new()]);
    }

    #[test]
    fn two_thresholds_give_five_intervals() {
        let p = rand_partition(&one_rand(&[10, 20])).unwrap();
        // independent count: [0,9] {10} [11,19] {20} [21,max]
        let expected = vec![(0, 9), (10, 10), (11, 19), (20, 20), (21, RAND_MAX_STANDIN)];
        assert_eq!(p.entities[0].intervals, expected);
    }

    #[test]
    fn rand_assignment_in_loop_is_a_grammar_error() {
        let (a, i) = (Entity(0), Entity(1));
        let ast = ProgramAst::assemble(vec![
            s(StmtKind::DeclArray { array: a, len: 3 }),
            s(StmtKind::DeclInt(i)),
            s(StmtKind::AssignLit { var: i, value: 0 }),
            s(StmtKind::While {
                id: 0,
                cond: Cond::new(i, CmpOp::Lt, Operand::Lit(5)),
                body: vec![s(StmtKind::Increment(i)), s(StmtKind::AssignRand(i))],
                end_line: 0,
            }),
        ])
        .unwrap();
        let err = rand_partition(&ast).unwrap_err();
        assert!(matches!(err, OracleError::Grammar { line: 8, .. }), "{err}");
    }

    #[test]
    fn comparing_two_rand_values_is_rejected() {
        let (r, q) = (Entity(1), Entity(2));
        let ast = ProgramAst::assemble(vec![
            s(StmtKind::DeclInt(r)),
            s(StmtKind::DeclInt(q)),
            s(StmtKind::AssignRand(r)),
            s(StmtKind::AssignRand(q)),
            s(StmtKind::If {
                id: 0,
                cond: Cond::new(r, CmpOp::Lt, Operand::Var(q)),
                then_body: vec![],
                else_branch: Some(ElseBranch { line: 0, body: vec![] }),
                end_line: 0,
            }),
        ])
        .unwrap();
        assert!(matches!(rand_partition(&ast), Err(OracleError::Grammar { .. })));
    }

    #[test]
    fn mistagged_write_surfaces_as_error() {
        let mut ast = straight_line(3, 4);
        ast.writes[0].structural_kind = WriteKind::Cond;
        assert!(matches!(classify_writes(&ast), Err(OracleError::KindMismatch { .. })));
    }

    #[test]
    fn unreached_taut_write_is_labeled_as_if_reached() {
        let (a, i, g) = (Entity(0), Entity(1), Entity(2));
        let ast = ProgramAst::assemble(vec![
            s(StmtKind::DeclArray { array: a, len: 3 }),
            s(StmtKind::DeclInt(i)),
            s(StmtKind::DeclInt(g)),
            s(StmtKind::AssignLit { var: i, value: 9 }),
            s(StmtKind::AssignLit { var: g, value: 1 }),
            s(StmtKind::If {
                id: 0,
                cond: Cond::new(g, CmpOp::Gt, Operand::Lit(5)),
                then_body: vec![s(StmtKind::Write { id: 0, array: a, index: i, ch: 'z', kind: WriteKind::Taut })],
                else_branch: None,
                end_line: 0,
            }),
        ])
        .unwrap();
        let v = classify_writes(&ast).unwrap();
        assert_eq!(v[0].safety, SafetyLabel::Unsafe);
        assert!(!v[0].reachable);
        assert_eq!(brute_force_oracle(&ast, 0..=200, 10).unwrap(), vec![SafetyLabel::Unsafe]);
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let ast = fixtures::motivating_example();
        let err = brute_force_oracle(&ast, 0..=200, 100).unwrap_err();
        assert_eq!(err, OracleError::BudgetExceeded { needed: 201, budget: 100 });
    }
}
