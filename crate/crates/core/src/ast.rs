//! Program representation shared by the generator, the labeling oracle and the renderer.
//!
//! A program is a single `void main()` whose body is a tree of [`Stmt`]s. Every
//! statement carries the 1-based source line it is rendered on; the derived
//! tables on [`ProgramAst`] (control-flow nodes, writes, declarations) are
//! rebuilt from the tree by [`ProgramAst::assemble`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of lines before the first body line: the `#include` and the signature.
pub const HEADER_LINES: u32 = 2;

/// Largest number of distinct `entity_<n>` names.
pub const MAX_ENTITY_NAMES: u8 = 10;

/// A variable name `entity_<n>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Entity(pub u8);

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "entity_{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Lit(i64),
    Var(Entity),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Lit(v) => write!(f, "{v}"),
            Operand::Var(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn eval(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

/// `lhs op rhs`, the only guard shape the grammar allows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cond {
    pub lhs: Entity,
    pub op: CmpOp,
    pub rhs: Operand,
}

impl Cond {
    pub fn new(lhs: Entity, op: CmpOp, rhs: Operand) -> Self {
        Cond { lhs, op, rhs }
    }

    pub fn mentions(&self, e: Entity) -> bool {
        self.lhs == e || self.rhs == Operand::Var(e)
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

/// Structural class of a buffer write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WriteKind {
    /// Safety depends on control flow.
    Cond,
    /// Index set exactly once in main scope; decidable without control flow.
    Taut,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElseBranch {
    pub line: u32,
    pub body: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StmtKind {
    DeclInt(Entity),
    DeclArray { array: Entity, len: i64 },
    AssignLit { var: Entity, value: i64 },
    AssignRand(Entity),
    Increment(Entity),
    Write { id: usize, array: Entity, index: Entity, ch: char, kind: WriteKind },
    If { id: usize, cond: Cond, then_body: Vec<Stmt>, else_branch: Option<ElseBranch>, end_line: u32 },
    While { id: usize, cond: Cond, body: Vec<Stmt>, end_line: u32 },
    /// `for (var = init; cond; var++)`; `cond.lhs` is `var`.
    For { id: usize, var: Entity, init: i64, cond: Cond, body: Vec<Stmt>, end_line: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stmt {
    pub line: u32,
    pub kind: StmtKind,
}

impl Stmt {
    /// A statement whose lines have not been laid out yet.
    pub fn new(kind: StmtKind) -> Self {
        Stmt { line: 0, kind }
    }

    pub fn is_control_flow(&self) -> bool {
        matches!(self.kind, StmtKind::If { .. } | StmtKind::While { .. } | StmtKind::For { .. })
    }

    /// Child bodies of a control-flow node (then, else / loop body).
    pub fn bodies(&self) -> Vec<&Vec<Stmt>> {
        match &self.kind {
            StmtKind::If { then_body, else_branch, .. } => {
                let mut out = vec![then_body];
                if let Some(e) = else_branch {
                    out.push(&e.body);
                }
                out
            }
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }

    pub fn bodies_mut(&mut self) -> Vec<&mut Vec<Stmt>> {
        match &mut self.kind {
            StmtKind::If { then_body, else_branch, .. } => {
                let mut out = vec![then_body];
                if let Some(e) = else_branch {
                    out.push(&mut e.body);
                }
                out
            }
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CfKind {
    IfElse,
    For,
    While,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfNode {
    pub id: usize,
    pub kind: CfKind,
    pub header_line: u32,
    pub end_line: u32,
    pub guard: Cond,
    /// Enclosing control-flow node, if nested.
    pub parent: Option<usize>,
    pub depth: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Main,
    Cf(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferWrite {
    pub id: usize,
    pub line: u32,
    pub array: Entity,
    pub array_len: i64,
    pub index: Entity,
    pub ch: char,
    pub structural_kind: WriteKind,
    /// Innermost enclosing control-flow node.
    pub scope: Scope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclKind {
    Int,
    Array { len: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDecl {
    pub entity: Entity,
    pub kind: DeclKind,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AstError {
    #[error("line {line}: {entity} used before declaration")]
    Undeclared { line: u32, entity: Entity },
    #[error("line {line}: {entity} declared twice")]
    Redeclared { line: u32, entity: Entity },
    #[error("line {line}: {entity} has the wrong type for this statement")]
    TypeMismatch { line: u32, entity: Entity },
    #[error("line {line}: buffer write ids must be 0..n in order, found {id}")]
    WriteId { line: u32, id: usize },
    #[error("line {line}: control-flow ids must be 0..n in order, found {id}")]
    CfId { line: u32, id: usize },
    #[error("line {line}: for-loop guard must test the induction variable {var}")]
    ForGuard { line: u32, var: Entity },
}

/// A generated program plus the tables derived from its statement tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramAst {
    pub statements: Vec<Stmt>,
    pub cf_nodes: Vec<CfNode>,
    pub writes: Vec<BufferWrite>,
    pub entities: Vec<EntityDecl>,
    /// Total rendered lines, header and closing brace included.
    pub line_count: u32,
}

impl ProgramAst {
    /// Lays out line numbers for `body` and derives the node, write and
    /// declaration tables. Write and control-flow ids must already be
    /// numbered 0.. in source order.
    pub fn assemble(mut body: Vec<Stmt>) -> Result<ProgramAst, AstError> {
        let mut next = HEADER_LINES + 1;
        layout(&mut body, &mut next);
        let line_count = next; // closing brace sits on `next`
        let mut ast = ProgramAst {
            statements: body,
            cf_nodes: Vec::new(),
            writes: Vec::new(),
            entities: Vec::new(),
            line_count,
        };
        let mut decls: BTreeMap<Entity, DeclKind> = BTreeMap::new();
        let stmts = std::mem::take(&mut ast.statements);
        collect(&stmts, None, 0, &mut decls, &mut ast)?;
        ast.statements = stmts;
        Ok(ast)
    }

    /// Line of the closing brace of `main`.
    pub fn closing_line(&self) -> u32 {
        self.line_count
    }

    pub fn array_len(&self, e: Entity) -> Option<i64> {
        self.entities.iter().find_map(|d| match d.kind {
            DeclKind::Array { len } if d.entity == e => Some(len),
            _ => None,
        })
    }

    /// Depth-first iterator over every statement in the tree.
    pub fn walk(&self) -> Vec<&Stmt> {
        fn go<'a>(stmts: &'a [Stmt], out: &mut Vec<&'a Stmt>) {
            for s in stmts {
                out.push(s);
                for b in s.bodies() {
                    go(b, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.statements, &mut out);
        out
    }

    /// Every integer literal in the program (assignments, guards, lengths, loop inits).
    pub fn literals(&self) -> Vec<i64> {
        let mut out = Vec::new();
        for s in self.walk() {
            match &s.kind {
                StmtKind::DeclArray { len, .. } => out.push(*len),
                StmtKind::AssignLit { value, .. } => out.push(*value),
                StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => {
                    if let Operand::Lit(v) = cond.rhs {
                        out.push(v);
                    }
                }
                StmtKind::For { init, cond, .. } => {
                    out.push(*init);
                    if let Operand::Lit(v) = cond.rhs {
                        out.push(v);
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Entities assigned from `rand()` anywhere in the program, in first-seen order.
    pub fn rand_entities(&self) -> Vec<Entity> {
        let mut out = Vec::new();
        for s in self.walk() {
            if let StmtKind::AssignRand(e) = s.kind {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        }
        out
    }
}

fn layout(stmts: &mut [Stmt], next: &mut u32) {
    for s in stmts {
        s.line = *next;
        *next += 1;
        match &mut s.kind {
            StmtKind::If { then_body, else_branch, end_line, .. } => {
                layout(then_body, next);
                if let Some(e) = else_branch {
                    e.line = *next;
                    *next += 1;
                    layout(&mut e.body, next);
                }
                *end_line = *next;
                *next += 1;
            }
            StmtKind::While { body, end_line, .. } | StmtKind::For { body, end_line, .. } => {
                layout(body, next);
                *end_line = *next;
                *next += 1;
            }
            _ => {}
        }
    }
}

fn collect(
    stmts: &[Stmt],
    parent: Option<usize>,
    depth: usize,
    decls: &mut BTreeMap<Entity, DeclKind>,
    ast: &mut ProgramAst,
) -> Result<(), AstError> {
    let need_int = |decls: &BTreeMap<Entity, DeclKind>, e: Entity, line: u32| match decls.get(&e) {
        None => Err(AstError::Undeclared { line, entity: e }),
        Some(DeclKind::Int) => Ok(()),
        Some(_) => Err(AstError::TypeMismatch { line, entity: e }),
    };
    let need_cond = |decls: &BTreeMap<Entity, DeclKind>, c: &Cond, line: u32| {
        need_int(decls, c.lhs, line)?;
        if let Operand::Var(v) = c.rhs {
            need_int(decls, v, line)?;
        }
        Ok(())
    };
    for s in stmts {
        let line = s.line;
        match &s.kind {
            StmtKind::DeclInt(e) | StmtKind::DeclArray { array: e, .. } => {
                let kind = match s.kind {
                    StmtKind::DeclArray { len, .. } => DeclKind::Array { len },
                    _ => DeclKind::Int,
                };
                if decls.insert(*e, kind).is_some() {
                    return Err(AstError::Redeclared { line, entity: *e });
                }
                ast.entities.push(EntityDecl { entity: *e, kind, line });
            }
            StmtKind::AssignLit { var, .. } | StmtKind::AssignRand(var) | StmtKind::Increment(var) => {
                need_int(decls, *var, line)?;
            }
            StmtKind::Write { id, array, index, ch, kind } => {
                let len = match decls.get(array) {
                    None => return Err(AstError::Undeclared { line, entity: *array }),
                    Some(DeclKind::Array { len }) => *len,
                    Some(_) => return Err(AstError::TypeMismatch { line, entity: *array }),
                };
                need_int(decls, *index, line)?;
                if *id != ast.writes.len() {
                    return Err(AstError::WriteId { line, id: *id });
                }
                ast.writes.push(BufferWrite {
                    id: *id,
                    line,
                    array: *array,
                    array_len: len,
                    index: *index,
                    ch: *ch,
                    structural_kind: *kind,
                    scope: parent.map_or(Scope::Main, Scope::Cf),
                });
            }
            StmtKind::If { id, cond, end_line, .. }
            | StmtKind::While { id, cond, end_line, .. }
            | StmtKind::For { id, cond, end_line, .. } => {
                need_cond(decls, cond, line)?;
                let kind = match &s.kind {
                    StmtKind::If { .. } => CfKind::IfElse,
                    StmtKind::While { .. } => CfKind::While,
                    StmtKind::For { var, .. } => {
                        if cond.lhs != *var {
                            return Err(AstError::ForGuard { line, var: *var });
                        }
                        CfKind::For
                    }
                    _ => unreachable!(),
                };
                if *id != ast.cf_nodes.len() {
                    return Err(AstError::CfId { line, id: *id });
                }
                ast.cf_nodes.push(CfNode {
                    id: *id,
                    kind,
                    header_line: line,
                    end_line: *end_line,
                    guard: *cond,
                    parent,
                    depth: depth + 1,
                });
                for b in s.bodies() {
                    collect(b, Some(*id), depth + 1, decls, ast)?;
                }
            }
        }
    }
    Ok(())
}

/// Renumbers write and control-flow ids in source order. Used after
/// generator passes that splice statements into arbitrary positions.
pub fn renumber(stmts: &mut [Stmt]) {
    fn go(stmts: &mut [Stmt], writes: &mut usize, cfs: &mut usize) {
        for s in stmts {
            match &mut s.kind {
                StmtKind::Write { id, .. } => {
                    *id = *writes;
                    *writes += 1;
                }
                StmtKind::If { id, .. } | StmtKind::While { id, .. } | StmtKind::For { id, .. } => {
                    *id = *cfs;
                    *cfs += 1;
                }
                _ => {}
            }
            for b in s.bodies_mut() {
                go(b, writes, cfs);
            }
        }
    }
    let (mut w, mut c) = (0, 0);
    go(stmts, &mut w, &mut c);
}
