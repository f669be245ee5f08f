//! Hand-built programs used as labeling fixtures.

use crate::ast::{CmpOp, Cond, ElseBranch, Entity, Operand, ProgramAst, Stmt, StmtKind, WriteKind};

/// The canonical two-write example: a rand-dependent `if`/`else` feeding a
/// `while` loop makes the write on line 20 unsafe (COND), and the write on
/// line 22 is unsafe by a single main-scope comparison (TAUT).
///
/// ```text
///  1 #include <stdlib.h>
///  2 void main() {
///  3     int entity_9;
///  4     int entity_4;
///  5     char entity_8[11];
///  6     int entity_3;
///  7     char entity_7[39];
///  8     entity_9 = 77;
///  9     entity_3 = rand();
/// 10     entity_4 = 42;
/// 11     if (entity_3 < 50) {
/// 12         entity_3 = 30;
/// 13     } else {
/// 14         entity_3 = 69;
/// 15     }
/// 16     while (entity_4 < entity_3) {
/// 17         entity_4++;
/// 18     }
/// 19     entity_3++;
/// 20     entity_8[entity_4] = 'k';
/// 21     entity_3 = 7;
/// 22     entity_7[entity_9] = 'Q';
/// 23 }
/// ```
pub fn motivating_example() -> ProgramAst {
    let (e3, e4, e7, e8, e9) = (Entity(3), Entity(4), Entity(7), Entity(8), Entity(9));
    let s = Stmt::new;
    let body = vec![
        s(StmtKind::DeclInt(e9)),
        s(StmtKind::DeclInt(e4)),
        s(StmtKind::DeclArray { array: e8, len: 11 }),
        s(StmtKind::DeclInt(e3)),
        s(StmtKind::DeclArray { array: e7, len: 39 }),
        s(StmtKind::AssignLit { var: e9, value: 77 }),
        s(StmtKind::AssignRand(e3)),
        s(StmtKind::AssignLit { var: e4, value: 42 }),
        s(StmtKind::If {
            id: 0,
            cond: Cond::new(e3, CmpOp::Lt, Operand::Lit(50)),
            then_body: vec![s(StmtKind::AssignLit { var: e3, value: 30 })],
            else_branch: Some(ElseBranch { line: 0, body: vec![s(StmtKind::AssignLit { var: e3, value: 69 })] }),
            end_line: 0,
        }),
        s(StmtKind::While {
            id: 1,
            cond: Cond::new(e4, CmpOp::Lt, Operand::Var(e3)),
            body: vec![s(StmtKind::Increment(e4))],
            end_line: 0,
        }),
        s(StmtKind::Increment(e3)),
        s(StmtKind::Write { id: 0, array: e8, index: e4, ch: 'k', kind: WriteKind::Cond }),
        s(StmtKind::AssignLit { var: e3, value: 7 }),
        s(StmtKind::Write { id: 1, array: e7, index: e9, ch: 'Q', kind: WriteKind::Taut }),
    ];
    ProgramAst::assemble(body).expect("fixture is well formed")
}
