use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;
use sbabi::ast::{renumber, DeclKind, Entity, ProgramAst, Stmt, StmtKind, WriteKind, MAX_ENTITY_NAMES};
use sbabi::codegen::{generate_program, GenConfig};
use sbabi::oracle::{
    brute_force_oracle, classify_writes, interpret, rand_partition, SafetyLabel, DEFAULT_ENUMERATION_BUDGET,
};
use sbabi::seeds;

fn program(seed: u64) -> ProgramAst {
    generate_program(seed, &GenConfig::default()).unwrap()
}

fn safety(ast: &ProgramAst) -> Vec<SafetyLabel> {
    classify_writes(ast).unwrap().iter().map(|v| v.safety).collect()
}

fn free_entity(ast: &ProgramAst) -> Option<Entity> {
    (0..MAX_ENTITY_NAMES).map(Entity).find(|e| ast.entities.iter().all(|d| d.entity != *e))
}

/// Keeps only the statements on the path to `target` (a write id) plus every
/// non-control-flow statement other than writes.
fn isolate(stmts: &[Stmt], target: usize) -> Vec<Stmt> {
    fn contains(s: &Stmt, target: usize) -> bool {
        matches!(s.kind, StmtKind::Write { id, .. } if id == target) || s.bodies().iter().any(|b| b.iter().any(|c| contains(c, target)))
    }
    stmts
        .iter()
        .filter(|s| match s.kind {
            StmtKind::Write { id, .. } => id == target,
            _ => !s.is_control_flow() || contains(s, target),
        })
        .map(|s| {
            let mut s = s.clone();
            for b in s.bodies_mut() {
                *b = isolate(b, target);
            }
            s.line = 0;
            s
        })
        .collect()
}

fn strip_lines(stmts: &mut [Stmt]) {
    for s in stmts {
        s.line = 0;
        for b in s.bodies_mut() {
            strip_lines(b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 150, ..ProptestConfig::default() })]

    #[test]
    fn oracle_matches_brute_force(seed in any::<u64>()) {
        let ast = program(seed);
        let brute = brute_force_oracle(&ast, 0..=200, DEFAULT_ENUMERATION_BUDGET).unwrap();
        prop_assert_eq!(safety(&ast), brute);
    }

    #[test]
    fn earlier_unsafe_write_does_not_change_later_labels(seed in any::<u64>(), extra in 1i64..50) {
        let ast = program(seed);
        let Some(e) = free_entity(&ast) else { return Ok(()) };
        let (array, len) = ast
            .entities
            .iter()
            .find_map(|d| match d.kind { DeclKind::Array { len } => Some((d.entity, len)), _ => None })
            .unwrap();
        let mut body = ast.statements.clone();
        strip_lines(&mut body);
        let at = body.iter().rposition(|s| matches!(s.kind, StmtKind::DeclInt(_) | StmtKind::DeclArray { .. })).unwrap() + 1;
        let inserted = [
            Stmt::new(StmtKind::DeclInt(e)),
            Stmt::new(StmtKind::AssignLit { var: e, value: len + extra }),
            Stmt::new(StmtKind::Write { id: 0, array, index: e, ch: 'z', kind: WriteKind::Taut }),
        ];
        body.splice(at..at, inserted);
        renumber(&mut body);
        let bigger = ProgramAst::assemble(body).unwrap();
        let labels = safety(&bigger);
        prop_assert_eq!(labels[0], SafetyLabel::Unsafe);
        prop_assert_eq!(&labels[1..], &safety(&ast)[..]);
    }

    #[test]
    fn values_in_one_interval_behave_alike(seed in any::<u64>(), pick in any::<u64>()) {
        let ast = program(seed);
        let part = rand_partition(&ast).unwrap();
        let mut rng = seeds::rng(pick);
        for _ in 0..8 {
            let mut a = BTreeMap::new();
            let mut b = BTreeMap::new();
            for p in &part.entities {
                let (lo, hi) = p.intervals[rng.gen_range(0..p.intervals.len())];
                a.insert(p.entity, rng.gen_range(lo..=hi));
                b.insert(p.entity, rng.gen_range(lo..=hi));
            }
            let (ta, tb) = (interpret(&ast, &a).unwrap(), interpret(&ast, &b).unwrap());
            for (wa, wb) in ta.writes.iter().zip(&tb.writes) {
                prop_assert_eq!((wa.reached(), wa.unsafe_hit), (wb.reached(), wb.unsafe_hit));
            }
        }
    }

    #[test]
    fn taut_label_survives_removing_other_control_flow(seed in any::<u64>()) {
        let ast = program(seed);
        let verdicts = classify_writes(&ast).unwrap();
        for v in verdicts.iter().filter(|v| v.kind == WriteKind::Taut) {
            let mut body = isolate(&ast.statements, v.id);
            renumber(&mut body);
            let alone = ProgramAst::assemble(body).unwrap();
            prop_assert_eq!(alone.writes.len(), 1);
            prop_assert_eq!(safety(&alone), vec![v.safety]);
        }
    }
}
