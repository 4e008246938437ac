use std::time::Duration;

use super::*;
use crate::symbolic::{eval_u128, Origin, SatResult};
use crate::wasm::parse_module;

fn program(wat: &str) -> Program {
    let bytes = wat::parse_str(wat).unwrap();
    Program::new(parse_module(&bytes).unwrap()).unwrap()
}

fn local_index(p: &Program, name: &str) -> u32 {
    match p.module().exports.get(name) {
        Some(&(_, i)) => i,
        None => panic!("no export {name}"),
    }
}

fn run(p: &Program, name: &str, args: &[SymExpr]) -> PathTree {
    explore(
        p,
        local_index(p, name),
        args,
        &ExplorationOptions::default(),
    )
    .unwrap()
}

#[test]
fn constant_function_has_one_path() {
    let p = program(r#"(module (func (export "f") (result i64) i64.const 7))"#);
    let t = run(&p, "f", &[]);
    assert_eq!(t.paths.len(), 1);
    assert_eq!(t.paths[0].terminal, TerminalKind::Returned);
    assert!(t.paths[0].constraints.is_empty());
    assert_eq!(t.paths[0].return_values[0].as_const(), Some(7));
}

#[test]
fn add_constants() {
    let p = program(r#"(module (func (export "f") (result i64) i64.const 2 i64.const 3 i64.add))"#);
    let t = run(&p, "f", &[]);
    assert_eq!(t.paths[0].return_values[0].as_const(), Some(5));
}

#[test]
fn br_if_forks_complementary() {
    let p = program(
        r#"(module (func (export "f") (param i32) (result i32)
            (block (br_if 0 (local.get 0)) (return (i32.const 1)))
            i32.const 2))"#,
    );
    let x = SymExpr::var_untainted("x", 32);
    let t = run(&p, "f", std::slice::from_ref(&x));
    assert_eq!(t.paths.len(), 2);
    let c0 = &t.paths[0].constraints[0].expr;
    let c1 = &t.paths[1].constraints[0].expr;
    assert_eq!(c1, &c0.not());
    // taken first (edge order), returning 2
    assert_eq!(t.paths[0].return_values[0].as_const(), Some(2));
    assert_eq!(t.paths[1].return_values[0].as_const(), Some(1));
    let s = Solver::default();
    assert!(s.check(&[c0.clone(), c1.clone()]).is_unsat());
}

#[test]
fn br_table_dispatch_three_ways() {
    let p = program(
        r#"(module (func (export "f") (param i32) (result i32)
            (block (block (block
               (br_table 0 1 2 (local.get 0)))
               (return (i32.const 10)))
             (return (i32.const 11)))
            i32.const 12))"#,
    );
    let x = SymExpr::var_untainted("x", 32);
    let t = run(&p, "f", std::slice::from_ref(&x));
    assert_eq!(t.paths.len(), 3);
    let s = Solver::default();
    let mut rets = Vec::new();
    for path in &t.paths {
        assert_eq!(path.constraints.len(), 1);
        let m = s.check(&path.constraint_exprs()).model().cloned().unwrap();
        let v = eval_u128(&x, &m);
        rets.push((path.return_values[0].as_const().unwrap(), v.min(2)));
    }
    rets.sort();
    assert_eq!(rets, vec![(10, 0), (11, 1), (12, 2)]);
}

#[test]
fn div_u_forks_trap() {
    let p = program(
        r#"(module (func (export "f") (param i32 i32) (result i32)
            local.get 0 local.get 1 i32.div_u))"#,
    );
    let a = SymExpr::var_untainted("a", 32);
    let b = SymExpr::var_untainted("b", 32);
    let t = run(&p, "f", &[a, b.clone()]);
    assert_eq!(t.paths.len(), 2);
    assert_eq!(t.paths[0].terminal, TerminalKind::Trapped);
    assert_eq!(t.paths[0].constraints[0].expr, b.eq(&SymExpr::u32(0)));
    assert_eq!(t.paths[1].terminal, TerminalKind::Returned);
}

#[test]
fn rem_taint_from_chain_state() {
    let p = program(
        r#"(module
            (import "env" "current_time" (func $t (result i64)))
            (func (export "f") (result i64)
              call $t i64.const 100 i64.rem_u))"#,
    );
    let t = run(&p, "f", &[]);
    assert_eq!(t.paths.len(), 1);
    let site = &t.paths[0].rem_sites[0];
    assert!(site.dividend.taint().contains(&Origin::BlockchainState));
    assert!(site.divisor.taint().is_empty());
    assert!(t.paths[0].return_values[0]
        .taint()
        .contains(&Origin::BlockchainState));
}

#[test]
fn call_depth_is_enforced() {
    let p = program(
        r#"(module
            (func $c (result i32) i32.const 3)
            (func $b (result i32) call $c)
            (func $a (result i32) call $b)
            (func (export "f") (result i32) call $a))"#,
    );
    let opts = ExplorationOptions {
        call_depth: 2,
        ..Default::default()
    };
    let t = explore(&p, local_index(&p, "f"), &[], &opts).unwrap();
    assert_eq!(t.paths.len(), 1);
    assert_eq!(t.paths[0].terminal, TerminalKind::DepthPruned);
    assert_eq!(t.paths[0].max_call_depth, 2);
    let opts = ExplorationOptions {
        call_depth: 3,
        ..Default::default()
    };
    let t = explore(&p, local_index(&p, "f"), &[], &opts).unwrap();
    assert_eq!(t.paths[0].terminal, TerminalKind::Returned);
    assert_eq!(t.paths[0].return_values[0].as_const(), Some(3));
}

#[test]
fn loop_bound_stops_infinite_loop() {
    let p = program(r#"(module (func (export "f") (loop (br 0))))"#);
    let t = run(&p, "f", &[]);
    assert_eq!(t.paths.len(), 1);
    assert_eq!(t.paths[0].terminal, TerminalKind::LoopBound);
}

#[test]
fn counted_loop_runs_concretely() {
    let p = program(
        r#"(module (func (export "f") (result i32) (local i32)
            (loop
              (local.set 0 (i32.add (local.get 0) (i32.const 1)))
              (br_if 0 (i32.lt_u (local.get 0) (i32.const 5))))
            local.get 0))"#,
    );
    let t = run(&p, "f", &[]);
    assert_eq!(t.paths.len(), 1);
    assert_eq!(t.paths[0].return_values[0].as_const(), Some(5));
}

#[test]
fn memcpy_moves_bytes() {
    let p = program(
        r#"(module
            (import "env" "memcpy" (func $memcpy (param i32 i32 i32) (result i32)))
            (memory 1)
            (func (export "f") (result i32)
              (i32.store (i32.const 16) (i32.const 0x44332211))
              (drop (call $memcpy (i32.const 0) (i32.const 16) (i32.const 4)))
              (i32.load (i32.const 0))))"#,
    );
    let t = run(&p, "f", &[]);
    assert_eq!(t.paths[0].terminal, TerminalKind::Returned);
    assert_eq!(t.paths[0].return_values[0].as_const(), Some(0x44332211));
    assert_eq!(t.paths[0].import_names(), vec!["memcpy"]);
}

#[test]
fn eosio_assert_forks() {
    let p = program(
        r#"(module
            (import "env" "eosio_assert" (func $a (param i32 i32)))
            (memory 1)
            (func (export "f") (param i32)
              (call $a (local.get 0) (i32.const 0))))"#,
    );
    let x = SymExpr::var_untainted("x", 32);
    let t = run(&p, "f", std::slice::from_ref(&x));
    assert_eq!(t.paths.len(), 2);
    assert_eq!(t.paths[0].terminal, TerminalKind::Returned);
    assert_eq!(t.paths[1].terminal, TerminalKind::AssertedFalse);
    assert_eq!(t.paths[0].constraints[0].expr, x.is_nonzero());
    assert_eq!(t.paths[1].constraints[0].expr, x.is_nonzero().not());
    for path in &t.paths {
        assert_eq!(path.import_calls.len(), 1);
    }
}

#[test]
fn unmodeled_import_is_flagged() {
    let p = program(
        r#"(module
            (import "env" "prints" (func $p (param i32)))
            (import "env" "mystery" (func $m (result i64)))
            (func (export "f") (result i64) (call $p (i32.const 0)) call $m))"#,
    );
    let t = run(&p, "f", &[]);
    let path = &t.paths[0];
    assert!(path.flags.default_modeled);
    let ret = path.import_calls[1].return_value.clone().unwrap();
    assert!(ret
        .taint()
        .contains(&Origin::ImportReturn("mystery".into())));
    assert!(t.diagnostics().default_modeled);
}

#[test]
fn symbolic_address_is_concretized() {
    let p = program(
        r#"(module (memory 1)
            (func (export "f") (param i32) (result i32)
              (i32.load (local.get 0))))"#,
    );
    let x = SymExpr::var_untainted("x", 32);
    let t = run(&p, "f", &[x]);
    let returned = t
        .paths
        .iter()
        .filter(|p| p.terminal == TerminalKind::Returned)
        .count();
    assert_eq!(returned, DEFAULT_CONCRETIZATION_LIMIT);
    assert!(t
        .paths
        .iter()
        .any(|p| p.terminal == TerminalKind::Abandoned));
}

#[test]
fn float_arithmetic_is_unsupported() {
    let p = program(
        r#"(module (func (export "f") (result f32)
            f32.const 1 f32.const 2 f32.add))"#,
    );
    let t = run(&p, "f", &[]);
    assert_eq!(t.paths[0].terminal, TerminalKind::Unsupported);
}

#[test]
fn timeout_prunes_and_returns() {
    // 2^n paths of straight-line forks; the budget cuts them off
    let mut body = String::new();
    for i in 0..40 {
        body.push_str(&format!(
            "(if (i32.and (local.get 0) (i32.const {})) (then (local.set 1 (i32.add (local.get 1) (i32.const 1)))))",
            1u64 << (i % 31)
        ));
    }
    let src = format!(r#"(module (func (export "f") (param i32) (local i32) {body}))"#);
    let p = program(&src);
    let opts = ExplorationOptions {
        timeout: Duration::from_millis(300),
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let t = explore(&p, 0, &[SymExpr::var_untainted("x", 32)], &opts).unwrap();
    assert!(start.elapsed() < Duration::from_secs(3));
    assert!(t.stats.timed_out);
    assert!(t
        .paths
        .iter()
        .any(|p| p.terminal == TerminalKind::TimeoutPruned));
}

#[test]
fn replay_follows_model() {
    let p = program(
        r#"(module
            (import "env" "current_time" (func $t (result i64)))
            (import "env" "send_inline" (func $s (param i32 i32)))
            (import "env" "prints" (func $p (param i32)))
            (memory 1)
            (func (export "f") (param i64)
              (if (i64.eq (i64.rem_u (call $t) (i64.const 7)) (local.get 0))
                (then (call $s (i32.const 0) (i32.const 0)))
                (else (call $p (i32.const 0))))))"#,
    );
    let x = SymExpr::var_untainted("x", 64);
    let t = run(&p, "f", std::slice::from_ref(&x));
    let target = t
        .paths
        .iter()
        .find(|p| p.calls_import("send_inline"))
        .unwrap();
    let s = Solver::default();
    let SatResult::Sat(m) = s.check(&target.constraint_exprs()) else {
        panic!("witness unsat")
    };
    let xv = SymExpr::u64(eval_u128(&x, &m) as u64);
    let r = replay(
        &p,
        local_index(&p, "f"),
        &[xv],
        &m,
        &ExplorationOptions::default(),
        &s,
    )
    .unwrap();
    assert_eq!(r.paths.len(), 1);
    assert_eq!(r.paths[0].import_names(), target.import_names());
}

#[test]
fn indirect_call_forks_over_table() {
    let p = program(
        r#"(module
            (type $t (func (result i32)))
            (table 3 funcref)
            (elem (i32.const 0) $a $b)
            (func $a (result i32) i32.const 1)
            (func $b (result i32) i32.const 2)
            (func (export "f") (param i32) (result i32)
              (call_indirect (type $t) (local.get 0))))"#,
    );
    let t = run(&p, "f", &[SymExpr::var_untainted("i", 32)]);
    let mut rets: Vec<_> = t
        .paths
        .iter()
        .filter(|p| p.terminal == TerminalKind::Returned)
        .map(|p| p.return_values[0].as_const().unwrap())
        .collect();
    rets.sort();
    assert_eq!(rets, vec![1, 2]);
    assert!(t.paths.iter().any(|p| p.terminal == TerminalKind::Trapped));
}

#[test]
fn rejects_bad_arguments() {
    let p = program(r#"(module (func (export "f") (param i64)))"#);
    assert!(matches!(
        explore(&p, 0, &[], &ExplorationOptions::default()),
        Err(EngineError::ArgumentMismatch { .. })
    ));
    let opts = ExplorationOptions {
        call_depth: 0,
        ..Default::default()
    };
    assert!(matches!(
        explore(&p, 0, &[SymExpr::u64(0)], &opts),
        Err(EngineError::InvalidOptions(_))
    ));
}

#[test]
fn filter_abandons_paths() {
    let p = program(
        r#"(module (func (export "f") (param i32) (result i32)
            (block (br_if 0 (local.get 0)) (return (i32.const 1)))
            i32.const 2))"#,
    );
    let filter: PathFilter = Arc::new(|ev, _st, _s| match ev {
        PathEvent::ConstraintAdded(c) if c.expr.kind_is_not() => FilterAction::Abandon,
        _ => FilterAction::Continue,
    });
    let opts = ExplorationOptions::default().with_filter(filter);
    let t = explore(&p, 0, &[SymExpr::var_untainted("x", 32)], &opts).unwrap();
    let kinds: Vec<_> = t.paths.iter().map(|p| p.terminal).collect();
    assert!(kinds.contains(&TerminalKind::Filtered));
    assert!(kinds.contains(&TerminalKind::Returned));
}

trait KindIsNot {
    fn kind_is_not(&self) -> bool;
}

impl KindIsNot for SymExpr {
    fn kind_is_not(&self) -> bool {
        matches!(self.kind(), crate::symbolic::Kind::Not(_))
    }
}
