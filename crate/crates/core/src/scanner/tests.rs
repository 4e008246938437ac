use std::path::Path;
use std::time::Duration;

use super::*;
use crate::engine::{explore, ExplorationOptions, Program};
use crate::wasm::parse_module;

fn module(wat_src: &str) -> WasmModule {
    parse_module(&wat::parse_str(wat_src).unwrap()).unwrap()
}

fn fixture(id: &str) -> WasmModule {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus/src")
        .join(format!("{id}.wat"));
    parse_module(&wat::parse_file(path).unwrap()).unwrap()
}

fn options(depth: u32) -> ScanOptions {
    ScanOptions {
        exploration: ExplorationOptions {
            call_depth: depth,
            ..ExplorationOptions::default()
        },
        is_gambling: true,
        ..ScanOptions::default()
    }
}

fn verdicts(fs: &[Finding]) -> Vec<Verdict> {
    fs.iter().map(|f| f.verdict).collect()
}

#[test]
fn empty_module_is_inconclusive_everywhere() {
    let fs = scan("empty", module("(module)"), &ScanOptions::default());
    assert_eq!(fs.len(), 4);
    for f in &fs {
        assert_eq!(f.verdict, Verdict::Inconclusive);
        assert!(f.diagnostics.no_dispatcher);
        assert!(f.diagnostics.any_pruning());
    }
    let order: Vec<Detector> = fs.iter().map(|f| f.detector).collect();
    assert_eq!(order, Detector::ALL);
}

const PLAIN_HANDLER: &str = r#"
(module
  (import "env" "read_action_data" (func $read (param i32 i32) (result i32)))
  (memory 1)
  (export "apply" (func $apply))
  (func $apply (param i64 i64 i64)
    (if (i64.eq (local.get 2) (i64.const 0xcdcd3c2d57000000))
      (then (call $on_transfer))))
  (func $on_transfer
    (drop (call $read (i32.const 0) (i32.const 16)))
    (i64.store (i32.const 64) (i64.add (i64.load (i32.const 0)) (i64.const 1)))))
"#;

#[test]
fn handler_without_valuable_operation_is_safe() {
    let fs = scan("plain", module(PLAIN_HANDLER), &ScanOptions::default());
    assert_eq!(verdicts(&fs), [Verdict::Safe; 4]);
}

#[test]
fn valuable_function_criteria() {
    let m = module(
        r#"
(module
  (import "env" "send_inline" (func $send (param i32 i32)))
  (import "env" "db_store_i64" (func $store (param i64 i64 i64 i64 i32 i32) (result i32)))
  (memory 1)
  (func $root (param i32)
    (if (local.get 0)
      (then (call $pays))
      (else (call $stores)))
    (drop (call $pure (i32.const 3))))
  (func $pays (call $send (i32.const 0) (i32.const 8)))
  (func $stores
    (drop (call $store (i64.const 1) (i64.const 2) (i64.const 3) (i64.const 4) (i32.const 0) (i32.const 8))))
  (func $pure (param i32) (result i32) (i32.mul (local.get 0) (local.get 0))))
"#,
    );
    let idx = |name: &str| {
        m.function_names
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(i, _)| *i)
            .unwrap()
    };
    let program = Program::new(m.clone()).unwrap();
    let tree = explore(
        &program,
        idx("root"),
        &[SymExpr::var_untainted("x", 32)],
        &ExplorationOptions::default(),
    )
    .unwrap();
    let set = locate_valuable_functions(&m, &[&tree]);
    assert!(set.has_criterion(idx("pays"), Criterion::SendInline));
    assert!(!set.has_criterion(idx("pays"), Criterion::DbStore));
    assert!(set.has_criterion(idx("stores"), Criterion::DbStore));
    assert!(!set.contains(idx("pure")));
    // the caller inherits both criteria
    assert!(set.has_criterion(idx("root"), Criterion::SendInline));
    assert!(set.has_criterion(idx("root"), Criterion::DbStore));
    for ev in set.members.values().flatten() {
        let p = &tree.paths[ev.path];
        assert!(p.calls_import(ev.criterion.import_name()));
    }
}

#[test]
fn call_stack_tracks_active_frames() {
    let m = fixture("fake_eos_2");
    let program = Program::new(m.clone()).unwrap();
    let apply = crate::eosio::find_apply(&m).unwrap();
    let tree = explore(
        &program,
        apply,
        &ApplyContext::new().args(),
        &ExplorationOptions::default(),
    )
    .unwrap();
    let (p, i) = tree
        .paths
        .iter()
        .find_map(|p| {
            p.import_calls
                .iter()
                .position(|c| c.name == "send_inline")
                .map(|i| (p, i))
        })
        .unwrap();
    let stack = call_stack_at(p, i);
    assert_eq!(stack.len(), 3);
    assert_eq!(stack[0], apply);
    assert_eq!(m.function_label(stack[2]), "$pay");
    assert_eq!(*stack.last().unwrap(), p.import_calls[i].caller);
}

const NESTED_PERMISSION: &str = r#"
(module
  (import "env" "require_auth" (func $require_auth (param i64)))
  (import "env" "db_update_i64" (func $update (param i32 i64 i32 i32)))
  (memory 1)
  (export "apply" (func $apply))
  (func $apply (param $receiver i64) (param $code i64) (param $action i64)
    (if (i32.and
          (i64.eq (local.get $code) (local.get $receiver))
          (i64.eq (local.get $action) (i64.const 0x44546b8000000000)))
      (then (call $clear (local.get $receiver)))))
  (func $clear (param $self i64)
    ;;AUTH
    (call $erase (local.get $self)))
  (func $erase (param $self i64)
    (call $update (i32.const 0) (local.get $self) (i32.const 0) (i32.const 16))))
"#;

#[test]
fn handlers_beyond_depth_budget_are_explored_separately() {
    let nested = module(NESTED_PERMISSION);
    let nested_guarded =
        module(&NESTED_PERMISSION.replace(";;AUTH", "(call $require_auth (local.get $self))"));
    let cases = [
        (
            "fake_eos_2",
            fixture("fake_eos_2"),
            fixture("fake_eos_2_patched"),
            Detector::FakeEos,
        ),
        (
            "rollback_2",
            fixture("rollback_2"),
            fixture("rollback_2_patched"),
            Detector::Rollback,
        ),
        (
            "nested",
            nested,
            nested_guarded,
            Detector::MissingPermission,
        ),
    ];
    for (id, vulnerable, patched, detector) in cases {
        let ctx = ScanContext::new(id, vulnerable, options(1));
        let fs = scan_context(&ctx);
        let f = fs.iter().find(|f| f.detector == detector).unwrap();
        assert_eq!(f.verdict, Verdict::Vulnerable, "{id}: {:?}", f.diagnostics);
        assert!(f.diagnostics.pruning.depth, "{id}");
        let w = f.witness.as_ref().unwrap();
        let out = replay_witness(ctx.program().unwrap(), w, &ctx.options.exploration).unwrap();
        assert!(
            out.reproduced,
            "{id}: {:?} vs {:?}",
            out.trace, w.import_trace
        );
        let fs = scan(id, patched, &options(1));
        let f = fs.iter().find(|f| f.detector == detector).unwrap();
        assert_eq!(f.verdict, Verdict::Safe, "{id} patched");
    }
}

#[test]
fn library_remainders_are_excluded() {
    let m = fixture("rollback_2_patched");
    let printui = m
        .function_names
        .iter()
        .find(|(_, n)| n.as_str() == "printui")
        .map(|(i, _)| *i)
        .unwrap();
    assert!(detectors::is_library_function(&m, printui));
    let apply = crate::eosio::find_apply(&m).unwrap();
    assert!(!detectors::is_library_function(&m, apply));
}

#[test]
fn rollback_is_gated_on_label() {
    let opts = ScanOptions {
        is_gambling: false,
        ..ScanOptions::default()
    };
    let fs = scan("rollback_1", fixture("rollback_1"), &opts);
    let f = fs
        .iter()
        .find(|f| f.detector == Detector::Rollback)
        .unwrap();
    assert_eq!(f.verdict, Verdict::Safe);
    assert!(f.diagnostics.gated);
    assert!(f.diagnostics.notes.iter().any(|n| n.contains("gated")));
}

#[test]
fn exhausted_budget_is_inconclusive_with_flag() {
    let mut opts = options(2);
    opts.exploration.timeout = Duration::from_nanos(1);
    let fs = scan("fake_eos_1", fixture("fake_eos_1"), &opts);
    for f in &fs {
        if f.verdict == Verdict::Inconclusive {
            assert!(f.diagnostics.any_pruning());
        }
    }
    let fe = &fs[0];
    assert_eq!(fe.verdict, Verdict::Inconclusive);
    assert!(fe.diagnostics.pruning.timeout);
}

#[test]
fn notification_only_handler_is_not_flagged() {
    // deposit in this fixture stores rows without auth but only runs for
    // eosio.token notifications
    let fs = scan(
        "missing_permission_2_patched",
        fixture("missing_permission_2_patched"),
        &ScanOptions::default(),
    );
    let f = fs
        .iter()
        .find(|f| f.detector == Detector::MissingPermission)
        .unwrap();
    assert_eq!(f.verdict, Verdict::Safe);
}

#[test]
fn detector_names_round_trip() {
    for d in Detector::ALL {
        assert_eq!(Detector::parse(d.as_str()), Some(d));
        assert_eq!(serde_json::to_value(d).unwrap(), d.as_str());
    }
    assert_eq!(Detector::parse("overflow"), None);
}
