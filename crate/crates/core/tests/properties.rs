use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use eosguard_core::attacks::{
    flag_fake_eos_attacks, flag_rollback_attacks, ActionRecord, AttackConfig, Confidence,
    TransactionRecord, TransferPayload,
};
use eosguard_core::eosio::{name_decode, name_encode, ApplyContext};
use eosguard_core::scanner::ScanOptions;
use eosguard_core::symbolic::{
    eval_u128, taint_of, unwritten_byte_name, BinOp, BitVal, Model, Origin, Pred, Solver, UnOp,
};
use eosguard_core::wasm::serialize_module;
use eosguard_core::{
    build_cfg, explore, find_apply, parse_module, scan, ExplorationOptions, Program, SymExpr,
    SymbolicMemory, Verdict,
};
use proptest::prelude::*;
use rust_decimal::Decimal;

fn corpus_binaries() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus/wasm");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "wasm"))
        .collect();
    v.sort();
    v
}

// ---- memory ----

#[derive(Debug, Clone)]
enum MemOp {
    Store(u64, u64, u64),
    Load(u64, u64),
}

fn mem_op() -> impl Strategy<Value = MemOp> {
    let len = prop::sample::select(vec![1u64, 2, 4, 8]);
    prop_oneof![
        (0u64..120, len.clone(), any::<u64>()).prop_map(|(a, l, v)| MemOp::Store(a, l, v)),
        (0u64..120, len).prop_map(|(a, l)| MemOp::Load(a, l)),
    ]
}

proptest! {
    #[test]
    fn memory_matches_flat_oracle(init in prop::collection::vec(any::<u8>(), 128),
                                  ops in prop::collection::vec(mem_op(), 1..80)) {
        let mut oracle = init.clone();
        // never-written bytes load as variables; bind them to the oracle's
        // initial contents
        let model: Model = (0..128u64)
            .map(|a| (unwritten_byte_name(a), BitVal::from_u128(init[a as usize] as u128, 8)))
            .collect();
        let mut m = SymbolicMemory::with_pages(1);
        for op in ops {
            match op {
                MemOp::Store(a, l, v) => {
                    let bytes = &v.to_le_bytes()[..l as usize];
                    m.store(a, l, SymExpr::from_bytes(bytes)).unwrap();
                    oracle[a as usize..(a + l) as usize].copy_from_slice(bytes);
                }
                MemOp::Load(a, l) => {
                    let got = eval_u128(&m.load(a, l).unwrap(), &model);
                    let mut want = [0u8; 16];
                    want[..l as usize].copy_from_slice(&oracle[a as usize..(a + l) as usize]);
                    prop_assert_eq!(got, u128::from_le_bytes(want));
                }
            }
            prop_assert!(m.audit_storage().is_ok(), "{:?}", m.audit_storage());
        }
    }

    #[test]
    fn unwritten_loads_are_memoized(a in 0u64..1000, l in prop::sample::select(vec![1u64, 2, 4, 8])) {
        let m = SymbolicMemory::with_pages(1);
        prop_assert_eq!(m.load(a, l).unwrap(), m.load(a, l).unwrap());
    }
}

// ---- names ----

fn valid_name() -> impl Strategy<Value = String> {
    ("[.1-5a-z]{0,11}[1-5a-z]", prop::option::of("[1-5a-j]")).prop_map(|(head, tail)| match tail {
        Some(t) if head.len() == 12 => head + &t,
        _ => head,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn name_round_trip(s in valid_name()) {
        let v = name_encode(&s).unwrap();
        prop_assert_eq!(name_decode(v.value()), s);
    }

    #[test]
    fn decoded_names_use_the_charset(v in any::<u64>()) {
        let s = name_decode(v);
        prop_assert!(s.len() <= 13);
        prop_assert!(s.bytes().all(|c| b".12345abcdefghijklmnopqrstuvwxyz".contains(&c)));
        prop_assert_eq!(name_encode(&s).unwrap().value(), v);
    }
}

// ---- expressions: bit-blaster agrees with the evaluator ----

const W: u32 = 16;

fn leaf() -> impl Strategy<Value = SymExpr> {
    prop_oneof![
        prop::sample::select(vec!["x", "y", "z"]).prop_map(|n| SymExpr::var_untainted(n, W)),
        any::<u16>().prop_map(|v| SymExpr::constant(v as u128, W)),
        prop::sample::select(vec![0u16, 1, 0x8000, 0xffff])
            .prop_map(|v| SymExpr::constant(v as u128, W)),
    ]
}

fn expr() -> impl Strategy<Value = SymExpr> {
    let binops = vec![
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::UDiv,
        BinOp::SDiv,
        BinOp::URem,
        BinOp::SRem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::LShr,
        BinOp::AShr,
        BinOp::Rotl,
        BinOp::Rotr,
    ];
    let unops = vec![UnOp::Not, UnOp::Neg, UnOp::Clz, UnOp::Ctz, UnOp::Popcnt];
    let preds = vec![Pred::Eq, Pred::Ult, Pred::Ule, Pred::Slt, Pred::Sle];
    leaf().prop_recursive(4, 24, 2, move |inner| {
        prop_oneof![
            (
                prop::sample::select(binops.clone()),
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| SymExpr::binary(op, &a, &b)),
            (prop::sample::select(unops.clone()), inner.clone())
                .prop_map(|(op, a)| SymExpr::unary(op, &a)),
            (
                prop::sample::select(preds.clone()),
                inner.clone(),
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(p, a, b, c)| SymExpr::ite(
                    &SymExpr::cmp(p, &a, &b),
                    &c,
                    &a
                )),
            (inner.clone(), 0u32..8).prop_map(|(a, lo)| a.extract(lo, 8).zext(W)),
            (inner.clone(), inner)
                .prop_map(|(a, b)| { SymExpr::concat(vec![a.extract(8, 8), b.extract(0, 8)]) }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn solver_agrees_with_evaluator(e in expr(), x in any::<u16>(), y in any::<u16>(), z in any::<u16>()) {
        let model: Model = [("x", x), ("y", y), ("z", z)]
            .into_iter()
            .map(|(n, v)| (n.to_string(), BitVal::from_u128(v as u128, W)))
            .collect();
        let want = eval_u128(&e, &model);
        let pins: Vec<SymExpr> = [("x", x), ("y", y), ("z", z)]
            .into_iter()
            .map(|(n, v)| SymExpr::var_untainted(n, W).eq(&SymExpr::constant(v as u128, W)))
            .collect();
        let solver = Solver::new(Duration::from_secs(30));
        let value = SymExpr::constant(want, W);
        let mut same = pins.clone();
        same.push(e.eq(&value));
        prop_assert!(solver.check(&same).is_sat());
        let mut differ = pins;
        differ.push(e.ne(&value));
        prop_assert!(solver.check(&differ).is_unsat());
    }
}

// ---- taint ----

fn origin() -> impl Strategy<Value = Origin> {
    prop_oneof![
        Just(Origin::BlockchainState),
        Just(Origin::ApplyArgCode),
        Just(Origin::ApplyArgAction),
        Just(Origin::ApplyArgReceiver),
        Just(Origin::ActionData),
        Just(Origin::ImportReturn("current_time".into())),
    ]
}

fn tainted_var(name: &'static str) -> impl Strategy<Value = SymExpr> {
    prop::collection::btree_set(origin(), 0..3)
        .prop_map(move |t| SymExpr::var_with_taint(name, W, t))
}

proptest! {
    #[test]
    fn taint_is_the_union_of_operands(a in tainted_var("a"), b in tainted_var("b"),
                                      op in prop::sample::select(vec![BinOp::Add, BinOp::Mul, BinOp::URem, BinOp::Xor, BinOp::And])) {
        let r = SymExpr::binary(op, &a, &b);
        let want: BTreeSet<Origin> = taint_of(&a).union(&taint_of(&b)).cloned().collect();
        prop_assert_eq!(taint_of(&r), want);
        let c = SymExpr::cmp(Pred::Ult, &a, &b);
        prop_assert_eq!(taint_of(&c), taint_of(&r));
    }
}

// ---- attack heuristics ----

fn t(code: &str, from: &str, to: &str, qty: u32, issuer: &str) -> ActionRecord {
    ActionRecord {
        code_account: code.into(),
        action_name: "transfer".into(),
        receiver: code.into(),
        authorizers: vec![from.into()],
        transfer_payload: Some(TransferPayload {
            from: from.into(),
            to: to.into(),
            quantity: Decimal::from(qty),
            symbol: "EOS".into(),
            issuer: issuer.into(),
        }),
    }
}

#[derive(Debug, Clone)]
enum Ev {
    Fake(usize, u32),
    Pay(usize, u32),
    Win(usize, u32, u32),
}

fn events() -> impl Strategy<Value = Vec<(Ev, i64)>> {
    let ev = prop_oneof![
        (0usize..4, 1u32..100).prop_map(|(u, q)| Ev::Fake(u, q)),
        (0usize..4, 1u32..100).prop_map(|(u, q)| Ev::Pay(u, q)),
        (0usize..4, 1u32..100, 1u32..100).prop_map(|(u, a, b)| Ev::Win(u, a, b)),
    ];
    prop::collection::vec((ev, 0i64..50_000), 0..60)
}

const USERS: [&str; 4] = ["alice", "bob", "carol", "dave"];

fn log_of(evs: &[(Ev, i64)]) -> Vec<TransactionRecord> {
    let tk = "eosio.token";
    let mut now = 0;
    evs.iter()
        .enumerate()
        .map(|(i, (ev, dt))| {
            now += dt;
            let actions = match *ev {
                Ev::Fake(u, q) => vec![t("fakecoin", USERS[u], "dice", q, "fakecoin")],
                Ev::Pay(u, q) => vec![t(tk, "dice", USERS[u], q, tk)],
                Ev::Win(u, a, b) => vec![
                    t("helper", USERS[u], "helper", 0, "helper"),
                    t(tk, USERS[u], "dice", a, tk),
                    t(tk, "dice", USERS[u], b, tk),
                    t("helper", USERS[u], "helper", 0, "helper"),
                ],
            };
            TransactionRecord {
                tx_id: format!("tx{i}"),
                block_time: now,
                actions,
            }
        })
        .collect()
}

fn ok_iter(
    log: &[TransactionRecord],
) -> impl Iterator<Item = Result<TransactionRecord, eosguard_core::attacks::AttackError>> + '_ {
    log.iter().cloned().map(Ok)
}

proptest! {
    #[test]
    fn attack_flags_are_well_formed(evs in events()) {
        let log = log_of(&evs);
        let ids: BTreeSet<&str> = log.iter().map(|t| t.tx_id.as_str()).collect();
        let victims = BTreeSet::from(["dice".to_string()]);
        let mut flags = flag_fake_eos_attacks(ok_iter(&log), &victims, &AttackConfig::default()).unwrap();
        flags.extend(flag_rollback_attacks(ok_iter(&log), &victims).unwrap());
        for f in &flags {
            prop_assert_eq!(&f.victim, "dice");
            prop_assert!(!f.tx_ids.is_empty());
            prop_assert!(f.tx_ids.iter().all(|id| ids.contains(id.as_str())));
            if f.confidence == Confidence::Suspicious {
                prop_assert!(f.gain_estimate >= Decimal::ZERO);
            }
        }
        // every user that sent fake EOS to the victim is flagged at least as potential
        let fakers: BTreeSet<&str> = evs.iter().filter_map(|(e, _)| match e {
            Ev::Fake(u, _) => Some(USERS[*u]),
            _ => None,
        }).collect();
        let flagged: BTreeSet<&str> = flags.iter()
            .filter(|f| f.kind == eosguard_core::attacks::AttackKind::FakeEos)
            .map(|f| f.suspects[0].as_str()).collect();
        prop_assert_eq!(flagged, fakers);
    }
}

// ---- whole-corpus properties ----

#[test]
fn corpus_binaries_reserialize_exactly() {
    for p in corpus_binaries() {
        let bytes = std::fs::read(&p).unwrap();
        let m = parse_module(&bytes).unwrap();
        assert_eq!(serialize_module(&m), bytes, "{}", p.display());
        assert_eq!(parse_module(&bytes).unwrap(), m);
    }
}

#[test]
fn corpus_cfgs_partition_bodies() {
    for p in corpus_binaries() {
        let m = parse_module(&std::fs::read(&p).unwrap()).unwrap();
        for i in 0..m.code.len() {
            let func = m.imported_function_count() + i as u32;
            let cfg = build_cfg(&m, func).unwrap();
            let mut covered = vec![false; cfg.instructions.len()];
            for b in &cfg.blocks {
                for (k, c) in covered[b.start..b.end].iter_mut().enumerate() {
                    assert!(!*c, "{} f{func}: overlap at {}", p.display(), b.start + k);
                    *c = true;
                }
            }
            assert!(covered.iter().all(|c| *c), "{} f{func}", p.display());
        }
    }
}

#[test]
fn exploration_is_deterministic() {
    for p in corpus_binaries() {
        let m = parse_module(&std::fs::read(&p).unwrap()).unwrap();
        let apply = find_apply(&m).unwrap();
        let program = Program::new(m).unwrap();
        let args = ApplyContext::new().args();
        let opts = ExplorationOptions::default();
        let a = explore(&program, apply, &args, &opts).unwrap();
        let b = explore(&program, apply, &args, &opts).unwrap();
        assert_eq!(
            serde_json::to_string(&a.paths).unwrap(),
            serde_json::to_string(&b.paths).unwrap(),
            "{}",
            p.display()
        );
    }
}

#[test]
fn more_time_never_turns_vulnerable_into_safe() {
    let budgets = [
        Duration::from_millis(5),
        Duration::from_millis(50),
        Duration::from_secs(30),
    ];
    for p in corpus_binaries() {
        let id = p.file_stem().unwrap().to_string_lossy().into_owned();
        let m = parse_module(&std::fs::read(&p).unwrap()).unwrap();
        let mut previous: Option<Vec<Verdict>> = None;
        for budget in budgets {
            let mut opts = ScanOptions {
                is_gambling: true,
                ..ScanOptions::default()
            };
            opts.exploration.timeout = budget;
            let now: Vec<Verdict> = scan(&id, m.clone(), &opts)
                .iter()
                .map(|f| f.verdict)
                .collect();
            if let Some(prev) = &previous {
                for (a, b) in prev.iter().zip(&now) {
                    assert!(
                        !(*a == Verdict::Vulnerable && *b == Verdict::Safe),
                        "{id}: {prev:?} -> {now:?} at {budget:?}"
                    );
                }
            }
            previous = Some(now);
        }
    }
}
