use std::collections::{BTreeMap, BTreeSet};

use crate::emulator::{category_of, Category, ACTION_DATA_VAR};
use crate::engine::{Diagnostics, PathRecord, PathTree, RemSite};
use crate::eosio::name_decode;
use crate::symbolic::{Origin, SatResult, SymExpr};
use crate::wasm::WasmModule;

use super::{
    call_stack_at, reverts, Criterion, Detector, Finding, Occurrence, ScanContext, Verdict, Witness,
};

/// Byte sequences identifying helpers shipped with the EOSIO toolchain whose
/// remainder instructions are not contract logic.
pub const LIBRARY_SIGNATURES: &[&[u8]] = &[
    // digit extraction in printui/printi: `i64.const 10; i64.rem_u; i32.wrap_i64; i32.const 48; i32.add`
    &[0x42, 0x0a, 0x82, 0xa7, 0x41, 0x30, 0x6a],
    // same with i32 arithmetic
    &[0x41, 0x0a, 0x70, 0x41, 0x30, 0x6a],
];

/// Whether the body of `func` contains a library signature.
pub fn is_library_function(module: &WasmModule, func: u32) -> bool {
    module.body(func).is_some_and(|b| {
        LIBRARY_SIGNATURES
            .iter()
            .any(|sig| b.code.windows(sig.len()).any(|w| w == *sig))
    })
}

/// The `to` field of a transfer payload.
fn transfer_to() -> SymExpr {
    SymExpr::var(
        ACTION_DATA_VAR,
        (8 * crate::emulator::ACTION_DATA_SIZE) as u32,
        Origin::ActionData,
    )
    .extract(64, 64)
}

#[allow(clippy::result_large_err)]
fn dispatcher(ctx: &ScanContext, detector: Detector) -> Result<(), Finding> {
    let Err(msg) = ctx.apply_index() else {
        return Ok(());
    };
    let mut f = Finding::new(ctx, detector, Verdict::Inconclusive);
    if msg.starts_with("no dispatcher") {
        f.diagnostics.no_dispatcher = true;
    } else {
        f.diagnostics.pruning.unsupported = true;
    }
    f.diagnostics.notes.push(msg.to_string());
    Err(f)
}

/// The shared apply tree, or the finding to report when it is unavailable.
#[allow(clippy::result_large_err)]
fn apply_tree(ctx: &ScanContext, detector: Detector) -> Result<&PathTree, Finding> {
    dispatcher(ctx, detector)?;
    ctx.apply_tree().map_err(|msg| {
        let mut f = Finding::new(ctx, detector, Verdict::Inconclusive);
        f.diagnostics.pruning.unsupported = true;
        f.diagnostics.notes.push(msg);
        f
    })
}

fn conclude(
    ctx: &ScanContext,
    detector: Detector,
    witness: Option<Witness>,
    mut diag: Diagnostics,
    unknown: bool,
) -> Finding {
    diag.solver_unknown |= unknown;
    let verdict = if witness.is_some() {
        Verdict::Vulnerable
    } else if diag.timeout || diag.solver_unknown {
        Verdict::Inconclusive
    } else {
        Verdict::Safe
    };
    let mut f = Finding::new(ctx, detector, verdict);
    f.witness = witness;
    f.diagnostics.pruning = diag;
    f
}

/// Apply paths that can commit and on which `action` must be `transfer`.
fn transfer_paths<'t>(
    ctx: &ScanContext,
    tree: &'t PathTree,
    unknown: &mut bool,
) -> Vec<&'t PathRecord> {
    tree.paths
        .iter()
        .filter(|p| !reverts(p))
        .filter(|p| match ctx.forces_transfer(&p.constraint_exprs()) {
            Some(b) => b,
            None => {
                *unknown = true;
                false
            }
        })
        .collect()
}

fn criterion(o: &Occurrence) -> Criterion {
    Criterion::of_import(&o.path.import_calls[o.import_index].name)
        .expect("occurrences are valuable calls")
}

pub fn detect_fake_eos(ctx: &ScanContext) -> Finding {
    let tree = match apply_tree(ctx, Detector::FakeEos) {
        Ok(t) => t,
        Err(f) => return f,
    };
    let mut diag = tree.diagnostics();
    let mut unknown = false;
    let code = &ctx.apply_ctx.code;
    let direct = code.eq(&ctx.apply_ctx.receiver);
    let mut witness = None;
    for p in transfer_paths(ctx, tree, &mut unknown) {
        let handlers = ctx.deep_handlers(p);
        let occs = ctx.occurrences_on(p, &handlers, &mut diag);
        if !occs.iter().any(|o| criterion(o) == Criterion::SendInline) {
            continue;
        }
        let cs = p.constraint_exprs();
        let unchecked = !cs.iter().any(|c| c.mentions_var("code"));
        let mut q = cs.clone();
        q.push(direct.clone());
        q.push(ctx.not_token_axiom());
        let trace: Vec<String> = p.import_names().into_iter().map(String::from).collect();
        let apply = ctx.apply_index().expect("checked by apply_tree");
        match ctx.check(&q) {
            SatResult::Sat(_) => {
                witness = Witness::build(ctx, apply, ctx.apply_ctx.args(), q, trace);
            }
            SatResult::Unknown if !unchecked => unknown = true,
            _ if unchecked => {
                witness = Witness::build(ctx, apply, ctx.apply_ctx.args(), cs, trace);
            }
            _ => {}
        }
        if witness.is_some() {
            break;
        }
    }
    conclude(ctx, Detector::FakeEos, witness, diag, unknown)
}

pub fn detect_fake_receipt(ctx: &ScanContext) -> Finding {
    let tree = match apply_tree(ctx, Detector::FakeReceipt) {
        Ok(t) => t,
        Err(f) => return f,
    };
    let mut diag = tree.diagnostics();
    let mut unknown = false;
    let paths = transfer_paths(ctx, tree, &mut unknown);
    let to_ne_self = transfer_to().ne(&ctx.apply_ctx.receiver);
    let apply = ctx.apply_index().expect("checked by apply_tree");
    let mut owners = BTreeSet::new();
    let mut location_failed = false;
    let mut witness = None;
    for p in paths {
        let handlers = ctx.deep_handlers(p);
        if handlers.iter().any(|(_, t)| t.is_err()) {
            location_failed = true;
        }
        let occs = ctx.occurrences_on(p, &handlers, &mut diag);
        // later valuable calls on the same path see a superset of constraints
        let Some(first) = occs.first() else { continue };
        let owner = if first.entry == apply {
            call_stack_at(first.path, first.import_index)
                .get(1)
                .copied()
                .unwrap_or(apply)
        } else {
            first.entry
        };
        owners.insert(owner);
        if witness.is_some() {
            continue;
        }
        let mut q = first.constraints_before_call();
        q.push(to_ne_self.clone());
        match ctx.check(&q) {
            SatResult::Sat(_) => {
                witness = Witness::build(ctx, first.entry, first.args.clone(), q, first.trace());
            }
            SatResult::Unknown => unknown = true,
            SatResult::Unsat => {}
        }
    }
    let mut f = if owners.len() > 1 || location_failed {
        let mut f = conclude(ctx, Detector::FakeReceipt, None, diag, unknown);
        f.verdict = Verdict::Inconclusive;
        f.diagnostics.ambiguous_handler = owners.len() > 1;
        f.diagnostics.pruning.unsupported |= location_failed;
        f.diagnostics.notes.push(format!(
            "transfer handler location failed: {} valuable candidates",
            owners.len()
        ));
        f
    } else {
        conclude(ctx, Detector::FakeReceipt, witness, diag, unknown)
    };
    if owners.is_empty() && f.verdict == Verdict::Safe {
        f.diagnostics
            .notes
            .push("no valuable transfer handler".into());
    }
    f
}

struct RollbackCandidate<'t> {
    occurrence: Occurrence<'t>,
    visited: BTreeSet<(u32, u32)>,
    rems: Vec<RemSite>,
}

fn suspicious_rem(r: &RemSite) -> bool {
    r.dividend.taint().contains(&Origin::BlockchainState)
        && !r.divisor.taint().contains(&Origin::BlockchainState)
}

pub fn detect_rollback(ctx: &ScanContext) -> Finding {
    if let Err(f) = dispatcher(ctx, Detector::Rollback) {
        return f;
    }
    if !ctx.options.is_gambling {
        let mut f = Finding::new(ctx, Detector::Rollback, Verdict::Safe);
        f.diagnostics.gated = true;
        f.diagnostics
            .notes
            .push("gated: contract is not labeled gambling".into());
        return f;
    }
    let tree = match apply_tree(ctx, Detector::Rollback) {
        Ok(t) => t,
        Err(f) => return f,
    };
    let program = ctx.program().expect("checked by apply_tree");
    let apply = ctx.apply_index().expect("checked by apply_tree");
    let mut diag = tree.diagnostics();
    let mut library: BTreeMap<u32, bool> = BTreeMap::new();
    let mut candidates: Vec<RollbackCandidate> = Vec::new();
    let handler_sets: Vec<_> = tree
        .paths
        .iter()
        .map(|p| (p, ctx.deep_handlers(p)))
        .collect();
    for (p, handlers) in &handler_sets {
        if reverts(p) {
            continue;
        }
        for occ in ctx.occurrences_on(p, handlers, &mut diag) {
            if criterion(&occ) != Criterion::SendInline {
                continue;
            }
            let limit = occ.path.import_calls[occ.import_index].constraint_index;
            let mut visited = occ.path.visited.clone();
            let mut rems: Vec<RemSite> = Vec::new();
            if occ.entry != apply {
                let cut = occ.prefix.len();
                visited.extend(p.visited.iter().copied());
                rems.extend(
                    p.rem_sites
                        .iter()
                        .filter(|r| r.constraint_index <= cut)
                        .cloned(),
                );
            }
            rems.extend(
                occ.path
                    .rem_sites
                    .iter()
                    .filter(|r| r.constraint_index <= limit)
                    .cloned(),
            );
            candidates.push(RollbackCandidate {
                occurrence: occ,
                visited,
                rems,
            });
        }
    }
    // drop paths whose blocks are covered by another candidate
    let retained: Vec<&RollbackCandidate> = candidates
        .iter()
        .enumerate()
        .filter(|(i, c)| {
            !candidates.iter().enumerate().any(|(j, o)| {
                j != *i
                    && c.visited.is_subset(&o.visited)
                    && (c.visited.len() < o.visited.len() || j < *i)
            })
        })
        .map(|(_, c)| c)
        .collect();
    let mut witness = None;
    'outer: for c in retained {
        for r in &c.rems {
            let lib = *library
                .entry(r.func)
                .or_insert_with(|| is_library_function(program.module(), r.func));
            if lib || !suspicious_rem(r) {
                continue;
            }
            let o = &c.occurrence;
            witness = Witness::build(
                ctx,
                o.entry,
                o.args.clone(),
                o.constraints_before_call(),
                o.trace(),
            );
            if witness.is_some() {
                break 'outer;
            }
        }
    }
    let mut f = conclude(ctx, Detector::Rollback, witness, diag, false);
    if candidates.is_empty() && f.verdict == Verdict::Safe {
        f.diagnostics.notes.push("no reveal candidate".into());
    }
    f
}

pub fn detect_missing_permission(ctx: &ScanContext) -> Finding {
    let tree = match apply_tree(ctx, Detector::MissingPermission) {
        Ok(t) => t,
        Err(f) => return f,
    };
    let mut diag = tree.diagnostics();
    let mut unknown = false;
    let direct = ctx.apply_ctx.code.eq(&ctx.apply_ctx.receiver);
    let mut actions = BTreeSet::new();
    let mut witness: Option<Witness> = None;
    for p in tree.paths.iter().filter(|p| !reverts(p)) {
        let handlers = ctx.deep_handlers(p);
        let occs = ctx.occurrences_on(p, &handlers, &mut diag);
        let Some(first) = occs.first() else { continue };
        let trace = first.trace();
        let guarded = trace[..trace.len() - 1]
            .iter()
            .any(|name| category_of(name) == Some(Category::Authority));
        if guarded {
            continue;
        }
        let mut q = first.constraints_before_call();
        q.push(direct.clone());
        q.push(ctx.not_token_axiom());
        let model = match ctx.check(&q) {
            SatResult::Sat(m) => m,
            SatResult::Unknown => {
                unknown = true;
                continue;
            }
            SatResult::Unsat => continue,
        };
        let action = ctx
            .forced_action(&q)
            .unwrap_or_else(|| crate::symbolic::eval_u128(&ctx.apply_ctx.action, &model) as u64);
        let name = name_decode(action);
        actions.insert(name);
        if witness.is_none() {
            witness = Witness::build(ctx, first.entry, first.args.clone(), q, trace);
        }
    }
    if let Some(w) = witness.as_mut() {
        w.actions = actions.into_iter().collect();
    }
    conclude(ctx, Detector::MissingPermission, witness, diag, unknown)
}
