//! Per-contract vulnerability scanning.
//!
//! A [`ScanContext`] explores `apply` once and shares the resulting path tree
//! with every detector. Handlers whose behaviour lies beyond the call-depth
//! budget are explored on their own, seeded with the arguments `apply`
//! passed them.

mod detectors;
mod labels;
mod valuable;
mod witness;

use std::cell::{OnceCell, RefCell};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::engine::{explore_with, Diagnostics, ExplorationOptions, PathRecord, PathTree, Program};
use crate::eosio::{find_apply, n, ApplyContext, EOSIO_TOKEN, TRANSFER};
use crate::symbolic::{SatResult, Solver, SymExpr};
use crate::wasm::{Operator, WasmModule};

pub use detectors::{
    detect_fake_eos, detect_fake_receipt, detect_missing_permission, detect_rollback,
    LIBRARY_SIGNATURES,
};
pub use labels::{parse_labels, read_labels, LabelError, Labels};
pub use valuable::{
    call_stack_at, locate_valuable_functions, Criterion, Evidence, ValuableFunctionSet,
};
pub use witness::{replay_witness, ReplayOutcome, Witness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    FakeEos,
    FakeReceipt,
    Rollback,
    MissingPermission,
}

impl Detector {
    /// Execution order within a scan.
    pub const ALL: [Detector; 4] = [
        Detector::FakeEos,
        Detector::FakeReceipt,
        Detector::Rollback,
        Detector::MissingPermission,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Detector::FakeEos => "fake_eos",
            Detector::FakeReceipt => "fake_receipt",
            Detector::Rollback => "rollback",
            Detector::MissingPermission => "missing_permission",
        }
    }

    pub fn parse(s: &str) -> Option<Detector> {
        Detector::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Vulnerable,
    Safe,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Vulnerable => "vulnerable",
            Verdict::Safe => "safe",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Pruning and gating information attached to a finding.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FindingDiagnostics {
    #[serde(flatten)]
    pub pruning: Diagnostics,
    pub no_dispatcher: bool,
    /// More than one valuable transfer handler was found.
    pub ambiguous_handler: bool,
    pub gated: bool,
    pub notes: Vec<String>,
}

impl FindingDiagnostics {
    /// Whether any flag that can justify an inconclusive verdict is set.
    pub fn any_pruning(&self) -> bool {
        self.pruning.any() || self.no_dispatcher || self.ambiguous_handler
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub contract_id: String,
    pub detector: Detector,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub diagnostics: FindingDiagnostics,
}

impl Finding {
    pub(crate) fn new(ctx: &ScanContext, detector: Detector, verdict: Verdict) -> Self {
        Finding {
            contract_id: ctx.contract_id.clone(),
            detector,
            verdict,
            witness: None,
            diagnostics: FindingDiagnostics::default(),
        }
    }
}

/// Scanner settings for one contract.
#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub exploration: ExplorationOptions,
    pub detectors: Vec<Detector>,
    pub is_gambling: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            exploration: ExplorationOptions::default(),
            detectors: Detector::ALL.to_vec(),
            is_gambling: false,
        }
    }
}

/// A valuable import call found while exploring from some root.
#[derive(Debug, Clone)]
pub(crate) struct Occurrence<'t> {
    pub entry: u32,
    pub args: Vec<SymExpr>,
    /// Apply-path constraints in force when `entry` was called (empty when
    /// `entry` is `apply`).
    pub prefix: Vec<SymExpr>,
    /// Import names issued on the apply path before `entry` was called.
    pub prefix_imports: Vec<String>,
    pub path: &'t PathRecord,
    pub import_index: usize,
}

impl Occurrence<'_> {
    pub fn constraints_before_call(&self) -> Vec<SymExpr> {
        let c = self.path.import_calls[self.import_index].constraint_index;
        let mut cs = self.prefix.clone();
        cs.extend(self.path.constraints_before(c));
        cs
    }

    /// Import names up to and including the valuable call.
    pub fn trace(&self) -> Vec<String> {
        let mut t = self.prefix_imports.clone();
        t.extend(
            self.path.import_calls[..=self.import_index]
                .iter()
                .map(|c| c.name.clone()),
        );
        t
    }
}

/// Shared state for scanning one contract.
pub struct ScanContext {
    pub contract_id: String,
    pub options: ScanOptions,
    pub apply_ctx: ApplyContext,
    pub solver: Solver,
    setup: Result<(Program, u32), String>,
    deadline: Instant,
    apply_tree: OnceCell<Result<PathTree, String>>,
    handler_trees: RefCell<BTreeMap<(u32, String), SharedTree>>,
}

type SharedTree = Arc<Result<PathTree, String>>;

/// Paths whose state changes are discarded on chain.
pub(crate) fn reverts(p: &PathRecord) -> bool {
    use crate::engine::TerminalKind as T;
    matches!(p.terminal, T::AssertedFalse | T::Trapped)
}

impl ScanContext {
    pub fn new(contract_id: impl Into<String>, module: WasmModule, options: ScanOptions) -> Self {
        let start = Instant::now();
        let setup = find_apply(&module)
            .map_err(|e| e.to_string())
            .and_then(|apply| {
                Program::new(module)
                    .map(|p| (p, apply))
                    .map_err(|e| e.to_string())
            });
        let per_detector = options.exploration.timeout;
        let budget = per_detector.saturating_mul(options.detectors.len().max(1) as u32);
        ScanContext {
            contract_id: contract_id.into(),
            solver: Solver::default(),
            apply_ctx: ApplyContext::new(),
            deadline: crate::engine::deadline_after(start, budget),
            options,
            setup,
            apply_tree: OnceCell::new(),
            handler_trees: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn with_solver(mut self, solver: Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn program(&self) -> Result<&Program, &str> {
        self.setup.as_ref().map(|(p, _)| p).map_err(|e| e.as_str())
    }

    pub fn apply_index(&self) -> Result<u32, &str> {
        self.setup.as_ref().map(|(_, a)| *a).map_err(|e| e.as_str())
    }

    fn remaining_options(&self) -> ExplorationOptions {
        let mut o = self.options.exploration.clone();
        let left = self.deadline.saturating_duration_since(Instant::now());
        // an exhausted budget still runs, so the tree reports the timeout
        o.timeout = o.timeout.min(left).max(std::time::Duration::from_nanos(1));
        o
    }

    /// The unfiltered apply tree, explored on first use.
    pub fn apply_tree(&self) -> Result<&PathTree, String> {
        self.apply_tree
            .get_or_init(|| {
                let (program, apply) = self.setup.as_ref().map_err(|e| e.clone())?;
                explore_with(
                    program,
                    *apply,
                    &self.apply_ctx.args(),
                    &self.remaining_options(),
                    &self.solver,
                )
                .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// Exploration of `func` on its own, with the given arguments.
    pub(crate) fn handler_tree(&self, func: u32, args: &[SymExpr]) -> SharedTree {
        let key = (
            func,
            args.iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        if let Some(t) = self.handler_trees.borrow().get(&key) {
            return t.clone();
        }
        let tree = match &self.setup {
            Err(e) => Err(e.clone()),
            Ok((program, _)) => {
                explore_with(program, func, args, &self.remaining_options(), &self.solver)
                    .map_err(|e| e.to_string())
            }
        };
        let tree = Arc::new(tree);
        self.handler_trees.borrow_mut().insert(key, tree.clone());
        tree
    }

    /// Local functions called directly from the body of `apply`.
    pub fn dispatch_targets(&self) -> Vec<u32> {
        let Ok((program, apply)) = &self.setup else {
            return Vec::new();
        };
        let Ok(cfg) = program.cfg(*apply) else {
            return Vec::new();
        };
        let mut out: Vec<u32> = cfg
            .instructions
            .iter()
            .filter_map(|i| match i.op {
                Operator::Call(f) if !program.module().is_imported(f) => Some(f),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Assumption that the scanned contract is not the system token contract.
    pub fn not_token_axiom(&self) -> SymExpr {
        self.apply_ctx.receiver.ne(&SymExpr::u64(n(EOSIO_TOKEN)))
    }

    pub fn transfer_name(&self) -> SymExpr {
        SymExpr::u64(n(TRANSFER))
    }

    pub fn check(&self, cs: &[SymExpr]) -> SatResult {
        self.solver.check_until(cs, Some(self.deadline))
    }

    /// Whether `cs` forces `action` to be `transfer`.
    pub(crate) fn forces_transfer(&self, cs: &[SymExpr]) -> Option<bool> {
        let mut q = cs.to_vec();
        q.push(self.apply_ctx.action.ne(&self.transfer_name()));
        match self.check(&q) {
            SatResult::Unsat => Some(true),
            SatResult::Sat(_) => Some(false),
            SatResult::Unknown => None,
        }
    }

    /// The single action name `cs` forces, if any.
    pub(crate) fn forced_action(&self, cs: &[SymExpr]) -> Option<u64> {
        let (vals, complete) =
            self.solver
                .enumerate_values(cs, &self.apply_ctx.action, 2, Some(self.deadline));
        (complete && vals.len() == 1).then(|| vals[0] as u64)
    }

    /// Valuable import calls reachable from the apply path `p`, descending
    /// into depth-one callees explored on their own when `p` was cut short by
    /// the call-depth budget.
    pub(crate) fn occurrences_on<'t>(
        &self,
        p: &'t PathRecord,
        handler_trees: &'t [(usize, SharedTree)],
        diag: &mut Diagnostics,
    ) -> Vec<Occurrence<'t>> {
        let apply = match self.apply_index() {
            Ok(a) => a,
            Err(_) => return Vec::new(),
        };
        let mut out = Vec::new();
        if !reverts(p) {
            for (i, c) in p.import_calls.iter().enumerate() {
                if Criterion::of_import(&c.name).is_some() {
                    out.push(Occurrence {
                        entry: apply,
                        args: self.apply_ctx.args(),
                        prefix: Vec::new(),
                        prefix_imports: Vec::new(),
                        path: p,
                        import_index: i,
                    });
                }
            }
        }
        for (event_index, tree) in handler_trees {
            let ev = &p.call_events[*event_index];
            let t = match tree.as_ref() {
                Ok(t) => t,
                Err(_) => {
                    diag.unsupported = true;
                    continue;
                }
            };
            diag.merge(&t.diagnostics());
            let prefix = p.constraints_before(ev.constraint_index);
            let prefix_imports: Vec<String> = p.import_calls[..ev.import_index]
                .iter()
                .map(|c| c.name.clone())
                .collect();
            for q in &t.paths {
                if reverts(q) {
                    continue;
                }
                for (i, c) in q.import_calls.iter().enumerate() {
                    if Criterion::of_import(&c.name).is_some() {
                        out.push(Occurrence {
                            entry: ev.callee,
                            args: ev.args.clone(),
                            prefix: prefix.clone(),
                            prefix_imports: prefix_imports.clone(),
                            path: q,
                            import_index: i,
                        });
                    }
                }
            }
        }
        out
    }

    /// Handler explorations needed to see past the depth budget on `p`.
    pub(crate) fn deep_handlers(&self, p: &PathRecord) -> Vec<(usize, SharedTree)> {
        if p.terminal != crate::engine::TerminalKind::DepthPruned {
            return Vec::new();
        }
        p.call_events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.depth == 1)
            .map(|(i, e)| (i, self.handler_tree(e.callee, &e.args)))
            .collect()
    }

    pub fn past_deadline(&self) -> bool {
        Instant::now() >= self.deadline
    }
}

/// Runs the enabled detectors on one contract, in their fixed order.
pub fn scan_context(ctx: &ScanContext) -> Vec<Finding> {
    Detector::ALL
        .into_iter()
        .filter(|d| ctx.options.detectors.contains(d))
        .map(|d| match d {
            Detector::FakeEos => detect_fake_eos(ctx),
            Detector::FakeReceipt => detect_fake_receipt(ctx),
            Detector::Rollback => detect_rollback(ctx),
            Detector::MissingPermission => detect_missing_permission(ctx),
        })
        .collect()
}

/// Scans `module` with `options`.
pub fn scan(contract_id: &str, module: WasmModule, options: &ScanOptions) -> Vec<Finding> {
    let ctx = ScanContext::new(contract_id, module, options.clone());
    scan_context(&ctx)
}

#[cfg(test)]
mod tests;
