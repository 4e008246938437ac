//! Path-enumerating symbolic execution over per-function CFGs.
//!
//! Exploration is depth-first; successors are visited in CFG edge order so a
//! single-worker run is reproducible. Every terminated path, including pruned
//! ones, ends up in the returned [`PathTree`].

mod exec;
mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::cfg::{build_cfg, CfgError, ControlFlowGraph};
use crate::symbolic::{Constraint, Model, Solver, SymExpr, SymbolicMemory, PAGE_SIZE};
use crate::wasm::{ConstExpr, ImportKind, ValType, WasmModule};

pub use state::{CallEvent, Frame, ImportCallRecord, MachineState, PathFlags, RemSite};

pub const DEFAULT_CALL_DEPTH: u32 = 2;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);
pub const DEFAULT_LOOP_BOUND: u32 = 8;
/// Values tried when a symbolic address or length has to be made concrete.
pub const DEFAULT_CONCRETIZATION_LIMIT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error("function {0} is not locally defined")]
    NotLocal(u32),
    #[error("entry expects {expected:?}, got {got} argument(s) of widths {widths:?}")]
    ArgumentMismatch {
        expected: Vec<ValType>,
        got: usize,
        widths: Vec<u32>,
    },
    #[error("invalid exploration options: {0}")]
    InvalidOptions(String),
    #[error("invalid module initializer: {0}")]
    BadInitializer(String),
}

/// Why a path stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Returned,
    AssertedFalse,
    Exited,
    DepthPruned,
    TimeoutPruned,
    Unsupported,
    /// Division by zero, signed overflow, out-of-bounds access.
    Trapped,
    LoopBound,
    /// Abandoned by the path filter.
    Filtered,
    /// Still pending when the path filter stopped exploration.
    Stopped,
    EmulationError,
    /// Alternatives left out when concretizing a symbolic operand.
    Abandoned,
}

impl TerminalKind {
    /// Paths that ran to a natural end of execution.
    pub fn is_complete(self) -> bool {
        matches!(
            self,
            TerminalKind::Returned
                | TerminalKind::AssertedFalse
                | TerminalKind::Exited
                | TerminalKind::Trapped
        )
    }

    pub fn is_pruned(self) -> bool {
        !self.is_complete()
    }
}

impl fmt::Display for TerminalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

/// Observation points offered to the path filter.
#[derive(Debug)]
pub enum PathEvent<'a> {
    ConstraintAdded(&'a Constraint),
    ImportCall(&'a ImportCallRecord),
    EnterFunction { func: u32, depth: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterAction {
    Continue,
    /// Drop this path (terminal `filtered`).
    Abandon,
    /// End the whole exploration.
    Stop,
}

pub type PathFilter =
    Arc<dyn Fn(&PathEvent<'_>, &MachineState, &Solver) -> FilterAction + Send + Sync>;

#[derive(Clone)]
pub struct ExplorationOptions {
    pub call_depth: u32,
    pub timeout: Duration,
    pub loop_bound: u32,
    pub concretization_limit: usize,
    pub target_filter: Option<PathFilter>,
}

impl Default for ExplorationOptions {
    fn default() -> Self {
        Self {
            call_depth: DEFAULT_CALL_DEPTH,
            timeout: DEFAULT_TIMEOUT,
            loop_bound: DEFAULT_LOOP_BOUND,
            concretization_limit: DEFAULT_CONCRETIZATION_LIMIT,
            target_filter: None,
        }
    }
}

impl fmt::Debug for ExplorationOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExplorationOptions")
            .field("call_depth", &self.call_depth)
            .field("timeout", &self.timeout)
            .field("loop_bound", &self.loop_bound)
            .field("concretization_limit", &self.concretization_limit)
            .field("target_filter", &self.target_filter.is_some())
            .finish()
    }
}

impl ExplorationOptions {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.call_depth < 1 {
            return Err(EngineError::InvalidOptions(
                "call_depth must be at least 1".into(),
            ));
        }
        if self.timeout.is_zero() {
            return Err(EngineError::InvalidOptions(
                "timeout must be positive".into(),
            ));
        }
        if self.concretization_limit == 0 {
            return Err(EngineError::InvalidOptions(
                "concretization_limit must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_filter(mut self, filter: PathFilter) -> Self {
        self.target_filter = Some(filter);
        self
    }
}

fn ser_visited<S: Serializer>(v: &BTreeSet<(u32, u32)>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

/// One explored path.
#[derive(Debug, Clone, Serialize)]
pub struct PathRecord {
    pub id: usize,
    pub entry: u32,
    pub terminal: TerminalKind,
    pub detail: String,
    pub constraints: Vec<Constraint>,
    pub import_calls: Vec<ImportCallRecord>,
    pub call_events: Vec<CallEvent>,
    pub rem_sites: Vec<RemSite>,
    /// (function, block) pairs executed.
    #[serde(serialize_with = "ser_visited")]
    pub visited: BTreeSet<(u32, u32)>,
    pub max_call_depth: u32,
    pub flags: PathFlags,
    pub return_values: Vec<SymExpr>,
}

impl PathRecord {
    pub fn constraint_exprs(&self) -> Vec<SymExpr> {
        self.constraints.iter().map(|c| c.expr.clone()).collect()
    }

    /// Constraint expressions present before the `n`-th constraint was added.
    pub fn constraints_before(&self, n: usize) -> Vec<SymExpr> {
        self.constraints[..n.min(self.constraints.len())]
            .iter()
            .map(|c| c.expr.clone())
            .collect()
    }

    pub fn import_names(&self) -> Vec<&str> {
        self.import_calls.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn calls_import(&self, name: &str) -> bool {
        self.import_calls.iter().any(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExploreStats {
    pub instructions: u64,
    pub forks: u64,
    pub infeasible: u64,
    pub unknown: u64,
    pub timed_out: bool,
    pub stopped: bool,
}

/// Summary of pruning encountered during an exploration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub timeout: bool,
    pub depth: bool,
    pub default_modeled: bool,
    pub solver_unknown: bool,
    pub loop_bound: bool,
    pub unsupported: bool,
    pub abandoned: bool,
}

impl Diagnostics {
    pub fn any(&self) -> bool {
        self.timeout
            || self.depth
            || self.default_modeled
            || self.solver_unknown
            || self.loop_bound
            || self.unsupported
            || self.abandoned
    }

    pub fn merge(&mut self, o: &Diagnostics) {
        self.timeout |= o.timeout;
        self.depth |= o.depth;
        self.default_modeled |= o.default_modeled;
        self.solver_unknown |= o.solver_unknown;
        self.loop_bound |= o.loop_bound;
        self.unsupported |= o.unsupported;
        self.abandoned |= o.abandoned;
    }

    pub fn of_path(p: &PathRecord) -> Diagnostics {
        Diagnostics {
            timeout: p.terminal == TerminalKind::TimeoutPruned,
            depth: p.terminal == TerminalKind::DepthPruned,
            default_modeled: p.flags.default_modeled,
            solver_unknown: p.flags.solver_unknown,
            loop_bound: p.terminal == TerminalKind::LoopBound,
            unsupported: matches!(
                p.terminal,
                TerminalKind::Unsupported | TerminalKind::EmulationError
            ),
            abandoned: p.terminal == TerminalKind::Abandoned,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PathTree {
    pub entry: u32,
    pub paths: Vec<PathRecord>,
    pub stats: ExploreStats,
}

impl PathTree {
    pub fn diagnostics(&self) -> Diagnostics {
        let mut d = Diagnostics {
            timeout: self.stats.timed_out,
            ..Diagnostics::default()
        };
        for p in &self.paths {
            d.merge(&Diagnostics::of_path(p));
        }
        d
    }

    pub fn complete_paths(&self) -> impl Iterator<Item = &PathRecord> {
        self.paths.iter().filter(|p| p.terminal.is_complete())
    }
}

/// A module prepared for exploration: CFGs are built on first use.
#[derive(Debug)]
pub struct Program {
    module: Arc<WasmModule>,
    cfgs: Vec<OnceLock<Result<Arc<ControlFlowGraph>, CfgError>>>,
    memory: SymbolicMemory,
    globals: Vec<SymExpr>,
    table: BTreeMap<u32, u32>,
}

fn const_value(c: ConstExpr, ty: ValType, globals: &[SymExpr]) -> Result<SymExpr, EngineError> {
    Ok(match c {
        ConstExpr::I32(v) => SymExpr::u32(v as u32),
        ConstExpr::I64(v) => SymExpr::u64(v as u64),
        ConstExpr::F32(b) => SymExpr::u32(b),
        ConstExpr::F64(b) => SymExpr::u64(b),
        ConstExpr::GlobalGet(i) => globals
            .get(i as usize)
            .cloned()
            .ok_or_else(|| EngineError::BadInitializer(format!("global.get {i} of {ty}")))?,
    })
}

/// Name of the variable standing for an imported global.
pub fn imported_global_name(index: usize) -> String {
    format!("global@{index}")
}

impl Program {
    pub fn new(module: impl Into<Arc<WasmModule>>) -> Result<Self, EngineError> {
        let module: Arc<WasmModule> = module.into();
        let pages = module
            .memory_limits
            .or_else(|| {
                module.imports.iter().find_map(|i| match i.kind {
                    ImportKind::Memory(l) => Some(l),
                    _ => None,
                })
            })
            .map(|l| u64::from(l.min))
            .unwrap_or(0);
        let mut memory = SymbolicMemory::new(pages * PAGE_SIZE);

        let mut globals: Vec<SymExpr> = Vec::new();
        for imp in &module.imports {
            if let ImportKind::Global { ty, .. } = imp.kind {
                let name = imported_global_name(globals.len());
                globals.push(SymExpr::var_untainted(&name, ty.bits()));
            }
        }
        for g in &module.globals {
            let v = const_value(g.init, g.ty, &globals)?;
            globals.push(v);
        }

        for (k, seg) in module.data_segments.iter().enumerate() {
            let base = match const_value(seg.offset, ValType::I32, &globals)?.as_const() {
                Some(v) => v as u64,
                None => {
                    return Err(EngineError::BadInitializer(format!(
                        "data segment {k} has a symbolic offset"
                    )))
                }
            };
            for (i, chunk) in seg.bytes.chunks(16).enumerate() {
                let addr = base + 16 * i as u64;
                memory
                    .store(addr, chunk.len() as u64, SymExpr::from_bytes(chunk))
                    .map_err(|e| EngineError::BadInitializer(format!("data segment {k}: {e}")))?;
            }
        }

        let n = module.total_function_count() as usize;
        Ok(Program {
            table: module.table_slots(),
            cfgs: (0..n).map(|_| OnceLock::new()).collect(),
            module,
            memory,
            globals,
        })
    }

    pub fn module(&self) -> &WasmModule {
        &self.module
    }

    pub fn shared_module(&self) -> Arc<WasmModule> {
        self.module.clone()
    }

    pub fn cfg(&self, func: u32) -> Result<Arc<ControlFlowGraph>, CfgError> {
        let slot = self
            .cfgs
            .get(func as usize)
            .ok_or(CfgError::NotLocal(func))?;
        slot.get_or_init(|| build_cfg(&self.module, func).map(Arc::new))
            .clone()
    }

    pub fn initial_memory(&self) -> &SymbolicMemory {
        &self.memory
    }

    pub fn initial_globals(&self) -> &[SymExpr] {
        &self.globals
    }

    /// Table slot to function index.
    pub fn table(&self) -> &BTreeMap<u32, u32> {
        &self.table
    }

    /// Field name of an imported function.
    pub fn import_name(&self, func: u32) -> Option<&str> {
        self.module
            .imported_function(func)
            .map(|i| i.field.as_str())
    }
}

/// Explores `entry` with a fresh solver using the default query budget.
pub fn explore(
    program: &Program,
    entry: u32,
    args: &[SymExpr],
    options: &ExplorationOptions,
) -> Result<PathTree, EngineError> {
    explore_with(program, entry, args, options, &Solver::default())
}

/// Explores `entry` symbolically, sharing `solver` (and its cache).
pub fn explore_with(
    program: &Program,
    entry: u32,
    args: &[SymExpr],
    options: &ExplorationOptions,
    solver: &Solver,
) -> Result<PathTree, EngineError> {
    exec::run(program, entry, args, options, solver, None)
}

/// Re-executes `entry` with every symbolic input fixed by `model`.
///
/// Fresh values, unwritten memory and imported globals take their model
/// value (zero when absent), so the run follows a single concrete path.
pub fn replay(
    program: &Program,
    entry: u32,
    args: &[SymExpr],
    model: &Model,
    options: &ExplorationOptions,
    solver: &Solver,
) -> Result<PathTree, EngineError> {
    exec::run(
        program,
        entry,
        args,
        options,
        solver,
        Some(Arc::new(model.clone())),
    )
}

pub(crate) fn deadline_after(start: Instant, timeout: Duration) -> Instant {
    start
        .checked_add(timeout)
        .unwrap_or_else(|| start + Duration::from_secs(86_400 * 365))
}

#[cfg(test)]
mod tests;
