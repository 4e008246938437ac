use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::cfg::ControlFlowGraph;
use crate::symbolic::{
    BitVal, Constraint, MemoryError, Model, Origin, SymExpr, SymbolicMemory, Taint,
};

/// One activation of a locally defined function.
#[derive(Debug, Clone)]
pub struct Frame {
    pub func: u32,
    pub cfg: Arc<ControlFlowGraph>,
    pub block: u32,
    /// Index of the next instruction within `block`.
    pub cursor: usize,
    pub locals: Vec<SymExpr>,
    pub stack: Vec<SymExpr>,
    /// Back-edges taken so far, keyed by target block.
    pub loop_counts: BTreeMap<u32, u32>,
    pub result_count: usize,
}

/// An imported-function invocation along a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImportCallRecord {
    pub name: String,
    pub args: Vec<SymExpr>,
    pub return_value: Option<SymExpr>,
    /// Local function that issued the call.
    pub caller: u32,
    /// Frame depth of the caller (entry function is 0).
    pub depth: u32,
    /// Number of path constraints present when the call was made.
    pub constraint_index: usize,
}

/// Entry into a locally defined function along a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallEvent {
    pub callee: u32,
    pub caller: u32,
    /// Depth of the callee frame.
    pub depth: u32,
    pub args: Vec<SymExpr>,
    pub constraint_index: usize,
    /// Number of import calls recorded before entry.
    pub import_index: usize,
}

/// An executed remainder instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RemSite {
    pub func: u32,
    pub offset: usize,
    pub dividend: SymExpr,
    pub divisor: SymExpr,
    pub constraint_index: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PathFlags {
    /// An import without a dedicated model was reached.
    pub default_modeled: bool,
    /// A fork was kept because the solver could not decide it.
    pub solver_unknown: bool,
}

/// Full symbolic machine state of one path.
#[derive(Debug, Clone)]
pub struct MachineState {
    pub frames: Vec<Frame>,
    pub globals: Vec<SymExpr>,
    pub memory: SymbolicMemory,
    pub constraints: Vec<Constraint>,
    pub import_calls: Vec<ImportCallRecord>,
    pub call_events: Vec<CallEvent>,
    pub rem_sites: Vec<RemSite>,
    pub visited: BTreeSet<(u32, u32)>,
    pub max_call_depth: u32,
    pub flags: PathFlags,
    /// Results of the entry function once it has returned.
    pub return_values: Vec<SymExpr>,
    fresh_counter: u64,
    bindings: Option<Arc<Model>>,
}

impl MachineState {
    pub(crate) fn new(
        globals: Vec<SymExpr>,
        memory: SymbolicMemory,
        bindings: Option<Arc<Model>>,
    ) -> Self {
        let mut s = MachineState {
            frames: Vec::new(),
            globals,
            memory,
            constraints: Vec::new(),
            import_calls: Vec::new(),
            call_events: Vec::new(),
            rem_sites: Vec::new(),
            visited: BTreeSet::new(),
            max_call_depth: 0,
            flags: PathFlags::default(),
            return_values: Vec::new(),
            fresh_counter: 0,
            bindings,
        };
        if s.bindings.is_some() {
            s.globals = s.globals.iter().map(|g| s.resolve(g)).collect();
        }
        s
    }

    /// Whether this state replays a concrete assignment.
    pub fn is_replay(&self) -> bool {
        self.bindings.is_some()
    }

    /// Depth of the current frame; the entry function is at depth 0.
    pub fn depth(&self) -> u32 {
        self.frames.len().saturating_sub(1) as u32
    }

    pub fn frame(&self) -> &Frame {
        self.frames.last().expect("live state has a frame")
    }

    pub fn frame_mut(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("live state has a frame")
    }

    /// Replaces every variable by its bound value (zero when unbound).
    pub(crate) fn resolve(&self, e: &SymExpr) -> SymExpr {
        let Some(model) = &self.bindings else {
            return e.clone();
        };
        if e.is_concrete() {
            return e.clone();
        }
        e.substitute(&mut |name, w| Some(bound_value(model, name, w)))
    }

    fn bound(&self, name: &str, width: u32) -> Option<SymExpr> {
        Some(bound_value(self.bindings.as_ref()?, name, width))
    }

    /// A new variable `base#k`, unique along this path.
    pub fn fresh(&mut self, base: &str, width: u32, taint: Taint) -> SymExpr {
        let name = format!("{base}#{}", self.fresh_counter);
        self.fresh_counter += 1;
        self.bound(&name, width)
            .unwrap_or_else(|| SymExpr::var_with_taint(&name, width, taint))
    }

    /// A variable with a fixed name shared by every read.
    pub fn named(&self, name: &str, width: u32, origin: Origin) -> SymExpr {
        self.bound(name, width)
            .unwrap_or_else(|| SymExpr::var(name, width, origin))
    }

    /// Memory load, with unwritten bytes resolved during replay.
    pub fn load(&self, addr: u64, len: u64) -> Result<SymExpr, MemoryError> {
        let v = self.memory.load(addr, len)?;
        Ok(self.resolve(&v))
    }

    pub fn constraint_exprs(&self) -> Vec<SymExpr> {
        self.constraints.iter().map(|c| c.expr.clone()).collect()
    }
}

fn bound_value(model: &Model, name: &str, width: u32) -> SymExpr {
    let v = model
        .get(name)
        .map(|v| v.resized(width))
        .unwrap_or_else(|| BitVal::zero(width));
    if width <= 128 {
        SymExpr::constant(v.to_u128(), width)
    } else {
        SymExpr::from_bytes(&v.to_bytes())
    }
}
