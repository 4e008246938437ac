//! Symbolic values, constraint solving and symbolic linear memory.

mod eval;
mod expr;
mod memory;
pub mod solver;

pub use eval::{eval_bool, eval_u128, evaluate, BitVal, Model, Value};
pub use expr::{taint_of, BinOp, Kind, Origin, Pred, Sort, SymExpr, Taint, UnOp};
pub use memory::{unwritten_byte_name, MemoryError, SymbolicMemory, PAGE_SIZE};
pub use solver::{SatResult, Solver, DEFAULT_QUERY_BUDGET};

use serde::Serialize;

/// Where a path constraint was introduced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// A branch or trap check at an instruction.
    Instr { func: u32, offset: usize },
    /// A fork inside a host-function model.
    Import { name: String },
    /// Added by a detector query rather than by execution.
    Assumption,
}

/// A boolean path condition with its origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Constraint {
    pub expr: SymExpr,
    pub provenance: Provenance,
}

impl Constraint {
    pub fn new(expr: SymExpr, provenance: Provenance) -> Self {
        assert!(expr.is_bool(), "constraint must be boolean: {expr}");
        Constraint { expr, provenance }
    }
}
