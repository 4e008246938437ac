use serde::Serialize;

use crate::engine::{replay, EngineError, ExplorationOptions, Program, TerminalKind};
use crate::symbolic::{eval_u128, Model, SatResult, Solver, SymExpr};

use super::ScanContext;

/// Evidence for a vulnerable finding: a satisfiable path condition, the
/// model the solver produced for it, and the import calls the path makes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub entry: u32,
    pub entry_label: String,
    pub args: Vec<SymExpr>,
    /// `args` under `model`.
    pub concrete_args: Vec<u64>,
    pub constraints: Vec<SymExpr>,
    pub model: Model,
    pub import_trace: Vec<String>,
    /// Decoded action names (missing-permission findings only).
    pub actions: Vec<String>,
}

impl Witness {
    /// Solves `constraints`; `None` when they are not satisfiable in budget.
    pub(crate) fn build(
        ctx: &ScanContext,
        entry: u32,
        args: Vec<SymExpr>,
        constraints: Vec<SymExpr>,
        import_trace: Vec<String>,
    ) -> Option<Witness> {
        let SatResult::Sat(model) = ctx.check(&constraints) else {
            return None;
        };
        let entry_label = ctx
            .program()
            .map(|p| p.module().function_label(entry))
            .unwrap_or_default();
        let concrete_args = args.iter().map(|a| eval_u128(a, &model) as u64).collect();
        Some(Witness {
            entry,
            entry_label,
            args,
            concrete_args,
            constraints,
            model,
            import_trace,
            actions: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayOutcome {
    pub terminal: TerminalKind,
    pub trace: Vec<String>,
    /// The replayed trace starts with the witness trace.
    pub reproduced: bool,
}

/// Re-executes the witness entry concretely under its model.
pub fn replay_witness(
    program: &Program,
    w: &Witness,
    options: &ExplorationOptions,
) -> Result<ReplayOutcome, EngineError> {
    let solver = Solver::default();
    let tree = replay(program, w.entry, &w.args, &w.model, options, &solver)?;
    let Some(p) = tree.paths.first() else {
        return Ok(ReplayOutcome {
            terminal: TerminalKind::Abandoned,
            trace: Vec::new(),
            reproduced: false,
        });
    };
    let trace: Vec<String> = p.import_names().into_iter().map(String::from).collect();
    let reproduced = tree.paths.len() == 1 && trace.starts_with(&w.import_trace);
    Ok(ReplayOutcome {
        terminal: p.terminal,
        trace,
        reproduced,
    })
}
