//! Models of EOSIO host functions.
//!
//! Each imported function the engine reaches is looked up by field name in a
//! declarative registry; the entry's behavior decides the effect on the
//! machine state. Names outside the registry get the default model: a fresh
//! return value (when the signature has one) and a flag on the path.

use serde::Serialize;

use crate::engine::{MachineState, TerminalKind};
use crate::symbolic::{Origin, SymExpr, Taint};
use crate::wasm::{FuncSignature, ValType};

/// Bytes of action payload made available to `read_action_data`.
pub const ACTION_DATA_SIZE: u64 = 512;
/// Name of the variable holding the action payload.
pub const ACTION_DATA_VAR: &str = "action_data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    BlockchainState,
    MemoryRelated,
    ControlFlow,
    Authority,
    TableRelated,
    /// Inline actions and notifications; recorded, never executed.
    Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    /// Fresh value tagged as blockchain state.
    ChainState,
    Memcpy,
    Memset,
    ReadActionData,
    ActionDataSize,
    /// Argument 0 is the asserted predicate.
    Assert,
    Exit,
    Abort,
    /// Fresh value tagged with the import name, when the signature returns one.
    FreshReturn,
    /// `db_get_i64(itr, data, len)`: fresh chunk written at `data`.
    DbGet,
    RecordOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImportModel {
    pub name: &'static str,
    pub category: Category,
    pub behavior: Behavior,
    /// Argument positions the engine concretizes before the model runs.
    pub concrete_args: &'static [usize],
}

const fn model(
    name: &'static str,
    category: Category,
    behavior: Behavior,
    concrete_args: &'static [usize],
) -> ImportModel {
    ImportModel {
        name,
        category,
        behavior,
        concrete_args,
    }
}

use Behavior as B;
use Category as C;

pub const REGISTRY: &[ImportModel] = &[
    model("current_time", C::BlockchainState, B::ChainState, &[]),
    model("current_receiver", C::BlockchainState, B::FreshReturn, &[]),
    model("tapos_block_num", C::BlockchainState, B::ChainState, &[]),
    model("tapos_block_prefix", C::BlockchainState, B::ChainState, &[]),
    model("publication_time", C::BlockchainState, B::ChainState, &[]),
    model(
        "get_active_producers",
        C::BlockchainState,
        B::ChainState,
        &[],
    ),
    model("memcpy", C::MemoryRelated, B::Memcpy, &[0, 1, 2]),
    model("memmove", C::MemoryRelated, B::Memcpy, &[0, 1, 2]),
    model("memmov", C::MemoryRelated, B::Memcpy, &[0, 1, 2]),
    model("memset", C::MemoryRelated, B::Memset, &[0, 2]),
    model(
        "read_action_data",
        C::MemoryRelated,
        B::ReadActionData,
        &[0, 1],
    ),
    model("action_data_size", C::MemoryRelated, B::ActionDataSize, &[]),
    model("eosio_assert", C::ControlFlow, B::Assert, &[]),
    model("eosio_assert_message", C::ControlFlow, B::Assert, &[]),
    model("eosio_assert_code", C::ControlFlow, B::Assert, &[]),
    model("eosio_exit", C::ControlFlow, B::Exit, &[]),
    model("abort", C::ControlFlow, B::Abort, &[]),
    model("require_auth", C::Authority, B::RecordOnly, &[]),
    model("require_auth2", C::Authority, B::RecordOnly, &[]),
    model("require_auth_2", C::Authority, B::RecordOnly, &[]),
    model("has_auth", C::Authority, B::FreshReturn, &[]),
    model("db_get_i64", C::TableRelated, B::DbGet, &[1, 2]),
    model("db_store_i64", C::TableRelated, B::FreshReturn, &[]),
    model("db_update_i64", C::TableRelated, B::RecordOnly, &[]),
    model("db_remove_i64", C::TableRelated, B::RecordOnly, &[]),
    model("db_find_i64", C::TableRelated, B::FreshReturn, &[]),
    model("db_lowerbound_i64", C::TableRelated, B::FreshReturn, &[]),
    model("db_upperbound_i64", C::TableRelated, B::FreshReturn, &[]),
    model("db_end_i64", C::TableRelated, B::FreshReturn, &[]),
    model("db_next_i64", C::TableRelated, B::FreshReturn, &[]),
    model("db_previous_i64", C::TableRelated, B::FreshReturn, &[]),
    model("send_inline", C::Action, B::RecordOnly, &[]),
    model("send_context_free_inline", C::Action, B::RecordOnly, &[]),
    model("send_deferred", C::Action, B::RecordOnly, &[]),
    model("require_recipient", C::Action, B::RecordOnly, &[]),
];

pub fn lookup(name: &str) -> Option<&'static ImportModel> {
    REGISTRY.iter().find(|m| m.name == name)
}

pub fn category_of(name: &str) -> Option<Category> {
    lookup(name).map(|m| m.category)
}

/// Positions the engine must make concrete before calling `name`.
pub fn concrete_args(name: &str) -> &'static [usize] {
    lookup(name).map(|m| m.concrete_args).unwrap_or(&[])
}

/// Result of running an import model.
#[derive(Debug, Clone)]
pub enum Outcome {
    Return(Option<SymExpr>),
    Halt(TerminalKind, String),
    /// Guarded alternatives; each guard becomes a path constraint.
    Fork(Vec<(SymExpr, Outcome)>),
}

fn width_of(t: ValType) -> u32 {
    t.bits()
}

fn fresh_result(
    state: &mut MachineState,
    name: &str,
    sig: &FuncSignature,
    origin: Origin,
) -> Option<SymExpr> {
    let t = *sig.results.first()?;
    let taint: Taint = std::iter::once(origin).collect();
    Some(state.fresh(name, width_of(t), taint))
}

fn concrete(arg: &SymExpr) -> u64 {
    arg.as_const()
        .expect("engine concretizes registry arguments") as u64
}

fn memory_fault(name: &str, e: impl std::fmt::Display) -> Outcome {
    Outcome::Halt(TerminalKind::EmulationError, format!("{name}: {e}"))
}

/// Runs the model for `name` against `state`.
pub fn emulate(
    name: &str,
    sig: &FuncSignature,
    args: &[SymExpr],
    state: &mut MachineState,
) -> Outcome {
    let Some(m) = lookup(name) else {
        state.flags.default_modeled = true;
        let r = fresh_result(state, name, sig, Origin::ImportReturn(name.into()));
        return Outcome::Return(r);
    };
    let limit = state.memory.limit();
    match m.behavior {
        B::ChainState => Outcome::Return(fresh_result(state, name, sig, Origin::BlockchainState)),
        B::FreshReturn => Outcome::Return(fresh_result(
            state,
            name,
            sig,
            Origin::ImportReturn(name.into()),
        )),
        B::RecordOnly => Outcome::Return(fresh_result(
            state,
            name,
            sig,
            Origin::ImportReturn(name.into()),
        )),
        B::Memcpy => {
            let (dst, src, len) = (concrete(&args[0]), concrete(&args[1]), concrete(&args[2]));
            if len > limit {
                return Outcome::Halt(
                    TerminalKind::EmulationError,
                    format!("{name}: length {len} exceeds memory"),
                );
            }
            if len > 0 {
                let data = match state.load(src, len) {
                    Ok(d) => d,
                    Err(e) => return memory_fault(name, e),
                };
                if let Err(e) = state.memory.store(dst, len, data) {
                    return memory_fault(name, e);
                }
            }
            Outcome::Return(sig.results.first().map(|_| args[0].clone()))
        }
        B::Memset => {
            let (dst, len) = (concrete(&args[0]), concrete(&args[2]));
            if len > limit {
                return Outcome::Halt(
                    TerminalKind::EmulationError,
                    format!("{name}: length {len} exceeds memory"),
                );
            }
            if len > 0 {
                let byte = args[1].extract(0, 8);
                let data = SymExpr::concat(vec![byte; len as usize]);
                if let Err(e) = state.memory.store(dst, len, data) {
                    return memory_fault(name, e);
                }
            }
            Outcome::Return(sig.results.first().map(|_| args[0].clone()))
        }
        B::ReadActionData => {
            let (ptr, len) = (concrete(&args[0]), concrete(&args[1]));
            let n = len.min(ACTION_DATA_SIZE);
            if n > 0 {
                let payload = state.named(
                    ACTION_DATA_VAR,
                    (8 * ACTION_DATA_SIZE) as u32,
                    Origin::ActionData,
                );
                let data = payload.extract(0, (8 * n) as u32);
                if let Err(e) = state.memory.store(ptr, n, data) {
                    return memory_fault(name, e);
                }
            }
            Outcome::Return(Some(SymExpr::u32(n as u32)))
        }
        B::ActionDataSize => Outcome::Return(Some(SymExpr::u32(ACTION_DATA_SIZE as u32))),
        B::Assert => {
            let pred = args[0].is_nonzero();
            match pred.as_bool() {
                Some(true) => Outcome::Return(None),
                Some(false) => Outcome::Halt(TerminalKind::AssertedFalse, format!("{name} failed")),
                None => Outcome::Fork(vec![
                    (pred.clone(), Outcome::Return(None)),
                    (
                        pred.not(),
                        Outcome::Halt(TerminalKind::AssertedFalse, format!("{name} failed")),
                    ),
                ]),
            }
        }
        B::Exit => Outcome::Halt(TerminalKind::Exited, name.to_string()),
        B::Abort => Outcome::Halt(TerminalKind::AssertedFalse, name.to_string()),
        B::DbGet => {
            let (ptr, len) = (concrete(&args[1]), concrete(&args[2]));
            if len > limit {
                return Outcome::Halt(
                    TerminalKind::EmulationError,
                    format!("{name}: length {len} exceeds memory"),
                );
            }
            if len > 0 {
                let taint: Taint = std::iter::once(Origin::ImportReturn(name.into())).collect();
                let chunk = state.fresh(&format!("{name}.data"), (8 * len) as u32, taint);
                if let Err(e) = state.memory.store(ptr, len, chunk) {
                    return memory_fault(name, e);
                }
            }
            Outcome::Return(fresh_result(
                state,
                name,
                sig,
                Origin::ImportReturn(name.into()),
            ))
        }
    }
}
