//! EOSIO-specific knowledge shared by the detectors: the name codec and the
//! `apply(receiver, code, action)` dispatch contract.

mod name;

pub use name::{n, name_decode, name_encode, EosioName, NameError};

use thiserror::Error;

use crate::symbolic::{Origin, SymExpr};
use crate::wasm::{ExportKind, ValType, WasmModule};

pub const EOSIO_TOKEN: &str = "eosio.token";
pub const TRANSFER: &str = "transfer";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no dispatcher: {0}")]
pub struct NoDispatcher(pub String);

/// Locates the exported `apply(i64, i64, i64) -> ()` dispatcher.
pub fn find_apply(module: &WasmModule) -> Result<u32, NoDispatcher> {
    let &(kind, index) = module
        .exports
        .get("apply")
        .ok_or_else(|| NoDispatcher("module does not export apply".into()))?;
    if kind != ExportKind::Function {
        return Err(NoDispatcher("export apply is not a function".into()));
    }
    let sig = module
        .func_signature(index)
        .ok_or_else(|| NoDispatcher(format!("apply refers to unknown function {index}")))?;
    if sig.params != [ValType::I64; 3] || !sig.results.is_empty() {
        return Err(NoDispatcher(format!(
            "apply has signature {sig}, expected (i64,i64,i64)->()"
        )));
    }
    if module.is_imported(index) {
        return Err(NoDispatcher("apply is an imported function".into()));
    }
    Ok(index)
}

/// The symbolic arguments `apply` is explored with.
#[derive(Debug, Clone)]
pub struct ApplyContext {
    pub receiver: SymExpr,
    pub code: SymExpr,
    pub action: SymExpr,
}

impl ApplyContext {
    pub fn new() -> Self {
        Self {
            receiver: SymExpr::var("receiver", 64, Origin::ApplyArgReceiver),
            code: SymExpr::var("code", 64, Origin::ApplyArgCode),
            action: SymExpr::var("action", 64, Origin::ApplyArgAction),
        }
    }

    /// The contract's own account.
    pub fn self_account(&self) -> &SymExpr {
        &self.receiver
    }

    pub fn args(&self) -> Vec<SymExpr> {
        vec![
            self.receiver.clone(),
            self.code.clone(),
            self.action.clone(),
        ]
    }
}

impl Default for ApplyContext {
    fn default() -> Self {
        Self::new()
    }
}
