//! Static vulnerability detection for EOSIO smart contracts compiled to
//! WebAssembly, plus offline heuristics for spotting exploitation in
//! transaction logs.
//!
//! The pipeline is: [`wasm`] decodes the binary, [`cfg`] lowers structured
//! control flow into basic blocks, [`engine`] explores paths symbolically over
//! [`symbolic`] expressions and memory while [`emulator`] stands in for EOSIO
//! host functions, and [`scanner`] turns the recorded path trees into
//! findings. [`attacks`] and [`report`] cover the transaction-log side and the
//! batch driver.

pub mod attacks;
pub mod cfg;
pub mod emulator;
pub mod engine;
pub mod eosio;
pub mod report;
pub mod scanner;
pub mod symbolic;
pub mod wasm;

pub use cfg::{build_cfg, ControlFlowGraph};
pub use engine::{explore, ExplorationOptions, PathRecord, PathTree, Program};
pub use eosio::{find_apply, EosioName};
pub use report::{run_attack_scan, run_scan, ScanConfig};
pub use scanner::{scan, Detector, Finding, Verdict};
pub use symbolic::{SymExpr, SymbolicMemory};
pub use wasm::{parse_module, WasmModule};
