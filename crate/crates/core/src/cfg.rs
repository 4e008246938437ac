//! Per-function control-flow graphs.
//!
//! Structured control flow (`block`/`loop`/`if` with relative branch depths)
//! is resolved once here into basic blocks and typed edges. Branch edges carry
//! the operand-stack adjustment the jump implies, so the executor never needs
//! the label stack.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::wasm::{
    decode_function_body, BlockType, Instruction, Numeric, Operator, ParseError, WasmModule,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CfgError {
    #[error(transparent)]
    Malformed(#[from] ParseError),
    #[error("branch depth {depth} at offset {offset:#x} exceeds nesting")]
    UnresolvableBranch { offset: usize, depth: u32 },
    #[error("function {0} is imported or does not exist")]
    NotLocal(u32),
    #[error("no block {0}")]
    UnknownBlock(u32),
}

/// Operand stack shape after a branch: truncate to `height` values (relative
/// to the frame base) after preserving the top `keep` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StackAdjust {
    pub height: u32,
    pub keep: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Fallthrough,
    BranchTaken,
    BranchNotTaken,
    /// Case indices (ascending) of a `br_table` that share this target.
    TableCase(Vec<u32>),
    Call {
        indirect: bool,
    },
    Return,
}

impl EdgeKind {
    fn label(&self) -> String {
        match self {
            EdgeKind::Fallthrough => "fallthrough".into(),
            EdgeKind::BranchTaken => "taken".into(),
            EdgeKind::BranchNotTaken => "not_taken".into(),
            EdgeKind::TableCase(c) => format!("case {c:?}"),
            EdgeKind::Call { indirect: false } => "call".into(),
            EdgeKind::Call { indirect: true } => "call_indirect".into(),
            EdgeKind::Return => "return".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CfgEdge {
    pub source: u32,
    pub target: u32,
    pub kind: EdgeKind,
    pub adjust: Option<StackAdjust>,
    /// Jumps to a loop header at or before the source.
    pub back_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BasicBlock {
    pub id: u32,
    /// Instruction index range `[start, end)` into the function body.
    pub start: usize,
    pub end: usize,
    pub start_offset: usize,
    pub end_offset: usize,
    /// Not reachable from the entry block.
    pub dead: bool,
}

#[derive(Debug, Clone)]
pub struct ControlFlowGraph {
    pub func_index: u32,
    pub instructions: Vec<Instruction>,
    pub blocks: Vec<BasicBlock>,
    /// Outgoing edges per block, ordered by kind then case index.
    succ: Vec<Vec<CfgEdge>>,
    block_of: Vec<u32>,
}

impl ControlFlowGraph {
    pub fn entry(&self) -> u32 {
        0
    }

    pub fn block(&self, id: u32) -> Result<&BasicBlock, CfgError> {
        self.blocks
            .get(id as usize)
            .ok_or(CfgError::UnknownBlock(id))
    }

    pub fn instructions_of(&self, id: u32) -> &[Instruction] {
        let b = &self.blocks[id as usize];
        &self.instructions[b.start..b.end]
    }

    pub fn edges_from(&self, id: u32) -> &[CfgEdge] {
        &self.succ[id as usize]
    }

    pub fn edges(&self) -> impl Iterator<Item = &CfgEdge> {
        self.succ.iter().flatten()
    }

    pub fn block_containing(&self, instr_index: usize) -> u32 {
        self.block_of[instr_index]
    }

    /// Renders the graph in Graphviz dot syntax.
    pub fn to_dot(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph \"{}\" {{", title.replace('"', "'"));
        let _ = writeln!(s, "  node [shape=box fontname=monospace];");
        for b in &self.blocks {
            let mut label = format!("B{} @{:#x}\\l", b.id, b.start_offset);
            for ins in &self.instructions[b.start..b.end] {
                let _ = write!(label, "{}\\l", ins.op.mnemonic().replace('"', "'"));
            }
            let style = if b.dead { " style=dashed" } else { "" };
            let _ = writeln!(s, "  B{} [label=\"{label}\"{style}];", b.id);
        }
        for e in self.edges() {
            let _ = writeln!(
                s,
                "  B{} -> B{} [label=\"{}\"];",
                e.source,
                e.target,
                e.kind.label()
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Ordered successors of a block.
pub fn successors_of(
    graph: &ControlFlowGraph,
    block_id: u32,
) -> Result<Vec<(u32, EdgeKind)>, CfgError> {
    graph.block(block_id)?;
    Ok(graph
        .edges_from(block_id)
        .iter()
        .map(|e| (e.target, e.kind.clone()))
        .collect())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CtlKind {
    Func,
    Block,
    Loop,
    If,
}

struct Ctl {
    kind: CtlKind,
    opener: usize,
    height: u32,
    params: u32,
    results: u32,
}

/// Where a branch goes and the stack shape it leaves.
#[derive(Clone, Copy)]
struct Jump {
    target: usize,
    adjust: StackAdjust,
}

fn block_arity(module: &WasmModule, bt: BlockType) -> (u32, u32) {
    match bt {
        BlockType::Empty => (0, 0),
        BlockType::Value(_) => (0, 1),
        BlockType::TypeIndex(t) => module
            .types
            .get(t as usize)
            .map(|s| (s.params.len() as u32, s.results.len() as u32))
            .unwrap_or((0, 0)),
    }
}

/// (pops, pushes) for instructions without control effects.
fn plain_effect(module: &WasmModule, op: &Operator) -> (u32, u32) {
    match op {
        Operator::Nop | Operator::Unreachable => (0, 0),
        Operator::Call(f) => module
            .func_signature(*f)
            .map(|s| (s.params.len() as u32, s.results.len() as u32))
            .unwrap_or((0, 0)),
        Operator::CallIndirect { type_index, .. } => module
            .types
            .get(*type_index as usize)
            .map(|s| (s.params.len() as u32 + 1, s.results.len() as u32))
            .unwrap_or((1, 0)),
        Operator::Drop => (1, 0),
        Operator::Select => (3, 1),
        Operator::LocalGet(_) | Operator::GlobalGet(_) => (0, 1),
        Operator::LocalSet(_) | Operator::GlobalSet(_) => (1, 0),
        Operator::LocalTee(_) => (1, 1),
        Operator::Load(..) => (1, 1),
        Operator::Store(..) => (2, 0),
        Operator::MemorySize => (0, 1),
        Operator::MemoryGrow => (1, 1),
        Operator::I32Const(_)
        | Operator::I64Const(_)
        | Operator::F32Const(_)
        | Operator::F64Const(_) => (0, 1),
        Operator::Numeric(
            Numeric::Cmp(..)
            | Numeric::Binary(..)
            | Numeric::Float(0x5b..=0x66 | 0x92..=0x98 | 0xa0..=0xa6),
        ) => (2, 1),
        Operator::Numeric(_) => (1, 1),
        _ => (0, 0),
    }
}

/// Builds the CFG of a locally defined function.
pub fn build_cfg(module: &WasmModule, func_index: u32) -> Result<ControlFlowGraph, CfgError> {
    if module.is_imported(func_index) {
        return Err(CfgError::NotLocal(func_index));
    }
    let body = module
        .body(func_index)
        .ok_or(CfgError::NotLocal(func_index))?;
    let results = module
        .func_signature(func_index)
        .map(|s| s.results.len() as u32)
        .unwrap_or(0);
    let instrs = decode_function_body(body)?;
    let n = instrs.len();

    // matching else/end for every opener
    let mut else_of = vec![None; n];
    let mut end_of = vec![0usize; n];
    {
        let mut open: Vec<usize> = Vec::new();
        for (i, ins) in instrs.iter().enumerate() {
            match ins.op {
                Operator::Block(_) | Operator::Loop(_) | Operator::If(_) => open.push(i),
                Operator::Else => {
                    if let Some(&o) = open.last() {
                        else_of[o] = Some(i);
                    }
                }
                Operator::End => {
                    if let Some(o) = open.pop() {
                        end_of[o] = i;
                    }
                }
                _ => {}
            }
        }
    }
    let exit = n - 1;

    // simulate stack heights and resolve branch targets
    let mut jumps: Vec<Vec<Jump>> = vec![Vec::new(); n];
    let mut ctl = vec![Ctl {
        kind: CtlKind::Func,
        opener: exit,
        height: 0,
        params: 0,
        results,
    }];
    let mut h: u32 = 0;
    let resolve = |ctl: &[Ctl], depth: u32, at: &Instruction| -> Result<Jump, CfgError> {
        let idx =
            ctl.len()
                .checked_sub(1 + depth as usize)
                .ok_or(CfgError::UnresolvableBranch {
                    offset: at.offset,
                    depth,
                })?;
        let c = &ctl[idx];
        let (target, keep) = match c.kind {
            CtlKind::Func => (exit, c.results),
            CtlKind::Loop => (c.opener, c.params),
            CtlKind::Block | CtlKind::If => (end_of[c.opener] + 1, c.results),
        };
        Ok(Jump {
            target,
            adjust: StackAdjust {
                height: c.height,
                keep,
            },
        })
    };
    for (i, ins) in instrs.iter().enumerate() {
        let floor = ctl.last().map(|c| c.height).unwrap_or(0);
        match &ins.op {
            Operator::Block(bt) | Operator::Loop(bt) | Operator::If(bt) => {
                if matches!(ins.op, Operator::If(_)) {
                    h = h.saturating_sub(1).max(floor);
                }
                let (p, r) = block_arity(module, *bt);
                let kind = match ins.op {
                    Operator::Block(_) => CtlKind::Block,
                    Operator::Loop(_) => CtlKind::Loop,
                    _ => CtlKind::If,
                };
                ctl.push(Ctl {
                    kind,
                    opener: i,
                    height: h.saturating_sub(p),
                    params: p,
                    results: r,
                });
            }
            Operator::Else => {
                if let Some(c) = ctl.last() {
                    h = c.height + c.params;
                }
            }
            Operator::End => {
                if let Some(c) = ctl.pop() {
                    h = c.height + c.results;
                }
            }
            Operator::Br(d) => {
                jumps[i].push(resolve(&ctl, *d, ins)?);
                h = floor;
            }
            Operator::BrIf(d) => {
                h = h.saturating_sub(1).max(floor);
                jumps[i].push(resolve(&ctl, *d, ins)?);
            }
            Operator::BrTable(targets) => {
                for d in targets {
                    let j = resolve(&ctl, *d, ins)?;
                    jumps[i].push(j);
                }
                h = floor;
            }
            Operator::Return | Operator::Unreachable => h = floor,
            op => {
                let (pops, pushes) = plain_effect(module, op);
                h = h.saturating_sub(pops).max(floor) + pushes;
            }
        }
    }

    // leaders
    let mut leader = vec![false; n + 1];
    leader[0] = true;
    for (i, ins) in instrs.iter().enumerate() {
        if ins.op.is_terminator() {
            leader[i + 1] = true;
        }
        if matches!(ins.op, Operator::Loop(_)) {
            leader[i] = true;
        }
        for j in &jumps[i] {
            leader[j.target] = true;
        }
        if matches!(ins.op, Operator::Return) {
            leader[exit] = true;
        }
    }
    let mut blocks = Vec::new();
    let mut block_of = vec![0u32; n];
    let mut start = 0;
    for i in 1..=n {
        if i == n || leader[i] {
            let id = blocks.len() as u32;
            for b in block_of.iter_mut().take(i).skip(start) {
                *b = id;
            }
            blocks.push(BasicBlock {
                id,
                start,
                end: i,
                start_offset: instrs[start].offset,
                end_offset: instrs[i - 1].offset,
                dead: false,
            });
            start = i;
        }
    }

    // edges
    let mut succ: Vec<Vec<CfgEdge>> = vec![Vec::new(); blocks.len()];
    for b in &blocks {
        let last = b.end - 1;
        let ins = &instrs[last];
        let next = || block_of.get(last + 1).copied();
        let mut out: Vec<(u32, EdgeKind, Option<StackAdjust>)> = Vec::new();
        match &ins.op {
            Operator::Br(_) => {
                let j = jumps[last][0];
                out.push((block_of[j.target], EdgeKind::BranchTaken, Some(j.adjust)));
            }
            Operator::BrIf(_) => {
                let j = jumps[last][0];
                out.push((block_of[j.target], EdgeKind::BranchTaken, Some(j.adjust)));
                if let Some(nb) = next() {
                    out.push((nb, EdgeKind::BranchNotTaken, None));
                }
            }
            Operator::BrTable(_) => {
                let mut groups: BTreeMap<(u32, StackAdjust), Vec<u32>> = BTreeMap::new();
                for (case, j) in jumps[last].iter().enumerate() {
                    groups
                        .entry((block_of[j.target], j.adjust))
                        .or_default()
                        .push(case as u32);
                }
                for ((target, adjust), cases) in groups {
                    out.push((target, EdgeKind::TableCase(cases), Some(adjust)));
                }
            }
            Operator::If(_) => {
                if let Some(nb) = next() {
                    out.push((nb, EdgeKind::BranchTaken, None));
                }
                let opener = last;
                let skip_to = match else_of[opener] {
                    Some(e) => e + 1,
                    None => end_of[opener] + 1,
                };
                out.push((block_of[skip_to], EdgeKind::BranchNotTaken, None));
            }
            Operator::Else => {
                // end of the then-arm: continue after the matching end
                let opener = (0..last)
                    .rev()
                    .find(|&o| else_of[o] == Some(last))
                    .expect("else has an opener");
                out.push((block_of[end_of[opener] + 1], EdgeKind::Fallthrough, None));
            }
            Operator::Return => out.push((block_of[exit], EdgeKind::Return, None)),
            Operator::Call(_) => {
                if let Some(nb) = next() {
                    out.push((nb, EdgeKind::Call { indirect: false }, None));
                }
            }
            Operator::CallIndirect { .. } => {
                if let Some(nb) = next() {
                    out.push((nb, EdgeKind::Call { indirect: true }, None));
                }
            }
            Operator::Unreachable => {}
            Operator::End if last == exit => {}
            _ => {
                if let Some(nb) = next() {
                    out.push((nb, EdgeKind::Fallthrough, None));
                }
            }
        }
        let mut edges: Vec<CfgEdge> = out
            .into_iter()
            .map(|(target, kind, adjust)| CfgEdge {
                source: b.id,
                target,
                kind,
                adjust,
                back_edge: blocks[target as usize].start <= b.start,
            })
            .collect();
        edges.sort_by(|a, b| a.kind.cmp(&b.kind).then(a.target.cmp(&b.target)));
        succ[b.id as usize] = edges;
    }

    // reachability
    let mut seen = vec![false; blocks.len()];
    let mut stack = vec![0u32];
    while let Some(b) = stack.pop() {
        if std::mem::replace(&mut seen[b as usize], true) {
            continue;
        }
        stack.extend(succ[b as usize].iter().map(|e| e.target));
    }
    for (b, s) in blocks.iter_mut().zip(seen) {
        b.dead = !s;
    }

    Ok(ControlFlowGraph {
        func_index,
        instructions: instrs,
        blocks,
        succ,
        block_of,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wasm::parse_module;

    fn graph(body: &str, params: &str) -> ControlFlowGraph {
        let src = format!("(module (func {params} {body}))");
        let m = parse_module(&wat::parse_str(&src).unwrap()).unwrap();
        build_cfg(&m, 0).unwrap()
    }

    #[test]
    fn straight_line() {
        let g = graph("i64.const 0 drop", "");
        assert_eq!(g.blocks.len(), 1);
        assert_eq!(g.edges().count(), 0);
        assert!(successors_of(&g, 0).unwrap().is_empty());
    }

    #[test]
    fn br_if_in_block() {
        let g = graph("block local.get 0 br_if 0 end", "(param i32)");
        assert_eq!(g.blocks.len(), 3);
        let s = successors_of(&g, 0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], (2, EdgeKind::BranchTaken));
        assert_eq!(s[1], (1, EdgeKind::BranchNotTaken));
    }

    #[test]
    fn br_table_cases() {
        let g = graph(
            "block block block block local.get 0 br_table 0 1 2 3 end end end end",
            "(param i32)",
        );
        let s = successors_of(&g, 0).unwrap();
        assert_eq!(s.len(), 4);
        let cases: Vec<Vec<u32>> = s
            .iter()
            .map(|(_, k)| match k {
                EdgeKind::TableCase(c) => c.clone(),
                _ => panic!("unexpected kind"),
            })
            .collect();
        assert_eq!(cases, vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn duplicate_cases_collapse() {
        let g = graph("block local.get 0 br_table 0 0 0 end", "(param i32)");
        let s = successors_of(&g, 0).unwrap();
        assert_eq!(s, vec![(2, EdgeKind::TableCase(vec![0, 1, 2]))]);
    }

    #[test]
    fn loop_back_edge_and_adjust() {
        let g = graph(
            "(block (result i32) i32.const 7 (loop local.get 0 br_if 0) i32.const 1 i32.const 2 br 0) drop",
            "(param i32)",
        );
        let back: Vec<_> = g.edges().filter(|e| e.back_edge).collect();
        assert_eq!(back.len(), 1);
        let br = g
            .edges()
            .find(|e| e.kind == EdgeKind::BranchTaken && !e.back_edge)
            .unwrap();
        // the block was entered with an empty stack and yields one value
        assert_eq!(br.adjust, Some(StackAdjust { height: 0, keep: 1 }));
    }

    #[test]
    fn if_else_shape() {
        let g = graph(
            "local.get 0 (if (then i32.const 1 drop) (else i32.const 2 drop)) nop",
            "(param i32)",
        );
        let s = successors_of(&g, 0).unwrap();
        assert_eq!(s.len(), 2);
        let then_block = s[0].0;
        let else_block = s[1].0;
        let then_succ = successors_of(&g, then_block).unwrap();
        assert_eq!(then_succ.len(), 1);
        let join = then_succ[0].0;
        assert_eq!(
            successors_of(&g, else_block).unwrap(),
            vec![(join, EdgeKind::Fallthrough)]
        );
    }

    #[test]
    fn partition_covers_body() {
        let g = graph(
            "block local.get 0 br_if 0 local.get 0 if nop else unreachable end end return",
            "(param i32)",
        );
        let mut next = 0;
        for b in &g.blocks {
            assert_eq!(b.start, next);
            assert!(b.end > b.start);
            next = b.end;
        }
        assert_eq!(next, g.instructions.len());
        assert!(matches!(g.block(99), Err(CfgError::UnknownBlock(99))));
    }

    #[test]
    fn dot_output() {
        let g = graph("local.get 0 if nop end", "(param i32)");
        let dot = g.to_dot("f0");
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("B0 -> B1"));
    }
}
