//! The exploration driver and per-instruction semantics.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use super::state::{CallEvent, Frame, ImportCallRecord, MachineState, RemSite};
use super::{
    deadline_after, EngineError, ExplorationOptions, ExploreStats, FilterAction, PathEvent,
    PathRecord, PathTree, Program, TerminalKind,
};
use crate::cfg::{CfgEdge, ControlFlowGraph, EdgeKind, StackAdjust};
use crate::emulator::{self, Outcome};
use crate::symbolic::{
    BinOp, Constraint, Model, Origin, Provenance, SatResult, Solver, SymExpr, Taint, UnOp,
    PAGE_SIZE,
};
use crate::wasm::{
    CmpKind, FuncSignature, Instruction, IntBinary, IntUnary, Numeric, Operator, WasmModule,
};

enum Child {
    Live(MachineState),
    Done(MachineState, TerminalKind, String),
}

enum Flow {
    Continue,
    Halt(TerminalKind, String),
    Fork(Vec<Child>),
}

impl Flow {
    fn into_children(self, st: MachineState, out: &mut Vec<Child>) {
        match self {
            Flow::Continue => out.push(Child::Live(st)),
            Flow::Halt(k, d) => out.push(Child::Done(st, k, d)),
            Flow::Fork(kids) => out.extend(kids),
        }
    }
}

fn underflow(ins: &Instruction) -> Flow {
    Flow::Halt(
        TerminalKind::Unsupported,
        format!("operand stack underflow at {:#x}", ins.offset),
    )
}

macro_rules! pop {
    ($st:expr, $ins:expr) => {
        match $st.frame_mut().stack.pop() {
            Some(v) => v,
            None => return underflow($ins),
        }
    };
}

struct Explorer<'a> {
    program: &'a Program,
    options: &'a ExplorationOptions,
    solver: &'a Solver,
    deadline: Instant,
    entry: u32,
    paths: Vec<PathRecord>,
    stats: ExploreStats,
    stop: bool,
}

fn new_frame(
    module: &WasmModule,
    func: u32,
    cfg: Arc<ControlFlowGraph>,
    args: Vec<SymExpr>,
    sig: &FuncSignature,
) -> Frame {
    let mut locals = args;
    if let Some(body) = module.body(func) {
        locals.extend(
            body.local_types()
                .into_iter()
                .map(|t| SymExpr::constant(0, t.bits())),
        );
    }
    Frame {
        func,
        cfg,
        block: 0,
        cursor: 0,
        locals,
        stack: Vec::new(),
        loop_counts: BTreeMap::new(),
        result_count: sig.results.len(),
    }
}

pub(super) fn run(
    program: &Program,
    entry: u32,
    args: &[SymExpr],
    options: &ExplorationOptions,
    solver: &Solver,
    bindings: Option<Arc<Model>>,
) -> Result<PathTree, EngineError> {
    options.validate()?;
    let start = Instant::now();
    let module = program.module();
    if module.is_imported(entry) || module.body(entry).is_none() {
        return Err(EngineError::NotLocal(entry));
    }
    let sig = module
        .func_signature(entry)
        .ok_or(EngineError::NotLocal(entry))?
        .clone();
    let fits = args.len() == sig.params.len()
        && args
            .iter()
            .zip(&sig.params)
            .all(|(a, t)| !a.is_bool() && a.width() == t.bits());
    if !fits {
        return Err(EngineError::ArgumentMismatch {
            expected: sig.params.clone(),
            got: args.len(),
            widths: args.iter().map(SymExpr::width).collect(),
        });
    }
    let cfg = program.cfg(entry)?;
    let mut st = MachineState::new(
        program.initial_globals().to_vec(),
        program.initial_memory().clone(),
        bindings,
    );
    let args: Vec<SymExpr> = args.iter().map(|a| st.resolve(a)).collect();
    st.frames.push(new_frame(module, entry, cfg, args, &sig));
    st.visited.insert((entry, 0));

    let mut ex = Explorer {
        program,
        options,
        solver,
        deadline: deadline_after(start, options.timeout),
        entry,
        paths: Vec::new(),
        stats: ExploreStats::default(),
        stop: false,
    };
    ex.drive(st);
    Ok(PathTree {
        entry,
        paths: ex.paths,
        stats: ex.stats,
    })
}

fn prov(func: u32, ins: &Instruction) -> Provenance {
    Provenance::Instr {
        func,
        offset: ins.offset,
    }
}

impl Explorer<'_> {
    fn drive(&mut self, init: MachineState) {
        let mut work = vec![Child::Live(init)];
        while let Some(item) = work.pop() {
            let mut st = match item {
                Child::Done(s, k, d) => {
                    self.finish(s, k, d);
                    continue;
                }
                Child::Live(s) => s,
            };
            loop {
                if self.stop {
                    self.finish(st, TerminalKind::Stopped, String::new());
                    break;
                }
                if Instant::now() >= self.deadline {
                    self.stats.timed_out = true;
                    self.finish(
                        st,
                        TerminalKind::TimeoutPruned,
                        "exploration budget exhausted".into(),
                    );
                    break;
                }
                self.stats.instructions += 1;
                match self.advance(&mut st) {
                    Flow::Continue => {}
                    Flow::Halt(k, d) => {
                        self.finish(st, k, d);
                        break;
                    }
                    Flow::Fork(kids) => {
                        if kids.len() > 1 {
                            self.stats.forks += 1;
                        }
                        work.extend(kids.into_iter().rev());
                        break;
                    }
                }
            }
        }
        self.stats.stopped = self.stop;
    }

    fn finish(&mut self, st: MachineState, terminal: TerminalKind, detail: String) {
        self.paths.push(PathRecord {
            id: self.paths.len(),
            entry: self.entry,
            terminal,
            detail,
            constraints: st.constraints,
            import_calls: st.import_calls,
            call_events: st.call_events,
            rem_sites: st.rem_sites,
            visited: st.visited,
            max_call_depth: st.max_call_depth,
            flags: st.flags,
            return_values: st.return_values,
        });
    }

    fn filter(&mut self, ev: &PathEvent<'_>, st: &MachineState) -> FilterAction {
        match &self.options.target_filter {
            Some(f) => {
                let a = f(ev, st, self.solver);
                if a == FilterAction::Stop {
                    self.stop = true;
                }
                a
            }
            None => FilterAction::Continue,
        }
    }

    fn settle(action: FilterAction, st: MachineState) -> Child {
        match action {
            FilterAction::Continue => Child::Live(st),
            FilterAction::Abandon => Child::Done(
                st,
                TerminalKind::Filtered,
                "abandoned by path filter".into(),
            ),
            FilterAction::Stop => Child::Done(st, TerminalKind::Stopped, String::new()),
        }
    }

    /// A copy of `st` under the extra condition `guard`, unless provably infeasible.
    fn branch(
        &mut self,
        st: &MachineState,
        guard: SymExpr,
        provenance: Provenance,
    ) -> Option<Child> {
        match guard.as_bool() {
            Some(false) => {
                self.stats.infeasible += 1;
                return None;
            }
            Some(true) => return Some(Child::Live(st.clone())),
            None => {}
        }
        let base = st.constraint_exprs();
        let res =
            self.solver
                .check_extension(&base, std::slice::from_ref(&guard), Some(self.deadline));
        let mut child = st.clone();
        match res {
            SatResult::Unsat => {
                self.stats.infeasible += 1;
                return None;
            }
            SatResult::Unknown => {
                self.stats.unknown += 1;
                child.flags.solver_unknown = true;
            }
            SatResult::Sat(_) => {}
        }
        child.constraints.push(Constraint::new(guard, provenance));
        let last = child.constraints.last().expect("just pushed").clone();
        let action = self.filter(&PathEvent::ConstraintAdded(&last), &child);
        Some(Self::settle(action, child))
    }

    fn goto(
        &self,
        st: &mut MachineState,
        target: u32,
        adjust: Option<StackAdjust>,
        back_edge: bool,
    ) -> Result<(), (TerminalKind, String)> {
        let bound = self.options.loop_bound;
        let f = st.frame_mut();
        if back_edge {
            let c = f.loop_counts.entry(target).or_insert(0);
            *c += 1;
            if *c > bound {
                return Err((
                    TerminalKind::LoopBound,
                    format!("back-edge to block {target} taken more than {bound} times"),
                ));
            }
        }
        if let Some(a) = adjust {
            let (h, keep) = (a.height as usize, a.keep as usize);
            if f.stack.len() < h + keep {
                return Err((
                    TerminalKind::Unsupported,
                    format!("operand stack underflow on branch to block {target}"),
                ));
            }
            let kept = f.stack.split_off(f.stack.len() - keep);
            f.stack.truncate(h);
            f.stack.extend(kept);
        }
        f.block = target;
        f.cursor = 0;
        let func = f.func;
        st.visited.insert((func, target));
        Ok(())
    }

    fn follow(&self, c: Child, e: &CfgEdge) -> Child {
        match c {
            Child::Live(mut s) => match self.goto(&mut s, e.target, e.adjust, e.back_edge) {
                Ok(()) => Child::Live(s),
                Err((k, d)) => Child::Done(s, k, d),
            },
            done => done,
        }
    }

    fn take(&self, st: &mut MachineState, e: &CfgEdge) -> Flow {
        match self.goto(st, e.target, e.adjust, e.back_edge) {
            Ok(()) => Flow::Continue,
            Err((k, d)) => Flow::Halt(k, d),
        }
    }

    fn advance(&mut self, st: &mut MachineState) -> Flow {
        let (cfg, block, cursor) = {
            let f = st.frame();
            (f.cfg.clone(), f.block, f.cursor)
        };
        let instrs = cfg.instructions_of(block);
        if cursor >= instrs.len() {
            return match cfg.edges_from(block).first() {
                Some(e) => self.take(st, e),
                None => Flow::Halt(
                    TerminalKind::Unsupported,
                    format!("block {block} has no successor"),
                ),
            };
        }
        let ins = &instrs[cursor];
        let is_exit = cfg.blocks[block as usize].start + cursor + 1 == cfg.instructions.len();
        st.frame_mut().cursor += 1;
        self.exec(st, &cfg, block, ins, is_exit)
    }

    fn edge<'c>(cfg: &'c ControlFlowGraph, block: u32, kind: &EdgeKind) -> Option<&'c CfgEdge> {
        cfg.edges_from(block).iter().find(|e| &e.kind == kind)
    }

    fn exec(
        &mut self,
        st: &mut MachineState,
        cfg: &ControlFlowGraph,
        block: u32,
        ins: &Instruction,
        is_exit: bool,
    ) -> Flow {
        let func = st.frame().func;
        let p = prov(func, ins);
        match &ins.op {
            Operator::Nop | Operator::Block(_) | Operator::Loop(_) | Operator::Else => {}
            Operator::End => {
                if is_exit {
                    return self.do_return(st, ins);
                }
            }
            Operator::Unreachable => {
                return Flow::Halt(TerminalKind::Exited, "unreachable".into());
            }
            Operator::Return => return self.do_return(st, ins),
            Operator::Br(_) => {
                let Some(e) = Self::edge(cfg, block, &EdgeKind::BranchTaken) else {
                    return Flow::Halt(TerminalKind::Unsupported, "br without target".into());
                };
                return self.take(st, e);
            }
            Operator::BrIf(_) | Operator::If(_) => {
                let c = pop!(st, ins);
                let cond = c.is_nonzero();
                let taken = Self::edge(cfg, block, &EdgeKind::BranchTaken);
                let not_taken = Self::edge(cfg, block, &EdgeKind::BranchNotTaken);
                let mut kids = Vec::new();
                for (g, e) in [(cond.clone(), taken), (cond.not(), not_taken)] {
                    let Some(e) = e else { continue };
                    if let Some(c) = self.branch(st, g, p.clone()) {
                        kids.push(self.follow(c, e));
                    }
                }
                return Flow::Fork(kids);
            }
            Operator::BrTable(targets) => {
                let sel = pop!(st, ins);
                let n = targets.len() as u32;
                let mut kids = Vec::new();
                for e in cfg.edges_from(block) {
                    let EdgeKind::TableCase(cases) = &e.kind else {
                        continue;
                    };
                    let guard = SymExpr::or_all(
                        cases
                            .iter()
                            .map(|&c| {
                                if c + 1 == n {
                                    sel.uge(&SymExpr::u32(c))
                                } else {
                                    sel.eq(&SymExpr::u32(c))
                                }
                            })
                            .collect(),
                    );
                    if let Some(c) = self.branch(st, guard, p.clone()) {
                        kids.push(self.follow(c, e));
                    }
                }
                return Flow::Fork(kids);
            }
            Operator::Call(f) => return self.call(st, *f, ins),
            Operator::CallIndirect { type_index, .. } => {
                return self.call_indirect(st, *type_index, ins)
            }
            Operator::Drop => {
                pop!(st, ins);
            }
            Operator::Select => {
                let c = pop!(st, ins);
                let b = pop!(st, ins);
                let a = pop!(st, ins);
                st.frame_mut()
                    .stack
                    .push(SymExpr::ite(&c.is_nonzero(), &a, &b));
            }
            Operator::LocalGet(i) => {
                let Some(v) = st.frame().locals.get(*i as usize).cloned() else {
                    return Flow::Halt(TerminalKind::Unsupported, format!("no local {i}"));
                };
                st.frame_mut().stack.push(v);
            }
            Operator::LocalSet(i) | Operator::LocalTee(i) => {
                let v = pop!(st, ins);
                let f = st.frame_mut();
                let Some(slot) = f.locals.get_mut(*i as usize) else {
                    return Flow::Halt(TerminalKind::Unsupported, format!("no local {i}"));
                };
                *slot = v.clone();
                if matches!(ins.op, Operator::LocalTee(_)) {
                    f.stack.push(v);
                }
            }
            Operator::GlobalGet(i) => {
                let Some(v) = st.globals.get(*i as usize).cloned() else {
                    return Flow::Halt(TerminalKind::Unsupported, format!("no global {i}"));
                };
                st.frame_mut().stack.push(v);
            }
            Operator::GlobalSet(i) => {
                let v = pop!(st, ins);
                let Some(slot) = st.globals.get_mut(*i as usize) else {
                    return Flow::Halt(TerminalKind::Unsupported, format!("no global {i}"));
                };
                *slot = v;
            }
            Operator::Load(kind, m) => {
                let (bytes, ty, signed) = kind.shape();
                let pos = match st.frame().stack.len().checked_sub(1) {
                    Some(p) => p,
                    None => return underflow(ins),
                };
                let addr = st.frame().stack[pos].clone();
                if !addr.is_concrete() {
                    return self.concretize(st, pos, addr, p);
                }
                pop!(st, ins);
                let ea = addr.as_const().unwrap_or(0) as u32 as u64 + u64::from(m.offset);
                let v = match st.load(ea, u64::from(bytes)) {
                    Ok(v) => v,
                    Err(e) => return Flow::Halt(TerminalKind::Trapped, e.to_string()),
                };
                let bits = ty.bits();
                let v = if bytes * 8 < bits {
                    if signed {
                        v.sext(bits)
                    } else {
                        v.zext(bits)
                    }
                } else {
                    v
                };
                st.frame_mut().stack.push(v);
            }
            Operator::Store(kind, m) => {
                let pos = match st.frame().stack.len().checked_sub(2) {
                    Some(p) => p,
                    None => return underflow(ins),
                };
                let addr = st.frame().stack[pos].clone();
                if !addr.is_concrete() {
                    return self.concretize(st, pos, addr, p);
                }
                let value = pop!(st, ins);
                pop!(st, ins);
                let n = kind.bytes();
                let ea = addr.as_const().unwrap_or(0) as u32 as u64 + u64::from(m.offset);
                let data = value.extract(0, 8 * n);
                if let Err(e) = st.memory.store(ea, u64::from(n), data) {
                    return Flow::Halt(TerminalKind::Trapped, e.to_string());
                }
            }
            Operator::MemorySize => {
                let pages = st.memory.limit() / PAGE_SIZE;
                st.frame_mut().stack.push(SymExpr::u32(pages as u32));
            }
            Operator::MemoryGrow => {
                pop!(st, ins);
                st.frame_mut().stack.push(SymExpr::u32(u32::MAX));
            }
            Operator::I32Const(v) => st.frame_mut().stack.push(SymExpr::u32(*v as u32)),
            Operator::I64Const(v) => st.frame_mut().stack.push(SymExpr::u64(*v as u64)),
            Operator::F32Const(b) => st.frame_mut().stack.push(SymExpr::u32(*b)),
            Operator::F64Const(b) => st.frame_mut().stack.push(SymExpr::u64(*b)),
            Operator::Numeric(n) => return self.numeric(st, *n, ins, p),
        }
        Flow::Continue
    }

    fn numeric(
        &mut self,
        st: &mut MachineState,
        n: Numeric,
        ins: &Instruction,
        p: Provenance,
    ) -> Flow {
        let out = match n {
            Numeric::Eqz(w) => {
                let x = pop!(st, ins);
                x.eq(&SymExpr::constant(0, w.bits())).bool_to_bv(32)
            }
            Numeric::Cmp(_, k) => {
                let b = pop!(st, ins);
                let a = pop!(st, ins);
                let r = match k {
                    CmpKind::Eq => a.eq(&b),
                    CmpKind::Ne => a.ne(&b),
                    CmpKind::LtS => a.slt(&b),
                    CmpKind::LtU => a.ult(&b),
                    CmpKind::GtS => a.sgt(&b),
                    CmpKind::GtU => a.ugt(&b),
                    CmpKind::LeS => a.sle(&b),
                    CmpKind::LeU => a.ule(&b),
                    CmpKind::GeS => a.sge(&b),
                    CmpKind::GeU => a.uge(&b),
                };
                r.bool_to_bv(32)
            }
            Numeric::Unary(_, u) => {
                let x = pop!(st, ins);
                let op = match u {
                    IntUnary::Clz => UnOp::Clz,
                    IntUnary::Ctz => UnOp::Ctz,
                    IntUnary::Popcnt => UnOp::Popcnt,
                };
                SymExpr::unary(op, &x)
            }
            Numeric::Binary(w, op) => {
                let b = pop!(st, ins);
                let a = pop!(st, ins);
                let bin = match op {
                    IntBinary::DivS | IntBinary::DivU | IntBinary::RemS | IntBinary::RemU => {
                        return self.division(st, op, a, b, w.bits(), ins, p)
                    }
                    IntBinary::Add => BinOp::Add,
                    IntBinary::Sub => BinOp::Sub,
                    IntBinary::Mul => BinOp::Mul,
                    IntBinary::And => BinOp::And,
                    IntBinary::Or => BinOp::Or,
                    IntBinary::Xor => BinOp::Xor,
                    IntBinary::Shl => BinOp::Shl,
                    IntBinary::ShrS => BinOp::AShr,
                    IntBinary::ShrU => BinOp::LShr,
                    IntBinary::Rotl => BinOp::Rotl,
                    IntBinary::Rotr => BinOp::Rotr,
                };
                SymExpr::binary(bin, &a, &b)
            }
            Numeric::Wrap => pop!(st, ins).extract(0, 32),
            Numeric::Extend { signed } => {
                let x = pop!(st, ins);
                if signed {
                    x.sext(64)
                } else {
                    x.zext(64)
                }
            }
            Numeric::SignExtend { width, from_bits } => {
                pop!(st, ins).extract(0, from_bits).sext(width.bits())
            }
            Numeric::Reinterpret { .. } => pop!(st, ins),
            Numeric::Float(_) | Numeric::TruncSat(_) => {
                return Flow::Halt(
                    TerminalKind::Unsupported,
                    format!("{} at {:#x}", ins.op.mnemonic(), ins.offset),
                )
            }
        };
        st.frame_mut().stack.push(out);
        Flow::Continue
    }

    #[allow(clippy::too_many_arguments)]
    fn division(
        &mut self,
        st: &mut MachineState,
        op: IntBinary,
        a: SymExpr,
        b: SymExpr,
        w: u32,
        ins: &Instruction,
        p: Provenance,
    ) -> Flow {
        let mut trap = b.eq(&SymExpr::constant(0, w));
        if op == IntBinary::DivS {
            let min = SymExpr::constant(1u128 << (w - 1), w);
            let minus_one = SymExpr::constant(u128::MAX, w);
            trap = trap.bor(&a.eq(&min).band(&b.eq(&minus_one)));
        }
        let result = match op {
            IntBinary::DivU => a.udiv(&b),
            IntBinary::DivS => SymExpr::binary(BinOp::SDiv, &a, &b),
            IntBinary::RemU => a.urem(&b),
            _ => a.srem(&b),
        };
        let is_rem = matches!(op, IntBinary::RemU | IntBinary::RemS);
        let func = st.frame().func;
        let complete = |s: &mut MachineState| {
            if is_rem {
                let site = RemSite {
                    func,
                    offset: ins.offset,
                    dividend: a.clone(),
                    divisor: b.clone(),
                    constraint_index: s.constraints.len(),
                };
                s.rem_sites.push(site);
            }
            s.frame_mut().stack.push(result.clone());
        };
        let trap_msg = format!("integer trap at {:#x}", ins.offset);
        match trap.as_bool() {
            Some(true) => Flow::Halt(TerminalKind::Trapped, trap_msg),
            Some(false) => {
                complete(st);
                Flow::Continue
            }
            None => {
                let mut kids = Vec::new();
                if let Some(c) = self.branch(st, trap.clone(), p.clone()) {
                    kids.push(match c {
                        Child::Live(s) => Child::Done(s, TerminalKind::Trapped, trap_msg),
                        done => done,
                    });
                }
                if let Some(c) = self.branch(st, trap.not(), p) {
                    kids.push(match c {
                        Child::Live(mut s) => {
                            complete(&mut s);
                            Child::Live(s)
                        }
                        done => done,
                    });
                }
                Flow::Fork(kids)
            }
        }
    }

    /// Forks over up to `concretization_limit` values of the stack slot `pos`
    /// and re-executes the current instruction in each child.
    fn concretize(&mut self, st: &MachineState, pos: usize, e: SymExpr, p: Provenance) -> Flow {
        let (vals, complete) = self.solver.enumerate_values(
            &st.constraint_exprs(),
            &e,
            self.options.concretization_limit,
            Some(self.deadline),
        );
        let mut kids = Vec::new();
        for v in &vals {
            let k = SymExpr::constant(*v, e.width());
            if let Some(c) = self.branch(st, e.eq(&k), p.clone()) {
                kids.push(match c {
                    Child::Live(mut s) => {
                        let f = s.frame_mut();
                        f.stack[pos] = k;
                        f.cursor -= 1;
                        Child::Live(s)
                    }
                    done => done,
                });
            }
        }
        if !complete {
            kids.push(Child::Done(
                st.clone(),
                TerminalKind::Abandoned,
                format!("operand {e} has values beyond the {} explored", vals.len()),
            ));
        }
        Flow::Fork(kids)
    }

    fn do_return(&mut self, st: &mut MachineState, ins: &Instruction) -> Flow {
        let frame = st.frames.pop().expect("live state has a frame");
        let n = frame.result_count;
        if frame.stack.len() < n {
            st.frames.push(frame);
            return underflow(ins);
        }
        let results = frame.stack[frame.stack.len() - n..].to_vec();
        if st.frames.is_empty() {
            st.return_values = results;
            return Flow::Halt(TerminalKind::Returned, String::new());
        }
        st.frame_mut().stack.extend(results);
        Flow::Continue
    }

    fn call(&mut self, st: &mut MachineState, f: u32, ins: &Instruction) -> Flow {
        let module = self.program.module();
        let Some(sig) = module.func_signature(f).cloned() else {
            return Flow::Halt(
                TerminalKind::Unsupported,
                format!("call to unknown function {f}"),
            );
        };
        if let Some(name) = self.program.import_name(f) {
            let name = name.to_string();
            return self.call_import(st, name, &sig, ins);
        }
        let depth = st.depth() + 1;
        if depth > self.options.call_depth {
            return Flow::Halt(
                TerminalKind::DepthPruned,
                format!("call to {} at depth {depth}", module.function_label(f)),
            );
        }
        let np = sig.params.len();
        let len = st.frame().stack.len();
        if len < np {
            return underflow(ins);
        }
        let cfg = match self.program.cfg(f) {
            Ok(c) => c,
            Err(e) => return Flow::Halt(TerminalKind::Unsupported, e.to_string()),
        };
        let args = st.frame_mut().stack.split_off(len - np);
        let caller = st.frame().func;
        st.call_events.push(CallEvent {
            callee: f,
            caller,
            depth,
            args: args.clone(),
            constraint_index: st.constraints.len(),
            import_index: st.import_calls.len(),
        });
        st.frames.push(new_frame(module, f, cfg, args, &sig));
        st.visited.insert((f, 0));
        st.max_call_depth = st.max_call_depth.max(depth);
        match self.filter(&PathEvent::EnterFunction { func: f, depth }, st) {
            FilterAction::Continue => Flow::Continue,
            FilterAction::Abandon => {
                Flow::Halt(TerminalKind::Filtered, "abandoned by path filter".into())
            }
            FilterAction::Stop => Flow::Halt(TerminalKind::Stopped, String::new()),
        }
    }

    fn call_indirect(&mut self, st: &mut MachineState, type_index: u32, ins: &Instruction) -> Flow {
        let module = self.program.module();
        let Some(want) = module.types.get(type_index as usize) else {
            return Flow::Halt(TerminalKind::Unsupported, format!("no type {type_index}"));
        };
        let idx = pop!(st, ins);
        let candidates: Vec<(u32, u32)> = self
            .program
            .table()
            .iter()
            .filter(|(_, &f)| module.func_signature(f) == Some(want))
            .map(|(&s, &f)| (s, f))
            .collect();
        let p = prov(st.frame().func, ins);
        if let Some(v) = idx.as_const() {
            return match candidates.iter().find(|(s, _)| u128::from(*s) == v) {
                Some(&(_, f)) => self.call(st, f, ins),
                None => Flow::Halt(
                    TerminalKind::Trapped,
                    format!("indirect call through slot {v} fails"),
                ),
            };
        }
        let mut kids = Vec::new();
        for &(slot, f) in &candidates {
            if let Some(c) = self.branch(st, idx.eq(&SymExpr::u32(slot)), p.clone()) {
                match c {
                    Child::Live(mut s) => {
                        let flow = self.call(&mut s, f, ins);
                        flow.into_children(s, &mut kids);
                    }
                    done => kids.push(done),
                }
            }
        }
        let miss = SymExpr::and_all(
            candidates
                .iter()
                .map(|&(slot, _)| idx.ne(&SymExpr::u32(slot)))
                .collect(),
        );
        if let Some(c) = self.branch(st, miss, p) {
            kids.push(match c {
                Child::Live(s) => Child::Done(
                    s,
                    TerminalKind::Trapped,
                    "indirect call outside matching table slots".into(),
                ),
                done => done,
            });
        }
        Flow::Fork(kids)
    }

    fn call_import(
        &mut self,
        st: &mut MachineState,
        name: String,
        sig: &FuncSignature,
        ins: &Instruction,
    ) -> Flow {
        let np = sig.params.len();
        let len = st.frame().stack.len();
        if len < np {
            return underflow(ins);
        }
        let p = prov(st.frame().func, ins);
        for &i in emulator::concrete_args(&name) {
            if i >= np {
                continue;
            }
            let pos = len - np + i;
            let v = st.frame().stack[pos].clone();
            if !v.is_concrete() {
                return self.concretize(st, pos, v, p);
            }
        }
        let args = st.frame_mut().stack.split_off(len - np);
        let index = st.import_calls.len();
        st.import_calls.push(ImportCallRecord {
            name: name.clone(),
            args: args.clone(),
            return_value: None,
            caller: st.frame().func,
            depth: st.depth(),
            constraint_index: st.constraints.len(),
        });
        let rec = st.import_calls[index].clone();
        match self.filter(&PathEvent::ImportCall(&rec), st) {
            FilterAction::Continue => {}
            FilterAction::Abandon => {
                return Flow::Halt(TerminalKind::Filtered, "abandoned by path filter".into())
            }
            FilterAction::Stop => return Flow::Halt(TerminalKind::Stopped, String::new()),
        }
        let outcome = emulator::emulate(&name, sig, &args, st);
        self.apply_outcome(st, index, outcome, sig, &name)
    }

    fn apply_outcome(
        &mut self,
        st: &mut MachineState,
        index: usize,
        outcome: Outcome,
        sig: &FuncSignature,
        name: &str,
    ) -> Flow {
        match outcome {
            Outcome::Return(v) => {
                let v = match (v, sig.results.first()) {
                    (_, None) => None,
                    (Some(v), Some(_)) => Some(v),
                    (None, Some(t)) => {
                        let taint: Taint =
                            std::iter::once(Origin::ImportReturn(name.into())).collect();
                        Some(st.fresh(name, t.bits(), taint))
                    }
                };
                st.import_calls[index].return_value = v.clone();
                if let Some(v) = v {
                    st.frame_mut().stack.push(v);
                }
                Flow::Continue
            }
            Outcome::Halt(k, d) => Flow::Halt(k, d),
            Outcome::Fork(alts) => {
                let mut kids = Vec::new();
                for (g, out) in alts {
                    let p = Provenance::Import {
                        name: name.to_string(),
                    };
                    if let Some(c) = self.branch(st, g, p) {
                        match c {
                            Child::Live(mut s) => {
                                let flow = self.apply_outcome(&mut s, index, out, sig, name);
                                flow.into_children(s, &mut kids);
                            }
                            done => kids.push(done),
                        }
                    }
                }
                Flow::Fork(kids)
            }
        }
    }
}
