//! Tseitin bit-blasting of expressions into CNF.

use std::collections::HashMap;
use std::ops::Not;
use std::sync::Arc;
use std::time::Instant;

use batsat::{lbool, Callbacks, Lit, Solver as Sat, SolverInterface, SolverOpts};

use crate::symbolic::eval::{BitVal, Model};
use crate::symbolic::expr::{BinOp, Kind, Pred, SymExpr, UnOp};

/// Stops the SAT search once the wall-clock deadline passes.
pub(crate) struct Deadline(pub Instant);

impl Callbacks for Deadline {
    fn stop(&self) -> bool {
        Instant::now() >= self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Bit {
    Const(bool),
    Lit(Lit),
}

impl Not for Bit {
    type Output = Bit;
    fn not(self) -> Bit {
        match self {
            Bit::Const(b) => Bit::Const(!b),
            Bit::Lit(l) => Bit::Lit(!l),
        }
    }
}

const F: Bit = Bit::Const(false);
const T: Bit = Bit::Const(true);

#[derive(Hash, PartialEq, Eq)]
enum GateKey {
    And(Lit, Lit),
    Xor(Lit, Lit),
}

pub(crate) struct Blaster {
    sat: Sat<Deadline>,
    gates: HashMap<GateKey, Lit>,
    bv_memo: HashMap<usize, Vec<Bit>>,
    bool_memo: HashMap<usize, Bit>,
    vars: HashMap<Arc<str>, Vec<Option<Lit>>>,
    deadline: Instant,
}

pub(crate) enum Outcome {
    Sat(Model),
    Unsat,
    Unknown,
}

impl Blaster {
    pub fn new(deadline: Instant) -> Self {
        Blaster {
            sat: Sat::new(SolverOpts::default(), Deadline(deadline)),
            gates: HashMap::new(),
            bv_memo: HashMap::new(),
            bool_memo: HashMap::new(),
            vars: HashMap::new(),
            deadline,
        }
    }

    pub fn timed_out(&self) -> bool {
        Instant::now() >= self.deadline
    }

    fn fresh(&mut self) -> Lit {
        Lit::new(self.sat.new_var_default(), true)
    }

    fn clause(&mut self, lits: &[Lit]) {
        let mut c = lits.to_vec();
        self.sat.add_clause_reuse(&mut c);
    }

    /// Asserts a top-level boolean. Returns false when it is trivially false.
    pub fn assert(&mut self, e: &SymExpr) -> bool {
        match self.boolean(e) {
            Bit::Const(b) => b,
            Bit::Lit(l) => {
                self.clause(&[l]);
                true
            }
        }
    }

    pub fn solve(&mut self) -> Outcome {
        let r = self.sat.solve_limited(&[]);
        if r == lbool::TRUE {
            let mut model = Model::new();
            for (name, bits) in &self.vars {
                let mut v = BitVal::zero(bits.len() as u32);
                for (i, b) in bits.iter().enumerate() {
                    if let Some(l) = b {
                        if self.sat.value_lit(*l) == lbool::TRUE {
                            v.set_bit(i as u32, true);
                        }
                    }
                }
                model.insert(name.to_string(), v);
            }
            Outcome::Sat(model)
        } else if r == lbool::FALSE {
            Outcome::Unsat
        } else {
            Outcome::Unknown
        }
    }

    // ---- gates ----

    fn and2(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (F, _) | (_, F) => F,
            (T, x) | (x, T) => x,
            (Bit::Lit(x), Bit::Lit(y)) => {
                if x == y {
                    return a;
                }
                if x == !y {
                    return F;
                }
                let key = if x < y {
                    GateKey::And(x, y)
                } else {
                    GateKey::And(y, x)
                };
                if let Some(&o) = self.gates.get(&key) {
                    return Bit::Lit(o);
                }
                let o = self.fresh();
                self.clause(&[!o, x]);
                self.clause(&[!o, y]);
                self.clause(&[o, !x, !y]);
                self.gates.insert(key, o);
                Bit::Lit(o)
            }
        }
    }

    fn or2(&mut self, a: Bit, b: Bit) -> Bit {
        !self.and2(!a, !b)
    }

    fn xor2(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(x), Bit::Const(y)) => Bit::Const(x ^ y),
            (F, x) | (x, F) => x,
            (T, x) | (x, T) => !x,
            (Bit::Lit(x), Bit::Lit(y)) => {
                if x == y {
                    return F;
                }
                if x == !y {
                    return T;
                }
                // normalize polarity so x^y and !x^y share a gate
                let (px, py, flip) = (x.sign(), y.sign(), x.sign() != y.sign());
                let x = if px { x } else { !x };
                let y = if py { y } else { !y };
                let key = if x < y {
                    GateKey::Xor(x, y)
                } else {
                    GateKey::Xor(y, x)
                };
                let o = match self.gates.get(&key) {
                    Some(&o) => o,
                    None => {
                        let o = self.fresh();
                        self.clause(&[!o, x, y]);
                        self.clause(&[!o, !x, !y]);
                        self.clause(&[o, !x, y]);
                        self.clause(&[o, x, !y]);
                        self.gates.insert(key, o);
                        o
                    }
                };
                Bit::Lit(if flip { !o } else { o })
            }
        }
    }

    fn mux(&mut self, c: Bit, t: Bit, e: Bit) -> Bit {
        match (c, t, e) {
            (T, _, _) => t,
            (F, _, _) => e,
            _ if t == e => t,
            (_, T, _) => self.or2(c, e),
            (_, F, _) => self.and2(!c, e),
            (_, _, T) => self.or2(!c, t),
            (_, _, F) => self.and2(c, t),
            (Bit::Lit(c), Bit::Lit(t), Bit::Lit(e)) => {
                let o = self.fresh();
                self.clause(&[!c, !t, o]);
                self.clause(&[!c, t, !o]);
                self.clause(&[c, !e, o]);
                self.clause(&[c, e, !o]);
                Bit::Lit(o)
            }
        }
    }

    fn and_many(&mut self, bits: &[Bit]) -> Bit {
        let mut lits = Vec::new();
        for &b in bits {
            match b {
                F => return F,
                T => {}
                Bit::Lit(l) => lits.push(l),
            }
        }
        lits.sort();
        lits.dedup();
        match lits.len() {
            0 => T,
            1 => Bit::Lit(lits[0]),
            2 => self.and2(Bit::Lit(lits[0]), Bit::Lit(lits[1])),
            _ => {
                if lits.windows(2).any(|w| w[0] == !w[1]) {
                    return F;
                }
                let o = self.fresh();
                let mut big = vec![o];
                for &l in &lits {
                    self.clause(&[!o, l]);
                    big.push(!l);
                }
                self.clause(&big);
                Bit::Lit(o)
            }
        }
    }

    fn or_many(&mut self, bits: &[Bit]) -> Bit {
        let neg: Vec<Bit> = bits.iter().map(|&b| !b).collect();
        !self.and_many(&neg)
    }

    // ---- word-level circuits ----

    fn add(&mut self, a: &[Bit], b: &[Bit], mut carry: Bit) -> (Vec<Bit>, Bit) {
        let mut out = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let axb = self.xor2(a[i], b[i]);
            out.push(self.xor2(axb, carry));
            let g = self.and2(a[i], b[i]);
            let p = self.and2(axb, carry);
            carry = self.or2(g, p);
        }
        (out, carry)
    }

    fn sub(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        let nb: Vec<Bit> = b.iter().map(|&x| !x).collect();
        self.add(a, &nb, T).0
    }

    fn neg(&mut self, a: &[Bit]) -> Vec<Bit> {
        let zero = vec![F; a.len()];
        self.sub(&zero, a)
    }

    fn ult(&mut self, a: &[Bit], b: &[Bit]) -> Bit {
        let nb: Vec<Bit> = b.iter().map(|&x| !x).collect();
        let (_, carry) = self.add(a, &nb, T);
        !carry
    }

    fn slt(&mut self, a: &[Bit], b: &[Bit]) -> Bit {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        let top = a.len() - 1;
        a[top] = !a[top];
        b[top] = !b[top];
        self.ult(&a, &b)
    }

    fn eq(&mut self, a: &[Bit], b: &[Bit]) -> Bit {
        let mut same = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            same.push(!self.xor2(a[i], b[i]));
        }
        self.and_many(&same)
    }

    fn mux_word(&mut self, c: Bit, t: &[Bit], e: &[Bit]) -> Vec<Bit> {
        (0..t.len()).map(|i| self.mux(c, t[i], e[i])).collect()
    }

    fn mul(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        let w = a.len();
        let mut acc = vec![F; w];
        for i in 0..w {
            if b[i] == F {
                continue;
            }
            let mut partial = vec![F; w];
            for j in 0..w - i {
                partial[i + j] = self.and2(a[j], b[i]);
            }
            acc = self.add(&acc, &partial, F).0;
        }
        acc
    }

    /// Restoring division; a zero divisor yields all-ones quotient and the
    /// dividend as remainder.
    fn udivrem(&mut self, a: &[Bit], b: &[Bit]) -> (Vec<Bit>, Vec<Bit>) {
        let w = a.len();
        let mut q = vec![F; w];
        let mut r = vec![F; w];
        let mut bx = b.to_vec();
        bx.push(F);
        for i in (0..w).rev() {
            let mut shifted = Vec::with_capacity(w + 1);
            shifted.push(a[i]);
            shifted.extend_from_slice(&r);
            let lt = self.ult(&shifted, &bx);
            let ge = !lt;
            let diff = self.sub(&shifted, &bx);
            let next = self.mux_word(ge, &diff, &shifted);
            r = next[..w].to_vec();
            q[i] = ge;
        }
        (q, r)
    }

    fn sdivrem(&mut self, a: &[Bit], b: &[Bit], want_rem: bool) -> Vec<Bit> {
        let top = a.len() - 1;
        let (sa, sb) = (a[top], b[top]);
        let na = self.neg(a);
        let nb = self.neg(b);
        let abs_a = self.mux_word(sa, &na, a);
        let abs_b = self.mux_word(sb, &nb, b);
        let (q, r) = self.udivrem(&abs_a, &abs_b);
        if want_rem {
            let nr = self.neg(&r);
            self.mux_word(sa, &nr, &r)
        } else {
            let flip = self.xor2(sa, sb);
            let nq = self.neg(&q);
            self.mux_word(flip, &nq, &q)
        }
    }

    fn shift(&mut self, op: BinOp, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        let w = a.len();
        assert!(w.is_power_of_two(), "shift on non power-of-two width {w}");
        let stages = w.trailing_zeros() as usize;
        let mut cur = a.to_vec();
        for (k, &s) in b.iter().enumerate().take(stages) {
            let d = 1usize << k;
            let msb = cur[w - 1];
            let shifted: Vec<Bit> = (0..w)
                .map(|i| match op {
                    BinOp::Shl => {
                        if i >= d {
                            cur[i - d]
                        } else {
                            F
                        }
                    }
                    BinOp::LShr => cur.get(i + d).copied().unwrap_or(F),
                    BinOp::AShr => cur.get(i + d).copied().unwrap_or(msb),
                    BinOp::Rotl => cur[(i + w - d) % w],
                    BinOp::Rotr => cur[(i + d) % w],
                    _ => unreachable!(),
                })
                .collect();
            cur = self.mux_word(s, &shifted, &cur);
        }
        cur
    }

    fn popcount(&mut self, bits: &[Bit], w: usize) -> Vec<Bit> {
        let cw = (usize::BITS - bits.len().leading_zeros()) as usize;
        let mut acc = vec![F; cw.max(1)];
        for &b in bits {
            let mut one = vec![F; acc.len()];
            one[0] = b;
            acc = self.add(&acc, &one, F).0;
        }
        acc.resize(w, F);
        acc
    }

    fn leading_zero_prefixes(&mut self, ordered: impl Iterator<Item = Bit>) -> Vec<Bit> {
        let mut run = T;
        let mut out = Vec::new();
        for b in ordered {
            run = self.and2(run, !b);
            out.push(run);
        }
        out
    }

    // ---- expression traversal ----

    fn var_bits(&mut self, name: &Arc<str>, width: u32, lo: u32, len: u32) -> Vec<Bit> {
        if !self.vars.contains_key(name) {
            self.vars.insert(name.clone(), vec![None; width as usize]);
        }
        let mut out = Vec::with_capacity(len as usize);
        for i in lo..lo + len {
            let existing = self.vars[name][i as usize];
            let l = match existing {
                Some(l) => l,
                None => {
                    let l = self.fresh();
                    self.vars.get_mut(name).unwrap()[i as usize] = Some(l);
                    l
                }
            };
            out.push(Bit::Lit(l));
        }
        out
    }

    pub fn boolean(&mut self, e: &SymExpr) -> Bit {
        if let Some(&b) = self.bool_memo.get(&e.ptr_id()) {
            return b;
        }
        let out = match e.kind() {
            Kind::BoolConst(b) => Bit::Const(*b),
            Kind::Not(a) => !self.boolean(a),
            Kind::And(items) => {
                let bits: Vec<Bit> = items.iter().map(|i| self.boolean(i)).collect();
                self.and_many(&bits)
            }
            Kind::Or(items) => {
                let bits: Vec<Bit> = items.iter().map(|i| self.boolean(i)).collect();
                self.or_many(&bits)
            }
            Kind::Ite(c, t, f) => {
                let c = self.boolean(c);
                let t = self.boolean(t);
                let f = self.boolean(f);
                self.mux(c, t, f)
            }
            Kind::Cmp(p, a, b) => {
                let a = self.bits(a);
                let b = self.bits(b);
                match p {
                    Pred::Eq => self.eq(&a, &b),
                    Pred::Ult => self.ult(&a, &b),
                    Pred::Ule => !self.ult(&b, &a),
                    Pred::Slt => self.slt(&a, &b),
                    Pred::Sle => !self.slt(&b, &a),
                }
            }
            _ => unreachable!("non-boolean node in boolean position: {e}"),
        };
        self.bool_memo.insert(e.ptr_id(), out);
        out
    }

    pub fn bits(&mut self, e: &SymExpr) -> Vec<Bit> {
        if let Some(b) = self.bv_memo.get(&e.ptr_id()) {
            return b.clone();
        }
        let w = e.width() as usize;
        let out = match e.kind() {
            Kind::Const(v) => (0..w).map(|i| Bit::Const((v >> i) & 1 == 1)).collect(),
            Kind::Var(name) => self.var_bits(name, w as u32, 0, w as u32),
            Kind::Un(op, a) => {
                let a = self.bits(a);
                match op {
                    UnOp::Not => a.iter().map(|&x| !x).collect(),
                    UnOp::Neg => self.neg(&a),
                    UnOp::Popcnt => self.popcount(&a, w),
                    UnOp::Clz => {
                        let p = self.leading_zero_prefixes(a.iter().rev().copied());
                        self.popcount(&p, w)
                    }
                    UnOp::Ctz => {
                        let p = self.leading_zero_prefixes(a.iter().copied());
                        self.popcount(&p, w)
                    }
                }
            }
            Kind::Bin(op, a, b) => {
                let a = self.bits(a);
                let b = self.bits(b);
                match op {
                    BinOp::Add => self.add(&a, &b, F).0,
                    BinOp::Sub => self.sub(&a, &b),
                    BinOp::Mul => self.mul(&a, &b),
                    BinOp::UDiv => self.udivrem(&a, &b).0,
                    BinOp::URem => self.udivrem(&a, &b).1,
                    BinOp::SDiv => self.sdivrem(&a, &b, false),
                    BinOp::SRem => self.sdivrem(&a, &b, true),
                    BinOp::And => (0..w).map(|i| self.and2(a[i], b[i])).collect(),
                    BinOp::Or => (0..w).map(|i| self.or2(a[i], b[i])).collect(),
                    BinOp::Xor => (0..w).map(|i| self.xor2(a[i], b[i])).collect(),
                    BinOp::Shl | BinOp::LShr | BinOp::AShr | BinOp::Rotl | BinOp::Rotr => {
                        self.shift(*op, &a, &b)
                    }
                }
            }
            Kind::Ite(c, t, f) => {
                let c = self.boolean(c);
                let t = self.bits(t);
                let f = self.bits(f);
                self.mux_word(c, &t, &f)
            }
            Kind::Extract { lo, arg } => match arg.kind() {
                Kind::Var(name) => self.var_bits(name, arg.width(), *lo, w as u32),
                _ => {
                    let a = self.bits(arg);
                    a[*lo as usize..*lo as usize + w].to_vec()
                }
            },
            Kind::Concat(parts) => {
                let mut out = Vec::with_capacity(w);
                for p in parts {
                    out.extend(self.bits(p));
                }
                out
            }
            Kind::ZeroExt(a) => {
                let mut a = self.bits(a);
                a.resize(w, F);
                a
            }
            Kind::SignExt(a) => {
                let mut a = self.bits(a);
                let top = *a.last().unwrap();
                a.resize(w, top);
                a
            }
            _ => unreachable!("boolean node in bitvector position: {e}"),
        };
        self.bv_memo.insert(e.ptr_id(), out.clone());
        out
    }
}
