//! Immutable symbolic bitvector/boolean expressions.
//!
//! Every constructor simplifies eagerly: constants fold, identities collapse,
//! and extraction is pushed through concatenation so that memory loads over
//! concrete data come back as plain constants. Each node carries the set of
//! origins ("taint") of the leaves it was built from.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sort {
    Bool,
    Bv(u32),
}

/// Where a symbolic leaf came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    BlockchainState,
    ApplyArgCode,
    ApplyArgAction,
    ApplyArgReceiver,
    ActionData,
    ImportReturn(Arc<str>),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::BlockchainState => f.write_str("blockchain_state"),
            Origin::ApplyArgCode => f.write_str("apply_arg_code"),
            Origin::ApplyArgAction => f.write_str("apply_arg_action"),
            Origin::ApplyArgReceiver => f.write_str("apply_arg_receiver"),
            Origin::ActionData => f.write_str("action_data"),
            Origin::ImportReturn(name) => write!(f, "import_return({name})"),
        }
    }
}

impl Serialize for Origin {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub type Taint = BTreeSet<Origin>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    Neg,
    Clz,
    Ctz,
    Popcnt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    UDiv,
    SDiv,
    URem,
    SRem,
    And,
    Or,
    Xor,
    /// Shift and rotate amounts are taken modulo the operand width.
    Shl,
    LShr,
    AShr,
    Rotl,
    Rotr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pred {
    Eq,
    Ult,
    Ule,
    Slt,
    Sle,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Kind {
    Const(u128),
    BoolConst(bool),
    Var(Arc<str>),
    Un(UnOp, SymExpr),
    Bin(BinOp, SymExpr, SymExpr),
    Cmp(Pred, SymExpr, SymExpr),
    Not(SymExpr),
    And(Vec<SymExpr>),
    Or(Vec<SymExpr>),
    Ite(SymExpr, SymExpr, SymExpr),
    /// Bits `[lo, lo + width)` of the operand.
    Extract {
        lo: u32,
        arg: SymExpr,
    },
    /// Parts in ascending significance: `parts[0]` supplies the low bits.
    Concat(Vec<SymExpr>),
    ZeroExt(SymExpr),
    SignExt(SymExpr),
}

#[derive(Debug)]
struct Node {
    kind: Kind,
    sort: Sort,
    taint: Taint,
    /// structural hash, computed once from the children's cached hashes
    hash: u64,
}

/// Shared, immutable expression handle.
#[derive(Clone)]
pub struct SymExpr(Arc<Node>);

impl Eq for SymExpr {}

impl PartialEq for SymExpr {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (&*self.0, &*other.0);
        Arc::ptr_eq(&self.0, &other.0)
            || (a.hash == b.hash && a.sort == b.sort && a.kind == b.kind && a.taint == b.taint)
    }
}

impl Hash for SymExpr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl fmt::Debug for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for SymExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub(crate) fn mask(width: u32) -> u128 {
    if width >= 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    }
}

pub(crate) fn to_signed(v: u128, width: u32) -> i128 {
    if width >= 128 {
        return v as i128;
    }
    let shift = 128 - width;
    ((v << shift) as i128) >> shift
}

fn union_taints<'a>(items: impl IntoIterator<Item = &'a SymExpr>) -> Taint {
    let mut out = Taint::new();
    for e in items {
        out.extend(e.taint().iter().cloned());
    }
    out
}

/// Concrete semantics shared by the simplifier and the evaluator.
pub(crate) mod fold {
    use super::*;

    pub fn unop(op: UnOp, v: u128, w: u32) -> u128 {
        let m = mask(w);
        match op {
            UnOp::Not => !v & m,
            UnOp::Neg => v.wrapping_neg() & m,
            UnOp::Clz => {
                if v == 0 {
                    w as u128
                } else {
                    (w - (128 - v.leading_zeros())) as u128
                }
            }
            UnOp::Ctz => {
                if v == 0 {
                    w as u128
                } else {
                    v.trailing_zeros() as u128
                }
            }
            UnOp::Popcnt => v.count_ones() as u128,
        }
    }

    pub fn udiv(a: u128, b: u128, w: u32) -> u128 {
        a.checked_div(b).unwrap_or(mask(w))
    }

    pub fn urem(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            a % b
        }
    }

    fn neg(v: u128, w: u32) -> u128 {
        v.wrapping_neg() & mask(w)
    }

    fn msb(v: u128, w: u32) -> bool {
        (v >> (w - 1)) & 1 == 1
    }

    pub fn binop(op: BinOp, a: u128, b: u128, w: u32) -> u128 {
        let m = mask(w);
        let amount = |b: u128| (b % w as u128) as u32;
        match op {
            BinOp::Add => a.wrapping_add(b) & m,
            BinOp::Sub => a.wrapping_sub(b) & m,
            BinOp::Mul => a.wrapping_mul(b) & m,
            BinOp::UDiv => udiv(a, b, w),
            BinOp::URem => urem(a, b),
            BinOp::SDiv => match (msb(a, w), msb(b, w)) {
                (false, false) => udiv(a, b, w),
                (true, false) => neg(udiv(neg(a, w), b, w), w),
                (false, true) => neg(udiv(a, neg(b, w), w), w),
                (true, true) => udiv(neg(a, w), neg(b, w), w),
            },
            BinOp::SRem => match (msb(a, w), msb(b, w)) {
                (false, false) => urem(a, b),
                (true, false) => neg(urem(neg(a, w), b), w),
                (false, true) => urem(a, neg(b, w)),
                (true, true) => neg(urem(neg(a, w), neg(b, w)), w),
            },
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => (a << amount(b)) & m,
            BinOp::LShr => a >> amount(b),
            BinOp::AShr => (to_signed(a, w) >> amount(b)) as u128 & m,
            BinOp::Rotl => {
                let k = amount(b);
                if k == 0 {
                    a
                } else {
                    ((a << k) | (a >> (w - k))) & m
                }
            }
            BinOp::Rotr => {
                let k = amount(b);
                if k == 0 {
                    a
                } else {
                    ((a >> k) | (a << (w - k))) & m
                }
            }
        }
    }

    pub fn cmp(p: Pred, a: u128, b: u128, w: u32) -> bool {
        match p {
            Pred::Eq => a == b,
            Pred::Ult => a < b,
            Pred::Ule => a <= b,
            Pred::Slt => to_signed(a, w) < to_signed(b, w),
            Pred::Sle => to_signed(a, w) <= to_signed(b, w),
        }
    }
}

impl SymExpr {
    fn mk(kind: Kind, sort: Sort, taint: Taint) -> Self {
        let mut h = DefaultHasher::new();
        kind.hash(&mut h);
        sort.hash(&mut h);
        let hash = h.finish();
        SymExpr(Arc::new(Node {
            kind,
            sort,
            taint,
            hash,
        }))
    }

    fn mk_derived(kind: Kind, sort: Sort, operands: &[&SymExpr]) -> Self {
        let taint = union_taints(operands.iter().copied());
        Self::mk(kind, sort, taint)
    }

    /// A bitvector constant; `value` is truncated to `width` bits.
    pub fn constant(value: u128, width: u32) -> Self {
        assert!(
            (1..=128).contains(&width),
            "constant width {width} out of range"
        );
        Self::mk(
            Kind::Const(value & mask(width)),
            Sort::Bv(width),
            Taint::new(),
        )
    }

    fn tainted_const(value: u128, width: u32, taint: Taint) -> Self {
        Self::mk(Kind::Const(value & mask(width)), Sort::Bv(width), taint)
    }

    /// Builds a constant of arbitrary width from little-endian bytes.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        assert!(!bytes.is_empty());
        let parts: Vec<SymExpr> = bytes
            .chunks(16)
            .map(|chunk| {
                let mut v = 0u128;
                for (i, &b) in chunk.iter().enumerate() {
                    v |= u128::from(b) << (8 * i);
                }
                SymExpr::constant(v, 8 * chunk.len() as u32)
            })
            .collect();
        SymExpr::concat(parts)
    }

    pub fn u32(v: u32) -> Self {
        Self::constant(u128::from(v), 32)
    }

    pub fn u64(v: u64) -> Self {
        Self::constant(u128::from(v), 64)
    }

    pub fn bool(b: bool) -> Self {
        Self::mk(Kind::BoolConst(b), Sort::Bool, Taint::new())
    }

    fn tainted_bool(b: bool, taint: Taint) -> Self {
        Self::mk(Kind::BoolConst(b), Sort::Bool, taint)
    }

    pub fn var(name: &str, width: u32, origin: Origin) -> Self {
        Self::var_with_taint(name, width, std::iter::once(origin).collect())
    }

    pub fn var_with_taint(name: &str, width: u32, taint: Taint) -> Self {
        assert!(width >= 1);
        Self::mk(Kind::Var(Arc::from(name)), Sort::Bv(width), taint)
    }

    pub fn var_untainted(name: &str, width: u32) -> Self {
        Self::var_with_taint(name, width, Taint::new())
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn sort(&self) -> Sort {
        self.0.sort
    }

    pub fn is_bool(&self) -> bool {
        self.0.sort == Sort::Bool
    }

    /// Bit width; booleans report zero.
    pub fn width(&self) -> u32 {
        match self.0.sort {
            Sort::Bv(w) => w,
            Sort::Bool => 0,
        }
    }

    pub fn taint(&self) -> &Taint {
        &self.0.taint
    }

    pub fn as_const(&self) -> Option<u128> {
        match self.0.kind {
            Kind::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self.0.kind {
            Kind::BoolConst(b) => Some(b),
            _ => None,
        }
    }

    pub fn is_concrete(&self) -> bool {
        matches!(self.0.kind, Kind::Const(_) | Kind::BoolConst(_))
    }

    pub fn var_name(&self) -> Option<&str> {
        match &self.0.kind {
            Kind::Var(n) => Some(n),
            _ => None,
        }
    }

    pub(crate) fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn children(&self) -> Vec<&SymExpr> {
        match &self.0.kind {
            Kind::Const(_) | Kind::BoolConst(_) | Kind::Var(_) => vec![],
            Kind::Un(_, a) | Kind::Not(a) | Kind::ZeroExt(a) | Kind::SignExt(a) => vec![a],
            Kind::Extract { arg, .. } => vec![arg],
            Kind::Bin(_, a, b) | Kind::Cmp(_, a, b) => vec![a, b],
            Kind::And(v) | Kind::Or(v) | Kind::Concat(v) => v.iter().collect(),
            Kind::Ite(c, t, e) => vec![c, t, e],
        }
    }

    /// Visits every distinct node once, parents before children.
    pub fn visit(&self, mut f: impl FnMut(&SymExpr)) {
        let mut seen = HashSet::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.ptr_id()) {
                continue;
            }
            f(e);
            stack.extend(e.children());
        }
    }

    /// Free variables as (name, width).
    pub fn vars(&self) -> BTreeSet<(Arc<str>, u32)> {
        let mut out = BTreeSet::new();
        self.visit(|e| {
            if let Kind::Var(n) = e.kind() {
                out.insert((n.clone(), e.width()));
            }
        });
        out
    }

    pub fn mentions_var(&self, name: &str) -> bool {
        let mut found = false;
        self.visit(|e| {
            if e.var_name() == Some(name) {
                found = true;
            }
        });
        found
    }

    pub fn contains(&self, needle: &SymExpr) -> bool {
        let mut found = false;
        self.visit(|e| {
            if e == needle {
                found = true;
            }
        });
        found
    }

    fn bv_width(&self, what: &str) -> u32 {
        match self.0.sort {
            Sort::Bv(w) => w,
            Sort::Bool => panic!("{what}: expected bitvector, found boolean {self}"),
        }
    }

    fn expect_bool(&self, what: &str) {
        assert!(self.is_bool(), "{what}: expected boolean, found {self}");
    }

    // ---- bitvector unary ----

    pub fn unary(op: UnOp, a: &SymExpr) -> SymExpr {
        let w = a.bv_width("unary");
        if let Some(v) = a.as_const() {
            return Self::tainted_const(fold::unop(op, v, w), w, a.taint().clone());
        }
        if let (UnOp::Not, Kind::Un(UnOp::Not, inner)) | (UnOp::Neg, Kind::Un(UnOp::Neg, inner)) =
            (op, a.kind())
        {
            return inner.clone();
        }
        Self::mk_derived(Kind::Un(op, a.clone()), Sort::Bv(w), &[a])
    }

    pub fn bvnot(&self) -> SymExpr {
        Self::unary(UnOp::Not, self)
    }

    pub fn neg(&self) -> SymExpr {
        Self::unary(UnOp::Neg, self)
    }

    // ---- bitvector binary ----

    pub fn binary(op: BinOp, a: &SymExpr, b: &SymExpr) -> SymExpr {
        let w = a.bv_width("binary");
        let wb = b.bv_width("binary");
        assert_eq!(w, wb, "operand widths differ for {op:?}: {a} vs {b}");
        let union = || union_taints([a, b]);
        let zero = |t: Taint| Self::tainted_const(0, w, t);
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => {
                return Self::tainted_const(fold::binop(op, x, y, w), w, union());
            }
            (Some(x), None) => {
                let clean = a.taint().is_empty();
                match op {
                    BinOp::Add | BinOp::Or | BinOp::Xor if x == 0 && clean => return b.clone(),
                    BinOp::Mul if x == 1 && clean => return b.clone(),
                    BinOp::And if x == mask(w) && clean => return b.clone(),
                    BinOp::Mul | BinOp::And if x == 0 => return zero(union()),
                    BinOp::Or if x == mask(w) => return Self::tainted_const(x, w, union()),
                    BinOp::Shl | BinOp::LShr | BinOp::AShr | BinOp::Rotl | BinOp::Rotr
                        if x == 0 =>
                    {
                        return zero(union())
                    }
                    // canonical order puts constants on the right for commutative ops
                    BinOp::Add | BinOp::Mul | BinOp::And | BinOp::Or | BinOp::Xor => {
                        return Self::mk_derived(
                            Kind::Bin(op, b.clone(), a.clone()),
                            Sort::Bv(w),
                            &[a, b],
                        );
                    }
                    _ => {}
                }
            }
            (None, Some(y)) => {
                let clean = b.taint().is_empty();
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Or | BinOp::Xor if y == 0 && clean => {
                        return a.clone()
                    }
                    BinOp::Shl | BinOp::LShr | BinOp::AShr | BinOp::Rotl | BinOp::Rotr
                        if y % w as u128 == 0 && clean =>
                    {
                        return a.clone()
                    }
                    BinOp::Mul | BinOp::UDiv | BinOp::SDiv if y == 1 && clean => return a.clone(),
                    BinOp::And if y == mask(w) && clean => return a.clone(),
                    BinOp::Mul | BinOp::And if y == 0 => return zero(union()),
                    BinOp::URem | BinOp::SRem if y == 1 => return zero(union()),
                    BinOp::Or if y == mask(w) => return Self::tainted_const(y, w, union()),
                    BinOp::Add => {
                        // (x + c1) + c2 => x + (c1 + c2)
                        if let Kind::Bin(BinOp::Add, inner, c1) = a.kind() {
                            if let Some(c1v) = c1.as_const() {
                                if c1.taint().is_empty() && clean {
                                    let c = SymExpr::constant(c1v.wrapping_add(y), w);
                                    return SymExpr::binary(BinOp::Add, inner, &c);
                                }
                            }
                        }
                    }
                    BinOp::Sub if clean => {
                        // x - c => x + (-c), so offsets accumulate in one form
                        let c = SymExpr::constant(y.wrapping_neg(), w);
                        return SymExpr::binary(BinOp::Add, a, &c);
                    }
                    _ => {}
                }
            }
            (None, None) => {
                if a == b {
                    match op {
                        BinOp::Sub | BinOp::Xor => return zero(union()),
                        BinOp::And | BinOp::Or => return a.clone(),
                        _ => {}
                    }
                }
            }
        }
        Self::mk_derived(Kind::Bin(op, a.clone(), b.clone()), Sort::Bv(w), &[a, b])
    }

    pub fn add(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::Add, self, o)
    }
    pub fn sub(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::Sub, self, o)
    }
    pub fn mul(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::Mul, self, o)
    }
    pub fn and(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::And, self, o)
    }
    pub fn or(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::Or, self, o)
    }
    pub fn xor(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::Xor, self, o)
    }
    pub fn urem(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::URem, self, o)
    }
    pub fn srem(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::SRem, self, o)
    }
    pub fn udiv(&self, o: &SymExpr) -> SymExpr {
        Self::binary(BinOp::UDiv, self, o)
    }

    // ---- predicates ----

    pub fn cmp(p: Pred, a: &SymExpr, b: &SymExpr) -> SymExpr {
        let w = a.bv_width("cmp");
        assert_eq!(w, b.bv_width("cmp"), "comparison widths differ: {a} vs {b}");
        let union = || union_taints([a, b]);
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Self::tainted_bool(fold::cmp(p, x, y, w), union());
        }
        if a == b {
            let v = matches!(p, Pred::Eq | Pred::Ule | Pred::Sle);
            return Self::tainted_bool(v, union());
        }
        if p == Pred::Eq {
            // constants on the right
            if a.as_const().is_some() {
                return Self::cmp(p, b, a);
            }
            // (ite c 1 0) == k  =>  c, !c or false
            if let (Kind::Ite(c, t, e), Some(k)) = (a.kind(), b.as_const()) {
                if let (Some(tv), Some(ev)) = (t.as_const(), e.as_const()) {
                    if tv != ev
                        && b.taint().is_empty()
                        && t.taint().is_empty()
                        && e.taint().is_empty()
                    {
                        if k == tv {
                            return c.clone();
                        }
                        if k == ev {
                            return c.not();
                        }
                        return Self::tainted_bool(false, union());
                    }
                }
            }
            // zext(x) == k  =>  x == k' when k fits
            if let (Kind::ZeroExt(inner), Some(k)) = (a.kind(), b.as_const()) {
                if b.taint().is_empty() {
                    let iw = inner.width();
                    if k >> iw == 0 {
                        return Self::cmp(p, inner, &SymExpr::constant(k, iw));
                    }
                    return Self::tainted_bool(false, union());
                }
            }
        }
        Self::mk_derived(Kind::Cmp(p, a.clone(), b.clone()), Sort::Bool, &[a, b])
    }

    pub fn eq(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Eq, self, o)
    }
    pub fn ne(&self, o: &SymExpr) -> SymExpr {
        self.eq(o).not()
    }
    pub fn ult(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Ult, self, o)
    }
    pub fn ule(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Ule, self, o)
    }
    pub fn ugt(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Ult, o, self)
    }
    pub fn uge(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Ule, o, self)
    }
    pub fn slt(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Slt, self, o)
    }
    pub fn sle(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Sle, self, o)
    }
    pub fn sgt(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Slt, o, self)
    }
    pub fn sge(&self, o: &SymExpr) -> SymExpr {
        Self::cmp(Pred::Sle, o, self)
    }

    // ---- boolean connectives ----

    pub fn not(&self) -> SymExpr {
        self.expect_bool("not");
        match self.kind() {
            Kind::BoolConst(b) => Self::tainted_bool(!b, self.taint().clone()),
            Kind::Not(inner) => inner.clone(),
            _ => Self::mk_derived(Kind::Not(self.clone()), Sort::Bool, &[self]),
        }
    }

    fn connective(items: Vec<SymExpr>, is_and: bool) -> SymExpr {
        let unit = is_and;
        let mut flat: Vec<SymExpr> = Vec::new();
        let mut absorbed = Taint::new();
        for it in items {
            it.expect_bool("and/or");
            match it.kind() {
                Kind::BoolConst(b) if *b == unit => absorbed.extend(it.taint().iter().cloned()),
                Kind::BoolConst(_) => {
                    let mut t = union_taints(flat.iter());
                    t.extend(it.taint().iter().cloned());
                    return Self::tainted_bool(!unit, t);
                }
                Kind::And(inner) if is_and => flat.extend(inner.iter().cloned()),
                Kind::Or(inner) if !is_and => flat.extend(inner.iter().cloned()),
                _ => {
                    if !flat.contains(&it) {
                        flat.push(it)
                    }
                }
            }
        }
        match flat.len() {
            0 => Self::tainted_bool(unit, absorbed),
            1 if absorbed.is_empty() => flat.pop().unwrap(),
            _ => {
                let mut taint = union_taints(flat.iter());
                taint.extend(absorbed);
                let kind = if is_and {
                    Kind::And(flat)
                } else {
                    Kind::Or(flat)
                };
                Self::mk(kind, Sort::Bool, taint)
            }
        }
    }

    pub fn and_all(items: Vec<SymExpr>) -> SymExpr {
        Self::connective(items, true)
    }

    pub fn or_all(items: Vec<SymExpr>) -> SymExpr {
        Self::connective(items, false)
    }

    pub fn band(&self, o: &SymExpr) -> SymExpr {
        Self::and_all(vec![self.clone(), o.clone()])
    }

    pub fn bor(&self, o: &SymExpr) -> SymExpr {
        Self::or_all(vec![self.clone(), o.clone()])
    }

    pub fn ite(c: &SymExpr, t: &SymExpr, e: &SymExpr) -> SymExpr {
        c.expect_bool("ite");
        assert_eq!(t.sort(), e.sort(), "ite branches differ: {t} vs {e}");
        if let Some(b) = c.as_bool() {
            if c.taint().is_empty() {
                return if b { t.clone() } else { e.clone() };
            }
        }
        if t == e && c.taint().is_subset(t.taint()) {
            return t.clone();
        }
        if let Kind::Not(inner) = c.kind() {
            return Self::ite(inner, e, t);
        }
        Self::mk_derived(
            Kind::Ite(c.clone(), t.clone(), e.clone()),
            t.sort(),
            &[c, t, e],
        )
    }

    /// Boolean to `width`-bit 0/1, as Wasm comparisons produce.
    pub fn bool_to_bv(&self, width: u32) -> SymExpr {
        Self::ite(
            self,
            &SymExpr::constant(1, width),
            &SymExpr::constant(0, width),
        )
    }

    /// Wasm truthiness: `self != 0`.
    pub fn is_nonzero(&self) -> SymExpr {
        self.ne(&SymExpr::constant(0, self.bv_width("is_nonzero")))
    }

    // ---- structure ----

    pub fn extract(&self, lo: u32, width: u32) -> SymExpr {
        let w = self.bv_width("extract");
        assert!(
            width >= 1 && lo + width <= w,
            "extract [{lo}, {}) out of range for width {w}",
            lo + width
        );
        if lo == 0 && width == w {
            return self.clone();
        }
        match self.kind() {
            Kind::Const(v) if width <= 128 => {
                return Self::tainted_const(v >> lo, width, self.taint().clone());
            }
            Kind::Extract { lo: inner_lo, arg } => return arg.extract(inner_lo + lo, width),
            Kind::Concat(parts) => {
                let mut picked = Vec::new();
                let mut base = 0;
                for p in parts {
                    let pw = p.width();
                    let (s, e) = (base.max(lo), (base + pw).min(lo + width));
                    if s < e {
                        picked.push(p.extract(s - base, e - s));
                    }
                    base += pw;
                    if base >= lo + width {
                        break;
                    }
                }
                return SymExpr::concat(picked);
            }
            Kind::ZeroExt(inner) => {
                let iw = inner.width();
                if lo + width <= iw {
                    return inner.extract(lo, width);
                }
                if lo >= iw {
                    return Self::tainted_const(0, width, self.taint().clone());
                }
            }
            Kind::SignExt(inner) if lo + width <= inner.width() => {
                return inner.extract(lo, width);
            }
            _ => {}
        }
        Self::mk_derived(
            Kind::Extract {
                lo,
                arg: self.clone(),
            },
            Sort::Bv(width),
            &[self],
        )
    }

    /// Concatenates parts given in ascending significance.
    pub fn concat(parts: Vec<SymExpr>) -> SymExpr {
        let mut flat: Vec<SymExpr> = Vec::with_capacity(parts.len());
        for p in parts {
            p.bv_width("concat");
            match p.kind() {
                Kind::Concat(inner) => {
                    for q in inner {
                        push_part(&mut flat, q.clone());
                    }
                }
                _ => push_part(&mut flat, p),
            }
        }
        assert!(!flat.is_empty(), "empty concat");
        if flat.len() == 1 {
            return flat.pop().unwrap();
        }
        let width: u32 = flat.iter().map(|p| p.width()).sum();
        let taint = union_taints(flat.iter());
        Self::mk(Kind::Concat(flat), Sort::Bv(width), taint)
    }

    pub fn zext(&self, width: u32) -> SymExpr {
        let w = self.bv_width("zext");
        assert!(width >= w);
        if width == w {
            return self.clone();
        }
        if let Some(v) = self.as_const() {
            if width <= 128 {
                return Self::tainted_const(v, width, self.taint().clone());
            }
        }
        Self::mk_derived(Kind::ZeroExt(self.clone()), Sort::Bv(width), &[self])
    }

    pub fn sext(&self, width: u32) -> SymExpr {
        let w = self.bv_width("sext");
        assert!(width >= w);
        if width == w {
            return self.clone();
        }
        if let Some(v) = self.as_const() {
            if width <= 128 {
                let s = to_signed(v, w) as u128;
                return Self::tainted_const(s, width, self.taint().clone());
            }
        }
        Self::mk_derived(Kind::SignExt(self.clone()), Sort::Bv(width), &[self])
    }
}

impl SymExpr {
    /// Rebuilds the expression with variables replaced where `f` says so.
    /// Constructors re-simplify, so substituting constants folds the result.
    pub fn substitute(&self, f: &mut dyn FnMut(&str, u32) -> Option<SymExpr>) -> SymExpr {
        let mut memo = std::collections::HashMap::new();
        self.subst_rec(f, &mut memo)
    }

    fn subst_rec(
        &self,
        f: &mut dyn FnMut(&str, u32) -> Option<SymExpr>,
        memo: &mut std::collections::HashMap<usize, SymExpr>,
    ) -> SymExpr {
        if let Some(e) = memo.get(&self.ptr_id()) {
            return e.clone();
        }
        let mut go =
            |e: &SymExpr, f: &mut dyn FnMut(&str, u32) -> Option<SymExpr>| e.subst_rec(f, memo);
        let out = match self.kind() {
            Kind::Const(_) | Kind::BoolConst(_) => self.clone(),
            Kind::Var(n) => f(n, self.width()).unwrap_or_else(|| self.clone()),
            Kind::Un(op, a) => SymExpr::unary(*op, &go(a, f)),
            Kind::Bin(op, a, b) => {
                let a = go(a, f);
                SymExpr::binary(*op, &a, &go(b, f))
            }
            Kind::Cmp(p, a, b) => {
                let a = go(a, f);
                SymExpr::cmp(*p, &a, &go(b, f))
            }
            Kind::Not(a) => go(a, f).not(),
            Kind::And(v) => SymExpr::and_all(v.iter().map(|e| go(e, f)).collect()),
            Kind::Or(v) => SymExpr::or_all(v.iter().map(|e| go(e, f)).collect()),
            Kind::Ite(c, t, e) => {
                let c = go(c, f);
                let t = go(t, f);
                SymExpr::ite(&c, &t, &go(e, f))
            }
            Kind::Extract { lo, arg } => go(arg, f).extract(*lo, self.width()),
            Kind::Concat(parts) => SymExpr::concat(parts.iter().map(|e| go(e, f)).collect()),
            Kind::ZeroExt(a) => go(a, f).zext(self.width()),
            Kind::SignExt(a) => go(a, f).sext(self.width()),
        };
        memo.insert(self.ptr_id(), out.clone());
        out
    }
}

fn push_part(flat: &mut Vec<SymExpr>, p: SymExpr) {
    if let Some(last) = flat.last() {
        // adjacent constants fold while they fit
        if let (Some(lv), Some(pv)) = (last.as_const(), p.as_const()) {
            let (lw, pw) = (last.width(), p.width());
            if lw + pw <= 128 {
                let mut taint = last.taint().clone();
                taint.extend(p.taint().iter().cloned());
                let merged = SymExpr::tainted_const(lv | (pv << lw), lw + pw, taint);
                *flat.last_mut().unwrap() = merged;
                return;
            }
        }
        // contiguous slices of one base rejoin
        if let (Kind::Extract { lo: l1, arg: a1 }, Kind::Extract { lo: l2, arg: a2 }) =
            (last.kind(), p.kind())
        {
            if a1 == a2 && l1 + last.width() == *l2 {
                let merged = a1.extract(*l1, last.width() + p.width());
                *flat.last_mut().unwrap() = merged;
                return;
            }
        }
        if let Kind::Extract { lo: l2, arg: a2 } = p.kind() {
            if *l2 == last.width()
                && a2.width() >= last.width()
                && a2.extract(0, last.width()) == *last
            {
                let merged = a2.extract(0, last.width() + p.width());
                *flat.last_mut().unwrap() = merged;
                return;
            }
        }
    }
    flat.push(p);
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, head: &str, items: &[&SymExpr]| {
            write!(f, "({head}")?;
            for it in items {
                write!(f, " {it}")?;
            }
            write!(f, ")")
        };
        match self.kind() {
            Kind::Const(v) => write!(f, "(_ bv{v} {})", self.width()),
            Kind::BoolConst(b) => write!(f, "{b}"),
            Kind::Var(n) => f.write_str(n),
            Kind::Un(op, a) => {
                let name = match op {
                    UnOp::Not => "bvnot",
                    UnOp::Neg => "bvneg",
                    UnOp::Clz => "clz",
                    UnOp::Ctz => "ctz",
                    UnOp::Popcnt => "popcnt",
                };
                list(f, name, &[a])
            }
            Kind::Bin(op, a, b) => {
                let name = match op {
                    BinOp::Add => "bvadd",
                    BinOp::Sub => "bvsub",
                    BinOp::Mul => "bvmul",
                    BinOp::UDiv => "bvudiv",
                    BinOp::SDiv => "bvsdiv",
                    BinOp::URem => "bvurem",
                    BinOp::SRem => "bvsrem",
                    BinOp::And => "bvand",
                    BinOp::Or => "bvor",
                    BinOp::Xor => "bvxor",
                    BinOp::Shl => "bvshl",
                    BinOp::LShr => "bvlshr",
                    BinOp::AShr => "bvashr",
                    BinOp::Rotl => "rotl",
                    BinOp::Rotr => "rotr",
                };
                list(f, name, &[a, b])
            }
            Kind::Cmp(p, a, b) => {
                let name = match p {
                    Pred::Eq => "=",
                    Pred::Ult => "bvult",
                    Pred::Ule => "bvule",
                    Pred::Slt => "bvslt",
                    Pred::Sle => "bvsle",
                };
                list(f, name, &[a, b])
            }
            Kind::Not(a) => list(f, "not", &[a]),
            Kind::And(v) => list(f, "and", &v.iter().collect::<Vec<_>>()),
            Kind::Or(v) => list(f, "or", &v.iter().collect::<Vec<_>>()),
            Kind::Ite(c, t, e) => list(f, "ite", &[c, t, e]),
            Kind::Extract { lo, arg } => {
                write!(f, "((_ extract {} {lo}) {arg})", lo + self.width() - 1)
            }
            Kind::Concat(parts) => list(f, "concat", &parts.iter().rev().collect::<Vec<_>>()),
            Kind::ZeroExt(a) => write!(f, "((_ zero_extend {}) {a})", self.width() - a.width()),
            Kind::SignExt(a) => write!(f, "((_ sign_extend {}) {a})", self.width() - a.width()),
        }
    }
}

/// Taint of an expression: the origins of every leaf it depends on.
pub fn taint_of(expr: &SymExpr) -> Taint {
    expr.taint().clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x32() -> SymExpr {
        SymExpr::var_untainted("x", 32)
    }

    #[test]
    fn constants_fold() {
        let a = SymExpr::u64(2);
        let b = SymExpr::u64(3);
        assert_eq!(a.add(&b).as_const(), Some(5));
        assert_eq!(
            SymExpr::u32(7).udiv(&SymExpr::u32(0)).as_const(),
            Some(0xffff_ffff)
        );
        assert_eq!(SymExpr::u32(7).urem(&SymExpr::u32(0)).as_const(), Some(7));
        let minus7 = SymExpr::u32((-7i32) as u32);
        assert_eq!(
            minus7.srem(&SymExpr::u32(2)).as_const(),
            Some((-1i32) as u32 as u128)
        );
        assert_eq!(
            SymExpr::binary(BinOp::Shl, &SymExpr::u32(1), &SymExpr::u32(33)).as_const(),
            Some(2)
        );
    }

    #[test]
    fn identities() {
        let x = x32();
        assert_eq!(x.add(&SymExpr::u32(0)), x);
        assert_eq!(x.xor(&x).as_const(), Some(0));
        assert_eq!(x.eq(&x).as_bool(), Some(true));
        let c = x.eq(&SymExpr::u32(4));
        assert_eq!(c.bool_to_bv(32).is_nonzero(), c);
        assert_eq!(c.bool_to_bv(32).eq(&SymExpr::u32(0)), c.not());
    }

    #[test]
    fn extract_through_concat() {
        let lo = SymExpr::var_untainted("lo", 16);
        let hi = SymExpr::var_untainted("hi", 16);
        let cat = SymExpr::concat(vec![lo.clone(), hi.clone()]);
        assert_eq!(cat.extract(0, 16), lo);
        assert_eq!(cat.extract(16, 16), hi);
        assert_eq!(cat.extract(8, 8), lo.extract(8, 8));
        // slices of one base rejoin
        let v = SymExpr::var_untainted("v", 64);
        let rejoined = SymExpr::concat(vec![v.extract(0, 8), v.extract(8, 24)]);
        assert_eq!(rejoined, v.extract(0, 32));
    }

    #[test]
    fn concat_of_constants_folds() {
        let e = SymExpr::from_bytes(&[0x01, 0x02, 0x03, 0x04]);
        assert_eq!(e.as_const(), Some(0x0403_0201));
        assert_eq!(e.width(), 32);
        let wide = SymExpr::from_bytes(&[7u8; 40]);
        assert_eq!(wide.width(), 320);
        assert_eq!(wide.extract(296, 16).as_const(), Some(0x0707));
        assert_eq!(wide.extract(300, 16).as_const(), Some(0x7070));
    }

    #[test]
    fn taint_union() {
        let t = SymExpr::var("now", 64, Origin::BlockchainState);
        let r = t.urem(&SymExpr::u64(100));
        assert_eq!(
            taint_of(&r),
            [Origin::BlockchainState].into_iter().collect()
        );
        assert!(taint_of(&SymExpr::u64(3)).is_empty());
        // absorbing simplification keeps the taint of what it absorbed
        let z = t.mul(&SymExpr::u64(0));
        assert_eq!(z.as_const(), Some(0));
        assert!(z.taint().contains(&Origin::BlockchainState));
    }

    #[test]
    #[should_panic]
    fn width_mismatch_panics() {
        let _ = SymExpr::u32(1).add(&SymExpr::u64(1));
    }
}
