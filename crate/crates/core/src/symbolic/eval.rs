//! Concrete evaluation of expressions under a variable assignment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Serialize, Serializer};

use super::expr::{fold, mask, Kind, SymExpr};

/// A concrete bitvector of any width, little-endian 64-bit limbs.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVal {
    width: u32,
    words: Vec<u64>,
}

impl BitVal {
    pub fn zero(width: u32) -> Self {
        BitVal {
            width,
            words: vec![0; width.div_ceil(64) as usize],
        }
    }

    pub fn from_u128(v: u128, width: u32) -> Self {
        let mut out = Self::zero(width);
        let v = v & mask(width.min(128));
        for (i, w) in out.words.iter_mut().enumerate().take(2) {
            *w = (v >> (64 * i)) as u64;
        }
        out.normalize();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut out = Self::zero(8 * bytes.len() as u32);
        for (i, &b) in bytes.iter().enumerate() {
            out.words[i / 8] |= u64::from(b) << (8 * (i % 8));
        }
        out
    }

    fn normalize(&mut self) {
        let rem = self.width % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn bit(&self, i: u32) -> bool {
        (self.words[(i / 64) as usize] >> (i % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: u32, v: bool) {
        let w = &mut self.words[(i / 64) as usize];
        if v {
            *w |= 1 << (i % 64);
        } else {
            *w &= !(1 << (i % 64));
        }
    }

    /// Low 128 bits.
    pub fn to_u128(&self) -> u128 {
        let lo = self.words.first().copied().unwrap_or(0) as u128;
        let hi = self.words.get(1).copied().unwrap_or(0) as u128;
        lo | (hi << 64)
    }

    pub fn to_u64(&self) -> u64 {
        self.to_u128() as u64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.width.div_ceil(8))
            .map(|i| (self.words[(i / 8) as usize] >> (8 * (i % 8))) as u8)
            .collect()
    }

    pub fn extract(&self, lo: u32, width: u32) -> BitVal {
        let mut out = BitVal::zero(width);
        for i in 0..width {
            if self.bit(lo + i) {
                out.set_bit(i, true);
            }
        }
        out
    }

    /// Concatenates parts given in ascending significance.
    pub fn concat(parts: &[BitVal]) -> BitVal {
        let width = parts.iter().map(|p| p.width).sum();
        let mut out = BitVal::zero(width);
        let mut base = 0;
        for p in parts {
            for i in 0..p.width {
                if p.bit(i) {
                    out.set_bit(base + i, true);
                }
            }
            base += p.width;
        }
        out
    }
}

impl fmt::Debug for BitVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for BitVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x")?;
        let digits = self.width.div_ceil(4).max(1);
        for d in (0..digits).rev() {
            let mut nib = 0;
            for b in 0..4 {
                let i = 4 * d + b;
                if i < self.width && self.bit(i) {
                    nib |= 1 << b;
                }
            }
            write!(f, "{nib:x}")?;
        }
        write!(f, ":{}", self.width)
    }
}

impl Serialize for BitVal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A satisfying assignment: variable name to value.
pub type Model = BTreeMap<String, BitVal>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Bv(BitVal),
}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            Value::Bv(_) => None,
        }
    }

    pub fn as_bv(&self) -> Option<&BitVal> {
        match self {
            Value::Bv(v) => Some(v),
            Value::Bool(_) => None,
        }
    }
}

/// Evaluates `expr`; variables missing from `model` read as zero.
pub fn evaluate(expr: &SymExpr, model: &Model) -> Value {
    let mut memo = HashMap::new();
    eval_rec(expr, model, &mut memo)
}

pub fn eval_bool(expr: &SymExpr, model: &Model) -> bool {
    evaluate(expr, model)
        .as_bool()
        .unwrap_or_else(|| panic!("expected boolean expression: {expr}"))
}

pub fn eval_u128(expr: &SymExpr, model: &Model) -> u128 {
    match evaluate(expr, model) {
        Value::Bv(v) => v.to_u128(),
        Value::Bool(b) => b as u128,
    }
}

fn bv(v: Value) -> BitVal {
    match v {
        Value::Bv(b) => b,
        Value::Bool(_) => unreachable!("sort checked at construction"),
    }
}

fn boolean(v: Value) -> bool {
    match v {
        Value::Bool(b) => b,
        Value::Bv(_) => unreachable!("sort checked at construction"),
    }
}

fn eval_rec(e: &SymExpr, model: &Model, memo: &mut HashMap<usize, Value>) -> Value {
    if let Some(v) = memo.get(&e.ptr_id()) {
        return v.clone();
    }
    let w = e.width();
    let small = |memo: &mut HashMap<usize, Value>, x: &SymExpr| -> u128 {
        assert!(x.width() <= 128, "arithmetic on {}-bit operand", x.width());
        bv(eval_rec(x, model, memo)).to_u128()
    };
    let out = match e.kind() {
        Kind::Const(v) => Value::Bv(BitVal::from_u128(*v, w)),
        Kind::BoolConst(b) => Value::Bool(*b),
        Kind::Var(name) => match model.get(&**name) {
            Some(v) if v.width() == w => Value::Bv(v.clone()),
            Some(v) => Value::Bv(v.extract(0, w.min(v.width())).resized(w)),
            None => Value::Bv(BitVal::zero(w)),
        },
        Kind::Un(op, a) => {
            let x = small(memo, a);
            Value::Bv(BitVal::from_u128(fold::unop(*op, x, w), w))
        }
        Kind::Bin(op, a, b) => {
            let x = small(memo, a);
            let y = small(memo, b);
            Value::Bv(BitVal::from_u128(fold::binop(*op, x, y, w), w))
        }
        Kind::Cmp(p, a, b) => {
            let x = small(memo, a);
            let y = small(memo, b);
            Value::Bool(fold::cmp(*p, x, y, a.width()))
        }
        Kind::Not(a) => Value::Bool(!boolean(eval_rec(a, model, memo))),
        Kind::And(items) => {
            let mut r = true;
            for it in items {
                r &= boolean(eval_rec(it, model, memo));
            }
            Value::Bool(r)
        }
        Kind::Or(items) => {
            let mut r = false;
            for it in items {
                r |= boolean(eval_rec(it, model, memo));
            }
            Value::Bool(r)
        }
        Kind::Ite(c, t, f) => {
            if boolean(eval_rec(c, model, memo)) {
                eval_rec(t, model, memo)
            } else {
                eval_rec(f, model, memo)
            }
        }
        Kind::Extract { lo, arg } => Value::Bv(bv(eval_rec(arg, model, memo)).extract(*lo, w)),
        Kind::Concat(parts) => {
            let vals: Vec<BitVal> = parts.iter().map(|p| bv(eval_rec(p, model, memo))).collect();
            Value::Bv(BitVal::concat(&vals))
        }
        Kind::ZeroExt(a) => Value::Bv(bv(eval_rec(a, model, memo)).resized(w)),
        Kind::SignExt(a) => {
            let v = bv(eval_rec(a, model, memo));
            let top = v.bit(v.width() - 1);
            let mut out = v.resized(w);
            for i in a.width()..w {
                out.set_bit(i, top);
            }
            Value::Bv(out)
        }
    };
    memo.insert(e.ptr_id(), out.clone());
    out
}

impl BitVal {
    /// Zero-extends or truncates to `width`.
    pub fn resized(&self, width: u32) -> BitVal {
        let mut out = BitVal::zero(width);
        for i in 0..width.min(self.width) {
            if self.bit(i) {
                out.set_bit(i, true);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitval_roundtrip() {
        let v = BitVal::from_bytes(&[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(v.width(), 72);
        assert_eq!(v.to_bytes(), vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(v.extract(8, 16).to_u128(), 0x0302);
        let c = BitVal::concat(&[BitVal::from_u128(0xab, 8), BitVal::from_u128(0xcd, 8)]);
        assert_eq!(c.to_u128(), 0xcdab);
    }

    #[test]
    fn evaluates_with_model() {
        let x = SymExpr::var_untainted("x", 32);
        let e = x.add(&SymExpr::u32(5)).eq(&SymExpr::u32(12));
        let mut m = Model::new();
        m.insert("x".into(), BitVal::from_u128(7, 32));
        assert!(eval_bool(&e, &m));
        m.insert("x".into(), BitVal::from_u128(8, 32));
        assert!(!eval_bool(&e, &m));
        // unbound reads as zero
        assert_eq!(eval_u128(&x, &Model::new()), 0);
    }
}
