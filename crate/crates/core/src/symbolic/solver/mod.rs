//! Satisfiability of path constraints.
//!
//! Constraints are bit-blasted and handed to a CDCL SAT solver. Every query
//! runs under a wall-clock budget; exceeding it yields `Unknown`. Models are
//! re-checked with the evaluator before being returned.

mod blast;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use blast::{Blaster, Outcome};

use super::eval::{eval_bool, BitVal, Model};
use super::expr::SymExpr;

pub const DEFAULT_QUERY_BUDGET: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    Sat(Model),
    Unsat,
    Unknown,
}

impl SatResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SatResult::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, SatResult::Unsat)
    }

    pub fn model(&self) -> Option<&Model> {
        match self {
            SatResult::Sat(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Default)]
pub struct SolverStats {
    pub queries: AtomicU64,
    pub cache_hits: AtomicU64,
    pub unknowns: AtomicU64,
}

type CacheEntry = (Vec<SymExpr>, SatResult);

/// A solver handle; cheap to share by reference across detectors.
#[derive(Debug)]
pub struct Solver {
    budget: Duration,
    pub stats: SolverStats,
    cache: Mutex<HashMap<u64, Vec<CacheEntry>>>,
}

impl Default for Solver {
    fn default() -> Self {
        Self::new(DEFAULT_QUERY_BUDGET)
    }
}

fn set_hash(cs: &[SymExpr]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for c in cs {
        c.hash(&mut h);
    }
    h.finish()
}

impl Solver {
    pub fn new(budget: Duration) -> Self {
        Solver {
            budget,
            stats: SolverStats::default(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn budget(&self) -> Duration {
        self.budget
    }

    /// Decides the conjunction of `constraints` within the query budget.
    pub fn check(&self, constraints: &[SymExpr]) -> SatResult {
        self.check_until(constraints, None)
    }

    /// As [`check`](Self::check), additionally stopping at `deadline`.
    pub fn check_until(&self, constraints: &[SymExpr], deadline: Option<Instant>) -> SatResult {
        self.stats.queries.fetch_add(1, Ordering::Relaxed);
        let mut cs: Vec<SymExpr> = Vec::with_capacity(constraints.len());
        for c in constraints {
            assert!(c.is_bool(), "constraint is not boolean: {c}");
            match c.as_bool() {
                Some(true) => {}
                Some(false) => return SatResult::Unsat,
                None => {
                    if !cs.contains(c) {
                        cs.push(c.clone())
                    }
                }
            }
        }
        if cs.is_empty() {
            return SatResult::Sat(Model::new());
        }
        let key = set_hash(&cs);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            if let Some((_, r)) = hit.iter().find(|(k, _)| *k == cs) {
                self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
                return r.clone();
            }
        }
        let mut until = Instant::now() + self.budget;
        if let Some(d) = deadline {
            until = until.min(d);
        }
        let result = solve_blasted(&cs, until);
        if result == SatResult::Unknown {
            self.stats.unknowns.fetch_add(1, Ordering::Relaxed);
        } else {
            self.cache
                .lock()
                .unwrap()
                .entry(key)
                .or_default()
                .push((cs, result.clone()));
        }
        result
    }

    /// Checks `base ∧ extra`, assuming `base` alone is satisfiable: only the
    /// base constraints sharing variables (transitively) with `extra` are sent.
    pub fn check_extension(
        &self,
        base: &[SymExpr],
        extra: &[SymExpr],
        deadline: Option<Instant>,
    ) -> SatResult {
        let slice = relevant_slice(base, extra);
        self.check_until(&slice, deadline)
    }

    /// A full model of all constraints, if they are satisfiable.
    pub fn model(&self, constraints: &[SymExpr], deadline: Option<Instant>) -> Option<Model> {
        match self.check_until(constraints, deadline) {
            SatResult::Sat(m) => Some(m),
            _ => None,
        }
    }

    /// Up to `k` distinct values `e` can take under `constraints`.
    pub fn enumerate_values(
        &self,
        constraints: &[SymExpr],
        e: &SymExpr,
        k: usize,
        deadline: Option<Instant>,
    ) -> (Vec<u128>, bool) {
        let mut found = Vec::new();
        let seed = e.vars().into_iter().map(|(n, _)| n).collect();
        let mut cs = slice_by_vars(constraints, &seed);
        let mut complete = false;
        while found.len() < k {
            match self.check_until(&cs, deadline) {
                SatResult::Sat(m) => {
                    let v = crate::symbolic::eval::eval_u128(e, &m);
                    found.push(v);
                    cs.push(e.ne(&SymExpr::constant(v, e.width())));
                }
                SatResult::Unsat => {
                    complete = true;
                    break;
                }
                SatResult::Unknown => break,
            }
        }
        (found, complete)
    }
}

fn solve_blasted(cs: &[SymExpr], deadline: Instant) -> SatResult {
    let mut b = Blaster::new(deadline);
    for c in cs {
        if !b.assert(c) {
            return SatResult::Unsat;
        }
        if b.timed_out() {
            return SatResult::Unknown;
        }
    }
    match b.solve() {
        Outcome::Unsat => SatResult::Unsat,
        Outcome::Unknown => SatResult::Unknown,
        Outcome::Sat(mut model) => {
            // make the model total over the constraint variables
            for c in cs {
                for (name, w) in c.vars() {
                    model
                        .entry(name.to_string())
                        .or_insert_with(|| BitVal::zero(w));
                }
            }
            if cs.iter().all(|c| eval_bool(c, &model)) {
                SatResult::Sat(model)
            } else {
                debug_assert!(false, "solver model fails re-evaluation");
                SatResult::Unknown
            }
        }
    }
}

/// Constraints from `base` that share variables, transitively, with `focus`,
/// followed by `focus` itself.
pub fn relevant_slice(base: &[SymExpr], focus: &[SymExpr]) -> Vec<SymExpr> {
    let mut seed: BTreeSet<Arc<str>> = BTreeSet::new();
    for f in focus {
        seed.extend(f.vars().into_iter().map(|(n, _)| n));
    }
    let mut out = slice_by_vars(base, &seed);
    out.extend(focus.iter().cloned());
    out
}

fn slice_by_vars(base: &[SymExpr], seed: &BTreeSet<Arc<str>>) -> Vec<SymExpr> {
    let var_sets: Vec<BTreeSet<Arc<str>>> = base
        .iter()
        .map(|c| c.vars().into_iter().map(|(n, _)| n).collect())
        .collect();
    let mut live = seed.clone();
    let mut taken = vec![false; base.len()];
    loop {
        let mut changed = false;
        for (i, vs) in var_sets.iter().enumerate() {
            if !taken[i] && (vs.is_empty() || !vs.is_disjoint(&live)) {
                taken[i] = true;
                changed = true;
                live.extend(vs.iter().cloned());
            }
        }
        if !changed {
            break;
        }
    }
    base.iter()
        .zip(taken)
        .filter(|(_, t)| *t)
        .map(|(c, _)| c.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::eval::eval_u128;

    fn x64() -> SymExpr {
        SymExpr::var_untainted("x", 64)
    }

    #[test]
    fn trivial_cases() {
        let s = Solver::default();
        assert!(s.check(&[]).is_sat());
        let x = x64();
        let r = s.check(&[x.eq(&SymExpr::u64(1)), x.eq(&SymExpr::u64(2))]);
        assert!(r.is_unsat());
    }

    #[test]
    fn finds_name_model() {
        let s = Solver::default();
        let code = SymExpr::var_untainted("code", 64);
        let target = crate::eosio::n("eosio.token");
        let r = s.check(&[code.eq(&SymExpr::u64(target))]);
        let m = r.model().unwrap();
        assert_eq!(m["code"].to_u64(), target);
    }

    #[test]
    fn arithmetic_models_verify() {
        let s = Solver::default();
        // 16-bit factors widened to 32 bits cannot wrap
        let x = SymExpr::var_untainted("x", 16).zext(32);
        let y = SymExpr::var_untainted("y", 16).zext(32);
        let cs = vec![
            x.mul(&y).eq(&SymExpr::u32(391)),
            x.ugt(&SymExpr::u32(1)),
            y.ugt(&SymExpr::u32(1)),
            x.ult(&y),
        ];
        let m = s.check(&cs).model().cloned().unwrap();
        assert_eq!(eval_u128(&x, &m), 17);
        assert_eq!(eval_u128(&y, &m), 23);
    }

    #[test]
    fn division_semantics_match() {
        let s = Solver::default();
        let x = SymExpr::var_untainted("x", 8);
        let zero = SymExpr::constant(0, 8);
        // x / 0 is all ones, x % 0 is x
        let cs = vec![x.udiv(&zero).ne(&SymExpr::constant(0xff, 8))];
        assert!(s.check(&cs).is_unsat());
        let cs = vec![x.urem(&zero).ne(&x)];
        assert!(s.check(&cs).is_unsat());
        let cs = vec![x
            .srem(&SymExpr::constant(3, 8))
            .eq(&SymExpr::constant(0xfe, 8))];
        let m = s.check(&cs).model().cloned().unwrap();
        assert_eq!((eval_u128(&x, &m) as u8 as i8) % 3, -2);
    }

    #[test]
    fn enumerates_values() {
        let s = Solver::default();
        let x = SymExpr::var_untainted("x", 32);
        let cs = vec![x.ult(&SymExpr::u32(3))];
        let (vals, complete) = s.enumerate_values(&cs, &x, 4, None);
        assert!(complete);
        let mut vals = vals;
        vals.sort();
        assert_eq!(vals, vec![0, 1, 2]);
    }

    #[test]
    fn slicing_drops_unrelated() {
        let a = SymExpr::var_untainted("a", 32);
        let b = SymExpr::var_untainted("b", 32);
        let base = vec![a.eq(&SymExpr::u32(1)), b.eq(&SymExpr::u32(2))];
        let s = relevant_slice(&base, &[a.ne(&SymExpr::u32(5))]);
        assert_eq!(s.len(), 2);
        assert!(s[0].mentions_var("a") && !s[0].mentions_var("b"));
    }

    #[test]
    fn exhausted_budget_is_unknown() {
        let s = Solver::new(Duration::from_nanos(1));
        let x = SymExpr::var_untainted("x", 64);
        let y = SymExpr::var_untainted("y", 64);
        let r = s.check(&[x.mul(&y).eq(&SymExpr::u64(0xffff_fff1_0000_000f))]);
        assert_eq!(r, SatResult::Unknown);
        assert_eq!(s.stats.unknowns.load(Ordering::Relaxed), 1);
    }
}
