use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::engine::{PathRecord, PathTree};
use crate::wasm::WasmModule;

/// Which valuable import made a function valuable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Criterion {
    #[serde(rename = "send_inline")]
    SendInline,
    #[serde(rename = "db_update_i64")]
    DbUpdate,
    #[serde(rename = "db_store_i64")]
    DbStore,
}

impl Criterion {
    pub fn of_import(name: &str) -> Option<Criterion> {
        match name {
            "send_inline" => Some(Criterion::SendInline),
            "db_update_i64" => Some(Criterion::DbUpdate),
            "db_store_i64" => Some(Criterion::DbStore),
            _ => None,
        }
    }

    pub fn import_name(self) -> &'static str {
        match self {
            Criterion::SendInline => "send_inline",
            Criterion::DbUpdate => "db_update_i64",
            Criterion::DbStore => "db_store_i64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Evidence {
    pub criterion: Criterion,
    /// Root of the exploration the path belongs to.
    pub entry: u32,
    pub path: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValuableFunctionSet {
    /// Member function index to the first evidence per criterion.
    pub members: BTreeMap<u32, Vec<Evidence>>,
}

impl ValuableFunctionSet {
    pub fn contains(&self, func: u32) -> bool {
        self.members.contains_key(&func)
    }

    pub fn has_criterion(&self, func: u32, c: Criterion) -> bool {
        self.members
            .get(&func)
            .is_some_and(|ev| ev.iter().any(|e| e.criterion == c))
    }

    pub fn indices(&self) -> BTreeSet<u32> {
        self.members.keys().copied().collect()
    }

    fn add(&mut self, func: u32, ev: Evidence) {
        let list = self.members.entry(func).or_default();
        if !list.iter().any(|e| e.criterion == ev.criterion) {
            list.push(ev);
        }
    }
}

/// Local functions active when the `import_index`-th import call on `p` was
/// made, from the entry (depth 0) to the caller.
pub fn call_stack_at(p: &PathRecord, import_index: usize) -> Vec<u32> {
    let rec = &p.import_calls[import_index];
    let mut stack = vec![p.entry];
    for d in 1..=rec.depth {
        let frame = p
            .call_events
            .iter()
            .rev()
            .find(|e| e.depth == d && e.import_index <= import_index)
            .map(|e| e.callee);
        match frame {
            Some(f) => stack.push(f),
            None => break,
        }
    }
    stack
}

/// Every function on whose explored paths a valuable import is issued, by
/// itself or by a callee.
pub fn locate_valuable_functions(module: &WasmModule, trees: &[&PathTree]) -> ValuableFunctionSet {
    let mut set = ValuableFunctionSet::default();
    for t in trees {
        for p in &t.paths {
            for (i, c) in p.import_calls.iter().enumerate() {
                let Some(criterion) = Criterion::of_import(&c.name) else {
                    continue;
                };
                for f in call_stack_at(p, i) {
                    if module.is_imported(f) {
                        continue;
                    }
                    set.add(
                        f,
                        Evidence {
                            criterion,
                            entry: t.entry,
                            path: p.id,
                        },
                    );
                }
            }
        }
    }
    for ev in set.members.values_mut() {
        ev.sort();
    }
    set
}
