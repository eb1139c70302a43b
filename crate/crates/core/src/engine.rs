//! Factorized aggregate computation over sorted relations: depth-first
//! traversal of the variable order, sorted-merge intersection of node values
//! with galloping seeks, range narrowing, local lambda evaluation, Cartesian
//! accumulation into group-by maps, and caching keyed by dep contexts.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::models::Key;
use crate::registry::{LocalRegister, Registers};
use crate::relational::{Database, Value, VariableOrder};

/// A sparse aggregate: group-by keys (interned category ids in global
/// variable order) to real payloads. Maps start empty; nothing is stored for
/// key combinations that never occur.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateMap {
    pub arity: u8,
    pub entries: BTreeMap<Key, f64>,
}

impl AggregateMap {
    pub fn new(arity: u8) -> Self {
        AggregateMap { arity, entries: BTreeMap::new() }
    }

    pub fn scalar(&self) -> f64 {
        self.entries.get(&Vec::new()).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    pub use_cache: bool,
    /// Number of workers for the optional parallel mode; root values are
    /// partitioned round-robin. 1 = sequential (the default).
    pub threads: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { use_cache: true, threads: 1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineCounters {
    /// Node-value assignments processed across the traversal.
    pub values_scanned: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Total entries stored across the root aggregate maps.
    pub aggregate_map_entries_total: u64,
}

impl EngineCounters {
    fn merge(&mut self, other: &EngineCounters) {
        self.values_scanned += other.values_scanned;
        self.cache_hits += other.cache_hits;
        self.cache_misses += other.cache_misses;
    }
}

/// First index in rows[lo..hi] whose `col` value satisfies the predicate,
/// or hi. Exponential probing followed by binary search.
fn gallop(rows: &[Vec<Value>], lo: usize, hi: usize, col: usize, pred: impl Fn(Value) -> bool) -> usize {
    if lo >= hi || pred(rows[lo][col]) {
        return lo;
    }
    let mut base = lo;
    let mut step = 1;
    while base + step < hi && !pred(rows[base + step][col]) {
        base += step;
        step <<= 1;
    }
    let mut lo2 = base + 1;
    let mut hi2 = (base + step + 1).min(hi);
    while lo2 < hi2 {
        let mid = lo2 + (hi2 - lo2) / 2;
        if pred(rows[mid][col]) {
            hi2 = mid;
        } else {
            lo2 = mid + 1;
        }
    }
    lo2
}

fn check_sorted(db: &Database, vo: &VariableOrder) -> Result<()> {
    for rel in &db.relations {
        let mut last = None;
        for &v in &rel.vars {
            let pos = vo
                .position(v)
                .ok_or_else(|| Error::UnknownVariable(db.catalog.name(v).to_string()))?;
            if let Some(p) = last {
                if pos <= p {
                    return Err(Error::NotSorted(rel.name.clone()));
                }
            }
            last = Some(pos);
        }
        for w in rel.rows.windows(2) {
            if w[0] > w[1] {
                return Err(Error::NotSorted(rel.name.clone()));
            }
        }
    }
    Ok(())
}

struct Run<'a> {
    db: &'a Database,
    vo: &'a VariableOrder,
    regs: &'a Registers,
    opts: EngineOptions,
    /// Per node: (relation index, column of the node's variable).
    rels_with_var: &'a [Vec<(usize, usize)>],
    caches: Vec<HashMap<Vec<Value>, Rc<Vec<AggregateMap>>>>,
    var_values: Vec<Option<Value>>,
    counters: EngineCounters,
    /// Round-robin filter applied to root values: (worker, stride).
    stride: (usize, usize),
}

impl<'a> Run<'a> {
    fn local_part(local: &LocalRegister, value: Value, exp: u8, powers: &[f64]) -> (Option<u32>, f64) {
        if exp == 0 {
            return (None, 1.0);
        }
        match local {
            LocalRegister::Constant => unreachable!("exponent on constant register"),
            LocalRegister::Categorical => (Some(value.as_cat()), 1.0),
            LocalRegister::Continuous { .. } => (None, powers[exp as usize]),
        }
    }

    fn node_aggregates(&mut self, node: usize, ranges: &[(usize, usize)]) -> Rc<Vec<AggregateMap>> {
        let vnode = &self.vo.nodes[node];
        let reg = &self.regs.per_node[node];
        let cacheable = vnode.dep.len() != vnode.anc.len();
        let context: Option<Vec<Value>> = if cacheable && self.opts.use_cache {
            let ctx: Vec<Value> =
                vnode.dep.iter().map(|&d| self.var_values[d].expect("ancestor bound")).collect();
            if let Some(hit) = self.caches[node].get(&ctx) {
                self.counters.cache_hits += 1;
                return hit.clone();
            }
            self.counters.cache_misses += 1;
            Some(ctx)
        } else {
            None
        };

        let mut aggs: Vec<AggregateMap> = reg
            .entries
            .iter()
            .map(|e| AggregateMap::new(e.group_by.len() as u8))
            .collect();

        let rels = &self.rels_with_var[node];
        let mut cursors: Vec<usize> = rels.iter().map(|&(r, _)| ranges[r].0).collect();
        let mut emitted = 0usize;
        let max_exp = match reg.local {
            LocalRegister::Continuous { max_exp } => max_exp as usize,
            _ => 0,
        };
        let mut powers = vec![1.0; max_exp + 1];

        'outer: loop {
            // Current candidate: the max of the relations' current values.
            let mut a: Option<Value> = None;
            for (k, &(r, c)) in rels.iter().enumerate() {
                if cursors[k] >= ranges[r].1 {
                    break 'outer;
                }
                let v = self.db.relations[r].rows[cursors[k]][c];
                a = Some(match a {
                    None => v,
                    Some(cur) if v > cur => v,
                    Some(cur) => cur,
                });
            }
            let mut a = a.expect("node occurs in at least one relation");
            // Leapfrog: seek every relation to >= a, restarting from the max.
            loop {
                let mut all_eq = true;
                for (k, &(r, c)) in rels.iter().enumerate() {
                    let rows = &self.db.relations[r].rows;
                    let pos = gallop(rows, cursors[k], ranges[r].1, c, |v| v >= a);
                    cursors[k] = pos;
                    if pos >= ranges[r].1 {
                        break 'outer;
                    }
                    let v = rows[pos][c];
                    if v > a {
                        a = v;
                        all_eq = false;
                    }
                }
                if all_eq {
                    break;
                }
            }
            // Narrow every relation containing the variable to the run of a,
            // and advance the cursors past it.
            let mut narrowed = ranges.to_vec();
            for (k, &(r, c)) in rels.iter().enumerate() {
                let rows = &self.db.relations[r].rows;
                let end = gallop(rows, cursors[k], ranges[r].1, c, |v| v > a);
                narrowed[r] = (cursors[k], end);
                cursors[k] = end;
            }

            let process = node != 0 || emitted % self.stride.1 == self.stride.0;
            emitted += 1;
            if !process {
                continue;
            }
            self.counters.values_scanned += 1;
            self.var_values[node] = Some(a);
            if let Value::Num(x) = a {
                for e in 1..=max_exp {
                    powers[e] = powers[e - 1] * x;
                }
            }

            if vnode.children.is_empty() {
                for (l, entry) in reg.entries.iter().enumerate() {
                    let (keypart, v) = Self::local_part(&reg.local, a, entry.local_exp, &powers);
                    let key: Key = keypart.into_iter().collect();
                    *aggs[l].entries.entry(key).or_insert(0.0) += v;
                }
            } else {
                let children = vnode.children.clone();
                let child_results: Vec<Rc<Vec<AggregateMap>>> =
                    children.iter().map(|&c| self.node_aggregates(c, &narrowed)).collect();
                // Fig. 3 guard: accumulate only when every child subtree has
                // a non-empty join under this assignment.
                if child_results.iter().all(|cr| !cr[0].is_empty()) {
                    for (l, entry) in reg.entries.iter().enumerate() {
                        let (keypart, lv) =
                            Self::local_part(&reg.local, a, entry.local_exp, &powers);
                        let parts: Vec<&AggregateMap> = entry
                            .child_entries
                            .iter()
                            .zip(&child_results)
                            .map(|(&ij, cr)| &cr[ij])
                            .collect();
                        accumulate_product(&mut aggs[l], keypart, lv, &parts);
                    }
                }
            }
        }
        self.var_values[node] = None;

        let rc = Rc::new(aggs);
        if let Some(ctx) = context {
            self.caches[node].insert(ctx, rc.clone());
        }
        rc
    }
}

/// dest[l] += lambda_part x parts[0] x ... x parts[k-1], where x on maps is
/// Cartesian key concatenation with payload multiplication. Keys concatenate
/// in preorder, which is already the global variable order.
fn accumulate_product(dest: &mut AggregateMap, keypart: Option<u32>, lv: f64, parts: &[&AggregateMap]) {
    fn rec(dest: &mut AggregateMap, key: &mut Key, val: f64, parts: &[&AggregateMap]) {
        match parts.split_first() {
            None => {
                *dest.entries.entry(key.clone()).or_insert(0.0) += val;
            }
            Some((first, rest)) => {
                for (k, v) in &first.entries {
                    let len = key.len();
                    key.extend_from_slice(k);
                    rec(dest, key, val * v, rest);
                    key.truncate(len);
                }
            }
        }
    }
    let mut key: Key = keypart.into_iter().collect();
    rec(dest, &mut key, lv, parts);
}

/// Compute the root aggregate array for the registered monomials: the raw
/// (un-normalized) sums over the join. Relations must be sorted with
/// `sort_for_order` first.
pub fn compute_aggregates(
    db: &Database,
    vo: &VariableOrder,
    regs: &Registers,
    opts: EngineOptions,
) -> Result<(Vec<AggregateMap>, EngineCounters)> {
    check_sorted(db, vo)?;
    let rels_with_var: Vec<Vec<(usize, usize)>> = vo
        .nodes
        .iter()
        .map(|n| {
            n.relations
                .iter()
                .map(|&r| (r, db.relations[r].col_of(n.var).expect("relation contains var")))
                .collect()
        })
        .collect();
    let full_ranges: Vec<(usize, usize)> =
        db.relations.iter().map(|r| (0, r.rows.len())).collect();

    let threads = opts.threads.max(1);
    let run_one = |worker: usize| -> (Vec<AggregateMap>, EngineCounters) {
        let mut run = Run {
            db,
            vo,
            regs,
            opts,
            rels_with_var: &rels_with_var,
            caches: vec![HashMap::new(); vo.len()],
            var_values: vec![None; vo.len()],
            counters: EngineCounters::default(),
            stride: (worker, threads),
        };
        let rc = run.node_aggregates(0, &full_ranges);
        let maps = Rc::try_unwrap(rc).unwrap_or_else(|rc| (*rc).clone());
        (maps, run.counters)
    };

    let (maps, mut counters) = if threads == 1 {
        run_one(0)
    } else {
        let results: Vec<(Vec<AggregateMap>, EngineCounters)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads).map(|w| scope.spawn(move || run_one(w))).collect();
            handles.into_iter().map(|h| h.join().expect("engine worker")).collect()
        });
        let mut iter = results.into_iter();
        let (mut maps, mut counters) = iter.next().expect("at least one worker");
        for (wmaps, wcounters) in iter {
            counters.merge(&wcounters);
            for (dest, src) in maps.iter_mut().zip(wmaps) {
                for (k, v) in src.entries {
                    *dest.entries.entry(k).or_insert(0.0) += v;
                }
            }
        }
        (maps, counters)
    };

    counters.aggregate_map_entries_total = maps.iter().map(|m| m.len() as u64).sum();
    Ok((maps, counters))
}
