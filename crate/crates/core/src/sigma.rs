//! Assembly of the sparse tensor (Sigma, c, s_Y) from root aggregate maps,
//! with shared maps across (i,j) pairs that have identical sparse
//! representations, and the two tensor kernels: Sigma*g(theta) and the
//! quadratic form g(theta)' Sigma g(theta) as group-by aggregate joins.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::engine::AggregateMap;
use crate::error::{Error, Result};
use crate::models::{EvaluatedG, HComponent, Key, ModelKind, ModelLayout};
use crate::registry::{Monomial, Registers};
use crate::relational::{Catalog, VarId, VariableOrder};

/// One shared aggregate map: the sparse representation of every sigma_ij
/// whose monomial coincides with `monomial`. Entries are normalized by 1/|D|.
#[derive(Debug, Clone)]
pub struct SharedMap {
    pub monomial: Monomial,
    /// Categorical variables of the monomial in variable-order position (the
    /// key layout).
    pub group_by: Vec<VarId>,
    pub entries: Vec<(Key, f64)>,
}

/// One (i, j) block of Sigma, i <= j, resolved to its shared map. The
/// positions say which key slots belong to C_i and C_j; shared variables
/// appear in both (diagonal semantics: equality joins on those slots).
#[derive(Debug, Clone)]
pub struct PairRef {
    pub i: usize,
    pub j: usize,
    pub map: usize,
    pub i_positions: Vec<usize>,
    pub j_positions: Vec<usize>,
}

#[derive(Debug)]
pub struct SparseSigma {
    pub maps: Vec<SharedMap>,
    pub pairs: Vec<PairRef>,
    /// Correlation vector blocks, dense over each component's key support.
    pub c: Vec<Vec<f64>>,
    pub s_y: f64,
    /// |D|, the size of the join.
    pub count: f64,
    matvecs: AtomicU64,
}

impl SparseSigma {
    /// Number of Sigma-vector products performed on this tensor (used to
    /// assert that linear training runs one matvec per iteration).
    pub fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    /// Total stored entries across the upper-triangular (i, j) pairs.
    pub fn stored_entries_upper(&self) -> usize {
        self.pairs.iter().map(|p| self.maps[p.map].entries.len()).sum()
    }

    pub fn pair(&self, i: usize, j: usize) -> Option<&PairRef> {
        let (i, j) = (i.min(j), i.max(j));
        self.pairs.iter().find(|p| p.i == i && p.j == j)
    }

    /// Sigma * g(theta) in h-component space: for every pair on a shared
    /// map's index list, marginalize the C_j keys against g_j and keep the
    /// C_i keys, adding to both rows when i != j.
    pub fn times_g(&self, g: &EvaluatedG) -> Vec<Vec<f64>> {
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        let layout = g.layout;
        let mut out: Vec<Vec<f64>> =
            layout.comp_keys.iter().map(|k| vec![0.0; k.len()]).collect();
        let mut ki: Key = Vec::new();
        let mut kj: Key = Vec::new();
        for pair in &self.pairs {
            let map = &self.maps[pair.map];
            for (key, v) in &map.entries {
                extract(key, &pair.i_positions, &mut ki);
                extract(key, &pair.j_positions, &mut kj);
                let pi = layout
                    .key_position(pair.i, &ki)
                    .unwrap_or_else(|| panic!("map key outside block support"));
                let pj = layout
                    .key_position(pair.j, &kj)
                    .unwrap_or_else(|| panic!("map key outside block support"));
                out[pair.i][pi] += v * g.value(pair.j, &kj);
                if pair.i != pair.j {
                    out[pair.j][pj] += v * g.value(pair.i, &ki);
                }
            }
        }
        out
    }

    /// g(theta)' Sigma g(theta), counting off-diagonal pairs twice.
    pub fn quadratic_form(&self, g: &EvaluatedG) -> f64 {
        let mut acc = 0.0;
        let mut ki: Key = Vec::new();
        let mut kj: Key = Vec::new();
        for pair in &self.pairs {
            let factor = if pair.i == pair.j { 1.0 } else { 2.0 };
            let map = &self.maps[pair.map];
            let mut part = 0.0;
            for (key, v) in &map.entries {
                extract(key, &pair.i_positions, &mut ki);
                extract(key, &pair.j_positions, &mut kj);
                part += v * g.value(pair.i, &ki) * g.value(pair.j, &kj);
            }
            acc += factor * part;
        }
        acc
    }

    /// <g(theta), c>.
    pub fn dot_c(&self, g: &EvaluatedG) -> f64 {
        let layout = g.layout;
        let mut acc = 0.0;
        for (j, block) in self.c.iter().enumerate() {
            for (pos, cv) in block.iter().enumerate() {
                if *cv != 0.0 {
                    acc += cv * g.value(j, &layout.comp_keys[j][pos]);
                }
            }
        }
        acc
    }
}

fn extract(key: &[u32], positions: &[usize], out: &mut Key) {
    out.clear();
    out.extend(positions.iter().map(|&p| key[p]));
}

/// Assemble (Sigma, c, s_Y) and the model layout from the root aggregate
/// maps. Distinct (i,j) pairs whose products have identical sparse
/// representations resolve to one shared map; all payloads are divided by
/// |D| here, once.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    kind: ModelKind,
    lambda: f64,
    comps: Vec<HComponent>,
    label: Option<VarId>,
    vo: &VariableOrder,
    catalog: &Catalog,
    regs: &Registers,
    root_maps: &[AggregateMap],
) -> Result<(SparseSigma, ModelLayout)> {
    let count_map = root_maps
        .get(regs.root_entry(&Monomial::one()).ok_or_else(|| {
            Error::MissingMonomial("1".to_string())
        })?)
        .unwrap();
    let count = count_map.scalar();
    if count <= 0.0 {
        return Err(Error::EmptyJoin);
    }

    let lookup = |m: &Monomial| -> Result<&AggregateMap> {
        let idx = regs
            .root_entry(m)
            .ok_or_else(|| Error::MissingMonomial(m.display(catalog, label)))?;
        Ok(&root_maps[idx])
    };

    let comp_monomials: Vec<Monomial> = comps.iter().map(Monomial::from_component).collect();

    // Key support per component from the diagonal maps.
    let mut comp_keys: Vec<Arc<Vec<Key>>> = Vec::with_capacity(comps.len());
    for m in &comp_monomials {
        let diag = lookup(&m.product(m, catalog))?;
        comp_keys.push(Arc::new(diag.entries.keys().cloned().collect()));
    }

    let mut maps: Vec<SharedMap> = Vec::new();
    let mut map_index: HashMap<Monomial, usize> = HashMap::new();
    let mut pairs: Vec<PairRef> = Vec::new();
    let cat_positions = |comp: &HComponent| -> Vec<usize> {
        comp.cat_vars(catalog).iter().map(|&v| vo.position(v).unwrap()).collect()
    };
    for i in 0..comps.len() {
        for j in i..comps.len() {
            let m = comp_monomials[i].product(&comp_monomials[j], catalog);
            let map = match map_index.get(&m) {
                Some(&idx) => idx,
                None => {
                    let raw = lookup(&m)?;
                    let group_by: Vec<VarId> = {
                        let mut nodes: Vec<usize> = m
                            .exps
                            .iter()
                            .filter(|&&(v, _)| {
                                catalog.kind(v) == crate::relational::AttributeKind::Categorical
                            })
                            .map(|&(v, _)| vo.position(v).unwrap())
                            .collect();
                        nodes.sort_unstable();
                        nodes.into_iter().map(|n| vo.nodes[n].var).collect()
                    };
                    let entries: Vec<(Key, f64)> =
                        raw.entries.iter().map(|(k, v)| (k.clone(), v / count)).collect();
                    let idx = maps.len();
                    maps.push(SharedMap { monomial: m.clone(), group_by, entries });
                    map_index.insert(m.clone(), idx);
                    idx
                }
            };
            // Where each component's categorical variables sit in the key.
            let gb_nodes: Vec<usize> =
                maps[map].group_by.iter().map(|&v| vo.position(v).unwrap()).collect();
            let find = |node: usize| gb_nodes.iter().position(|&n| n == node).unwrap();
            let i_positions: Vec<usize> = cat_positions(&comps[i]).iter().map(|&n| find(n)).collect();
            let j_positions: Vec<usize> = cat_positions(&comps[j]).iter().map(|&n| find(n)).collect();
            pairs.push(PairRef { i, j, map, i_positions, j_positions });
        }
    }

    // Correlation vector c and the response second moment s_Y.
    let mut c: Vec<Vec<f64>> = comp_keys.iter().map(|k| vec![0.0; k.len()]).collect();
    let mut s_y = 0.0;
    if label.is_some() {
        for (j, m) in comp_monomials.iter().enumerate() {
            let ym = m.clone().with_label(1);
            let raw = lookup(&ym)?;
            for (key, v) in &raw.entries {
                let pos = comp_keys[j]
                    .binary_search_by(|k| k.as_slice().cmp(key))
                    .map_err(|_| Error::MissingMonomial(format!("c key for {}", ym.display(catalog, label))))?;
                c[j][pos] = v / count;
            }
        }
        s_y = lookup(&Monomial::one().with_label(2))?.scalar() / count;
    }

    let factor_feats = if matches!(kind, ModelKind::Fama { .. }) {
        comps
            .iter()
            .enumerate()
            .filter(|(_, c)| c.exps.len() == 1 && c.exps[0].1 == 1)
            .map(|(idx, c)| (c.exps[0].0, comp_keys[idx].clone()))
            .collect()
    } else {
        Vec::new()
    };

    let layout = ModelLayout::new(kind, lambda, comps, comp_keys, factor_feats)?;
    let sigma = SparseSigma { maps, pairs, c, s_y, count, matvecs: AtomicU64::new(0) };
    Ok((sigma, layout))
}
