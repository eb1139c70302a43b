//! Monomial enumeration for (Sigma, c, s_Y) and the per-node aggregate
//! registers that decompose every monomial over the variable order into
//! shareable components.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::models::{h_components, HComponent, ModelSpec};
use crate::relational::{AttributeKind, Catalog, VarId, VariableOrder};

/// A sum-product aggregate identified by its monomial: variable exponents
/// plus the exponent of the response.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    /// (variable, exponent), exponent > 0, sorted by variable id.
    pub exps: Vec<(VarId, u8)>,
    /// Exponent of the response y: 0, 1, or 2 (2 only for the s_Y monomial).
    pub label_exp: u8,
}

impl Monomial {
    pub fn one() -> Self {
        Monomial { exps: Vec::new(), label_exp: 0 }
    }

    pub fn from_component(comp: &HComponent) -> Self {
        let mut exps: Vec<(VarId, u8)> = comp.exps.clone();
        exps.sort_by_key(|&(v, _)| v);
        Monomial { exps, label_exp: 0 }
    }

    /// Product of two monomials with categorical exponents capped at 1
    /// (indicator values are idempotent).
    pub fn product(&self, other: &Monomial, catalog: &Catalog) -> Monomial {
        let mut map: BTreeMap<VarId, u8> = self.exps.iter().copied().collect();
        for &(v, e) in &other.exps {
            *map.entry(v).or_insert(0) += e;
        }
        let exps = map
            .into_iter()
            .map(|(v, e)| {
                if catalog.kind(v) == AttributeKind::Categorical {
                    (v, 1)
                } else {
                    (v, e)
                }
            })
            .collect();
        Monomial { exps, label_exp: self.label_exp + other.label_exp }
    }

    pub fn with_label(mut self, exp: u8) -> Self {
        self.label_exp = exp;
        self
    }

    pub fn display(&self, catalog: &Catalog, label: Option<VarId>) -> String {
        let mut parts: Vec<String> = self
            .exps
            .iter()
            .map(|&(v, e)| {
                if e == 1 {
                    catalog.name(v).to_string()
                } else {
                    format!("{}^{}", catalog.name(v), e)
                }
            })
            .collect();
        if self.label_exp > 0 {
            let name = label.map(|v| catalog.name(v).to_string()).unwrap_or_else(|| "y".into());
            parts.insert(
                0,
                if self.label_exp == 1 { name } else { format!("{name}^{}", self.label_exp) },
            );
        }
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join("*")
        }
    }
}

/// All monomials needed to assemble Sigma, c and s_Y for a model: 1, every
/// product h_i * h_j, every y * h_j, and y^2.
pub fn enumerate_monomials(
    model: &ModelSpec,
    with_label: bool,
    vo: &VariableOrder,
    catalog: &Catalog,
) -> BTreeSet<Monomial> {
    let comps = h_components(model, vo, catalog);
    component_monomials(&comps, with_label, catalog)
}

/// Monomial set for an explicit component list (used for PCA where the
/// components are the plain features and there is no response).
pub fn component_monomials(
    comps: &[HComponent],
    with_label: bool,
    catalog: &Catalog,
) -> BTreeSet<Monomial> {
    let ms: Vec<Monomial> = comps.iter().map(Monomial::from_component).collect();
    let mut set = BTreeSet::new();
    set.insert(Monomial::one());
    for i in 0..ms.len() {
        for j in i..ms.len() {
            set.insert(ms[i].product(&ms[j], catalog));
        }
    }
    if with_label {
        for m in &ms {
            set.insert(m.clone().with_label(1));
        }
        set.insert(Monomial::one().with_label(2));
    }
    set
}

/// A monomial resolved against the variable order: (node index, exponent),
/// sorted by node index. Node indices are preorder positions, so the sort
/// order is the global variable order; the empty monomial sorts first.
pub type ResolvedMonomial = Vec<(usize, u8)>;

#[derive(Debug, Clone)]
pub struct RegisterEntry {
    /// Projection of the monomial onto this node's subtree.
    pub monomial: ResolvedMonomial,
    /// Index of the local component: the exponent of this node's variable.
    pub local_exp: u8,
    /// Per child: index of the projected monomial in the child's register.
    pub child_entries: Vec<usize>,
    /// Node indices of the categorical variables of the monomial, ascending
    /// (the group-by key layout of the aggregate map).
    pub group_by: Vec<usize>,
}

/// The local register lambda of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalRegister {
    /// Only the constant 1 is needed.
    Constant,
    /// Indicator: {() -> 1} at exponent 0, {a -> 1} at exponent 1.
    Categorical,
    /// Powers a^0 .. a^max_exp.
    Continuous { max_exp: u8 },
}

#[derive(Debug, Clone)]
pub struct NodeRegister {
    pub local: LocalRegister,
    pub entries: Vec<RegisterEntry>,
}

/// Registers for every node of a variable order. Entry 0 of every node is
/// the count monomial, which the engine uses as its empty-join guard.
#[derive(Debug)]
pub struct Registers {
    pub per_node: Vec<NodeRegister>,
    root_index: HashMap<Monomial, usize>,
    subtree_end: Vec<usize>,
}

impl Registers {
    /// Index of a monomial in the root register.
    pub fn root_entry(&self, m: &Monomial) -> Option<usize> {
        self.root_index.get(m).copied()
    }

    pub fn root_len(&self) -> usize {
        self.per_node[0].entries.len()
    }

    /// Preorder subtree range of a node: nodes n..subtree_end(n).
    pub fn subtree_range(&self, node: usize) -> std::ops::Range<usize> {
        node..self.subtree_end[node]
    }
}

/// Decompose the monomials over the variable order: each node's register
/// lists the distinct projections of its parent's monomials onto its
/// subtree, in lexicographic order, each entry wired to its local component
/// and its child components.
pub fn build_registers(
    vo: &VariableOrder,
    monomials: &BTreeSet<Monomial>,
    label: Option<VarId>,
    catalog: &Catalog,
) -> Result<Registers> {
    let n = vo.len();
    // Preorder subtrees are contiguous: subtree(n) = n..subtree_end[n].
    let mut subtree_end = vec![0usize; n];
    for i in (0..n).rev() {
        let node = &vo.nodes[i];
        subtree_end[i] = node.children.last().map_or(i + 1, |&c| subtree_end[c]);
    }

    // Resolve monomials to (node, exponent) form, folding the label in as an
    // ordinary variable at its node.
    let mut root_index = HashMap::new();
    let mut resolved_root: Vec<ResolvedMonomial> = Vec::new();
    for m in monomials {
        let mut r: ResolvedMonomial = Vec::with_capacity(m.exps.len() + 1);
        for &(v, e) in &m.exps {
            let node = vo.node_of(v).ok_or_else(|| {
                Error::UnknownVariable(format!(
                    "monomial variable `{}` not in the variable order",
                    catalog.name(v)
                ))
            })?;
            r.push((node, e));
        }
        if m.label_exp > 0 {
            let lv = label.ok_or_else(|| {
                Error::Config("label monomial requested but no label declared".into())
            })?;
            let node = vo
                .node_of(lv)
                .ok_or_else(|| Error::UnknownVariable(catalog.name(lv).to_string()))?;
            match r.iter_mut().find(|(nd, _)| *nd == node) {
                Some(slot) => slot.1 += m.label_exp,
                None => r.push((node, m.label_exp)),
            }
        }
        r.sort_unstable();
        resolved_root.push(r);
    }
    resolved_root.sort();
    resolved_root.dedup();

    // Per-node monomial sets, root first, children as projections.
    let mut sets: Vec<Vec<ResolvedMonomial>> = vec![Vec::new(); n];
    sets[0] = resolved_root;
    for i in 0..n {
        let children = vo.nodes[i].children.clone();
        for &c in &children {
            let range = c..subtree_end[c];
            let mut proj: Vec<ResolvedMonomial> = sets[i]
                .iter()
                .map(|m| m.iter().copied().filter(|&(nd, _)| range.contains(&nd)).collect())
                .collect();
            proj.sort();
            proj.dedup();
            sets[c] = proj;
        }
    }

    let mut per_node = Vec::with_capacity(n);
    for i in 0..n {
        let node = &vo.nodes[i];
        let var = node.var;
        let kind = catalog.kind(var);
        let mut max_exp = 0u8;
        let mut entries = Vec::with_capacity(sets[i].len());
        for m in &sets[i] {
            let local_exp = m.iter().find(|&&(nd, _)| nd == i).map_or(0, |&(_, e)| e);
            max_exp = max_exp.max(local_exp);
            let mut child_entries = Vec::with_capacity(node.children.len());
            for &c in &node.children {
                let range = c..subtree_end[c];
                let proj: ResolvedMonomial =
                    m.iter().copied().filter(|&(nd, _)| range.contains(&nd)).collect();
                let idx = sets[c].binary_search(&proj).expect("child projection registered");
                child_entries.push(idx);
            }
            let group_by = m
                .iter()
                .filter(|&&(nd, _)| catalog.kind(vo.nodes[nd].var) == AttributeKind::Categorical)
                .map(|&(nd, _)| nd)
                .collect();
            entries.push(RegisterEntry { monomial: m.clone(), local_exp, child_entries, group_by });
        }
        let local = if max_exp == 0 {
            LocalRegister::Constant
        } else if kind == AttributeKind::Categorical {
            LocalRegister::Categorical
        } else {
            LocalRegister::Continuous { max_exp }
        };
        per_node.push(NodeRegister { local, entries });
    }

    // Map each requested monomial to its root entry.
    for m in monomials {
        let mut r: ResolvedMonomial = m
            .exps
            .iter()
            .map(|&(v, e)| (vo.node_of(v).unwrap(), e))
            .collect();
        if m.label_exp > 0 {
            let node = vo.node_of(label.unwrap()).unwrap();
            match r.iter_mut().find(|(nd, _)| *nd == node) {
                Some(slot) => slot.1 += m.label_exp,
                None => r.push((node, m.label_exp)),
            }
        }
        r.sort_unstable();
        let idx = per_node[0].entries.binary_search_by(|e| e.monomial.cmp(&r)).unwrap();
        root_index.insert(m.clone(), idx);
    }

    Ok(Registers { per_node, root_index, subtree_end })
}

/// Text dump of the register hierarchy (the `aggregate --explain` output).
pub fn explain(regs: &Registers, vo: &VariableOrder, catalog: &Catalog) -> String {
    let mut out = String::new();
    fn rec(
        out: &mut String,
        regs: &Registers,
        vo: &VariableOrder,
        catalog: &Catalog,
        node: usize,
        depth: usize,
    ) {
        let reg = &regs.per_node[node];
        let indent = "  ".repeat(depth);
        let show = |m: &ResolvedMonomial| -> String {
            if m.is_empty() {
                return "1".into();
            }
            m.iter()
                .map(|&(nd, e)| {
                    let name = catalog.name(vo.nodes[nd].var);
                    if e == 1 {
                        name.to_string()
                    } else {
                        format!("{name}^{e}")
                    }
                })
                .collect::<Vec<_>>()
                .join("*")
        };
        out.push_str(&format!(
            "{indent}{} ({:?}): [{}]\n",
            catalog.name(vo.nodes[node].var),
            reg.local,
            reg.entries.iter().map(|e| show(&e.monomial)).collect::<Vec<_>>().join(", ")
        ));
        for &c in &vo.nodes[node].children {
            rec(out, regs, vo, catalog, c, depth + 1);
        }
    }
    rec(&mut out, regs, vo, catalog, 0, 0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use crate::relational::{Database, Relation, Value, VoSpec};

    /// The five-variable running example: R(A,B,C), S(B,D), T(A,E) with B and
    /// E categorical, order A(B(C,D),E).
    fn fig_db() -> (Database, VariableOrder) {
        let mut db = Database::new();
        let a = db.catalog.define("a", AttributeKind::Continuous).unwrap();
        let b = db.catalog.define("b", AttributeKind::Categorical).unwrap();
        let c = db.catalog.define("c", AttributeKind::Continuous).unwrap();
        let d = db.catalog.define("d", AttributeKind::Continuous).unwrap();
        let e = db.catalog.define("e", AttributeKind::Categorical).unwrap();
        db.add_relation(Relation::new(
            "r",
            vec![a, b, c],
            vec![vec![Value::Num(1.0), Value::Cat(0), Value::Num(2.0)]],
        ));
        db.add_relation(Relation::new("s", vec![b, d], vec![vec![Value::Cat(0), Value::Num(5.0)]]));
        db.add_relation(Relation::new("t", vec![a, e], vec![vec![Value::Num(1.0), Value::Cat(0)]]));
        let spec = VoSpec::node(
            "a",
            vec![VoSpec::node("b", vec![VoSpec::leaf("c"), VoSpec::leaf("d")]), VoSpec::leaf("e")],
        );
        let vo = VariableOrder::build(&spec, &db).unwrap();
        (db, vo)
    }

    #[test]
    fn degree1_monomials_without_label() {
        let (db, vo) = fig_db();
        let feats: Vec<_> = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|n| db.catalog.lookup(n).unwrap())
            .collect();
        let model = ModelSpec { kind: ModelKind::Lr, features: feats, label: 0, lambda: 0.0 };
        let set = enumerate_monomials(&model, false, &vo, &db.catalog);
        // {1,A,B,C,D,E,AA,AB,AC,AD,AE,BC,BD,BE,CC,CD,CE,DD,DE}
        assert_eq!(set.len(), 19);
        let names: BTreeSet<String> =
            set.iter().map(|m| m.display(&db.catalog, None)).collect();
        assert!(names.contains("a^2"));
        assert!(names.contains("b*e"));
        assert!(!names.contains("b^2"));
        assert!(!names.contains("e^2"));
    }

    #[test]
    fn single_feature_monomials_with_label() {
        let mut db = Database::new();
        let a = db.catalog.define("a", AttributeKind::Continuous).unwrap();
        let y = db.catalog.define("y", AttributeKind::Continuous).unwrap();
        db.add_relation(Relation::new(
            "r",
            vec![a, y],
            vec![vec![Value::Num(1.0), Value::Num(2.0)]],
        ));
        let vo = VariableOrder::build(&VoSpec::node("a", vec![VoSpec::leaf("y")]), &db).unwrap();
        let model = ModelSpec { kind: ModelKind::Lr, features: vec![a], label: y, lambda: 0.0 };
        // {1, A, A^2, y, yA, y^2}
        assert_eq!(enumerate_monomials(&model, true, &vo, &db.catalog).len(), 6);
    }

    #[test]
    fn single_categorical_collapses_square() {
        let mut db = Database::new();
        let b = db.catalog.define("b", AttributeKind::Categorical).unwrap();
        let y = db.catalog.define("y", AttributeKind::Continuous).unwrap();
        db.add_relation(Relation::new(
            "r",
            vec![b, y],
            vec![vec![Value::Cat(0), Value::Num(2.0)]],
        ));
        let vo = VariableOrder::build(&VoSpec::node("b", vec![VoSpec::leaf("y")]), &db).unwrap();
        let model = ModelSpec { kind: ModelKind::Lr, features: vec![b], label: y, lambda: 0.0 };
        // {1, B, yB, y, y^2}: B^2 collapses to B.
        assert_eq!(enumerate_monomials(&model, true, &vo, &db.catalog).len(), 5);
    }

    #[test]
    fn register_sizes_match_running_example() {
        let (db, vo) = fig_db();
        let feats: Vec<_> = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|n| db.catalog.lookup(n).unwrap())
            .collect();
        let model = ModelSpec { kind: ModelKind::Lr, features: feats, label: 0, lambda: 0.0 };
        let set = enumerate_monomials(&model, false, &vo, &db.catalog);
        let regs = build_registers(&vo, &set, None, &db.catalog).unwrap();
        let node = |n: &str| vo.node_of(db.catalog.lookup(n).unwrap()).unwrap();
        assert_eq!(regs.per_node[node("a")].entries.len(), 19);
        assert_eq!(regs.per_node[node("b")].entries.len(), 9);
        assert_eq!(regs.per_node[node("c")].entries.len(), 3);
        assert_eq!(regs.per_node[node("d")].entries.len(), 3);
        assert_eq!(regs.per_node[node("e")].entries.len(), 2);
        assert_eq!(regs.per_node[node("a")].local, LocalRegister::Continuous { max_exp: 2 });
        assert_eq!(regs.per_node[node("e")].local, LocalRegister::Categorical);
        // Entry 0 everywhere is the count monomial.
        for reg in &regs.per_node {
            assert!(reg.entries[0].monomial.is_empty());
        }
    }

    #[test]
    fn decomposition_of_ce_monomial() {
        let (db, vo) = fig_db();
        let c = db.catalog.lookup("c").unwrap();
        let e = db.catalog.lookup("e").unwrap();
        let mut set = BTreeSet::new();
        set.insert(Monomial::one());
        set.insert(Monomial {
            exps: vec![(c.min(e), 1), (c.max(e), 1)],
            label_exp: 0,
        });
        let regs = build_registers(&vo, &set, None, &db.catalog).unwrap();
        let root = &regs.per_node[0];
        let entry = root.entries.iter().find(|en| en.monomial.len() == 2).unwrap();
        assert_eq!(entry.local_exp, 0); // pi_A(CE) = 1
        let b_node = vo.node_of(db.catalog.lookup("b").unwrap()).unwrap();
        let e_node = vo.node_of(e).unwrap();
        // Child order of the root: [b, e].
        let b_child = vo.nodes[0].children.iter().position(|&ch| ch == b_node).unwrap();
        let e_child = vo.nodes[0].children.iter().position(|&ch| ch == e_node).unwrap();
        let b_proj = &regs.per_node[b_node].entries[entry.child_entries[b_child]];
        let e_proj = &regs.per_node[e_node].entries[entry.child_entries[e_child]];
        assert_eq!(b_proj.monomial, vec![(vo.node_of(c).unwrap(), 1)]);
        assert_eq!(e_proj.monomial, vec![(e_node, 1)]);
    }

    #[test]
    fn reconstruction_and_dedup_invariants() {
        let (db, vo) = fig_db();
        let feats: Vec<_> = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|n| db.catalog.lookup(n).unwrap())
            .collect();
        let model = ModelSpec { kind: ModelKind::Pr2, features: feats, label: 0, lambda: 0.0 };
        let set = enumerate_monomials(&model, false, &vo, &db.catalog);
        let regs = build_registers(&vo, &set, None, &db.catalog).unwrap();
        for (node_idx, reg) in regs.per_node.iter().enumerate() {
            // Dedup: no two entries share a monomial.
            let mut seen = BTreeSet::new();
            for entry in &reg.entries {
                assert!(seen.insert(entry.monomial.clone()));
                // Reconstruction: monomial = local part * child projections.
                let mut rebuilt: ResolvedMonomial = Vec::new();
                if entry.local_exp > 0 {
                    rebuilt.push((node_idx, entry.local_exp));
                }
                for (ci, &c) in vo.nodes[node_idx].children.iter().enumerate() {
                    rebuilt.extend(
                        regs.per_node[c].entries[entry.child_entries[ci]].monomial.iter().copied(),
                    );
                }
                rebuilt.sort_unstable();
                assert_eq!(rebuilt, entry.monomial);
            }
        }
    }

    #[test]
    fn unknown_variable_in_monomial_errors() {
        let (db, vo) = fig_db();
        let mut db2 = Database::new();
        let z = db2.catalog.define("z", AttributeKind::Continuous).unwrap();
        let _ = z;
        let mut set = BTreeSet::new();
        // Variable id 99 exists in no catalog/vo.
        set.insert(Monomial { exps: vec![(99, 1)], label_exp: 0 });
        assert!(build_registers(&vo, &set, None, &db.catalog).is_err());
    }
}
