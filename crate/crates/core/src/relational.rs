//! Schemas, typed relations, CSV ingestion, sorting, variable orders and the
//! functional-dependency catalog.
//!
//! All types here are immutable after construction and can be shared
//! read-only across threads.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Index of a variable in the [`Catalog`].
pub type VarId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Continuous,
    Categorical,
}

/// A single attribute value: a 64-bit float or an interned category id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(u32),
}

impl Value {
    pub fn as_num(&self) -> f64 {
        match self {
            Value::Num(v) => *v,
            Value::Cat(_) => panic!("categorical value used as number"),
        }
    }

    pub fn as_cat(&self) -> u32 {
        match self {
            Value::Cat(c) => *c,
            Value::Num(_) => panic!("continuous value used as category"),
        }
    }
}

impl Eq for Value {}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Cat(a), Value::Cat(b)) => a.cmp(b),
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Cat(_), Value::Num(_)) => Ordering::Less,
            (Value::Num(_), Value::Cat(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct VarInfo {
    name: String,
    kind: AttributeKind,
    /// Interned category labels, id = position. First-occurrence order.
    categories: Vec<String>,
    category_ids: HashMap<String, u32>,
}

/// Registry of variables shared by all relations of a database. Category
/// interning is per variable and consistent across relations, so equal ids
/// mean equal labels everywhere.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    vars: Vec<VarInfo>,
    by_name: HashMap<String, VarId>,
}

impl Catalog {
    pub fn define(&mut self, name: &str, kind: AttributeKind) -> Result<VarId> {
        if let Some(&id) = self.by_name.get(name) {
            if self.vars[id].kind != kind {
                return Err(Error::Config(format!(
                    "variable `{name}` declared with conflicting kinds"
                )));
            }
            return Ok(id);
        }
        let id = self.vars.len();
        self.vars.push(VarInfo {
            name: name.to_string(),
            kind,
            categories: Vec::new(),
            category_ids: HashMap::new(),
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Result<VarId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn name(&self, var: VarId) -> &str {
        &self.vars[var].name
    }

    pub fn kind(&self, var: VarId) -> AttributeKind {
        self.vars[var].kind
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn intern(&mut self, var: VarId, label: &str) -> u32 {
        let info = &mut self.vars[var];
        if let Some(&id) = info.category_ids.get(label) {
            return id;
        }
        let id = info.categories.len() as u32;
        info.categories.push(label.to_string());
        info.category_ids.insert(label.to_string(), id);
        id
    }

    /// De-intern: the label of a category id.
    pub fn category_label(&self, var: VarId, id: u32) -> &str {
        &self.vars[var].categories[id as usize]
    }

    pub fn category_id(&self, var: VarId, label: &str) -> Option<u32> {
        self.vars[var].category_ids.get(label).copied()
    }

    /// Number of interned categories of `var` (N_f over the loaded data).
    pub fn num_categories(&self, var: VarId) -> usize {
        self.vars[var].categories.len()
    }
}

/// A named relation: typed attribute list plus row-major tuples.
#[derive(Debug, Clone)]
pub struct Relation {
    pub name: String,
    pub vars: Vec<VarId>,
    pub rows: Vec<Vec<Value>>,
}

impl Relation {
    pub fn new(name: impl Into<String>, vars: Vec<VarId>, rows: Vec<Vec<Value>>) -> Self {
        Relation { name: name.into(), vars, rows }
    }

    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    /// Column position of `var` in this relation, if present.
    pub fn col_of(&self, var: VarId) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Database {
    pub catalog: Catalog,
    pub relations: Vec<Relation>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_relation(&mut self, rel: Relation) {
        self.relations.push(rel);
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    /// A copy of the database with every relation sorted for `vo`.
    pub fn sorted_for(&self, vo: &VariableOrder) -> Result<Database> {
        let relations = self
            .relations
            .iter()
            .map(|r| sort_for_order(r, vo))
            .collect::<Result<Vec<_>>>()?;
        Ok(Database { catalog: self.catalog.clone(), relations })
    }
}

/// Parse one CSV file into a relation. The header row must match the schema
/// names in order; categorical cells are interned, continuous cells must
/// parse to finite floats. No quoting support: a comma always splits.
pub fn load_csv(
    path: &Path,
    name: &str,
    schema: &[(String, AttributeKind)],
    catalog: &mut Catalog,
) -> Result<Relation> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let pstr = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Csv {
        path: pstr.clone(),
        line: 1,
        msg: "missing header row".into(),
    })?;
    let header_cells: Vec<&str> = header.split(',').map(str::trim).collect();
    if header_cells.len() != schema.len()
        || header_cells.iter().zip(schema).any(|(h, (n, _))| h != n)
    {
        return Err(Error::Csv {
            path: pstr,
            line: 1,
            msg: format!(
                "header [{}] does not match schema [{}]",
                header_cells.join(","),
                schema.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut vars = Vec::with_capacity(schema.len());
    for (n, kind) in schema {
        vars.push(catalog.define(n, *kind)?);
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != schema.len() {
            return Err(Error::Csv {
                path: pstr,
                line: idx + 1,
                msg: format!("expected {} cells, found {}", schema.len(), cells.len()),
            });
        }
        let mut row = Vec::with_capacity(cells.len());
        for (cell, (&var, (_, kind))) in cells.iter().zip(vars.iter().zip(schema)) {
            let cell = cell.trim();
            match kind {
                AttributeKind::Continuous => {
                    if cell.is_empty() || cell == "NaN" {
                        return Err(Error::Csv {
                            path: pstr,
                            line: idx + 1,
                            msg: format!("empty or NaN continuous cell for `{}`", catalog.name(var)),
                        });
                    }
                    let v: f64 = cell.parse().map_err(|_| Error::Csv {
                        path: pstr.clone(),
                        line: idx + 1,
                        msg: format!("cannot parse `{cell}` as a number for `{}`", catalog.name(var)),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Csv {
                            path: pstr,
                            line: idx + 1,
                            msg: format!("non-finite value `{cell}` for `{}`", catalog.name(var)),
                        });
                    }
                    row.push(Value::Num(v));
                }
                AttributeKind::Categorical => {
                    row.push(Value::Cat(catalog.intern(var, cell)));
                }
            }
        }
        rows.push(row);
    }

    let mut seen = HashSet::new();
    for &v in &vars {
        if !seen.insert(v) {
            return Err(Error::Config(format!(
                "relation `{name}`: attribute `{}` appears twice",
                catalog.name(v)
            )));
        }
    }
    Ok(Relation::new(name, vars, rows))
}

/// One node of a variable order.
#[derive(Debug, Clone)]
pub struct VoNode {
    pub var: VarId,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Ancestor node indices, root first.
    pub anc: Vec<usize>,
    /// Subset of `anc` the subtree rooted here depends on (co-occurrence in
    /// some relation).
    pub dep: Vec<usize>,
    /// Indices into `Database::relations` of relations containing `var`.
    pub relations: Vec<usize>,
}

/// A rooted tree of join variables. Nodes are stored in depth-first preorder,
/// so node index doubles as the global sort position of the variable.
#[derive(Debug, Clone)]
pub struct VariableOrder {
    pub nodes: Vec<VoNode>,
    node_of_var: HashMap<VarId, usize>,
}

/// Tree-shaped input for building a [`VariableOrder`].
#[derive(Debug, Clone)]
pub struct VoSpec {
    pub var: String,
    pub children: Vec<VoSpec>,
    /// Optional explicit dep override (must contain the computed set).
    pub dep: Option<Vec<String>>,
}

impl VoSpec {
    pub fn leaf(var: &str) -> Self {
        VoSpec { var: var.into(), children: Vec::new(), dep: None }
    }

    pub fn node(var: &str, children: Vec<VoSpec>) -> Self {
        VoSpec { var: var.into(), children, dep: None }
    }
}

impl VariableOrder {
    /// Build the order from a spec against a database: resolves names,
    /// computes anc/dep sets, validates the path condition for every
    /// relation, and checks that every variable occurs in some relation.
    pub fn build(spec: &VoSpec, db: &Database) -> Result<VariableOrder> {
        let mut nodes: Vec<VoNode> = Vec::new();
        let mut node_of_var = HashMap::new();
        let mut overrides: Vec<Option<Vec<String>>> = Vec::new();

        fn visit(
            spec: &VoSpec,
            parent: Option<usize>,
            db: &Database,
            nodes: &mut Vec<VoNode>,
            node_of_var: &mut HashMap<VarId, usize>,
            overrides: &mut Vec<Option<Vec<String>>>,
        ) -> Result<usize> {
            let var = db.catalog.lookup(&spec.var)?;
            if node_of_var.contains_key(&var) {
                return Err(Error::Config(format!(
                    "variable `{}` appears twice in the variable order",
                    spec.var
                )));
            }
            let idx = nodes.len();
            let anc = match parent {
                Some(p) => {
                    let mut a = nodes[p].anc.clone();
                    a.push(p);
                    a
                }
                None => Vec::new(),
            };
            let relations = db
                .relations
                .iter()
                .enumerate()
                .filter(|(_, r)| r.vars.contains(&var))
                .map(|(i, _)| i)
                .collect::<Vec<_>>();
            if relations.is_empty() {
                return Err(Error::Config(format!(
                    "variable `{}` occurs in no relation",
                    spec.var
                )));
            }
            nodes.push(VoNode { var, parent, children: Vec::new(), anc, dep: Vec::new(), relations });
            node_of_var.insert(var, idx);
            overrides.push(spec.dep.clone());
            for child in &spec.children {
                let c = visit(child, Some(idx), db, nodes, node_of_var, overrides)?;
                nodes[idx].children.push(c);
            }
            Ok(idx)
        }

        visit(spec, None, db, &mut nodes, &mut node_of_var, &mut overrides)?;

        let mut vo = VariableOrder { nodes, node_of_var };
        vo.validate_paths(db)?;
        vo.compute_deps(db)?;
        vo.apply_dep_overrides(&overrides, db)?;
        Ok(vo)
    }

    fn validate_paths(&self, db: &Database) -> Result<()> {
        for rel in &db.relations {
            let mut idxs = Vec::with_capacity(rel.vars.len());
            for &v in &rel.vars {
                let idx = *self.node_of_var.get(&v).ok_or_else(|| {
                    Error::UnknownVariable(db.catalog.name(v).to_string())
                })?;
                idxs.push(idx);
            }
            // All nodes must lie on one root-to-leaf path: sorted by depth,
            // each node must be an ancestor of the next.
            idxs.sort_by_key(|&i| self.nodes[i].anc.len());
            for w in idxs.windows(2) {
                if !self.nodes[w[1]].anc.contains(&w[0]) {
                    return Err(Error::NotOnPath {
                        rel: rel.name.clone(),
                        var: db.catalog.name(self.nodes[w[1]].var).to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    fn compute_deps(&mut self, db: &Database) -> Result<()> {
        // dep(X) = ancestors of X that co-occur in some relation with a
        // variable of the subtree rooted at X.
        let subtrees: Vec<Vec<VarId>> = (0..self.nodes.len())
            .map(|i| self.subtree_nodes(i).iter().map(|&n| self.nodes[n].var).collect())
            .collect();
        for i in 0..self.nodes.len() {
            let mut dep = Vec::new();
            for &a in &self.nodes[i].anc {
                let avar = self.nodes[a].var;
                let hit = db.relations.iter().any(|r| {
                    r.vars.contains(&avar) && r.vars.iter().any(|v| subtrees[i].contains(v))
                });
                if hit {
                    dep.push(a);
                }
            }
            self.nodes[i].dep = dep;
        }
        Ok(())
    }

    fn apply_dep_overrides(&mut self, overrides: &[Option<Vec<String>>], db: &Database) -> Result<()> {
        for (i, ov) in overrides.iter().enumerate() {
            let Some(names) = ov else { continue };
            let mut idxs = Vec::new();
            for n in names {
                let var = db.catalog.lookup(n)?;
                let idx = *self
                    .node_of_var
                    .get(&var)
                    .ok_or_else(|| Error::UnknownVariable(n.clone()))?;
                idxs.push(idx);
            }
            idxs.sort_unstable();
            let node = &self.nodes[i];
            for d in &node.dep {
                if !idxs.contains(d) {
                    return Err(Error::Config(format!(
                        "dep override for `{}` misses required variable `{}`",
                        db.catalog.name(node.var),
                        db.catalog.name(self.nodes[*d].var)
                    )));
                }
            }
            for d in &idxs {
                if !node.anc.contains(d) {
                    return Err(Error::Config(format!(
                        "dep override for `{}` names non-ancestor `{}`",
                        db.catalog.name(node.var),
                        db.catalog.name(self.nodes[*d].var)
                    )));
                }
            }
            self.nodes[i].dep = idxs;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node_of(&self, var: VarId) -> Option<usize> {
        self.node_of_var.get(&var).copied()
    }

    /// Preorder position of a variable (node index, by construction).
    pub fn position(&self, var: VarId) -> Option<usize> {
        self.node_of(var)
    }

    /// Node indices of the subtree rooted at `node`, preorder.
    pub fn subtree_nodes(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            out.push(n);
            for &c in self.nodes[n].children.iter().rev() {
                stack.push(c);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Sort a relation for factorized evaluation: columns rearranged in preorder
/// position of their variables, rows in lexicographic order.
pub fn sort_for_order(rel: &Relation, vo: &VariableOrder) -> Result<Relation> {
    let mut cols: Vec<(usize, usize)> = Vec::with_capacity(rel.vars.len()); // (preorder pos, col)
    for (c, &v) in rel.vars.iter().enumerate() {
        let pos = vo
            .position(v)
            .ok_or_else(|| Error::UnknownVariable(format!("column {c} of `{}`", rel.name)))?;
        cols.push((pos, c));
    }
    cols.sort_unstable();
    // The path condition is validated when the order is built; re-checked
    // here so the function is safe standalone.
    let idxs: Vec<usize> = cols.iter().map(|&(p, _)| p).collect();
    for w in idxs.windows(2) {
        if !vo.nodes[w[1]].anc.contains(&w[0]) {
            return Err(Error::NotOnPath {
                rel: rel.name.clone(),
                var: format!("node {}", w[1]),
            });
        }
    }
    let vars: Vec<VarId> = cols.iter().map(|&(_, c)| rel.vars[c]).collect();
    let mut rows: Vec<Vec<Value>> = rel
        .rows
        .iter()
        .map(|r| cols.iter().map(|&(_, c)| r[c]).collect())
        .collect();
    rows.sort();
    Ok(Relation::new(rel.name.clone(), vars, rows))
}

/// One simple functional dependency f -> S.
#[derive(Debug, Clone)]
pub struct SimpleFd {
    pub determinant: VarId,
    pub determined: Vec<VarId>,
}

/// Catalog of simple FDs. Groups G_i = {f_i} u S_i must be pairwise disjoint,
/// determinants categorical, determined sets non-empty.
#[derive(Debug, Clone, Default)]
pub struct FdCatalog {
    pub fds: Vec<SimpleFd>,
}

impl FdCatalog {
    pub fn new(fds: Vec<SimpleFd>, catalog: &Catalog) -> Result<Self> {
        let mut seen: HashSet<VarId> = HashSet::new();
        for fd in &fds {
            if fd.determined.is_empty() {
                return Err(Error::FdCatalog(format!(
                    "fd on `{}` has an empty determined set",
                    catalog.name(fd.determinant)
                )));
            }
            if catalog.kind(fd.determinant) != AttributeKind::Categorical {
                return Err(Error::FdCatalog(format!(
                    "determinant `{}` must be categorical",
                    catalog.name(fd.determinant)
                )));
            }
            for &v in std::iter::once(&fd.determinant).chain(&fd.determined) {
                if !seen.insert(v) {
                    return Err(Error::FdCatalog(format!(
                        "variable `{}` appears in two fd groups",
                        catalog.name(v)
                    )));
                }
            }
        }
        Ok(FdCatalog { fds })
    }

    /// All functionally determined variables (union of the S_i).
    pub fn determined_set(&self) -> HashSet<VarId> {
        self.fds.iter().flat_map(|fd| fd.determined.iter().copied()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.fds.is_empty()
    }
}

/// The distinct (f-category -> value) image of an FD target, scanned over
/// every relation housing both variables. Errors if no relation houses the
/// pair or two occurrences conflict.
pub fn fd_image_map(db: &Database, f: VarId, c: VarId) -> Result<HashMap<u32, Value>> {
    let mut image: HashMap<u32, Value> = HashMap::new();
    let mut housed = false;
    for rel in &db.relations {
        let (Some(fc), Some(cc)) = (rel.col_of(f), rel.col_of(c)) else {
            continue;
        };
        housed = true;
        for row in &rel.rows {
            let key = row[fc].as_cat();
            match image.get(&key) {
                None => {
                    image.insert(key, row[cc]);
                }
                Some(prev) if *prev == row[cc] => {}
                Some(prev) => {
                    let show = |v: &Value| match v {
                        Value::Cat(id) => db.catalog.category_label(c, *id).to_string(),
                        Value::Num(x) => x.to_string(),
                    };
                    return Err(Error::FdViolation {
                        f: db.catalog.name(f).to_string(),
                        c: db.catalog.name(c).to_string(),
                        cat: db.catalog.category_label(f, key).to_string(),
                        v1: show(prev),
                        v2: show(&row[cc]),
                    });
                }
            }
        }
    }
    if !housed {
        return Err(Error::FdNotHoused {
            f: db.catalog.name(f).to_string(),
            c: db.catalog.name(c).to_string(),
        });
    }
    Ok(image)
}

/// Check every FD of the catalog against the data. Ok iff each f-category
/// maps to exactly one value of each determined variable.
pub fn validate_fds(db: &Database, fds: &FdCatalog) -> Result<()> {
    for fd in &fds.fds {
        for &c in &fd.determined {
            fd_image_map(db, fd.determinant, c)?;
        }
    }
    Ok(())
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Cat(c) => write!(f, "#{c}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn two_col_db() -> (Database, VariableOrder) {
        let mut db = Database::new();
        let a = db.catalog.define("a", AttributeKind::Categorical).unwrap();
        let b = db.catalog.define("b", AttributeKind::Continuous).unwrap();
        db.add_relation(Relation::new(
            "r",
            vec![a, b],
            vec![
                vec![Value::Cat(1), Value::Num(2.0)],
                vec![Value::Cat(0), Value::Num(1.0)],
            ],
        ));
        let spec = VoSpec::node("a", vec![VoSpec::leaf("b")]);
        let vo = VariableOrder::build(&spec, &db).unwrap();
        (db, vo)
    }

    #[test]
    fn load_csv_parses_and_interns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("items.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "sku,price").unwrap();
        writeln!(f, "s1,2.5").unwrap();
        writeln!(f, "s2,4.0").unwrap();
        drop(f);

        let mut catalog = Catalog::default();
        let schema = vec![
            ("sku".to_string(), AttributeKind::Categorical),
            ("price".to_string(), AttributeKind::Continuous),
        ];
        let rel = load_csv(&path, "items", &schema, &mut catalog).unwrap();
        assert_eq!(rel.rows.len(), 2);
        let sku = catalog.lookup("sku").unwrap();
        assert_eq!(catalog.num_categories(sku), 2);
        assert_eq!(catalog.category_label(sku, 0), "s1");
        assert_eq!(catalog.category_label(sku, 1), "s2");
    }

    #[test]
    fn load_csv_empty_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "x\n").unwrap();
        let mut catalog = Catalog::default();
        let schema = vec![("x".to_string(), AttributeKind::Continuous)];
        let rel = load_csv(&path, "e", &schema, &mut catalog).unwrap();
        assert!(rel.rows.is_empty());
    }

    #[test]
    fn load_csv_bad_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y\nx,abc\n").unwrap();
        let mut catalog = Catalog::default();
        let schema = vec![
            ("x".to_string(), AttributeKind::Categorical),
            ("y".to_string(), AttributeKind::Continuous),
        ];
        let err = load_csv(&path, "bad", &schema, &mut catalog).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 2, .. }));
    }

    #[test]
    fn load_csv_header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, "x,z\n").unwrap();
        let mut catalog = Catalog::default();
        let schema = vec![
            ("x".to_string(), AttributeKind::Continuous),
            ("y".to_string(), AttributeKind::Continuous),
        ];
        assert!(load_csv(&path, "h", &schema, &mut catalog).is_err());
    }

    #[test]
    fn sort_lexicographic_and_idempotent() {
        let (db, vo) = two_col_db();
        let sorted = sort_for_order(&db.relations[0], &vo).unwrap();
        assert_eq!(sorted.rows[0], vec![Value::Cat(0), Value::Num(1.0)]);
        assert_eq!(sorted.rows[1], vec![Value::Cat(1), Value::Num(2.0)]);
        let again = sort_for_order(&sorted, &vo).unwrap();
        assert_eq!(again.rows, sorted.rows);
    }

    #[test]
    fn sort_rejects_off_path_relation() {
        // S(B,D) where B and D sit in different branches under A.
        let mut db = Database::new();
        let a = db.catalog.define("a", AttributeKind::Categorical).unwrap();
        let b = db.catalog.define("b", AttributeKind::Categorical).unwrap();
        let d = db.catalog.define("d", AttributeKind::Categorical).unwrap();
        db.add_relation(Relation::new("r", vec![a, b], vec![]));
        db.add_relation(Relation::new("t", vec![a, d], vec![]));
        let spec = VoSpec::node("a", vec![VoSpec::leaf("b"), VoSpec::leaf("d")]);
        let vo = VariableOrder::build(&spec, &db).unwrap();
        let bad = Relation::new("s", vec![b, d], vec![]);
        assert!(matches!(sort_for_order(&bad, &vo), Err(Error::NotOnPath { .. })));
    }

    #[test]
    fn vo_dep_sets_from_cooccurrence() {
        // R(A,B,C), S(B,D), T(A,E): dep(D) = {B}, dep(C) = {A,B}, dep(E) = {A}.
        let mut db = Database::new();
        let a = db.catalog.define("a", AttributeKind::Categorical).unwrap();
        let b = db.catalog.define("b", AttributeKind::Categorical).unwrap();
        let c = db.catalog.define("c", AttributeKind::Continuous).unwrap();
        let d = db.catalog.define("d", AttributeKind::Continuous).unwrap();
        let e = db.catalog.define("e", AttributeKind::Continuous).unwrap();
        db.add_relation(Relation::new("r", vec![a, b, c], vec![]));
        db.add_relation(Relation::new("s", vec![b, d], vec![]));
        db.add_relation(Relation::new("t", vec![a, e], vec![]));
        let spec = VoSpec::node(
            "a",
            vec![VoSpec::node("b", vec![VoSpec::leaf("c"), VoSpec::leaf("d")]), VoSpec::leaf("e")],
        );
        let vo = VariableOrder::build(&spec, &db).unwrap();
        let node = |v: VarId| vo.node_of(v).unwrap();
        assert_eq!(vo.nodes[node(d)].dep, vec![node(b)]);
        assert_eq!(vo.nodes[node(c)].dep, vec![node(a), node(b)]);
        assert_eq!(vo.nodes[node(e)].dep, vec![node(a)]);
        assert_eq!(vo.nodes[node(b)].dep, vec![node(a)]);
    }

    #[test]
    fn fd_validation_accepts_function_rejects_conflict() {
        let mut db = Database::new();
        let city = db.catalog.define("city", AttributeKind::Categorical).unwrap();
        let country = db.catalog.define("country", AttributeKind::Categorical).unwrap();
        let saigon = db.catalog.intern(city, "saigon");
        let hanoi = db.catalog.intern(city, "hanoi");
        let vietnam = db.catalog.intern(country, "vietnam");
        db.add_relation(Relation::new(
            "geo",
            vec![city, country],
            vec![
                vec![Value::Cat(saigon), Value::Cat(vietnam)],
                vec![Value::Cat(hanoi), Value::Cat(vietnam)],
            ],
        ));
        let fds = FdCatalog::new(
            vec![SimpleFd { determinant: city, determined: vec![country] }],
            &db.catalog,
        )
        .unwrap();
        validate_fds(&db, &fds).unwrap();

        let england = db.catalog.intern(country, "england");
        db.relations[0].rows.push(vec![Value::Cat(saigon), Value::Cat(england)]);
        let err = validate_fds(&db, &fds).unwrap_err();
        match err {
            Error::FdViolation { cat, .. } => assert_eq!(cat, "saigon"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_determined_set_rejected() {
        let mut catalog = Catalog::default();
        let f = catalog.define("f", AttributeKind::Categorical).unwrap();
        let err = FdCatalog::new(vec![SimpleFd { determinant: f, determined: vec![] }], &catalog);
        assert!(matches!(err, Err(Error::FdCatalog(_))));
    }

    #[test]
    fn interning_round_trips() {
        let mut catalog = Catalog::default();
        let v = catalog.define("v", AttributeKind::Categorical).unwrap();
        for s in ["x", "y", "x", "zebra", "y"] {
            let id = catalog.intern(v, s);
            assert_eq!(catalog.category_label(v, id), s);
        }
        assert_eq!(catalog.num_categories(v), 3);
    }
}
