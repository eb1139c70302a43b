//! Independent brute-force reference: materialized join, dense one-hot
//! Sigma/c/s_Y, closed-form ridge solve by Gaussian elimination, and a
//! cyclic-Jacobi eigensolver.
//!
//! This module is the trusted baseline for every factorized computation. It
//! deliberately never touches the engine, registry or sigma-builder: it sees
//! only relations and the model's component definitions.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::models::{HComponent, Key};
use crate::relational::{AttributeKind, Catalog, Database, Value, VarId, VariableOrder};

/// Joins above this size are refused: the oracle exists for verification,
/// not performance.
const MAX_JOIN_ROWS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct JoinResult {
    pub vars: Vec<VarId>,
    pub rows: Vec<Vec<Value>>,
}

impl JoinResult {
    pub fn col_of(&self, var: VarId) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }
}

/// Materialize the natural join of all relations with iterated hash joins.
/// Output columns follow the variable-order preorder.
pub fn materialize_join(db: &Database, vo: &VariableOrder) -> Result<JoinResult> {
    let mut vars: Vec<VarId> = Vec::new();
    let mut rows: Vec<Vec<Value>> = vec![Vec::new()];
    for rel in &db.relations {
        let shared: Vec<(usize, usize)> = rel
            .vars
            .iter()
            .enumerate()
            .filter_map(|(rc, v)| vars.iter().position(|&av| av == *v).map(|ac| (ac, rc)))
            .collect();
        let new_cols: Vec<usize> = (0..rel.vars.len())
            .filter(|rc| !shared.iter().any(|&(_, src)| src == *rc))
            .collect();
        let mut table: HashMap<Vec<Value>, Vec<&Vec<Value>>> = HashMap::new();
        for row in &rel.rows {
            let key: Vec<Value> = shared.iter().map(|&(_, rc)| row[rc]).collect();
            table.entry(key).or_default().push(row);
        }
        let mut next: Vec<Vec<Value>> = Vec::new();
        for acc in &rows {
            let key: Vec<Value> = shared.iter().map(|&(ac, _)| acc[ac]).collect();
            if let Some(matches) = table.get(&key) {
                for m in matches {
                    let mut out = acc.clone();
                    out.extend(new_cols.iter().map(|&rc| m[rc]));
                    next.push(out);
                    if next.len() > MAX_JOIN_ROWS {
                        return Err(Error::Unsupported(format!(
                            "oracle join exceeds {MAX_JOIN_ROWS} rows"
                        )));
                    }
                }
            }
        }
        vars.extend(new_cols.iter().map(|&rc| rel.vars[rc]));
        rows = next;
    }
    // Reorder columns into variable-order preorder.
    let mut order: Vec<usize> = (0..vars.len()).collect();
    order.sort_by_key(|&i| vo.position(vars[i]).unwrap_or(usize::MAX));
    let vars_sorted: Vec<VarId> = order.iter().map(|&i| vars[i]).collect();
    let rows_sorted: Vec<Vec<Value>> =
        rows.iter().map(|r| order.iter().map(|&i| r[i]).collect()).collect();
    Ok(JoinResult { vars: vars_sorted, rows: rows_sorted })
}

/// The dense one-hot problem: explicit Sigma, c and s_Y over unrolled
/// columns. Each column is one component paired with one combination of its
/// categorical variables' active-domain values.
#[derive(Debug)]
pub struct DenseProblem {
    /// (component index, categorical key) per dense column.
    pub cols: Vec<(usize, Key)>,
    col_offsets: Vec<usize>,
    /// Active domain (sorted ids) per variable used by the components.
    domains: HashMap<VarId, Vec<u32>>,
    comps: Vec<HComponent>,
    pub sigma: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub s_y: f64,
    pub count: usize,
}

impl DenseProblem {
    /// Dense column of a (component, key) coordinate.
    pub fn col_index(&self, comp: usize, key: &[u32]) -> Option<usize> {
        let mut idx = 0usize;
        let cat_vars: Vec<VarId> = self.comp_cat_vars(comp);
        debug_assert_eq!(cat_vars.len(), key.len());
        for (v, id) in cat_vars.iter().zip(key) {
            let dom = &self.domains[v];
            let pos = dom.binary_search(id).ok()?;
            idx = idx * dom.len() + pos;
        }
        Some(self.col_offsets[comp] + idx)
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    fn comp_cat_vars(&self, comp: usize) -> Vec<VarId> {
        self.comps[comp]
            .exps
            .iter()
            .filter(|&&(v, _)| self.domains.contains_key(&v))
            .map(|&(v, _)| v)
            .collect()
    }
}

/// Row value of one component: the product of continuous powers and the
/// categorical key.
fn component_value(
    comp: &HComponent,
    join: &JoinResult,
    row: &[Value],
    catalog: &Catalog,
) -> (f64, Key) {
    let mut cont = 1.0;
    let mut key = Key::new();
    for &(v, e) in &comp.exps {
        let col = join.col_of(v).expect("feature in join");
        match catalog.kind(v) {
            AttributeKind::Continuous => cont *= row[col].as_num().powi(e as i32),
            AttributeKind::Categorical => key.push(row[col].as_cat()),
        }
    }
    (cont, key)
}

/// Explicit one-hot Sigma = 1/|D| sum h(x)h(x)', c = 1/|D| sum y h(x), and
/// s_Y, accumulated in double precision.
pub fn dense_sigma(
    join: &JoinResult,
    comps: &[HComponent],
    label: Option<VarId>,
    catalog: &Catalog,
) -> Result<DenseProblem> {
    if join.rows.is_empty() {
        return Err(Error::EmptyJoin);
    }
    // Active domains from the join.
    let mut domains: HashMap<VarId, Vec<u32>> = HashMap::new();
    for comp in comps {
        for &(v, _) in &comp.exps {
            if catalog.kind(v) == AttributeKind::Categorical {
                domains.entry(v).or_default();
            }
        }
    }
    for row in &join.rows {
        for (v, dom) in domains.iter_mut() {
            let id = row[join.col_of(*v).unwrap()].as_cat();
            if !dom.contains(&id) {
                dom.push(id);
            }
        }
    }
    for dom in domains.values_mut() {
        dom.sort_unstable();
    }

    let mut cols: Vec<(usize, Key)> = Vec::new();
    let mut col_offsets = Vec::with_capacity(comps.len());
    for (j, comp) in comps.iter().enumerate() {
        col_offsets.push(cols.len());
        let cat_vars: Vec<&Vec<u32>> = comp
            .exps
            .iter()
            .filter(|&&(v, _)| catalog.kind(v) == AttributeKind::Categorical)
            .map(|&(v, _)| &domains[&v])
            .collect();
        let mut keys = vec![Key::new()];
        for dom in cat_vars {
            let mut next = Vec::with_capacity(keys.len() * dom.len());
            for k in &keys {
                for &id in dom {
                    let mut k2 = k.clone();
                    k2.push(id);
                    next.push(k2);
                }
            }
            keys = next;
        }
        cols.extend(keys.into_iter().map(|k| (j, k)));
    }

    let dim = cols.len();
    let n = join.rows.len();
    let mut sigma = vec![vec![0.0; dim]; dim];
    let mut c = vec![0.0; dim];
    let mut s_y = 0.0;
    let label_col = label.map(|l| join.col_of(l).expect("label in join"));
    let mut h = vec![0.0; dim];
    let problem_stub = DenseProblem {
        cols: cols.clone(),
        col_offsets: col_offsets.clone(),
        domains: domains.clone(),
        comps: comps.to_vec(),
        sigma: Vec::new(),
        c: Vec::new(),
        s_y: 0.0,
        count: 0,
    };
    for row in &join.rows {
        h.iter_mut().for_each(|x| *x = 0.0);
        for (j, comp) in comps.iter().enumerate() {
            let (cont, key) = component_value(comp, join, row, catalog);
            let col = problem_stub.col_index(j, &key).expect("key in domain");
            h[col] = cont;
        }
        for (r, hr) in h.iter().enumerate() {
            if *hr == 0.0 {
                continue;
            }
            for (cc, hc) in h.iter().enumerate() {
                sigma[r][cc] += hr * hc;
            }
        }
        if let Some(lc) = label_col {
            let y = row[lc].as_num();
            for (r, hr) in h.iter().enumerate() {
                c[r] += y * hr;
            }
            s_y += y * y;
        }
    }
    let inv = 1.0 / n as f64;
    for r in &mut sigma {
        for v in r.iter_mut() {
            *v *= inv;
        }
    }
    for v in &mut c {
        *v *= inv;
    }
    s_y *= inv;

    Ok(DenseProblem {
        cols,
        col_offsets,
        domains,
        comps: comps.to_vec(),
        sigma,
        c,
        s_y,
        count: n,
    })
}

/// 1/(2|D|) sum ((g, h(x)) - y)^2 + lambda/2 * theta_norm_sq, evaluated by
/// looping over the materialized rows. `value_of(j, key)` supplies the
/// g-component values.
pub fn row_objective(
    join: &JoinResult,
    comps: &[HComponent],
    label: VarId,
    catalog: &Catalog,
    value_of: impl Fn(usize, &[u32]) -> f64,
    lambda: f64,
    theta_norm_sq: f64,
) -> f64 {
    let label_col = join.col_of(label).expect("label in join");
    let mut acc = 0.0;
    for row in &join.rows {
        let mut pred = 0.0;
        for (j, comp) in comps.iter().enumerate() {
            let (cont, key) = component_value(comp, join, row, catalog);
            pred += cont * value_of(j, &key);
        }
        let r = pred - row[label_col].as_num();
        acc += r * r;
    }
    acc / (2.0 * join.rows.len() as f64) + 0.5 * lambda * theta_norm_sq
}

/// Solve (Sigma + lambda I) theta = c by Gaussian elimination with partial
/// pivoting.
pub fn ridge_solve(sigma: &[Vec<f64>], c: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = c.len();
    let mut a: Vec<Vec<f64>> = sigma.iter().cloned().collect();
    let mut b = c.to_vec();
    let mut scale: f64 = 1e-300;
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
        scale = row.iter().fold(scale, |s, v| s.max(v.abs()));
    }
    for k in 0..n {
        let (piv, pval) = (k..n)
            .map(|r| (r, a[r][k].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pval < 1e-12 * scale {
            return Err(Error::Singular(format!("pivot {pval:.3e} at column {k}")));
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for r in k + 1..n {
            let f = a[r][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for col in k..n {
                a[r][col] -= f * a[k][col];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for col in k + 1..n {
            s -= a[k][col] * x[col];
        }
        x[k] = s / a[k][k];
    }
    Ok(x)
}

/// All eigenpairs of a symmetric matrix by cyclic Jacobi rotations, sorted
/// by descending eigenvalue. Returns (values, vectors); vectors[k] is the
/// k-th eigenvector.
pub fn dense_eigen(mat: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = mat.len();
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let frob: f64 = mat.iter().flat_map(|r| r.iter()).map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * frob.max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += 2.0 * a[p][q] * a[p][q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= f64::EPSILON * frob.max(1.0) {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = cos * akp - sin * akq;
                    a[k][q] = sin * akp + cos * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = cos * apk - sin * aqk;
                    a[q][k] = sin * apk + cos * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = cos * vp - sin * vq;
                    row[q] = sin * vp + cos * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> =
        (0..n).map(|k| (a[k][k], v.iter().map(|row| row[k]).collect())).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = pairs.into_iter().map(|p| p.1).collect();
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::{Relation, VoSpec};

    #[test]
    fn star_schema_join_count() {
        // Three satellites of 4 rows sharing one key value: 4^3 = 64 rows.
        let mut db = Database::new();
        let hub = db.catalog.define("hub", AttributeKind::Categorical).unwrap();
        let h0 = db.catalog.intern(hub, "h0");
        let mut children = Vec::new();
        for s in 0..3 {
            let name = format!("b{s}");
            let v = db.catalog.define(&name, AttributeKind::Continuous).unwrap();
            let rows = (0..4)
                .map(|i| vec![Value::Cat(h0), Value::Num(i as f64 + 1.0)])
                .collect();
            db.add_relation(Relation::new(format!("r{s}"), vec![hub, v], rows));
            children.push(VoSpec::leaf(&name));
        }
        let vo = VariableOrder::build(&VoSpec::node("hub", children), &db).unwrap();
        let join = materialize_join(&db, &vo).unwrap();
        assert_eq!(join.rows.len(), 64);
    }

    #[test]
    fn empty_relation_joins_empty() {
        let mut db = Database::new();
        let a = db.catalog.define("a", AttributeKind::Categorical).unwrap();
        db.add_relation(Relation::new("r", vec![a], vec![]));
        let vo = VariableOrder::build(&VoSpec::leaf("a"), &db).unwrap();
        assert!(materialize_join(&db, &vo).unwrap().rows.is_empty());
    }

    #[test]
    fn ridge_solve_trivial_and_residual() {
        let theta = ridge_solve(&[vec![1.0]], &[2.0], 0.0).unwrap();
        assert_eq!(theta, vec![2.0]);
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let theta = ridge_solve(&eye, &[3.0, -1.0], 1.0).unwrap();
        assert_eq!(theta, vec![1.5, -0.5]);

        // Random SPD system: residual <= 1e-10.
        let mut seed = 88172645463325252u64;
        let mut rng = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let n = 6;
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng()).collect()).collect();
        let mut spd = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    spd[i][j] += m[k][i] * m[k][j];
                }
            }
            spd[i][i] += 0.5;
        }
        let b: Vec<f64> = (0..n).map(|_| rng()).collect();
        let x = ridge_solve(&spd, &b, 0.0).unwrap();
        for i in 0..n {
            let mut r = -b[i];
            for j in 0..n {
                r += spd[i][j] * x[j];
            }
            assert!(r.abs() <= 1e-10);
        }
    }

    #[test]
    fn singular_system_reported() {
        let m = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(ridge_solve(&m, &[1.0, 1.0], 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn jacobi_diagonal_and_identity() {
        let (vals, vecs) = dense_eigen(&[vec![2.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(vals, vec![2.0, 1.0]);
        assert!((vecs[0][0].abs() - 1.0).abs() < 1e-12);
        let (vals, _) = dense_eigen(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(vals, vec![1.0, 1.0]);
    }

    #[test]
    fn jacobi_reconstruction() {
        let mut seed = 2463534242u64;
        let mut rng = move || {
            seed ^= seed << 13;
            seed ^= seed >> 17;
            seed ^= seed << 5;
            (seed % 1000) as f64 / 500.0 - 1.0
        };
        let n = 7;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let x = rng();
                a[i][j] = x;
                a[j][i] = x;
            }
        }
        let (vals, vecs) = dense_eigen(&a);
        for i in 0..n {
            for j in 0..n {
                let mut r = 0.0;
                for k in 0..n {
                    r += vals[k] * vecs[k][i] * vecs[k][j];
                }
                assert!((r - a[i][j]).abs() <= 1e-9, "({i},{j})");
            }
        }
    }
}
