//! Model definitions: the (g, h) component maps for ridge linear regression,
//! degree-2 polynomial regression and rank-r degree-2 factorization machines,
//! plus parameter vectors, point evaluation, gradients and the linear-model
//! fast paths.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::relational::{AttributeKind, Catalog, VarId, VariableOrder};
use crate::sigma::SparseSigma;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lr,
    Pr2,
    Fama { rank: usize },
}

impl ModelKind {
    pub fn degree(&self) -> u8 {
        match self {
            ModelKind::Lr => 1,
            ModelKind::Pr2 | ModelKind::Fama { .. } => 2,
        }
    }

    /// g is the identity map for LR and PR2.
    pub fn is_linear(&self) -> bool {
        !matches!(self, ModelKind::Fama { .. })
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Feature variables in declaration order (continuous first, then
    /// categorical, following the config).
    pub features: Vec<VarId>,
    pub label: VarId,
    pub lambda: f64,
}

/// One component h_j of the feature map: a monomial over feature variables,
/// held as (variable, exponent) pairs sorted by the variable's position in
/// the variable order. Categorical exponents are always 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HComponent {
    pub exps: Vec<(VarId, u8)>,
}

impl HComponent {
    pub fn constant() -> Self {
        HComponent { exps: Vec::new() }
    }

    pub fn is_constant(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.exps.iter().map(|&(v, _)| v)
    }

    /// Categorical variables of the component, in variable-order position.
    pub fn cat_vars(&self, catalog: &Catalog) -> Vec<VarId> {
        self.exps
            .iter()
            .filter(|&&(v, _)| catalog.kind(v) == AttributeKind::Categorical)
            .map(|&(v, _)| v)
            .collect()
    }

    pub fn label(&self, catalog: &Catalog) -> String {
        if self.exps.is_empty() {
            return "1".to_string();
        }
        self.exps
            .iter()
            .map(|&(v, e)| {
                if e == 1 {
                    catalog.name(v).to_string()
                } else {
                    format!("{}^{}", catalog.name(v), e)
                }
            })
            .collect::<Vec<_>>()
            .join("*")
    }
}

fn sorted_by_position(mut exps: Vec<(VarId, u8)>, vo: &VariableOrder) -> Vec<(VarId, u8)> {
    exps.sort_by_key(|&(v, _)| vo.position(v).unwrap_or(usize::MAX));
    exps
}

/// The h-component list of a model: constant, singletons, and for degree-2
/// kinds the pairwise interactions (squares only for continuous variables,
/// and not for factorization machines).
pub fn h_components(model: &ModelSpec, vo: &VariableOrder, catalog: &Catalog) -> Vec<HComponent> {
    let feats = &model.features;
    let mut comps = vec![HComponent::constant()];
    for &f in feats {
        comps.push(HComponent { exps: vec![(f, 1)] });
    }
    if model.kind.degree() == 2 {
        for i in 0..feats.len() {
            for j in i..feats.len() {
                if i == j {
                    // Squares: indicator values are idempotent, and the FaMa
                    // model has no self-pairs at all.
                    if matches!(model.kind, ModelKind::Fama { .. }) {
                        continue;
                    }
                    if catalog.kind(feats[i]) == AttributeKind::Categorical {
                        continue;
                    }
                    comps.push(HComponent { exps: vec![(feats[i], 2)] });
                } else {
                    let exps =
                        sorted_by_position(vec![(feats[i], 1), (feats[j], 1)], vo);
                    comps.push(HComponent { exps });
                }
            }
        }
    }
    comps
}

/// Components for PCA: one per feature, no constant.
pub fn pca_components(features: &[VarId]) -> Vec<HComponent> {
    features.iter().map(|&f| HComponent { exps: vec![(f, 1)] }).collect()
}

/// A categorical key: interned category ids of a component's categorical
/// variables, in variable-order position. Empty for all-continuous
/// components.
pub type Key = Vec<u32>;

/// Where a factorization-machine pair component finds its two factor sides.
#[derive(Debug, Clone)]
pub struct PairInfo {
    /// Indices into `ModelLayout::factor_feats`.
    pub feat_a: usize,
    pub feat_b: usize,
    /// Number of leading key positions that belong to side a (0 or 1).
    pub a_key_len: usize,
}

/// Shapes of all parameter blocks of a model: the h-components, the observed
/// key support per component, and for FaMa the factor-block features.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub kind: ModelKind,
    pub lambda: f64,
    pub comps: Vec<HComponent>,
    /// Observed categorical keys per component, sorted. Single empty key for
    /// all-continuous components.
    pub comp_keys: Vec<Arc<Vec<Key>>>,
    /// Component indices that carry direct parameter blocks: all components
    /// for LR/PR2, the constant and singletons for FaMa.
    pub direct_comps: Vec<usize>,
    /// FaMa factor features: (variable, key support); empty for linear kinds.
    pub factor_feats: Vec<(VarId, Arc<Vec<Key>>)>,
    /// For each component: pair info when the component is a FaMa pair.
    pub pair_info: Vec<Option<PairInfo>>,
    pub rank: usize,
}

impl ModelLayout {
    pub fn num_comps(&self) -> usize {
        self.comps.len()
    }

    pub fn comp_size(&self, j: usize) -> usize {
        self.comp_keys[j].len()
    }

    pub fn key_position(&self, j: usize, key: &[u32]) -> Option<usize> {
        self.comp_keys[j].binary_search_by(|k| k.as_slice().cmp(key)).ok()
    }

    /// Build the layout plumbing (direct comps, factor features, pair info)
    /// given components and their key supports.
    pub fn new(
        kind: ModelKind,
        lambda: f64,
        comps: Vec<HComponent>,
        comp_keys: Vec<Arc<Vec<Key>>>,
        factor_feats: Vec<(VarId, Arc<Vec<Key>>)>,
    ) -> Result<Self> {
        let rank = match kind {
            ModelKind::Fama { rank } => rank,
            _ => 0,
        };
        let mut direct_comps = Vec::new();
        let mut pair_info = Vec::new();
        for (j, comp) in comps.iter().enumerate() {
            let is_pair = matches!(kind, ModelKind::Fama { .. }) && comp.exps.len() == 2;
            if is_pair {
                let (va, vb) = (comp.exps[0].0, comp.exps[1].0);
                let fa = factor_feats.iter().position(|&(v, _)| v == va).ok_or_else(|| {
                    Error::ShapeMismatch(format!("no factor block for variable {va}"))
                })?;
                let fb = factor_feats.iter().position(|&(v, _)| v == vb).ok_or_else(|| {
                    Error::ShapeMismatch(format!("no factor block for variable {vb}"))
                })?;
                let a_key_len = if factor_feats[fa].1.first().map_or(0, |k| k.len()) > 0 { 1 } else { 0 };
                pair_info.push(Some(PairInfo { feat_a: fa, feat_b: fb, a_key_len }));
            } else {
                direct_comps.push(j);
                pair_info.push(None);
            }
        }
        Ok(ModelLayout { kind, lambda, comps, comp_keys, direct_comps, factor_feats, pair_info, rank })
    }
}

/// Model parameters in block form: one dense vector per direct component
/// (aligned to its key support) plus, for FaMa, rank-many factor blocks per
/// feature. FaMa pair blocks are never materialized; they exist only in CP
/// form through `g_evaluate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    /// Aligned with `layout.direct_comps`.
    pub direct: Vec<Vec<f64>>,
    /// `factors[l][f]` aligned with `layout.factor_feats[f]`.
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl ParamVector {
    pub fn zeros(layout: &ModelLayout) -> Self {
        ParamVector {
            direct: layout.direct_comps.iter().map(|&j| vec![0.0; layout.comp_size(j)]).collect(),
            factors: (0..layout.rank)
                .map(|_| layout.factor_feats.iter().map(|(_, k)| vec![0.0; k.len()]).collect())
                .collect(),
        }
    }

    /// Initial point for training: zeros, except FaMa factors drawn i.i.d.
    /// uniform in [-0.1, 0.1] from the seed to break symmetry.
    pub fn init(layout: &ModelLayout, seed: u64) -> Self {
        let mut p = Self::zeros(layout);
        if layout.rank > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for l in 0..layout.rank {
                for block in &mut p.factors[l] {
                    for v in block.iter_mut() {
                        *v = rng.random_range(-0.1..0.1);
                    }
                }
            }
        }
        p
    }

    pub fn map_blocks(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> ParamVector {
        let direct = self
            .direct
            .iter()
            .zip(&other.direct)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
            .collect();
        let factors = self
            .factors
            .iter()
            .zip(&other.factors)
            .map(|(la, lb)| {
                la.iter()
                    .zip(lb)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                    .collect()
            })
            .collect();
        ParamVector { direct, factors }
    }

    pub fn add_scaled(&self, other: &ParamVector, s: f64) -> ParamVector {
        self.map_blocks(other, |a, b| a + s * b)
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.direct.iter().zip(&other.direct) {
            for (x, y) in a.iter().zip(b) {
                acc += x * y;
            }
        }
        for (la, lb) in self.factors.iter().zip(&other.factors) {
            for (a, b) in la.iter().zip(lb) {
                for (x, y) in a.iter().zip(b) {
                    acc += x * y;
                }
            }
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn inf_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        for x in self.iter_values() {
            m = m.max(x.abs());
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.iter_values().all(f64::is_finite)
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.direct
            .iter()
            .flat_map(|b| b.iter().copied())
            .chain(self.factors.iter().flat_map(|l| l.iter().flat_map(|b| b.iter().copied())))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.direct
            .iter_mut()
            .flat_map(|b| b.iter_mut())
            .chain(self.factors.iter_mut().flat_map(|l| l.iter_mut().flat_map(|b| b.iter_mut())))
    }
}

/// g(theta) in h-component space. Direct blocks are borrowed; FaMa pair
/// components stay in CP form (a sum of rank-1 tensors).
pub struct EvaluatedG<'a> {
    pub layout: &'a ModelLayout,
    pub theta: &'a ParamVector,
}

impl<'a> EvaluatedG<'a> {
    /// The value of g_j at a categorical key of component j.
    pub fn value(&self, j: usize, key: &[u32]) -> f64 {
        match &self.layout.pair_info[j] {
            None => {
                let d = self.layout.direct_comps.binary_search(&j).expect("direct component");
                let pos = self
                    .layout
                    .key_position(j, key)
                    .unwrap_or_else(|| panic!("key outside component {j} support"));
                self.theta.direct[d][pos]
            }
            Some(pi) => {
                let (ka, kb) = key.split_at(pi.a_key_len.min(key.len()));
                let pa = lookup(&self.layout.factor_feats[pi.feat_a].1, ka);
                let pb = lookup(&self.layout.factor_feats[pi.feat_b].1, kb);
                let mut acc = 0.0;
                for l in 0..self.layout.rank {
                    acc += self.theta.factors[l][pi.feat_a][pa] * self.theta.factors[l][pi.feat_b][pb];
                }
                acc
            }
        }
    }
}

fn lookup(keys: &[Key], key: &[u32]) -> usize {
    keys.binary_search_by(|k| k.as_slice().cmp(key)).expect("factor key in support")
}

/// Evaluate the parameter map g. Identity for LR/PR2; for FaMa the pair
/// blocks are kept as sums of rank-1 terms.
pub fn g_evaluate<'a>(layout: &'a ModelLayout, theta: &'a ParamVector) -> EvaluatedG<'a> {
    EvaluatedG { layout, theta }
}

/// J(theta) = 1/2 g'Sigma g - <g, c> + s_Y/2 + lambda/2 |theta|^2.
pub fn point_evaluate(sigma: &SparseSigma, layout: &ModelLayout, theta: &ParamVector) -> f64 {
    let g = g_evaluate(layout, theta);
    let quad = sigma.quadratic_form(&g);
    let lin = sigma.dot_c(&g);
    0.5 * quad - lin + 0.5 * sigma.s_y + 0.5 * layout.lambda * theta.norm_sq()
}

/// The gradient of J. For linear models this is Sigma theta + lambda theta
/// - c; for FaMa the factor rows are assembled by contracting the h-space
/// residual with the partner factors.
pub fn gradient(sigma: &SparseSigma, layout: &ModelLayout, theta: &ParamVector) -> ParamVector {
    let g = g_evaluate(layout, theta);
    let hv = sigma.times_g(&g);
    gradient_from_hspace(sigma, layout, theta, &hv)
}

/// Assemble the parameter-space gradient from the h-space product
/// hv = Sigma g(theta).
pub fn gradient_from_hspace(
    sigma: &SparseSigma,
    layout: &ModelLayout,
    theta: &ParamVector,
    hv: &[Vec<f64>],
) -> ParamVector {
    let lambda = layout.lambda;
    let mut grad = ParamVector::zeros(layout);
    // Residual u = Sigma g - c per h-component.
    let residual: Vec<Vec<f64>> = hv
        .iter()
        .zip(&sigma.c)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    for (d, &j) in layout.direct_comps.iter().enumerate() {
        for (g, (&u, &t)) in
            grad.direct[d].iter_mut().zip(residual[j].iter().zip(&theta.direct[d]))
        {
            *g = u + lambda * t;
        }
    }
    for (j, pi) in layout.pair_info.iter().enumerate() {
        let Some(pi) = pi else { continue };
        for (pos, key) in layout.comp_keys[j].iter().enumerate() {
            let u = residual[j][pos];
            if u == 0.0 {
                continue;
            }
            let (ka, kb) = key.split_at(pi.a_key_len.min(key.len()));
            let pa = lookup(&layout.factor_feats[pi.feat_a].1, ka);
            let pb = lookup(&layout.factor_feats[pi.feat_b].1, kb);
            for l in 0..layout.rank {
                grad.factors[l][pi.feat_a][pa] += u * theta.factors[l][pi.feat_b][pb];
                grad.factors[l][pi.feat_b][pb] += u * theta.factors[l][pi.feat_a][pa];
            }
        }
    }
    for l in 0..layout.rank {
        for (gb, tb) in grad.factors[l].iter_mut().zip(&theta.factors[l]) {
            for (g, t) in gb.iter_mut().zip(tb) {
                *g += lambda * t;
            }
        }
    }
    grad
}

/// Scalars precomputed once per line search for a linear model, allowing
/// O(1) Armijo decisions and an O(m) next gradient.
#[derive(Debug, Clone)]
pub struct LinearSearchState {
    pub sigma_d: ParamVector,
    pub theta_sigma_d: f64,
    pub d_sigma_d: f64,
    pub c_dot_d: f64,
    pub theta_dot_d: f64,
    pub d_norm_sq: f64,
}

/// Precompute the line-search state for a linear model at (theta, d). One
/// Sigma-matvec; everything else is inner products.
pub fn linear_search_state(
    sigma: &SparseSigma,
    layout: &ModelLayout,
    theta: &ParamVector,
    d: &ParamVector,
) -> Result<LinearSearchState> {
    if !layout.kind.is_linear() {
        return Err(Error::Unsupported("fast paths require a linear model".into()));
    }
    let gd = g_evaluate(layout, d);
    let hv = sigma.times_g(&gd);
    let sigma_d = ParamVector {
        direct: layout.direct_comps.iter().map(|&j| hv[j].clone()).collect(),
        factors: Vec::new(),
    };
    let c_param = ParamVector {
        direct: layout.direct_comps.iter().map(|&j| sigma.c[j].clone()).collect(),
        factors: Vec::new(),
    };
    Ok(LinearSearchState {
        theta_sigma_d: theta.dot(&sigma_d),
        d_sigma_d: d.dot(&sigma_d),
        c_dot_d: c_param.dot(d),
        theta_dot_d: theta.dot(d),
        d_norm_sq: d.norm_sq(),
        sigma_d,
    })
}

impl LinearSearchState {
    /// J(theta) - J(theta - alpha d), in closed form.
    pub fn decrease(&self, alpha: f64, lambda: f64) -> f64 {
        alpha * self.theta_sigma_d - 0.5 * alpha * alpha * self.d_sigma_d
            - alpha * self.c_dot_d
            + lambda * alpha * self.theta_dot_d
            - 0.5 * lambda * alpha * alpha * self.d_norm_sq
    }

    /// The Armijo condition J(theta - alpha d) >= J(theta) - alpha/2 |d|^2
    /// (i.e. the decrease is insufficient and the step must shrink).
    pub fn armijo_insufficient(&self, alpha: f64, lambda: f64) -> bool {
        alpha * self.theta_sigma_d - 0.5 * alpha * alpha * self.d_sigma_d - alpha * self.c_dot_d
            + lambda * alpha * self.theta_dot_d
            <= 0.5 * alpha * (lambda * alpha + 1.0) * self.d_norm_sq
    }

    /// grad J(theta - alpha d) = (1 - alpha lambda) d - alpha Sigma d,
    /// reusing the cached Sigma d.
    pub fn next_gradient(&self, d: &ParamVector, alpha: f64, lambda: f64) -> ParamVector {
        let mut out = d.map_blocks(&self.sigma_d, |dv, sv| (1.0 - alpha * lambda) * dv - alpha * sv);
        out.factors = d.factors.clone();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::{Database, Relation, Value, VoSpec};

    fn toy_vo(db: &Database, names: &[&str]) -> VariableOrder {
        let mut spec = VoSpec::leaf(names[names.len() - 1]);
        for name in names.iter().rev().skip(1) {
            spec = VoSpec::node(name, vec![spec]);
        }
        VariableOrder::build(&spec, db).unwrap()
    }

    #[test]
    fn component_lists_per_kind() {
        let mut db = Database::new();
        let x = db.catalog.define("x", AttributeKind::Continuous).unwrap();
        let b = db.catalog.define("b", AttributeKind::Categorical).unwrap();
        let y = db.catalog.define("y", AttributeKind::Continuous).unwrap();
        db.add_relation(Relation::new(
            "r",
            vec![x, b, y],
            vec![vec![Value::Num(1.0), Value::Cat(0), Value::Num(0.5)]],
        ));
        let vo = toy_vo(&db, &["x", "b", "y"]);

        let lr = ModelSpec { kind: ModelKind::Lr, features: vec![x, b], label: y, lambda: 0.0 };
        assert_eq!(h_components(&lr, &vo, &db.catalog).len(), 3); // 1, x, b

        let pr2 = ModelSpec { kind: ModelKind::Pr2, ..lr.clone() };
        // 1, x, b, x^2, x*b (no b^2: indicators are idempotent)
        let comps = h_components(&pr2, &vo, &db.catalog);
        assert_eq!(comps.len(), 5);
        assert!(comps.contains(&HComponent { exps: vec![(x, 2)] }));
        assert!(!comps.contains(&HComponent { exps: vec![(b, 2)] }));

        let fama = ModelSpec { kind: ModelKind::Fama { rank: 2 }, ..lr.clone() };
        // 1, x, b, x*b (no squares at all)
        assert_eq!(h_components(&fama, &vo, &db.catalog).len(), 4);
    }

    #[test]
    fn fama_cp_matches_direct_product() {
        // r=1, both continuous: g_ij = 2 * 3 = 6.
        let comps = vec![
            HComponent::constant(),
            HComponent { exps: vec![(0, 1)] },
            HComponent { exps: vec![(1, 1)] },
            HComponent { exps: vec![(0, 1), (1, 1)] },
        ];
        let empty_keys = Arc::new(vec![Vec::new()]);
        let layout = ModelLayout::new(
            ModelKind::Fama { rank: 1 },
            0.0,
            comps,
            vec![empty_keys.clone(); 4],
            vec![(0, empty_keys.clone()), (1, empty_keys.clone())],
        )
        .unwrap();
        let mut theta = ParamVector::zeros(&layout);
        theta.factors[0][0][0] = 2.0;
        theta.factors[0][1][0] = 3.0;
        let g = g_evaluate(&layout, &theta);
        assert_eq!(g.value(3, &[]), 6.0);
    }

    #[test]
    fn fama_cp_categorical_matches_outer_product() {
        // r=2, two categorical features with 2x2 categories: the CP form must
        // agree with the explicitly materialized outer products.
        let comps = vec![
            HComponent::constant(),
            HComponent { exps: vec![(0, 1)] },
            HComponent { exps: vec![(1, 1)] },
            HComponent { exps: vec![(0, 1), (1, 1)] },
        ];
        let cat_keys = Arc::new(vec![vec![0u32], vec![1u32]]);
        let pair_keys =
            Arc::new(vec![vec![0u32, 0], vec![0u32, 1], vec![1u32, 0], vec![1u32, 1]]);
        let empty_keys = Arc::new(vec![Vec::new()]);
        let layout = ModelLayout::new(
            ModelKind::Fama { rank: 2 },
            0.0,
            comps,
            vec![empty_keys, cat_keys.clone(), cat_keys.clone(), pair_keys.clone()],
            vec![(0, cat_keys.clone()), (1, cat_keys.clone())],
        )
        .unwrap();
        let mut theta = ParamVector::zeros(&layout);
        let vals = [[1.5, -0.5], [2.0, 0.25]];
        for l in 0..2 {
            for f in 0..2 {
                theta.factors[l][f] = vec![vals[l][f], vals[l][f] * 0.5 - 1.0];
            }
        }
        let g = g_evaluate(&layout, &theta);
        for key in pair_keys.iter() {
            let (a, b) = (key[0] as usize, key[1] as usize);
            let mut expect = 0.0;
            for l in 0..2 {
                expect += theta.factors[l][0][a] * theta.factors[l][1][b];
            }
            assert!((g.value(3, key) - expect).abs() < 1e-15);
        }
    }
}
