//! Batch gradient descent with Armijo backtracking and Barzilai-Borwein
//! step seeding, operating purely on (Sigma, c, s_Y) — the data is never
//! touched again after the aggregates are assembled.

use crate::error::{Error, Result};
use crate::models::{
    g_evaluate, gradient, linear_search_state, point_evaluate, ModelLayout, ParamVector,
};
use crate::sigma::SparseSigma;

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Convergence tolerance: gradient infinity norm, and relative objective
    /// decrease per iteration.
    pub epsilon: f64,
    pub alpha0: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iters: 100_000, epsilon: 1e-9, alpha0: 1.0, seed: 0 }
    }
}

const MAX_BACKTRACKS: usize = 200;
const BB_MIN: f64 = 1e-8;
const BB_MAX: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Gradient infinity norm at most epsilon.
    Gradient,
    /// Relative objective decrease at most epsilon over one iteration.
    ObjectiveDecrease,
    /// Iteration budget exhausted without meeting either test.
    MaxIters,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub alpha: f64,
    pub backtracks: usize,
}

#[derive(Debug)]
pub struct TrainResult {
    pub theta: ParamVector,
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
}

impl TrainResult {
    pub fn converged(&self) -> bool {
        self.stop != StopReason::MaxIters
    }
}

/// Line-search state for one descent direction: either closed-form Armijo
/// decisions from precomputed Sigma products (quadratic objectives), or
/// direct objective re-evaluation.
pub struct QuadraticSearch {
    pub sigma_d: ParamVector,
    /// P d where P is the quadratic penalty operator (identity for the
    /// plain l2 penalty).
    pub p_d: ParamVector,
    pub theta_sigma_d: f64,
    pub d_sigma_d: f64,
    pub c_dot_d: f64,
    pub p_theta_dot_d: f64,
    pub p_d_dot_d: f64,
    pub d_norm_sq: f64,
    pub lambda: f64,
}

impl QuadraticSearch {
    /// J(x) - J(x - alpha d) in closed form.
    pub fn decrease(&self, alpha: f64) -> f64 {
        alpha * self.theta_sigma_d - 0.5 * alpha * alpha * self.d_sigma_d
            - alpha * self.c_dot_d
            + self.lambda * (alpha * self.p_theta_dot_d - 0.5 * alpha * alpha * self.p_d_dot_d)
    }

    pub fn insufficient(&self, alpha: f64) -> bool {
        self.decrease(alpha) <= 0.5 * alpha * self.d_norm_sq
    }

    /// Gradient at x - alpha d from the cached products:
    /// d - alpha Sigma d - lambda alpha P d.
    pub fn next_gradient(&self, d: &ParamVector, alpha: f64) -> ParamVector {
        d.add_scaled(&self.sigma_d, -alpha).add_scaled(&self.p_d, -self.lambda * alpha)
    }
}

/// An objective the solver can minimize: J, its gradient, and optionally a
/// quadratic line-search plan when J is quadratic in the parameters.
pub trait Objective {
    fn initial_point(&self, seed: u64) -> ParamVector;
    fn value(&self, x: &ParamVector) -> f64;
    fn gradient(&self, x: &ParamVector) -> ParamVector;
    fn quadratic_search(&self, _x: &ParamVector, _d: &ParamVector) -> Option<QuadraticSearch> {
        None
    }
}

/// The un-reduced training objective over (Sigma, c, s_Y).
pub struct FullObjective<'a> {
    pub sigma: &'a SparseSigma,
    pub layout: &'a ModelLayout,
}

impl Objective for FullObjective<'_> {
    fn initial_point(&self, seed: u64) -> ParamVector {
        ParamVector::init(self.layout, seed)
    }

    fn value(&self, x: &ParamVector) -> f64 {
        point_evaluate(self.sigma, self.layout, x)
    }

    fn gradient(&self, x: &ParamVector) -> ParamVector {
        if self.layout.kind.is_linear() && x.iter_values().all(|v| v == 0.0) {
            // grad J(0) = -c: no Sigma product needed.
            let mut g = ParamVector::zeros(self.layout);
            for (d, &j) in self.layout.direct_comps.iter().enumerate() {
                g.direct[d] = self.sigma.c[j].iter().map(|v| -v).collect();
            }
            return g;
        }
        gradient(self.sigma, self.layout, x)
    }

    fn quadratic_search(&self, x: &ParamVector, d: &ParamVector) -> Option<QuadraticSearch> {
        if !self.layout.kind.is_linear() {
            return None;
        }
        let st = linear_search_state(self.sigma, self.layout, x, d).ok()?;
        Some(QuadraticSearch {
            sigma_d: st.sigma_d,
            p_d: d.clone(),
            theta_sigma_d: st.theta_sigma_d,
            d_sigma_d: st.d_sigma_d,
            c_dot_d: st.c_dot_d,
            p_theta_dot_d: st.theta_dot_d,
            p_d_dot_d: st.d_norm_sq,
            d_norm_sq: st.d_norm_sq,
            lambda: self.layout.lambda,
        })
    }
}

/// Minimize an objective with BGD + Armijo backtracking + BB1 step seeding.
pub fn minimize(obj: &impl Objective, config: &SolverConfig) -> Result<TrainResult> {
    let mut x = obj.initial_point(config.seed);
    let mut j = obj.value(&x);
    let mut d = obj.gradient(&x);
    let mut alpha = config.alpha0;
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;

    for iter in 1..=config.max_iters {
        if !j.is_finite() || !d.is_finite() {
            return Err(Error::Diverged(format!("non-finite objective or gradient at iteration {iter}")));
        }
        if d.inf_norm() <= config.epsilon {
            stop = StopReason::Gradient;
            break;
        }
        iterations = iter;

        let plan = obj.quadratic_search(&x, &d);
        let mut backtracks = 0usize;
        let (x_new, j_new, d_new) = match plan {
            Some(q) => {
                while q.insufficient(alpha) {
                    alpha *= 0.5;
                    backtracks += 1;
                    if backtracks > MAX_BACKTRACKS {
                        return Err(Error::LineSearchStuck(backtracks));
                    }
                }
                let x_new = x.add_scaled(&d, -alpha);
                (x_new, j - q.decrease(alpha), q.next_gradient(&d, alpha))
            }
            None => {
                let d_norm_sq = d.norm_sq();
                let (x_new, j_new) = loop {
                    let cand = x.add_scaled(&d, -alpha);
                    let jc = obj.value(&cand);
                    if jc.is_finite() && jc < j - 0.5 * alpha * d_norm_sq {
                        break (cand, jc);
                    }
                    alpha *= 0.5;
                    backtracks += 1;
                    if backtracks > MAX_BACKTRACKS {
                        return Err(Error::LineSearchStuck(backtracks));
                    }
                };
                let d_new = obj.gradient(&x_new);
                (x_new, j_new, d_new)
            }
        };

        trace.push(TraceRow {
            iteration: iter,
            objective: j_new,
            grad_norm: d_new.dot(&d_new).sqrt(),
            alpha,
            backtracks,
        });

        // BB1 seed for the next step: <dx, dd> / <dd, dd> with dx = -alpha d.
        let mut num = 0.0;
        let mut den = 0.0;
        for (dn, dv) in d_new.iter_values().zip(d.iter_values()) {
            let dd = dn - dv;
            num += -alpha * dv * dd;
            den += dd * dd;
        }
        if den > f64::MIN_POSITIVE && (num / den).is_finite() {
            alpha = (num / den).clamp(BB_MIN, BB_MAX);
        }

        let rel_decrease = (j - j_new) / j.abs().max(1e-30);
        x = x_new;
        j = j_new;
        d = d_new;
        if rel_decrease.abs() <= config.epsilon {
            stop = StopReason::ObjectiveDecrease;
            break;
        }
    }
    if stop == StopReason::MaxIters && d.inf_norm() <= config.epsilon {
        stop = StopReason::Gradient;
    }

    Ok(TrainResult { theta: x, objective: j, iterations, stop, trace })
}

/// Train a model against its assembled sparse tensor.
pub fn train(
    sigma: &SparseSigma,
    layout: &ModelLayout,
    config: &SolverConfig,
) -> Result<TrainResult> {
    let obj = FullObjective { sigma, layout };
    let result = minimize(&obj, config)?;
    // Report J at the final point, recomputed once.
    let j = point_evaluate(sigma, layout, &result.theta);
    Ok(TrainResult { objective: j, ..result })
}
