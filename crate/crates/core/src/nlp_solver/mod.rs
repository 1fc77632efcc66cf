//! Sequential quadratic programming with block-wise damped BFGS.
//!
//! Problems are posed as
//!
//! ```text
//! min f(z)  s.t.  c_eq(z) = 0,  c_in(z) <= 0
//! ```
//!
//! with Lagrangian `L = f + y_eq' c_eq + y_in' c_in`, `y_in >= 0`.

pub mod bfgs;
mod horizon;
pub mod qp;
mod subproblem;

use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use bfgs::bfgs_update;
pub use horizon::{solve, HorizonSolution, SolveStats};
use subproblem::{
    element_gradients, eq_jacobian_product, jacobian_transpose_product, solve_subproblem, sparse_dot, Elastic,
};

/// One sparse constraint gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new(idx: Vec<usize>, val: Vec<f64>) -> Self {
        debug_assert_eq!(idx.len(), val.len());
        SparseRow { idx, val }
    }
}

/// Jacobian of multiple-shooting defects `c_k = x_{k+1} - F_k(x_k, u_k)`
/// with variables ordered stage by stage as `[u_k, x_{k+1}]` and `x_0` fixed.
/// `a[k] = dF_k/dx_k` (unused for `k = 0`), `b[k] = dF_k/du_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpJacobian {
    pub nx: usize,
    pub nu: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EqJacobian {
    Dense(DMatrix<f64>),
    Ocp(OcpJacobian),
}

/// Function values only, used by the line search.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub f: f64,
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

/// Values with first derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub grad: DVector<f64>,
    pub eq: DVector<f64>,
    pub eq_jac: EqJacobian,
    pub ineq: DVector<f64>,
    pub ineq_jac: Vec<SparseRow>,
    /// Elastic group of each inequality row. Rows without a group are never
    /// relaxed (simple bounds on the step variables).
    pub soft_group: Vec<Option<usize>>,
    /// Objective gradient split by Hessian element, each over the element's
    /// own range. Empty for single-element problems.
    pub element_grads: Vec<DVector<f64>>,
    /// Element owning each inequality row. Empty for single-element problems.
    pub ineq_element: Vec<usize>,
}

pub trait Nlp {
    fn num_vars(&self) -> usize;

    /// Contiguous variable ranges of the Hessian elements. Elements may
    /// overlap; the Hessian approximation is the sum of one quasi-Newton
    /// matrix per element. With more than one element the problem must
    /// report `element_grads`, `ineq_element` and an OCP defect Jacobian whose
    /// stage `k` belongs to element `k`.
    #[allow(clippy::single_range_in_vec_init)]
    fn hessian_blocks(&self) -> Vec<Range<usize>> {
        vec![0..self.num_vars()]
    }

    fn num_soft_groups(&self) -> usize {
        0
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<Evaluation>;

    /// Hessian of the Lagrangian `f + y_eq'c + y_in'g`, one matrix per
    /// element of [`Nlp::hessian_blocks`]. `None` selects BFGS.
    fn lagrangian_hessian(
        &self,
        _z: &DVector<f64>,
        _y_eq: &DVector<f64>,
        _y_in: &DVector<f64>,
    ) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    fn values(&self, z: &DVector<f64>) -> Result<Values> {
        let e = self.evaluate(z)?;
        Ok(Values {
            f: e.f,
            eq: e.eq,
            ineq: e.ineq,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearch {
    /// Sufficient-decrease coefficient.
    pub armijo: f64,
    /// Step contraction factor.
    pub backtrack: f64,
    pub min_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub constraint_tolerance: f64,
    pub initial_hessian_scale: f64,
    /// Smallest eigenvalue kept when an exact Hessian is convexified.
    pub hessian_floor: f64,
    pub line_search: LineSearch,
    /// Wall-clock cap per solve in seconds.
    pub time_budget: Option<f64>,
    /// Linear penalty on elastic slacks when the QP is infeasible.
    pub elastic_penalty: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 30,
            kkt_tolerance: 1e-4,
            constraint_tolerance: 1e-6,
            initial_hessian_scale: 1.0,
            hessian_floor: 1e-6,
            line_search: LineSearch::default(),
            time_budget: None,
            elastic_penalty: 1e3,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let ok = self.max_iterations >= 1
            && self.kkt_tolerance > 0.0
            && self.constraint_tolerance > 0.0
            && self.initial_hessian_scale > 0.0
            && self.hessian_floor > 0.0
            && self.elastic_penalty > 0.0
            && ls.armijo > 0.0
            && ls.armijo < 1.0
            && ls.backtrack > 0.0
            && ls.backtrack < 1.0
            && ls.min_step > 0.0
            && self.time_budget.is_none_or(|t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("solver settings out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    TimeOut,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::TimeOut => "time_out",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// Primal-dual point and curvature carried into the next solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
    pub hessian: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub z: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
    pub hessian: Vec<DMatrix<f64>>,
    pub objective: f64,
    pub kkt: f64,
    pub violation: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Merit before and after each accepted step, both at the penalty used
    /// for that step's line search.
    pub merit_history: Vec<(f64, f64)>,
    pub solve_time: f64,
}

fn max_violation(eq: &DVector<f64>, ineq: &DVector<f64>) -> f64 {
    let e = eq.amax();
    let i = ineq.iter().fold(0.0_f64, |m, &v| m.max(v));
    e.max(i)
}

fn l1_violation(eq: &DVector<f64>, ineq: &DVector<f64>) -> f64 {
    eq.iter().map(|v| v.abs()).sum::<f64>() + ineq.iter().map(|v| v.max(0.0)).sum::<f64>()
}

/// Scaled stationarity and complementarity.
fn kkt_residual(eval: &Evaluation, y_eq: &DVector<f64>, y_in: &DVector<f64>) -> f64 {
    let grad_l = &eval.grad + jacobian_transpose_product(eval, y_eq, y_in);
    let scale = eval.grad.amax().max(1.0);
    let stat = grad_l.amax() / scale;
    let comp = y_in
        .iter()
        .zip(eval.ineq.iter())
        .map(|(&l, &c)| (l * c).abs())
        .fold(0.0_f64, f64::max)
        / scale;
    stat.max(comp)
}

fn check_eval(e: &Evaluation) -> Result<()> {
    let finite = e.f.is_finite()
        && e.grad.iter().all(|v| v.is_finite())
        && e.eq.iter().all(|v| v.is_finite())
        && e.ineq.iter().all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::InvalidState("non-finite problem evaluation".into()))
    }
}

fn values_finite(v: &Values) -> bool {
    v.f.is_finite() && v.eq.iter().all(|x| x.is_finite()) && v.ineq.iter().all(|x| x.is_finite())
}

/// Lift eigenvalues below `floor` so each element is positive definite.
fn convexify(h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Step that re-solves the subproblem with the constraint values observed at
/// `z + d`, absorbing the second-order constraint error of the full step.
fn second_order_correction(
    eval: &Evaluation,
    at_trial: &Values,
    d: &DVector<f64>,
    hess: &[DMatrix<f64>],
    blocks: &[Range<usize>],
) -> Option<DVector<f64>> {
    let mut shifted = eval.clone();
    shifted.eq = &at_trial.eq - eq_jacobian_product(eval, d);
    for (i, row) in eval.ineq_jac.iter().enumerate() {
        shifted.ineq[i] = at_trial.ineq[i] - sparse_dot(row, d);
    }
    solve_subproblem(&shifted, hess, blocks, None).ok().map(|s| s.d)
}

/// Runs SQP from `z0`. A warm start overrides `z0` and supplies multipliers
/// and Hessian blocks when their dimensions match.
pub fn sqp<P: Nlp + ?Sized>(
    nlp: &P,
    z0: DVector<f64>,
    settings: &SolverSettings,
    warm: Option<&WarmStart>,
) -> Result<NlpSolution> {
    settings.validate()?;
    let start = Instant::now();
    let n = nlp.num_vars();
    let blocks = nlp.hessian_blocks();
    let fresh_hessian = || -> Vec<DMatrix<f64>> {
        blocks
            .iter()
            .map(|b| DMatrix::identity(b.len(), b.len()) * settings.initial_hessian_scale)
            .collect()
    };

    let mut z = z0;
    if z.len() != n {
        return Err(Error::InvalidParameter(format!("initial point has {} entries, expected {n}", z.len())));
    }
    let mut hess = fresh_hessian();
    let mut eval = nlp.evaluate(&z)?;
    check_eval(&eval)?;
    let mut y_eq = DVector::zeros(eval.eq.len());
    let mut y_in = DVector::zeros(eval.ineq.len());
    if let Some(w) = warm {
        if w.z.len() == n {
            let cand = nlp.evaluate(&w.z)?;
            if check_eval(&cand).is_ok() {
                z = w.z.clone();
                eval = cand;
            }
        }
        if w.y_eq.len() == y_eq.len() {
            y_eq = w.y_eq.clone();
        }
        if w.y_in.len() == y_in.len() {
            y_in = w.y_in.map(|v| v.max(0.0));
        }
        let dims_match = w.hessian.len() == blocks.len()
            && w.hessian.iter().zip(&blocks).all(|(h, b)| h.nrows() == b.len() && h.ncols() == b.len());
        if dims_match {
            hess = w.hessian.clone();
        }
    }

    let n_groups = nlp.num_soft_groups();
    let mut rho = 0.0_f64;
    let mut merit_history = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut failures = 0;

    loop {
        let kkt = kkt_residual(&eval, &y_eq, &y_in);
        let viol = max_violation(&eval.eq, &eval.ineq);
        if kkt <= settings.kkt_tolerance && viol <= settings.constraint_tolerance {
            status = SolveStatus::Converged;
            break;
        }
        if iterations >= settings.max_iterations {
            break;
        }
        if let Some(budget) = settings.time_budget {
            if start.elapsed().as_secs_f64() > budget {
                status = SolveStatus::TimeOut;
                break;
            }
        }

        let model = match nlp.lagrangian_hessian(&z, &y_eq, &y_in) {
            Some(exact) if exact.len() == blocks.len() && exact.iter().all(|h| h.iter().all(|v| v.is_finite())) => {
                exact.iter().map(|h| convexify(h, settings.hessian_floor)).collect()
            }
            _ => hess.clone(),
        };
        let step = match solve_subproblem(&eval, &model, &blocks, None) {
            Ok(s) => s,
            Err(_) if n_groups > 0 => {
                let el = Elastic {
                    penalty: settings.elastic_penalty,
                    groups: n_groups,
                };
                match solve_subproblem(&eval, &model, &blocks, Some(el)) {
                    Ok(s) => s,
                    Err(e) => {
                        log::debug!("elastic QP failed: {e:?}");
                        status = SolveStatus::Infeasible;
                        break;
                    }
                }
            }
            Err(e) => {
                log::debug!("QP failed: {e:?}");
                status = SolveStatus::Infeasible;
                break;
            }
        };
        iterations += 1;

        let d = &step.d;
        let y_max = step.y_eq.amax().max(step.y_in.amax());
        rho = rho.max(1.1 * y_max + 1e-6);

        let viol1 = l1_violation(&eval.eq, &eval.ineq);
        let lin_eq = &eval.eq + eq_jacobian_product(&eval, d);
        let lin_in = DVector::from_iterator(
            eval.ineq.len(),
            eval.ineq.iter().zip(&eval.ineq_jac).map(|(&c, row)| c + sparse_dot(row, d)),
        );
        let viol1_lin = l1_violation(&lin_eq, &lin_in);
        let slope = eval.grad.dot(d) + rho * (viol1_lin - viol1);
        let merit0 = eval.f + rho * viol1;

        let ls = &settings.line_search;
        let merit_of = |v: &Values| v.f + rho * l1_violation(&v.eq, &v.ineq);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= ls.min_step {
            let trial = &z + d * alpha;
            let vals = nlp.values(&trial).ok().filter(values_finite);
            if let Some(v) = &vals {
                let merit = merit_of(v);
                if merit <= merit0 + ls.armijo * alpha * slope.min(0.0) {
                    accepted = Some((trial, merit));
                    break;
                }
            }
            if alpha == 1.0 {
                // the full step can be rejected because of constraint
                // curvature alone; retry once with a corrected step
                let corrected = vals
                    .as_ref()
                    .and_then(|v| second_order_correction(&eval, v, d, &model, &blocks))
                    .map(|dc| &z + dc);
                if let Some(trial) = corrected {
                    if let Some(v) = nlp.values(&trial).ok().filter(values_finite) {
                        let merit = merit_of(&v);
                        if merit <= merit0 + ls.armijo * slope.min(0.0) {
                            accepted = Some((trial, merit));
                            break;
                        }
                    }
                }
            }
            alpha *= ls.backtrack;
        }

        let Some((z_new, merit_new)) = accepted else {
            failures += 1;
            log::debug!("line search failed at iteration {iterations}");
            if failures >= 2 {
                break;
            }
            hess = fresh_hessian();
            continue;
        };
        failures = 0;

        let eval_new = match nlp.evaluate(&z_new) {
            Ok(e) if check_eval(&e).is_ok() => e,
            _ => break,
        };
        merit_history.push((merit0, merit_new));

        let y_eq_new = if alpha == 1.0 {
            step.y_eq.clone()
        } else {
            &y_eq + (&step.y_eq - &y_eq) * alpha
        };
        let y_in_new = if alpha == 1.0 {
            step.y_in.clone()
        } else {
            &y_in + (&step.y_in - &y_in) * alpha
        };

        let g_old = element_gradients(&eval, &blocks, &y_eq_new, &y_in_new);
        let g_new = element_gradients(&eval_new, &blocks, &y_eq_new, &y_in_new);
        let s = &z_new - &z;
        for (((h, b), go), gn) in hess.iter_mut().zip(&blocks).zip(&g_old).zip(&g_new) {
            let sb = s.rows(b.start, b.len()).into_owned();
            bfgs_update(h, &sb, &(gn - go));
        }

        z = z_new;
        eval = eval_new;
        y_eq = y_eq_new;
        y_in = y_in_new;
    }

    let kkt = kkt_residual(&eval, &y_eq, &y_in);
    let violation = max_violation(&eval.eq, &eval.ineq);
    Ok(NlpSolution {
        z,
        y_eq,
        y_in,
        hessian: hess,
        objective: eval.f,
        kkt,
        violation,
        iterations,
        status,
        merit_history,
        solve_time: start.elapsed().as_secs_f64(),
    })
}
