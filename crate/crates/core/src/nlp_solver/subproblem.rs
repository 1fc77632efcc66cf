//! Assembly of the SQP quadratic subproblem.
//!
//! Two routes share the same interface. The dense route hands every variable
//! and constraint to the QP solver. The condensed route applies when the
//! equality constraints are multiple-shooting dynamics defects: the state
//! steps are eliminated through the linearised dynamics, the QP is solved in
//! the input steps only, and the defect multipliers are recovered by a
//! backward recursion.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::qp::{Qp, QpError};
use super::{EqJacobian, Evaluation, OcpJacobian, SparseRow};

pub(crate) struct QpStep {
    pub d: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
}

/// Elastic-mode settings: one slack per soft group, penalised linearly with
/// weight `penalty` plus a small quadratic term to keep the QP strictly convex.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Elastic {
    pub penalty: f64,
    pub groups: usize,
}

fn block_diag_mul(hess: &[DMatrix<f64>], blocks: &[Range<usize>], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for (h, b) in hess.iter().zip(blocks) {
        let seg = h * v.rows(b.start, b.len());
        let mut dst = out.rows_mut(b.start, b.len());
        dst += &seg;
    }
    out
}

/// `J_eq' y_eq + J_in' y_in`.
pub(crate) fn jacobian_transpose_product(
    eval: &Evaluation,
    y_eq: &DVector<f64>,
    y_in: &DVector<f64>,
) -> DVector<f64> {
    let n = eval.grad.len();
    let mut out = match &eval.eq_jac {
        EqJacobian::Dense(j) => {
            if j.nrows() == 0 {
                DVector::zeros(n)
            } else {
                j.transpose() * y_eq
            }
        }
        EqJacobian::Ocp(ocp) => ocp.transpose_product(y_eq, n),
    };
    for (row, &lam) in eval.ineq_jac.iter().zip(y_in.iter()) {
        if lam != 0.0 {
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                out[i] += lam * v;
            }
        }
    }
    out
}

/// `J_eq d`.
pub(crate) fn eq_jacobian_product(eval: &Evaluation, d: &DVector<f64>) -> DVector<f64> {
    match &eval.eq_jac {
        EqJacobian::Dense(j) => {
            if j.nrows() == 0 {
                DVector::zeros(0)
            } else {
                j * d
            }
        }
        EqJacobian::Ocp(ocp) => ocp.product(d),
    }
}

pub(crate) fn sparse_dot(row: &SparseRow, d: &DVector<f64>) -> f64 {
    row.idx.iter().zip(&row.val).map(|(&i, &v)| v * d[i]).sum()
}

impl OcpJacobian {
    fn stage_len(&self) -> usize {
        self.nu + self.nx
    }
    pub(crate) fn u_index(&self, k: usize) -> usize {
        k * self.stage_len()
    }
    pub(crate) fn x_index(&self, k: usize) -> usize {
        // x_{k+1} sits after u_k in stage k
        k * self.stage_len() + self.nu
    }

    fn transpose_product(&self, y: &DVector<f64>, n: usize) -> DVector<f64> {
        let (nx, nu) = (self.nx, self.nu);
        let mut out = DVector::zeros(n);
        for k in 0..self.stages() {
            let nu_k = y.rows(k * nx, nx);
            let xi = self.x_index(k);
            let mut seg = out.rows_mut(xi, nx);
            seg += &nu_k;
            let bu = self.b[k].transpose() * nu_k;
            let ui = self.u_index(k);
            let mut useg = out.rows_mut(ui, nu);
            useg -= &bu;
            if k > 0 {
                let ax = self.a[k].transpose() * nu_k;
                let xp = self.x_index(k - 1);
                let mut xseg = out.rows_mut(xp, nx);
                xseg -= &ax;
            }
        }
        out
    }

    fn product(&self, d: &DVector<f64>) -> DVector<f64> {
        let nx = self.nx;
        let mut out = DVector::zeros(self.stages() * nx);
        for k in 0..self.stages() {
            let mut v: DVector<f64> = d.rows(self.x_index(k), nx).into_owned();
            v -= &self.b[k] * d.rows(self.u_index(k), self.nu);
            if k > 0 {
                v -= &self.a[k] * d.rows(self.x_index(k - 1), nx);
            }
            out.rows_mut(k * nx, nx).copy_from(&v);
        }
        out
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// Gradient of each element's share of the Lagrangian over its own range.
pub(crate) fn element_gradients(
    eval: &Evaluation,
    blocks: &[Range<usize>],
    y_eq: &DVector<f64>,
    y_in: &DVector<f64>,
) -> Vec<DVector<f64>> {
    if blocks.len() == 1 || eval.element_grads.is_empty() {
        let full = &eval.grad + jacobian_transpose_product(eval, y_eq, y_in);
        return blocks.iter().map(|b| full.rows(b.start, b.len()).into_owned()).collect();
    }
    let mut out = eval.element_grads.clone();
    for (r, row) in eval.ineq_jac.iter().enumerate() {
        let lam = y_in[r];
        if lam != 0.0 {
            let e = eval.ineq_element[r];
            let start = blocks[e].start;
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                out[e][i - start] += lam * v;
            }
        }
    }
    if let EqJacobian::Ocp(ocp) = &eval.eq_jac {
        let nx = ocp.nx;
        for k in 0..ocp.stages() {
            let start = blocks[k].start;
            let nu_k = y_eq.rows(k * nx, nx);
            let g = &mut out[k];
            let xi = ocp.x_index(k) - start;
            let mut seg = g.rows_mut(xi, nx);
            seg += &nu_k;
            let ui = ocp.u_index(k) - start;
            let bu = ocp.b[k].transpose() * nu_k;
            let mut useg = g.rows_mut(ui, ocp.nu);
            useg -= &bu;
            if k > 0 {
                let xp = ocp.x_index(k - 1) - start;
                let ax = ocp.a[k].transpose() * nu_k;
                let mut xseg = g.rows_mut(xp, nx);
                xseg -= &ax;
            }
        }
    }
    out
}

pub(crate) fn solve_subproblem(
    eval: &Evaluation,
    hess: &[DMatrix<f64>],
    blocks: &[Range<usize>],
    elastic: Option<Elastic>,
) -> Result<QpStep, QpError> {
    match &eval.eq_jac {
        EqJacobian::Dense(j) => solve_dense(eval, j, hess, blocks, elastic),
        EqJacobian::Ocp(ocp) => solve_condensed(eval, ocp, hess, blocks, elastic),
    }
}

/// `(H, g, A_in, b_in, A_eq)` of a QP.
type ElasticQp = (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>);

/// Append elastic slack columns/rows to an inequality system written in the
/// reduced variables. Returns the augmented `(H, g, A_in, b_in, A_eq)`.
fn add_elastic(
    h: DMatrix<f64>,
    g: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
    a_eq: DMatrix<f64>,
    soft: &[Option<usize>],
    el: Elastic,
) -> ElasticQp {
    let n = g.len();
    let ng = el.groups;
    let m = b_in.len();
    let mut h2 = DMatrix::zeros(n + ng, n + ng);
    h2.view_mut((0, 0), (n, n)).copy_from(&h);
    let scale = (h.diagonal().max() + 1.0).max(1.0);
    for k in 0..ng {
        h2[(n + k, n + k)] = 1e-6 * scale;
    }
    let mut g2 = DVector::zeros(n + ng);
    g2.rows_mut(0, n).copy_from(&g);
    g2.rows_mut(n, ng).fill(el.penalty);
    let mut a2 = DMatrix::zeros(m + ng, n + ng);
    a2.view_mut((0, 0), (m, n)).copy_from(&a_in);
    let mut b2 = DVector::zeros(m + ng);
    b2.rows_mut(0, m).copy_from(&b_in);
    for (r, grp) in soft.iter().enumerate() {
        if let Some(k) = grp {
            a2[(r, n + k)] = -1.0;
        }
    }
    for k in 0..ng {
        a2[(m + k, n + k)] = -1.0;
    }
    let mut ae2 = DMatrix::zeros(a_eq.nrows(), n + ng);
    if a_eq.nrows() > 0 {
        ae2.view_mut((0, 0), (a_eq.nrows(), n)).copy_from(&a_eq);
    }
    (h2, g2, a2, b2, ae2)
}

fn solve_dense(
    eval: &Evaluation,
    jeq: &DMatrix<f64>,
    hess: &[DMatrix<f64>],
    blocks: &[Range<usize>],
    elastic: Option<Elastic>,
) -> Result<QpStep, QpError> {
    let n = eval.grad.len();
    let mut h = DMatrix::zeros(n, n);
    for (hb, b) in hess.iter().zip(blocks) {
        let mut dst = h.view_mut((b.start, b.start), (b.len(), b.len()));
        dst += hb;
    }
    let m = eval.ineq.len();
    let mut a_in = DMatrix::zeros(m, n);
    for (r, row) in eval.ineq_jac.iter().enumerate() {
        for (&i, &v) in row.idx.iter().zip(&row.val) {
            a_in[(r, i)] += v;
        }
    }
    let b_in = -&eval.ineq;
    let a_eq = if jeq.nrows() == 0 {
        DMatrix::zeros(0, n)
    } else {
        jeq.clone()
    };
    let b_eq = -&eval.eq;
    let g = eval.grad.clone();

    let (h, g, a_in, b_in, a_eq) = match elastic {
        Some(el) => add_elastic(h, g, a_in, b_in, a_eq, &eval.soft_group, el),
        None => (h, g, a_in, b_in, a_eq),
    };
    let sol = Qp {
        h: &h,
        g: &g,
        a_eq: &a_eq,
        b_eq: &b_eq,
        a_in: &a_in,
        b_in: &b_in,
    }
    .solve()?;
    Ok(QpStep {
        d: sol.x.rows(0, n).into_owned(),
        y_eq: sol.y_eq,
        y_in: sol.y_in.rows(0, m).into_owned(),
    })
}

/// Affine map `d = T du + t` from input steps to all steps.
struct Condensed {
    /// State sensitivities, `(N*nx) x (N*nu)`, block lower triangular.
    g: DMatrix<f64>,
    /// State offsets from the defects, `N*nx`.
    h: DVector<f64>,
}

enum VarRef {
    Input(usize),
    State(usize),
}

fn var_ref(ocp: &OcpJacobian, i: usize) -> (VarRef, usize) {
    let sl = ocp.stage_len();
    let (k, off) = (i / sl, i % sl);
    if off < ocp.nu {
        (VarRef::Input(k * ocp.nu + off), (k + 1) * ocp.nu)
    } else {
        (VarRef::State(k * ocp.nx + off - ocp.nu), (k + 1) * ocp.nu)
    }
}

fn solve_condensed(
    eval: &Evaluation,
    ocp: &OcpJacobian,
    hess: &[DMatrix<f64>],
    blocks: &[Range<usize>],
    elastic: Option<Elastic>,
) -> Result<QpStep, QpError> {
    let (nx, nu, ns) = (ocp.nx, ocp.nu, ocp.stages());
    let n = eval.grad.len();
    let m = ns * nu;

    let mut cond = Condensed {
        g: DMatrix::zeros(ns * nx, m),
        h: DVector::zeros(ns * nx),
    };
    for k in 0..ns {
        let defect = eval.eq.rows(k * nx, nx);
        if k == 0 {
            cond.g.view_mut((0, 0), (nx, nu)).copy_from(&ocp.b[0]);
            cond.h.rows_mut(0, nx).copy_from(&(-defect));
        } else {
            let prev = cond.g.view(((k - 1) * nx, 0), (nx, k * nu)).into_owned();
            let prop = &ocp.a[k] * prev;
            cond.g.view_mut((k * nx, 0), (nx, k * nu)).copy_from(&prop);
            cond.g.view_mut((k * nx, k * nu), (nx, nu)).copy_from(&ocp.b[k]);
            let hp = &ocp.a[k] * cond.h.rows((k - 1) * nx, nx) - defect;
            cond.h.rows_mut(k * nx, nx).copy_from(&hp);
        }
    }

    // reduced Hessian and gradient
    let mut hr = DMatrix::zeros(m, m);
    let mut gr = DVector::zeros(m);
    for (hb, b) in hess.iter().zip(blocks) {
        let width = b.clone().map(|i| var_ref(ocp, i).1).max().unwrap_or(0);
        let mut tb = DMatrix::zeros(b.len(), width);
        let mut tv = DVector::zeros(b.len());
        for (r, i) in b.clone().enumerate() {
            match var_ref(ocp, i).0 {
                VarRef::Input(c) => tb[(r, c)] = 1.0,
                VarRef::State(row) => {
                    tb.row_mut(r).copy_from(&cond.g.view((row, 0), (1, width)));
                    tv[r] = cond.h[row];
                }
            }
        }
        let ht = hb * &tb;
        let mut hv = hr.view_mut((0, 0), (width, width));
        hv.gemm_tr(1.0, &tb, &ht, 1.0);
        let lin = hb * &tv;
        let mut gv = gr.rows_mut(0, width);
        gv.gemv_tr(1.0, &tb, &lin, 1.0);
    }
    // the objective gradient enters once even where elements overlap
    for k in 0..ns {
        let mut gu = gr.rows_mut(k * nu, nu);
        gu += eval.grad.rows(ocp.u_index(k), nu);
        let gx = eval.grad.rows(ocp.x_index(k), nx);
        let mut gv = gr.rows_mut(0, (k + 1) * nu);
        gv.gemv_tr(1.0, &cond.g.view((k * nx, 0), (nx, (k + 1) * nu)), &gx, 1.0);
    }
    // symmetrise round-off
    let hr = (&hr + hr.transpose()) * 0.5;

    let mi = eval.ineq.len();
    let mut a_in = DMatrix::zeros(mi, m);
    let mut b_in = -&eval.ineq;
    for (r, row) in eval.ineq_jac.iter().enumerate() {
        for (&i, &v) in row.idx.iter().zip(&row.val) {
            match var_ref(ocp, i) {
                (VarRef::Input(c), _) => a_in[(r, c)] += v,
                (VarRef::State(srow), width) => {
                    for c in 0..width {
                        a_in[(r, c)] += v * cond.g[(srow, c)];
                    }
                    b_in[r] -= v * cond.h[srow];
                }
            }
        }
    }

    let a_eq = DMatrix::zeros(0, m);
    let b_eq = DVector::zeros(0);
    let (hq, gq, aq, bq, aeq) = match elastic {
        Some(el) => add_elastic(hr, gr, a_in, b_in, a_eq, &eval.soft_group, el),
        None => (hr, gr, a_in, b_in, a_eq),
    };
    let sol = Qp {
        h: &hq,
        g: &gq,
        a_eq: &aeq,
        b_eq: &b_eq,
        a_in: &aq,
        b_in: &bq,
    }
    .solve()?;
    let du = sol.x.rows(0, m);

    let dx = &cond.g * du + &cond.h;
    let mut d = DVector::zeros(n);
    for k in 0..ns {
        d.rows_mut(ocp.u_index(k), nu).copy_from(&du.rows(k * nu, nu));
        d.rows_mut(ocp.x_index(k), nx).copy_from(&dx.rows(k * nx, nx));
    }
    let y_in = sol.y_in.rows(0, mi).into_owned();

    // defect multipliers from stationarity in the state steps
    let mut w = block_diag_mul(hess, blocks, &d) + &eval.grad;
    for (row, &lam) in eval.ineq_jac.iter().zip(y_in.iter()) {
        if lam != 0.0 {
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                w[i] += lam * v;
            }
        }
    }
    let mut y_eq = DVector::zeros(ns * nx);
    for k in (0..ns).rev() {
        let mut nu_k: DVector<f64> = -w.rows(ocp.x_index(k), nx).into_owned();
        if k + 1 < ns {
            nu_k += ocp.a[k + 1].transpose() * y_eq.rows((k + 1) * nx, nx);
        }
        y_eq.rows_mut(k * nx, nx).copy_from(&nu_k);
    }

    Ok(QpStep {
        d,
        y_eq,
        y_in,
    })
}
