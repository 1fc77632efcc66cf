//! Multiple-shooting transcription of the horizon problem.
//!
//! Stage `k` owns the variables `[u_k, x_{k+1}]`; `x_0` is a fixed parameter.
//! The optimiser works on scaled variables `z = v / scale` so that steering,
//! force and position steps have comparable magnitudes. Dynamics defects are
//! scaled by the state scales, which keeps the defect Jacobian with respect
//! to `x_{k+1}` an identity block.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::{
    ideal_brake_repartition, schedule, stage_constraints_generic, stage_cost_generic,
    stage_edge_distances, stage_obstacle_distances, MpccConfig, Mode, StageContext, NSOFT,
};
use crate::error::{Error, Result};
use crate::nlp_solver::{EqJacobian, Evaluation, HorizonSolution, Nlp, OcpJacobian, SparseRow, Values};
use crate::path_geometry::{Obstacle, ReferencePath, TrackSpec};
use crate::scalar::{Dual, Scalar};
use crate::tyre::{TyreParams, FRICTION_SLACK};
use crate::vehicle_model::{
    rk2_generic, split_longitudinal_force, static_axle_loads, ControlRate, VehicleParams, VehicleState,
    LOW_SPEED_FLOOR, NU, NX,
};

/// Inequality rows per stage.
pub const NSTAGE: usize = 15;
const NZ: usize = NU + NX;

pub const X_SCALE: [f64; NX] = [1.0, 1.0, 0.1, 1.0, 0.1, 0.1, 1.0, 0.05, 1e3];
pub const U_SCALE: [f64; NU] = [0.1, 1e4, 0.1];

/// Index arithmetic for the stage-wise variable layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLayout {
    pub horizon: usize,
}

impl StageLayout {
    pub fn num_vars(&self) -> usize {
        self.horizon * NZ
    }
    pub fn num_eq(&self) -> usize {
        self.horizon * NX
    }
    pub fn num_ineq(&self) -> usize {
        self.horizon * NSTAGE
    }
    /// First index of `u_k`.
    pub fn u(&self, k: usize) -> usize {
        k * NZ
    }
    /// First index of `x_{k+1}`.
    pub fn x(&self, k: usize) -> usize {
        k * NZ + NU
    }
    /// Hessian elements, one per stage: `[u_0, x_1]`, then `[x_k, u_k, x_{k+1}]`.
    /// Each holds the stage cost, the stage inequality rows and the defect of
    /// the step from `x_k` to `x_{k+1}`.
    pub fn hessian_blocks(&self) -> Vec<Range<usize>> {
        (0..self.horizon).map(|k| self.element(k)).collect()
    }

    pub fn element(&self, k: usize) -> Range<usize> {
        if k == 0 {
            0..NZ
        } else {
            self.x(k - 1)..self.x(k) + NX
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpccProblem {
    pub x0: VehicleState,
    pub path: ReferencePath,
    pub track: TrackSpec,
    pub obstacles: Vec<Obstacle>,
    pub cfg: MpccConfig,
    pub vehicle: VehicleParams,
    pub tyres: TyreParams,
    pub layout: StageLayout,
    /// Scaled initial guess.
    pub guess: DVector<f64>,
    lambda_ideal: f64,
    fz: (f64, f64),
    q_obs: Vec<Vec<f64>>,
    q_edge: Vec<[f64; 2]>,
    windows: Vec<(f64, f64)>,
    obstacle_frenet: Vec<(f64, f64)>,
}

fn scaled(v: f64, s: f64) -> f64 {
    v / s
}

/// Initial guess in physical units: shifted warm start or a forward rollout
/// with zero rates.
fn initial_trajectory(
    x0: &VehicleState,
    cfg: &MpccConfig,
    vehicle: &VehicleParams,
    tyres: &TyreParams,
    lambda_ideal: f64,
    warm: Option<&HorizonSolution>,
) -> (Vec<[f64; NX]>, Vec<[f64; NU]>) {
    let n = cfg.horizon;
    let roll = |x: &[f64; NX], u: &[f64; NU]| rk2_generic(x, u, vehicle, tyres, cfg.ts);
    if let Some(w) = warm.filter(|w| w.states.len() == n && w.inputs.len() == n) {
        let mut us: Vec<[f64; NU]> = w.inputs[1..].iter().map(|u| cfg.bounds.clip_input(u.to_array())).collect();
        us.push(*us.last().unwrap_or(&[0.0, 0.0, lambda_ideal]));
        let mut xs: Vec<[f64; NX]> = w.states[1..].iter().map(|x| x.to_array()).collect();
        let tail = roll(&w.states[n - 1].to_array(), &us[n - 1]);
        xs.push(tail);
        (xs, us)
    } else {
        let u = cfg.bounds.clip_input([0.0, 0.0, lambda_ideal]);
        let mut xs = Vec::with_capacity(n);
        let mut x = x0.to_array();
        for _ in 0..n {
            x = roll(&x, &u);
            xs.push(x);
        }
        (xs, vec![u; n])
    }
}

/// Build the horizon problem around the measured state `x0`.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    x0: &VehicleState,
    path: &ReferencePath,
    obstacles: &[Obstacle],
    track: &TrackSpec,
    cfg: &MpccConfig,
    vehicle: &VehicleParams,
    tyres: &TyreParams,
    warm: Option<&HorizonSolution>,
) -> Result<MpccProblem> {
    cfg.validate()?;
    vehicle.validate()?;
    tyres.validate()?;
    if !x0.is_finite() {
        return Err(Error::InvalidState("non-finite initial state".into()));
    }
    if x0.vx < LOW_SPEED_FLOOR {
        return Err(Error::InvalidState(format!(
            "vx = {:.3} m/s is below the {LOW_SPEED_FLOOR} m/s floor",
            x0.vx
        )));
    }
    let fz = static_axle_loads(vehicle);
    let lambda_ideal = ideal_brake_repartition(fz.0, fz.1);
    let (fxf, fxr) = split_longitudinal_force(x0.fx, lambda_ideal, vehicle.lambda_d);
    for (f, z) in [(fxf, fz.0), (fxr, fz.1)] {
        if f.abs() > tyres.mu * z * (1.0 + FRICTION_SLACK) {
            return Err(Error::InfeasibleInitialState(format!(
                "axle force {f:.1} N exceeds the friction limit {:.1} N",
                tyres.mu * z
            )));
        }
    }
    let reach = cfg.horizon as f64 * cfg.ts * x0.speed().max(path.v_des()) * 1.1;
    let needed = x0.theta.max(0.0) + reach;
    let available = path.total_length().min(track.centerline.total_length());
    if available < needed {
        return Err(Error::PathTooShort { needed, available });
    }

    let layout = StageLayout { horizon: cfg.horizon };
    let (xs, us) = initial_trajectory(x0, cfg, vehicle, tyres, lambda_ideal, warm);

    let mut problem = MpccProblem {
        x0: *x0,
        path: path.clone(),
        track: track.clone(),
        obstacles: obstacles.to_vec(),
        cfg: *cfg,
        vehicle: *vehicle,
        tyres: *tyres,
        layout,
        guess: DVector::zeros(layout.num_vars()),
        lambda_ideal,
        fz,
        q_obs: vec![vec![0.0; obstacles.len()]; cfg.horizon],
        q_edge: vec![[0.0; 2]; cfg.horizon],
        windows: vec![(0.0, path.total_length()); cfg.horizon],
        obstacle_frenet: Vec::new(),
    };

    if cfg.mode == Mode::FrenetBaseline {
        problem.obstacle_frenet = obstacles
            .iter()
            .map(|o| path.project(o.x, o.y).map(|p| (p.s, p.d)))
            .collect::<Result<_>>()?;
        for (k, x) in xs.iter().enumerate() {
            let p = path.project_in_window(x[0], x[1], x[6] - 15.0, x[6] + 15.0);
            problem.windows[k] = (p.s - 5.0, p.s + 5.0);
        }
    }

    let w = cfg.weights;
    for (k, x) in xs.iter().enumerate() {
        let ctx = problem.context(k);
        let d_obs = stage_obstacle_distances(x, &ctx);
        let (dl, dr) = stage_edge_distances(x, &ctx);
        problem.q_obs[k] = d_obs
            .iter()
            .map(|&d| schedule(cfg.mode, d, w.p_k_obs, w.d_sft_obs))
            .collect();
        problem.q_edge[k] = [
            schedule(cfg.mode, dl, w.p_k_edge, w.d_sft_edge),
            schedule(cfg.mode, dr, w.p_k_edge, w.d_sft_edge),
        ];
    }

    for k in 0..cfg.horizon {
        for j in 0..NU {
            problem.guess[layout.u(k) + j] = scaled(us[k][j], U_SCALE[j]);
        }
        for j in 0..NX {
            problem.guess[layout.x(k) + j] = scaled(xs[k][j], X_SCALE[j]);
        }
    }
    Ok(problem)
}

impl MpccProblem {
    pub fn lambda_ideal(&self) -> f64 {
        self.lambda_ideal
    }

    /// Per-stage obstacle weights frozen for this solve.
    pub fn obstacle_weights(&self) -> &[Vec<f64>] {
        &self.q_obs
    }

    pub fn edge_weights(&self) -> &[[f64; 2]] {
        &self.q_edge
    }

    pub fn context(&self, k: usize) -> StageContext<'_> {
        StageContext {
            path: &self.path,
            track: &self.track,
            obstacles: &self.obstacles,
            weights: &self.cfg.weights,
            mode: self.cfg.mode,
            r_veh: self.vehicle.r_veh,
            lambda_ideal: self.lambda_ideal,
            q_obs: &self.q_obs[k],
            q_edge: self.q_edge[k],
            frenet_window: self.windows[k],
            obstacle_frenet: &self.obstacle_frenet,
        }
    }

    /// Physical state `x_{k+1}` from a scaled vector.
    pub fn state(&self, z: &DVector<f64>, k: usize) -> [f64; NX] {
        let b = self.layout.x(k);
        std::array::from_fn(|j| z[b + j] * X_SCALE[j])
    }

    /// Physical input `u_k` from a scaled vector.
    pub fn input(&self, z: &DVector<f64>, k: usize) -> [f64; NU] {
        let b = self.layout.u(k);
        std::array::from_fn(|j| z[b + j] * U_SCALE[j])
    }

    fn prev_state(&self, z: &DVector<f64>, k: usize) -> [f64; NX] {
        if k == 0 {
            self.x0.to_array()
        } else {
            self.state(z, k - 1)
        }
    }

    pub fn trajectory(&self, z: &DVector<f64>) -> (Vec<VehicleState>, Vec<ControlRate>) {
        let n = self.layout.horizon;
        let xs = (0..n).map(|k| VehicleState::from_array(&self.state(z, k))).collect();
        let us = (0..n).map(|k| ControlRate::from_array(&self.input(z, k))).collect();
        (xs, us)
    }

    fn stage_rows<T: Scalar>(&self, x: &[T; NX], u: &[T; NU]) -> [T; NSTAGE] {
        stage_constraints_generic(
            x,
            u,
            self.fz,
            self.tyres.mu,
            self.vehicle.lambda_d,
            self.cfg.sf,
            &self.cfg.bounds,
            &self.track,
        )
    }

    /// Objective and constraint values in physical units at a scaled point.
    pub fn evaluate_values(&self, z: &DVector<f64>) -> Values {
        let n = self.layout.horizon;
        let mut f = 0.0;
        let mut eq = DVector::zeros(self.layout.num_eq());
        let mut ineq = DVector::zeros(self.layout.num_ineq());
        for k in 0..n {
            let xp = self.prev_state(z, k);
            let u = self.input(z, k);
            let x = self.state(z, k);
            let next = rk2_generic(&xp, &u, &self.vehicle, &self.tyres, self.cfg.ts);
            for j in 0..NX {
                eq[k * NX + j] = (x[j] - next[j]) / X_SCALE[j];
            }
            f += stage_cost_generic(&x, &u, &self.context(k));
            let rows = self.stage_rows(&x, &u);
            ineq.rows_mut(k * NSTAGE, NSTAGE).copy_from_slice(&rows);
        }
        Values { f, eq, ineq }
    }
}

fn stage_duals(u: &[f64; NU], x: &[f64; NX]) -> ([Dual<NZ>; NU], [Dual<NZ>; NX]) {
    (
        std::array::from_fn(|j| Dual::var(u[j], j)),
        std::array::from_fn(|j| Dual::var(x[j], NU + j)),
    )
}

/// Derivative of a stage quantity with respect to the scaled stage variables.
fn stage_scale(j: usize) -> f64 {
    if j < NU {
        U_SCALE[j]
    } else {
        X_SCALE[j - NU]
    }
}

impl Nlp for MpccProblem {
    fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }

    fn hessian_blocks(&self) -> Vec<Range<usize>> {
        self.layout.hessian_blocks()
    }

    fn num_soft_groups(&self) -> usize {
        self.layout.horizon
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<Evaluation> {
        let n = self.layout.horizon;
        let nv = self.layout.num_vars();
        let mut f = 0.0;
        let mut grad = DVector::zeros(nv);
        let mut eq = DVector::zeros(self.layout.num_eq());
        let mut ineq = DVector::zeros(self.layout.num_ineq());
        let mut ineq_jac = Vec::with_capacity(self.layout.num_ineq());
        let mut soft_group = Vec::with_capacity(self.layout.num_ineq());
        let mut ineq_element = Vec::with_capacity(self.layout.num_ineq());
        let mut element_grads = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);

        for k in 0..n {
            let xp = self.prev_state(z, k);
            let u = self.input(z, k);
            let x = self.state(z, k);

            // dynamics, differentiated with respect to (x_k, u_k)
            let xd: [Dual<NZ>; NX] = std::array::from_fn(|j| Dual::var(xp[j], j));
            let ud: [Dual<NZ>; NU] = std::array::from_fn(|j| Dual::var(u[j], NX + j));
            let next = rk2_generic(&xd, &ud, &self.vehicle, &self.tyres, self.cfg.ts);
            let mut ak = DMatrix::zeros(NX, NX);
            let mut bk = DMatrix::zeros(NX, NU);
            for i in 0..NX {
                eq[k * NX + i] = (x[i] - next[i].v) / X_SCALE[i];
                for j in 0..NX {
                    ak[(i, j)] = next[i].g[j] * X_SCALE[j] / X_SCALE[i];
                }
                for j in 0..NU {
                    bk[(i, j)] = next[i].g[NX + j] * U_SCALE[j] / X_SCALE[i];
                }
            }
            a.push(ak);
            b.push(bk);

            // cost and inequality rows, differentiated with respect to [u_k, x_{k+1}]
            let base = self.layout.u(k);
            let (ud, xd) = stage_duals(&u, &x);
            let offset = base - self.layout.element(k).start;
            let ne = self.layout.element(k).len();
            let c = stage_cost_generic(&xd, &ud, &self.context(k));
            f += c.v;
            let mut eg = DVector::zeros(ne);
            for j in 0..NZ {
                grad[base + j] += c.g[j] * stage_scale(j);
                eg[offset + j] = c.g[j] * stage_scale(j);
            }
            element_grads.push(eg);
            let rows = self.stage_rows(&xd, &ud);
            for (r, row) in rows.iter().enumerate() {
                ineq[k * NSTAGE + r] = row.v;
                let (idx, val): (Vec<usize>, Vec<f64>) = (0..NZ)
                    .filter(|&j| row.g[j] != 0.0)
                    .map(|j| (base + j, row.g[j] * stage_scale(j)))
                    .unzip();
                ineq_jac.push(SparseRow::new(idx, val));
                soft_group.push((r < NSOFT).then_some(k));
                ineq_element.push(k);
            }
        }

        Ok(Evaluation {
            f,
            grad,
            eq,
            eq_jac: EqJacobian::Ocp(OcpJacobian { nx: NX, nu: NU, a, b }),
            ineq,
            ineq_jac,
            soft_group,
            element_grads,
            ineq_element,
        })
    }

    fn values(&self, z: &DVector<f64>) -> Result<Values> {
        Ok(self.evaluate_values(z))
    }

    fn lagrangian_hessian(
        &self,
        z: &DVector<f64>,
        y_eq: &DVector<f64>,
        y_in: &DVector<f64>,
    ) -> Option<Vec<DMatrix<f64>>> {
        let n = self.layout.horizon;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let ne = self.layout.element(k).len();
            let mut h = DMatrix::zeros(ne, ne);

            // defect k: nu'(x_{k+1} - F(x_k, u_k)), over scaled [x_k, u_k]
            let nu = y_eq.rows(k * NX, NX);
            let xp = self.prev_state(z, k);
            let u = self.input(z, k);
            let dyn_scale = |j: usize| if j < NX { X_SCALE[j] } else { U_SCALE[j - NX] };
            let w0: [f64; NZ] = std::array::from_fn(|j| if j < NX { xp[j] } else { u[j - NX] } / dyn_scale(j));
            let dyn_grad = |w: &[f64; NZ]| -> [f64; NZ] {
                let xd: [Dual<NZ>; NX] = std::array::from_fn(|j| Dual::var(w[j] * X_SCALE[j], j));
                let ud: [Dual<NZ>; NU] = std::array::from_fn(|j| Dual::var(w[NX + j] * U_SCALE[j], NX + j));
                let next = rk2_generic(&xd, &ud, &self.vehicle, &self.tyres, self.cfg.ts);
                let mut g = [0.0; NZ];
                for i in 0..NX {
                    let c = -nu[i] / X_SCALE[i];
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += c * next[i].g[j] * dyn_scale(j);
                    }
                }
                g
            };
            let hd = fd_hessian(&w0, dyn_grad);
            if k == 0 {
                // x_0 is fixed; only the input block enters element 0
                let mut v = h.view_mut((0, 0), (NU, NU));
                v += hd.view((NX, NX), (NU, NU));
            } else {
                let mut v = h.view_mut((0, 0), (NZ, NZ));
                v += &hd;
            }

            // stage cost and rows over scaled [u_k, x_{k+1}]
            let x = self.state(z, k);
            let lam = y_in.rows(k * NSTAGE, NSTAGE);
            let ctx = self.context(k);
            let w0: [f64; NZ] = std::array::from_fn(|j| if j < NU { u[j] } else { x[j - NU] } / stage_scale(j));
            let stage_grad = |w: &[f64; NZ]| -> [f64; NZ] {
                let ud: [Dual<NZ>; NU] = std::array::from_fn(|j| Dual::var(w[j] * U_SCALE[j], j));
                let xd: [Dual<NZ>; NX] = std::array::from_fn(|j| Dual::var(w[NU + j] * X_SCALE[j], NU + j));
                let mut l = stage_cost_generic(&xd, &ud, &ctx);
                for (r, row) in self.stage_rows(&xd, &ud).iter().enumerate() {
                    if lam[r] != 0.0 {
                        l = l + *row * lam[r];
                    }
                }
                std::array::from_fn(|j| l.g[j] * stage_scale(j))
            };
            let hs = fd_hessian(&w0, stage_grad);
            let offset = self.layout.u(k) - self.layout.element(k).start;
            let mut v = h.view_mut((offset, offset), (NZ, NZ));
            v += &hs;
            out.push(h);
        }
        Some(out)
    }
}

/// Symmetrised forward difference of an exact gradient.
fn fd_hessian(w0: &[f64; NZ], grad: impl Fn(&[f64; NZ]) -> [f64; NZ]) -> DMatrix<f64> {
    let g0 = grad(w0);
    let mut h = DMatrix::zeros(NZ, NZ);
    for j in 0..NZ {
        let step = 1e-6 * w0[j].abs().max(1.0);
        let mut w = *w0;
        w[j] += step;
        let g = grad(&w);
        for i in 0..NZ {
            h[(i, j)] = (g[i] - g0[i]) / step;
        }
    }
    (&h + h.transpose()) * 0.5
}
