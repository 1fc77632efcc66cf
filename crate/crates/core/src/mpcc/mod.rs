//! Contouring-control cost, prioritisation schedules and constraints.

mod problem;

pub use problem::{assemble, MpccProblem, StageLayout, NSTAGE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_geometry::{
    contouring_lag_errors, edge_distances, v2o_distance_cartesian, v2o_distance_frenet, Obstacle,
    ReferencePath, TrackSpec,
};
use crate::scalar::Scalar;
use crate::vehicle_model::{split_longitudinal_force, NU, NX};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpccWeights {
    pub q_con: f64,
    pub q_lag: f64,
    pub q_vel: f64,
    pub q_ddelta: f64,
    pub q_dfx: f64,
    pub q_lambda: f64,
    pub p_k_obs: f64,
    pub p_k_edge: f64,
    pub d_sft_obs: f64,
    pub d_sft_edge: f64,
}

impl Default for MpccWeights {
    fn default() -> Self {
        MpccWeights {
            q_con: 1.0,
            q_lag: 100.0,
            q_vel: 0.2,
            q_ddelta: 50.0,
            q_dfx: 1e-7,
            q_lambda: 5.0,
            p_k_obs: 200.0,
            p_k_edge: 200.0,
            d_sft_obs: 1.5,
            d_sft_edge: 0.5,
        }
    }
}

impl MpccWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.q_con,
            self.q_lag,
            self.q_vel,
            self.q_ddelta,
            self.q_dfx,
            self.q_lambda,
            self.p_k_obs,
            self.p_k_edge,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and non-negative".into()));
        }
        if !(self.d_sft_obs > 0.0 && self.d_sft_edge > 0.0) {
            return Err(Error::InvalidParameter("safety distances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "mpcc-ca")]
    MpccCa,
    #[serde(rename = "mpcc-no-ca")]
    MpccNoCa,
    #[serde(rename = "frenet-baseline")]
    FrenetBaseline,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::MpccCa, Mode::MpccNoCa, Mode::FrenetBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::MpccCa => "mpcc-ca",
            Mode::MpccNoCa => "mpcc-no-ca",
            Mode::FrenetBaseline => "frenet-baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Actuator limits. Force limits default to the values implied by the
/// default vehicle (braking at the friction bound, driving at 0.3 g).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    pub delta: [f64; 2],
    pub fx: [f64; 2],
    pub delta_dot: [f64; 2],
    pub fx_dot: [f64; 2],
    pub lambda_b: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        let (m, g, mu, sf) = (1830.0, 9.81, 1.0, 0.95);
        Bounds {
            delta: [-0.5, 0.5],
            fx: [-sf * mu * m * g, 0.3 * m * g],
            delta_dot: [-0.8, 0.8],
            fx_dot: [-60e3, 60e3],
            lambda_b: [0.0, 1.0],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [
            ("delta", self.delta),
            ("fx", self.fx),
            ("delta_dot", self.delta_dot),
            ("fx_dot", self.fx_dot),
            ("lambda_b", self.lambda_b),
        ] {
            if !(b[0] < b[1]) {
                return Err(Error::InvalidParameter(format!("bound {name}: min must be below max")));
            }
        }
        if self.lambda_b[0] < 0.0 || self.lambda_b[1] > 1.0 {
            return Err(Error::InvalidParameter("lambda_b bounds must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn clip_input(&self, u: [f64; NU]) -> [f64; NU] {
        [
            u[0].clamp(self.delta_dot[0], self.delta_dot[1]),
            u[1].clamp(self.fx_dot[0], self.fx_dot[1]),
            u[2].clamp(self.lambda_b[0], self.lambda_b[1]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpccConfig {
    pub horizon: usize,
    pub ts: f64,
    pub bounds: Bounds,
    pub sf: f64,
    pub weights: MpccWeights,
    pub mode: Mode,
}

impl Default for MpccConfig {
    fn default() -> Self {
        MpccConfig {
            horizon: 50,
            ts: 0.05,
            bounds: Bounds::default(),
            sf: 0.95,
            weights: MpccWeights::default(),
            mode: Mode::MpccCa,
        }
    }
}

impl MpccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidParameter("horizon must have at least 2 steps".into()));
        }
        if !(self.ts > 0.0) {
            return Err(Error::InvalidParameter("Ts must be positive".into()));
        }
        if !(self.sf > 0.0 && self.sf <= 1.0) {
            return Err(Error::InvalidParameter("sf must lie in (0, 1]".into()));
        }
        self.bounds.validate()?;
        self.weights.validate()
    }
}

/// Gaussian prioritisation weight. The schedule drops from `P_k e^-2` to 0
/// at `D = D_sft`, exactly as printed.
pub fn v2o_weight(d: f64, p_k: f64, d_sft: f64) -> f64 {
    if d < 0.0 {
        p_k
    } else if d <= d_sft {
        p_k * (-2.0 * d * d / (d_sft * d_sft)).exp()
    } else {
        0.0
    }
}

/// Step prioritisation used by the baseline.
pub fn step_weight(d: f64, p_k: f64, d_sft: f64) -> f64 {
    if d <= d_sft {
        p_k
    } else {
        0.0
    }
}

/// Brake share that loads the axles in proportion to their normal loads.
pub fn ideal_brake_repartition(fzf: f64, fzr: f64) -> f64 {
    fzf / (fzf + fzr)
}

/// `|Fx_axle| - sf mu Fz`, feasible when non-positive.
pub fn friction_constraint(fx_axle: f64, fz: f64, mu: f64, sf: f64) -> f64 {
    fx_axle.abs() - sf * mu * fz
}

/// Squared distance to the track centre at progress `theta` minus the squared
/// half width, feasible when non-positive.
pub fn track_constraint<T: Scalar>(x: T, y: T, theta: T, track: &TrackSpec) -> T {
    let (xc, yc, _, _) = track.centerline.lookup_generic(theta);
    let dx = x - xc;
    let dy = y - yc;
    dx * dx + dy * dy - (track.width / 2.0).powi(2)
}

/// Signed offset from the track centre at `theta`, positive to the left.
pub fn track_offset<T: Scalar>(x: T, y: T, theta: T, track: &TrackSpec) -> T {
    let (xc, yc, psic, _) = track.centerline.lookup_generic(theta);
    (y - yc) * psic.cos() - (x - xc) * psic.sin()
}

fn shortfall<T: Scalar>(d: T, d_sft: f64) -> T {
    if d.re() < d_sft {
        d - d_sft
    } else {
        T::cst(0.0)
    }
}

/// Fixed (per-solve) data needed to evaluate one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageContext<'a> {
    pub path: &'a ReferencePath,
    pub track: &'a TrackSpec,
    pub obstacles: &'a [Obstacle],
    pub weights: &'a MpccWeights,
    pub mode: Mode,
    pub r_veh: f64,
    pub lambda_ideal: f64,
    /// Obstacle weight per obstacle, frozen from the initial guess.
    pub q_obs: &'a [f64],
    /// Left and right edge weights, frozen from the initial guess.
    pub q_edge: [f64; 2],
    /// Baseline only: projection window on the desired path.
    pub frenet_window: (f64, f64),
    /// Baseline only: obstacle Frenet coordinates on the desired path.
    pub obstacle_frenet: &'a [(f64, f64)],
}

/// Obstacle clearances of a stage as seen by the active mode.
pub fn stage_obstacle_distances<T: Scalar>(x: &[T; NX], ctx: &StageContext) -> Vec<T> {
    match ctx.mode {
        Mode::FrenetBaseline => {
            let (s, d) = ctx
                .path
                .frenet_generic(x[0], x[1], ctx.frenet_window.0, ctx.frenet_window.1);
            ctx.obstacles
                .iter()
                .zip(ctx.obstacle_frenet)
                .map(|(o, &(so, dob))| v2o_distance_frenet(s, d, so, dob, o.r, ctx.r_veh))
                .collect()
        }
        _ => ctx
            .obstacles
            .iter()
            .map(|o| v2o_distance_cartesian(x[0], x[1], o, ctx.r_veh))
            .collect(),
    }
}

/// Left/right edge clearances at the stage's progress variable.
pub fn stage_edge_distances<T: Scalar>(x: &[T; NX], ctx: &StageContext) -> (T, T) {
    let d = track_offset(x[0], x[1], x[6], ctx.track);
    edge_distances(d, ctx.track.width, ctx.r_veh)
}

/// Weighted residuals `(q, e)` of a stage; the stage cost is `sum q e^2`.
pub fn stage_residuals<T: Scalar>(x: &[T; NX], u: &[T; NU], ctx: &StageContext) -> Vec<(f64, T)> {
    let w = ctx.weights;
    let speed = (x[3] * x[3] + x[4] * x[4]).sqrt();
    let mut res = Vec::with_capacity(8 + ctx.obstacles.len());
    match ctx.mode {
        Mode::FrenetBaseline => {
            let (_, d) = ctx
                .path
                .frenet_generic(x[0], x[1], ctx.frenet_window.0, ctx.frenet_window.1);
            res.push((w.q_con, d));
        }
        _ => {
            let (e_con, e_lag) = contouring_lag_errors(x[0], x[1], x[6], ctx.path);
            res.push((w.q_con, e_con));
            res.push((w.q_lag, e_lag));
        }
    }
    res.push((w.q_vel, speed - ctx.path.v_des()));
    res.push((w.q_ddelta, u[0]));
    res.push((w.q_dfx, u[1]));
    res.push((w.q_lambda, u[2] - ctx.lambda_ideal));

    if ctx.mode != Mode::MpccNoCa {
        for (dist, &q) in stage_obstacle_distances(x, ctx).into_iter().zip(ctx.q_obs) {
            if q > 0.0 {
                res.push((q, shortfall(dist, w.d_sft_obs)));
            }
        }
        let (dl, dr) = stage_edge_distances(x, ctx);
        for (dist, q) in [(dl, ctx.q_edge[0]), (dr, ctx.q_edge[1])] {
            if q > 0.0 {
                res.push((q, shortfall(dist, w.d_sft_edge)));
            }
        }
    }
    res
}

/// Stage cost on the input applied over the stage and the state it leads to.
pub fn stage_cost_generic<T: Scalar>(x: &[T; NX], u: &[T; NU], ctx: &StageContext) -> T {
    stage_residuals(x, u, ctx)
        .into_iter()
        .fold(T::cst(0.0), |acc, (q, e)| acc + e * e * q)
}

pub fn stage_cost(x: &[f64; NX], u: &[f64; NU], ctx: &StageContext) -> f64 {
    stage_cost_generic(x, u, ctx)
}

/// Schedule value for a clearance under the given mode.
pub fn schedule(mode: Mode, d: f64, p_k: f64, d_sft: f64) -> f64 {
    match mode {
        Mode::MpccCa => v2o_weight(d, p_k, d_sft),
        Mode::MpccNoCa => 0.0,
        Mode::FrenetBaseline => step_weight(d, p_k, d_sft),
    }
}

/// Stage inequality rows (all feasible when non-positive): four friction
/// rows, the track row, then bounds on delta and Fx (soft, state-dependent),
/// then bounds on the three inputs (hard).
pub fn stage_constraints_generic<T: Scalar>(
    x: &[T; NX],
    u: &[T; NU],
    fz: (f64, f64),
    mu: f64,
    lambda_d: f64,
    sf: f64,
    bounds: &Bounds,
    track: &TrackSpec,
) -> [T; NSTAGE] {
    let (fxf, fxr) = split_longitudinal_force(x[8], u[2], lambda_d);
    let (limf, limr) = (sf * mu * fz.0, sf * mu * fz.1);
    // force rows in kN
    [
        (fxf - limf) / 1e3,
        (-fxf - limf) / 1e3,
        (fxr - limr) / 1e3,
        (-fxr - limr) / 1e3,
        track_constraint(x[0], x[1], x[6], track),
        x[7] - bounds.delta[1],
        -x[7] + bounds.delta[0],
        (x[8] - bounds.fx[1]) / 1e3,
        (-x[8] + bounds.fx[0]) / 1e3,
        u[0] - bounds.delta_dot[1],
        -u[0] + bounds.delta_dot[0],
        (u[1] - bounds.fx_dot[1]) / 1e4,
        (-u[1] + bounds.fx_dot[0]) / 1e4,
        u[2] - bounds.lambda_b[1],
        -u[2] + bounds.lambda_b[0],
    ]
}

/// Number of stage rows that may be relaxed in elastic mode.
pub const NSOFT: usize = 9;
