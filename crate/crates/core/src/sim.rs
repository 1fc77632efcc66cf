//! Closed-loop plant and simulation loop.
//!
//! The plant shares the single-track structure of the prediction model but
//! integrates it with RK4 on a fine substep grid, routes steering and
//! longitudinal force through second-order actuators and may use different
//! parameters than the controller.

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpcc::{assemble, MpccConfig};
use crate::nlp_solver::{solve, HorizonSolution, SolveStats, SolveStatus, SolverSettings};
use crate::path_geometry::{contouring_lag_errors, v2e_distance, v2o_distance_cartesian, Obstacle, ReferencePath, TrackSpec};
use crate::tyre::TyreParams;
use crate::vehicle_model::{state_derivative, ControlRate, VehicleParams, VehicleState, NU, NX};

/// Sideslip beyond which a run is declared divergent (rad).
pub const MAX_SIDESLIP: f64 = std::f64::consts::FRAC_PI_4;

/// Solutions violating constraints by more than this are not applied.
const USABLE_VIOLATION: f64 = 1e-2;

/// Second-order low-pass `w^2 / (s^2 + 2 zeta w s + w^2)` with its own state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorModel {
    /// rad/s
    pub natural_frequency: f64,
    pub damping_ratio: f64,
    /// Output and its rate.
    #[serde(skip)]
    state: [f64; 2],
}

impl ActuatorModel {
    pub fn new(natural_frequency: f64, damping_ratio: f64) -> Self {
        Self {
            natural_frequency,
            damping_ratio,
            state: [0.0; 2],
        }
    }

    pub fn steering() -> Self {
        Self::new(25.0, 0.7)
    }

    pub fn force() -> Self {
        Self::new(15.0, 0.9)
    }

    pub fn validate(&self) -> Result<()> {
        if self.natural_frequency > 0.0 && self.damping_ratio > 0.0 && self.damping_ratio <= 2.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "actuator needs natural_frequency > 0 and 0 < damping_ratio <= 2, got {self:?}"
            )))
        }
    }

    /// Place the filter at rest on `value`.
    pub fn reset(&mut self, value: f64) {
        self.state = [value, 0.0];
    }

    pub fn output(&self) -> f64 {
        self.state[0]
    }

    /// Exact zero-order-hold transition over `dt`: returns `(Ad, Bd)`.
    fn discretise(&self, dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
        let w = self.natural_frequency;
        let z = self.damping_ratio;
        #[rustfmt::skip]
        let aug = Matrix3::new(
            0.0, 1.0, 0.0,
            -w * w, -2.0 * z * w, w * w,
            0.0, 0.0, 0.0,
        ) * dt;
        let e = aug.exp();
        (e.fixed_view::<2, 2>(0, 0).into_owned(), e.fixed_view::<2, 1>(0, 2).into_owned())
    }

    /// Advance the filter by `dt` towards `command` and return the output.
    pub fn actuator_step(&mut self, command: f64, dt: f64) -> f64 {
        let (ad, bd) = self.discretise(dt);
        let next = ad * Vector2::new(self.state[0], self.state[1]) + bd * command;
        self.state = [next[0], next[1]];
        self.state[0]
    }

    /// Advance by `steps` substeps of `dt`, the command ramping linearly from
    /// `from` to `to`. Returns the output after each substep.
    fn ramp(&mut self, from: f64, to: f64, dt: f64, steps: usize) -> Vec<f64> {
        let (ad, bd) = self.discretise(dt);
        (1..=steps)
            .map(|i| {
                let cmd = from + (to - from) * i as f64 / steps as f64;
                let next = ad * Vector2::new(self.state[0], self.state[1]) + bd * cmd;
                self.state = [next[0], next[1]];
                next[0]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub vehicle: VehicleParams,
    pub tyres: TyreParams,
    pub steering: ActuatorModel,
    pub force: ActuatorModel,
    /// Integration substeps per control period.
    pub substeps: usize,
}

impl PlantConfig {
    /// Plant matching the controller's model with the default actuators and
    /// `substeps` steps per period.
    pub fn matched(vehicle: &VehicleParams, tyres: &TyreParams, substeps: usize) -> Self {
        Self {
            vehicle: *vehicle,
            tyres: *tyres,
            steering: ActuatorModel::steering(),
            force: ActuatorModel::force(),
            substeps,
        }
    }

    /// Scaled copy of the controller's parameters.
    pub fn with_mismatch(
        vehicle: &VehicleParams,
        tyres: &TyreParams,
        mismatch: &Mismatch,
        substeps: usize,
    ) -> Self {
        let mut cfg = Self::matched(vehicle, tyres, substeps);
        cfg.vehicle.mu *= mismatch.mu_scale;
        cfg.tyres.mu *= mismatch.mu_scale;
        cfg.vehicle.m *= mismatch.mass_scale;
        cfg.vehicle.izz *= mismatch.inertia_scale;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.tyres.validate()?;
        self.steering.validate()?;
        self.force.validate()?;
        if self.substeps < 10 {
            return Err(Error::InvalidParameter(format!(
                "plant needs at least 10 substeps per period, got {}",
                self.substeps
            )));
        }
        Ok(())
    }
}

/// Plant-to-controller parameter ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mismatch {
    pub mu_scale: f64,
    pub mass_scale: f64,
    pub inertia_scale: f64,
}

impl Default for Mismatch {
    fn default() -> Self {
        Self {
            mu_scale: 0.95,
            mass_scale: 1.05,
            inertia_scale: 1.05,
        }
    }
}

impl Mismatch {
    pub fn none() -> Self {
        Self {
            mu_scale: 1.0,
            mass_scale: 1.0,
            inertia_scale: 1.0,
        }
    }
}

/// Physical plant state plus the controller-side integrators of the
/// commanded steering angle and force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    /// `delta` and `fx` hold the achieved actuator outputs.
    pub vehicle: VehicleState,
    pub delta_cmd: f64,
    pub fx_cmd: f64,
    pub steering: ActuatorModel,
    pub force: ActuatorModel,
}

impl PlantState {
    /// Plant at rest on `x`, actuators settled on its steering angle and force.
    pub fn new(x: &VehicleState, cfg: &PlantConfig) -> Self {
        let mut steering = cfg.steering;
        let mut force = cfg.force;
        steering.reset(x.delta);
        force.reset(x.fx);
        Self {
            vehicle: *x,
            delta_cmd: x.delta,
            fx_cmd: x.fx,
            steering,
            force,
        }
    }

    /// State handed to the controller: measured motion, commanded actuators.
    pub fn measurement(&self) -> VehicleState {
        VehicleState {
            delta: self.delta_cmd,
            fx: self.fx_cmd,
            ..self.vehicle
        }
    }
}

fn rk4(x: &[f64; NX], u: &[f64; NU], p: &VehicleParams, tyres: &TyreParams, h: f64) -> [f64; NX] {
    let add = |a: &[f64; NX], k: &[f64; NX], c: f64| -> [f64; NX] { std::array::from_fn(|i| a[i] + c * k[i]) };
    let k1 = state_derivative(x, u, p, tyres);
    let k2 = state_derivative(&add(x, &k1, 0.5 * h), u, p, tyres);
    let k3 = state_derivative(&add(x, &k2, 0.5 * h), u, p, tyres);
    let k4 = state_derivative(&add(x, &k3, h), u, p, tyres);
    std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Apply one controller output over `ts`. The commanded angle and force ramp
/// at the commanded rates; the actuators track the ramps and their outputs
/// are held over each RK4 substep.
pub fn closed_loop_step(plant: &PlantState, u: &ControlRate, cfg: &PlantConfig, ts: f64) -> Result<PlantState> {
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter("Ts must be positive".into()));
    }
    if !u.to_array().iter().all(|v| v.is_finite()) || !plant.vehicle.is_finite() {
        return Err(Error::InvalidState("non-finite plant state or input".into()));
    }
    let n = cfg.substeps.max(1);
    let h = ts / n as f64;
    let mut next = *plant;
    next.delta_cmd = plant.delta_cmd + u.delta_dot * ts;
    next.fx_cmd = plant.fx_cmd + u.fx_dot * ts;
    let deltas = next.steering.ramp(plant.delta_cmd, next.delta_cmd, h, n);
    let forces = next.force.ramp(plant.fx_cmd, next.fx_cmd, h, n);

    let mut x = plant.vehicle.to_array();
    let input = [0.0, 0.0, u.lambda_b];
    let (mut d_prev, mut f_prev) = (plant.steering.output(), plant.force.output());
    for i in 0..n {
        if x[3] < crate::vehicle_model::LOW_SPEED_FLOOR {
            return Err(Error::InvalidState(format!("plant vx = {:.3} m/s fell below the floor", x[3])));
        }
        // actuator outputs held at their substep mean
        x[7] = 0.5 * (d_prev + deltas[i]);
        x[8] = 0.5 * (f_prev + forces[i]);
        x = rk4(&x, &input, &cfg.vehicle, &cfg.tyres, h);
        d_prev = deltas[i];
        f_prev = forces[i];
    }
    x[7] = d_prev;
    x[8] = f_prev;
    next.vehicle = VehicleState::from_array(&x);
    if !next.vehicle.is_finite() {
        return Err(Error::InvalidState("plant state became non-finite".into()));
    }
    Ok(next)
}

/// Closed-loop problem definition as seen by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<'a> {
    pub path: &'a ReferencePath,
    pub track: &'a TrackSpec,
    pub obstacles: &'a [Obstacle],
    pub initial: VehicleState,
    /// The run ends once the vehicle has travelled this far (m).
    pub end_arc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controller<'a> {
    pub mpcc: &'a MpccConfig,
    pub vehicle: &'a VehicleParams,
    pub tyres: &'a TyreParams,
    pub solver: &'a SolverSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: f64,
    pub state: VehicleState,
    /// Rates chosen by the controller (after clipping).
    pub command: ControlRate,
    pub delta_cmd: f64,
    pub fx_cmd: f64,
    pub e_con: f64,
    pub e_lag: f64,
    pub d_v2o: Vec<f64>,
    /// `(left, right)`
    pub d_v2e: (f64, f64),
    /// Sideslip (rad).
    pub beta: f64,
    pub ax: f64,
    pub ay: f64,
    /// `None` for the terminal record, which has no solve.
    pub solver: Option<SolveStats>,
    /// The applied input came from the previous plan.
    pub fallback: bool,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Diverged(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub ts: f64,
    pub records: Vec<LogRecord>,
    pub outcome: Outcome,
}

impl SimLog {
    pub fn diverged(&self) -> bool {
        matches!(self.outcome, Outcome::Diverged(_))
    }

    pub fn solve_times(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.solver.as_ref().map(|s| s.solve_time)).collect()
    }
}

fn record(
    time: f64,
    plant: &PlantState,
    prev: &VehicleState,
    ts: f64,
    scene: &Scene,
    r_veh: f64,
) -> Result<LogRecord> {
    let x = plant.vehicle;
    let (e_con, e_lag) = contouring_lag_errors(x.x, x.y, x.theta, scene.path);
    let d_v2o = scene
        .obstacles
        .iter()
        .map(|o| v2o_distance_cartesian(x.x, x.y, o, r_veh))
        .collect();
    let d_v2e = v2e_distance(x.x, x.y, scene.track, r_veh)?;
    // body-frame accelerations from the velocity change over the last period
    let (ax, ay) = if time > 0.0 {
        (
            (x.vx - prev.vx) / ts - x.r * x.vy,
            (x.vy - prev.vy) / ts + x.r * x.vx,
        )
    } else {
        (0.0, 0.0)
    };
    Ok(LogRecord {
        time,
        state: x,
        command: ControlRate::default(),
        delta_cmd: plant.delta_cmd,
        fx_cmd: plant.fx_cmd,
        e_con,
        e_lag,
        d_v2o,
        d_v2e,
        beta: x.sideslip(),
        ax,
        ay,
        solver: None,
        fallback: false,
        clipped: false,
    })
}

fn divergence(rec: &LogRecord, track: &TrackSpec) -> Option<String> {
    if rec.beta.abs() > MAX_SIDESLIP {
        return Some(format!("sideslip {:.1} deg at t = {:.2} s", rec.beta.to_degrees(), rec.time));
    }
    // offset from the track centre recovered from the edge clearances
    let offset = 0.5 * (rec.d_v2e.1 - rec.d_v2e.0);
    if offset.abs() > 2.0 * track.width {
        return Some(format!("left the track by {:.1} m at t = {:.2} s", offset.abs(), rec.time));
    }
    None
}

fn usable(sol: &HorizonSolution) -> bool {
    sol.status != SolveStatus::Infeasible
        && sol.violation <= USABLE_VIOLATION
        && sol.inputs.iter().all(|u| u.to_array().iter().all(|v| v.is_finite()))
}

/// Run the receding-horizon loop until the vehicle has covered
/// `scene.end_arc`, the path no longer covers the horizon, or the plant
/// diverges. Configuration errors are returned as `Err`; divergence is
/// reported in the log.
pub fn run_scenario(scene: &Scene, ctrl: &Controller, plant_cfg: &PlantConfig) -> Result<SimLog> {
    ctrl.mpcc.validate()?;
    ctrl.solver.validate()?;
    plant_cfg.validate()?;
    let ts = ctrl.mpcc.ts;
    let r_veh = ctrl.vehicle.r_veh;
    let bounds = ctrl.mpcc.bounds;

    let mut plant = PlantState::new(&scene.initial, plant_cfg);
    let mut records = Vec::new();
    let mut warm: Option<HorizonSolution> = None;
    // last usable plan and the number of periods since it was computed
    let mut plan: Option<(HorizonSolution, usize)> = None;
    let mut prev_state = plant.vehicle;
    let mut outcome = Outcome::Completed;
    let mut step = 0usize;

    loop {
        let time = step as f64 * ts;
        let mut rec = record(time, &plant, &prev_state, ts, scene, r_veh)?;
        if let Some(reason) = divergence(&rec, scene.track) {
            records.push(rec);
            outcome = Outcome::Diverged(reason);
            break;
        }
        if plant.vehicle.theta >= scene.end_arc {
            records.push(rec);
            break;
        }

        let x0 = plant.measurement();
        let problem = match assemble(&x0, scene.path, scene.obstacles, scene.track, ctrl.mpcc, ctrl.vehicle, ctrl.tyres, warm.as_ref()) {
            Ok(p) => p,
            Err(Error::PathTooShort { .. }) => {
                records.push(rec);
                break;
            }
            Err(e @ (Error::InvalidState(_) | Error::InfeasibleInitialState(_))) => {
                records.push(rec);
                outcome = Outcome::Diverged(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let sol = solve(&problem, ctrl.solver, warm.as_ref())?;
        rec.solver = Some(sol.stats());

        let raw = if usable(&sol) {
            let u = sol.inputs[0];
            plan = Some((sol.clone(), 0));
            warm = Some(sol);
            u
        } else {
            log::debug!("step {step}: solver returned {:?}, using the previous plan", sol.status);
            rec.fallback = true;
            warm = None;
            match plan.as_mut() {
                Some((p, age)) => {
                    *age += 1;
                    p.input_at(*age)
                }
                None => ControlRate {
                    delta_dot: 0.0,
                    fx_dot: 0.0,
                    lambda_b: problem.lambda_ideal(),
                },
            }
        };
        let mut u = bounds.clip_input(raw.to_array());
        // keep the integrated commands inside their boxes
        for (j, (cmd, bx)) in [(plant.delta_cmd, bounds.delta), (plant.fx_cmd, bounds.fx)].into_iter().enumerate() {
            let next = cmd + u[j] * ts;
            if next < bx[0] || next > bx[1] {
                u[j] = (next.clamp(bx[0], bx[1]) - cmd) / ts;
            }
        }
        let applied = ControlRate::from_array(&u);
        rec.clipped = applied != raw;
        if rec.clipped {
            log::debug!("step {step}: input clipped from {raw:?} to {applied:?}");
        }
        rec.command = applied;
        records.push(rec);

        prev_state = plant.vehicle;
        plant = match closed_loop_step(&plant, &applied, plant_cfg, ts) {
            Ok(p) => p,
            Err(e) => {
                outcome = Outcome::Diverged(e.to_string());
                break;
            }
        };
        step += 1;
    }
    Ok(SimLog { ts, records, outcome })
}
