//! Nonlinear single-track prediction model.
//!
//! State `[X, Y, psi, vx, vy, r, theta, delta, Fx]`, input
//! `[delta_dot, Fx_dot, lambda_b]`. Steering angle and total longitudinal
//! force are integrated inputs; `theta` is the distance travelled by the
//! centre of gravity. Lateral tyre forces come from [`crate::tyre`], axle
//! longitudinal forces from [`split_longitudinal_force`]. Axle loads are
//! static.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tyre::{self, TyreParams};

pub const NX: usize = 9;
pub const NU: usize = 3;

/// Slip angles divide by `vx`; the model is not defined below this speed (m/s).
pub const LOW_SPEED_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass (kg).
    pub m: f64,
    /// Yaw inertia (kg m^2).
    pub izz: f64,
    /// CoG to front axle (m).
    pub lf: f64,
    /// CoG to rear axle (m).
    pub lr: f64,
    /// Lumped drag coefficient, `F_drag = c_drag * vx^2` (N s^2/m^2).
    pub c_drag: f64,
    /// Share of positive `Fx` sent to the front axle.
    pub lambda_d: f64,
    pub g: f64,
    pub mu: f64,
    /// Bounding-circle radius of the vehicle (m).
    pub r_veh: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            m: 1830.0,
            izz: 3287.0,
            lf: 1.40,
            lr: 1.55,
            c_drag: 0.38,
            lambda_d: 0.0,
            g: 9.81,
            mu: 1.0,
            r_veh: 1.2,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.m > 0.0, "m must be positive"),
            (self.izz > 0.0, "izz must be positive"),
            (self.lf > 0.0, "lf must be positive"),
            (self.lr > 0.0, "lr must be positive"),
            ((0.0..=1.0).contains(&self.lambda_d), "lambda_d must lie in [0, 1]"),
            (self.mu > 0.0, "mu must be positive"),
            (self.r_veh > 0.0, "r_veh must be positive"),
            (self.c_drag >= 0.0, "c_drag must be non-negative"),
            (self.g > 0.0, "g must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidParameter(msg.into()));
            }
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading (rad).
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    /// Yaw rate (rad/s).
    pub r: f64,
    /// Travelled distance (m).
    pub theta: f64,
    /// Road-wheel steering angle (rad).
    pub delta: f64,
    /// Total longitudinal force at the CoG (N).
    pub fx: f64,
}

impl VehicleState {
    pub fn to_array(&self) -> [f64; NX] {
        [
            self.x, self.y, self.psi, self.vx, self.vy, self.r, self.theta, self.delta, self.fx,
        ]
    }

    pub fn from_array(a: &[f64; NX]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            psi: a[2],
            vx: a[3],
            vy: a[4],
            r: a[5],
            theta: a[6],
            delta: a[7],
            fx: a[8],
        }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Sideslip angle `atan(vy/vx)` (rad).
    pub fn sideslip(&self) -> f64 {
        (self.vy / self.vx).atan()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlRate {
    /// Steering rate (rad/s).
    pub delta_dot: f64,
    /// Longitudinal force rate (N/s).
    pub fx_dot: f64,
    /// Front share of braking force.
    pub lambda_b: f64,
}

impl ControlRate {
    pub fn to_array(&self) -> [f64; NU] {
        [self.delta_dot, self.fx_dot, self.lambda_b]
    }

    pub fn from_array(a: &[f64; NU]) -> Self {
        Self {
            delta_dot: a[0],
            fx_dot: a[1],
            lambda_b: a[2],
        }
    }
}

/// Split the total force into front/rear axle forces. Braking uses the brake
/// repartition, driving the drive split, so the axles never drive and brake
/// at the same time.
pub fn split_longitudinal_force<T: Scalar>(fx: T, lambda_b: T, lambda_d: f64) -> (T, T) {
    if fx.re() <= 0.0 {
        (lambda_b * fx, (T::cst(1.0) - lambda_b) * fx)
    } else {
        (fx * lambda_d, fx * (1.0 - lambda_d))
    }
}

/// Static front/rear normal loads (N).
pub fn static_axle_loads(p: &VehicleParams) -> (f64, f64) {
    let l = p.lf + p.lr;
    let w = p.m * p.g;
    (w * p.lr / l, w * p.lf / l)
}

/// Time derivative of the full 9-element state. Inputs are not validated;
/// use [`dynamics`] for the checked entry point.
pub fn state_derivative<T: Scalar>(
    x: &[T; NX],
    u: &[T; NU],
    p: &VehicleParams,
    tyres: &TyreParams,
) -> [T; NX] {
    let [_, _, psi, vx, vy, r, _, delta, fx] = *x;
    let [delta_dot, fx_dot, lambda_b] = *u;

    let (fzf, fzr) = static_axle_loads(p);
    let (fxf, fxr) = split_longitudinal_force(fx, lambda_b, p.lambda_d);
    let (alpha_f, alpha_r) = tyre::slip_angles_generic(vx, vy, r, delta, p);
    let fyf = tyre::fiala_with_limit(
        alpha_f,
        tyre::available_lateral_force(fxf, fzf, tyres.mu),
        tyres.c_alpha_f,
    );
    let fyr = tyre::fiala_with_limit(
        alpha_r,
        tyre::available_lateral_force(fxr, fzr, tyres.mu),
        tyres.c_alpha_r,
    );

    let (sp, cp) = (psi.sin(), psi.cos());
    let (sd, cd) = (delta.sin(), delta.cos());
    let drag = vx * vx * p.c_drag;

    [
        vx * cp - vy * sp,
        vx * sp + vy * cp,
        r,
        (-(fyf * sd) + fxf * cd + fxr - drag) / p.m + r * vy,
        (fyf * cd + fxf * sd + fyr) / p.m - r * vx,
        ((fyf * cd + fxf * sd) * p.lf - fyr * p.lr) / p.izz,
        (vx * vx + vy * vy).sqrt(),
        delta_dot,
        fx_dot,
    ]
}

fn check_inputs(x: &VehicleState, u: &ControlRate) -> Result<()> {
    if !x.is_finite() || !u.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidState("non-finite state or input".into()));
    }
    if x.vx < LOW_SPEED_FLOOR {
        return Err(Error::InvalidState(format!(
            "vx = {:.3} m/s is below the {} m/s floor",
            x.vx, LOW_SPEED_FLOOR
        )));
    }
    Ok(())
}

/// Checked state derivative.
pub fn dynamics(
    x: &VehicleState,
    u: &ControlRate,
    p: &VehicleParams,
    tyres: &TyreParams,
) -> Result<[f64; NX]> {
    check_inputs(x, u)?;
    Ok(state_derivative(&x.to_array(), &u.to_array(), p, tyres))
}

/// One explicit midpoint step of `x' = f(x)`.
pub fn midpoint_step<T: Scalar, const N: usize>(x: &[T; N], ts: f64, f: impl Fn(&[T; N]) -> [T; N]) -> [T; N] {
    let k1 = f(x);
    let mut mid = *x;
    for i in 0..N {
        mid[i] = x[i] + k1[i] * (0.5 * ts);
    }
    let k2 = f(&mid);
    let mut next = *x;
    for i in 0..N {
        next[i] = x[i] + k2[i] * ts;
    }
    next
}

/// Explicit midpoint step with zero-order-hold input.
pub fn rk2_generic<T: Scalar>(
    x: &[T; NX],
    u: &[T; NU],
    p: &VehicleParams,
    tyres: &TyreParams,
    ts: f64,
) -> [T; NX] {
    midpoint_step(x, ts, |s| state_derivative(s, u, p, tyres))
}

pub fn rk2_step(
    x: &VehicleState,
    u: &ControlRate,
    p: &VehicleParams,
    tyres: &TyreParams,
    ts: f64,
) -> Result<VehicleState> {
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter("Ts must be positive".into()));
    }
    check_inputs(x, u)?;
    let k1 = state_derivative(&x.to_array(), &u.to_array(), p, tyres);
    let mut mid = x.to_array();
    for (m, k) in mid.iter_mut().zip(k1) {
        *m += 0.5 * ts * k;
    }
    check_inputs(&VehicleState::from_array(&mid), u)?;
    Ok(VehicleState::from_array(&rk2_generic(
        &x.to_array(),
        &u.to_array(),
        p,
        tyres,
        ts,
    )))
}
