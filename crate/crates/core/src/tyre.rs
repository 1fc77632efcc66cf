//! Fiala brush tyre with friction-circle derating.
//!
//! Lateral force per axle follows the classic brush cubic up to the sliding
//! angle and saturates beyond it. The saturation level is the part of the
//! friction circle left over by the commanded axle longitudinal force.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vehicle_model::{VehicleParams, VehicleState, LOW_SPEED_FLOOR};

/// Numerical slack (relative to `mu*Fz`) tolerated before an axle force is
/// reported as outside the friction circle.
pub const FRICTION_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TyreParams {
    /// Front axle cornering stiffness (N/rad).
    pub c_alpha_f: f64,
    /// Rear axle cornering stiffness (N/rad).
    pub c_alpha_r: f64,
    /// Friction coefficient, shared by both axles.
    pub mu: f64,
}

impl Default for TyreParams {
    fn default() -> Self {
        Self {
            c_alpha_f: 105_000.0,
            c_alpha_r: 120_000.0,
            mu: 1.0,
        }
    }
}

impl TyreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_alpha_f > 0.0 && self.c_alpha_r > 0.0) {
            return Err(Error::InvalidParameter(
                "cornering stiffness must be positive".into(),
            ));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidParameter("tyre mu must be positive".into()));
        }
        Ok(())
    }
}

/// Front and rear slip angles (rad) of the single-track model.
pub fn slip_angles(x: &VehicleState, p: &VehicleParams) -> Result<(f64, f64)> {
    if !(x.vx >= LOW_SPEED_FLOOR) {
        return Err(Error::InvalidState(format!(
            "vx = {} m/s is below the {} m/s floor",
            x.vx, LOW_SPEED_FLOOR
        )));
    }
    Ok(slip_angles_generic(x.vx, x.vy, x.r, x.delta, p))
}

pub fn slip_angles_generic<T: Scalar>(vx: T, vy: T, r: T, delta: T, p: &VehicleParams) -> (T, T) {
    let alpha_f = ((vy + r * p.lf) / vx).atan() - delta;
    let alpha_r = ((vy - r * p.lr) / vx).atan();
    (alpha_f, alpha_r)
}

/// Fraction of `mu*Fz` still available laterally once `fx_axle` is used
/// longitudinally.
pub fn derated_friction(fx_axle: f64, fz: f64, mu: f64) -> Result<f64> {
    let limit = mu * fz;
    let excess = fx_axle.abs() - limit;
    if excess > FRICTION_SLACK * limit {
        return Err(Error::FrictionViolation {
            fx: fx_axle,
            limit,
        });
    }
    let radicand = (limit * limit - fx_axle * fx_axle).max(0.0);
    Ok(radicand.sqrt() / limit)
}

/// Lateral force available at the friction circle edge, `eta*mu*Fz`, used
/// inside the optimiser. The radicand is floored so the derivative stays
/// finite while an infeasible iterate sits outside the circle.
pub fn available_lateral_force<T: Scalar>(fx_axle: T, fz: f64, mu: f64) -> T {
    let limit = mu * fz;
    let floor = (1e-3 * limit).powi(2);
    let radicand = (T::cst(limit * limit) - fx_axle * fx_axle).max_re(T::cst(floor));
    radicand.sqrt()
}

/// Fiala lateral force for an axle (checked entry point).
pub fn fiala_lateral_force(alpha: f64, fz: f64, fx_axle: f64, c_alpha: f64, mu: f64) -> Result<f64> {
    let eta = derated_friction(fx_axle, fz, mu)?;
    Ok(fiala_with_limit(alpha, eta * mu * fz, c_alpha))
}

/// Brush-model cubic with saturation at `f_max = eta*mu*Fz`.
pub fn fiala_with_limit<T: Scalar>(alpha: T, f_max: T, c_alpha: f64) -> T {
    let t = alpha.tan();
    let t_abs = t.abs();
    // tan of the sliding angle
    let t_sl = f_max * (3.0 / c_alpha);
    if t_abs.re() < t_sl.re() {
        let c = c_alpha;
        -(t * c) + t_abs * t * (c * c) / (f_max * 3.0) - t * t * t * (c * c * c) / (f_max * f_max * 27.0)
    } else if alpha.re() > 0.0 {
        -f_max
    } else if alpha.re() < 0.0 {
        f_max
    } else {
        T::cst(0.0)
    }
}
