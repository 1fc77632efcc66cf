//! Solving the assembled horizon problem and carrying its state forward.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sqp, SolveStatus, SolverSettings, WarmStart};
use crate::error::Result;
use crate::mpcc::{MpccProblem, StageLayout, NSTAGE};
use crate::vehicle_model::{ControlRate, VehicleState, NU, NX};

/// Per-solve statistics, logged alongside the plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub objective: f64,
    pub kkt: f64,
    pub violation: f64,
    pub iterations: usize,
    pub solve_time: f64,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    /// Predicted states `x_1 .. x_N`.
    pub states: Vec<VehicleState>,
    /// Planned inputs `u_0 .. u_{N-1}`.
    pub inputs: Vec<ControlRate>,
    pub objective: f64,
    pub kkt: f64,
    pub violation: f64,
    pub iterations: usize,
    /// Wall-clock solve time (s). The only field that is not reproducible.
    pub solve_time: f64,
    pub status: SolveStatus,
    pub merit_history: Vec<(f64, f64)>,
    /// Scaled primal-dual point and Hessian blocks for the next solve.
    pub warm: WarmStart,
}

impl HorizonSolution {
    pub fn stats(&self) -> SolveStats {
        SolveStats {
            objective: self.objective,
            kkt: self.kkt,
            violation: self.violation,
            iterations: self.iterations,
            solve_time: self.solve_time,
            status: self.status,
        }
    }

    /// The `i`-th planned input, holding the last one past the horizon.
    pub fn input_at(&self, i: usize) -> ControlRate {
        self.inputs[i.min(self.inputs.len() - 1)]
    }
}

fn shift_stagewise(v: &DVector<f64>, width: usize) -> DVector<f64> {
    let n = v.len() / width;
    let mut out = v.clone();
    if n >= 2 {
        out.rows_mut(0, (n - 1) * width)
            .copy_from(&v.rows(width, (n - 1) * width));
    }
    out
}

/// Shift multipliers and curvature one stage forward, keeping the tail.
fn shift_warm(prev: &WarmStart, layout: &StageLayout) -> Option<WarmStart> {
    let n = layout.horizon;
    if prev.y_eq.len() != layout.num_eq() || prev.y_in.len() != layout.num_ineq() || prev.hessian.len() != n {
        return None;
    }
    let h = &prev.hessian;
    let mut hessian: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    // the first element [u_0, x_1] takes the [u_1, x_2] part of the old second one
    hessian.push(h[1].view((NX, NX), (NU + NX, NU + NX)).into_owned());
    for k in 1..n {
        hessian.push(h[(k + 1).min(n - 1)].clone());
    }
    Some(WarmStart {
        z: DVector::zeros(0),
        y_eq: shift_stagewise(&prev.y_eq, NX),
        y_in: shift_stagewise(&prev.y_in, NSTAGE),
        hessian,
    })
}

/// Solve the horizon problem. The previous solution, if any, seeds the
/// multipliers and BFGS blocks; its primal part already entered the problem
/// through assembly.
pub fn solve(
    problem: &MpccProblem,
    settings: &SolverSettings,
    warm: Option<&HorizonSolution>,
) -> Result<HorizonSolution> {
    let shifted = warm.and_then(|w| shift_warm(&w.warm, &problem.layout));
    let sol = sqp(problem, problem.guess.clone(), settings, shifted.as_ref())?;
    let (states, inputs) = problem.trajectory(&sol.z);
    Ok(HorizonSolution {
        states,
        inputs,
        objective: sol.objective,
        kkt: sol.kkt,
        violation: sol.violation,
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        status: sol.status,
        merit_history: sol.merit_history,
        warm: WarmStart {
            z: sol.z,
            y_eq: sol.y_eq,
            y_in: sol.y_in,
            hessian: sol.hessian,
        },
    })
}
