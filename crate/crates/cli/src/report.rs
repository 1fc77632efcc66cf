//! CSV and JSON artefacts. Nothing here depends on wall-clock time except the
//! optional timing block.

use std::fmt::Write;

use mpcc_core::scenarios::Metrics;
use mpcc_core::sim::{Outcome, SimLog};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

const LOG_COLUMNS: [&str; 29] = [
    "time",
    "x",
    "y",
    "psi",
    "vx",
    "vy",
    "r",
    "theta",
    "delta",
    "fx",
    "delta_cmd",
    "fx_cmd",
    "delta_dot",
    "fx_dot",
    "lambda_b",
    "e_con",
    "e_lag",
    "beta_deg",
    "ax",
    "ay",
    "d_v2e_left",
    "d_v2e_right",
    "status",
    "iterations",
    "objective",
    "kkt",
    "violation",
    "fallback",
    "clipped",
];

/// Shortest round-trip form, switching to exponent notation for very small or
/// very large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if !v.is_finite() || (1e-4..1e9).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn log_header(n_obstacles: usize) -> String {
    let mut cols: Vec<String> = LOG_COLUMNS[..22].iter().map(|s| s.to_string()).collect();
    cols.extend((1..=n_obstacles).map(|i| format!("d_v2o_{i}")));
    cols.extend(LOG_COLUMNS[22..].iter().map(|s| s.to_string()));
    cols.join(",")
}

pub fn log_csv(log: &SimLog, n_obstacles: usize) -> String {
    let mut out = log_header(n_obstacles);
    out.push('\n');
    for r in &log.records {
        let s = &r.state;
        let mut row: Vec<String> = [
            r.time,
            s.x,
            s.y,
            s.psi,
            s.vx,
            s.vy,
            s.r,
            s.theta,
            s.delta,
            s.fx,
            r.delta_cmd,
            r.fx_cmd,
            r.command.delta_dot,
            r.command.fx_dot,
            r.command.lambda_b,
            r.e_con,
            r.e_lag,
            r.beta.to_degrees(),
            r.ax,
            r.ay,
            r.d_v2e.0,
            r.d_v2e.1,
        ]
        .iter()
        .map(|&v| num(v))
        .collect();
        row.extend(r.d_v2o.iter().map(|&v| num(v)));
        match &r.solver {
            Some(st) => {
                row.push(st.status.as_str().into());
                row.push(st.iterations.to_string());
                row.extend([st.objective, st.kkt, st.violation].iter().map(|&v| num(v)));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        row.push(u8::from(r.fallback).to_string());
        row.push(u8::from(r.clipped).to_string());
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Per-step solve time statistics (ms).
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub median_solve_ms: f64,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
}

impl Timing {
    pub fn from_log(log: &SimLog) -> Option<Self> {
        let mut t: Vec<f64> = log.solve_times().into_iter().map(|s| s * 1e3).collect();
        if t.is_empty() {
            return None;
        }
        t.sort_by(f64::total_cmp);
        let n = t.len();
        let median = if n % 2 == 1 { t[n / 2] } else { 0.5 * (t[n / 2 - 1] + t[n / 2]) };
        Some(Self {
            median_solve_ms: median,
            mean_solve_ms: t.iter().sum::<f64>() / n as f64,
            max_solve_ms: t[n - 1],
        })
    }
}

pub fn outcome_fields(outcome: &Outcome) -> (&'static str, Option<String>) {
    match outcome {
        Outcome::Completed => ("completed", None),
        Outcome::Diverged(why) => ("diverged", Some(why.clone())),
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: String,
    pub outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunReport {
    pub fn new(mode: &str, log: &SimLog, metrics: Metrics, with_timing: bool) -> Self {
        let (outcome, divergence) = outcome_fields(&log.outcome);
        Self {
            schema_version: SCHEMA_VERSION,
            mode: mode.into(),
            outcome,
            divergence,
            metrics,
            timing: if with_timing { Timing::from_log(log) } else { None },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CompareEntry {
    pub label: String,
    pub mode: String,
    pub outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub runs: Vec<CompareEntry>,
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serialises");
    s.push('\n');
    s
}

const COMPARE_FIELDS: [&str; 11] = [
    "x", "y", "theta", "vx", "beta_deg", "delta", "fx", "ax", "ay", "e_con", "status",
];

/// Runs joined on the step index. Cells of runs that ended earlier are empty.
pub fn compare_csv(runs: &[(String, &SimLog)], n_obstacles: usize) -> String {
    let ts = runs.first().map_or(0.0, |r| r.1.ts);
    let mut cols = vec!["time".to_string()];
    for (label, _) in runs {
        cols.extend(COMPARE_FIELDS.iter().map(|f| format!("{label}_{f}")));
        cols.extend((1..=n_obstacles).map(|i| format!("{label}_d_v2o_{i}")));
    }
    let mut out = cols.join(",");
    out.push('\n');
    let rows = runs.iter().map(|r| r.1.records.len()).max().unwrap_or(0);
    let width = COMPARE_FIELDS.len() + n_obstacles;
    for k in 0..rows {
        let time = runs
            .iter()
            .find_map(|r| r.1.records.get(k).map(|rec| rec.time))
            .unwrap_or(k as f64 * ts);
        let mut row = vec![num(time)];
        for (_, log) in runs {
            match log.records.get(k) {
                Some(r) => {
                    let s = &r.state;
                    row.extend(
                        [s.x, s.y, s.theta, s.vx, r.beta.to_degrees(), s.delta, s.fx, r.ax, r.ay, r.e_con]
                            .iter()
                            .map(|&v| num(v)),
                    );
                    row.push(r.solver.as_ref().map_or(String::new(), |st| st.status.as_str().into()));
                    row.extend(r.d_v2o.iter().map(|&v| num(v)));
                }
                None => row.extend(std::iter::repeat_n(String::new(), width)),
            }
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}
