//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mpcc_core::mpcc::{assemble, v2o_weight, MpccConfig, Mode, MpccProblem};
use mpcc_core::nlp_solver::*;
use mpcc_core::scenarios::{build_double_lane_change, DoubleLaneChange};
use mpcc_core::tyre::{self, TyreParams};
use mpcc_core::vehicle_model::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

/// Runs the CLI, returning its wall time.
fn mpcc(args: &[&str]) -> Result<Duration, String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_mpcc"))
        .args(args)
        .env_remove("MPCC_LOG_LEVEL")
        .output()
        .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(out.status.success(), || {
        format!("mpcc {} exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim())
    })?;
    Ok(took)
}

fn json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().filter_map(Value::as_f64).collect()).unwrap_or_default()
}

struct Runs {
    dir: TempDir,
    times: Vec<(String, Duration)>,
}

impl Runs {
    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn metrics(&self, name: &str) -> Result<Value, String> {
        json(&self.out(name).join("metrics.json"))
    }

    fn time(&self, name: &str) -> Duration {
        self.times.iter().find(|(n, _)| n == name).map(|(_, t)| *t).unwrap_or_default()
    }
}

fn closed_loop_runs() -> Result<Runs, String> {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let cfg = config();
    let cfg = cfg.to_str().unwrap();
    let mut times = Vec::new();
    for (name, mode, extra) in [
        ("ca", "mpcc-ca", None),
        ("no-ca", "mpcc-no-ca", None),
        ("frenet-a", "frenet-baseline", Some("--no-timing")),
        ("frenet-b", "frenet-baseline", Some("--no-timing")),
    ] {
        let out = dir.path().join(name);
        let mut args = vec!["run", cfg, "--mode", mode, "--out", out.to_str().unwrap()];
        args.extend(extra);
        times.push((name.to_string(), mpcc(&args)?));
    }
    Ok(Runs { dir, times })
}

fn criterion_1() -> Check {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let took = mpcc(&["study-frenet", "--radii", "10,20,40", "--out", dir.path().to_str().unwrap()])?;
    let mut tables = Vec::new();
    for r in [10.0f64, 20.0, 40.0] {
        let text = fs::read_to_string(dir.path().join(format!("study_r{r}.csv"))).map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for line in text.lines().skip(1) {
            let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            let (ds, over) = (v[1], v[4]);
            let exact = ds - 2.0 * r * (ds / (2.0 * r)).sin();
            ensure((over - exact).abs() <= 1e-9, || format!("R={r} ds={ds}: {over} vs closed form {exact}"))?;
            ensure(over >= 0.0, || format!("R={r} ds={ds}: negative overestimation {over}"))?;
            rows.push((ds, over));
        }
        tables.push(rows);
    }
    ensure(tables.iter().all(|t| t.len() == tables[0].len()), || "tables differ in length".into())?;
    for ((&(ds, a), &(ds_b, b)), &(ds_c, c)) in tables[0].iter().zip(&tables[1]).zip(&tables[2]) {
        ensure(ds_b == ds && ds_c == ds, || "tables are not aligned".into())?;
        if ds > 0.0 {
            ensure(a > b && b > c, || format!("ds={ds}: not ordered by curvature ({a}, {b}, {c})"))?;
        }
    }
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("{} rows per radius, closed form within 1e-9, study took {:.2} s", tables[0].len(), took.as_secs_f64()))
}

fn criterion_2(runs: &Runs) -> Check {
    let ca = floats(&runs.metrics("ca")?["metrics"]["min_d_v2o"]);
    let no_ca = floats(&runs.metrics("no-ca")?["metrics"]["min_d_v2o"]);
    ensure(ca.len() == 2 && no_ca.len() == 2, || "expected two obstacles".into())?;
    ensure(no_ca.iter().any(|&d| d < 0.0), || format!("mpcc-no-ca did not collide: {no_ca:?}"))?;
    ensure(ca.iter().all(|&d| d > 0.0), || format!("mpcc-ca collided: {ca:?}"))?;
    for name in ["ca", "no-ca"] {
        let t = runs.time(name);
        ensure(t < Duration::from_secs(120), || format!("{name} run took {t:?}"))?;
    }
    Ok(format!(
        "min D_V2O mpcc-ca [{:.3}, {:.3}] m, mpcc-no-ca [{:.3}, {:.3}] m",
        ca[0], ca[1], no_ca[0], no_ca[1]
    ))
}

fn criterion_3(runs: &Runs) -> Check {
    let ca = runs.metrics("ca")?;
    let fr = runs.metrics("frenet-a")?;
    let (ca, fr) = (&ca["metrics"], &fr["metrics"]);
    let ca_obs = floats(&ca["min_d_v2o"]);
    let ca_edge = ca["min_d_v2e"].as_f64().unwrap_or(f64::NAN);
    ensure(ca_obs.iter().all(|&d| d >= 0.0) && ca_edge >= 0.0, || {
        format!("mpcc-ca clearances V2O {ca_obs:?}, V2E {ca_edge}")
    })?;
    let fr_unsafe = fr["unsafe_obstacle"].as_array().into_iter().flatten().any(|v| v == true) || fr["unsafe_edge"] == true;
    ensure(fr_unsafe, || "frenet-baseline stayed outside every unsafe band".into())?;
    let (b_ca, b_fr) = (ca["peak_beta_deg"].as_f64().unwrap(), fr["peak_beta_deg"].as_f64().unwrap());
    ensure(b_ca < b_fr, || format!("peak sideslip mpcc-ca {b_ca:.3} deg >= frenet-baseline {b_fr:.3} deg"))?;
    Ok(format!(
        "mpcc-ca min V2E {ca_edge:.3} m; frenet-baseline min V2O {:?}; peak beta {b_ca:.2} < {b_fr:.2} deg",
        floats(&fr["min_d_v2o"]).iter().map(|d| (d * 1e3).round() / 1e3).collect::<Vec<_>>()
    ))
}

/// Dense test problem with linear constraints.
struct Dense {
    n: usize,
    f: fn(&DVector<f64>) -> f64,
    grad: fn(&DVector<f64>) -> DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
}

impl Nlp for Dense {
    fn num_vars(&self) -> usize {
        self.n
    }

    fn evaluate(&self, z: &DVector<f64>) -> mpcc_core::Result<Evaluation> {
        let m = self.a_in.nrows();
        Ok(Evaluation {
            f: (self.f)(z),
            grad: (self.grad)(z),
            eq: DVector::zeros(0),
            eq_jac: EqJacobian::Dense(DMatrix::zeros(0, self.n)),
            ineq: &self.a_in * z - &self.b_in,
            ineq_jac: (0..m)
                .map(|i| SparseRow::new((0..self.n).collect(), self.a_in.row(i).iter().copied().collect()))
                .collect(),
            soft_group: vec![None; m],
            element_grads: vec![],
            ineq_element: vec![],
        })
    }
}

fn solve_dense(nlp: &Dense, z0: &[f64]) -> Result<NlpSolution, String> {
    let settings = SolverSettings {
        max_iterations: 500,
        kkt_tolerance: 1e-10,
        constraint_tolerance: 1e-10,
        ..Default::default()
    };
    let sol = sqp(nlp, DVector::from_row_slice(z0), &settings, None).map_err(|e| e.to_string())?;
    ensure(sol.status == SolveStatus::Converged, || format!("status {:?}", sol.status))?;
    Ok(sol)
}

fn assembled(mode: Mode) -> MpccProblem {
    let vp = VehicleParams::default();
    let cfg = MpccConfig { mode, ..Default::default() };
    let sc = build_double_lane_change(&DoubleLaneChange::default(), &vp, cfg.weights.d_sft_obs).unwrap();
    let mut x0 = sc.initial;
    x0.x = 65.0;
    x0.theta = 65.0;
    assemble(&x0, &sc.desired_path, &sc.obstacles, &sc.track, &cfg, &vp, &TyreParams::default(), None).unwrap()
}

fn gradient_checks() -> Result<usize, String> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let problems: Vec<MpccProblem> = Mode::ALL.iter().map(|&m| assembled(m)).collect();
    for point in 0..100 {
        let p = &problems[point % problems.len()];
        let z = p.guess.map(|v| v + rng.random_range(-0.05..0.05));
        let dir = DVector::from_fn(p.num_vars(), |_, _| rng.random_range(-1.0..1.0));
        let e = p.evaluate(&z).map_err(|e| e.to_string())?;
        let h = 1e-6;
        let plus = p.values(&(&z + &dir * h)).map_err(|e| e.to_string())?;
        let minus = p.values(&(&z - &dir * h)).map_err(|e| e.to_string())?;
        let fd = (plus.f - minus.f) / (2.0 * h);
        ensure(close(e.grad.dot(&dir), fd), || format!("point {point}: cost {} vs {fd}", e.grad.dot(&dir)))?;
        for (r, row) in e.ineq_jac.iter().enumerate() {
            let lin: f64 = row.idx.iter().zip(&row.val).map(|(&i, &v)| v * dir[i]).sum();
            let fd = (plus.ineq[r] - minus.ineq[r]) / (2.0 * h);
            ensure(close(lin, fd), || format!("point {point}: inequality {r} {lin} vs {fd}"))?;
        }
        let EqJacobian::Ocp(jac) = &e.eq_jac else {
            return Err("expected a stage-wise dynamics jacobian".into());
        };
        for k in 0..p.layout.horizon {
            let mut lin = dir.rows(p.layout.x(k), NX) - &jac.b[k] * dir.rows(p.layout.u(k), NU);
            if k > 0 {
                lin -= &jac.a[k] * dir.rows(p.layout.x(k - 1), NX);
            }
            for i in 0..NX {
                let fd = (plus.eq[k * NX + i] - minus.eq[k * NX + i]) / (2.0 * h);
                ensure(close(lin[i], fd), || format!("point {point}: dynamics {k},{i} {} vs {fd}", lin[i]))?;
            }
        }
    }
    Ok(100)
}

/// Rows of a log whose solver converged must meet the tolerances.
fn converged_rows(path: &Path) -> Result<usize, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("no column {name}"));
    let (status, kkt, viol) = (col("status")?, col("kkt")?, col("violation")?);
    let mut n = 0;
    for line in lines {
        let v: Vec<&str> = line.split(',').collect();
        if v[status] == "converged" {
            let (k, c): (f64, f64) = (v[kkt].parse().unwrap(), v[viol].parse().unwrap());
            ensure(k <= 1e-4 && c <= 1e-6, || format!("{}: converged row with kkt {k:e}, violation {c:e}", path.display()))?;
            n += 1;
        }
    }
    Ok(n)
}

fn criterion_4(runs: &Runs) -> Check {
    let start = Instant::now();
    let qp = solve_dense(
        &Dense {
            n: 2,
            f: |z| (z[0] - 2.0).powi(2) + (z[1] - 1.0).powi(2),
            grad: |z| DVector::from_vec(vec![2.0 * (z[0] - 2.0), 2.0 * (z[1] - 1.0)]),
            a_in: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b_in: DVector::from_vec(vec![1.0]),
        },
        &[-3.0, 4.0],
    )?;
    ensure((qp.z[0] - 1.0).abs() < 1e-6 && qp.z[1].abs() < 1e-6 && (qp.y_in[0] - 2.0).abs() < 1e-6, || {
        format!("constrained QP gave {} with multiplier {}", qp.z, qp.y_in)
    })?;
    let rosen = solve_dense(
        &Dense {
            n: 2,
            f: |z| 100.0 * (z[1] - z[0] * z[0]).powi(2) + (1.0 - z[0]).powi(2),
            grad: |z| {
                DVector::from_vec(vec![
                    -400.0 * z[0] * (z[1] - z[0] * z[0]) - 2.0 * (1.0 - z[0]),
                    200.0 * (z[1] - z[0] * z[0]),
                ])
            },
            a_in: DMatrix::zeros(0, 2),
            b_in: DVector::zeros(0),
        },
        &[-1.2, 1.0],
    )?;
    ensure((rosen.z[0] - 1.0).abs() < 1e-6 && (rosen.z[1] - 1.0).abs() < 1e-6, || format!("Rosenbrock gave {}", rosen.z))?;
    let quad = solve_dense(
        &Dense {
            n: 3,
            f: |z| 0.5 * (z[0] * z[0] + 4.0 * z[1] * z[1] + 10.0 * z[2] * z[2]) - z[0] + 2.0 * z[1] - 5.0 * z[2],
            grad: |z| DVector::from_vec(vec![z[0] - 1.0, 4.0 * z[1] + 2.0, 10.0 * z[2] - 5.0]),
            a_in: DMatrix::zeros(0, 3),
            b_in: DVector::zeros(0),
        },
        &[0.0, 0.0, 0.0],
    )?;
    ensure((quad.z.clone() - DVector::from_vec(vec![1.0, -0.5, 0.5])).amax() < 1e-6, || format!("quadratic gave {}", quad.z))?;
    let points = gradient_checks()?;
    let mut rows = 0;
    for name in ["ca", "no-ca", "frenet-a"] {
        rows += converged_rows(&runs.out(name).join("log.csv"))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!(
        "benchmarks to 1e-6, {points} finite-difference points, {rows} converged MPC solves within tolerance ({:.2} s)",
        took.as_secs_f64()
    ))
}

fn rk2_error(x0: &VehicleState, u: &ControlRate, ts: f64, truth: &[f64; NX]) -> f64 {
    let (p, t) = (VehicleParams::default(), TyreParams::default());
    let mut x = *x0;
    for _ in 0..(1.0 / ts).round() as usize {
        x = rk2_step(&x, u, &p, &t, ts).unwrap();
    }
    let a = x.to_array();
    (0..7).map(|i| (a[i] - truth[i]).powi(2)).sum::<f64>().sqrt()
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100_000 {
        let (fx, lb, ld) = (rng.random_range(-2e4..2e4), rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let (f, r) = split_longitudinal_force(fx, lb, ld);
        ensure(f * r >= 0.0 && (f + r - fx).abs() <= 1e-12 * fx.abs().max(1.0), || {
            format!("split of {fx} with ({lb}, {ld}) gave ({f}, {r})")
        })?;
    }
    let (c, fz, mu): (f64, f64, f64) = (105_000.0, 8829.0, 1.0);
    let alpha_sl = (3.0 * mu * fz / c).atan();
    for _ in 0..20_000 {
        let alpha = rng.random_range(-0.5..0.5);
        let fx = rng.random_range(-mu * fz..mu * fz);
        let fy = tyre::fiala_lateral_force(alpha, fz, fx, c, mu).map_err(|e| e.to_string())?;
        let back = tyre::fiala_lateral_force(-alpha, fz, fx, c, mu).map_err(|e| e.to_string())?;
        ensure(fy == -back, || format!("odd symmetry fails at {alpha}"))?;
        ensure(fx.hypot(fy) <= mu * fz * (1.0 + 1e-12), || format!("friction circle exceeded at {alpha}, {fx}"))?;
        if alpha.abs() >= alpha_sl {
            ensure((fy.abs() - mu * fz * tyre::derated_friction(fx, fz, mu).unwrap()).abs() < 1e-9, || {
                format!("not saturated at {alpha}")
            })?;
        }
    }
    let below = tyre::fiala_lateral_force(alpha_sl - 1e-9, fz, 0.0, c, mu).unwrap();
    let above = tyre::fiala_lateral_force(alpha_sl + 1e-9, fz, 0.0, c, mu).unwrap();
    ensure((below - above).abs() < 1e-3, || format!("jump at the sliding angle: {below} vs {above}"))?;

    let (p, t) = (VehicleParams::default(), TyreParams::default());
    let x0 = VehicleState { vx: 20.0, vy: 0.1, r: 0.1, delta: 0.03, fx: 800.0, ..Default::default() };
    let u = ControlRate { delta_dot: 0.05, fx_dot: -500.0, lambda_b: 0.5 };
    let f = |s: &[f64; NX]| state_derivative(s, &u.to_array(), &p, &t);
    let n = 20_000;
    let h = 1.0 / n as f64;
    let mut truth = x0.to_array();
    for _ in 0..n {
        let k1 = f(&truth);
        let k2 = f(&std::array::from_fn(|i| truth[i] + 0.5 * h * k1[i]));
        let k3 = f(&std::array::from_fn(|i| truth[i] + 0.5 * h * k2[i]));
        let k4 = f(&std::array::from_fn(|i| truth[i] + h * k3[i]));
        truth = std::array::from_fn(|i| truth[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    let e: Vec<f64> = [0.05, 0.025, 0.0125].iter().map(|&ts| rk2_error(&x0, &u, ts, &truth)).collect();
    let (r1, r2) = (e[0] / e[1], e[1] / e[2]);
    ensure(r1 >= 3.5 && r2 >= 3.5, || format!("RK2 convergence ratios {r1:.2}, {r2:.2}"))?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("1e5 splits, tyre suite, RK2 ratios {r1:.2} and {r2:.2} ({:.2} s)", took.as_secs_f64()))
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let (p, d) = (200.0, 1.5);
    let edge = p * (-2.0f64).exp();
    ensure(v2o_weight(-0.3, p, d) == p && v2o_weight(0.0, p, d) == p, || "q at D <= 0 is not P_k".into())?;
    // left limit: the largest double below D_sft
    let q = v2o_weight(f64::from_bits(d.to_bits() - 1), p, d);
    ensure((q - edge).abs() < 1e-12, || format!("q just below D_sft is {q}, expected {edge}"))?;
    ensure(v2o_weight(d + 1e-12, p, d) == 0.0 && v2o_weight(5.0, p, d) == 0.0, || "q beyond D_sft is not 0".into())?;
    let mut prev = f64::INFINITY;
    for i in 0..=10_000 {
        let q = v2o_weight(d * i as f64 / 10_000.0, p, d);
        ensure(q <= prev && q <= p, || format!("schedule rises at sample {i}"))?;
        prev = q;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("schedule exact at 0, D_sft and beyond, monotone over 10001 samples ({:.3} s)", took.as_secs_f64()))
}

fn criterion_7(runs: &Runs) -> Check {
    for f in ["log.csv", "metrics.json", "trajectory.svg", "states.svg", "gg.svg"] {
        let a = fs::read(runs.out("frenet-a").join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(runs.out("frenet-b").join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between identical runs"))?;
    }
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let (s1, s2) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&s1, &s2] {
        mpcc(&["study-frenet", "--radii", "10,20", "--out", d.to_str().unwrap()])?;
    }
    for f in ["study_r10.csv", "study_r20.csv", "overestimation.svg"] {
        ensure(fs::read(s1.join(f)).ok() == fs::read(s2.join(f)).ok(), || format!("{f} differs between identical runs"))?;
    }
    let median = runs.metrics("ca")?["timing"]["median_solve_ms"].as_f64().ok_or("metrics.json has no median solve time")?;
    ensure(median < 100.0, || format!("median solve time {median:.2} ms"))?;
    Ok(format!("byte-identical reruns, median solve {median:.2} ms"))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, result: Check| {
        match result {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {why}");
            }
        }
    };
    report(1, "Frenet overestimation study", criterion_1());
    let runs = closed_loop_runs();
    let with_runs = |f: fn(&Runs) -> Check| runs.as_ref().map_err(Clone::clone).and_then(f);
    report(2, "collision dichotomy", with_runs(criterion_2));
    report(3, "safety-margin ordering", with_runs(criterion_3));
    report(4, "solver correctness", with_runs(criterion_4));
    report(5, "model invariants", criterion_5());
    report(6, "weight schedule", criterion_6());
    report(7, "determinism and performance", with_runs(criterion_7));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
