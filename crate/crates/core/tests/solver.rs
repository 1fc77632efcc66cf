use mpcc_core::mpcc::{assemble, MpccConfig, Mode};
use mpcc_core::nlp_solver::*;
use mpcc_core::scenarios::{build_double_lane_change, DoubleLaneChange};
use mpcc_core::sim::{closed_loop_step, PlantConfig, PlantState};
use mpcc_core::tyre::TyreParams;
use mpcc_core::vehicle_model::{ControlRate, VehicleParams};
use mpcc_core::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Scalar = Box<dyn Fn(&DVector<f64>) -> f64>;
type Vector = Box<dyn Fn(&DVector<f64>) -> DVector<f64>>;

/// Small dense problem with linear constraints `A_eq z = b_eq`, `A_in z <= b_in`.
struct Dense {
    n: usize,
    f: Scalar,
    grad: Vector,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
}

impl Dense {
    fn unconstrained(n: usize, f: Scalar, grad: Vector) -> Self {
        Self {
            n,
            f,
            grad,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }
}

impl Nlp for Dense {
    fn num_vars(&self) -> usize {
        self.n
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<Evaluation> {
        let m = self.a_in.nrows();
        let ineq_jac = (0..m)
            .map(|i| SparseRow::new((0..self.n).collect(), self.a_in.row(i).iter().copied().collect()))
            .collect();
        Ok(Evaluation {
            f: (self.f)(z),
            grad: (self.grad)(z),
            eq: &self.a_eq * z - &self.b_eq,
            eq_jac: EqJacobian::Dense(self.a_eq.clone()),
            ineq: &self.a_in * z - &self.b_in,
            ineq_jac,
            soft_group: vec![None; m],
            element_grads: vec![],
            ineq_element: vec![],
        })
    }
}

fn settings(max_iterations: usize) -> SolverSettings {
    SolverSettings {
        max_iterations,
        kkt_tolerance: 1e-10,
        constraint_tolerance: 1e-10,
        ..Default::default()
    }
}

fn merit_is_monotone(sol: &NlpSolution) {
    for (before, after) in &sol.merit_history {
        assert!(after <= before, "merit rose from {before} to {after}");
    }
}

#[test]
fn diagonal_quadratic_reaches_its_minimiser() {
    let q = DVector::from_vec(vec![1.0, 4.0, 0.5, 10.0]);
    let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
    let (q1, b1, q2, b2) = (q.clone(), b.clone(), q.clone(), b.clone());
    let nlp = Dense::unconstrained(
        4,
        Box::new(move |z| 0.5 * z.component_mul(&q1).dot(z) - b1.dot(z)),
        Box::new(move |z| z.component_mul(&q2) - &b2),
    );
    let sol = sqp(&nlp, DVector::zeros(4), &settings(50), None).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    let exact = b.component_div(&q);
    assert!((&sol.z - exact).amax() < 1e-8);
    assert!(sol.iterations <= 4 + 5);
    merit_is_monotone(&sol);
}

#[test]
fn constrained_qp_matches_the_hand_derived_kkt_point() {
    // min (x-2)^2 + (y-1)^2  s.t.  x + y <= 1
    // stationarity 2(x-2) + mu = 0, 2(y-1) + mu = 0 and x + y = 1 give x = 1, y = 0, mu = 2
    let nlp = Dense {
        n: 2,
        f: Box::new(|z| (z[0] - 2.0).powi(2) + (z[1] - 1.0).powi(2)),
        grad: Box::new(|z| DVector::from_vec(vec![2.0 * (z[0] - 2.0), 2.0 * (z[1] - 1.0)])),
        a_eq: DMatrix::zeros(0, 2),
        b_eq: DVector::zeros(0),
        a_in: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        b_in: DVector::from_vec(vec![1.0]),
    };
    let sol = sqp(&nlp, DVector::from_vec(vec![-3.0, 4.0]), &settings(50), None).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.z[0] - 1.0).abs() < 1e-8 && sol.z[1].abs() < 1e-8, "{}", sol.z);
    assert!((sol.y_in[0] - 2.0).abs() < 1e-8, "{}", sol.y_in);
    assert!(sol.iterations <= 2 + 5);
    merit_is_monotone(&sol);
}

#[test]
fn equality_constrained_quadratic_converges_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 6;
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n);
    let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
    // KKT system [H A'; A 0] [z; y] = [-c; b]
    let mut kkt = DMatrix::zeros(n + 2, n + 2);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    kkt.view_mut((0, n), (n, 2)).copy_from(&a.transpose());
    kkt.view_mut((n, 0), (2, n)).copy_from(&a);
    let mut rhs = DVector::zeros(n + 2);
    rhs.rows_mut(0, n).copy_from(&-&c);
    rhs.rows_mut(n, 2).copy_from(&b);
    let exact = kkt.lu().solve(&rhs).unwrap();
    let (h1, c1, h2, c2) = (h.clone(), c.clone(), h.clone(), c.clone());
    let nlp = Dense {
        n,
        f: Box::new(move |z| 0.5 * z.dot(&(&h1 * z)) + c1.dot(z)),
        grad: Box::new(move |z| &h2 * z + &c2),
        a_eq: a,
        b_eq: b,
        a_in: DMatrix::zeros(0, n),
        b_in: DVector::zeros(0),
    };
    let sol = sqp(&nlp, DVector::zeros(n), &settings(50), None).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((&sol.z - exact.rows(0, n)).amax() < 1e-8);
    assert!(sol.iterations <= n + 5);
}

#[test]
fn rosenbrock_from_the_classic_start() {
    let nlp = Dense::unconstrained(
        2,
        Box::new(|z| 100.0 * (z[1] - z[0] * z[0]).powi(2) + (1.0 - z[0]).powi(2)),
        Box::new(|z| {
            DVector::from_vec(vec![
                -400.0 * z[0] * (z[1] - z[0] * z[0]) - 2.0 * (1.0 - z[0]),
                200.0 * (z[1] - z[0] * z[0]),
            ])
        }),
    );
    let sol = sqp(&nlp, DVector::from_vec(vec![-1.2, 1.0]), &settings(500), None).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.z[0] - 1.0).abs() < 1e-6 && (sol.z[1] - 1.0).abs() < 1e-6, "{}", sol.z);
    merit_is_monotone(&sol);
}

#[test]
fn bfgs_recovers_a_quadratic_hessian() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 5;
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = &m * m.transpose() + DMatrix::identity(n, n);
    let mut h = DMatrix::identity(n, n);
    // conjugate directions reproduce Q exactly after n updates
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let mut d = DVector::from_fn(n, |j, _| if j == i { 1.0 } else { 0.0 });
        for p in &dirs {
            let proj = p.dot(&(&q * &d)) / p.dot(&(&q * p));
            d -= p * proj;
        }
        dirs.push(d);
    }
    for d in &dirs {
        assert!(bfgs_update(&mut h, d, &(&q * d)));
    }
    assert!((&h - &q).amax() < 1e-6, "{h} vs {q}");
}

#[test]
fn bfgs_skips_a_zero_step() {
    let mut h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let before = h.clone();
    assert!(!bfgs_update(&mut h, &DVector::zeros(2), &DVector::from_vec(vec![1.0, 1.0])));
    assert_eq!(h, before);
}

#[test]
fn bfgs_keeps_random_updates_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n = rng.random_range(2..8);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let s = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        bfgs_update(&mut h, &s, &y);
        assert!((&h - h.transpose()).amax() < 1e-9 * h.amax());
        assert!(h.cholesky().is_some());
    }
}

#[test]
fn qp_solver_matches_the_hand_example() {
    let h = DMatrix::identity(2, 2) * 2.0;
    let g = DVector::from_vec(vec![-4.0, -2.0]);
    let ae = DMatrix::zeros(0, 2);
    let be = DVector::zeros(0);
    let ai = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let bi = DVector::from_vec(vec![1.0]);
    let sol = qp::Qp { h: &h, g: &g, a_eq: &ae, b_eq: &be, a_in: &ai, b_in: &bi }
        .solve()
        .unwrap();
    assert!((sol.x[0] - 1.0).abs() < 1e-12 && sol.x[1].abs() < 1e-12);
    assert!((sol.y_in[0] - 2.0).abs() < 1e-12);
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

#[test]
fn warm_starts_save_iterations_and_solves_are_sound() {
    let vp = VehicleParams::default();
    let tp = TyreParams::default();
    let cfg = MpccConfig { mode: Mode::MpccCa, ..Default::default() };
    let solver = SolverSettings::default();
    let sc = build_double_lane_change(&DoubleLaneChange::default(), &vp, cfg.weights.d_sft_obs).unwrap();
    let plant_cfg = PlantConfig::matched(&vp, &tp, 50);
    let mut plant = PlantState::new(&sc.initial, &plant_cfg);
    let (mut warm_iters, mut cold_iters) = (Vec::new(), Vec::new());
    let mut warm: Option<HorizonSolution> = None;
    let mut step = 0;
    while plant.vehicle.theta < sc.end_arc {
        let x0 = plant.measurement();
        let Ok(p_warm) = assemble(&x0, &sc.desired_path, &sc.obstacles, &sc.track, &cfg, &vp, &tp, warm.as_ref()) else {
            break;
        };
        let w = solve(&p_warm, &solver, warm.as_ref()).unwrap();
        let mut checked = vec![w.clone()];
        // cold solves are the expensive part, so pair them on every third step
        if step % 3 == 0 {
            let p_cold = assemble(&x0, &sc.desired_path, &sc.obstacles, &sc.track, &cfg, &vp, &tp, None).unwrap();
            let c = solve(&p_cold, &solver, None).unwrap();
            warm_iters.push(w.iterations);
            cold_iters.push(c.iterations);
            checked.push(c);
        }
        for s in &checked {
            if s.status == SolveStatus::Converged {
                assert!(s.kkt <= solver.kkt_tolerance, "step {step}: kkt {}", s.kkt);
                assert!(s.violation <= solver.constraint_tolerance, "step {step}: violation {}", s.violation);
            }
            for (before, after) in &s.merit_history {
                assert!(after <= before);
            }
        }
        if step == 5 {
            let again = solve(&p_warm, &solver, warm.as_ref()).unwrap();
            assert_eq!(again.states, w.states);
            assert_eq!(again.inputs, w.inputs);
            assert_eq!(again.objective.to_bits(), w.objective.to_bits());
            assert_eq!((again.iterations, again.status), (w.iterations, w.status));
            assert_eq!(again.merit_history, w.merit_history);
        }
        let u = ControlRate::from_array(&cfg.bounds.clip_input(w.inputs[0].to_array()));
        plant = closed_loop_step(&plant, &u, &plant_cfg, cfg.ts).unwrap();
        warm = Some(w);
        step += 1;
    }
    assert!(step > 100);
    let (mw, mc) = (median(warm_iters), median(cold_iters));
    assert!(mw < mc, "warm median {mw} vs cold median {mc}");
}
