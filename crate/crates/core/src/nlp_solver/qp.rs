//! Dense dual active-set QP solver (Goldfarb-Idnani).
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//! ```
//!
//! for symmetric positive definite `H`. Multipliers follow the convention
//! `L = f + y_eq'(A_eq x - b_eq) + y_in'(A_in x - b_in)` with `y_in >= 0`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    NotPositiveDefinite,
    DependentEqualities,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

pub struct Qp<'a> {
    pub h: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    pub a_eq: &'a DMatrix<f64>,
    pub b_eq: &'a DVector<f64>,
    pub a_in: &'a DMatrix<f64>,
    pub b_in: &'a DVector<f64>,
}

/// Active-set bookkeeping: `R` upper triangular and `J = L^-T Q`.
struct Factors {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    iq: usize,
}

impl Factors {
    fn compute_d(&self, np: &DVector<f64>, d: &mut DVector<f64>) {
        for col in 0..self.n {
            d[col] = self.j.column(col).dot(np);
        }
    }

    fn update_z(&self, d: &DVector<f64>, z: &mut DVector<f64>) {
        z.fill(0.0);
        for col in self.iq..self.n {
            z.axpy(d[col], &self.j.column(col), 1.0);
        }
    }

    fn update_r(&self, d: &DVector<f64>, rv: &mut DVector<f64>) {
        for i in (0..self.iq).rev() {
            let mut sum = d[i];
            for k in i + 1..self.iq {
                sum -= self.r[(i, k)] * rv[k];
            }
            rv[i] = sum / self.r[(i, i)];
        }
    }

    /// Givens rotations zeroing `d[iq+1..]`, then append `d` as a column of R.
    fn add_constraint(&mut self, d: &mut DVector<f64>) -> bool {
        let n = self.n;
        for jj in (self.iq + 1..n).rev() {
            let mut cc = d[jj - 1];
            let mut ss = d[jj];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, jj - 1)] = a;
                self.j[(k, jj)] = xny * (t1 + a) - t2;
            }
        }
        self.iq += 1;
        for i in 0..self.iq {
            self.r[(i, self.iq - 1)] = d[i];
        }
        let diag = d[self.iq - 1].abs();
        if diag <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    fn delete_constraint(&mut self, active: &mut [i64], u: &mut [f64], meq: usize, l: i64) {
        let n = self.n;
        let Some(qq) = (meq..self.iq).find(|&i| active[i] == l) else {
            return;
        };
        for i in qq..self.iq - 1 {
            active[i] = active[i + 1];
            u[i] = u[i + 1];
            for row in 0..n {
                self.r[(row, i)] = self.r[(row, i + 1)];
            }
        }
        active[self.iq - 1] = active[self.iq];
        u[self.iq - 1] = u[self.iq];
        active[self.iq] = 0;
        u[self.iq] = 0.0;
        for row in 0..self.iq {
            self.r[(row, self.iq - 1)] = 0.0;
        }
        self.iq -= 1;
        if self.iq == 0 {
            return;
        }
        for jj in qq..self.iq {
            let mut cc = self.r[(jj, jj)];
            let mut ss = self.r[(jj + 1, jj)];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in jj + 1..self.iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                let a = t1 * cc + t2 * ss;
                self.r[(jj, k)] = a;
                self.r[(jj + 1, k)] = xny * (t1 + a) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, jj)] = a;
                self.j[(k, jj + 1)] = xny * (a + t1) - t2;
            }
        }
    }
}

impl Qp<'_> {
    pub fn solve(&self) -> Result<QpSolution, QpError> {
        let n = self.g.len();
        let meq = self.a_eq.nrows();
        let m = self.a_in.nrows();
        debug_assert_eq!(self.h.shape(), (n, n));
        debug_assert!(meq == 0 || self.a_eq.ncols() == n);
        debug_assert!(m == 0 || self.a_in.ncols() == n);

        let chol = self.h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let lt = chol.l().transpose();
        let j = lt
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or(QpError::NotPositiveDefinite)?;
        let c1 = self.h.trace();
        let c2 = j.trace();

        let mut fac = Factors {
            n,
            j,
            r: DMatrix::zeros(n, n),
            r_norm: 1.0,
            iq: 0,
        };

        // unconstrained minimum
        let jt_g = fac.j.transpose() * self.g;
        let mut x = -(&fac.j * jt_g);
        let mut f = 0.5 * self.g.dot(&x);

        let total = meq + m;
        let mut active = vec![0i64; total + 1];
        let mut u = vec![0.0; total + 1];
        let mut d = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        let mut rv = DVector::zeros(total + 1);
        let mut iterations = 0usize;

        for i in 0..meq {
            let np: DVector<f64> = self.a_eq.row(i).transpose();
            fac.compute_d(&np, &mut d);
            fac.update_z(&d, &mut z);
            fac.update_r(&d, &mut rv);
            let zn = z.dot(&np);
            let t2 = if z.dot(&z).abs() > f64::EPSILON {
                (self.b_eq[i] - np.dot(&x)) / zn
            } else {
                0.0
            };
            x.axpy(t2, &z, 1.0);
            u[fac.iq] = t2;
            for k in 0..fac.iq {
                u[k] -= t2 * rv[k];
            }
            f += 0.5 * t2 * t2 * zn;
            active[i] = -(i as i64) - 1;
            if !fac.add_constraint(&mut d) {
                return Err(QpError::DependentEqualities);
            }
        }

        let rows_in: Vec<DVector<f64>> = (0..m).map(|i| -self.a_in.row(i).transpose()).collect();
        let slack = |x: &DVector<f64>, i: usize| rows_in[i].dot(x) + self.b_in[i];

        let mut iai: Vec<i64> = (0..m as i64).collect();
        let mut excluded = vec![false; m];
        let mut s = vec![0.0; m];
        let mut u_old = vec![0.0; total + 1];
        let mut a_old = vec![0i64; total + 1];
        let max_iter = 50 * (n + total) + 100;

        'outer: loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            for i in meq..fac.iq {
                iai[active[i] as usize] = -1;
            }
            let mut psi = 0.0;
            for i in 0..m {
                excluded[i] = false;
                s[i] = slack(&x, i);
                psi += s[i].min(0.0);
            }
            if psi.abs() <= m as f64 * f64::EPSILON * c1 * c2 * 100.0 {
                break;
            }
            u_old[..fac.iq].copy_from_slice(&u[..fac.iq]);
            a_old[..fac.iq].copy_from_slice(&active[..fac.iq]);
            let x_old = x.clone();

            'choose: loop {
                let mut ss = 0.0;
                let mut ip = 0usize;
                for i in 0..m {
                    if s[i] < ss && iai[i] != -1 && !excluded[i] {
                        ss = s[i];
                        ip = i;
                    }
                }
                if ss >= 0.0 {
                    break 'outer;
                }
                let np = &rows_in[ip];
                u[fac.iq] = 0.0;
                active[fac.iq] = ip as i64;

                loop {
                    iterations += 1;
                    if iterations > max_iter {
                        return Err(QpError::IterationLimit);
                    }
                    fac.compute_d(np, &mut d);
                    fac.update_z(&d, &mut z);
                    fac.update_r(&d, &mut rv);

                    // partial step length keeping dual feasibility
                    let mut l = 0i64;
                    let mut t1 = f64::INFINITY;
                    for k in meq..fac.iq {
                        if rv[k] > 0.0 && u[k] / rv[k] < t1 {
                            t1 = u[k] / rv[k];
                            l = active[k];
                        }
                    }
                    // full step length making constraint ip feasible
                    let mut t2 = f64::INFINITY;
                    if z.dot(&z).abs() > f64::EPSILON {
                        t2 = -s[ip] / z.dot(np);
                        if t2 < 0.0 {
                            t2 = f64::INFINITY;
                        }
                    }
                    let t = t1.min(t2);
                    if !t.is_finite() {
                        return Err(QpError::Infeasible);
                    }
                    if !t2.is_finite() {
                        // dual step only
                        for k in 0..fac.iq {
                            u[k] -= t * rv[k];
                        }
                        u[fac.iq] += t;
                        iai[l as usize] = l;
                        fac.delete_constraint(&mut active, &mut u, meq, l);
                        continue;
                    }
                    x.axpy(t, &z, 1.0);
                    f += t * z.dot(np) * (0.5 * t + u[fac.iq]);
                    for k in 0..fac.iq {
                        u[k] -= t * rv[k];
                    }
                    u[fac.iq] += t;

                    if (t - t2).abs() < f64::EPSILON {
                        if !fac.add_constraint(&mut d) {
                            excluded[ip] = true;
                            fac.delete_constraint(&mut active, &mut u, meq, ip as i64);
                            for (i, v) in iai.iter_mut().enumerate() {
                                *v = i as i64;
                            }
                            for i in meq..fac.iq {
                                active[i] = a_old[i];
                                u[i] = u_old[i];
                                iai[active[i] as usize] = -1;
                            }
                            x.copy_from(&x_old);
                            continue 'choose;
                        }
                        iai[ip] = -1;
                        continue 'outer;
                    }
                    // partial step: drop the blocking constraint
                    iai[l as usize] = l;
                    fac.delete_constraint(&mut active, &mut u, meq, l);
                    s[ip] = slack(&x, ip);
                }
            }
        }

        let mut y_eq = DVector::zeros(meq);
        let mut y_in = DVector::zeros(m);
        for k in 0..fac.iq {
            let a = active[k];
            if a < 0 {
                y_eq[(-a - 1) as usize] = -u[k];
            } else {
                y_in[a as usize] = u[k];
            }
        }
        Ok(QpSolution {
            x,
            y_eq,
            y_in,
            objective: f,
            iterations,
        })
    }
}
