//! Arc-length parameterised reference paths and the distances built on them.
//!
//! Positions are interpolated with cubic Hermite segments whose end tangents
//! are the stored headings, so lookups are exact at samples and C1 between
//! them. Heading and curvature are interpolated linearly.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest allowed distance between consecutive samples (m).
pub const MAX_SAMPLE_SPACING: f64 = 1.0;
/// Allowed mismatch between a chord direction and the mean stored heading.
pub const TANGENT_TOLERANCE: f64 = 0.01;

const PROJECTION_GRID: f64 = 1.0;
const AMBIGUITY_DISTANCE: f64 = 1e-3;
const AMBIGUITY_ARC: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    samples: Vec<PathSample>,
    v_des: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSpec {
    pub centerline: ReferencePath,
    /// Track width `W_t` (m).
    pub width: f64,
}

/// Result of projecting a point onto a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    /// Signed lateral offset, positive to the left of the tangent.
    pub d: f64,
}

impl ReferencePath {
    pub fn new(samples: Vec<PathSample>, v_des: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidPath("need at least two samples".into()));
        }
        if samples[0].s.abs() > 1e-9 {
            return Err(Error::InvalidPath("arc length must start at 0".into()));
        }
        if !(v_des > 0.0) {
            return Err(Error::InvalidPath("desired speed must be positive".into()));
        }
        for (i, w) in samples.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            let ds = b.s - a.s;
            if !(ds > 0.0) {
                return Err(Error::InvalidPath(format!("s not increasing at sample {}", i + 1)));
            }
            if ds > MAX_SAMPLE_SPACING + 1e-9 {
                return Err(Error::InvalidPath(format!(
                    "spacing {ds:.3} m exceeds {MAX_SAMPLE_SPACING} m at sample {}",
                    i + 1
                )));
            }
            if (b.psi - a.psi).abs() >= PI {
                return Err(Error::InvalidPath(format!("heading wraps at sample {}", i + 1)));
            }
        }
        // chord direction against the mean heading of each segment, which is
        // second-order accurate for smooth paths
        for (i, w) in samples.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            let ds = b.s - a.s;
            let mid = 0.5 * (a.psi + b.psi);
            let dx = (b.x - a.x) / ds - mid.cos();
            let dy = (b.y - a.y) / ds - mid.sin();
            if dx.hypot(dy) > TANGENT_TOLERANCE {
                return Err(Error::InvalidPath(format!(
                    "position and heading disagree at sample {i} (mismatch {:.4})",
                    dx.hypot(dy)
                )));
            }
        }
        if samples
            .iter()
            .any(|p| ![p.s, p.x, p.y, p.psi, p.kappa].iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidPath("non-finite sample".into()));
        }
        Ok(Self { samples, v_des })
    }

    /// Sample a parametric description `f(s) -> (x, y, psi, kappa)` every
    /// `ds` metres (the end point is always included).
    pub fn from_fn<F>(length: f64, ds: f64, v_des: f64, f: F) -> Result<Self>
    where
        F: Fn(f64) -> (f64, f64, f64, f64),
    {
        if !(length > 0.0 && ds > 0.0) {
            return Err(Error::InvalidPath("length and spacing must be positive".into()));
        }
        let n = (length / ds).ceil() as usize;
        let samples = (0..=n)
            .map(|i| {
                let s = (i as f64 * ds).min(length);
                let (x, y, psi, kappa) = f(s);
                PathSample { s, x, y, psi, kappa }
            })
            .collect();
        Self::new(samples, v_des)
    }

    pub fn straight(x0: f64, y0: f64, psi: f64, length: f64, ds: f64, v_des: f64) -> Result<Self> {
        Self::from_fn(length, ds, v_des, |s| {
            (x0 + s * psi.cos(), y0 + s * psi.sin(), psi, 0.0)
        })
    }

    /// Counter-clockwise circle starting at the origin heading along +X,
    /// centred at `(0, radius)`.
    pub fn circle(radius: f64, length: f64, ds: f64, v_des: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidPath("radius must be positive".into()));
        }
        Self::from_fn(length, ds, v_des, |s| {
            let a = s / radius;
            (radius * a.sin(), radius * (1.0 - a.cos()), a, 1.0 / radius)
        })
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn total_length(&self) -> f64 {
        self.samples[self.samples.len() - 1].s
    }

    pub fn v_des(&self) -> f64 {
        self.v_des
    }

    /// Index `i` of the segment `[s_i, s_{i+1}]` containing `s` (clamped).
    fn segment(&self, s: f64) -> usize {
        let idx = self.samples.partition_point(|p| p.s <= s);
        idx.saturating_sub(1).min(self.samples.len() - 2)
    }

    pub fn lookup(&self, theta: f64) -> PathPoint {
        let (x, y, psi, kappa) = self.lookup_generic(theta);
        PathPoint { x, y, psi, kappa }
    }

    /// `(Xt, Yt, Psit, kappa)` at arc length `theta`, clamped to the path.
    pub fn lookup_generic<T: Scalar>(&self, theta: T) -> (T, T, T, T) {
        let s_re = theta.re();
        if s_re <= 0.0 || s_re >= self.total_length() {
            let p = if s_re <= 0.0 {
                &self.samples[0]
            } else {
                &self.samples[self.samples.len() - 1]
            };
            return (T::cst(p.x), T::cst(p.y), T::cst(p.psi), T::cst(p.kappa));
        }
        let i = self.segment(s_re);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let h = b.s - a.s;
        let t = (theta - a.s) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = t3 * 2.0 - t2 * 3.0 + 1.0;
        let h10 = t3 - t2 * 2.0 + t;
        let h01 = t2 * 3.0 - t3 * 2.0;
        let h11 = t3 - t2;
        let x = h00 * a.x + h10 * (h * a.psi.cos()) + h01 * b.x + h11 * (h * b.psi.cos());
        let y = h00 * a.y + h10 * (h * a.psi.sin()) + h01 * b.y + h11 * (h * b.psi.sin());
        let psi = t * (b.psi - a.psi) + a.psi;
        let kappa = t * (b.kappa - a.kappa) + a.kappa;
        (x, y, psi, kappa)
    }

    /// First and second arc-length derivatives of the interpolated position.
    fn curve_derivatives(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let s = s.clamp(0.0, self.total_length());
        let i = self.segment(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let h = b.s - a.s;
        let t = (s - a.s) / h;
        let t2 = t * t;
        // derivatives of the Hermite basis, divided by h per order to get d/ds
        let d = [(6.0 * t2 - 6.0 * t) / h, 3.0 * t2 - 4.0 * t + 1.0, (6.0 * t - 6.0 * t2) / h, 3.0 * t2 - 2.0 * t];
        let dd = [(12.0 * t - 6.0) / (h * h), (6.0 * t - 4.0) / h, (6.0 - 12.0 * t) / (h * h), (6.0 * t - 2.0) / h];
        let comb = |w: &[f64; 4]| {
            [
                w[0] * a.x + w[1] * a.psi.cos() + w[2] * b.x + w[3] * b.psi.cos(),
                w[0] * a.y + w[1] * a.psi.sin() + w[2] * b.y + w[3] * b.psi.sin(),
            ]
        };
        (comb(&d), comb(&dd))
    }

    /// Unit tangent of the interpolated position curve.
    pub fn tangent(&self, s: f64) -> (f64, f64) {
        let ([dx, dy], _) = self.curve_derivatives(s);
        let n = dx.hypot(dy);
        (dx / n, dy / n)
    }

    /// Point at arc length `s` and signed lateral offset `d`.
    pub fn frenet_to_cartesian(&self, s: f64, d: f64) -> (f64, f64) {
        let p = self.lookup(s);
        let (tx, ty) = self.tangent(s);
        (p.x - d * ty, p.y + d * tx)
    }

    fn dist2(&self, s: f64, x: f64, y: f64) -> f64 {
        let p = self.lookup(s);
        (p.x - x).powi(2) + (p.y - y).powi(2)
    }

    fn golden_section(&self, mut lo: f64, mut hi: f64, x: f64, y: f64) -> f64 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let mut fc = self.dist2(c, x, y);
        let mut fd = self.dist2(d, x, y);
        while hi - lo > 1e-10 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = self.dist2(c, x, y);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = self.dist2(d, x, y);
            }
        }
        0.5 * (lo + hi)
    }

    fn finish_projection(&self, mut s: f64, x: f64, y: f64) -> Projection {
        // the squared distance is flat at the minimum, so golden section alone
        // stalls near sqrt(eps); polish with Newton steps on the foot condition
        let len = self.total_length();
        for _ in 0..3 {
            let p = self.lookup(s);
            let (c1, c2) = self.curve_derivatives(s);
            let (ex, ey) = (x - p.x, y - p.y);
            let denom = c1[0] * c1[0] + c1[1] * c1[1] - ex * c2[0] - ey * c2[1];
            if denom < 0.1 {
                break;
            }
            let next = (s + (ex * c1[0] + ey * c1[1]) / denom).clamp(0.0, len);
            if self.dist2(next, x, y) > self.dist2(s, x, y) {
                break;
            }
            s = next;
        }
        let p = self.lookup(s);
        let (tx, ty) = self.tangent(s);
        Projection {
            s,
            d: -ty * (x - p.x) + tx * (y - p.y),
        }
    }

    /// Closest point on the whole path: coarse 1 m grid, then golden-section
    /// refinement around every grid-local minimum.
    pub fn project(&self, x: f64, y: f64) -> Result<Projection> {
        let len = self.total_length();
        let n = (len / PROJECTION_GRID).ceil() as usize;
        let grid: Vec<f64> = (0..=n).map(|i| (i as f64 * PROJECTION_GRID).min(len)).collect();
        let dist: Vec<f64> = grid.iter().map(|&s| self.dist2(s, x, y)).collect();

        let mut candidates: Vec<(f64, f64)> = Vec::new();
        for i in 0..grid.len() {
            let left_ok = i == 0 || dist[i] <= dist[i - 1];
            let right_ok = i + 1 == grid.len() || dist[i] <= dist[i + 1];
            if left_ok && right_ok {
                let lo = grid[i.saturating_sub(1)];
                let hi = grid[(i + 1).min(grid.len() - 1)];
                let s = self.golden_section(lo, hi, x, y);
                let s = [s, lo, hi]
                    .into_iter()
                    .min_by(|a, b| self.dist2(*a, x, y).total_cmp(&self.dist2(*b, x, y)))
                    .unwrap_or(s);
                candidates.push((s, self.dist2(s, x, y).sqrt()));
            }
        }
        let best = candidates
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::InvalidPath("empty projection grid".into()))?;
        if let Some(other) = candidates.iter().find(|c| {
            (c.1 - best.1).abs() < AMBIGUITY_DISTANCE && (c.0 - best.0).abs() > AMBIGUITY_ARC
        }) {
            return Err(Error::AmbiguousProjection {
                s_a: best.0,
                s_b: other.0,
            });
        }
        Ok(self.finish_projection(best.0, x, y))
    }

    /// Projection restricted to `[s_lo, s_hi]`, used where a good arc-length
    /// guess is already known.
    pub fn project_in_window(&self, x: f64, y: f64, s_lo: f64, s_hi: f64) -> Projection {
        let len = self.total_length();
        let (lo, hi) = (s_lo.clamp(0.0, len), s_hi.clamp(0.0, len));
        let step = 0.5;
        let n = ((hi - lo) / step).ceil().max(1.0) as usize;
        let mut best = (lo, f64::INFINITY);
        for i in 0..=n {
            let s = (lo + i as f64 * step).min(hi);
            let d = self.dist2(s, x, y);
            if d < best.1 {
                best = (s, d);
            }
        }
        let s = self.golden_section((best.0 - step).max(lo), (best.0 + step).min(hi), x, y);
        self.finish_projection(s, x, y)
    }

    /// Frenet coordinates with derivatives for the optimiser. The value comes
    /// from a windowed projection; derivatives follow the implicit function
    /// theorem through one Newton correction evaluated at the converged foot
    /// point, which leaves the value unchanged.
    pub fn frenet_generic<T: Scalar>(&self, x: T, y: T, s_lo: f64, s_hi: f64) -> (T, T) {
        let proj = self.project_in_window(x.re(), y.re(), s_lo, s_hi);
        let foot = self.lookup(proj.s);
        let (c1, c2) = self.curve_derivatives(proj.s);
        let speed = c1[0].hypot(c1[1]);
        let dx = x - foot.x;
        let dy = y - foot.y;
        let denom = (c1[0] * c1[0] + c1[1] * c1[1] - dx.re() * c2[0] - dy.re() * c2[1]).max(1e-3);
        let s = (dx * c1[0] + dy * c1[1]) / denom + proj.s;
        let d = (dy * c1[0] - dx * c1[1]) / speed;
        (s, d)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,X,Y,psi,kappa\n");
        for p in &self.samples {
            let _ = writeln!(out, "{},{},{},{},{}", p.s, p.x, p.y, p.psi, p.kappa);
        }
        out
    }

    pub fn from_csv(text: &str, v_des: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidPath("empty path file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["s", "X", "Y", "psi", "kappa"] {
            return Err(Error::InvalidPath(format!("unexpected header '{header}'")));
        }
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::InvalidPath(format!("row {}: {e}", lineno + 1)))?;
            if vals.len() != 5 {
                return Err(Error::InvalidPath(format!("row {}: expected 5 columns", lineno + 1)));
            }
            samples.push(PathSample {
                s: vals[0],
                x: vals[1],
                y: vals[2],
                psi: vals[3],
                kappa: vals[4],
            });
        }
        Self::new(samples, v_des)
    }
}

impl TrackSpec {
    pub fn new(centerline: ReferencePath, width: f64, r_veh: f64) -> Result<Self> {
        if !(width > 2.0 * r_veh) {
            return Err(Error::InvalidGeometry(format!(
                "track width {width} m must exceed the vehicle diameter {} m",
                2.0 * r_veh
            )));
        }
        Ok(Self { centerline, width })
    }
}

/// Contouring and lag errors of a position against the path point at the
/// progress estimate `theta`.
pub fn contouring_lag_errors<T: Scalar>(x: T, y: T, theta: T, path: &ReferencePath) -> (T, T) {
    let (xt, yt, psit, _) = path.lookup_generic(theta);
    let (s, c) = (psit.sin(), psit.cos());
    let dx = x - xt;
    let dy = y - yt;
    let e_con = s * dx - c * dy;
    let e_lag = -(c * dx) - s * dy;
    (e_con, e_lag)
}

/// Clearance between the vehicle and obstacle circles; negative on overlap.
pub fn v2o_distance_cartesian<T: Scalar>(x: T, y: T, obs: &Obstacle, r_veh: f64) -> T {
    let dx = x - obs.x;
    let dy = y - obs.y;
    (dx * dx + dy * dy).sqrt() - (obs.r + r_veh)
}

/// The same planar metric applied to Frenet coordinates.
pub fn v2o_distance_frenet<T: Scalar>(s_v: T, d_v: T, s_o: f64, d_o: f64, r_obs: f64, r_veh: f64) -> T {
    let ds = s_v - s_o;
    let dd = d_v - d_o;
    (ds * ds + dd * dd).sqrt() - (r_obs + r_veh)
}

/// Clearance of the vehicle circle to the left and right road edges.
pub fn v2e_distance(x: f64, y: f64, track: &TrackSpec, r_veh: f64) -> Result<(f64, f64)> {
    let proj = track.centerline.project(x, y)?;
    Ok(edge_distances(proj.d, track.width, r_veh))
}

/// `(D_left, D_right)` from a signed offset to the track centre.
pub fn edge_distances<T: Scalar>(d: T, width: f64, r_veh: f64) -> (T, T) {
    let half = width / 2.0 - r_veh;
    (-d + half, d + half)
}
