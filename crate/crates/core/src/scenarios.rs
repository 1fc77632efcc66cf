//! Scenario construction and run metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpcc::MpccWeights;
use crate::path_geometry::{
    v2o_distance_cartesian, v2o_distance_frenet, Obstacle, PathSample, ReferencePath, TrackSpec,
};
use crate::sim::SimLog;
use crate::vehicle_model::{VehicleParams, VehicleState};

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub track: TrackSpec,
    pub desired_path: ReferencePath,
    pub obstacles: Vec<Obstacle>,
    pub initial: VehicleState,
    pub v_des: f64,
    /// Distance travelled at which a run is complete (m).
    pub end_arc: f64,
}

impl Scenario {
    /// Initial state, obstacles and desired path must lie inside the track.
    pub fn validate(&self, r_veh: f64) -> Result<()> {
        let centre = &self.track.centerline;
        let half = self.track.width / 2.0;
        let p0 = centre.project(self.initial.x, self.initial.y)?;
        if p0.d.abs() + r_veh > half {
            return Err(Error::InvalidGeometry(format!(
                "initial state is {:.2} m off the centre, beyond the track",
                p0.d.abs()
            )));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let p = centre.project(o.x, o.y)?;
            if p.d.abs() + o.r > half {
                return Err(Error::InvalidGeometry(format!("obstacle {i} extends beyond the track")));
            }
        }
        for s in self.desired_path.samples() {
            let p = centre.project(s.x, s.y)?;
            if p.d.abs() > half {
                return Err(Error::InvalidGeometry(format!(
                    "desired path leaves the track at s = {:.1} m",
                    s.s
                )));
            }
        }
        if !(self.end_arc > 0.0 && self.end_arc <= self.desired_path.total_length()) {
            return Err(Error::InvalidGeometry("end of run lies beyond the desired path".into()));
        }
        Ok(())
    }
}

/// Geometry knobs of the double lane change. The road is straight along +X
/// with its centre on `Y = 0`; the right lane is at negative `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoubleLaneChange {
    /// Length of the scored part of the road (m).
    pub road_length: f64,
    /// Extra straight road after the scored part so the horizon stays covered (m).
    pub run_out: f64,
    pub lane_width: f64,
    pub obstacle_radius: f64,
    /// Arc positions of the right-lane and left-lane obstacles (m).
    pub obstacle_s: [f64; 2],
    pub v_des: f64,
    /// Lateral distance between the desired path and each obstacle centre
    /// where the path passes it (m).
    pub clearance: f64,
    /// Length of each smooth-step transition (m).
    pub transition_length: f64,
}

impl Default for DoubleLaneChange {
    fn default() -> Self {
        Self {
            road_length: 200.0,
            run_out: 60.0,
            lane_width: 3.5,
            obstacle_radius: 1.0,
            obstacle_s: [90.0, 125.0],
            v_des: 17.0,
            clearance: 1.6,
            transition_length: 30.0,
        }
    }
}

/// Quintic smooth step on `[0, 1]` and its first two derivatives.
fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let t2 = t * t;
    let t3 = t2 * t;
    (
        t3 * (10.0 - 15.0 * t + 6.0 * t2),
        30.0 * t2 * (1.0 - t).powi(2),
        60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
    )
}

/// Lateral profile built from blends between plateaus: `(x_start, x_end, y_from, y_to)`.
#[derive(Debug, Clone)]
struct LateralProfile {
    y0: f64,
    blends: Vec<(f64, f64, f64)>,
}

impl LateralProfile {
    /// `y, dy/dx, d2y/dx2`
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let mut y = (self.y0, 0.0, 0.0);
        let mut level = self.y0;
        for &(a, b, target) in &self.blends {
            let l = b - a;
            let (h, dh, ddh) = smoothstep((x - a) / l);
            let jump = target - level;
            y.0 += jump * h;
            y.1 += jump * dh / l;
            y.2 += jump * ddh / (l * l);
            level = target;
        }
        y
    }
}

/// Simpson arc length of `y(x)` between `a` and `b`.
fn arc_length(profile: &LateralProfile, a: f64, b: f64) -> f64 {
    let n = 16;
    let h = (b - a) / n as f64;
    let f = |x: f64| (1.0 + profile.eval(x).1.powi(2)).sqrt();
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn graph_path(profile: &LateralProfile, length: f64, dx: f64, v_des: f64) -> Result<ReferencePath> {
    let n = (length / dx).ceil() as usize;
    let mut s = 0.0;
    let mut samples = Vec::with_capacity(n + 1);
    let mut x_prev = 0.0;
    for i in 0..=n {
        let x = (i as f64 * dx).min(length);
        if i > 0 {
            s += arc_length(profile, x_prev, x);
        }
        let (y, dy, ddy) = profile.eval(x);
        samples.push(PathSample {
            s,
            x,
            y,
            psi: dy.atan(),
            kappa: ddy / (1.0 + dy * dy).powf(1.5),
        });
        x_prev = x;
    }
    ReferencePath::new(samples, v_des)
}

/// Lateral gap the vehicle needs beside an obstacle: its own width plus the
/// obstacle safety distance.
pub fn corridor_minimum(r_veh: f64, d_sft_obs: f64) -> f64 {
    2.0 * r_veh + d_sft_obs
}

/// Straight two-lane road with one obstacle per lane. The desired path
/// starts in the right lane, passes the first obstacle on its left and the
/// second on its right at `clearance` from their centres, then returns to
/// the right lane.
pub fn build_double_lane_change(
    knobs: &DoubleLaneChange,
    vehicle: &VehicleParams,
    d_sft_obs: f64,
) -> Result<Scenario> {
    let k = knobs;
    let [s1, s2] = k.obstacle_s;
    let l = k.transition_length;
    let checks = [
        (k.lane_width > 0.0, "lane_width must be positive"),
        (k.obstacle_radius > 0.0, "obstacle_radius must be positive"),
        (k.v_des > 1.0, "v_des must exceed 1 m/s"),
        (k.clearance > 0.0, "clearance must be positive"),
        (l > 0.0, "transition_length must be positive"),
        (k.run_out >= 0.0, "run_out must be non-negative"),
        (s1 - l >= 10.0, "the first transition must start at least 10 m into the road"),
        (s2 > s1, "obstacles must be ordered along the road"),
        (s2 + l <= k.road_length, "the last transition must end on the road"),
    ];
    for (ok, msg) in checks {
        if !ok {
            return Err(Error::InvalidGeometry(msg.into()));
        }
    }

    let width = 2.0 * k.lane_width;
    let half = k.lane_width;
    let right = -k.lane_width / 2.0;
    let left = k.lane_width / 2.0;
    let need = corridor_minimum(vehicle.r_veh, d_sft_obs);
    // passing the right-lane obstacle on its left, the left-lane one on its right
    let gaps = [half - (right + k.obstacle_radius), (left - k.obstacle_radius) + half];
    for (i, gap) in gaps.iter().enumerate() {
        if *gap < need {
            return Err(Error::InvalidGeometry(format!(
                "obstacle {i} leaves a {gap:.2} m corridor, {need:.2} m needed"
            )));
        }
    }

    let total = k.road_length + k.run_out;
    let centre = ReferencePath::straight(0.0, 0.0, 0.0, total, 0.5, k.v_des)?;
    let track = TrackSpec::new(centre, width, vehicle.r_veh)?;
    let profile = LateralProfile {
        y0: right,
        blends: vec![
            (s1 - l, s1, right + k.clearance),
            (s1, s2, left - k.clearance),
            (s2, s2 + l, right),
        ],
    };
    let desired_path = graph_path(&profile, total, 0.5, k.v_des)?;
    let obstacles = vec![
        Obstacle {
            x: s1,
            y: right,
            r: k.obstacle_radius,
        },
        Obstacle {
            x: s2,
            y: left,
            r: k.obstacle_radius,
        },
    ];
    let initial = VehicleState {
        x: 0.0,
        y: right,
        vx: k.v_des,
        fx: vehicle.c_drag * k.v_des * k.v_des,
        ..Default::default()
    };
    let scenario = Scenario {
        track,
        desired_path,
        obstacles,
        initial,
        v_des: k.v_des,
        end_arc: k.road_length,
    };
    scenario.validate(vehicle.r_veh)?;
    Ok(scenario)
}

/// Settings of the circular-road distance study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircularStudy {
    /// Arc position of the obstacle (m).
    pub obstacle_s: f64,
    /// Vehicle position increment (m).
    pub step: f64,
    pub obstacle_radius: f64,
    pub r_veh: f64,
}

impl Default for CircularStudy {
    fn default() -> Self {
        Self {
            obstacle_s: 30.0,
            step: 0.5,
            obstacle_radius: 1.0,
            r_veh: VehicleParams::default().r_veh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    /// Vehicle arc position (m).
    pub s: f64,
    /// Arc separation to the obstacle (m).
    pub delta_s: f64,
    pub d_frenet: f64,
    pub d_cartesian: f64,
}

impl StudyRow {
    pub fn overestimation(&self) -> f64 {
        self.d_frenet - self.d_cartesian
    }
}

impl CircularStudy {
    /// Drive along the centreline of a circle of `radius` towards an obstacle
    /// displaced `offset` to the left of the centreline, recording both
    /// distance metrics.
    pub fn table(&self, radius: f64, offset: f64) -> Result<Vec<StudyRow>> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
        }
        if !(self.step > 0.0 && self.obstacle_s > 0.0) {
            return Err(Error::InvalidParameter("study step and obstacle position must be positive".into()));
        }
        if self.obstacle_s >= std::f64::consts::PI * radius {
            return Err(Error::InvalidParameter(format!(
                "obstacle at s = {} m is past half of the {radius} m circle",
                self.obstacle_s
            )));
        }
        let path = ReferencePath::circle(radius, self.obstacle_s + 1.0, self.step.min(0.5), 10.0)?;
        let (ox, oy) = path.frenet_to_cartesian(self.obstacle_s, offset);
        let obstacle = Obstacle {
            x: ox,
            y: oy,
            r: self.obstacle_radius,
        };
        let n = (self.obstacle_s / self.step).floor() as usize;
        Ok((0..=n)
            .map(|i| {
                let s = i as f64 * self.step;
                let p = path.lookup(s);
                StudyRow {
                    s,
                    delta_s: self.obstacle_s - s,
                    d_frenet: v2o_distance_frenet(s, 0.0, self.obstacle_s, offset, obstacle.r, self.r_veh),
                    d_cartesian: v2o_distance_cartesian(p.x, p.y, &obstacle, self.r_veh),
                }
            })
            .collect())
    }
}

/// The circular study with default settings.
pub fn build_circular_v2o_study(radius: f64, offset: f64) -> Result<Vec<StudyRow>> {
    CircularStudy::default().table(radius, offset)
}

pub const STUDY_CSV_HEADER: &str = "s,delta_s,d_frenet,d_cartesian,overestimation";

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from(STUDY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.3},{:.3},{:.9},{:.9},{:.9}\n",
            r.s,
            r.delta_s,
            r.d_frenet,
            r.d_cartesian,
            r.overestimation()
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Per obstacle (m).
    pub min_d_v2o: Vec<f64>,
    /// Over both edges (m).
    pub min_d_v2e: f64,
    pub peak_beta_deg: f64,
    pub min_vx: f64,
    pub rms_e_con: f64,
    pub rms_e_vel: f64,
    pub collision: bool,
    /// Per obstacle: clearance fell below the obstacle safety distance.
    pub unsafe_obstacle: Vec<bool>,
    /// Edge clearance fell below the edge safety distance.
    pub unsafe_edge: bool,
    pub steps: usize,
    pub fallback_steps: usize,
    pub clipped_steps: usize,
    pub diverged: bool,
}

pub fn compute_metrics(log: &SimLog, scenario: &Scenario, weights: &MpccWeights) -> Result<Metrics> {
    if log.records.is_empty() {
        return Err(Error::InvalidParameter("cannot compute metrics of an empty log".into()));
    }
    let n = log.records.len() as f64;
    let mut min_d_v2o = vec![f64::INFINITY; scenario.obstacles.len()];
    let mut min_d_v2e = f64::INFINITY;
    let mut peak_beta: f64 = 0.0;
    let mut min_vx = f64::INFINITY;
    let mut sum_con = 0.0;
    let mut sum_vel = 0.0;
    for r in &log.records {
        for (m, d) in min_d_v2o.iter_mut().zip(&r.d_v2o) {
            *m = m.min(*d);
        }
        min_d_v2e = min_d_v2e.min(r.d_v2e.0.min(r.d_v2e.1));
        peak_beta = peak_beta.max(r.beta.abs());
        min_vx = min_vx.min(r.state.vx);
        sum_con += r.e_con * r.e_con;
        sum_vel += (r.state.speed() - scenario.v_des).powi(2);
    }
    Ok(Metrics {
        collision: min_d_v2o.iter().any(|&d| d < 0.0),
        unsafe_obstacle: min_d_v2o.iter().map(|&d| d < weights.d_sft_obs).collect(),
        unsafe_edge: min_d_v2e < weights.d_sft_edge,
        min_d_v2o,
        min_d_v2e,
        peak_beta_deg: peak_beta.to_degrees(),
        min_vx,
        rms_e_con: (sum_con / n).sqrt(),
        rms_e_vel: (sum_vel / n).sqrt(),
        steps: log.records.len(),
        fallback_steps: log.records.iter().filter(|r| r.fallback).count(),
        clipped_steps: log.records.iter().filter(|r| r.clipped).count(),
        diverged: log.diverged(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_is_c2_at_the_ends() {
        assert_eq!(smoothstep(0.0), (0.0, 0.0, 0.0));
        assert_eq!(smoothstep(1.0), (1.0, 0.0, 0.0));
        let (h, dh, ddh) = smoothstep(0.5);
        assert!((h - 0.5).abs() < 1e-15 && dh > 0.0 && ddh.abs() < 1e-12);
    }

    #[test]
    fn default_double_lane_change_builds() {
        let s = build_double_lane_change(&DoubleLaneChange::default(), &VehicleParams::default(), 1.5).unwrap();
        assert_eq!(s.obstacles.len(), 2);
        assert!(s.obstacles[0].y < 0.0 && s.obstacles[1].y > 0.0);
    }

    #[test]
    fn circular_study_rejects_bad_radius() {
        assert!(build_circular_v2o_study(0.0, 0.0).is_err());
        assert!(build_circular_v2o_study(-3.0, 0.0).is_err());
    }
}
