use mpcc_core::mpcc::MpccWeights;
use mpcc_core::scenarios::{Scenario, StudyRow};
use mpcc_core::sim::SimLog;
use mpcc_core::vehicle_model::VehicleParams;

use crate::plot::{render, Panel, Series, Shape, PALETTE};

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Plan view: track edges, obstacles with their unsafe bands, the desired
/// path and each driven path.
pub fn trajectory(scenario: &Scenario, runs: &[(String, &SimLog)], vehicle: &VehicleParams, w: &MpccWeights) -> String {
    let cl = scenario.track.centerline.samples();
    let half = scenario.track.width / 2.0;
    let edge = |sign: f64| -> Vec<(f64, f64)> {
        cl.iter()
            .map(|p| (p.x - sign * half * p.psi.sin(), p.y + sign * half * p.psi.cos()))
            .collect()
    };
    let mut series = vec![
        Series::line("track edge", edge(1.0), "#555555"),
        Series::line("", edge(-1.0), "#555555"),
        Series::line(
            "desired path",
            scenario.desired_path.samples().iter().map(|p| (p.x, p.y)).collect(),
            "#999999",
        )
        .dashed(),
    ];
    for (i, (label, log)) in runs.iter().enumerate() {
        series.push(Series::line(
            label.as_str(),
            log.records.iter().map(|r| (r.state.x, r.state.y)).collect(),
            color(i),
        ));
    }
    let mut shapes = Vec::new();
    // edge unsafe bands: the vehicle centre closer than r_veh + D_sft to an edge
    let inner = vehicle.r_veh + w.d_sft_edge;
    let (x0, x1) = (cl[0].x, cl[cl.len() - 1].x);
    for (a, b) in [(half - inner, half), (-half, -half + inner)] {
        shapes.push(Shape::Band {
            x0,
            x1,
            y0: a,
            y1: b,
            fill: "#f6e3b4".into(),
        });
    }
    for o in &scenario.obstacles {
        shapes.push(Shape::Circle {
            cx: o.x,
            cy: o.y,
            r: o.r + vehicle.r_veh + w.d_sft_obs,
            fill: "#fbe0e0".into(),
            stroke: "#d62728".into(),
            dashed: true,
        });
        shapes.push(Shape::Circle {
            cx: o.x,
            cy: o.y,
            r: o.r,
            fill: "#444444".into(),
            stroke: "#000000".into(),
            dashed: false,
        });
    }
    render(&[Panel {
        title: "Plan view".into(),
        x_label: "X (m)".into(),
        y_label: "Y (m)".into(),
        series,
        shapes,
        equal_aspect: false,
    }])
}

/// vx, sideslip, steering and force against travelled distance.
pub fn states(runs: &[(String, &SimLog)]) -> String {
    type Get = fn(&mpcc_core::sim::LogRecord) -> f64;
    let panels: [(&str, &str, Get); 4] = [
        ("Speed", "vx (m/s)", |r| r.state.vx),
        ("Sideslip", "beta (deg)", |r| r.beta.to_degrees()),
        ("Steering", "delta (deg)", |r| r.state.delta.to_degrees()),
        ("Longitudinal force", "Fx (kN)", |r| r.state.fx / 1e3),
    ];
    let panels: Vec<Panel> = panels
        .iter()
        .map(|(title, y_label, get)| Panel {
            title: title.to_string(),
            x_label: "s (m)".into(),
            y_label: y_label.to_string(),
            series: runs
                .iter()
                .enumerate()
                .map(|(i, (label, log))| {
                    Series::line(
                        if runs.len() > 1 { label.as_str() } else { "" },
                        log.records.iter().map(|r| (r.state.theta, get(r))).collect(),
                        color(i),
                    )
                })
                .collect(),
            ..Default::default()
        })
        .collect();
    render(&panels)
}

/// Lateral against longitudinal acceleration with the friction circle.
pub fn gg(runs: &[(String, &SimLog)], vehicle: &VehicleParams) -> String {
    let a = vehicle.mu * vehicle.g;
    let mut series: Vec<Series> = runs
        .iter()
        .enumerate()
        .map(|(i, (label, log))| {
            Series::line(
                label.as_str(),
                log.records.iter().skip(1).map(|r| (r.ay, r.ax)).collect(),
                color(i),
            )
            .scatter()
        })
        .collect();
    series.push(Series::line(
        "mu g",
        (0..=120)
            .map(|k| {
                let t = k as f64 / 120.0 * std::f64::consts::TAU;
                (a * t.cos(), a * t.sin())
            })
            .collect(),
        "#555555",
    ));
    render(&[Panel {
        title: "G-G diagram".into(),
        x_label: "ay (m/s^2)".into(),
        y_label: "ax (m/s^2)".into(),
        series,
        shapes: Vec::new(),
        equal_aspect: true,
    }])
}

/// Distance overestimation against arc-length separation, one curve per radius.
pub fn overestimation(tables: &[(f64, Vec<StudyRow>)]) -> String {
    let series = tables
        .iter()
        .enumerate()
        .map(|(i, (radius, rows))| {
            Series::line(
                format!("R = {radius} m"),
                rows.iter().map(|r| (r.delta_s, r.overestimation())).collect(),
                color(i),
            )
        })
        .collect();
    render(&[Panel {
        title: "Frenet distance overestimation".into(),
        x_label: "arc separation to obstacle (m)".into(),
        y_label: "D_frenet - D_cartesian (m)".into(),
        series,
        ..Default::default()
    }])
}
