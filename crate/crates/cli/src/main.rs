mod figures;
mod plot;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use mpcc_core::config::Config;
use mpcc_core::mpcc::Mode;
use mpcc_core::scenarios::{build_circular_v2o_study, compute_metrics, study_csv, Metrics, Scenario, StudyRow};
use mpcc_core::sim::{run_scenario, Controller, Scene, SimLog};

use report::{CompareEntry, CompareReport, RunReport, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "mpcc", version, about = "Contouring MPC obstacle avoidance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one controller on the double lane change.
    Run {
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Tabulate the Frenet distance overestimation on circular roads.
    StudyFrenet {
        /// Comma-separated circle radii (m).
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        radii: Vec<f64>,
        /// Lateral obstacle offset from the centreline (m).
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        offset: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate several controllers on the same scenario and overlay them.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_mode)]
        modes: Vec<Mode>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    out: PathBuf,
    /// Leave solve times out of the JSON so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|_| "expected one of mpcc-ca, mpcc-no-ca, frenet-baseline".to_string())
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(String),
    Io(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Diverged(_) => 2,
            _ => 1,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Config(m) => ("config", m),
            Failure::Io(m) => ("io", m),
            Failure::Diverged(m) => ("diverged", m),
        };
        format!("error: {kind}: {}", msg.replace('\n', " "))
    }
}

impl From<mpcc_core::Error> for Failure {
    fn from(e: mpcc_core::Error) -> Self {
        match e {
            mpcc_core::Error::Config(m) => Failure::Config(m),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))
}

fn init_logging() -> Result<(), Failure> {
    let level = match std::env::var("MPCC_LOG_LEVEL") {
        Ok(v) if ["error", "info", "debug"].contains(&v.as_str()) => v,
        Ok(v) => {
            return Err(Failure::Config(format!(
                "MPCC_LOG_LEVEL must be error, info or debug, got '{v}'"
            )))
        }
        Err(_) => "error".into(),
    };
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

struct Loaded {
    config: Config,
    scenario: Scenario,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let config = Config::load(path)?;
    let scenario = config.scenario()?;
    Ok(Loaded { config, scenario })
}

fn simulate(loaded: &Loaded, mode: Mode) -> Result<(SimLog, Metrics), Failure> {
    let mut mpcc = loaded.config.controller;
    mpcc.mode = mode;
    let sc = &loaded.scenario;
    let scene = Scene {
        path: &sc.desired_path,
        track: &sc.track,
        obstacles: &sc.obstacles,
        initial: sc.initial,
        end_arc: sc.end_arc,
    };
    let ctrl = Controller {
        mpcc: &mpcc,
        vehicle: &loaded.config.vehicle,
        tyres: &loaded.config.tyre,
        solver: &loaded.config.solver,
    };
    let log = run_scenario(&scene, &ctrl, &loaded.config.plant_config())?;
    let metrics = compute_metrics(&log, sc, &mpcc.weights)?;
    info!(
        "{mode}: {} steps, outcome {:?}, min D_V2O {:?}, peak beta {:.2} deg",
        metrics.steps, log.outcome, metrics.min_d_v2o, metrics.peak_beta_deg
    );
    Ok((log, metrics))
}

fn write_figures(dir: &Path, loaded: &Loaded, runs: &[(String, &SimLog)]) -> Result<(), Failure> {
    let cfg = &loaded.config;
    write(
        dir,
        "trajectory.svg",
        &figures::trajectory(&loaded.scenario, runs, &cfg.vehicle, &cfg.controller.weights),
    )?;
    write(dir, "states.svg", &figures::states(runs))?;
    write(dir, "gg.svg", &figures::gg(runs, &cfg.vehicle))
}

fn cmd_run(config: &Path, mode: Mode, output: &OutputArgs) -> Result<(), Failure> {
    let loaded = load(config)?;
    let (log, metrics) = simulate(&loaded, mode)?;
    let dir = &output.out;
    create_dir(dir)?;
    let n_obs = loaded.scenario.obstacles.len();
    write(dir, "log.csv", &report::log_csv(&log, n_obs))?;
    let rep = RunReport::new(mode.as_str(), &log, metrics, !output.no_timing);
    if let Some(t) = &rep.timing {
        info!("median solve time {:.2} ms", t.median_solve_ms);
    }
    write(dir, "metrics.json", &report::to_json(&rep))?;
    write_figures(dir, &loaded, &[(mode.to_string(), &log)])?;
    match rep.divergence {
        Some(why) => Err(Failure::Diverged(why)),
        None => Ok(()),
    }
}

fn cmd_study(radii: &[f64], offset: f64, out: &Path) -> Result<(), Failure> {
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Failure::Config(format!("radii must be positive, got {r}")));
    }
    let tables = radii
        .iter()
        .map(|&r| Ok((r, build_circular_v2o_study(r, offset)?)))
        .collect::<Result<Vec<(f64, Vec<StudyRow>)>, Failure>>()?;
    create_dir(out)?;
    for (r, rows) in &tables {
        write(out, &format!("study_r{r}.csv"), &study_csv(rows))?;
    }
    write(out, "overestimation.svg", &figures::overestimation(&tables))
}

/// Labels for the requested modes; repeats get a numeric suffix.
fn labels(modes: &[Mode]) -> Vec<String> {
    modes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let n = modes[..i].iter().filter(|p| *p == m).count();
            if n == 0 {
                m.to_string()
            } else {
                format!("{m}_{}", n + 1)
            }
        })
        .collect()
}

fn cmd_compare(config: &Path, modes: &[Mode], output: &OutputArgs) -> Result<(), Failure> {
    if modes.len() < 2 {
        return Err(Failure::Usage("compare needs at least two modes".into()));
    }
    let loaded = load(config)?;
    let results: Vec<Result<(SimLog, Metrics), Failure>> = std::thread::scope(|s| {
        let handles: Vec<_> = modes.iter().map(|&m| s.spawn({
            let loaded = &loaded;
            move || simulate(loaded, m)
        })).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Failure::Config("simulation thread panicked".into()))))
            .collect()
    });

    let labels = labels(modes);
    let mut entries = Vec::new();
    let mut runs = Vec::new();
    let mut completed = 0;
    for ((label, mode), res) in labels.iter().zip(modes).zip(&results) {
        let entry = match res {
            Ok((log, metrics)) => {
                let (outcome, divergence) = report::outcome_fields(&log.outcome);
                if divergence.is_none() {
                    completed += 1;
                }
                runs.push((label.clone(), log));
                CompareEntry {
                    label: label.clone(),
                    mode: mode.to_string(),
                    outcome,
                    divergence,
                    error: None,
                    metrics: Some(metrics.clone()),
                    timing: if output.no_timing { None } else { report::Timing::from_log(log) },
                }
            }
            Err(e) => {
                warn!("{label} failed: {}", e.line());
                CompareEntry {
                    label: label.clone(),
                    mode: mode.to_string(),
                    outcome: "failed",
                    divergence: None,
                    error: Some(e.line()),
                    metrics: None,
                    timing: None,
                }
            }
        };
        entries.push(entry);
    }

    let dir = &output.out;
    create_dir(dir)?;
    let n_obs = loaded.scenario.obstacles.len();
    write(dir, "compare.csv", &report::compare_csv(&runs, n_obs))?;
    write(
        dir,
        "compare.json",
        &report::to_json(&CompareReport {
            schema_version: SCHEMA_VERSION,
            runs: entries,
        }),
    )?;
    write_figures(dir, &loaded, &runs)?;
    if completed == 0 {
        return Err(Failure::Diverged("no mode completed".into()));
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config, mode, output } => cmd_run(config, *mode, output),
        Command::StudyFrenet { radii, offset, out } => cmd_study(radii, *offset, out),
        Command::Compare { config, modes, output } => cmd_compare(config, modes, output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                Failure::Usage("expected a subcommand: run, study-frenet or compare".into())
            } else {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("invalid arguments");
                Failure::Usage(first.trim_start_matches("error: ").to_string())
            };
            eprintln!("{}", f.line());
            return ExitCode::from(f.code());
        }
    };
    let result = init_logging().and_then(|_| dispatch(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code())
        }
    }
}
