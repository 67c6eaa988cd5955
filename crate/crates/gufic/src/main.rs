use clap::{Parser, Subcommand};
use gufic::audit::{passivity_audit, write_margins_csv, write_report, DEFAULT_TOLERANCE};
use gufic::config::{ControllerKind, Scenario};
use gufic::plot::{render_force_comparison, render_plots};
use gufic::sim::{compare, simulate};
use gufic::simlog::SimLog;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_SIM: u8 = 2;
const EXIT_AUDIT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gufic",
    about = "Force-impedance control simulation on SE(3) with energy-tank passivity audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write log, plots, and audit report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the controller from the config (gufic | gic | naive).
        #[arg(long)]
        controller: Option<ControllerKind>,
        /// Override the run duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory (default: config `output_dir` or `runs/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario as gufic and gic and write an overlay force plot.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check the passivity inequality over a finished log.
    Audit {
        #[arg(long)]
        log: PathBuf,
        /// Tolerance in joules.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Check a scenario config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("GUFIC_LOG_LEVEL", "warn"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, controller, duration, out } => run(config, controller, duration, out),
        Command::Compare { config, out } => run_compare(config, out),
        Command::Audit { log, tol } => run_audit(log, tol.unwrap_or(DEFAULT_TOLERANCE)),
        Command::Validate { config } => validate(config),
    }
}

fn load_scenario(path: &PathBuf) -> Result<Scenario, ExitCode> {
    Scenario::load(path).map_err(|e| {
        eprintln!("config error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn write_outputs(
    log: &SimLog,
    outdir: &PathBuf,
    tolerance: f64,
) -> Result<gufic::audit::AuditReport, ExitCode> {
    let fail = |e: String| {
        eprintln!("output error: {e}");
        ExitCode::from(EXIT_SIM)
    };
    std::fs::create_dir_all(outdir).map_err(|e| fail(e.to_string()))?;
    log.write_csv(outdir.join("log.csv")).map_err(|e| fail(e.to_string()))?;
    render_plots(log, outdir.join("plots")).map_err(|e| fail(e.to_string()))?;
    let report = passivity_audit(log, tolerance).map_err(|e| fail(e.to_string()))?;
    write_report(&report, outdir.join("audit.txt")).map_err(|e| fail(e.to_string()))?;
    write_margins_csv(log, outdir.join("margins.csv")).map_err(|e| fail(e.to_string()))?;
    Ok(report)
}

fn run(
    config: PathBuf,
    controller: Option<ControllerKind>,
    duration: Option<f64>,
    out: Option<PathBuf>,
) -> ExitCode {
    let mut scenario = match load_scenario(&config) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Some(kind) = controller {
        scenario = scenario.with_controller(kind);
    }
    if let Some(d) = duration {
        scenario = scenario.with_duration(d);
    }
    let outdir = out
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&scenario.name));

    let started = std::time::Instant::now();
    let log = match simulate(&scenario) {
        Ok(log) => log,
        Err(e) => {
            eprintln!("simulation error: {e}");
            return ExitCode::from(EXIT_SIM);
        }
    };
    println!(
        "simulated `{}` ({} controller): {} steps in {:.2} s",
        scenario.name,
        scenario.controller,
        log.rows.len(),
        started.elapsed().as_secs_f64()
    );
    let report = match write_outputs(&log, &outdir, DEFAULT_TOLERANCE) {
        Ok(r) => r,
        Err(code) => return code,
    };
    print!("{}", report.summary());
    println!("outputs in {}", outdir.display());
    if scenario.controller == ControllerKind::Gufic && !report.passed {
        return ExitCode::from(EXIT_AUDIT);
    }
    ExitCode::SUCCESS
}

fn run_compare(config: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let scenario = match load_scenario(&config) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let outdir = out
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_compare", scenario.name)));
    let (gufic_log, gic_log) = match compare(&scenario) {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("simulation error: {e}");
            return ExitCode::from(EXIT_SIM);
        }
    };
    let report = match write_outputs(&gufic_log, &outdir.join("gufic"), DEFAULT_TOLERANCE) {
        Ok(r) => r,
        Err(code) => return code,
    };
    if let Err(code) = write_outputs(&gic_log, &outdir.join("gic"), DEFAULT_TOLERANCE) {
        return code;
    }
    if let Err(e) = render_force_comparison(&gufic_log, &gic_log, outdir.join("plots")) {
        eprintln!("output error: {e}");
        return ExitCode::from(EXIT_SIM);
    }
    let force_err = |log: &SimLog| -> f64 {
        let horizon = log.rows.last().map(|r| r.t).unwrap_or(0.0) * 0.75;
        let tail: Vec<&_> = log.rows.iter().filter(|r| r.t >= horizon).collect();
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(|r| (-r.fe_sensed.0[2] - r.fd.0[2]).abs()).sum::<f64>() / tail.len() as f64
    };
    println!(
        "steady-state |force error|: gufic {:.3} N, gic {:.3} N",
        force_err(&gufic_log),
        force_err(&gic_log)
    );
    print!("gufic {}", report.summary());
    println!("outputs in {}", outdir.display());
    if !report.passed {
        return ExitCode::from(EXIT_AUDIT);
    }
    ExitCode::SUCCESS
}

fn run_audit(log_path: PathBuf, tolerance: f64) -> ExitCode {
    let log = match SimLog::read_csv(&log_path) {
        Ok(log) => log,
        Err(e) => {
            eprintln!("log error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match passivity_audit(&log, tolerance) {
        Ok(report) => {
            print!("{}", report.summary());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_AUDIT)
            }
        }
        Err(e) => {
            eprintln!("audit error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn validate(config: PathBuf) -> ExitCode {
    match Scenario::load(&config) {
        Ok(s) => {
            println!(
                "ok: `{}` ({} controller, {:.1} s at {:.0} Hz, {} surface)",
                s.name,
                s.controller,
                s.duration,
                1.0 / s.timestep,
                match &s.surface {
                    None => "no",
                    Some(gufic::environment::SurfaceModel::Plane { .. }) => "plane",
                    Some(gufic::environment::SurfaceModel::Sphere { .. }) => "sphere",
                }
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
