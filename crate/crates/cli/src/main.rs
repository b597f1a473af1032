use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aic_core::experiments::{
    builtin_robot, compare_with_traces, export_trace, run_with_polynomials, scenario_polynomials, RunOutput,
};
use aic_core::model::{fit_model_polynomials, load_robot, FitOptions};
use aic_core::{ControllerKind, Error, MusculoskeletalModel, Scenario};
use clap::{Parser, Subcommand};
use serde::Serialize;

/// Log filter variable, e.g. `AIC_LOG=debug`.
const LOG_ENV: &str = "AIC_LOG";

#[derive(Parser)]
#[command(name = "aic", version, about = "Tendon-driven arm simulation with antagonist inhibition control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one controller on a scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        controller: ControllerKind,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several controllers on the same perturbed plant.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated, at least two, e.g. `jaic,msc`.
        #[arg(long, value_delimiter = ',', required = true)]
        controllers: Vec<ControllerKind>,
        /// Defaults to the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit muscle-length polynomials and write a cache file.
    Fit {
        /// Robot TOML file, or `builtin:<name>`.
        #[arg(long)]
        robot: String,
        #[arg(long, default_value_t = FitOptions::default().degree)]
        degree: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// Input files that cannot be read or parsed are the caller's problem.
fn input<T>(r: aic_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match e {
        Error::Io { .. } | Error::Json(_) => Failure::Validation(e.to_string()),
        e => e.into(),
    })
}

fn runtime(context: &str) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(runtime(&path.display().to_string()))
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    controller: ControllerKind,
    seed: u64,
    perturbations: &'a [aic_core::plant::ViaPointPerturbation],
    metrics: &'a aic_core::Metrics,
}

fn summary<'a>(scenario: &'a Scenario, out: &'a RunOutput) -> RunSummary<'a> {
    RunSummary {
        scenario: &scenario.name,
        controller: out.kind,
        seed: out.seed,
        perturbations: &out.perturbations,
        metrics: &out.metrics,
    }
}

fn print_metrics(out: &RunOutput) {
    let m = &out.metrics;
    let settle: Vec<String> = m.settle_errors_deg.iter().map(|e| format!("{e:.2}")).collect();
    println!(
        "{:<5} max tension {:6.2} kgf  settle [{}] deg  slack {:.3}  co-contraction {:5.2} kgf  peak {:5.2} C",
        out.kind.as_str(),
        m.max_tension,
        settle.join(", "),
        m.slack_fraction,
        m.co_contraction_index,
        m.peak_temperature
    );
}

fn run(scenario: &Path, kind: ControllerKind, seed: u64, out_dir: &Path) -> Result<(), Failure> {
    let s = input(Scenario::load(scenario))?.with_controller(kind).with_seed(seed);
    let polys = input(scenario_polynomials(&s))?;
    log::info!("running `{}` with {kind}, seed {seed}", s.name);
    let out = run_with_polynomials(&s, &polys)?;
    fs::create_dir_all(out_dir).map_err(runtime(&out_dir.display().to_string()))?;
    export_trace(&out.trace, &out_dir.join("trace.csv"))?;
    write_json(&out_dir.join("summary.json"), &summary(&s, &out))?;
    print_metrics(&out);
    Ok(())
}

fn compare(scenario: &Path, kinds: &[ControllerKind], seed: Option<u64>, out_dir: &Path) -> Result<(), Failure> {
    let mut s = input(Scenario::load(scenario))?;
    if let Some(seed) = seed {
        s = s.with_seed(seed);
    }
    let polys = input(scenario_polynomials(&s))?;
    log::info!("comparing {} controllers on `{}`", kinds.len(), s.name);
    let (table, runs) = compare_with_traces(&s, &polys, kinds)?;
    fs::create_dir_all(out_dir).map_err(runtime(&out_dir.display().to_string()))?;
    for r in &runs {
        export_trace(&r.trace, &out_dir.join(format!("{}.csv", r.kind)))?;
        print_metrics(r);
    }
    write_json(&out_dir.join("comparison.json"), &table)?;
    for r in table.ratios.iter().filter(|r| r.numerator == kinds[0]) {
        println!("max tension {}/{}: {:.3}", r.numerator, r.denominator, r.max_tension_ratio);
    }
    Ok(())
}

fn robot(spec: &str) -> Result<MusculoskeletalModel, Failure> {
    match spec.strip_prefix("builtin:") {
        Some(name) => match builtin_robot(name) {
            Some(m) => input(m),
            None => Err(Failure::Validation(format!("no builtin robot `{name}`"))),
        },
        None => input(load_robot(Path::new(spec))),
    }
}

fn fit(spec: &str, degree: u32, out: &Path) -> Result<(), Failure> {
    let model = robot(spec)?;
    if degree == 0 {
        return Err(Failure::Validation("degree must be at least 1".into()));
    }
    let opts = FitOptions {
        degree,
        ..FitOptions::default()
    };
    log::info!("fitting `{}` at degree {degree}", model.name);
    let polys = fit_model_polynomials(&model, &opts)?;
    polys.save(out)?;
    println!(
        "{}: {} muscles, max residual rms {:.3e} m -> {}",
        model.name,
        polys.muscle_count(),
        polys.max_residual_rms(),
        out.display()
    );
    Ok(())
}

fn validate(scenario: &Path) -> Result<(), Failure> {
    let s = input(Scenario::load(scenario))?;
    println!(
        "ok: `{}` on {} ({} joints, {} muscles), {} waypoints, {:.1} s",
        s.name,
        s.model.name,
        s.model.dof(),
        s.model.muscle_count(),
        s.waypoints.len(),
        s.duration
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            controller,
            seed,
            out,
        } => run(scenario, *controller, *seed, out),
        Command::Compare {
            scenario,
            controllers,
            seed,
            out,
        } => compare(scenario, controllers, *seed, out),
        Command::Fit { robot, degree, out } => fit(robot, *degree, out),
        Command::Validate { scenario } => validate(scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
