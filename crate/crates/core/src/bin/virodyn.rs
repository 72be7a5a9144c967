use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use virodyn_core::harness::{run_scenario, sweep_csv, HarnessError, RunConfig, Scenario};
use virodyn_core::model::{find_certificate, threshold_holds, ModelParams, U0Bounds};

/// Simulator and verification harness for a haptotactic virotherapy model.
///
/// Exit status: 0 all checks passed, 1 a check failed, 2 configuration
/// error, 3 solver abort.
#[derive(Parser)]
#[command(name = "virodyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario named in a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a configuration key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a (beta, eps-scale) sweep and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Test the small-data threshold for given bounds on u0.
    CheckThreshold {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        u0_min: f64,
        #[arg(long)]
        u0_max: f64,
    },
    /// Search for a smallness certificate and print its report.
    Certificate {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        u0_min: f64,
        #[arg(long)]
        u0_max: f64,
    },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run { config, set } => run(&config, &set, None),
        Command::Sweep { config, set } => run(&config, &set, Some(Scenario::Sweep)),
        Command::CheckThreshold { beta, u0_min, u0_max } => check_threshold(beta, u0_min, u0_max),
        Command::Certificate { beta, mu, u0_min, u0_max } => certificate(beta, mu, u0_min, u0_max),
    };
    ExitCode::from(code as u8)
}

fn fail(e: &HarnessError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn run(config: &Path, set: &[String], force: Option<Scenario>) -> i32 {
    let mut overrides = set.to_vec();
    if let Some(s) = force {
        overrides.push(format!("scenario={}", s.name()));
    }
    let cfg = match RunConfig::from_file(config, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run_scenario(&cfg) {
        Ok(report) => {
            if report.scenario == Scenario::Sweep {
                print!("{}", sweep_csv(&report.sweep));
            }
            print!("{}", report.summary());
            println!("output_dir={}", cfg.output_dir.display());
            report.exit_code()
        }
        Err(e) => fail(&e),
    }
}

fn u0_bounds(min: f64, max: f64) -> Result<U0Bounds, i32> {
    U0Bounds::new(min, max).map_err(|e| {
        eprintln!("error: {e}");
        2
    })
}

fn check_threshold(beta: f64, u0_min: f64, u0_max: f64) -> i32 {
    let u0 = match u0_bounds(u0_min, u0_max) {
        Ok(u) => u,
        Err(c) => return c,
    };
    if !(beta > 0.0 && beta.is_finite()) {
        eprintln!("error: beta must be positive and finite, got {beta}");
        return 2;
    }
    let ok = threshold_holds(beta, u0);
    println!("lhs={:.16e}", beta * u0.max_or_one());
    println!("rhs={:.16e}", u0.threshold_rhs());
    println!("threshold_ok={ok}");
    if ok {
        0
    } else {
        1
    }
}

fn certificate(beta: f64, mu: f64, u0_min: f64, u0_max: f64) -> i32 {
    let u0 = match u0_bounds(u0_min, u0_max) {
        Ok(u) => u,
        Err(c) => return c,
    };
    let params = match ModelParams::new(mu, beta, 1.0) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cert = find_certificate(&params, u0, &Default::default());
    print!("{}", cert.report());
    if cert.valid {
        0
    } else {
        1
    }
}
