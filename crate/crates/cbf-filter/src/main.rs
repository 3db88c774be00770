//! Command-line driver: runs, inspects, and verifies scenario files.
//!
//! Exit codes: 0 success, 1 expectation failure, 2 configuration error,
//! 3 numerical failure.

use cbf_filter::bundled::{bundled_scenario, BUNDLED_NAMES};
use cbf_filter::scenario::{
    load_scenario, run_scenario_with, verify_scenario, RunOverrides, Scenario,
};
use cbf_filter::Error;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cbf-filter", version, about = "Safety-filter analysis scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario's analyses and write artifacts to the output directory.
    Run {
        /// Scenario file path, or the name of a bundled scenario.
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the integrator step.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the integration horizon in seconds.
        #[arg(long)]
        horizon: Option<f64>,
        /// Override sampler seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the undesired-equilibrium table of a scenario.
    Equilibria { scenario: String },
    /// Check a scenario's computed results against its expectations block.
    Verify { scenario: String },
    /// List the bundled scenarios.
    ListBundled,
    /// Write a bundled scenario to a file.
    ExportBundled { name: String, path: PathBuf },
}

fn resolve(spec: &str) -> Result<Scenario, Error> {
    let path = Path::new(spec);
    if path.is_file() {
        return load_scenario(path);
    }
    if BUNDLED_NAMES.contains(&spec) {
        return bundled_scenario(spec);
    }
    Err(Error::Config(format!(
        "{spec:?} is neither a scenario file nor a bundled scenario name"
    )))
}

fn exit_code_for(e: &Error) -> ExitCode {
    match e {
        Error::Numerical(_) | Error::DegenerateConstraint { .. } | Error::NotAnEigenvector { .. } => {
            ExitCode::from(3)
        }
        _ => ExitCode::from(2),
    }
}

fn verbose() -> bool {
    std::env::var("CBF_FILTER_LOG").map(|v| v == "debug").unwrap_or(false)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            dt,
            horizon,
            seed,
        } => {
            let sc = resolve(&scenario)?;
            if verbose() {
                eprintln!("running scenario {} into {}", sc.name, out.display());
            }
            let overrides = RunOverrides { dt, horizon, seed };
            let report = run_scenario_with(&sc, &out, &overrides)?;
            println!(
                "{}: {} equilibria, {} trajectories, {} analysis errors",
                report.name,
                report.equilibria.len(),
                report.trajectories.len(),
                report.errors.len()
            );
            for e in &report.errors {
                eprintln!("  analysis {} failed: {}", e.analysis, e.message);
            }
            for f in &report.manifest {
                println!("  wrote {}", out.join(f).display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Equilibria { scenario } => {
            let sc = resolve(&scenario)?;
            let inst = sc.instance()?;
            let outcome = cbf_filter::equilibria::find_undesired_equilibria(
                &inst,
                &cbf_filter::equilibria::ScanConfig::default(),
            )?;
            match &outcome {
                cbf_filter::equilibria::ScanOutcome::Continuum(d) => {
                    println!(
                        "continuum of equilibria on component {} ({} grid roots): {}",
                        d.component, d.root_count, d.note
                    );
                }
                cbf_filter::equilibria::ScanOutcome::Isolated(records) => {
                    if records.is_empty() {
                        println!("no undesired or potential equilibria");
                    }
                    for r in records {
                        let coords: Vec<String> =
                            r.x.iter().map(|v| format!("{v:.8}")).collect();
                        println!(
                            "({})  delta = {:+.6e}  {:?}  residual {:.2e}",
                            coords.join(", "),
                            r.delta,
                            r.classification,
                            r.residual
                        );
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { scenario } => {
            let sc = resolve(&scenario)?;
            let report = verify_scenario(&sc)?;
            for check in &report.checks {
                println!(
                    "[{}] {}: {}",
                    if check.pass { "pass" } else { "FAIL" },
                    check.label,
                    check.detail
                );
            }
            if report.pass {
                println!("{}: all expectations satisfied", sc.name);
                Ok(ExitCode::SUCCESS)
            } else {
                println!("{}: expectation failures", sc.name);
                Ok(ExitCode::from(1))
            }
        }
        Command::ListBundled => {
            for name in BUNDLED_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportBundled { name, path } => {
            let sc = bundled_scenario(&name)?;
            std::fs::write(&path, sc.to_json()?)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
