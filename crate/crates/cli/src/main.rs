use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aircomp_gpr::experiment::{
    bench_training_time, demo_regression, run_sweep_with_progress, uplink_cost, write_output, Sweep,
};
use aircomp_gpr::{ExperimentSpec, Method, SweepParam};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "aircomp-gpr",
    version,
    about = "Distributed GP radio-map experiments over a simulated AirComp channel"
)]
struct Cli {
    /// TOML file with `seed`, `methods`, `[scenario]` and `[sweep]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo trials per sweep value.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output file (`sweep`, `bench`, `cost`) or directory (`demo`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one scenario and write plot data for the fused prediction.
    Demo {
        #[arg(long, default_value_t = 400)]
        grid: usize,
    },
    /// Mean RMSE per method over a parameter sweep.
    Sweep {
        /// One of gamma-db, n, m.
        #[arg(long)]
        param: Option<SweepParam>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Fill the training-time column (breaks byte-identical reruns).
        #[arg(long)]
        timing: bool,
    },
    /// Per-iteration likelihood time, full GPR versus the slowest node.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128, 256, 512, 1024])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4, 16])]
        m: Vec<usize>,
    },
    /// Uplink cost of each method for the configured scenario.
    Cost,
}

fn load_spec(cli: &Cli) -> aircomp_gpr::Result<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(trials) = cli.trials {
        spec.scenario.trials = trials;
    }
    Ok(spec)
}

fn emit(out: Option<&Path>, text: &str) -> aircomp_gpr::Result<()> {
    match out {
        Some(path) => {
            write_output(path, text)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> aircomp_gpr::Result<()> {
    let mut spec = load_spec(&cli)?;
    for w in spec.scenario.warnings() {
        eprintln!("warning: {w}");
    }
    match cli.command {
        Command::Demo { grid } => {
            let demo = demo_regression(&spec.scenario, spec.seed, grid)?;
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("demo_out"));
            write_output(&dir.join("demo_prediction.csv"), &demo.prediction_csv())?;
            write_output(&dir.join("demo_measurements.csv"), &demo.measurements_csv())?;
            eprintln!(
                "trained psi1 = {:.4}, psi2 = {:.4}, sigma_eps = {:.4}; wrote {}",
                demo.theta.psi1,
                demo.theta.psi2,
                demo.theta.sigma_eps,
                dir.display()
            );
        }
        Command::Sweep {
            param,
            values,
            methods,
            timing,
        } => {
            if let Some(param) = param {
                let values = values.clone().unwrap_or_else(|| match param {
                    SweepParam::GammaDb => Sweep::default().values,
                    SweepParam::N => vec![32.0, 128.0, 512.0],
                    SweepParam::M => vec![1.0, 2.0, 4.0, 8.0, 16.0],
                });
                spec.sweep = Sweep { param, values };
            } else if let Some(values) = values {
                spec.sweep.values = values;
            }
            if let Some(methods) = methods {
                spec.methods = methods;
            }
            spec.timing |= timing;
            let out = cli
                .out
                .clone()
                .or_else(|| spec.output_path.clone())
                .unwrap_or_else(|| PathBuf::from("sweep.csv"));
            spec.validate()?;
            let table = run_sweep_with_progress(&spec, |done, total| {
                eprint!("\rtrial {done}/{total}");
                if done == total {
                    eprintln!();
                }
            })?;
            emit(Some(&out), &table.to_csv_string()?)?;
        }
        Command::Bench { n, m } => {
            let table = bench_training_time(&n, &m, spec.seed)?;
            emit(cli.out.as_deref(), &table.to_csv_string()?)?;
        }
        Command::Cost => {
            let cost = spec.scenario.cost_model();
            let mut text = String::from("method,uplink_cost\n");
            for method in Method::ALL {
                text.push_str(&format!("{},{}\n", method, uplink_cost(method, &cost)?));
            }
            emit(cli.out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
