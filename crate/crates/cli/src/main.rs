use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use conceptlab::sim::{SystemState, TankParams};
use conceptlab_cli::config::output_root;
use conceptlab_cli::pipeline::{self, Layout};
use conceptlab_cli::{CliError, Dataset, Module, RunConfig};

#[derive(Parser)]
#[command(
    name = "conceptlab",
    version,
    about = "Three-tank simulation and concept-learning pipeline"
)]
struct Cli {
    /// Run configuration (JSON); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides CONCEPTLAB_OUTPUT_DIR and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run under constant parameters.
    Simulate {
        /// Initial levels `h1,h2,h3`.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [30.0, 10.0, 90.0])]
        h0: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = conceptlab::sim::DEFAULT_DT)]
        dt: f64,
        #[arg(long, default_value_t = TankParams::default().q1)]
        q1: f64,
        #[arg(long, default_value_t = TankParams::default().q3)]
        q3: f64,
        #[arg(long, default_value_t = TankParams::default().kv12)]
        kv12: f64,
        #[arg(long, default_value_t = TankParams::default().kv23)]
        kv23: f64,
        #[arg(long, default_value_t = TankParams::default().kv3)]
        kv3: f64,
        #[arg(long, default_value_t = TankParams::default().c)]
        c: f64,
        /// Output CSV; defaults to `<root>/sim/trajectory.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a dataset (all datasets of the configured modules if omitted).
    GenData {
        #[arg(long, value_enum)]
        experiment: Option<Dataset>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a module on its previously generated dataset.
    Train {
        #[arg(long, value_enum)]
        module: Option<Module>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate trained modules and write metrics bundles.
    Evaluate {
        #[arg(long, value_enum)]
        module: Option<Module>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run the full pipeline for this many consecutive seeds and report medians.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Collect all metrics bundles into report.json and report.md.
    Report,
}

fn modules(flag: Option<Module>, cfg: &RunConfig) -> Vec<Module> {
    flag.map_or_else(|| cfg.modules.clone(), |m| vec![m])
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let layout = Layout::new(output_root(cli.out.as_deref(), &base));
    let seeded = |seed: Option<u64>| {
        let c = base.with_seed(seed.unwrap_or(base.seed));
        c.validate().map(|_| c)
    };
    match cli.command {
        Command::Simulate {
            h0,
            steps,
            dt,
            q1,
            q3,
            kv12,
            kv23,
            kv3,
            c,
            output,
        } => {
            let params = TankParams {
                q1,
                q3,
                kv12,
                kv23,
                kv3,
                c,
            };
            let path = output.unwrap_or_else(|| layout.root.join("sim").join("trajectory.csv"));
            pipeline::simulate(
                &path,
                SystemState::new(h0[0], h0[1], h0[2]),
                &params,
                dt,
                steps,
            )?;
            println!("{}", path.display());
        }
        Command::GenData { experiment, seed } => {
            let cfg = seeded(seed)?;
            let sets = match experiment {
                Some(d) => vec![d],
                None => cfg.modules.iter().map(|m| m.dataset()).collect(),
            };
            for d in sets {
                println!("{}", pipeline::gen_data(&cfg, &layout, d)?.display());
            }
        }
        Command::Train { module, seed } => {
            let cfg = seeded(seed)?;
            for m in modules(module, &cfg) {
                println!("{}", pipeline::train(&cfg, &layout, m)?.display());
            }
        }
        Command::Evaluate {
            module,
            seed,
            seeds,
        } => {
            let cfg = seeded(seed)?;
            for m in modules(module, &cfg) {
                let bundle = match seeds {
                    Some(0) => return Err(CliError::config("--seeds must be at least 1")),
                    Some(k) => pipeline::evaluate_seeds(&cfg, &layout, m, k)?,
                    None => pipeline::evaluate(&cfg, &layout, m)?,
                };
                println!("{}", serde_json::to_string_pretty(&bundle.metrics)?);
            }
        }
        Command::Report => {
            let r = pipeline::report(&layout)?;
            println!(
                "{} bundles -> {}",
                r.bundles.len(),
                layout.report_json().display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("conceptlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
