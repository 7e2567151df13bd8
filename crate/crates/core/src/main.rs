//! Command-line front end: run the full pipeline or its stages, and a
//! standalone solver for exported QUBO files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ffm_ising::pipeline::{self, parse_mf_spec, PipelineConfig};
use ffm_ising::qubo::QuboProblem;
use ffm_ising::solver::{SaConfig, SolverChoice, SolverConfig, TabuConfig};

#[derive(Parser)]
#[command(
    name = "ffm-ising",
    version,
    about = "Field-aware factorization machine with QUBO-based group-wise L0 feature selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// JSON configuration file (flags override its values)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input dataset (CSV or TSV)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Base seed for every random stream
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to $FFM_ISING_OUT or ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Focus field whose groups get their own feature sets
    #[arg(long)]
    field: Option<String>,
    /// Pin learning rate scale a1 (skips cross-validation with --a2)
    #[arg(long)]
    a1: Option<f64>,
    /// Pin learning rate decay a2 (skips cross-validation with --a1)
    #[arg(long)]
    a2: Option<f64>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Latent initialization standard deviation
    #[arg(long)]
    init_std: Option<f64>,
    /// Solver backend
    #[arg(long, value_enum)]
    solver: Option<SolverChoice>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline and write every artifact
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Selected features per group
        #[arg(long)]
        mf: Option<usize>,
        /// Cardinality sweep spec (start:end:step, comma list, or empty to skip)
        #[arg(long)]
        sweep: Option<String>,
        /// Also write fitted bin boundaries
        #[arg(long)]
        dump_bins: bool,
    },
    /// Data preparation, cross-validation, and final training
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        dump_bins: bool,
    },
    /// Solve the selection QUBO from an existing checkpoint
    Select {
        #[command(flatten)]
        common: CommonOpts,
        /// Selected features per group
        #[arg(long)]
        mf: Option<usize>,
    },
    /// Solve once per cardinality value and tabulate R^2
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Cardinality spec: start:end:step or comma list
        #[arg(long)]
        mf: Option<String>,
    },
    /// Re-evaluate an existing mask without solving
    Report {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Minimize an arbitrary QUBO file in the text exchange format
    SolveQubo {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "tabu")]
        solver: SolverChoice,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        tenure: Option<usize>,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long)]
        beta0: Option<f64>,
        #[arg(long)]
        beta1: Option<f64>,
        /// Write the result JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn build_config(common: &CommonOpts) -> ffm_ising::Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(data) = &common.data {
        config.data_path = data.clone();
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(field) = &common.field {
        config.focus_field = field.clone();
    }
    if let Some(a1) = common.a1 {
        config.a1 = Some(a1);
    }
    if let Some(a2) = common.a2 {
        config.a2 = Some(a2);
    }
    if let Some(epochs) = common.epochs {
        config.epochs = epochs;
    }
    if let Some(init_std) = common.init_std {
        config.latent_init_std = init_std;
    }
    if let Some(solver) = common.solver {
        config.solver = solver;
    }
    Ok(config)
}

fn solve_qubo_file(
    file: &PathBuf,
    solver: SolverChoice,
    seed: u64,
    restarts: Option<usize>,
    tenure: Option<usize>,
    max_iterations: Option<usize>,
    sweeps: Option<usize>,
    beta0: Option<f64>,
    beta1: Option<f64>,
    out: Option<PathBuf>,
) -> ffm_ising::Result<()> {
    let problem = QuboProblem::read_file(file)?;
    let config = match solver {
        SolverChoice::Tabu => SolverConfig::Tabu(TabuConfig {
            tenure,
            max_iterations,
            restarts: restarts.unwrap_or(5),
            seed,
        }),
        SolverChoice::SimulatedAnnealing => {
            let mut sa = SaConfig::new(seed);
            if let Some(s) = sweeps {
                sa.sweeps = s;
            }
            if let Some(b) = beta0 {
                sa.beta0 = b;
            }
            if let Some(b) = beta1 {
                sa.beta1 = b;
            }
            SolverConfig::SimulatedAnnealing(sa)
        }
    };
    let result = config.solve(&problem);
    let json = serde_json::to_string_pretty(&result).expect("result serializes");
    match out {
        Some(path) => std::fs::write(&path, json + "\n").map_err(|source| {
            ffm_ising::Error::Io {
                path,
                source,
            }
        })?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run() -> ffm_ising::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            common,
            mf,
            sweep,
            dump_bins,
        } => {
            let mut config = build_config(&common)?;
            if let Some(mf) = mf {
                config.m_f = mf;
            }
            if let Some(spec) = sweep {
                config.sweep_mf = if spec.trim().is_empty() {
                    Vec::new()
                } else {
                    parse_mf_spec(&spec)?
                };
            }
            config.dump_bins |= dump_bins;
            pipeline::run_full(&config)
        }
        Command::Train { common, dump_bins } => {
            let mut config = build_config(&common)?;
            config.dump_bins |= dump_bins;
            pipeline::cmd_train(&config)
        }
        Command::Select { common, mf } => {
            let mut config = build_config(&common)?;
            if let Some(mf) = mf {
                config.m_f = mf;
            }
            pipeline::cmd_select(&config)
        }
        Command::Sweep { common, mf } => {
            let config = build_config(&common)?;
            let values = match mf {
                Some(spec) => parse_mf_spec(&spec)?,
                None => config.sweep_mf.clone(),
            };
            pipeline::cmd_sweep(&config, &values)
        }
        Command::Report { common } => {
            let config = build_config(&common)?;
            pipeline::cmd_report(&config)
        }
        Command::SolveQubo {
            file,
            solver,
            seed,
            restarts,
            tenure,
            max_iterations,
            sweeps,
            beta0,
            beta1,
            out,
        } => solve_qubo_file(
            &file,
            solver,
            seed,
            restarts,
            tenure,
            max_iterations,
            sweeps,
            beta0,
            beta1,
            out,
        ),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
