//! Thin command-line front end over [`ranloop::cli`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ranloop::cli::{self, CliError, CurvesOptions, ExperimentSpec, RunOptions, Transport};

#[derive(Parser)]
#[command(
    name = "ranloop",
    version,
    about = "Deterministic uplink scheduling testbed with closed-loop parameter control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the exponent grid and record per-window throughput per candidate
    Sweep {
        /// Experiment spec (TOML)
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset CSV
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        /// Override the spec's sweep seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the requirement-to-parameters policy table from a sweep dataset
    BuildTable {
        #[arg(long)]
        spec: PathBuf,
        /// Sweep dataset CSV produced by `sweep`
        #[arg(long)]
        dataset: PathBuf,
        /// Output policy table (JSON)
        #[arg(long, default_value = "policy.json")]
        out: PathBuf,
    },
    /// Drive the closed loop over the spec's requirement schedule
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Policy table built for this spec's cell config
        #[arg(long)]
        table: PathBuf,
        /// Directory for window CSVs and the run report
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Run the controller across a loopback socket instead of in-process
        #[arg(long)]
        socket: bool,
        /// Pin the scheduler to this comma-separated vector (skips the controller)
        #[arg(long, value_delimiter = ',')]
        force_betas: Option<Vec<f64>>,
        /// Also write the per-TTI scheduler trace here
        #[arg(long)]
        sched_trace: Option<PathBuf>,
        /// Override the cell's RNG seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score an existing run CSV against its baseline CSV
    Eval {
        #[arg(long)]
        spec: PathBuf,
        /// Controlled-run windows CSV
        #[arg(long)]
        run: PathBuf,
        /// Baseline windows CSV
        #[arg(long)]
        baseline: PathBuf,
        /// Write the table here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the F1-vs-bitrate curve family as CSV
    Curves {
        /// Comma-separated shape values (default: -1..1 in 0.2 steps, no 0)
        #[arg(long, value_delimiter = ',')]
        b: Option<Vec<f64>>,
        /// Samples per curve
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Write here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Sweep { spec, out, seed } => {
            let mut spec = ExperimentSpec::load(&spec)?;
            if let Some(seed) = seed {
                spec.sweep_seed = seed;
            }
            cli::cmd_sweep(&spec, &out)?;
            eprintln!("wrote sweep dataset to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::BuildTable { spec, dataset, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            let table = cli::cmd_build_table(&spec, &dataset, &out)?;
            eprintln!("wrote policy table ({} keys) to {}", table.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { spec, table, out_dir, socket, force_betas, sched_trace, seed } => {
            let mut spec = ExperimentSpec::load(&spec)?;
            if let Some(seed) = seed {
                spec.sim_config.rng_seed = seed;
            }
            let table = cli::load_table_checked(&spec, &table)?;
            let opts = RunOptions {
                transport: if socket { Transport::Socket } else { Transport::InProcess },
                force_betas,
                sched_trace,
            };
            let report = cli::run_closed_loop(&spec, &table, &out_dir, &opts)?;
            eprintln!(
                "run {}: avg P_S {:.1}%, avg delta {:.1} pp, {} episode(s), {} infeasible",
                report.name,
                report.avg_p_s,
                report.avg_delta_ps,
                report.episodes.len(),
                report.infeasible_count
            );
            if report.infeasible_count > 0 {
                // The run completed, but at least one requirement had no
                // feasible answer; signal it distinctly.
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { spec, run, baseline, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            let table = cli::cmd_eval(&spec, &run, &baseline)?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
                    cli::write_eval_csv(&table, file)?;
                }
                None => cli::write_eval_csv(&table, std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Curves { b, points, out } => {
            let mut opts = CurvesOptions::default();
            if let Some(b) = b {
                opts.b_values = b;
            }
            opts.points_per_curve = points;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
                    cli::cmd_curves(&opts, file)?;
                }
                None => cli::cmd_curves(&opts, std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
