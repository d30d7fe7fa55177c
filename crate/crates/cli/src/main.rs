//! Command-line driver: reproducible solve / evaluate / curtail / sweep runs
//! over grid cases and scenario files.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use commands::*;
use config::{load_file_config, resolve, FlagConfig, SCHEMA_CASE, SCHEMA_REPORT, SCHEMA_SCENARIO, SCHEMA_SOLUTION};
use error::CliError;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (schemas: ",
    "case/1 scenario/1 solution/1 report/1",
    ")"
);

#[derive(Parser)]
#[command(name = "drots", version = VERSION, about = "Robust transmission switching toolkit")]
struct Cli {
    /// Worker threads for parallel evaluation and descent steps
    /// (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct SolveArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<String>,
    /// Grid case file (.json, or .m legacy format).
    #[arg(long)]
    case: Option<String>,
    /// Training scenario CSV (one row per sample).
    #[arg(long)]
    scenarios: Option<String>,
    /// det | saa | gauss | mad | mad-multi | wass.
    #[arg(long)]
    method: Option<String>,
    /// Risk level per limit row.
    #[arg(long)]
    eps: Option<f64>,
    /// Line-out budget (number of lines forced open).
    #[arg(long)]
    lo: Option<usize>,
    /// Transport radius (wass).
    #[arg(long)]
    radius: Option<f64>,
    /// Mode count (mad-multi).
    #[arg(long)]
    modes: Option<usize>,
    /// Descent stopping tolerance (mad-multi).
    #[arg(long)]
    omega: Option<f64>,
    /// Descent iteration cap (mad-multi).
    #[arg(long)]
    t_max: Option<usize>,
    /// Seed for mode partitioning and anything randomized.
    #[arg(long)]
    seed: Option<u64>,
    /// Reporting gap tolerance recorded with the run.
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Bus ids hosting uncertain injections, comma separated.
    #[arg(long, value_delimiter = ',')]
    wind_buses: Option<Vec<usize>>,
    /// Multiply every flow limit by this factor.
    #[arg(long)]
    flow_limit_scale: Option<f64>,
    /// Lift the physical curtailment cap (recorded with the run).
    #[arg(long)]
    paper_exact: bool,
}

impl SolveArgs {
    fn flags(&self) -> FlagConfig {
        FlagConfig {
            case: self.case.clone(),
            scenarios: self.scenarios.clone(),
            method: self.method.clone(),
            epsilon: self.eps,
            line_out_budget: self.lo,
            radius: self.radius,
            modes: self.modes,
            omega: self.omega,
            t_max: self.t_max,
            seed: self.seed,
            gap_tol: self.gap_tol,
            wind_buses: self.wind_buses.clone(),
            flow_limit_scale: self.flow_limit_scale,
            paper_exact: self.paper_exact,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Build and solve a switching model; writes a solution file and a log.
    Solve {
        #[command(flatten)]
        args: SolveArgs,
        /// Solution output path.
        #[arg(long, default_value = "solution.json")]
        out: PathBuf,
        /// Human-readable log output path (deterministic; wall time goes to
        /// the console only).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a solved plan on a test scenario set.
    Evaluate {
        /// Solution file produced by `solve`.
        #[arg(long)]
        solution: String,
        /// Test scenario CSV.
        #[arg(long)]
        scenarios: String,
        /// Case file (default: the one recorded in the solution).
        #[arg(long)]
        case: Option<String>,
        #[arg(long, default_value = "report.json")]
        out_json: PathBuf,
        #[arg(long, default_value = "report.csv")]
        out_csv: PathBuf,
    },
    /// Minimum-spill distribution of a solved plan over a scenario set.
    Curtail {
        #[arg(long)]
        solution: String,
        #[arg(long)]
        scenarios: String,
        #[arg(long)]
        case: Option<String>,
        /// Lift the physical cap on per-bus curtailment.
        #[arg(long)]
        paper_exact: bool,
        #[arg(long, default_value = "curtail.json")]
        out_json: PathBuf,
        #[arg(long, default_value = "curtail.csv")]
        out_csv: PathBuf,
    },
    /// Solve across a range of risk levels and tabulate the cost curve.
    Sweep {
        #[command(flatten)]
        args: SolveArgs,
        /// Inclusive eps range start:step:end, e.g. 0:0.05:0.3.
        #[arg(long)]
        sweep_eps: String,
        #[arg(long, default_value = "plotdata.csv")]
        out_csv: PathBuf,
        #[arg(long, default_value = "sweep.json")]
        out_json: PathBuf,
    },
    /// Print the schema versions of every file format.
    Schemas,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // ignore failure: the global pool can only be set once
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<u8, CliError> {
    match cmd {
        Cmd::Solve { args, out, log } => {
            let file = load_file_config(args.config.as_deref())?;
            let cfg = resolve(&args.flags(), &file)?;
            let case = load_case(&cfg)?;
            let started = Instant::now();
            let sol = run_solve(&cfg, &case)?;
            let wall = started.elapsed();
            write_solution_file(&out, &cfg, &sol)?;
            let log_text = solution_log(&cfg, &sol);
            if let Some(log_path) = log {
                write_text(&log_path, &log_text)?;
            }
            print!("{log_text}");
            println!("wall time: {:.3} s", wall.as_secs_f64());
            println!("wrote {}", out.display());
            Ok(status_exit_code(&sol) as u8)
        }
        Cmd::Evaluate { solution, scenarios, case, out_json, out_csv } => {
            let sf = read_solution_file(&solution)?;
            let mut cfg = sf.config.clone();
            if let Some(c) = case {
                cfg.case = c;
            }
            let grid = load_case(&cfg)?;
            let test = load_scenario_file(&scenarios)?;
            let report = run_evaluate(&sf, &grid, &test, &scenarios)?;
            write_json(&out_json, &report)?;
            write_text(&out_csv, &report_csv(&report.report))?;
            println!(
                "samples: {}  oos cost: {}  avg row rate: {}  joint rate: {}",
                report.report.sample_count,
                report.report.oos_cost,
                report.report.avg_rate_rows,
                report.report.joint_rate
            );
            println!("wrote {} and {}", out_json.display(), out_csv.display());
            Ok(0)
        }
        Cmd::Curtail { solution, scenarios, case, paper_exact, out_json, out_csv } => {
            let sf = read_solution_file(&solution)?;
            let mut cfg = sf.config.clone();
            if let Some(c) = case {
                cfg.case = c;
            }
            let exact = paper_exact || cfg.paper_exact;
            let grid = load_case(&cfg)?;
            let test = load_scenario_file(&scenarios)?;
            let file = run_curtail(&sf, &grid, &test, &scenarios, exact)?;
            write_json(&out_json, &file)?;
            write_text(&out_csv, &curtail_csv(&file.summary))?;
            println!(
                "samples: {}  feasible: {}  mean spill: {}  p95: {}",
                file.summary.sample_count,
                file.summary.feasible_count,
                file.summary.mean,
                file.summary.p95
            );
            println!("wrote {} and {}", out_json.display(), out_csv.display());
            Ok(0)
        }
        Cmd::Sweep { args, sweep_eps, out_csv, out_json } => {
            let file = load_file_config(args.config.as_deref())?;
            let mut flags = args.flags();
            // the sweep supplies eps itself; a placeholder keeps validation happy
            if flags.epsilon.is_none() {
                flags.epsilon = Some(0.05);
            }
            let cfg = resolve(&flags, &file)?;
            let eps_values = parse_sweep(&sweep_eps)?;
            let case = load_case(&cfg)?;
            let sweep = run_sweep(&cfg, &case, &eps_values)?;
            write_json(&out_json, &sweep)?;
            write_text(&out_csv, &sweep_csv(&sweep.rows))?;
            for row in &sweep.rows {
                println!(
                    "eps={}  objective={}  opened={}  status={}",
                    row.eps, row.objective, row.opened, row.status
                );
            }
            println!("wrote {} and {}", out_json.display(), out_csv.display());
            Ok(0)
        }
        Cmd::Schemas => {
            println!("case: {SCHEMA_CASE}");
            println!("scenario: {SCHEMA_SCENARIO}");
            println!("solution: {SCHEMA_SOLUTION}");
            println!("report: {SCHEMA_REPORT}");
            Ok(0)
        }
    }
}
