//! Command implementations: solve, evaluate, curtail, sweep.
//!
//! Output files are deterministic for a fixed config and seed: they embed the
//! resolved configuration but never wall-clock time, which is only printed
//! to the console log.

use std::fs;
use std::path::Path;

use drots_core::case_model::{build_operators, import_matpower, parse_case, GridCase};
use drots_core::evaluate::{
    monte_carlo_curtailment, oos_evaluate, CurtailmentSummary, EvaluateError, EvaluationReport,
    Solution,
};
use drots_core::reformulate::{
    build_deterministic, build_gaussian, build_mad, build_saa, build_wasserstein,
    solve_gaussian, solve_model, solve_multimodal_bcd,
};
use drots_core::uncertainty::{
    box_support, fit_gaussian, load_scenarios, moment_stats, partition_modes, placement_matrix,
    ScenarioSet,
};
use serde::{Deserialize, Serialize};

use crate::config::{ResolvedConfig, SCHEMA_REPORT, SCHEMA_SOLUTION};
use crate::error::CliError;

/// Default flow limit assigned to unrated branches of legacy case files, MW.
const MATPOWER_DEFAULT_LIMIT_MW: f64 = 100.0;

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

pub fn load_case(cfg: &ResolvedConfig) -> Result<GridCase, CliError> {
    let text = fs::read_to_string(&cfg.case)
        .map_err(|e| CliError::input(format!("case file {}: {e}", cfg.case)))?;
    let mut case = if cfg.case.ends_with(".m") {
        import_matpower(&text, MATPOWER_DEFAULT_LIMIT_MW)
    } else {
        parse_case(&text)
    }
    .map_err(|e| CliError::input(format!("case file {}: {e}", cfg.case)))?;
    if cfg.flow_limit_scale != 1.0 {
        case.scale_flow_limits(cfg.flow_limit_scale);
    }
    Ok(case)
}

pub fn load_scenario_file(path: &str) -> Result<ScenarioSet, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::input(format!("scenario file {path}: {e}")))?;
    load_scenarios(file).map_err(|e| CliError::input(format!("scenario file {path}: {e}")))
}

// ---------------------------------------------------------------------------
// Solving
// ---------------------------------------------------------------------------

/// Build and solve the model selected by the config.
pub fn run_solve(cfg: &ResolvedConfig, case: &GridCase) -> Result<Solution, CliError> {
    let ops = build_operators(case, None);
    if cfg.method == "det" {
        let built = build_deterministic(case, &ops, cfg.line_out_budget);
        return Ok(solve_model(case, &ops, None, &built)?);
    }
    let eps = cfg.epsilon.expect("validated");
    let scen_path = cfg.scenarios.as_deref().expect("validated");
    let scen = load_scenario_file(scen_path)?;
    if scen.dim != cfg.wind_buses.len() {
        return Err(CliError::input(format!(
            "scenario dimension {} does not match {} wind buses",
            scen.dim,
            cfg.wind_buses.len()
        )));
    }
    let placement = placement_matrix(case, &cfg.wind_buses)
        .map_err(|e| CliError::input(e.to_string()))?;
    let lo = cfg.line_out_budget;
    match cfg.method.as_str() {
        "saa" => {
            let built = build_saa(case, &ops, &scen, eps, lo, &placement)?;
            Ok(solve_model(case, &ops, Some(&placement), &built)?)
        }
        "wass" => {
            let radius = cfg.radius.unwrap_or(0.0);
            let built = build_wasserstein(case, &ops, &scen, radius, eps, lo, &placement)?;
            Ok(solve_model(case, &ops, Some(&placement), &built)?)
        }
        "gauss" => {
            let (mean, cov) = fit_gaussian(&scen);
            let (mut built, mut cuts) =
                build_gaussian(case, &ops, &mean, &cov, eps, lo, &placement)?;
            let (sol, _rounds) = solve_gaussian(case, &ops, &placement, &mut built, &mut cuts)?;
            Ok(sol)
        }
        "mad" => {
            let (mean, mad) = moment_stats(&scen);
            let support =
                box_support(&scen, 1e-9).map_err(|e| CliError::input(e.to_string()))?;
            let built = build_mad(case, &ops, &mean, &mad, &support, eps, lo, &placement)?;
            Ok(solve_model(case, &ops, Some(&placement), &built)?)
        }
        "mad-multi" => {
            let modes = partition_modes(&scen, cfg.modes.unwrap_or(2), 1e-9, cfg.seed)
                .map_err(|e| CliError::input(e.to_string()))?;
            let omega = cfg.omega.unwrap_or(1e-6);
            let t_max = cfg.t_max.unwrap_or(20);
            let (sol, _trace) =
                solve_multimodal_bcd(case, &ops, &modes, eps, lo, &placement, omega, t_max)?;
            Ok(sol)
        }
        other => Err(CliError::input(format!("unknown method '{other}'"))),
    }
}

/// Opened-line indices rendered as a sorted `[a;b;c]` list.
pub fn opened_list(sol: &Solution) -> String {
    let mut open = sol.opened_lines();
    open.sort_unstable();
    let inner: Vec<String> = open.iter().map(|i| i.to_string()).collect();
    format!("[{}]", inner.join(";"))
}

/// Exit code implied by a solution's solver status.
pub fn status_exit_code(sol: &Solution) -> i32 {
    if sol.diagnostics.status == "optimal" {
        0
    } else {
        3
    }
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub schema: String,
    pub config: ResolvedConfig,
    pub solution: Solution,
}

pub fn write_solution_file(
    path: &Path,
    cfg: &ResolvedConfig,
    sol: &Solution,
) -> Result<(), CliError> {
    let file = SolutionFile {
        schema: SCHEMA_SOLUTION.to_string(),
        config: cfg.clone(),
        solution: sol.clone(),
    };
    write_json(path, &file)
}

pub fn read_solution_file(path: &str) -> Result<SolutionFile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("solution file {path}: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("solution file {path}: {e}")))
}

/// Human-readable solve summary (no wall time, so the file is deterministic).
pub fn solution_log(cfg: &ResolvedConfig, sol: &Solution) -> String {
    let mut s = String::new();
    s.push_str(&format!("method: {}\n", sol.method));
    s.push_str(&format!("case: {}\n", cfg.case));
    s.push_str(&format!("objective: {}\n", sol.objective));
    s.push_str(&format!("opened lines: {}\n", opened_list(sol)));
    s.push_str(&format!("line-out budget: {}\n", sol.line_out_budget));
    if let Some(eps) = sol.epsilon {
        s.push_str(&format!("eps: {eps}\n"));
    }
    s.push_str(&format!("nodes: {}\n", sol.diagnostics.nodes));
    s.push_str(&format!("rounds: {}\n", sol.diagnostics.rounds));
    s.push_str(&format!("status: {}\n", sol.diagnostics.status));
    s
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema: String,
    /// Config of the solve that produced the evaluated solution.
    pub solve_config: ResolvedConfig,
    /// Scenario file the report was computed on.
    pub test_scenarios: String,
    pub report: EvaluationReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurtailFile {
    pub schema: String,
    pub solve_config: ResolvedConfig,
    pub test_scenarios: String,
    pub paper_exact: bool,
    pub summary: CurtailmentSummary,
}

pub fn report_csv(report: &EvaluationReport) -> String {
    let mut s = String::from("name,value\n");
    s.push_str(&format!("sample_count,{}\n", report.sample_count));
    s.push_str(&format!("oos_cost,{}\n", report.oos_cost));
    s.push_str(&format!("avg_rate_rows,{}\n", report.avg_rate_rows));
    s.push_str(&format!("avg_rate_scenarios,{}\n", report.avg_rate_scenarios));
    s.push_str(&format!("joint_rate,{}\n", report.joint_rate));
    for r in &report.row_rates {
        s.push_str(&format!("rate_{},{}\n", r.row, r.rate));
    }
    s
}

pub fn curtail_csv(summary: &CurtailmentSummary) -> String {
    let mut s = String::from("name,value\n");
    s.push_str(&format!("sample_count,{}\n", summary.sample_count));
    s.push_str(&format!("feasible_count,{}\n", summary.feasible_count));
    s.push_str(&format!("infeasible_count,{}\n", summary.infeasible_count));
    s.push_str(&format!("mean,{}\n", summary.mean));
    s.push_str(&format!("std_error,{}\n", summary.std_error));
    s.push_str(&format!("median,{}\n", summary.median));
    s.push_str(&format!("p95,{}\n", summary.p95));
    s.push_str(&format!("max,{}\n", summary.max));
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::input(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::input(format!("write {}: {e}", path.display())))
}

pub fn map_eval_error(e: EvaluateError) -> CliError {
    match e {
        EvaluateError::DimensionMismatch { .. } => CliError::input(e.to_string()),
        EvaluateError::CurtailmentInfeasible => CliError::infeasible(e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Evaluate / curtail drivers
// ---------------------------------------------------------------------------

pub fn run_evaluate(
    sf: &SolutionFile,
    case: &GridCase,
    test: &ScenarioSet,
    scenarios_path: &str,
) -> Result<ReportFile, CliError> {
    let report = oos_evaluate(&sf.solution, test, case).map_err(map_eval_error)?;
    Ok(ReportFile {
        schema: SCHEMA_REPORT.to_string(),
        solve_config: sf.config.clone(),
        test_scenarios: scenarios_path.to_string(),
        report,
    })
}

pub fn run_curtail(
    sf: &SolutionFile,
    case: &GridCase,
    test: &ScenarioSet,
    scenarios_path: &str,
    paper_exact: bool,
) -> Result<CurtailFile, CliError> {
    let summary =
        monte_carlo_curtailment(&sf.solution, case, test, paper_exact).map_err(map_eval_error)?;
    Ok(CurtailFile {
        schema: SCHEMA_REPORT.to_string(),
        solve_config: sf.config.clone(),
        test_scenarios: scenarios_path.to_string(),
        paper_exact,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Sweep driver
// ---------------------------------------------------------------------------

/// Inclusive `start:step:end` range of risk levels.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::input(format!("sweep spec '{spec}' (expected start:step:end)")));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| CliError::input(format!("sweep spec '{spec}': {e}"))))
        .collect::<Result<_, _>>()?;
    let (start, step, end) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || end < start {
        return Err(CliError::input(format!("sweep spec '{spec}': need step > 0 and end >= start")));
    }
    let mut out = vec![];
    let mut i = 0usize;
    loop {
        let v = start + step * i as f64;
        if v > end + 1e-12 {
            break;
        }
        out.push((v * 1e12).round() / 1e12);
        i += 1;
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub objective: f64,
    pub opened: String,
    pub status: String,
    pub nodes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepFile {
    pub schema: String,
    pub config: ResolvedConfig,
    pub sweep_eps: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("eps,objective,opened,status,nodes\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.eps, r.objective, r.opened, r.status, r.nodes));
    }
    s
}

/// Solve once per risk level; solver limits are recorded per row instead of
/// aborting the sweep.
pub fn run_sweep(
    cfg: &ResolvedConfig,
    case: &GridCase,
    eps_values: &[f64],
) -> Result<SweepFile, CliError> {
    let mut rows = vec![];
    for &eps in eps_values {
        let mut step = cfg.clone();
        step.epsilon = Some(eps);
        let sol = run_solve(&step, case)?;
        rows.push(SweepRow {
            eps,
            objective: sol.objective,
            opened: opened_list(&sol),
            status: sol.diagnostics.status.clone(),
            nodes: sol.diagnostics.nodes,
        });
    }
    Ok(SweepFile {
        schema: SCHEMA_REPORT.to_string(),
        config: cfg.clone(),
        sweep_eps: eps_values.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_range_inclusive() {
        let v = parse_sweep("0:0.05:0.3").unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v[0], 0.0);
        assert_eq!(*v.last().unwrap(), 0.3);
    }

    #[test]
    fn sweep_bad_specs() {
        assert!(parse_sweep("0:0.05").is_err());
        assert!(parse_sweep("0:-0.1:0.3").is_err());
        assert!(parse_sweep("0.5:0.1:0.2").is_err());
        assert!(parse_sweep("a:b:c").is_err());
    }
}
