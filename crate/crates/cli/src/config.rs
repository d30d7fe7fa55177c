//! Run configuration: merged from command-line flags, an optional JSON
//! config file, and defaults (flags win, then the file, then defaults).

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Schema identifiers for every file format the tool reads or writes.
pub const SCHEMA_CASE: &str = "case/1";
pub const SCHEMA_SCENARIO: &str = "scenario/1";
pub const SCHEMA_SOLUTION: &str = "solution/1";
pub const SCHEMA_REPORT: &str = "report/1";

pub const METHODS: [&str; 6] = ["det", "saa", "gauss", "mad", "mad-multi", "wass"];

/// Fully resolved run configuration, embedded verbatim in every output file
/// so a run can be reproduced from its artifacts alone.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResolvedConfig {
    pub case: String,
    pub scenarios: Option<String>,
    pub method: String,
    pub epsilon: Option<f64>,
    pub line_out_budget: usize,
    /// Transport radius (wass only).
    pub radius: Option<f64>,
    /// Mode count (mad-multi only).
    pub modes: Option<usize>,
    /// Descent stopping tolerance (mad-multi only).
    pub omega: Option<f64>,
    /// Descent iteration cap (mad-multi only).
    pub t_max: Option<usize>,
    pub seed: u64,
    pub gap_tol: f64,
    pub wind_buses: Vec<usize>,
    pub flow_limit_scale: f64,
    pub paper_exact: bool,
}

/// JSON config file: every field optional; flags override.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub case: Option<String>,
    pub scenarios: Option<String>,
    pub method: Option<String>,
    pub epsilon: Option<f64>,
    pub line_out_budget: Option<usize>,
    pub radius: Option<f64>,
    pub modes: Option<usize>,
    pub omega: Option<f64>,
    pub t_max: Option<usize>,
    pub seed: Option<u64>,
    pub gap_tol: Option<f64>,
    pub wind_buses: Option<Vec<usize>>,
    pub flow_limit_scale: Option<f64>,
    pub paper_exact: Option<bool>,
}

/// Flag values as parsed (None = not given on the command line).
#[derive(Debug, Default, Clone)]
pub struct FlagConfig {
    pub case: Option<String>,
    pub scenarios: Option<String>,
    pub method: Option<String>,
    pub epsilon: Option<f64>,
    pub line_out_budget: Option<usize>,
    pub radius: Option<f64>,
    pub modes: Option<usize>,
    pub omega: Option<f64>,
    pub t_max: Option<usize>,
    pub seed: Option<u64>,
    pub gap_tol: Option<f64>,
    pub wind_buses: Option<Vec<usize>>,
    pub flow_limit_scale: Option<f64>,
    pub paper_exact: bool,
}

pub fn load_file_config(path: Option<&str>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::input(format!("config file {p}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::input(format!("config file {p}: {e}")))
        }
    }
}

/// Merge with precedence flags > file > defaults, then validate.
pub fn resolve(flags: &FlagConfig, file: &FileConfig) -> Result<ResolvedConfig, CliError> {
    let method = flags
        .method
        .clone()
        .or_else(|| file.method.clone())
        .unwrap_or_else(|| "det".to_string());
    if !METHODS.contains(&method.as_str()) {
        return Err(CliError::input(format!(
            "unknown method '{method}' (expected one of {})",
            METHODS.join(", ")
        )));
    }
    let cfg = ResolvedConfig {
        case: flags
            .case
            .clone()
            .or_else(|| file.case.clone())
            .ok_or_else(|| CliError::input("no case file given (--case)"))?,
        scenarios: flags.scenarios.clone().or_else(|| file.scenarios.clone()),
        epsilon: flags.epsilon.or(file.epsilon),
        line_out_budget: flags.line_out_budget.or(file.line_out_budget).unwrap_or(0),
        radius: flags.radius.or(file.radius),
        modes: flags.modes.or(file.modes),
        omega: flags.omega.or(file.omega),
        t_max: flags.t_max.or(file.t_max),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        gap_tol: flags.gap_tol.or(file.gap_tol).unwrap_or(1e-2),
        wind_buses: flags
            .wind_buses
            .clone()
            .or_else(|| file.wind_buses.clone())
            .unwrap_or_default(),
        flow_limit_scale: flags.flow_limit_scale.or(file.flow_limit_scale).unwrap_or(1.0),
        paper_exact: flags.paper_exact || file.paper_exact.unwrap_or(false),
        method,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ResolvedConfig) -> Result<(), CliError> {
    if cfg.flow_limit_scale <= 0.0 {
        return Err(CliError::input("--flow-limit-scale must be positive"));
    }
    if cfg.method == "det" {
        return Ok(());
    }
    let eps = cfg
        .epsilon
        .ok_or_else(|| CliError::input(format!("method {} requires --eps", cfg.method)))?;
    // the Gaussian quantile needs a strictly positive risk level; the other
    // methods accept 0 (fully robust rows)
    let ok = if cfg.method == "gauss" { eps > 0.0 && eps <= 0.5 } else { (0.0..=0.5).contains(&eps) };
    if !ok {
        return Err(CliError::input(format!(
            "eps {eps} out of range for method {} (expected {} 0.5]",
            cfg.method,
            if cfg.method == "gauss" { "(0," } else { "[0," }
        )));
    }
    if cfg.scenarios.is_none() {
        return Err(CliError::input(format!("method {} requires --scenarios", cfg.method)));
    }
    if cfg.wind_buses.is_empty() {
        return Err(CliError::input(format!("method {} requires --wind-buses", cfg.method)));
    }
    if cfg.method == "wass" && cfg.radius.map_or(false, |r| r < 0.0) {
        return Err(CliError::input("--radius must be nonnegative"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_flags() -> FlagConfig {
        FlagConfig { case: Some("case.json".into()), ..Default::default() }
    }

    #[test]
    fn defaults_apply() {
        let cfg = resolve(&base_flags(), &FileConfig::default()).unwrap();
        assert_eq!(cfg.method, "det");
        assert_eq!(cfg.line_out_budget, 0);
        assert_eq!(cfg.gap_tol, 1e-2);
        assert_eq!(cfg.flow_limit_scale, 1.0);
    }

    #[test]
    fn flags_beat_file() {
        let mut flags = base_flags();
        flags.seed = Some(7);
        let file = FileConfig { seed: Some(3), gap_tol: Some(0.5), ..Default::default() };
        let cfg = resolve(&flags, &file).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.gap_tol, 0.5);
    }

    #[test]
    fn stochastic_method_needs_eps_and_scenarios() {
        let mut flags = base_flags();
        flags.method = Some("saa".into());
        assert!(resolve(&flags, &FileConfig::default()).is_err());
        flags.epsilon = Some(0.05);
        assert!(resolve(&flags, &FileConfig::default()).is_err());
        flags.scenarios = Some("s.csv".into());
        flags.wind_buses = Some(vec![2]);
        assert!(resolve(&flags, &FileConfig::default()).is_ok());
    }

    #[test]
    fn gauss_rejects_zero_eps() {
        let mut flags = base_flags();
        flags.method = Some("gauss".into());
        flags.epsilon = Some(0.0);
        flags.scenarios = Some("s.csv".into());
        flags.wind_buses = Some(vec![2]);
        assert!(resolve(&flags, &FileConfig::default()).is_err());
        flags.epsilon = Some(0.05);
        assert!(resolve(&flags, &FileConfig::default()).is_ok());
    }
}
