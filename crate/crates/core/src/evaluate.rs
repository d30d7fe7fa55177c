//! Out-of-sample scoring of a switching plan: violation rates per limit row,
//! expected operating cost, and the minimum-curtailment program that measures
//! how much wind must be spilled to restore feasibility scenario by scenario.

use crate::case_model::{GridCase, NetworkOperators};
use crate::milp::{solve_lp, LpStatus};
use crate::model::{MilpModel, ModelMeta, Sense, VarKind, DEFAULT_BOUND};
use crate::two_stage::{dc_flow, FirstStage, RecourseMaps, RowLabel, RowKind, BoundSide, TwoStageError};
use crate::uncertainty::{PlacementMatrix, ScenarioSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A scenario counts as violating a row when the slack is below this margin.
pub const VIOLATION_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("scenario dimension {got} does not match solution dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no curtailment restores feasibility for the scenario")]
    CurtailmentInfeasible,
}

/// Solver bookkeeping attached to a solution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveDiagnostics {
    pub status: String,
    pub nodes: usize,
    pub gap: f64,
    pub best_bound: f64,
    /// Outer rounds (cone cuts or coordinate-descent iterations); 1 for
    /// single-shot methods.
    pub rounds: usize,
}

impl Default for SolveDiagnostics {
    fn default() -> Self {
        SolveDiagnostics { status: "optimal".into(), nodes: 0, gap: 0.0, best_bound: 0.0, rounds: 1 }
    }
}

/// A solved plan: first-stage values, the affine recourse maps, and how it
/// was produced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Solution {
    pub first_stage: FirstStage,
    pub recourse: RecourseMaps,
    /// Uncertainty dimension of the recourse maps (0 for deterministic plans).
    pub k: usize,
    pub objective: f64,
    pub method: String,
    pub epsilon: Option<f64>,
    pub line_out_budget: usize,
    /// Bus ids hosting the uncertain injections, in column order.
    pub wind_buses: Vec<usize>,
    pub diagnostics: SolveDiagnostics,
}

impl Solution {
    /// Indices of opened lines, sorted.
    pub fn opened_lines(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .first_stage
            .z
            .iter()
            .enumerate()
            .filter(|&(_, z)| *z < 0.5)
            .map(|(i, _)| i)
            .collect();
        v.sort_unstable();
        v
    }
}

/// One limit row with the decision values substituted: `a' xi <= b`.
#[derive(Debug, Clone)]
pub struct NumericRow {
    pub a: Vec<f64>,
    pub b: f64,
    pub label: RowLabel,
}

/// Substitute a solution into the full set of limit rows (reserve, dispatch,
/// angle and flow bounds, both sides).
pub fn numeric_cc_rows(case: &GridCase, sol: &Solution) -> Vec<NumericRow> {
    let n = case.num_buses();
    let l = case.num_lines();
    let k = sol.k;
    let agg = case.bus_aggregates();
    let fs = &sol.first_stage;
    let maps = &sol.recourse;
    let mut rows = Vec::with_capacity(2 * (3 * n + l));
    for i in 0..n {
        let gamma = fs.gamma[i];
        rows.push(NumericRow {
            a: vec![-gamma; k],
            b: -agg.r_min[i],
            label: RowLabel { kind: RowKind::Reserve, side: BoundSide::Lower, index: i },
        });
        rows.push(NumericRow {
            a: vec![gamma; k],
            b: agg.r_max[i],
            label: RowLabel { kind: RowKind::Reserve, side: BoundSide::Upper, index: i },
        });
        rows.push(NumericRow {
            a: vec![-gamma; k],
            b: fs.g[i] - agg.g_min[i],
            label: RowLabel { kind: RowKind::Generation, side: BoundSide::Lower, index: i },
        });
        rows.push(NumericRow {
            a: vec![gamma; k],
            b: agg.g_max[i] - fs.g[i],
            label: RowLabel { kind: RowKind::Generation, side: BoundSide::Upper, index: i },
        });
        rows.push(NumericRow {
            a: (0..k).map(|c| -maps.y_theta[i][c]).collect(),
            b: fs.theta[i] - case.buses[i].theta_min,
            label: RowLabel { kind: RowKind::Angle, side: BoundSide::Lower, index: i },
        });
        rows.push(NumericRow {
            a: (0..k).map(|c| maps.y_theta[i][c]).collect(),
            b: case.buses[i].theta_max - fs.theta[i],
            label: RowLabel { kind: RowKind::Angle, side: BoundSide::Upper, index: i },
        });
    }
    for i in 0..l {
        let cap = case.lines[i].flow_max * fs.z[i];
        rows.push(NumericRow {
            a: (0..k).map(|c| -maps.y_f[i][c]).collect(),
            b: fs.f[i] + cap,
            label: RowLabel { kind: RowKind::Flow, side: BoundSide::Lower, index: i },
        });
        rows.push(NumericRow {
            a: (0..k).map(|c| maps.y_f[i][c]).collect(),
            b: cap - fs.f[i],
            label: RowLabel { kind: RowKind::Flow, side: BoundSide::Upper, index: i },
        });
    }
    rows
}

/// Violation frequency of one limit row over the test set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RowRate {
    pub row: String,
    pub rate: f64,
}

/// Out-of-sample scorecard. The violation rate is averaged three ways: per
/// row then across rows (headline), per scenario then across scenarios, and
/// as the fraction of scenarios with at least one violated row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvaluationReport {
    pub sample_count: usize,
    /// c'g + q'gamma * mean(1'xi) over the test set.
    pub oos_cost: f64,
    pub row_rates: Vec<RowRate>,
    pub avg_rate_rows: f64,
    pub avg_rate_scenarios: f64,
    pub joint_rate: f64,
}

/// Deterministic sum: accumulate in sorted order so that any permutation of
/// the inputs produces bit-identical output.
fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Score a solution against fresh scenarios: per-row violation frequencies
/// and the expected operating cost.
pub fn oos_evaluate(
    sol: &Solution,
    test: &ScenarioSet,
    case: &GridCase,
) -> Result<EvaluationReport, EvaluateError> {
    if test.dim != sol.k {
        return Err(EvaluateError::DimensionMismatch { expected: sol.k, got: test.dim });
    }
    let rows = numeric_cc_rows(case, sol);
    let nrows = rows.len();
    let s = test.len();
    let (row_counts, joint_count, scenario_fracs) = test
        .samples
        .par_iter()
        .map(|xi| {
            let mut counts = vec![0usize; nrows];
            let mut any = false;
            for (r, row) in rows.iter().enumerate() {
                let lhs: f64 = row.a.iter().zip(xi).map(|(a, v)| a * v).sum();
                if lhs > row.b + VIOLATION_TOL {
                    counts[r] = 1;
                    any = true;
                }
            }
            let frac = counts.iter().sum::<usize>() as f64 / nrows as f64;
            (counts, usize::from(any), frac)
        })
        .reduce(
            || (vec![0usize; nrows], 0usize, 0.0f64),
            |(mut c1, j1, f1), (c2, j2, f2)| {
                for (a, b) in c1.iter_mut().zip(c2) {
                    *a += b;
                }
                (c1, j1 + j2, f1 + f2)
            },
        );
    let row_rates: Vec<RowRate> = rows
        .iter()
        .zip(&row_counts)
        .map(|(row, &c)| RowRate { row: row.label.to_string(), rate: c as f64 / s as f64 })
        .collect();
    let avg_rate_rows = row_rates.iter().map(|r| r.rate).sum::<f64>() / nrows as f64;
    let avg_rate_scenarios = scenario_fracs / s as f64;
    let joint_rate = joint_count as f64 / s as f64;

    let agg = case.bus_aggregates();
    let first_cost: f64 =
        (0..case.num_buses()).map(|i| agg.cost[i] * sol.first_stage.g[i]).sum();
    let totals: Vec<f64> = test.samples.iter().map(|xi| xi.iter().sum()).collect();
    let q_gamma: f64 =
        (0..case.num_buses()).map(|i| agg.recourse_cost[i] * sol.first_stage.gamma[i]).sum();
    let oos_cost = first_cost + q_gamma * stable_mean(&totals);

    Ok(EvaluationReport {
        sample_count: s,
        oos_cost,
        row_rates,
        avg_rate_rows,
        avg_rate_scenarios,
        joint_rate,
    })
}

/// Minimum wind spill restoring the angle and flow limits at `xi - xi_c`.
/// By default curtailment is capped at the produced amount `max(xi, 0)`;
/// `paper_exact` lifts the cap.
pub fn curtailment(
    sol: &Solution,
    case: &GridCase,
    xi: &[f64],
    paper_exact: bool,
) -> Result<Vec<f64>, EvaluateError> {
    let k = sol.k;
    if xi.len() != k {
        return Err(EvaluateError::DimensionMismatch { expected: k, got: xi.len() });
    }
    let n = case.num_buses();
    let l = case.num_lines();
    let fs = &sol.first_stage;
    let maps = &sol.recourse;
    let mut model = MilpModel::new(ModelMeta::default());
    let vars: Vec<usize> = (0..k)
        .map(|c| {
            let ub = if paper_exact { DEFAULT_BOUND } else { xi[c].max(0.0) };
            model.add_named_var(format!("xic_{c}"), VarKind::Continuous, 0.0, ub)
        })
        .collect();
    for (c, &v) in vars.iter().enumerate() {
        model.set_objective(v, 1.0);
        let _ = c;
    }
    for i in 0..n {
        let base: f64 =
            fs.theta[i] + (0..k).map(|c| maps.y_theta[i][c] * xi[c]).sum::<f64>();
        let coeffs: Vec<(usize, f64)> = (0..k)
            .filter(|&c| maps.y_theta[i][c] != 0.0)
            .map(|c| (vars[c], -maps.y_theta[i][c]))
            .collect();
        if coeffs.is_empty() {
            continue;
        }
        model.add_row(
            format!("ang_hi_{i}"),
            coeffs.clone(),
            Sense::Le,
            case.buses[i].theta_max - base,
        );
        model.add_row(format!("ang_lo_{i}"), coeffs, Sense::Ge, case.buses[i].theta_min - base);
    }
    for i in 0..l {
        let cap = case.lines[i].flow_max * fs.z[i];
        let base: f64 = fs.f[i] + (0..k).map(|c| maps.y_f[i][c] * xi[c]).sum::<f64>();
        let coeffs: Vec<(usize, f64)> = (0..k)
            .filter(|&c| maps.y_f[i][c] != 0.0)
            .map(|c| (vars[c], -maps.y_f[i][c]))
            .collect();
        if coeffs.is_empty() {
            if base.abs() > cap + VIOLATION_TOL {
                return Err(EvaluateError::CurtailmentInfeasible);
            }
            continue;
        }
        model.add_row(format!("flow_hi_{i}"), coeffs.clone(), Sense::Le, cap - base);
        model.add_row(format!("flow_lo_{i}"), coeffs, Sense::Ge, -cap - base);
    }
    let res = solve_lp(&model, None);
    if res.status != LpStatus::Optimal {
        return Err(EvaluateError::CurtailmentInfeasible);
    }
    Ok(vars
        .iter()
        .map(|&v| if res.x[v].abs() < 1e-9 { 0.0 } else { res.x[v] })
        .collect())
}

/// Distribution summary of total curtailment over a scenario set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurtailmentSummary {
    pub sample_count: usize,
    pub feasible_count: usize,
    pub infeasible_count: usize,
    /// Mean of total spill over feasible scenarios.
    pub mean: f64,
    pub std_error: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

/// Run the curtailment program over every scenario and aggregate.
pub fn monte_carlo_curtailment(
    sol: &Solution,
    case: &GridCase,
    test: &ScenarioSet,
    paper_exact: bool,
) -> Result<CurtailmentSummary, EvaluateError> {
    if test.dim != sol.k {
        return Err(EvaluateError::DimensionMismatch { expected: sol.k, got: test.dim });
    }
    let totals: Vec<Option<f64>> = test
        .samples
        .par_iter()
        .map(|xi| curtailment(sol, case, xi, paper_exact).ok().map(|c| c.iter().sum()))
        .collect();
    let mut feasible: Vec<f64> = totals.iter().filter_map(|t| *t).collect();
    feasible.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let infeasible_count = totals.len() - feasible.len();
    let m = feasible.len();
    let mean = if m == 0 { 0.0 } else { feasible.iter().sum::<f64>() / m as f64 };
    let variance = if m < 2 {
        0.0
    } else {
        feasible.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m as f64 - 1.0)
    };
    let quantile = |p: f64| -> f64 {
        if m == 0 {
            0.0
        } else {
            feasible[((p * (m as f64 - 1.0)).round() as usize).min(m - 1)]
        }
    };
    Ok(CurtailmentSummary {
        sample_count: totals.len(),
        feasible_count: m,
        infeasible_count,
        mean,
        std_error: if m == 0 { 0.0 } else { (variance / m as f64).sqrt() },
        median: quantile(0.5),
        p95: quantile(0.95),
        max: feasible.last().copied().unwrap_or(0.0),
    })
}

/// Re-solve the dc network directly on a slice of scenarios and compare with
/// the affine maps; returns the worst absolute deviation over flows and
/// angles. `stride` picks every stride-th scenario (e.g. 100 for a 1% check).
pub fn recourse_cross_check(
    sol: &Solution,
    case: &GridCase,
    ops: &NetworkOperators,
    placement: &PlacementMatrix,
    test: &ScenarioSet,
    stride: usize,
) -> Result<f64, TwoStageError> {
    let n = case.num_buses();
    let l = case.num_lines();
    let k = sol.k;
    let closed: Vec<bool> = sol.first_stage.z.iter().map(|&z| z > 0.5).collect();
    let fm = placement.matrix.as_mat();
    let mut worst: f64 = 0.0;
    for xi in test.samples.iter().step_by(stride.max(1)) {
        let injection: Vec<f64> = (0..n)
            .map(|i| {
                (0..k)
                    .map(|c| (sol.first_stage.gamma[i] - fm[(i, c)]) * xi[c])
                    .sum::<f64>()
            })
            .collect();
        let (theta, f) = dc_flow(case, ops, &closed, &injection)?;
        for i in 0..n {
            let lin: f64 = (0..k).map(|c| sol.recourse.y_theta[i][c] * xi[c]).sum();
            worst = worst.max((theta[i] - lin).abs());
        }
        for i in 0..l {
            let lin: f64 = (0..k).map(|c| sol.recourse.y_f[i][c] * xi[c]).sum();
            worst = worst.max((f[i] - lin).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::build_operators;
    use crate::fixtures::triangle_case;
    use crate::two_stage::recourse_matrices;
    use crate::uncertainty::placement_matrix;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A feasible nominal plan on the triangle with unit participation at the
    /// cheap generator bus and exact recourse maps.
    fn triangle_solution() -> (GridCase, Solution, PlacementMatrix) {
        let case = triangle_case();
        let ops = build_operators(&case, None);
        let placement = placement_matrix(&case, &[3]).unwrap();
        let z = vec![1.0, 1.0, 1.0];
        let mut gamma = vec![0.0; 3];
        gamma[0] = 1.0;
        let maps = recourse_matrices(&case, &ops, &z, &gamma, &placement).unwrap();
        // nominal dispatch: a 1.1 pu transfer keeps the direct line under its
        // 0.8 pu cap (it carries two thirds of the transfer)
        let injection: Vec<f64> = vec![1.1, 0.0, 0.7 - 1.8];
        let closed = vec![true, true, true];
        let (theta, f) = dc_flow(&case, &ops, &closed, &injection).unwrap();
        let fs = FirstStage { g: vec![1.1, 0.0, 0.7], theta, f, z, gamma };
        let sol = Solution {
            first_stage: fs,
            recourse: maps,
            k: 1,
            objective: 0.0,
            method: "test".into(),
            epsilon: None,
            line_out_budget: 0,
            wind_buses: vec![3],
            diagnostics: SolveDiagnostics::default(),
        };
        (case, sol, placement)
    }

    #[test]
    fn zero_scenarios_no_violations() {
        let (case, sol, _) = triangle_solution();
        let test = ScenarioSet::new(vec![vec![0.0]; 20]).unwrap();
        let rep = oos_evaluate(&sol, &test, &case).unwrap();
        assert_eq!(rep.joint_rate, 0.0);
        assert_eq!(rep.avg_rate_rows, 0.0);
        assert!(rep.row_rates.iter().all(|r| r.rate == 0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (case, sol, _) = triangle_solution();
        let test = ScenarioSet::new(vec![vec![0.0, 0.0]; 5]).unwrap();
        assert!(matches!(
            oos_evaluate(&sol, &test, &case),
            Err(EvaluateError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rates_match_direct_recount() {
        let (case, sol, _) = triangle_solution();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let test =
            ScenarioSet::new((0..500).map(|_| vec![rng.gen_range(-1.5..1.5)]).collect()).unwrap();
        let rep = oos_evaluate(&sol, &test, &case).unwrap();
        let rows = numeric_cc_rows(&case, &sol);
        // independent serial recount
        for (r, row) in rows.iter().enumerate() {
            let count = test
                .samples
                .iter()
                .filter(|xi| row.a[0] * xi[0] > row.b + VIOLATION_TOL)
                .count();
            assert_abs_diff_eq!(rep.row_rates[r].rate, count as f64 / 500.0, epsilon = 1e-12);
        }
        // the two per-event averages agree (same total violation mass)
        assert_abs_diff_eq!(rep.avg_rate_rows, rep.avg_rate_scenarios, epsilon = 1e-12);
        assert!(rep.joint_rate >= rep.avg_rate_rows);
    }

    #[test]
    fn permutation_invariance() {
        let (case, sol, _) = triangle_solution();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut samples: Vec<Vec<f64>> =
            (0..200).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let a = oos_evaluate(&sol, &ScenarioSet::new(samples.clone()).unwrap(), &case).unwrap();
        samples.reverse();
        samples.swap(0, 57);
        let b = oos_evaluate(&sol, &ScenarioSet::new(samples).unwrap(), &case).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feasible_scenario_needs_no_curtailment() {
        let (case, sol, _) = triangle_solution();
        let rows = numeric_cc_rows(&case, &sol);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..200 {
            let xi = vec![rng.gen_range(-1.0..1.0)];
            let feasible = rows
                .iter()
                .all(|r| r.a[0] * xi[0] <= r.b + VIOLATION_TOL);
            if feasible {
                let c = curtailment(&sol, &case, &xi, false).unwrap();
                assert_eq!(c, vec![0.0]);
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn curtailment_matches_binding_row_closed_form() {
        // push the wind far enough that exactly one flow row binds; the spill
        // equals overshoot divided by the sensitivity of that row
        let (case, sol, _) = triangle_solution();
        let rows = numeric_cc_rows(&case, &sol);
        let xi_big = 3.0;
        let mut worst_need = 0.0f64;
        for r in rows.iter().filter(|r| matches!(r.label.kind, RowKind::Flow | RowKind::Angle)) {
            if r.a[0] > 1e-12 {
                let overshoot = r.a[0] * xi_big - r.b;
                if overshoot > 0.0 {
                    worst_need = worst_need.max(overshoot / r.a[0]);
                }
            }
        }
        assert!(worst_need > 0.0, "test scenario must violate something");
        let c = curtailment(&sol, &case, &[xi_big], false).unwrap();
        assert_abs_diff_eq!(c[0], worst_need, epsilon = 1e-7);
    }

    #[test]
    fn physical_cap_limits_spill_paper_exact_lifts_it() {
        let (case, sol, _) = triangle_solution();
        // negative wind cannot be curtailed under the physical cap
        let xi = [-0.4];
        let capped = curtailment(&sol, &case, &xi, false);
        if let Ok(c) = &capped {
            assert_eq!(c[0], 0.0);
        }
        let exact = curtailment(&sol, &case, &xi, true).unwrap();
        assert!(exact[0] >= 0.0);
    }

    #[test]
    fn monte_carlo_duplicated_scenario_is_the_single_value() {
        let (case, sol, _) = triangle_solution();
        let xi = vec![2.5];
        let single: f64 = curtailment(&sol, &case, &xi, false).unwrap().iter().sum();
        let test = ScenarioSet::new(vec![xi; 40]).unwrap();
        let sum = monte_carlo_curtailment(&sol, &case, &test, false).unwrap();
        assert_abs_diff_eq!(sum.mean, single, epsilon = 1e-9);
        assert_eq!(sum.infeasible_count, 0);
        assert_abs_diff_eq!(sum.std_error, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sum.median, single, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_scenarios_mean_zero() {
        let (case, sol, _) = triangle_solution();
        let test = ScenarioSet::new(vec![vec![0.0]; 10]).unwrap();
        let sum = monte_carlo_curtailment(&sol, &case, &test, false).unwrap();
        assert_eq!(sum.mean, 0.0);
        assert_eq!(sum.max, 0.0);
    }

    #[test]
    fn cross_check_agrees_with_direct_resolve() {
        let (case, sol, placement) = triangle_solution();
        let ops = build_operators(&case, None);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let test =
            ScenarioSet::new((0..300).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect()).unwrap();
        let dev = recourse_cross_check(&sol, &case, &ops, &placement, &test, 3).unwrap();
        assert!(dev < 1e-8, "deviation {dev}");
    }

    #[test]
    fn evaluation_is_read_only() {
        let (case, sol, _) = triangle_solution();
        let copy = sol.clone();
        let test = ScenarioSet::new(vec![vec![0.3]; 25]).unwrap();
        let _ = oos_evaluate(&sol, &test, &case).unwrap();
        let _ = monte_carlo_curtailment(&sol, &case, &test, false).unwrap();
        assert_eq!(sol, copy);
    }
}
