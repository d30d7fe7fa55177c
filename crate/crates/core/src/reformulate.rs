//! Builders that turn a grid case plus an uncertainty description into a
//! solvable mixed-integer model, one per method: deterministic switching,
//! sample-average chance rows, Gaussian cone cuts, the mean-MAD robust dual
//! block, its multimodal extension solved by coordinate descent, and the
//! Wasserstein-ball tightening of the sample rows. Also hosts the worst-case
//! probability oracle used both inside the descent loop and for analysis.

use crate::case_model::{GridCase, NetworkOperators};
use crate::milp::{solve_lp, solve_milp, IncumbentCut, LpStatus, MilpResult, MilpStatus};
use crate::model::{AffExpr, MilpModel, ModelMeta, Row, Sense, VarId, VarKind};
use crate::evaluate::{SolveDiagnostics, Solution};
use crate::linalg::DMat;
use crate::two_stage::{
    balance_equality_block, cc_row_set, flow_dual_blocks, recourse_matrices, CcRow,
    DecisionLayout, RecourseMaps, RowLabel, TwoStageError,
};
use crate::uncertainty::{
    box_support, mean_strictly_inside, moment_stats, Mode, PlacementMatrix, Polytope,
    ScenarioSet, UncertaintyError,
};
use rayon::prelude::*;
use thiserror::Error;

/// Box for the scaled dual multipliers in the robust blocks. Bounding them
/// shrinks the certificate space slightly (rows binding within ~1e-6 of their
/// limit are treated as uncertifiable), which is conservative, never unsound.
pub const DUAL_BOUND: f64 = 1.0e6;

/// Box for the unscaled multipliers of the worst-case probability program,
/// which can be legitimately large near feasibility thresholds.
const WCP_BOUND: f64 = 1.0e7;

#[derive(Debug, Error)]
pub enum ReformulateError {
    #[error("epsilon {0} outside the supported interval (0, 0.5]")]
    QuantileDomain(f64),
    #[error("ambiguity mean is not strictly inside the support polytope")]
    MeanOutsideSupport,
    #[error("worst-case probability dual is unbounded (mean on the support boundary or unbounded support)")]
    UnboundedDual,
    #[error("model is infeasible: {0}")]
    Infeasible(String),
    #[error("initial unimodal model is infeasible")]
    NoFeasibleStart,
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    TwoStage(#[from] TwoStageError),
}

// ---------------------------------------------------------------------------
// Standard normal quantile
// ---------------------------------------------------------------------------

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9). Requires `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument {p} outside (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Violation budget per chance row: a uniform base value with optional
/// per-row overrides.
#[derive(Debug, Clone)]
pub struct EpsPolicy {
    pub base: f64,
    pub overrides: Vec<(RowLabel, f64)>,
}

impl From<f64> for EpsPolicy {
    fn from(base: f64) -> Self {
        EpsPolicy { base, overrides: vec![] }
    }
}

impl EpsPolicy {
    pub fn value(&self, label: RowLabel) -> f64 {
        self.overrides
            .iter()
            .find(|(l, _)| *l == label)
            .map(|&(_, e)| e)
            .unwrap_or(self.base)
    }
}

/// A model plus the handles needed to interpret its solution.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub model: MilpModel,
    pub layout: DecisionLayout,
    pub cc_rows: Vec<CcRow>,
}

fn meta(method: &str, epsilon: Option<f64>, line_out_budget: usize) -> ModelMeta {
    ModelMeta {
        method: method.into(),
        epsilon,
        line_out_budget: Some(line_out_budget),
        enforce_connectivity: true,
    }
}

/// Shared stochastic backbone: decision block, recourse balance identity,
/// dualized flow-consistency ranges over the support, expected recourse cost.
fn backbone(
    case: &GridCase,
    ops: &NetworkOperators,
    placement: &PlacementMatrix,
    support: &Polytope,
    mean: &[f64],
    line_out_budget: usize,
    meta: ModelMeta,
) -> BuiltModel {
    let k = placement.matrix.cols;
    let mut model = MilpModel::new(meta);
    let layout = DecisionLayout::install(&mut model, case, ops, k, line_out_budget);
    balance_equality_block(&mut model, &layout, ops, placement);
    flow_dual_blocks(&mut model, &layout, case, ops, support);
    let agg = case.bus_aggregates();
    let mean_total: f64 = mean.iter().sum();
    for i in 0..case.num_buses() {
        model.add_objective(layout.gamma[i], agg.recourse_cost[i] * mean_total);
    }
    let cc_rows = cc_row_set(case, &layout);
    BuiltModel { model, layout, cc_rows }
}

/// A chance row whose uncertain side is structurally zero reduces to the
/// plain inequality `b(x) >= 0`.
fn add_degenerate_row(model: &mut MilpModel, row: &CcRow) {
    if row.b.terms.is_empty() {
        debug_assert!(row.b.constant >= -1e-9, "constant row {} violated", row.label);
        return;
    }
    model.add_affine_row(format!("det_{}", row.label), &row.b, Sense::Ge, &AffExpr::constant(0.0));
}

// ---------------------------------------------------------------------------
// Deterministic switching
// ---------------------------------------------------------------------------

/// Mixed-integer switching problem without uncertainty: dispatch, angles,
/// gated flows, the topology budget, generation cost.
pub fn build_deterministic(
    case: &GridCase,
    ops: &NetworkOperators,
    line_out_budget: usize,
) -> BuiltModel {
    let mut model = MilpModel::new(meta("det", None, line_out_budget));
    let layout = DecisionLayout::install(&mut model, case, ops, 0, line_out_budget);
    BuiltModel { model, layout, cc_rows: vec![] }
}

// ---------------------------------------------------------------------------
// Sample-average and Wasserstein rows
// ---------------------------------------------------------------------------

fn build_sampled(
    case: &GridCase,
    ops: &NetworkOperators,
    scenarios: &ScenarioSet,
    delta: f64,
    eps: &EpsPolicy,
    line_out_budget: usize,
    placement: &PlacementMatrix,
    method: &str,
) -> Result<BuiltModel, ReformulateError> {
    let support = box_support(scenarios, 1e-9)?;
    let (mean, _) = moment_stats(scenarios);
    let mut built = backbone(
        case,
        ops,
        placement,
        &support,
        &mean,
        line_out_budget,
        meta(method, Some(eps.base), line_out_budget),
    );
    let s = scenarios.len();
    let k = scenarios.dim;
    let rows = built.cc_rows.clone();
    let model = &mut built.model;
    for row in &rows {
        if row.a.iter().all(|e| e.is_fixed_zero(model)) {
            add_degenerate_row(model, row);
            continue;
        }
        let eps_i = eps.value(row.label);
        // L1-norm epigraph of the uncertain coefficients, shared by all
        // sample rows of this limit
        let norm_vars: Vec<VarId> = if delta > 0.0 {
            (0..k)
                .map(|c| {
                    let v = model.add_named_var(
                        format!("wnrm_{}_{c}", row.label),
                        VarKind::Continuous,
                        0.0,
                        crate::model::DEFAULT_BOUND,
                    );
                    let sv = AffExpr::var(v);
                    model.add_affine_row(format!("wnrm_{}_{c}_p", row.label), &sv, Sense::Ge, &row.a[c]);
                    model.add_affine_row(
                        format!("wnrm_{}_{c}_m", row.label),
                        &sv,
                        Sense::Ge,
                        &row.a[c].scaled(-1.0),
                    );
                    v
                })
                .collect()
        } else {
            vec![]
        };
        let mut binaries: Vec<VarId> = vec![];
        for (j, xi) in scenarios.samples.iter().enumerate() {
            let mut expr = row.b.clone();
            for c in 0..k {
                expr = expr.plus(&row.a[c].scaled(-xi[c]));
            }
            // the norm tightening is bounded by the coefficient bounds, not
            // by the (loose) epigraph variable box
            let mut norm_worst = 0.0;
            if delta > 0.0 {
                for (c, &v) in norm_vars.iter().enumerate() {
                    expr.add_term(v, -delta);
                    let (lo, hi) = row.a[c].bounds(model);
                    norm_worst += delta * lo.abs().max(hi.abs());
                }
            }
            let (lo, _) = {
                let mut probe = row.b.clone();
                for c in 0..k {
                    probe = probe.plus(&row.a[c].scaled(-xi[c]));
                }
                probe.bounds(model)
            };
            let worst = -(lo - norm_worst);
            if worst <= 0.0 {
                // the row holds for every admissible decision
                continue;
            }
            let w = model.add_named_var(format!("w_{}_{j}", row.label), VarKind::Binary, 0.0, 1.0);
            expr.add_term(w, worst);
            model.add_affine_row(
                format!("cc_{}_s{j}", row.label),
                &expr,
                Sense::Ge,
                &AffExpr::constant(0.0),
            );
            binaries.push(w);
        }
        if !binaries.is_empty() {
            model.add_row(
                format!("ccbudget_{}", row.label),
                binaries.iter().map(|&v| (v, 1.0)).collect(),
                Sense::Le,
                s as f64 * eps_i,
            );
        }
    }
    Ok(built)
}

/// Chance rows enforced on all but a fraction `eps` of the given samples,
/// with one relief binary per limit row and sample.
pub fn build_saa(
    case: &GridCase,
    ops: &NetworkOperators,
    scenarios: &ScenarioSet,
    eps: impl Into<EpsPolicy>,
    line_out_budget: usize,
    placement: &PlacementMatrix,
) -> Result<BuiltModel, ReformulateError> {
    build_sampled(case, ops, scenarios, 0.0, &eps.into(), line_out_budget, placement, "saa")
}

/// Sample rows tightened by `delta` times the L1 norm of the uncertain
/// coefficients: robust to every distribution within sup-transport distance
/// `delta` of the empirical one. `delta = 0` coincides with [`build_saa`].
pub fn build_wasserstein(
    case: &GridCase,
    ops: &NetworkOperators,
    scenarios: &ScenarioSet,
    delta: f64,
    eps: impl Into<EpsPolicy>,
    line_out_budget: usize,
    placement: &PlacementMatrix,
) -> Result<BuiltModel, ReformulateError> {
    build_sampled(case, ops, scenarios, delta, &eps.into(), line_out_budget, placement, "wass")
}

// ---------------------------------------------------------------------------
// Gaussian quantile rows via supporting-hyperplane cuts
// ---------------------------------------------------------------------------

/// Separates violated linearizations of the quantile cone
/// `mu'a + kappa * sqrt(a' Sigma a) <= b` at candidate solutions.
#[derive(Debug, Clone)]
pub struct ConeCutGenerator {
    pub kappa: f64,
    pub mean: Vec<f64>,
    pub sigma: DMat,
    rows: Vec<CcRow>,
    round: usize,
}

impl ConeCutGenerator {
    fn quad(&self, a: &[f64]) -> (Vec<f64>, f64) {
        let k = a.len();
        let mut sig_a = vec![0.0; k];
        for r in 0..k {
            sig_a[r] = (0..k).map(|c| self.sigma[(r, c)] * a[c]).sum();
        }
        let q: f64 = (0..k).map(|r| a[r] * sig_a[r]).sum();
        (sig_a, q.max(0.0))
    }

    /// Largest relative cone violation over all chance rows at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.rows {
            let a: Vec<f64> = row.a.iter().map(|e| e.eval(x)).collect();
            let b = row.b.eval(x);
            let (_, q) = self.quad(&a);
            let mean_part: f64 = self.mean.iter().zip(&a).map(|(m, v)| m * v).sum();
            let viol = (mean_part + self.kappa * q.sqrt() - b) / b.abs().max(1.0);
            worst = worst.max(viol);
        }
        worst
    }

    /// Supporting hyperplanes of the cone at `x`, one per violated row. The
    /// cut is tight at `x` and valid everywhere by Cauchy-Schwarz.
    pub fn cuts(&mut self, x: &[f64], rel_tol: f64) -> Vec<Row> {
        let mut out = vec![];
        self.round += 1;
        for row in &self.rows {
            let a: Vec<f64> = row.a.iter().map(|e| e.eval(x)).collect();
            let b = row.b.eval(x);
            let (sig_a, q) = self.quad(&a);
            if q <= 1e-14 {
                continue;
            }
            let norm = q.sqrt();
            let mean_part: f64 = self.mean.iter().zip(&a).map(|(m, v)| m * v).sum();
            if (mean_part + self.kappa * norm - b) / b.abs().max(1.0) <= rel_tol {
                continue;
            }
            let mut expr = row.b.scaled(-1.0);
            for c in 0..a.len() {
                let coef = self.mean[c] + self.kappa * sig_a[c] / norm;
                expr = expr.plus(&row.a[c].scaled(coef));
            }
            // merge repeated variables (plus() concatenates terms) and drop
            // numerically negligible ones so the cut cannot wreck conditioning
            let mut merged: std::collections::BTreeMap<VarId, f64> = Default::default();
            for &(v, c) in &expr.terms {
                *merged.entry(v).or_insert(0.0) += c;
            }
            let max_c = merged.values().fold(0.0f64, |m, &c| m.max(c.abs()));
            let coeffs: Vec<_> =
                merged.into_iter().filter(|&(_, c)| c.abs() >= 1e-9 * max_c).collect();
            out.push(Row {
                name: format!("gcut_{}_{}", row.label, self.round),
                coeffs,
                sense: Sense::Le,
                rhs: -expr.constant,
            });
        }
        out
    }
}

/// Gaussian chance rows: the mean inequality in the model itself plus a cut
/// generator for the quantile cone, to be driven by [`solve_gaussian`].
pub fn build_gaussian(
    case: &GridCase,
    ops: &NetworkOperators,
    mean: &[f64],
    sigma: &DMat,
    eps: f64,
    line_out_budget: usize,
    placement: &PlacementMatrix,
) -> Result<(BuiltModel, ConeCutGenerator), ReformulateError> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(ReformulateError::QuantileDomain(eps));
    }
    let kappa = normal_quantile(1.0 - eps);
    let k = mean.len();
    // the affine-consistency ranges need a bounded support: six standard
    // deviations around the mean covers the quantile geometry comfortably
    let lo: Vec<f64> = (0..k).map(|c| mean[c] - 6.0 * sigma[(c, c)].sqrt() - 1e-6).collect();
    let hi: Vec<f64> = (0..k).map(|c| mean[c] + 6.0 * sigma[(c, c)].sqrt() + 1e-6).collect();
    let support = Polytope::from_box(&lo, &hi);
    let mut built = backbone(
        case,
        ops,
        placement,
        &support,
        mean,
        line_out_budget,
        meta("gauss", Some(eps), line_out_budget),
    );
    let rows = built.cc_rows.clone();
    let model = &mut built.model;
    let mut active = vec![];
    for row in &rows {
        if row.a.iter().all(|e| e.is_fixed_zero(model)) {
            add_degenerate_row(model, row);
            continue;
        }
        let mut lhs = AffExpr::constant(0.0);
        for c in 0..k {
            lhs = lhs.plus(&row.a[c].scaled(mean[c]));
        }
        model.add_affine_row(format!("gmean_{}", row.label), &lhs, Sense::Le, &row.b);
        active.push(row.clone());
    }
    Ok((
        built,
        ConeCutGenerator { kappa, mean: mean.to_vec(), sigma: sigma.clone(), rows: active, round: 0 },
    ))
}

// ---------------------------------------------------------------------------
// Mean-MAD robust rows
// ---------------------------------------------------------------------------

fn mad_dual_block(
    model: &mut MilpModel,
    row: &CcRow,
    mean: &[f64],
    mad: &[f64],
    support: &Polytope,
    eps: f64,
) {
    let k = mean.len();
    let w = support.num_rows();
    let u = support.u.as_mat();
    let t = &support.t;
    let tag = row.label;
    let nn = |model: &mut MilpModel, name: String| {
        model.add_named_var(name, VarKind::Continuous, 0.0, DUAL_BOUND)
    };
    let alpha =
        model.add_named_var(format!("mA_{tag}"), VarKind::Continuous, -DUAL_BOUND, DUAL_BOUND);
    let beta: Vec<VarId> = (0..k)
        .map(|c| {
            model.add_named_var(format!("mB_{tag}_{c}"), VarKind::Continuous, -DUAL_BOUND, DUAL_BOUND)
        })
        .collect();
    let kappa: Vec<VarId> = (0..k).map(|c| nn(model, format!("mK_{tag}_{c}"))).collect();
    let lambda = nn(model, format!("mL_{tag}"));
    let pi1: Vec<VarId> = (0..k).map(|c| nn(model, format!("mP1_{tag}_{c}"))).collect();
    let tau1: Vec<VarId> = (0..k).map(|c| nn(model, format!("mT1_{tag}_{c}"))).collect();
    let pi2: Vec<VarId> = (0..k).map(|c| nn(model, format!("mP2_{tag}_{c}"))).collect();
    let tau2: Vec<VarId> = (0..k).map(|c| nn(model, format!("mT2_{tag}_{c}"))).collect();
    let psi1: Vec<VarId> = (0..w).map(|r| nn(model, format!("mS1_{tag}_{r}"))).collect();
    let psi2: Vec<VarId> = (0..w).map(|r| nn(model, format!("mS2_{tag}_{r}"))).collect();

    // certificate keeps at least 1-eps of the mass feasible
    let mut lla: Vec<(VarId, f64)> = vec![(alpha, 1.0), (lambda, -(1.0 - eps))];
    for c in 0..k {
        lla.push((beta[c], mean[c]));
        lla.push((kappa[c], -mad[c]));
    }
    model.add_row(format!("lla_{tag}"), lla, Sense::Ge, 0.0);

    // branch kept below one everywhere on the support
    let mut llb: Vec<(VarId, f64)> = vec![(alpha, 1.0), (lambda, -1.0)];
    for c in 0..k {
        llb.push((pi1[c], mean[c]));
        llb.push((tau1[c], -mean[c]));
    }
    for r in 0..w {
        llb.push((psi1[r], t[r]));
    }
    model.add_row(format!("llb_{tag}"), llb, Sense::Le, 0.0);
    for c in 0..k {
        let mut llc: Vec<(VarId, f64)> = vec![(beta[c], 1.0), (tau1[c], 1.0), (pi1[c], -1.0)];
        for r in 0..w {
            let urc = u[(r, c)];
            if urc != 0.0 {
                llc.push((psi1[r], -urc));
            }
        }
        model.add_row(format!("llc_{tag}_{c}"), llc, Sense::Eq, 0.0);
        model.add_row(
            format!("lld_{tag}_{c}"),
            vec![(pi1[c], 1.0), (tau1[c], 1.0), (kappa[c], -1.0)],
            Sense::Eq,
            0.0,
        );
    }

    // branch kept below zero wherever the limit row fails
    let mut lle = AffExpr::var(alpha);
    for c in 0..k {
        lle.add_term(pi2[c], mean[c]);
        lle.add_term(tau2[c], -mean[c]);
    }
    for r in 0..w {
        lle.add_term(psi2[r], t[r]);
    }
    model.add_affine_row(format!("lle_{tag}"), &lle, Sense::Le, &row.b);
    for c in 0..k {
        let mut llf = row.a[c].clone();
        llf.add_term(beta[c], 1.0);
        llf.add_term(tau2[c], 1.0);
        llf.add_term(pi2[c], -1.0);
        for r in 0..w {
            let urc = u[(r, c)];
            if urc != 0.0 {
                llf.add_term(psi2[r], -urc);
            }
        }
        model.add_affine_row(format!("llf_{tag}_{c}"), &llf, Sense::Eq, &AffExpr::constant(0.0));
        model.add_row(
            format!("llg_{tag}_{c}"),
            vec![(pi2[c], 1.0), (tau2[c], 1.0), (kappa[c], -1.0)],
            Sense::Eq,
            0.0,
        );
    }
}

/// Robust chance rows over every distribution on `support` with the given
/// mean and componentwise mean-absolute-deviation bound, written as exact
/// linear duality blocks.
pub fn build_mad(
    case: &GridCase,
    ops: &NetworkOperators,
    mean: &[f64],
    mad: &[f64],
    support: &Polytope,
    eps: impl Into<EpsPolicy>,
    line_out_budget: usize,
    placement: &PlacementMatrix,
) -> Result<BuiltModel, ReformulateError> {
    if !mean_strictly_inside(mean, support) {
        return Err(ReformulateError::MeanOutsideSupport);
    }
    let eps = eps.into();
    let mut built = backbone(
        case,
        ops,
        placement,
        support,
        mean,
        line_out_budget,
        meta("mad", Some(eps.base), line_out_budget),
    );
    let rows = built.cc_rows.clone();
    let model = &mut built.model;
    for row in &rows {
        if row.a.iter().all(|e| e.is_fixed_zero(model)) {
            add_degenerate_row(model, row);
        } else {
            mad_dual_block(model, row, mean, mad, support, eps.value(row.label));
        }
    }
    Ok(built)
}

// ---------------------------------------------------------------------------
// Worst-case probability oracle
// ---------------------------------------------------------------------------

/// Smallest probability of `a' xi <= b` over all distributions on `support`
/// with mean `mean` and componentwise MAD at most `mad`, computed from the
/// finite dual of the moment problem. Also returns the multiplier of the
/// violation-region branch, used by the multimodal descent loop.
/// Largest value of `a' xi` over a box support.
fn box_max(a: &[f64], support: &Polytope) -> Option<f64> {
    let (lo, hi) = support.as_box()?;
    Some(a.iter().zip(lo.iter().zip(&hi)).map(|(&c, (&l, &h))| (c * l).max(c * h)).sum())
}

fn wcp_lp(
    a: &[f64],
    b: f64,
    mean: &[f64],
    mad: &[f64],
    support: &Polytope,
) -> Result<(f64, f64), ReformulateError> {
    if support.as_box().is_none() || !mean_strictly_inside(mean, support) {
        return Err(ReformulateError::UnboundedDual);
    }
    // the row holds everywhere on the support: probability one, certified by
    // the recession (inverse-multiplier zero) branch that the finite dual
    // below cannot reach when the threshold touches the support boundary
    if box_max(a, support).is_some_and(|mx| mx <= b + 1e-12) {
        return Ok((1.0, 0.0));
    }
    let k = mean.len();
    let w = support.num_rows();
    let u = support.u.as_mat();
    let t = &support.t;
    let mut m = MilpModel::new(ModelMeta::default());
    let nn = |m: &mut MilpModel, s: String| m.add_named_var(s, VarKind::Continuous, 0.0, WCP_BOUND);
    let alpha = m.add_named_var("alpha", VarKind::Continuous, -WCP_BOUND, WCP_BOUND);
    let beta: Vec<VarId> = (0..k)
        .map(|c| m.add_named_var(format!("beta_{c}"), VarKind::Continuous, -WCP_BOUND, WCP_BOUND))
        .collect();
    let kappa: Vec<VarId> = (0..k).map(|c| nn(&mut m, format!("kappa_{c}"))).collect();
    let lambda = nn(&mut m, "lambda".into());
    let pi1: Vec<VarId> = (0..k).map(|c| nn(&mut m, format!("pi1_{c}"))).collect();
    let tau1: Vec<VarId> = (0..k).map(|c| nn(&mut m, format!("tau1_{c}"))).collect();
    let pi2: Vec<VarId> = (0..k).map(|c| nn(&mut m, format!("pi2_{c}"))).collect();
    let tau2: Vec<VarId> = (0..k).map(|c| nn(&mut m, format!("tau2_{c}"))).collect();
    let psi1: Vec<VarId> = (0..w).map(|r| nn(&mut m, format!("psi1_{r}"))).collect();
    let psi2: Vec<VarId> = (0..w).map(|r| nn(&mut m, format!("psi2_{r}"))).collect();

    // maximize alpha + mean'beta - mad'kappa
    m.set_objective(alpha, -1.0);
    for c in 0..k {
        m.set_objective(beta[c], -mean[c]);
        m.set_objective(kappa[c], mad[c]);
    }

    let mut b1: Vec<(VarId, f64)> = vec![(alpha, 1.0)];
    for c in 0..k {
        b1.push((pi1[c], mean[c]));
        b1.push((tau1[c], -mean[c]));
    }
    for r in 0..w {
        b1.push((psi1[r], t[r]));
    }
    m.add_row("b1", b1, Sense::Le, 1.0);
    let mut b2: Vec<(VarId, f64)> = vec![(alpha, 1.0), (lambda, -b)];
    for c in 0..k {
        b2.push((pi2[c], mean[c]));
        b2.push((tau2[c], -mean[c]));
    }
    for r in 0..w {
        b2.push((psi2[r], t[r]));
    }
    m.add_row("b2", b2, Sense::Le, 0.0);
    for c in 0..k {
        let mut c1: Vec<(VarId, f64)> = vec![(beta[c], 1.0), (tau1[c], 1.0), (pi1[c], -1.0)];
        let mut c2: Vec<(VarId, f64)> =
            vec![(beta[c], 1.0), (lambda, a[c]), (tau2[c], 1.0), (pi2[c], -1.0)];
        for r in 0..w {
            let urc = u[(r, c)];
            if urc != 0.0 {
                c1.push((psi1[r], -urc));
                c2.push((psi2[r], -urc));
            }
        }
        m.add_row(format!("c1_{c}"), c1, Sense::Eq, 0.0);
        m.add_row(format!("c2_{c}"), c2, Sense::Eq, 0.0);
        m.add_row(
            format!("d1_{c}"),
            vec![(pi1[c], 1.0), (tau1[c], 1.0), (kappa[c], -1.0)],
            Sense::Eq,
            0.0,
        );
        m.add_row(
            format!("d2_{c}"),
            vec![(pi2[c], 1.0), (tau2[c], 1.0), (kappa[c], -1.0)],
            Sense::Eq,
            0.0,
        );
    }
    let res = solve_lp(&m, None);
    if res.status != LpStatus::Optimal {
        return Err(ReformulateError::UnboundedDual);
    }
    let z = (-res.objective).clamp(0.0, 1.0);
    let lam = res.x[lambda];
    let ell = if lam > 1e-12 { 1.0 / lam } else { f64::INFINITY };
    Ok((z, ell))
}

/// See [`wcp_lp`]; public entry returning the probability alone.
pub fn worst_case_probability(
    a: &[f64],
    b: f64,
    mean: &[f64],
    mad: &[f64],
    support: &Polytope,
) -> Result<f64, ReformulateError> {
    wcp_lp(a, b, mean, mad, support).map(|(z, _)| z)
}

// ---------------------------------------------------------------------------
// Solve drivers
// ---------------------------------------------------------------------------

fn connectivity_guard<'a>(
    case: &'a GridCase,
    layout: &'a DecisionLayout,
) -> impl FnMut(&[f64]) -> Vec<Row> + 'a {
    move |x: &[f64]| {
        let closed: Vec<bool> = layout.z.iter().map(|&v| x[v] > 0.5).collect();
        if case.closed_graph_connected(&closed) {
            return vec![];
        }
        // forbid this open set: at least one of the opened lines must close
        let coeffs: Vec<(VarId, f64)> = layout
            .z
            .iter()
            .enumerate()
            .filter(|&(i, _)| !closed[i])
            .map(|(_, &v)| (v, 1.0))
            .collect();
        vec![Row { name: "conncut".into(), coeffs, sense: Sense::Ge, rhs: 1.0 }]
    }
}

fn solve_raw(case: &GridCase, built: &BuiltModel) -> Result<MilpResult, ReformulateError> {
    let res = if built.model.meta.enforce_connectivity {
        let mut guard = connectivity_guard(case, &built.layout);
        let mut cb: &mut IncumbentCut<'_> = &mut guard;
        solve_milp(&built.model, Some(&mut cb))
    } else {
        solve_milp(&built.model, None)
    };
    match res.status {
        MilpStatus::Optimal => Ok(res),
        MilpStatus::Limit if !res.x.is_empty() => Ok(res),
        MilpStatus::Infeasible => {
            Err(ReformulateError::Infeasible(format!("{} model", built.model.meta.method)))
        }
        _ => Err(ReformulateError::Infeasible(format!(
            "{} model: no incumbent found (status {:?})",
            built.model.meta.method, res.status
        ))),
    }
}

fn extract_solution(
    case: &GridCase,
    ops: &NetworkOperators,
    placement: Option<&PlacementMatrix>,
    built: &BuiltModel,
    res: &MilpResult,
    rounds: usize,
) -> Result<Solution, ReformulateError> {
    let first_stage = built.layout.first_stage(&res.x);
    let (recourse, wind_buses) = match placement {
        Some(p) if built.layout.k > 0 => (
            recourse_matrices(case, ops, &first_stage.z, &first_stage.gamma, p)?,
            p.buses.clone(),
        ),
        _ => (RecourseMaps { y_theta: vec![], y_f: vec![] }, vec![]),
    };
    let status = match res.status {
        MilpStatus::Optimal => "optimal".to_string(),
        other => format!("{other:?}").to_lowercase(),
    };
    Ok(Solution {
        first_stage,
        recourse,
        k: built.layout.k,
        objective: res.objective,
        method: built.model.meta.method.clone(),
        epsilon: built.model.meta.epsilon,
        line_out_budget: built.model.meta.line_out_budget.unwrap_or(0),
        wind_buses,
        diagnostics: SolveDiagnostics {
            status,
            nodes: res.nodes,
            gap: res.gap,
            best_bound: res.best_bound,
            rounds,
        },
    })
}

/// Solve a built model to optimality (with connectivity guards when enabled)
/// and package the result.
pub fn solve_model(
    case: &GridCase,
    ops: &NetworkOperators,
    placement: Option<&PlacementMatrix>,
    built: &BuiltModel,
) -> Result<Solution, ReformulateError> {
    let res = solve_raw(case, built)?;
    extract_solution(case, ops, placement, built, &res, 1)
}

/// Maximum supporting-hyperplane rounds for the Gaussian quantile cone.
pub const CONE_CUT_ROUNDS: usize = 50;
/// Relative cone-violation tolerance at convergence.
pub const CONE_CUT_TOL: f64 = 1e-6;

/// Alternate solving and cone separation until no quantile row is violated
/// beyond tolerance. Returns the solution and the number of rounds used.
pub fn solve_gaussian(
    case: &GridCase,
    ops: &NetworkOperators,
    placement: &PlacementMatrix,
    built: &mut BuiltModel,
    cuts: &mut ConeCutGenerator,
) -> Result<(Solution, usize), ReformulateError> {
    let mut last = None;
    for round in 1..=CONE_CUT_ROUNDS {
        let res = solve_raw(case, built)?;
        let new_cuts = cuts.cuts(&res.x, CONE_CUT_TOL);
        if new_cuts.is_empty() {
            let sol = extract_solution(case, ops, Some(placement), built, &res, round)?;
            return Ok((sol, round));
        }
        for row in new_cuts {
            built.model.rows.push(row);
        }
        last = Some(res);
    }
    let res = last.expect("at least one round ran");
    let mut sol = extract_solution(case, ops, Some(placement), built, &res, CONE_CUT_ROUNDS)?;
    sol.diagnostics.status = "cut_round_limit".into();
    Ok((sol, CONE_CUT_ROUNDS))
}

// ---------------------------------------------------------------------------
// Multimodal coordinate descent
// ---------------------------------------------------------------------------

/// One iterate of the descent loop.
#[derive(Debug, Clone)]
pub struct BcdTrace {
    pub objectives: Vec<f64>,
    pub converged: bool,
}

fn bounding_box(modes: &[Mode]) -> Result<Polytope, ReformulateError> {
    let k = modes[0].mean.len();
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for m in modes {
        let (l, h) = m.support.as_box().ok_or(ReformulateError::UnboundedDual)?;
        for c in 0..k {
            lo[c] = lo[c].min(l[c]);
            hi[c] = hi[c].max(h[c]);
        }
    }
    Ok(Polytope::from_box(&lo, &hi))
}

/// Step-4 model: per mode and limit row, the rescaled dual block with the
/// inverse of the violation-branch multiplier frozen, tied together through
/// per-mode value variables in the mixture row. Freezing the inverse keeps
/// the remaining multipliers moderate no matter how steep the certificate
/// is, and an inverse of zero degrades gracefully to the recession branch
/// (the row must then hold everywhere on that mode's support).
#[allow(clippy::too_many_arguments)]
fn build_multimodal_fixed_lambda(
    case: &GridCase,
    ops: &NetworkOperators,
    modes: &[Mode],
    ells: &[Vec<f64>],
    eps: f64,
    line_out_budget: usize,
    placement: &PlacementMatrix,
    pooled_support: &Polytope,
    pooled_mean: &[f64],
) -> BuiltModel {
    let mut built = backbone(
        case,
        ops,
        placement,
        pooled_support,
        pooled_mean,
        line_out_budget,
        meta("mad-multi", Some(eps), line_out_budget),
    );
    let rows = built.cc_rows.clone();
    let model = &mut built.model;
    let k = pooled_mean.len();
    let mut active_idx = 0usize;
    for row in &rows {
        if row.a.iter().all(|e| e.is_fixed_zero(model)) {
            add_degenerate_row(model, row);
            continue;
        }
        let tag = row.label;
        let mut mixture: Vec<(VarId, f64)> = vec![];
        for (j, mode) in modes.iter().enumerate() {
            let ell = ells[active_idx][j];
            if ell.is_infinite() {
                // the mode's multiplier vanished: it certifies nothing for
                // this row, so it contributes nothing to the mixture
                continue;
            }
            let u = mode.support.u.as_mat();
            let t = &mode.support.t;
            let w = mode.support.num_rows();
            let nn = |model: &mut MilpModel, s: String| {
                model.add_named_var(s, VarKind::Continuous, 0.0, DUAL_BOUND)
            };
            let alpha = model.add_named_var(
                format!("xA_{tag}_{j}"),
                VarKind::Continuous,
                -DUAL_BOUND,
                DUAL_BOUND,
            );
            let beta: Vec<VarId> = (0..k)
                .map(|c| {
                    model.add_named_var(
                        format!("xB_{tag}_{j}_{c}"),
                        VarKind::Continuous,
                        -DUAL_BOUND,
                        DUAL_BOUND,
                    )
                })
                .collect();
            let kappa: Vec<VarId> =
                (0..k).map(|c| nn(model, format!("xK_{tag}_{j}_{c}"))).collect();
            let pi1: Vec<VarId> = (0..k).map(|c| nn(model, format!("xP1_{tag}_{j}_{c}"))).collect();
            let tau1: Vec<VarId> =
                (0..k).map(|c| nn(model, format!("xT1_{tag}_{j}_{c}"))).collect();
            let pi2: Vec<VarId> = (0..k).map(|c| nn(model, format!("xP2_{tag}_{j}_{c}"))).collect();
            let tau2: Vec<VarId> =
                (0..k).map(|c| nn(model, format!("xT2_{tag}_{j}_{c}"))).collect();
            let psi1: Vec<VarId> =
                (0..w).map(|r| nn(model, format!("xS1_{tag}_{j}_{r}"))).collect();
            let psi2: Vec<VarId> =
                (0..w).map(|r| nn(model, format!("xS2_{tag}_{j}_{r}"))).collect();

            // the mode's certified probability for this row; with the
            // inverse multiplier frozen the link below is linear
            let v = model.add_named_var(format!("xV_{tag}_{j}"), VarKind::Continuous, 0.0, 1.0);
            mixture.push((v, mode.weight));

            // certificate value covers the claimed probability:
            // alpha + mean'beta - mad'kappa >= ell * v
            let mut val: Vec<(VarId, f64)> = vec![(alpha, 1.0), (v, -ell)];
            for c in 0..k {
                val.push((beta[c], mode.mean[c]));
                val.push((kappa[c], -mode.mad[c]));
            }
            model.add_row(format!("xla_{tag}_{j}"), val, Sense::Ge, 0.0);

            // branch kept below one: in rescaled variables the right-hand
            // side is the frozen inverse multiplier
            let mut b1: Vec<(VarId, f64)> = vec![(alpha, 1.0)];
            for c in 0..k {
                b1.push((pi1[c], mode.mean[c]));
                b1.push((tau1[c], -mode.mean[c]));
            }
            for r in 0..w {
                b1.push((psi1[r], t[r]));
            }
            model.add_row(format!("xb1_{tag}_{j}"), b1, Sense::Le, ell);

            let mut b2 = AffExpr::var(alpha);
            for c in 0..k {
                b2.add_term(pi2[c], mode.mean[c]);
                b2.add_term(tau2[c], -mode.mean[c]);
            }
            for r in 0..w {
                b2.add_term(psi2[r], t[r]);
            }
            model.add_affine_row(format!("xb2_{tag}_{j}"), &b2, Sense::Le, &row.b);

            for c in 0..k {
                let mut c1: Vec<(VarId, f64)> =
                    vec![(beta[c], 1.0), (tau1[c], 1.0), (pi1[c], -1.0)];
                for r in 0..w {
                    let urc = u[(r, c)];
                    if urc != 0.0 {
                        c1.push((psi1[r], -urc));
                    }
                }
                model.add_row(format!("xc1_{tag}_{j}_{c}"), c1, Sense::Eq, 0.0);
                model.add_row(
                    format!("xd1_{tag}_{j}_{c}"),
                    vec![(pi1[c], 1.0), (tau1[c], 1.0), (kappa[c], -1.0)],
                    Sense::Eq,
                    0.0,
                );
                let mut c2 = row.a[c].clone();
                c2.add_term(beta[c], 1.0);
                c2.add_term(tau2[c], 1.0);
                c2.add_term(pi2[c], -1.0);
                for r in 0..w {
                    let urc = u[(r, c)];
                    if urc != 0.0 {
                        c2.add_term(psi2[r], -urc);
                    }
                }
                model.add_affine_row(
                    format!("xc2_{tag}_{j}_{c}"),
                    &c2,
                    Sense::Eq,
                    &AffExpr::constant(0.0),
                );
                model.add_row(
                    format!("xd2_{tag}_{j}_{c}"),
                    vec![(pi2[c], 1.0), (tau2[c], 1.0), (kappa[c], -1.0)],
                    Sense::Eq,
                    0.0,
                );
            }
        }
        model.add_row(format!("xmix_{tag}"), mixture, Sense::Ge, 1.0 - eps);
        active_idx += 1;
    }
    built
}

/// Mixture-robust switching by block coordinate descent: alternate between
/// per-mode worst-case quantification at the current plan (small parallel
/// LPs yielding fresh branch multipliers) and a full mixed-integer solve with
/// those multipliers frozen. Stops when consecutive objectives differ by
/// less than `omega` or after `t_max` iterations.
#[allow(clippy::too_many_arguments)]
pub fn solve_multimodal_bcd(
    case: &GridCase,
    ops: &NetworkOperators,
    modes: &[Mode],
    eps: f64,
    line_out_budget: usize,
    placement: &PlacementMatrix,
    omega: f64,
    t_max: usize,
) -> Result<(Solution, BcdTrace), ReformulateError> {
    assert!(!modes.is_empty(), "at least one mode required");
    let k = modes[0].mean.len();
    let pooled_support = bounding_box(modes)?;
    let pooled_mean: Vec<f64> = (0..k)
        .map(|c| modes.iter().map(|m| m.weight * m.mean[c]).sum())
        .collect();
    // mixture MAD bound: within-mode spread plus mode-center spread
    let pooled_mad: Vec<f64> = (0..k)
        .map(|c| {
            modes
                .iter()
                .map(|m| m.weight * (m.mad[c] + (m.mean[c] - pooled_mean[c]).abs()))
                .sum()
        })
        .collect();

    let start = build_mad(
        case,
        ops,
        &pooled_mean,
        &pooled_mad,
        &pooled_support,
        eps,
        line_out_budget,
        placement,
    )?;
    let res0 = solve_raw(case, &start).map_err(|e| match e {
        ReformulateError::Infeasible(_) => ReformulateError::NoFeasibleStart,
        other => other,
    })?;
    let mut objectives = vec![res0.objective];
    let mut best: (f64, Solution) = (
        res0.objective,
        extract_solution(case, ops, Some(placement), &start, &res0, 1)?,
    );

    // numeric (a, b) per active row at the current iterate
    let mut current_x = res0.x.clone();
    let mut current_rows: Vec<CcRow> = start
        .cc_rows
        .iter()
        .filter(|r| !r.a.iter().all(|e| e.is_fixed_zero(&start.model)))
        .cloned()
        .collect();
    let mut converged = false;

    for t in 1..=t_max {
        // step 3: fresh inverse branch multipliers at the incumbent plan
        let ells: Vec<Vec<f64>> = current_rows
            .par_iter()
            .map(|row| {
                let a: Vec<f64> = row.a.iter().map(|e| e.eval(&current_x)).collect();
                let b = row.b.eval(&current_x);
                modes
                    .iter()
                    .map(|m| {
                        wcp_lp(&a, b, &m.mean, &m.mad, &m.support)
                            .map(|(_, ell)| ell)
                            .unwrap_or(f64::INFINITY)
                    })
                    .collect()
            })
            .collect();
        // step 4: re-optimize the plan with inverse multipliers frozen
        let built = build_multimodal_fixed_lambda(
            case,
            ops,
            modes,
            &ells,
            eps,
            line_out_budget,
            placement,
            &pooled_support,
            &pooled_mean,
        );
        let res = solve_raw(case, &built)?;
        objectives.push(res.objective);
        if res.objective < best.0 {
            best = (
                res.objective,
                extract_solution(case, ops, Some(placement), &built, &res, t + 1)?,
            );
        }
        let delta = (objectives[t] - objectives[t - 1]).abs();
        current_x = res.x.clone();
        current_rows = built
            .cc_rows
            .iter()
            .filter(|r| !r.a.iter().all(|e| e.is_fixed_zero(&built.model)))
            .cloned()
            .collect();
        if delta < omega {
            converged = true;
            break;
        }
    }
    let mut sol = best.1;
    sol.diagnostics.rounds = objectives.len();
    if !converged {
        sol.diagnostics.status = "iteration_cap".into();
    }
    Ok((sol, BcdTrace { objectives, converged }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::build_operators;
    use crate::fixtures::triangle_case;
    use crate::milp::fixed_binary_lp;
    use crate::uncertainty::placement_matrix;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_reference_values() {
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_quantile(0.95), 1.6448536269514722, epsilon = 1e-7);
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-7);
        assert_abs_diff_eq!(normal_quantile(0.01), -normal_quantile(0.99), epsilon = 1e-9);
    }

    fn triangle_setup() -> (GridCase, NetworkOperators, PlacementMatrix) {
        let case = triangle_case();
        let ops = build_operators(&case, None);
        let placement = placement_matrix(&case, &[3]).unwrap();
        (case, ops, placement)
    }

    #[test]
    fn deterministic_budget_zero_is_opf_and_switching_helps() {
        let (case, ops, _) = triangle_setup();
        let b0 = build_deterministic(&case, &ops, 0);
        let s0 = solve_model(&case, &ops, None, &b0).unwrap();
        // budget 0 forces every line closed
        assert_eq!(s0.opened_lines(), Vec::<usize>::new());
        let b1 = build_deterministic(&case, &ops, 1);
        let s1 = solve_model(&case, &ops, None, &b1).unwrap();
        assert!(
            s1.objective < s0.objective - 1e-6,
            "switching must relieve the binding 0.8 pu line: {} vs {}",
            s1.objective,
            s0.objective
        );
        // brute force over all single-line openings
        let mut brute = s0.objective;
        for open in 0..case.num_lines() {
            let mut zfix = vec![1.0; case.num_lines()];
            zfix[open] = 0.0;
            let closed: Vec<bool> = zfix.iter().map(|&v| v > 0.5).collect();
            if !case.closed_graph_connected(&closed) {
                continue;
            }
            let mut m = b1.model.clone();
            for (i, &z) in b1.layout.z.iter().enumerate() {
                m.fix_var(z, zfix[i]);
            }
            let r = solve_lp(&m, None);
            if r.status == LpStatus::Optimal {
                brute = brute.min(r.objective);
            }
        }
        assert_abs_diff_eq!(s1.objective, brute, epsilon = 1e-6 * brute.abs().max(1.0));
    }

    fn small_scenarios(seed: u64, s: usize, spread: f64) -> ScenarioSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScenarioSet::new((0..s).map(|_| vec![rng.gen_range(-spread..spread)]).collect()).unwrap()
    }

    #[test]
    fn saa_tiny_eps_equals_enforcing_every_sample() {
        let (case, ops, placement) = triangle_setup();
        let scen = small_scenarios(7, 10, 0.5);
        let a = build_saa(&case, &ops, &scen, 0.05, 1, &placement).unwrap();
        let b = build_saa(&case, &ops, &scen, 0.0, 1, &placement).unwrap();
        let sa = solve_model(&case, &ops, Some(&placement), &a).unwrap();
        let sb = solve_model(&case, &ops, Some(&placement), &b).unwrap();
        assert_abs_diff_eq!(sa.objective, sb.objective, epsilon = 1e-6 * sb.objective.abs());
    }

    #[test]
    fn saa_cost_ordering_against_mean_model() {
        let (case, ops, placement) = triangle_setup();
        let scen = small_scenarios(11, 10, 0.6);
        let (mean, _) = moment_stats(&scen);
        let strict = build_saa(&case, &ops, &scen, 0.0, 1, &placement).unwrap();
        let relaxed = build_saa(&case, &ops, &scen, 0.2, 1, &placement).unwrap();
        let at_mean = build_saa(
            &case,
            &ops,
            &ScenarioSet::new(vec![mean]).unwrap(),
            0.0,
            1,
            &placement,
        )
        .unwrap();
        let cs = solve_model(&case, &ops, Some(&placement), &strict).unwrap().objective;
        let cr = solve_model(&case, &ops, Some(&placement), &relaxed).unwrap().objective;
        let cm = solve_model(&case, &ops, Some(&placement), &at_mean).unwrap().objective;
        assert!(cr <= cs + 1e-7, "relaxing eps cannot raise cost: {cr} vs {cs}");
        assert!(cm <= cr + 1e-7, "mean-only model is least restrictive: {cm} vs {cr}");
    }

    #[test]
    fn wasserstein_zero_radius_is_saa_row_for_row() {
        let (case, ops, placement) = triangle_setup();
        let scen = small_scenarios(13, 8, 0.5);
        let a = build_saa(&case, &ops, &scen, 0.1, 1, &placement).unwrap();
        let b = build_wasserstein(&case, &ops, &scen, 0.0, 0.1, 1, &placement).unwrap();
        assert_eq!(a.model.rows.len(), b.model.rows.len());
        for (ra, rb) in a.model.rows.iter().zip(&b.model.rows) {
            assert_eq!(ra.name, rb.name);
            assert_eq!(ra.coeffs, rb.coeffs);
            assert_eq!(ra.sense, rb.sense);
            assert_eq!(ra.rhs, rb.rhs);
        }
        assert_eq!(a.model.objective, b.model.objective);
        assert_eq!(a.model.vars.len(), b.model.vars.len());
    }

    #[test]
    fn wasserstein_cost_monotone_in_radius() {
        let (case, ops, placement) = triangle_setup();
        let scen = small_scenarios(17, 10, 0.5);
        let mut prev = f64::NEG_INFINITY;
        for delta in [0.0, 0.05, 0.1] {
            let b = build_wasserstein(&case, &ops, &scen, delta, 0.05, 1, &placement).unwrap();
            let c = solve_model(&case, &ops, Some(&placement), &b).unwrap().objective;
            assert!(c >= prev - 1e-7, "radius {delta}: {c} < {prev}");
            prev = c;
        }
    }

    #[test]
    fn gaussian_zero_covariance_needs_no_cuts() {
        let (case, ops, placement) = triangle_setup();
        let sigma = DMat::zeros(1, 1);
        let (mut built, mut cuts) =
            build_gaussian(&case, &ops, &[0.2], &sigma, 0.05, 1, &placement).unwrap();
        let (sol, rounds) =
            solve_gaussian(&case, &ops, &placement, &mut built, &mut cuts).unwrap();
        assert_eq!(rounds, 1);
        assert_eq!(sol.diagnostics.status, "optimal");
    }

    #[test]
    fn gaussian_rejects_bad_epsilon() {
        let (case, ops, placement) = triangle_setup();
        let sigma = DMat::zeros(1, 1);
        for eps in [0.0, -0.1, 0.6, 1.0] {
            assert!(matches!(
                build_gaussian(&case, &ops, &[0.0], &sigma, eps, 1, &placement),
                Err(ReformulateError::QuantileDomain(_))
            ));
        }
    }

    #[test]
    fn gaussian_converges_and_tightens_cost() {
        let (case, ops, placement) = triangle_setup();
        let mut sigma = DMat::zeros(1, 1);
        sigma[(0, 0)] = 0.04;
        let (mut built, mut cuts) =
            build_gaussian(&case, &ops, &[0.1], &sigma, 0.05, 1, &placement).unwrap();
        let (sol, rounds) =
            solve_gaussian(&case, &ops, &placement, &mut built, &mut cuts).unwrap();
        assert!(rounds <= CONE_CUT_ROUNDS);
        assert!(cuts.max_violation(&fetch_x(&case, &ops, &built)) <= CONE_CUT_TOL + 1e-9);
        // quantile margin must cost at least as much as the mean-only model
        let (mean_only, _) =
            build_gaussian(&case, &ops, &[0.1], &DMat::zeros(1, 1), 0.05, 1, &placement).unwrap();
        let base = solve_model(&case, &ops, Some(&placement), &mean_only).unwrap().objective;
        assert!(sol.objective >= base - 1e-7);
    }

    /// Re-solve the final cut model and return the raw point (test helper for
    /// checking converged violations).
    fn fetch_x(case: &GridCase, _ops: &NetworkOperators, built: &BuiltModel) -> Vec<f64> {
        let res = solve_raw(case, built).unwrap();
        res.x
    }

    #[test]
    fn wcp_trivial_bounds() {
        let support = Polytope::from_box(&[-2.0], &[2.0]);
        // b beyond the best/worst achievable value of a'xi
        let z1 = worst_case_probability(&[1.0], 2.5, &[0.0], &[0.5], &support).unwrap();
        assert_abs_diff_eq!(z1, 1.0, epsilon = 1e-6);
        let z0 = worst_case_probability(&[1.0], -2.5, &[0.0], &[0.5], &support).unwrap();
        assert_abs_diff_eq!(z0, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn wcp_worked_one_dimensional_example() {
        // mean 0, MAD 0.5 on [-2,2], threshold 1: the adversary moves mass
        // 0.25 just past the threshold (deviation budget 2*0.25*1 = 0.5)
        let support = Polytope::from_box(&[-2.0], &[2.0]);
        let z = worst_case_probability(&[1.0], 1.0, &[0.0], &[0.5], &support).unwrap();
        assert_abs_diff_eq!(z, 0.75, epsilon = 1e-6);
    }

    #[test]
    fn wcp_monotone_in_threshold_and_deviation() {
        let support = Polytope::from_box(&[-3.0], &[3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..25 {
            let mad = rng.gen_range(0.05..1.0);
            let b1 = rng.gen_range(-2.0..2.0);
            let b2 = b1 + rng.gen_range(0.0..1.0);
            let za = worst_case_probability(&[1.0], b1, &[0.0], &[mad], &support).unwrap();
            let zb = worst_case_probability(&[1.0], b2, &[0.0], &[mad], &support).unwrap();
            assert!(zb >= za - 1e-7, "threshold monotonicity: {zb} < {za}");
            let zc =
                worst_case_probability(&[1.0], b1, &[0.0], &[mad * 1.5], &support).unwrap();
            assert!(zc <= za + 1e-7, "deviation monotonicity: {zc} > {za}");
        }
    }

    #[test]
    fn wcp_rejects_mean_outside_support() {
        let support = Polytope::from_box(&[-1.0], &[1.0]);
        assert!(matches!(
            worst_case_probability(&[1.0], 0.5, &[1.0], &[0.1], &support),
            Err(ReformulateError::UnboundedDual)
        ));
    }

    #[test]
    fn mad_rejects_mean_outside_support() {
        let (case, ops, placement) = triangle_setup();
        let support = Polytope::from_box(&[-1.0], &[1.0]);
        assert!(matches!(
            build_mad(&case, &ops, &[1.5], &[0.1], &support, 0.05, 1, &placement),
            Err(ReformulateError::MeanOutsideSupport)
        ));
    }

    #[test]
    fn mad_zero_deviation_close_to_mean_model() {
        let (case, ops, placement) = triangle_setup();
        let support = Polytope::from_box(&[-1.0], &[1.0]);
        let mu = [0.25];
        let robust =
            build_mad(&case, &ops, &mu, &[0.0], &support, 0.05, 1, &placement).unwrap();
        let cr = solve_model(&case, &ops, Some(&placement), &robust).unwrap().objective;
        let at_mean = build_saa(
            &case,
            &ops,
            &ScenarioSet::new(vec![mu.to_vec()]).unwrap(),
            0.0,
            1,
            &placement,
        )
        .unwrap();
        let cm = solve_model(&case, &ops, Some(&placement), &at_mean).unwrap().objective;
        let rel = (cr - cm).abs() / cm.abs().max(1.0);
        assert!(rel < 1e-4, "zero-deviation robust vs mean model: {cr} vs {cm}");
        assert!(cr >= cm - 1e-7, "robust model cannot be cheaper than its point relaxation");
    }

    #[test]
    fn mad_cost_monotone_in_eps() {
        let (case, ops, placement) = triangle_setup();
        let support = Polytope::from_box(&[-0.8], &[0.8]);
        let mut prev = f64::INFINITY;
        for eps in [0.01, 0.05, 0.2, 0.4] {
            let b = build_mad(&case, &ops, &[0.0], &[0.2], &support, eps, 1, &placement).unwrap();
            let c = solve_model(&case, &ops, Some(&placement), &b).unwrap().objective;
            assert!(c <= prev + 1e-7, "eps {eps}: {c} > {prev}");
            prev = c;
        }
    }

    #[test]
    fn mad_block_feasibility_matches_oracle_threshold() {
        // one-dimensional standalone block: feasible at threshold b iff the
        // worst-case probability clears 1 - eps
        let support = Polytope::from_box(&[-2.0], &[2.0]);
        let mu = [0.0];
        let mad = [0.5];
        for eps in [0.05, 0.2, 0.3] {
            for b in [-0.5, 0.2, 0.8, 1.0, 1.4, 2.5] {
                let z = worst_case_probability(&[1.0], b, &mu, &mad, &support).unwrap();
                let mut m = MilpModel::new(ModelMeta::default());
                let row = CcRow {
                    a: vec![AffExpr::constant(1.0)],
                    b: AffExpr::constant(b),
                    label: RowLabel {
                        kind: crate::two_stage::RowKind::Flow,
                        side: crate::two_stage::BoundSide::Upper,
                        index: 0,
                    },
                };
                mad_dual_block(&mut m, &row, &mu, &mad, &support, eps);
                let r = solve_lp(&m, None);
                let feasible = r.status == LpStatus::Optimal;
                // strict comparison margin keeps boundary cases out
                if z > 1.0 - eps + 1e-4 {
                    assert!(feasible, "eps={eps} b={b} z={z} should be certifiable");
                } else if z < 1.0 - eps - 1e-4 {
                    assert!(!feasible, "eps={eps} b={b} z={z} must not be certifiable");
                }
            }
        }
    }

    fn two_modes() -> Vec<Mode> {
        vec![
            Mode {
                weight: 0.5,
                mean: vec![-0.3],
                mad: vec![0.1],
                support: Polytope::from_box(&[-0.9], &[0.3]),
            },
            Mode {
                weight: 0.5,
                mean: vec![0.3],
                mad: vec![0.1],
                support: Polytope::from_box(&[-0.3], &[0.9]),
            },
        ]
    }

    #[test]
    fn bcd_single_mode_fixed_point() {
        let (case, ops, placement) = triangle_setup();
        let mode = Mode {
            weight: 1.0,
            mean: vec![0.0],
            mad: vec![0.2],
            support: Polytope::from_box(&[-0.8], &[0.8]),
        };
        let (sol, trace) = solve_multimodal_bcd(
            &case,
            &ops,
            &[mode.clone()],
            0.05,
            1,
            &placement,
            1e-6,
            20,
        )
        .unwrap();
        assert!(trace.converged);
        assert!(trace.objectives.len() <= 3, "single mode should settle immediately");
        let uni =
            build_mad(&case, &ops, &mode.mean, &mode.mad, &mode.support, 0.05, 1, &placement)
                .unwrap();
        let cu = solve_model(&case, &ops, Some(&placement), &uni).unwrap().objective;
        assert_abs_diff_eq!(sol.objective, cu, epsilon = 1e-5 * cu.abs().max(1.0));
    }

    #[test]
    fn bcd_two_modes_descends_and_beats_pooled_model() {
        let (case, ops, placement) = triangle_setup();
        let modes = two_modes();
        let (sol, trace) =
            solve_multimodal_bcd(&case, &ops, &modes, 0.05, 1, &placement, 1e-6, 20).unwrap();
        assert!(trace.converged, "history: {:?}", trace.objectives);
        for win in trace.objectives.windows(2).skip(1) {
            assert!(win[1] <= win[0] + 1e-6, "descent violated: {:?}", trace.objectives);
        }
        // the mixture model is a subset of the pooled unimodal ambiguity set
        assert!(
            sol.objective <= trace.objectives[0] + 1e-6,
            "mixture solve must not cost more than its pooled start: {:?}",
            trace.objectives
        );
    }

    #[test]
    fn connectivity_guard_emits_cut_for_islanded_plan() {
        let (case, ops, _) = triangle_setup();
        let mut model = MilpModel::new(ModelMeta::default());
        let layout = DecisionLayout::install(&mut model, &case, &ops, 0, 3);
        let mut guard = connectivity_guard(&case, &layout);
        let mut x = vec![0.0; model.vars.len()];
        // all lines open: disconnected
        let cuts = guard(&x);
        assert_eq!(cuts.len(), 1);
        assert_eq!(cuts[0].coeffs.len(), 3);
        assert_eq!(cuts[0].sense, Sense::Ge);
        assert_eq!(cuts[0].rhs, 1.0);
        // spanning pair closed: connected
        x[layout.z[0]] = 1.0;
        x[layout.z[1]] = 1.0;
        assert!(guard(&x).is_empty());
    }

    #[test]
    fn solutions_satisfy_their_own_chance_rows_in_sample() {
        // SAA with eps: the number of violated samples per row never exceeds
        // floor(S * eps) when recounted directly
        let (case, ops, placement) = triangle_setup();
        let scen = small_scenarios(41, 20, 0.7);
        let eps = 0.1;
        let built = build_saa(&case, &ops, &scen, eps, 1, &placement).unwrap();
        let sol = solve_model(&case, &ops, Some(&placement), &built).unwrap();
        let rows = crate::evaluate::numeric_cc_rows(&case, &sol);
        for row in rows {
            let violated = scen
                .samples
                .iter()
                .filter(|xi| {
                    let lhs: f64 = row.a.iter().zip(xi.iter()).map(|(a, v)| a * v).sum();
                    lhs > row.b + 1e-6
                })
                .count();
            assert!(
                violated as f64 <= (scen.len() as f64 * eps) + 1e-9,
                "row {} violated {violated} of {}",
                row.label,
                scen.len()
            );
        }
    }

    #[test]
    fn fixed_binary_lp_reproduces_incumbent_objective() {
        let (case, ops, placement) = triangle_setup();
        let scen = small_scenarios(43, 6, 0.4);
        let built = build_saa(&case, &ops, &scen, 0.0, 1, &placement).unwrap();
        let res = solve_raw(&case, &built).unwrap();
        let lp = fixed_binary_lp(&built.model, &res.x);
        assert_eq!(lp.status, LpStatus::Optimal);
        assert_abs_diff_eq!(lp.objective, res.objective, epsilon = 1e-6 * res.objective.abs().max(1.0));
    }
}
