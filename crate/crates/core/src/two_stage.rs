//! Two-stage transmission switching with exact affine recourse.
//!
//! The first stage picks dispatch, angles, flows, the topology and the
//! participation vector; the second stage reacts to the uncertainty linearly
//! through the recourse matrices. The semi-infinite physics constraints are
//! replaced exactly: the balance equation collapses to a matrix identity, and
//! the Kirchhoff big-M ranges are dualized over the support polytope.

use crate::case_model::{GridCase, NetworkOperators};
use crate::linalg::Lu;
use crate::model::{AffExpr, MilpModel, Sense, VarId, VarKind};
use crate::uncertainty::{PlacementMatrix, Polytope};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Box for recourse-matrix entries. Network responses to per-unit injections
/// are small multiples of the inverse susceptance scale; this is generous for
/// realistic cases and keeps the dualized and big-M rows bounded.
pub const RECOURSE_BOUND: f64 = 100.0;

#[derive(Debug, Error)]
pub enum TwoStageError {
    #[error("closed-line subgraph is disconnected; recourse flows are undefined")]
    IslandedTopology,
    #[error("reduced network system is singular")]
    SingularNetwork,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// First-stage decision values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FirstStage {
    pub g: Vec<f64>,
    pub theta: Vec<f64>,
    pub f: Vec<f64>,
    pub z: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Linear recourse maps for angles and flows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecourseMaps {
    pub y_theta: Vec<Vec<f64>>,
    pub y_f: Vec<Vec<f64>>,
}

/// Which limit a chance row protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Reserve,
    Generation,
    Angle,
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub kind: RowKind,
    pub side: BoundSide,
    /// Bus index for reserve/generation/angle rows, line index for flow rows.
    pub index: usize,
}

impl std::fmt::Display for RowLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            RowKind::Reserve => "reserve",
            RowKind::Generation => "gen",
            RowKind::Angle => "angle",
            RowKind::Flow => "flow",
        };
        let side = match self.side {
            BoundSide::Lower => "lo",
            BoundSide::Upper => "hi",
        };
        write!(f, "{kind}_{side}_{}", self.index)
    }
}

/// One chance row `P(a(x)' xi <= b(x)) >= 1 - eps`, with both sides affine in
/// the decision variables.
#[derive(Debug, Clone)]
pub struct CcRow {
    pub a: Vec<AffExpr>,
    pub b: AffExpr,
    pub label: RowLabel,
}

/// Variable ids of the shared decision block installed in every model.
#[derive(Debug, Clone)]
pub struct DecisionLayout {
    pub g: Vec<VarId>,
    pub theta: Vec<VarId>,
    pub f: Vec<VarId>,
    pub z: Vec<VarId>,
    pub gamma: Vec<VarId>,
    pub y_theta: Vec<Vec<VarId>>,
    pub y_f: Vec<Vec<VarId>>,
    pub k: usize,
}

impl DecisionLayout {
    /// Install first-stage variables and the nominal (deterministic)
    /// constraint block: dispatch/angle/flow limits, balance, Kirchhoff
    /// big-M rows and the switching budget. With `k = 0` no recourse
    /// variables are created.
    pub fn install(
        model: &mut MilpModel,
        case: &GridCase,
        ops: &NetworkOperators,
        k: usize,
        line_out_budget: usize,
    ) -> DecisionLayout {
        let n = case.num_buses();
        let l = case.num_lines();
        let agg = case.bus_aggregates();
        let slack = case.slack_position();

        let g: Vec<VarId> = (0..n)
            .map(|i| model.add_named_var(format!("g_{i}"), VarKind::Continuous, agg.g_min[i], agg.g_max[i]))
            .collect();
        let theta: Vec<VarId> = (0..n)
            .map(|i| {
                model.add_named_var(
                    format!("theta_{i}"),
                    VarKind::Continuous,
                    case.buses[i].theta_min,
                    case.buses[i].theta_max,
                )
            })
            .collect();
        model.fix_var(theta[slack], 0.0);
        let f: Vec<VarId> = (0..l)
            .map(|i| {
                let cap = case.lines[i].flow_max;
                model.add_named_var(format!("f_{i}"), VarKind::Continuous, -cap, cap)
            })
            .collect();
        let z: Vec<VarId> = (0..l)
            .map(|i| model.add_named_var(format!("z_{i}"), VarKind::Binary, 0.0, 1.0))
            .collect();
        for (i, line) in case.lines.iter().enumerate() {
            if !line.switchable {
                model.fix_var(z[i], 1.0);
            }
        }
        let gamma: Vec<VarId> = (0..n)
            .map(|i| model.add_named_var(format!("gamma_{i}"), VarKind::Continuous, 0.0, 1.0))
            .collect();
        for i in 0..n {
            // recourse participation only where dispatchable generation sits
            if !agg.is_gen_bus[i] {
                model.fix_var(gamma[i], 0.0);
            }
        }
        model.add_row("gamma_sum", gamma.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0);

        // nominal flow limits gated by z: -fmax z <= f <= fmax z
        for i in 0..l {
            let cap = case.lines[i].flow_max;
            model.add_row(format!("fcap_hi_{i}"), vec![(f[i], 1.0), (z[i], -cap)], Sense::Le, 0.0);
            model.add_row(format!("fcap_lo_{i}"), vec![(f[i], 1.0), (z[i], cap)], Sense::Ge, 0.0);
        }
        // nominal balance A f = g - d
        for i in 0..n {
            let mut coeffs: Vec<(VarId, f64)> = vec![(g[i], -1.0)];
            for j in 0..l {
                let a = ops.incidence[(i, j)];
                if a != 0.0 {
                    coeffs.push((f[j], a));
                }
            }
            model.add_row(format!("balance_{i}"), coeffs, Sense::Eq, -case.loads[i]);
        }
        // Kirchhoff with big-M release for open lines
        for i in 0..l {
            let m = ops.big_m[i];
            let mut base: Vec<(VarId, f64)> = vec![(f[i], -1.0)];
            for j in 0..n {
                let kij = ops.branch[(i, j)];
                if kij != 0.0 {
                    base.push((theta[j], kij));
                }
            }
            // K theta - f <= M(1-z)  and  K theta - f >= -M(1-z)
            let mut hi = base.clone();
            hi.push((z[i], m));
            model.add_row(format!("kirchhoff_hi_{i}"), hi, Sense::Le, m);
            let mut lo = base;
            lo.push((z[i], -m));
            model.add_row(format!("kirchhoff_lo_{i}"), lo, Sense::Ge, -m);
        }
        // switching budget e'z >= L - L_o
        model.add_row(
            "line_budget",
            z.iter().map(|&v| (v, 1.0)).collect(),
            Sense::Ge,
            l as f64 - line_out_budget as f64,
        );
        // first-stage cost
        for i in 0..n {
            model.add_objective(g[i], agg.cost[i]);
        }

        let (y_theta, y_f) = if k > 0 {
            let y_theta: Vec<Vec<VarId>> = (0..n)
                .map(|i| {
                    (0..k)
                        .map(|c| {
                            let v = model.add_named_var(
                                format!("ytheta_{i}_{c}"),
                                VarKind::Continuous,
                                -RECOURSE_BOUND,
                                RECOURSE_BOUND,
                            );
                            if i == slack {
                                model.fix_var(v, 0.0);
                            }
                            v
                        })
                        .collect()
                })
                .collect();
            let y_f: Vec<Vec<VarId>> = (0..l)
                .map(|i| {
                    (0..k)
                        .map(|c| {
                            model.add_named_var(
                                format!("yf_{i}_{c}"),
                                VarKind::Continuous,
                                -RECOURSE_BOUND,
                                RECOURSE_BOUND,
                            )
                        })
                        .collect()
                })
                .collect();
            (y_theta, y_f)
        } else {
            (vec![], vec![])
        };

        DecisionLayout { g, theta, f, z, gamma, y_theta, y_f, k }
    }

    pub fn first_stage(&self, x: &[f64]) -> FirstStage {
        FirstStage {
            g: self.g.iter().map(|&v| x[v]).collect(),
            theta: self.theta.iter().map(|&v| x[v]).collect(),
            f: self.f.iter().map(|&v| x[v]).collect(),
            z: self.z.iter().map(|&v| x[v].round()).collect(),
            gamma: self.gamma.iter().map(|&v| x[v]).collect(),
        }
    }

    pub fn recourse(&self, x: &[f64]) -> RecourseMaps {
        RecourseMaps {
            y_theta: self.y_theta.iter().map(|row| row.iter().map(|&v| x[v]).collect()).collect(),
            y_f: self.y_f.iter().map(|row| row.iter().map(|&v| x[v]).collect()).collect(),
        }
    }
}

/// Append the balance identity `A Y_f = gamma 1' - F` as N*K equality rows.
pub fn balance_equality_block(
    model: &mut MilpModel,
    layout: &DecisionLayout,
    ops: &NetworkOperators,
    placement: &PlacementMatrix,
) {
    let n = ops.incidence.rows;
    let l = ops.incidence.cols;
    let fm = placement.matrix.as_mat();
    for i in 0..n {
        for c in 0..layout.k {
            let mut coeffs: Vec<(VarId, f64)> = vec![(layout.gamma[i], -1.0)];
            for j in 0..l {
                let a = ops.incidence[(i, j)];
                if a != 0.0 {
                    coeffs.push((layout.y_f[j][c], a));
                }
            }
            model.add_row(format!("ybalance_{i}_{c}"), coeffs, Sense::Eq, -fm[(i, c)]);
        }
    }
}

/// Dual multipliers of the two Kirchhoff big-M blocks over the support.
#[derive(Debug, Clone)]
pub struct FlowDualBlock {
    pub phi1: Vec<Vec<VarId>>,
    pub phi2: Vec<Vec<VarId>>,
}

/// Replace the semi-infinite Kirchhoff ranges over `xi in Xi` with their LP
/// duals: per line, `Y_f = K Y_theta + Phi1 U` with
/// `K theta + M (1 - z) - Phi1 t >= f`, and `Y_f = K Y_theta - Phi2 U` with
/// `M (1 - z) - Phi2 t + f >= K theta`, where `Phi1, Phi2 >= 0`.
pub fn flow_dual_blocks(
    model: &mut MilpModel,
    layout: &DecisionLayout,
    case: &GridCase,
    ops: &NetworkOperators,
    support: &Polytope,
) -> FlowDualBlock {
    let n = case.num_buses();
    let l = case.num_lines();
    let w = support.num_rows();
    let k = layout.k;
    let u = support.u.as_mat();
    let phi1: Vec<Vec<VarId>> = (0..l)
        .map(|i| {
            (0..w)
                .map(|r| model.add_named_var(format!("phi1_{i}_{r}"), VarKind::Continuous, 0.0, f64::INFINITY))
                .collect()
        })
        .collect();
    let phi2: Vec<Vec<VarId>> = (0..l)
        .map(|i| {
            (0..w)
                .map(|r| model.add_named_var(format!("phi2_{i}_{r}"), VarKind::Continuous, 0.0, f64::INFINITY))
                .collect()
        })
        .collect();

    for i in 0..l {
        let m = ops.big_m[i];
        for c in 0..k {
            // Y_f[i][c] - sum_j K[i][j] Ytheta[j][c] - sum_r Phi1[i][r] U[r][c] = 0
            let mut eq1: Vec<(VarId, f64)> = vec![(layout.y_f[i][c], 1.0)];
            let mut eq2: Vec<(VarId, f64)> = vec![(layout.y_f[i][c], 1.0)];
            for j in 0..n {
                let kij = ops.branch[(i, j)];
                if kij != 0.0 {
                    eq1.push((layout.y_theta[j][c], -kij));
                    eq2.push((layout.y_theta[j][c], -kij));
                }
            }
            for r in 0..w {
                let urc = u[(r, c)];
                if urc != 0.0 {
                    eq1.push((phi1[i][r], -urc));
                    eq2.push((phi2[i][r], urc));
                }
            }
            model.add_row(format!("yflow_up_{i}_{c}"), eq1, Sense::Eq, 0.0);
            model.add_row(format!("yflow_dn_{i}_{c}"), eq2, Sense::Eq, 0.0);
        }
        // K theta - f + M(1-z) - Phi1 t >= 0
        let mut row1: Vec<(VarId, f64)> = vec![(layout.f[i], -1.0), (layout.z[i], -m)];
        // f - K theta + M(1-z) - Phi2 t >= 0
        let mut row2: Vec<(VarId, f64)> = vec![(layout.f[i], 1.0), (layout.z[i], -m)];
        for j in 0..n {
            let kij = ops.branch[(i, j)];
            if kij != 0.0 {
                row1.push((layout.theta[j], kij));
                row2.push((layout.theta[j], -kij));
            }
        }
        for r in 0..w {
            row1.push((phi1[i][r], -support.t[r]));
            row2.push((phi2[i][r], -support.t[r]));
        }
        model.add_row(format!("flowslack_up_{i}"), row1, Sense::Ge, -m);
        model.add_row(format!("flowslack_dn_{i}"), row2, Sense::Ge, -m);
    }
    FlowDualBlock { phi1, phi2 }
}

/// The chance-constrained limit rows: reserve, generation, angle and flow
/// bounds, each side, affine in the decision variables.
pub fn cc_row_set(case: &GridCase, layout: &DecisionLayout) -> Vec<CcRow> {
    let n = case.num_buses();
    let l = case.num_lines();
    let k = layout.k;
    let agg = case.bus_aggregates();
    let mut rows = Vec::with_capacity(2 * (3 * n + l));
    let uniform = |var: VarId, s: f64| (0..k).map(|_| AffExpr::term(var, s)).collect::<Vec<_>>();
    for i in 0..n {
        // r_lo <= gamma_i 1'xi  <=>  -gamma_i 1'xi <= -r_lo
        rows.push(CcRow {
            a: uniform(layout.gamma[i], -1.0),
            b: AffExpr::constant(-agg.r_min[i]),
            label: RowLabel { kind: RowKind::Reserve, side: BoundSide::Lower, index: i },
        });
        rows.push(CcRow {
            a: uniform(layout.gamma[i], 1.0),
            b: AffExpr::constant(agg.r_max[i]),
            label: RowLabel { kind: RowKind::Reserve, side: BoundSide::Upper, index: i },
        });
        // g_lo <= g_i + gamma_i 1'xi
        let mut b_lo = AffExpr::term(layout.g[i], 1.0);
        b_lo.constant = -agg.g_min[i];
        rows.push(CcRow {
            a: uniform(layout.gamma[i], -1.0),
            b: b_lo,
            label: RowLabel { kind: RowKind::Generation, side: BoundSide::Lower, index: i },
        });
        let mut b_hi = AffExpr::term(layout.g[i], -1.0);
        b_hi.constant = agg.g_max[i];
        rows.push(CcRow {
            a: uniform(layout.gamma[i], 1.0),
            b: b_hi,
            label: RowLabel { kind: RowKind::Generation, side: BoundSide::Upper, index: i },
        });
        // theta_lo <= theta_i + Ytheta_i xi
        let mut tb_lo = AffExpr::term(layout.theta[i], 1.0);
        tb_lo.constant = -case.buses[i].theta_min;
        rows.push(CcRow {
            a: (0..k).map(|c| AffExpr::term(layout.y_theta[i][c], -1.0)).collect(),
            b: tb_lo,
            label: RowLabel { kind: RowKind::Angle, side: BoundSide::Lower, index: i },
        });
        let mut tb_hi = AffExpr::term(layout.theta[i], -1.0);
        tb_hi.constant = case.buses[i].theta_max;
        rows.push(CcRow {
            a: (0..k).map(|c| AffExpr::term(layout.y_theta[i][c], 1.0)).collect(),
            b: tb_hi,
            label: RowLabel { kind: RowKind::Angle, side: BoundSide::Upper, index: i },
        });
    }
    for i in 0..l {
        let cap = case.lines[i].flow_max;
        // -cap z <= f_i + Yf_i xi  <=>  -Yf_i xi <= f_i + cap z
        let mut fb_lo = AffExpr::term(layout.f[i], 1.0);
        fb_lo.add_term(layout.z[i], cap);
        rows.push(CcRow {
            a: (0..k).map(|c| AffExpr::term(layout.y_f[i][c], -1.0)).collect(),
            b: fb_lo,
            label: RowLabel { kind: RowKind::Flow, side: BoundSide::Lower, index: i },
        });
        let mut fb_hi = AffExpr::term(layout.f[i], -1.0);
        fb_hi.add_term(layout.z[i], cap);
        rows.push(CcRow {
            a: (0..k).map(|c| AffExpr::term(layout.y_f[i][c], 1.0)).collect(),
            b: fb_hi,
            label: RowLabel { kind: RowKind::Flow, side: BoundSide::Upper, index: i },
        });
    }
    rows
}

/// Solve the dc network for a fixed topology and injection vector (per-unit,
/// at every bus; must sum to ~0). Returns (theta, f) with slack angle zero.
pub fn dc_flow(
    case: &GridCase,
    ops: &NetworkOperators,
    closed: &[bool],
    injection: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), TwoStageError> {
    if !case.closed_graph_connected(closed) {
        return Err(TwoStageError::IslandedTopology);
    }
    let n = case.num_buses();
    let l = case.num_lines();
    let slack = case.slack_position();
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let b = ops.reduced_susceptance(case, closed);
    let lu = Lu::factorize(&b).map_err(|_| TwoStageError::SingularNetwork)?;
    let rhs: Vec<f64> = keep.iter().map(|&i| injection[i]).collect();
    let sol = lu.solve(&rhs);
    let mut theta = vec![0.0; n];
    for (pos, &i) in keep.iter().enumerate() {
        theta[i] = sol[pos];
    }
    let mut f = vec![0.0; l];
    for li in 0..l {
        if closed[li] {
            f[li] = (0..n).map(|j| ops.branch[(li, j)] * theta[j]).sum();
        }
    }
    Ok((theta, f))
}

/// Recover the unique recourse maps implied by a topology and participation
/// vector: each uncertainty column is a dc solve of the injection change
/// `gamma 1' - F`, restricted to the closed-line network.
pub fn recourse_matrices(
    case: &GridCase,
    ops: &NetworkOperators,
    z: &[f64],
    gamma: &[f64],
    placement: &PlacementMatrix,
) -> Result<RecourseMaps, TwoStageError> {
    let n = case.num_buses();
    let l = case.num_lines();
    let k = placement.matrix.cols;
    if z.len() != l || gamma.len() != n {
        return Err(TwoStageError::Dimension("z/gamma length".into()));
    }
    let closed: Vec<bool> = z.iter().map(|&v| v > 0.5).collect();
    let fm = placement.matrix.as_mat();
    let mut y_theta = vec![vec![0.0; k]; n];
    let mut y_f = vec![vec![0.0; k]; l];
    for c in 0..k {
        let injection: Vec<f64> = (0..n).map(|i| gamma[i] - fm[(i, c)]).collect();
        let (theta, f) = dc_flow(case, ops, &closed, &injection)?;
        for i in 0..n {
            y_theta[i][c] = theta[i];
        }
        for li in 0..l {
            y_f[li][c] = f[li];
        }
    }
    Ok(RecourseMaps { y_theta, y_f })
}

/// Check feasibility of the semi-infinite Kirchhoff ranges at every vertex of
/// a box support, for fixed numeric first-stage and recourse values. Test
/// oracle for the dualized blocks.
pub fn robust_flow_feasible_at_vertices(
    case: &GridCase,
    ops: &NetworkOperators,
    fs: &FirstStage,
    maps: &RecourseMaps,
    support: &Polytope,
    tol: f64,
) -> Option<bool> {
    let vertices = support.box_vertices()?;
    let n = case.num_buses();
    let l = case.num_lines();
    for xi in &vertices {
        for i in 0..l {
            let m = ops.big_m[i] * (1.0 - fs.z[i]);
            let mut ktheta = 0.0;
            for j in 0..n {
                let kij = ops.branch[(i, j)];
                if kij != 0.0 {
                    let recourse: f64 =
                        (0..xi.len()).map(|c| maps.y_theta[j][c] * xi[c]).sum();
                    ktheta += kij * (fs.theta[j] + recourse);
                }
            }
            let flow =
                fs.f[i] + (0..xi.len()).map(|c| maps.y_f[i][c] * xi[c]).sum::<f64>();
            if ktheta - flow + m < -tol || ktheta - flow - m > tol {
                return Some(false);
            }
        }
    }
    Some(true)
}
