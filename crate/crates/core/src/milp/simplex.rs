//! Bounded-variable revised simplex.
//!
//! Standard form: every row gets a logical variable with +1 coefficient so the
//! constraints read `A x + s = b`; the row sense lives in the logical's bounds.
//! The basis is factorized through a reduced trick: rows covered by a basic
//! logical are eliminated, leaving a dense LU over only the structural basic
//! columns (small in the models built here, where most big-M rows stay slack).
//! Pivots between refactorizations are absorbed into product-form eta vectors.

use crate::linalg::Lu;
use crate::model::{MilpModel, Sense};
use serde::{Deserialize, Serialize};

pub const FEAS_TOL: f64 = 1e-7;
pub const OPT_TOL: f64 = 1e-7;
pub const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_INTERVAL: usize = 60;
const DEGENERATE_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The iteration limit tripped or the basis could not be kept stable.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

/// Basis snapshot for warm starts across branch-and-bound nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimplexBasis {
    /// Variable occupying each basis slot (structural ids first, then logicals).
    pub basic: Vec<usize>,
    pub state: Vec<VarState>,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    /// Structural variable values.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row duals, signed for minimization (`>= 0` on binding `>=` rows).
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub basis: SimplexBasis,
}

/// Sparse column-major copy of the constraint matrix plus bound data.
struct StdForm {
    m: usize,
    nstruct: usize,
    ntotal: usize,
    // CSC over structural columns
    col_ptr: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    b: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

impl StdForm {
    fn build(model: &MilpModel, scale: bool) -> StdForm {
        let m = model.rows.len();
        let nstruct = model.vars.len();
        let ntotal = nstruct + m;

        // geometric-mean equilibration, two sweeps, rounded to powers of two;
        // factors are clamped so a single row or column with extreme entries
        // (e.g. a nearly-flat cutting plane) cannot distort the feasibility
        // tolerances of the rest of the system
        const SCALE_CAP: f64 = 1024.0;
        let clamp = |s: f64| s.clamp(1.0 / SCALE_CAP, SCALE_CAP);
        let mut row_scale = vec![1.0f64; m];
        let mut col_scale = vec![1.0f64; nstruct];
        let sweeps = if scale { 2 } else { 0 };
        for _ in 0..sweeps {
            for (i, row) in model.rows.iter().enumerate() {
                let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
                for &(v, c) in &row.coeffs {
                    let a = (c * row_scale[i] * col_scale[v]).abs();
                    if a > 0.0 {
                        lo = lo.min(a);
                        hi = hi.max(a);
                    }
                }
                if hi > 0.0 {
                    row_scale[i] = clamp(row_scale[i] * pow2_round(1.0 / (lo * hi).sqrt()));
                }
            }
            let mut clo = vec![f64::INFINITY; nstruct];
            let mut chi = vec![0.0f64; nstruct];
            for (i, row) in model.rows.iter().enumerate() {
                for &(v, c) in &row.coeffs {
                    let a = (c * row_scale[i] * col_scale[v]).abs();
                    if a > 0.0 {
                        clo[v] = clo[v].min(a);
                        chi[v] = chi[v].max(a);
                    }
                }
            }
            for v in 0..nstruct {
                if chi[v] > 0.0 {
                    col_scale[v] = clamp(col_scale[v] * pow2_round(1.0 / (clo[v] * chi[v]).sqrt()));
                }
            }
        }

        // consolidate repeated (row, var) entries so every consumer sees one
        // coefficient per matrix position
        let mut entries: Vec<(usize, usize, f64)> = vec![];
        for (i, row) in model.rows.iter().enumerate() {
            for &(v, c) in &row.coeffs {
                if c != 0.0 {
                    entries.push((v, i, c * row_scale[i] * col_scale[v]));
                }
            }
        }
        entries.sort_by_key(|&(v, i, _)| (v, i));
        entries.dedup_by(|cur, acc| {
            if acc.0 == cur.0 && acc.1 == cur.1 {
                acc.2 += cur.2;
                true
            } else {
                false
            }
        });
        let mut col_ptr = vec![0usize; nstruct + 1];
        for &(v, _, _) in &entries {
            col_ptr[v + 1] += 1;
        }
        for v in 0..nstruct {
            col_ptr[v + 1] += col_ptr[v];
        }
        let col_row: Vec<usize> = entries.iter().map(|&(_, i, _)| i).collect();
        let col_val: Vec<f64> = entries.iter().map(|&(_, _, c)| c).collect();

        let mut lb = Vec::with_capacity(ntotal);
        let mut ub = Vec::with_capacity(ntotal);
        let mut cost = vec![0.0f64; ntotal];
        for (v, var) in model.vars.iter().enumerate() {
            // scaled variable x' = x / col_scale
            lb.push(var.lb / col_scale[v]);
            ub.push(var.ub / col_scale[v]);
            cost[v] = model.objective[v] * col_scale[v];
        }
        let mut b = vec![0.0f64; m];
        for (i, row) in model.rows.iter().enumerate() {
            b[i] = row.rhs * row_scale[i];
            match row.sense {
                Sense::Le => {
                    lb.push(0.0);
                    ub.push(f64::INFINITY);
                }
                Sense::Ge => {
                    lb.push(f64::NEG_INFINITY);
                    ub.push(0.0);
                }
                Sense::Eq => {
                    lb.push(0.0);
                    ub.push(0.0);
                }
            }
        }

        StdForm {
            m,
            nstruct,
            ntotal,
            col_ptr,
            col_row,
            col_val,
            b,
            lb,
            ub,
            cost,
            row_scale,
            col_scale,
        }
    }

    /// Scaled column of variable j as (row, value) pairs; logicals are unit.
    fn column(&self, j: usize) -> ColIter<'_> {
        if j < self.nstruct {
            ColIter::Struct(
                self.col_row[self.col_ptr[j]..self.col_ptr[j + 1]]
                    .iter()
                    .zip(&self.col_val[self.col_ptr[j]..self.col_ptr[j + 1]]),
            )
        } else {
            ColIter::Logical(Some(j - self.nstruct))
        }
    }
}

enum ColIter<'a> {
    Struct(std::iter::Zip<std::slice::Iter<'a, usize>, std::slice::Iter<'a, f64>>),
    Logical(Option<usize>),
}

impl<'a> Iterator for ColIter<'a> {
    type Item = (usize, f64);
    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            ColIter::Struct(it) => it.next().map(|(&r, &v)| (r, v)),
            ColIter::Logical(r) => r.take().map(|r| (r, 1.0)),
        }
    }
}

fn pow2_round(x: f64) -> f64 {
    if !(x.is_finite()) || x <= 0.0 {
        return 1.0;
    }
    (2.0f64).powi(x.log2().round() as i32)
}

/// Reduced-basis factorization: LU over structural basic columns restricted to
/// the rows not covered by a basic logical.
struct Factor {
    struct_slots: Vec<usize>,
    struct_vars: Vec<usize>,
    logical_slots: Vec<usize>,
    qrows: Vec<usize>,
    rbar: Vec<usize>,
    rbar_pos: Vec<isize>,
    lu: Option<Lu>,
}

impl Factor {
    fn build(std: &StdForm, basic: &[usize]) -> Option<Factor> {
        let m = std.m;
        let mut struct_slots = vec![];
        let mut struct_vars = vec![];
        let mut logical_slots = vec![];
        let mut qrows = vec![];
        let mut covered = vec![false; m];
        for (slot, &v) in basic.iter().enumerate() {
            if v >= std.nstruct {
                let r = v - std.nstruct;
                if covered[r] {
                    return None; // duplicate logical => singular
                }
                covered[r] = true;
                logical_slots.push(slot);
                qrows.push(r);
            } else {
                struct_slots.push(slot);
                struct_vars.push(v);
            }
        }
        let rbar: Vec<usize> = (0..m).filter(|&r| !covered[r]).collect();
        let k = rbar.len();
        if k != struct_vars.len() {
            return None;
        }
        let mut rbar_pos = vec![-1isize; m];
        for (i, &r) in rbar.iter().enumerate() {
            rbar_pos[r] = i as isize;
        }
        let lu = if k == 0 {
            None
        } else {
            let mut dense = crate::linalg::DMat::zeros(k, k);
            for (s, &v) in struct_vars.iter().enumerate() {
                for (r, val) in std.column(v) {
                    if rbar_pos[r] >= 0 {
                        dense[(rbar_pos[r] as usize, s)] += val;
                    }
                }
            }
            let scale = dense.data.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            match Lu::factorize(&dense) {
                // reject numerically singular bases, not just exactly singular
                // ones; a tiny pivot means the solves cannot be trusted
                Ok(lu) if lu.min_pivot >= 1e-11 * scale.max(1.0) => Some(lu),
                _ => return None,
            }
        };
        Some(Factor { struct_slots, struct_vars, logical_slots, qrows, rbar, rbar_pos, lu })
    }

    /// B times slot-indexed values, in row space.
    fn apply(&self, std: &StdForm, x: &[f64]) -> Vec<f64> {
        let mut bx = vec![0.0f64; std.m];
        for (s, &v) in self.struct_vars.iter().enumerate() {
            let xv = x[self.struct_slots[s]];
            if xv != 0.0 {
                for (r, val) in std.column(v) {
                    bx[r] += val * xv;
                }
            }
        }
        for (c, &slot) in self.logical_slots.iter().enumerate() {
            bx[self.qrows[c]] += x[slot];
        }
        bx
    }

    fn ftran_raw(&self, std: &StdForm, rhs: &[f64]) -> Vec<f64> {
        let m = std.m;
        let mut out = vec![0.0f64; m];
        let k = self.rbar.len();
        let xs = if k > 0 {
            let red: Vec<f64> = self.rbar.iter().map(|&r| rhs[r]).collect();
            self.lu.as_ref().unwrap().solve(&red)
        } else {
            vec![]
        };
        let mut sx = vec![0.0f64; m];
        for (s, &v) in self.struct_vars.iter().enumerate() {
            if xs[s] != 0.0 {
                for (r, val) in std.column(v) {
                    sx[r] += val * xs[s];
                }
            }
        }
        for (s, &slot) in self.struct_slots.iter().enumerate() {
            out[slot] = xs[s];
        }
        for (c, &slot) in self.logical_slots.iter().enumerate() {
            let r = self.qrows[c];
            out[slot] = rhs[r] - sx[r];
        }
        out
    }

    /// Solve B x = rhs (rhs row-indexed); returns slot-indexed values.
    /// Iterative refinement keeps the residual small even when the basis is
    /// badly conditioned (e.g. nearly parallel cutting planes).
    fn ftran0(&self, std: &StdForm, rhs: &[f64]) -> Vec<f64> {
        let mut out = self.ftran_raw(std, rhs);
        let scale = rhs.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
        for _ in 0..2 {
            let bx = self.apply(std, &out);
            let r: Vec<f64> = rhs.iter().zip(&bx).map(|(&b, &a)| b - a).collect();
            if r.iter().all(|&v| v.abs() <= 1e-11 * scale) {
                break;
            }
            let corr = self.ftran_raw(std, &r);
            for (o, c) in out.iter_mut().zip(&corr) {
                *o += c;
            }
        }
        out
    }

    fn btran_raw(&self, std: &StdForm, c: &[f64]) -> Vec<f64> {
        let m = std.m;
        let mut y = vec![0.0f64; m];
        for (cidx, &slot) in self.logical_slots.iter().enumerate() {
            y[self.qrows[cidx]] = c[slot];
        }
        let k = self.rbar.len();
        if k > 0 {
            let mut rhs = vec![0.0f64; k];
            for (s, &v) in self.struct_vars.iter().enumerate() {
                let mut acc = c[self.struct_slots[s]];
                for (r, val) in std.column(v) {
                    if self.rbar_pos[r] < 0 {
                        acc -= val * y[r];
                    }
                }
                rhs[s] = acc;
            }
            let yr = self.lu.as_ref().unwrap().solve_transpose(&rhs);
            for (i, &r) in self.rbar.iter().enumerate() {
                y[r] = yr[i];
            }
        }
        y
    }

    /// B^T y in slot space.
    fn apply_transpose(&self, std: &StdForm, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0f64; std.m];
        for (s, &v) in self.struct_vars.iter().enumerate() {
            let mut acc = 0.0;
            for (r, val) in std.column(v) {
                acc += val * y[r];
            }
            out[self.struct_slots[s]] = acc;
        }
        for (c, &slot) in self.logical_slots.iter().enumerate() {
            out[slot] = y[self.qrows[c]];
        }
        out
    }

    /// Solve B^T y = c (c slot-indexed); returns row-indexed duals, with the
    /// same refinement as `ftran0`.
    fn btran0(&self, std: &StdForm, c: &[f64]) -> Vec<f64> {
        let mut y = self.btran_raw(std, c);
        let scale = c.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
        for _ in 0..2 {
            let bty = self.apply_transpose(std, &y);
            let r: Vec<f64> = c.iter().zip(&bty).map(|(&b, &a)| b - a).collect();
            if r.iter().all(|&v| v.abs() <= 1e-11 * scale) {
                break;
            }
            let corr = self.btran_raw(std, &r);
            for (o, cc) in y.iter_mut().zip(&corr) {
                *o += cc;
            }
        }
        y
    }
}

struct Eta {
    slot: usize,
    w: Vec<f64>,
}

pub struct Simplex<'a> {
    std: StdForm,
    model: &'a MilpModel,
    basic: Vec<usize>,
    state: Vec<VarState>,
    /// Nonbasic value per variable (its active bound).
    xn: Vec<f64>,
    /// Basic values by slot.
    xb: Vec<f64>,
    factor: Factor,
    etas: Vec<Eta>,
    iterations: usize,
    degenerate_run: usize,
}

impl<'a> Simplex<'a> {
    pub fn new(model: &'a MilpModel, warm: Option<&SimplexBasis>) -> Simplex<'a> {
        Self::new_with_scaling(model, warm, true)
    }

    pub fn new_with_scaling(
        model: &'a MilpModel,
        warm: Option<&SimplexBasis>,
        scale: bool,
    ) -> Simplex<'a> {
        let std = StdForm::build(model, scale);
        let m = std.m;
        let slack_basis = || {
            let basic: Vec<usize> = (0..m).map(|r| std.nstruct + r).collect();
            let mut state = vec![VarState::AtLower; std.ntotal];
            for v in 0..std.ntotal {
                state[v] = initial_state(std.lb[v], std.ub[v]);
            }
            for &v in &basic {
                state[v] = VarState::Basic;
            }
            (basic, state)
        };
        let (basic, state) = match warm {
            Some(wb) if wb.basic.len() == m && wb.state.len() == std.ntotal => {
                let ok = wb.state.iter().filter(|s| **s == VarState::Basic).count() == m
                    && wb.basic.iter().all(|&v| v < std.ntotal && wb.state[v] == VarState::Basic);
                if ok {
                    (wb.basic.clone(), wb.state.clone())
                } else {
                    slack_basis()
                }
            }
            _ => slack_basis(),
        };
        let mut sx = Simplex {
            std,
            model,
            basic,
            state,
            xn: vec![],
            xb: vec![],
            factor: Factor {
                struct_slots: vec![],
                struct_vars: vec![],
                logical_slots: vec![],
                qrows: vec![],
                rbar: vec![],
                rbar_pos: vec![],
                lu: None,
            },
            etas: vec![],
            iterations: 0,
            degenerate_run: 0,
        };
        if !sx.refactorize() {
            // fall back to the all-logical basis, which always factors
            let (basic, state) = {
                let m = sx.std.m;
                let basic: Vec<usize> = (0..m).map(|r| sx.std.nstruct + r).collect();
                let mut state: Vec<VarState> =
                    (0..sx.std.ntotal).map(|v| initial_state(sx.std.lb[v], sx.std.ub[v])).collect();
                for &v in &basic {
                    state[v] = VarState::Basic;
                }
                (basic, state)
            };
            sx.basic = basic;
            sx.state = state;
            assert!(sx.refactorize(), "identity basis must factorize");
        }
        sx
    }

    fn refactorize(&mut self) -> bool {
        match Factor::build(&self.std, &self.basic) {
            Some(f) => {
                self.factor = f;
                self.etas.clear();
                self.recompute_values();
                true
            }
            None => false,
        }
    }

    fn recompute_values(&mut self) {
        let std = &self.std;
        self.xn = vec![0.0; std.ntotal];
        for v in 0..std.ntotal {
            if self.state[v] != VarState::Basic {
                self.xn[v] = match self.state[v] {
                    VarState::AtLower => std.lb[v],
                    VarState::AtUpper => std.ub[v],
                    VarState::Basic => unreachable!(),
                };
                if !self.xn[v].is_finite() {
                    // one-sided logicals rest on their finite bound
                    self.xn[v] = if std.lb[v].is_finite() { std.lb[v] } else { std.ub[v] };
                }
            }
        }
        let mut rhs = std.b.clone();
        for v in 0..std.ntotal {
            if self.state[v] != VarState::Basic && self.xn[v] != 0.0 {
                for (r, val) in std.column(v) {
                    rhs[r] -= val * self.xn[v];
                }
            }
        }
        self.xb = self.ftran(&rhs);
    }

    fn ftran(&self, rhs: &[f64]) -> Vec<f64> {
        let mut u = self.factor.ftran0(&self.std, rhs);
        for eta in &self.etas {
            let t = u[eta.slot] / eta.w[eta.slot];
            if t != 0.0 {
                for (j, &wj) in eta.w.iter().enumerate() {
                    if wj != 0.0 {
                        u[j] -= wj * t;
                    }
                }
                u[eta.slot] += eta.w[eta.slot] * t; // undo the self-subtraction
            }
            u[eta.slot] = t;
        }
        u
    }

    fn btran(&self, c: &[f64]) -> Vec<f64> {
        let mut v = c.to_vec();
        for eta in self.etas.iter().rev() {
            let mut acc = v[eta.slot];
            for (j, &wj) in eta.w.iter().enumerate() {
                if j != eta.slot && wj != 0.0 {
                    acc -= wj * v[j];
                }
            }
            v[eta.slot] = acc / eta.w[eta.slot];
        }
        self.factor.btran0(&self.std, &v)
    }

    fn infeasibility(&self) -> f64 {
        let std = &self.std;
        let mut total = 0.0;
        for (slot, &v) in self.basic.iter().enumerate() {
            let x = self.xb[slot];
            if x < std.lb[v] {
                total += std.lb[v] - x;
            } else if x > std.ub[v] {
                total += x - std.ub[v];
            }
        }
        total
    }

    /// Price all nonbasic columns against the row duals; returns the entering
    /// candidate (var, reduced cost, direction) per Dantzig or Bland.
    fn price(&self, y: &[f64], costs: &[f64], bland: bool) -> Option<(usize, f64, f64)> {
        let std = &self.std;
        let mut best: Option<(usize, f64, f64)> = None;
        for v in 0..std.ntotal {
            if self.state[v] == VarState::Basic || std.lb[v] == std.ub[v] {
                continue;
            }
            let mut d = costs[v];
            for (r, val) in std.column(v) {
                d -= val * y[r];
            }
            let (eligible, dir) = match self.state[v] {
                VarState::AtLower => (d < -OPT_TOL, 1.0),
                VarState::AtUpper => (d > OPT_TOL, -1.0),
                VarState::Basic => unreachable!(),
            };
            if eligible {
                if bland {
                    return Some((v, d, dir));
                }
                if best.map_or(true, |(_, bd, _)| d.abs() > bd.abs()) {
                    best = Some((v, d, dir));
                }
            }
        }
        best
    }

    /// Pivot `enter` into slot `leave_slot`; the displaced basic takes `leave_state`.
    fn pivot(&mut self, enter: usize, dir: f64, t: f64, w: &[f64], leave: Option<(usize, VarState)>) {
        let enter_from = self.xn[enter];
        for (slot, wi) in w.iter().enumerate() {
            if *wi != 0.0 {
                self.xb[slot] -= dir * t * wi;
            }
        }
        match leave {
            None => {
                // bound flip: entering stays nonbasic at its other bound
                self.state[enter] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                self.xn[enter] = enter_from + dir * t;
            }
            Some((slot, leave_state)) => {
                let out = self.basic[slot];
                self.state[out] = leave_state;
                self.xn[out] = match leave_state {
                    VarState::AtLower => self.std.lb[out],
                    VarState::AtUpper => self.std.ub[out],
                    VarState::Basic => unreachable!(),
                };
                self.basic[slot] = enter;
                self.state[enter] = VarState::Basic;
                self.xb[slot] = enter_from + dir * t;
                self.etas.push(Eta { slot, w: w.to_vec() });
                if self.etas.len() >= REFACTOR_INTERVAL {
                    let _ = self.refactorize();
                }
            }
        }
        if t <= 1e-12 {
            self.degenerate_run += 1;
        } else {
            self.degenerate_run = 0;
        }
        self.iterations += 1;
    }

    /// Phase 1: drive the sum of basic bound violations to zero with a
    /// piecewise-linear ratio test that lets basics pass through bounds.
    fn phase1(&mut self, iter_limit: usize) -> LpStatus {
        let std_n = self.std.ntotal;
        loop {
            if self.iterations >= iter_limit {
                return LpStatus::Stalled;
            }
            let inf = self.infeasibility();
            if inf <= FEAS_TOL * (1.0 + self.std.m as f64).sqrt() {
                return LpStatus::Optimal;
            }
            // phase-1 costs live on the basic variables only
            let mut sigma_slot = vec![0.0f64; self.std.m];
            for (slot, &v) in self.basic.iter().enumerate() {
                let x = self.xb[slot];
                if x < self.std.lb[v] - FEAS_TOL {
                    sigma_slot[slot] = -1.0;
                } else if x > self.std.ub[v] + FEAS_TOL {
                    sigma_slot[slot] = 1.0;
                }
            }
            let y = self.btran(&sigma_slot);
            let zero_costs = vec![0.0f64; std_n];
            let bland = self.degenerate_run > DEGENERATE_LIMIT;
            let Some((enter, d, dir)) = self.price(&y, &zero_costs, bland) else {
                return LpStatus::Infeasible;
            };
            let mut col_rhs = vec![0.0f64; self.std.m];
            for (r, val) in self.std.column(enter) {
                col_rhs[r] = val;
            }
            let w = self.ftran(&col_rhs);
            match self.ratio_piecewise(enter, dir, d, &w) {
                RatioOutcome::Step { t, leave } => self.pivot(enter, dir, t, &w, leave),
                RatioOutcome::NoProgress => {
                    // numerical dead end; refactorize once, then give up
                    if !self.etas.is_empty() {
                        let _ = self.refactorize();
                        continue;
                    }
                    return LpStatus::Stalled;
                }
            }
        }
    }

    fn ratio_piecewise(&self, enter: usize, dir: f64, d: f64, w: &[f64]) -> RatioOutcome {
        let std = &self.std;
        // hard cap from the entering variable's own range
        let range = std.ub[enter] - std.lb[enter];
        let cap = if range.is_finite() { range } else { f64::INFINITY };
        let mut bps: Vec<(f64, f64, usize, VarState, f64)> = vec![]; // (t, jump, slot, bound-state, |rate|)
        for (slot, &wi) in w.iter().enumerate() {
            if wi.abs() < PIVOT_TOL {
                continue;
            }
            let rate = -dir * wi;
            let v = self.basic[slot];
            let x = self.xb[slot];
            let (lb, ub) = (std.lb[v], std.ub[v]);
            let push = |bps: &mut Vec<_>, t: f64, state: VarState| {
                if t < cap + 1e-12 {
                    bps.push((t.max(0.0), rate.abs(), slot, state, wi.abs()));
                }
            };
            if x < lb - FEAS_TOL {
                if rate > 0.0 {
                    push(&mut bps, (lb - x) / rate, VarState::AtLower);
                    if ub.is_finite() {
                        push(&mut bps, (ub - x) / rate, VarState::AtUpper);
                    }
                }
            } else if x > ub + FEAS_TOL {
                if rate < 0.0 {
                    push(&mut bps, (x - ub) / -rate, VarState::AtUpper);
                    if lb.is_finite() {
                        push(&mut bps, (x - lb) / -rate, VarState::AtLower);
                    }
                }
            } else if rate > 0.0 {
                if ub.is_finite() {
                    push(&mut bps, (ub - x) / rate, VarState::AtUpper);
                }
            } else if lb.is_finite() {
                push(&mut bps, (x - lb) / -rate, VarState::AtLower);
            }
        }
        bps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut slope = dir * d; // negative by construction
        let mut i = 0;
        while i < bps.len() {
            // group ties, then pick the stablest pivot among them
            let t = bps[i].0;
            let mut j = i;
            let mut best = i;
            while j < bps.len() && bps[j].0 <= t + 1e-12 {
                slope += bps[j].1;
                if bps[j].4 > bps[best].4 {
                    best = j;
                }
                j += 1;
            }
            if slope >= -1e-12 {
                let (_, _, slot, state, _) = bps[best];
                return RatioOutcome::Step { t, leave: Some((slot, state)) };
            }
            i = j;
        }
        if cap.is_finite() {
            return RatioOutcome::Step { t: cap, leave: None };
        }
        RatioOutcome::NoProgress
    }

    /// Phase 2 over the true costs; assumes a primal-feasible basis.
    fn phase2(&mut self, iter_limit: usize) -> LpStatus {
        loop {
            if self.iterations >= iter_limit {
                return LpStatus::Stalled;
            }
            let mut cb = vec![0.0f64; self.std.m];
            for (slot, &v) in self.basic.iter().enumerate() {
                cb[slot] = self.std.cost[v];
            }
            let y = self.btran(&cb);
            let bland = self.degenerate_run > DEGENERATE_LIMIT;
            let Some((enter, _d, dir)) = self.price(&y, &self.std.cost, bland) else {
                return LpStatus::Optimal;
            };
            let mut col_rhs = vec![0.0f64; self.std.m];
            for (r, val) in self.std.column(enter) {
                col_rhs[r] = val;
            }
            let w = self.ftran(&col_rhs);
            // plain bounded ratio test
            let std = &self.std;
            let range = std.ub[enter] - std.lb[enter];
            let mut t_best = if range.is_finite() { range } else { f64::INFINITY };
            let mut leave: Option<(usize, VarState)> = None;
            let mut best_piv = 0.0f64;
            for (slot, &wi) in w.iter().enumerate() {
                if wi.abs() < PIVOT_TOL {
                    continue;
                }
                let rate = -dir * wi;
                let v = self.basic[slot];
                let x = self.xb[slot];
                let (t_i, state) = if rate > 0.0 && std.ub[v].is_finite() {
                    ((std.ub[v] - x) / rate, VarState::AtUpper)
                } else if rate < 0.0 && std.lb[v].is_finite() {
                    ((x - std.lb[v]) / -rate, VarState::AtLower)
                } else {
                    continue;
                };
                let t_i = t_i.max(0.0);
                if t_i < t_best - 1e-12 || (t_i < t_best + 1e-12 && wi.abs() > best_piv) {
                    t_best = t_i;
                    leave = Some((slot, state));
                    best_piv = wi.abs();
                }
            }
            if !t_best.is_finite() {
                return LpStatus::Unbounded;
            }
            if leave.is_none() && !range.is_finite() {
                return LpStatus::Unbounded;
            }
            self.pivot(enter, dir, t_best, &w, leave);
        }
    }

    fn finish(mut self, status: LpStatus) -> LpResult {
        let _ = self.refactorize();
        let std = &self.std;
        let mut x_full = vec![0.0f64; std.ntotal];
        for v in 0..std.ntotal {
            if self.state[v] != VarState::Basic {
                x_full[v] = self.xn[v];
            }
        }
        for (slot, &v) in self.basic.iter().enumerate() {
            x_full[v] = self.xb[slot];
        }
        // duals and reduced costs at the final basis
        let mut cb = vec![0.0f64; std.m];
        for (slot, &v) in self.basic.iter().enumerate() {
            cb[slot] = std.cost[v];
        }
        let y = self.btran(&cb);
        let mut reduced = vec![0.0f64; std.nstruct];
        let mut dual_res = 0.0f64;
        for v in 0..std.ntotal {
            let mut d = std.cost[v];
            for (r, val) in std.column(v) {
                d -= val * y[r];
            }
            if v < std.nstruct {
                reduced[v] = d / self.std.col_scale[v];
            }
            // fixed variables sit on both bounds, so any sign is dual-feasible
            if std.lb[v] < std.ub[v] {
                let viol = match self.state[v] {
                    VarState::Basic => d.abs(),
                    VarState::AtLower => (-d).max(0.0),
                    VarState::AtUpper => d.max(0.0),
                };
                dual_res = dual_res.max(viol);
            }
        }
        // primal residual in original (unscaled) units
        let mut ax = vec![0.0f64; std.m];
        for v in 0..std.nstruct {
            if x_full[v] != 0.0 {
                for (r, val) in std.column(v) {
                    ax[r] += val * x_full[v];
                }
            }
        }
        let mut primal_res = 0.0f64;
        for r in 0..std.m {
            let act = (ax[r] + x_full[std.nstruct + r] - std.b[r]).abs() / std.row_scale[r];
            primal_res = primal_res.max(act);
            let s = x_full[std.nstruct + r];
            let bviol = (std.lb[std.nstruct + r] - s).max(s - std.ub[std.nstruct + r]).max(0.0)
                / std.row_scale[r];
            if status == LpStatus::Optimal {
                primal_res = primal_res.max(bviol);
            }
        }
        let x: Vec<f64> = (0..std.nstruct).map(|v| x_full[v] * std.col_scale[v]).collect();
        let duals: Vec<f64> = (0..std.m).map(|r| y[r] * std.row_scale[r]).collect();
        let objective = self.model.objective_value(&x);
        LpResult {
            status,
            x,
            objective,
            duals,
            reduced_costs: reduced,
            primal_residual: primal_res,
            dual_residual: dual_res,
            iterations: self.iterations,
            basis: SimplexBasis { basic: self.basic, state: self.state },
        }
    }

    fn reset_to_slack_basis(&mut self) {
        let m = self.std.m;
        self.basic = (0..m).map(|r| self.std.nstruct + r).collect();
        self.state =
            (0..self.std.ntotal).map(|v| initial_state(self.std.lb[v], self.std.ub[v])).collect();
        for &v in &self.basic {
            self.state[v] = VarState::Basic;
        }
        assert!(self.refactorize(), "identity basis must factorize");
    }

    pub fn solve(mut self) -> LpResult {
        let iter_limit = 200 * (self.std.m + self.std.ntotal) + 20_000;
        const REPAIR_LIMIT: usize = 5;
        let mut repairs = 0;
        let status = loop {
            let p1 = self.phase1(iter_limit);
            if p1 != LpStatus::Optimal {
                break p1;
            }
            let p2 = self.phase2(iter_limit);
            if p2 != LpStatus::Optimal {
                break p2;
            }
            // the eta file can drift on ill-conditioned bases, so never trust
            // a claimed optimum until it survives a fresh factorization
            if repairs >= REPAIR_LIMIT {
                break LpStatus::Stalled;
            }
            repairs += 1;
            if !self.refactorize() {
                // singular final basis: restart clean
                self.reset_to_slack_basis();
                continue;
            }
            let tol = FEAS_TOL * (1.0 + self.std.m as f64).sqrt();
            if self.infeasibility() > tol {
                continue;
            }
            let before = self.iterations;
            let p2b = self.phase2(iter_limit);
            if p2b != LpStatus::Optimal {
                break p2b;
            }
            if self.iterations == before {
                break LpStatus::Optimal;
            }
        };
        self.finish(status)
    }
}

enum RatioOutcome {
    Step { t: f64, leave: Option<(usize, VarState)> },
    NoProgress,
}

fn initial_state(lb: f64, ub: f64) -> VarState {
    if lb.is_finite() {
        VarState::AtLower
    } else {
        debug_assert!(ub.is_finite(), "free variables are not produced by the builders");
        VarState::AtUpper
    }
}

/// Solve the continuous relaxation of `model` (binaries relaxed to their
/// bounds) with an optional warm-start basis.
pub fn solve_lp(model: &MilpModel, warm: Option<&SimplexBasis>) -> LpResult {
    let res = Simplex::new(model, warm).solve();
    // scaling can hide true-space infeasibility on badly conditioned rows;
    // if a claimed-optimal point is materially infeasible, re-solve unscaled
    if res.status == LpStatus::Optimal && res.primal_residual > 1e-6 {
        let unscaled = Simplex::new_with_scaling(model, None, false).solve();
        if unscaled.status != LpStatus::Optimal || unscaled.primal_residual < res.primal_residual {
            return unscaled;
        }
    }
    res
}
