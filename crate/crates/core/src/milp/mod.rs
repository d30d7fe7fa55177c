//! Embedded mixed-integer solver: LP relaxations from the bounded simplex in
//! [`simplex`], driven by best-bound branch and bound with warm-started bases,
//! a light bound-fixing presolve, and lazy incumbent cuts.

pub mod simplex;

pub use simplex::{solve_lp, LpResult, LpStatus, SimplexBasis, VarState};

use crate::model::{MilpModel, Row, Sense, VarKind};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const INT_TOL: f64 = 1e-6;
const GAP_ABS: f64 = 1e-7;
const GAP_REL: f64 = 1e-7;
const NODE_LIMIT: usize = 200_000;
const CUT_LIMIT: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Search stopped early (node or cut limit); incumbent may be suboptimal.
    Limit,
}

#[derive(Debug, Clone)]
pub struct MilpResult {
    pub status: MilpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub best_bound: f64,
    pub nodes: usize,
    pub gap: f64,
}

/// Called on every integral candidate; returning rows rejects the candidate
/// and adds the rows as global cuts. Returning no rows accepts it.
pub type IncumbentCut<'a> = dyn FnMut(&[f64]) -> Vec<Row> + 'a;

struct Node {
    bound: f64,
    /// (var, lb, ub) overrides relative to the root.
    fixings: Vec<(usize, f64, f64)>,
    basis: Option<SimplexBasis>,
    depth: usize,
}

struct HeapEntry(f64, usize, usize);

impl PartialEq for HeapEntry {
    fn eq(&self, o: &Self) -> bool {
        self.0 == o.0 && self.1 == o.1 && self.2 == o.2
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for HeapEntry {
    // min-heap on the quantized bound; on ties, deeper then newer nodes
    // first, so plateaus of near-equal bounds are explored depth-first and
    // yield an incumbent quickly instead of fanning out breadth-first
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.partial_cmp(&self.0)
            .unwrap_or(Ordering::Equal)
            .then(self.1.cmp(&o.1))
            .then(self.2.cmp(&o.2))
    }
}

/// Bounds within one part in 1e6 of each other count as tied for search
/// ordering; pruning still uses the exact bound stored on the node.
fn heap_key(bound: f64) -> f64 {
    if !bound.is_finite() {
        return bound;
    }
    let q = 1e-6 * bound.abs().max(1.0);
    (bound / q).floor() * q
}

/// Fix binaries that a `<=` row with unit-magnitude coefficients forces to a
/// single value, e.g. `sum w_s <= 0.3` fixes every `w_s` to zero. Returns
/// false when such a row is plainly infeasible.
pub fn presolve_fix_binaries(model: &mut MilpModel) -> bool {
    let mut changed = true;
    while changed {
        changed = false;
        let rows = model.rows.clone();
        for row in &rows {
            if row.sense != Sense::Le {
                continue;
            }
            let all_unit_binary = row.coeffs.iter().all(|&(v, c)| {
                (c.abs() - 1.0).abs() < 1e-12
                    && model.vars[v].kind == VarKind::Binary
            });
            if !all_unit_binary || row.coeffs.is_empty() {
                continue;
            }
            let mut min_act = 0.0;
            let mut free = vec![];
            for &(v, c) in &row.coeffs {
                let (lb, ub) = (model.vars[v].lb, model.vars[v].ub);
                min_act += (c * lb).min(c * ub);
                if lb < ub {
                    free.push((v, c));
                }
            }
            let slack = row.rhs - min_act;
            if slack < -1e-9 {
                return false;
            }
            if slack < 1.0 - 1e-9 {
                for (v, c) in free {
                    let fix = if c > 0.0 { model.vars[v].lb } else { model.vars[v].ub };
                    model.fix_var(v, fix);
                    changed = true;
                }
            }
        }
    }
    true
}

pub fn solve_milp(model: &MilpModel, mut on_incumbent: Option<&mut IncumbentCut<'_>>) -> MilpResult {
    let mut work = model.clone();
    if !presolve_fix_binaries(&mut work) {
        return MilpResult {
            status: MilpStatus::Infeasible,
            x: vec![],
            objective: f64::INFINITY,
            best_bound: f64::INFINITY,
            nodes: 0,
            gap: f64::INFINITY,
        };
    }
    let root_bounds: Vec<(f64, f64)> = work.vars.iter().map(|v| (v.lb, v.ub)).collect();
    let binaries: Vec<usize> = (0..work.vars.len())
        .filter(|&v| work.vars[v].kind == VarKind::Binary)
        .collect();

    let mut nodes: Vec<Option<Node>> = vec![Some(Node {
        bound: f64::NEG_INFINITY,
        fixings: vec![],
        basis: None,
        depth: 0,
    })];
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry(f64::NEG_INFINITY, 0, 0));

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut explored = 0usize;
    let mut cuts_added = 0usize;
    let mut hit_limit = false;

    while let Some(HeapEntry(_, _, id)) = heap.pop() {
        let node = match nodes[id].take() {
            Some(n) => n,
            None => continue,
        };
        if explored >= NODE_LIMIT {
            hit_limit = true;
            nodes[id] = Some(node);
            break;
        }
        if let Some((best, _)) = &incumbent {
            if node.bound >= best - gap_slack(*best) {
                continue;
            }
        }
        explored += 1;

        for &(v, lb, ub) in &node.fixings {
            work.vars[v].lb = lb;
            work.vars[v].ub = ub;
        }
        let mut lp = solve_lp(&work, node.basis.as_ref());
        if lp.status == LpStatus::Stalled && node.basis.is_some() {
            lp = solve_lp(&work, None);
        }
        let verdict = (|| -> Option<Node> {
            match lp.status {
                LpStatus::Infeasible => None,
                LpStatus::Stalled => {
                    hit_limit = true;
                    None
                }
                LpStatus::Unbounded | LpStatus::Optimal => {
                    if lp.status == LpStatus::Unbounded && binaries.is_empty() {
                        return None;
                    }
                    let bound = if lp.status == LpStatus::Unbounded {
                        f64::NEG_INFINITY
                    } else {
                        lp.objective
                    };
                    if let Some((best, _)) = &incumbent {
                        if bound >= best - gap_slack(*best) {
                            return None;
                        }
                    }
                    let frac = binaries
                        .iter()
                        .filter(|&&v| work.vars[v].lb < work.vars[v].ub)
                        .map(|&v| (v, (lp.x[v] - lp.x[v].round()).abs()))
                        .filter(|&(_, f)| f > INT_TOL)
                        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
                    match frac {
                        None => {
                            // integral candidate; offer it to the cut callbacks
                            let mut x = lp.x.clone();
                            for &v in &binaries {
                                x[v] = x[v].round();
                            }
                            if let Some(cb) = on_incumbent.as_deref_mut() {
                                let cuts = cb(&x);
                                if !cuts.is_empty() {
                                    cuts_added += cuts.len();
                                    for cut in cuts {
                                        work.rows.push(cut);
                                    }
                                    if cuts_added > CUT_LIMIT {
                                        hit_limit = true;
                                        return None;
                                    }
                                    // rows changed: stored bases are stale
                                    for slot in nodes.iter_mut().flatten() {
                                        slot.basis = None;
                                    }
                                    return Some(Node {
                                        bound: node.bound,
                                        fixings: node.fixings.clone(),
                                        basis: None,
                                        depth: node.depth,
                                    });
                                }
                            }
                            let obj = work.objective_value(&x);
                            if incumbent.as_ref().map_or(true, |(b, _)| obj < *b) {
                                incumbent = Some((obj, x));
                            }
                            None
                        }
                        Some((v, _)) => {
                            for val in [1.0, 0.0] {
                                let mut fixings = node.fixings.clone();
                                fixings.push((v, val, val));
                                let child = Node {
                                    bound,
                                    fixings,
                                    basis: Some(lp.basis.clone()),
                                    depth: node.depth + 1,
                                };
                                let cid = nodes.len();
                                let depth = child.depth;
                                nodes.push(Some(child));
                                heap.push(HeapEntry(heap_key(bound), depth, cid));
                            }
                            None
                        }
                    }
                }
            }
        })();
        if let Some(requeue) = verdict {
            let bound = requeue.bound;
            let depth = requeue.depth;
            let cid = nodes.len();
            nodes.push(Some(requeue));
            heap.push(HeapEntry(heap_key(bound), depth, cid));
        }
        for &(v, _, _) in &node.fixings {
            work.vars[v].lb = root_bounds[v].0;
            work.vars[v].ub = root_bounds[v].1;
        }
    }

    // exact bounds of still-open nodes (the heap keys are quantized)
    let best_open = nodes.iter().flatten().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        Some((obj, x)) => {
            let bound = if hit_limit { best_open.min(obj) } else { obj.min(best_open.min(obj)) };
            let gap = if hit_limit {
                (obj - bound).max(0.0) / obj.abs().max(1.0)
            } else {
                0.0
            };
            MilpResult {
                status: if hit_limit { MilpStatus::Limit } else { MilpStatus::Optimal },
                x,
                objective: obj,
                best_bound: bound,
                nodes: explored,
                gap,
            }
        }
        None => MilpResult {
            status: if hit_limit { MilpStatus::Limit } else { MilpStatus::Infeasible },
            x: vec![],
            objective: f64::INFINITY,
            best_bound: best_open,
            nodes: explored,
            gap: f64::INFINITY,
        },
    }
}

fn gap_slack(best: f64) -> f64 {
    GAP_ABS + GAP_REL * best.abs()
}

/// Fix every binary to its value in `x` and re-solve the LP; used to recover
/// duals and continuous values consistent with an integral assignment.
pub fn fixed_binary_lp(model: &MilpModel, x_bin: &[f64]) -> LpResult {
    let mut work = model.clone();
    for (v, var) in work.vars.clone().iter().enumerate() {
        if var.kind == VarKind::Binary {
            let val = x_bin[v].round();
            work.fix_var(v, val);
        }
    }
    solve_lp(&work, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MilpModel, ModelMeta, Sense, VarKind};
    use approx::assert_abs_diff_eq;

    fn knapsack(values: &[f64], weights: &[f64], cap: f64) -> MilpModel {
        let mut m = MilpModel::new(ModelMeta::default());
        let vars: Vec<_> = (0..values.len())
            .map(|i| m.add_named_var(format!("pick{i}"), VarKind::Binary, 0.0, 1.0))
            .collect();
        for (i, &v) in values.iter().enumerate() {
            m.set_objective(vars[i], -v); // maximize value
        }
        m.add_row(
            "cap",
            vars.iter().zip(weights).map(|(&v, &w)| (v, w)).collect(),
            Sense::Le,
            cap,
        );
        m
    }

    fn brute_force_knapsack(values: &[f64], weights: &[f64], cap: f64) -> f64 {
        let n = values.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            let (mut v, mut w) = (0.0, 0.0);
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    v += values[i];
                    w += weights[i];
                }
            }
            if w <= cap {
                best = best.max(v);
            }
        }
        best
    }

    #[test]
    fn five_item_knapsack_exact() {
        let values = [10.0, 13.0, 7.0, 8.0, 4.0];
        let weights = [5.0, 6.0, 3.0, 4.0, 2.0];
        let cap = 10.0;
        let m = knapsack(&values, &weights, cap);
        let r = solve_milp(&m, None);
        assert_eq!(r.status, MilpStatus::Optimal);
        assert_abs_diff_eq!(-r.objective, brute_force_knapsack(&values, &weights, cap), epsilon = 1e-9);
    }

    #[test]
    fn infeasible_integer_program() {
        let mut m = MilpModel::new(ModelMeta::default());
        let a = m.add_named_var("a", VarKind::Binary, 0.0, 1.0);
        let b = m.add_named_var("b", VarKind::Binary, 0.0, 1.0);
        m.add_row("need2", vec![(a, 1.0), (b, 1.0)], Sense::Ge, 3.0);
        let r = solve_milp(&m, None);
        assert_eq!(r.status, MilpStatus::Infeasible);
    }

    #[test]
    fn presolve_fixes_budget_row() {
        let mut m = MilpModel::new(ModelMeta::default());
        let vars: Vec<_> = (0..4)
            .map(|i| m.add_named_var(format!("w{i}"), VarKind::Binary, 0.0, 1.0))
            .collect();
        m.add_row("budget", vars.iter().map(|&v| (v, 1.0)).collect(), Sense::Le, 0.4);
        assert!(presolve_fix_binaries(&mut m));
        for &v in &vars {
            assert_eq!((m.vars[v].lb, m.vars[v].ub), (0.0, 0.0));
        }
    }

    #[test]
    fn presolve_fixes_negated_row() {
        // -z1 - z2 <= -1.5 forces z1 = z2 = 1
        let mut m = MilpModel::new(ModelMeta::default());
        let z1 = m.add_named_var("z1", VarKind::Binary, 0.0, 1.0);
        let z2 = m.add_named_var("z2", VarKind::Binary, 0.0, 1.0);
        m.add_row("force", vec![(z1, -1.0), (z2, -1.0)], Sense::Le, -1.5);
        assert!(presolve_fix_binaries(&mut m));
        assert_eq!((m.vars[z1].lb, m.vars[z2].lb), (1.0, 1.0));
    }

    #[test]
    fn incumbent_cut_rejects_and_recovers() {
        // maximize a + b; cut rejects (1,1), forcing the next best point
        let mut m = MilpModel::new(ModelMeta::default());
        let a = m.add_named_var("a", VarKind::Binary, 0.0, 1.0);
        let b = m.add_named_var("b", VarKind::Binary, 0.0, 1.0);
        m.set_objective(a, -1.0);
        m.set_objective(b, -1.0);
        let mut cb = |x: &[f64]| -> Vec<Row> {
            if x[a] > 0.5 && x[b] > 0.5 {
                vec![Row {
                    name: "nogood".into(),
                    coeffs: vec![(a, 1.0), (b, 1.0)],
                    sense: Sense::Le,
                    rhs: 1.0,
                }]
            } else {
                vec![]
            }
        };
        let r = solve_milp(&m, Some(&mut cb));
        assert_eq!(r.status, MilpStatus::Optimal);
        assert_abs_diff_eq!(r.objective, -1.0, epsilon = 1e-9);
        assert!(r.x[a] + r.x[b] < 1.5);
    }

    #[test]
    fn mixed_integer_with_continuous() {
        // min 3y - 2x, x <= 4y (x continuous in [0,4], y binary): y=1, x=4
        let mut m = MilpModel::new(ModelMeta::default());
        let x = m.add_named_var("x", VarKind::Continuous, 0.0, 4.0);
        let y = m.add_named_var("y", VarKind::Binary, 0.0, 1.0);
        m.set_objective(x, -2.0);
        m.set_objective(y, 3.0);
        m.add_row("link", vec![(x, 1.0), (y, -4.0)], Sense::Le, 0.0);
        let r = solve_milp(&m, None);
        assert_eq!(r.status, MilpStatus::Optimal);
        assert_abs_diff_eq!(r.objective, -5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.x[y], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn random_small_milps_match_enumeration() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..20 {
            let n = rng.gen_range(3..=8);
            let mut m = MilpModel::new(ModelMeta::default());
            let vars: Vec<_> = (0..n)
                .map(|i| m.add_named_var(format!("b{i}"), VarKind::Binary, 0.0, 1.0))
                .collect();
            for &v in &vars {
                m.set_objective(v, rng.gen_range(-5.0..5.0));
            }
            for r in 0..rng.gen_range(1..=4) {
                let mut coeffs: Vec<(usize, f64)> = vec![];
                for &v in &vars {
                    if rng.gen_bool(0.7) {
                        let c = rng.gen_range(-3.0..3.0_f64).round();
                        if c != 0.0 {
                            coeffs.push((v, c));
                        }
                    }
                }
                if coeffs.is_empty() {
                    continue;
                }
                let sense = if rng.gen_bool(0.5) { Sense::Le } else { Sense::Ge };
                m.add_row(format!("c{r}"), coeffs, sense, rng.gen_range(-2.0..3.0_f64).round());
            }
            // exhaustive oracle
            let mut best: Option<f64> = None;
            for mask in 0u32..(1 << n) {
                let x: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
                let feasible = m.rows.iter().all(|row| {
                    let act: f64 = row.coeffs.iter().map(|&(v, c)| c * x[v]).sum();
                    match row.sense {
                        Sense::Le => act <= row.rhs + 1e-9,
                        Sense::Ge => act >= row.rhs - 1e-9,
                        Sense::Eq => (act - row.rhs).abs() <= 1e-9,
                    }
                });
                if feasible {
                    let obj = m.objective_value(&x);
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
            let r = solve_milp(&m, None);
            match best {
                Some(opt) => {
                    assert_eq!(r.status, MilpStatus::Optimal, "trial {trial}");
                    assert_abs_diff_eq!(r.objective, opt, epsilon = 1e-6);
                }
                None => assert_eq!(r.status, MilpStatus::Infeasible, "trial {trial}"),
            }
        }
    }
}
