//! The sparse model intermediate representation consumed by the embedded
//! solver: a variable table, sparse constraint rows, and a linear objective.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Default box for continuous variables the formulations leave unbounded.
/// Everything is in per-unit, so this is generous.
pub const DEFAULT_BOUND: f64 = 1.0e4;

pub type VarId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Affine expression in the decision variables: `constant + sum coef * var`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AffExpr {
    pub constant: f64,
    pub terms: Vec<(VarId, f64)>,
}

impl AffExpr {
    pub fn constant(c: f64) -> Self {
        AffExpr { constant: c, terms: vec![] }
    }

    pub fn var(v: VarId) -> Self {
        AffExpr { constant: 0.0, terms: vec![(v, 1.0)] }
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        AffExpr { constant: 0.0, terms: vec![(v, coef)] }
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
    }

    pub fn scaled(&self, s: f64) -> AffExpr {
        AffExpr {
            constant: self.constant * s,
            terms: self.terms.iter().map(|&(v, c)| (v, c * s)).collect(),
        }
    }

    pub fn plus(&self, other: &AffExpr) -> AffExpr {
        let mut out = self.clone();
        out.constant += other.constant;
        out.terms.extend_from_slice(&other.terms);
        out
    }

    /// Evaluate at a point given by the full variable value vector.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    /// Interval of attainable values over the variable bound box.
    pub fn bounds(&self, model: &MilpModel) -> (f64, f64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for &(v, c) in &self.terms {
            let var = &model.vars[v];
            let (a, b) = (c * var.lb, c * var.ub);
            lo += a.min(b);
            hi += a.max(b);
        }
        (lo, hi)
    }

    /// True when the expression is identically zero given fixed-at-zero bounds.
    pub fn is_fixed_zero(&self, model: &MilpModel) -> bool {
        if self.constant != 0.0 {
            return false;
        }
        self.terms.iter().all(|&(v, c)| {
            c == 0.0 || (model.vars[v].lb == 0.0 && model.vars[v].ub == 0.0)
        })
    }
}

/// Tag describing which formulation produced a model.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ModelMeta {
    pub method: String,
    pub epsilon: Option<f64>,
    pub line_out_budget: Option<usize>,
    /// Enforce connectivity of the closed-line subgraph via incumbent cuts.
    pub enforce_connectivity: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MilpModel {
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
    /// Dense objective coefficient per variable (minimization).
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub meta: ModelMeta,
}

impl MilpModel {
    pub fn new(meta: ModelMeta) -> Self {
        MilpModel { vars: vec![], rows: vec![], objective: vec![], objective_offset: 0.0, meta }
    }

    pub fn add_named_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lb: f64,
        ub: f64,
    ) -> VarId {
        let name = name.into();
        debug_assert!(lb <= ub, "inverted bounds on {name}");
        let id = self.vars.len();
        let (lb, ub) = match kind {
            VarKind::Binary => (lb.max(0.0), ub.min(1.0)),
            VarKind::Continuous => (lb, ub),
        };
        self.vars.push(Variable { name, kind, lb, ub });
        self.objective.push(0.0);
        id
    }

    pub fn fix_var(&mut self, v: VarId, value: f64) {
        self.vars[v].lb = value;
        self.vars[v].ub = value;
    }

    pub fn set_objective(&mut self, v: VarId, coef: f64) {
        self.objective[v] = coef;
    }

    pub fn add_objective(&mut self, v: VarId, coef: f64) {
        self.objective[v] += coef;
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for (v, c) in coeffs {
            if c != 0.0 {
                *merged.entry(v).or_insert(0.0) += c;
            }
        }
        self.rows.push(Row {
            name: name.into(),
            coeffs: merged.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            sense,
            rhs,
        });
    }

    /// Add the constraint `lhs (sense) rhs` where both sides are affine.
    pub fn add_affine_row(&mut self, name: impl Into<String>, lhs: &AffExpr, sense: Sense, rhs: &AffExpr) {
        let mut coeffs = lhs.terms.clone();
        for &(v, c) in &rhs.terms {
            coeffs.push((v, -c));
        }
        self.add_row(name, coeffs, sense, rhs.constant - lhs.constant);
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Text rendering for debugging and cross-solver validation.
    ///
    /// Grammar: one `min: ...` objective line, constraint lines
    /// `name: coef var [+/- coef var ...] sense rhs`, a `bounds` section and
    /// a `binary` section.
    pub fn to_lp_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "min:");
        if self.objective_offset != 0.0 {
            let _ = write!(s, " {:+}", self.objective_offset);
        }
        for (v, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                let _ = write!(s, " {:+} {}", c, self.var_name(v));
            }
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{}:", row.name);
            for &(v, c) in &row.coeffs {
                let _ = write!(s, " {:+} {}", c, self.var_name(v));
            }
            let _ = writeln!(s, " {} {}", row.sense.symbol(), row.rhs);
        }
        let _ = writeln!(s, "bounds");
        for (i, v) in self.vars.iter().enumerate() {
            let _ = writeln!(s, "  {} <= {} <= {}", v.lb, self.var_name(i), v.ub);
        }
        let _ = writeln!(s, "binary");
        for (i, v) in self.vars.iter().enumerate() {
            if v.kind == VarKind::Binary {
                let _ = writeln!(s, "  {}", self.var_name(i));
            }
        }
        s
    }

    fn var_name(&self, v: VarId) -> String {
        if self.vars[v].name.is_empty() {
            format!("x{v}")
        } else {
            self.vars[v].name.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_row_moves_terms() {
        let mut m = MilpModel::new(ModelMeta::default());
        let a = m.add_named_var("a", VarKind::Continuous, 0.0, 1.0);
        let b = m.add_named_var("b", VarKind::Continuous, 0.0, 1.0);
        let lhs = AffExpr { constant: 2.0, terms: vec![(a, 1.0)] };
        let rhs = AffExpr { constant: 5.0, terms: vec![(b, 3.0)] };
        m.add_affine_row("r", &lhs, Sense::Le, &rhs);
        let row = &m.rows[0];
        assert_eq!(row.rhs, 3.0);
        assert_eq!(row.coeffs, vec![(a, 1.0), (b, -3.0)]);
    }

    #[test]
    fn interval_bounds() {
        let mut m = MilpModel::new(ModelMeta::default());
        let a = m.add_named_var("a", VarKind::Continuous, -1.0, 2.0);
        let e = AffExpr { constant: 1.0, terms: vec![(a, -3.0)] };
        assert_eq!(e.bounds(&m), (-5.0, 4.0));
    }

    #[test]
    fn lp_text_has_sections() {
        let mut m = MilpModel::new(ModelMeta::default());
        let a = m.add_named_var("a", VarKind::Binary, 0.0, 1.0);
        m.set_objective(a, 1.5);
        m.add_row("c0", vec![(a, 2.0)], Sense::Ge, 1.0);
        let text = m.to_lp_text();
        assert!(text.contains("min: +1.5 a"));
        assert!(text.contains("c0: +2 a >= 1"));
        assert!(text.contains("bounds"));
        assert!(text.contains("binary"));
    }
}
