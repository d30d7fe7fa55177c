//! Distributionally robust chance-constrained optimal transmission switching.
//!
//! The crate is organized as a pipeline: a grid case and wind scenarios go in,
//! a reformulated mixed-integer model comes out of one of the builders, the
//! embedded branch-and-bound solver produces a switching plan with affine
//! recourse, and the evaluator scores that plan out of sample.

pub mod case_model;
pub mod evaluate;
pub mod fixtures;
pub mod linalg;
pub mod milp;
pub mod reformulate;
pub mod model;
pub mod two_stage;
pub mod uncertainty;

pub use case_model::{CaseError, GridCase, NetworkOperators};
pub use linalg::DMat;
pub use model::{AffExpr, MilpModel, Row, Sense, VarId, VarKind};
pub use uncertainty::{AmbiguitySpec, PlacementMatrix, Polytope, ScenarioSet, UncertaintyError};
