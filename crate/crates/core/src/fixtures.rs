//! Bundled test cases: a 3-bus triangle with one cheap remote generator and
//! a binding line limit, and an IEEE 14-bus system (20 lines, 5 generators)
//! with limits tightened enough to congest.

use crate::case_model::{parse_case, GridCase};

pub const TRIANGLE_JSON: &str = include_str!("../fixtures/case3.json");
pub const IEEE14_JSON: &str = include_str!("../fixtures/case14.json");

pub fn triangle_case() -> GridCase {
    parse_case(TRIANGLE_JSON).expect("bundled triangle case is valid")
}

pub fn ieee14_case() -> GridCase {
    parse_case(IEEE14_JSON).expect("bundled 14-bus case is valid")
}
