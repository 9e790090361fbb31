//! Solvers for infinite-horizon discounted-cost MDPs whose state splits into
//! an observed part `x_o` and a hidden part `x_u`.
//!
//! The crate computes
//!
//! * exact belief-state dynamic programming on `(x_o, b)` ([`belief_dp`]),
//! * the frozen-belief approximation over `x_o` alone ([`approx`]),
//! * the full-information baseline over `(x_o, x_u)` ([`full_info`]),
//! * the constrained occupation-measure LP for local policies ([`constrained`]),
//! * the performance-gap constants bounding the approximation ([`bounds`]),
//!
//! and cross-checks every value against an independent route: value
//! iteration against both LPs, linear-solve policy evaluation against
//! seeded Monte Carlo ([`sim`]).

pub mod approx;
pub mod belief;
pub mod belief_dp;
pub mod bounds;
pub mod constrained;
pub mod error;
pub mod fixtures;
pub mod full_info;
pub mod lp;
pub mod mdp;
pub mod model;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
