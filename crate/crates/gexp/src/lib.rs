//! Constrained robust optimization through quadratic-generator BSDEs on a
//! finite binary path tree.
//!
//! The crate evaluates g-expectations by implicit backward induction,
//! propagates the adjoint processes of the associated maximum principle as
//! exact discrete stochastic exponentials, and solves box-constrained
//! terminal optimization problems via a Lagrange / bang-bang
//! characterization. Independent brute-force oracles on small trees
//! arbitrate every solver output.

// negated comparisons like `!(gamma > 0.0)` are deliberate: they also
// reject NaN parameters
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod applications;
pub mod bsde;
pub mod cli;
pub mod error;
pub mod generators;
pub mod optimizer;
pub mod oracle;
pub mod pathspace;

pub use error::{Error, Result};
