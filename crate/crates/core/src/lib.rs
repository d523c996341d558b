//! Distributionally robust reserve-market game between a system operator and
//! renewable microgrids.
//!
//! The operator buys upward reserve from microgrids subject to a joint chance
//! constraint on reserve shortfalls; each microgrid prices its own shortfall risk
//! with a Wasserstein worst-case penalty. The leader-follower game is collapsed
//! into one mixed-binary program and solved by branch-and-bound, the individual
//! violation rates are tuned by Bayesian optimization, and equilibria are
//! cross-checked against a variational-inequality potential problem.

pub mod bayes;
pub mod data;
pub mod dro;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod market;
pub mod program;
pub mod solver;
pub mod vi;

pub use error::{Error, Result};
