//! Solvers for [`ConicProgram`](crate::program::ConicProgram): a convex engine for
//! relaxations, branch-and-bound over binaries, and an exhaustive oracle.

mod bnb;
mod convex;

pub use bnb::{branch_and_bound, enumerate_oracle, BnbResult, BnbStatus, NodeRecord, ENUMERATION_CAP};
pub use convex::{solve_convex, KktResiduals};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BranchingRule {
    /// Branch on the binary farthest from integrality, lowest index on ties.
    #[default]
    MostFractional,
    /// Branch on the first fractional binary.
    FirstFractional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub integer_tol: f64,
    pub node_limit: usize,
    /// Wall-clock budget for branch-and-bound in seconds.
    pub time_limit: Option<f64>,
    pub branching: BranchingRule,
    /// Emit one log line per node through the `log` facade.
    pub verbose: bool,
    pub max_iter: u32,
    /// Gap and feasibility tolerance of the interior-point engine.
    pub ipm_tol: f64,
    /// Pass-through to the interior-point engine; only used to perturb solves in checks.
    pub equilibrate: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            feas_tol: 1e-6,
            gap_tol: 1e-6,
            integer_tol: 1e-6,
            node_limit: 20_000,
            time_limit: None,
            branching: BranchingRule::MostFractional,
            verbose: false,
            max_iter: 400,
            ipm_tol: 1e-8,
            equilibrate: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [
            ("feas_tol", self.feas_tol),
            ("gap_tol", self.gap_tol),
            ("integer_tol", self.integer_tol),
            ("ipm_tol", self.ipm_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(crate::Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.node_limit == 0 {
            return Err(crate::Error::Config("node_limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    ToleranceLimit,
}

/// Primal/dual point returned by [`solve_convex`].
///
/// Dual sign convention: for a row written as `g(x) ≥ 0` (a `≥` row is `a·x − r`, a `≤` row is
/// `r − a·x`) the multiplier is nonnegative and `∇f = Σ y ∇g`. Equality rows use the same
/// orientation as `≥`. `bound_duals[j]` is the lower-bound multiplier minus the upper-bound one.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionPoint {
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    pub bound_duals: Vec<f64>,
    /// Conic multiplier `(z₀, z₁, …)` per cone, with `∇f = z₀∇t + Σ zᵢ∇vᵢ` for `‖v‖ ≤ t`.
    pub cone_duals: Vec<Vec<f64>>,
    pub objective: f64,
    pub status: SolveStatus,
    pub residuals: KktResiduals,
}

impl SolutionPoint {
    pub fn value(&self, v: crate::program::VarId) -> f64 {
        self.primal[v.0]
    }

    pub fn dual(&self, r: crate::program::RowId) -> f64 {
        self.duals[r.0]
    }
}
