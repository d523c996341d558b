use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dro::GroundMetric;
use crate::error::{Error, Result};
use crate::solver::SolverSettings;

/// How the individual violation rates are chosen for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioMode {
    /// Every rate at `eps_joint / N_MG` (C1).
    BonferroniBound,
    /// Every rate at `eps_joint` (C2).
    JointBound,
    /// Rates tuned by Bayesian optimization (C3).
    Bayesian,
    /// Reserve-delivery regulation dropped altogether.
    NoRegulation,
}

impl ScenarioMode {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioMode::BonferroniBound => "c1",
            ScenarioMode::JointBound => "c2",
            ScenarioMode::Bayesian => "c3",
            ScenarioMode::NoRegulation => "none",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "c1" | "bonferroni-bound" => ScenarioMode::BonferroniBound,
            "c2" | "joint-bound" => ScenarioMode::JointBound,
            "c3" | "bayesian" => ScenarioMode::Bayesian,
            "none" | "no-regulation" => ScenarioMode::NoRegulation,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonSearch {
    /// One rate shared by all microgrids.
    TiedScalar,
    /// One rate per microgrid.
    PerPlayer,
}

/// Leader objective used in the single-level model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeaderObjective {
    /// Generation cost plus every microgrid's own cost excluding market payments.
    SystemCost,
    /// The operator's procurement cost, with bilinear payments replaced through strong duality.
    OperatorCost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Wasserstein radius ν.
    pub radius: f64,
    /// Target joint violation rate ε^jot.
    pub eps_joint: f64,
    /// Largest tolerated undelivered reserve per contract, MWh.
    pub r_fup: f64,
    /// Expected number of periods; checked against the samples and the case.
    pub horizon: usize,
    pub n_train: usize,
    pub n_oos: usize,
    /// Bayesian iterations after the initial design.
    pub n_iter: usize,
    pub n_init: usize,
    /// Grid points of the grid-search baseline.
    pub n_grid: usize,
    /// Acceptance threshold on |ε^e − ε^jot|.
    pub stop_tol: f64,
    pub big_m: f64,
    pub price_cap: f64,
    pub mode: ScenarioMode,
    pub search: EpsilonSearch,
    pub seed: u64,
    pub ground_metric: GroundMetric,
    pub leader_objective: LeaderObjective,
    /// Count reserve schedules in nodal injections for the line-flow limits.
    pub reserve_in_injections: bool,
    /// Spread of synthetic samples when no sample file is given.
    pub synthetic_spread: f64,
    pub solver: SolverSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            radius: 0.035,
            eps_joint: 0.2,
            r_fup: 1.5,
            horizon: 4,
            n_train: 50,
            n_oos: 100,
            n_iter: 20,
            n_init: 4,
            n_grid: 20,
            stop_tol: 0.05,
            big_m: 1e4,
            price_cap: 200.0,
            mode: ScenarioMode::Bayesian,
            search: EpsilonSearch::TiedScalar,
            seed: 7,
            ground_metric: GroundMetric::LInf,
            leader_objective: LeaderObjective::SystemCost,
            reserve_in_injections: true,
            synthetic_spread: 0.2,
            solver: SolverSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be nonnegative, got {}", self.radius));
        }
        if !(self.eps_joint > 0.0 && self.eps_joint < 1.0) {
            return bad(format!("eps_joint must lie in (0, 1), got {}", self.eps_joint));
        }
        if !(self.r_fup >= 0.0 && self.r_fup.is_finite()) {
            return bad(format!("r_fup must be nonnegative, got {}", self.r_fup));
        }
        if self.horizon == 0 || self.n_train == 0 {
            return bad("horizon and n_train must be at least 1".into());
        }
        if self.n_oos == 0 || self.n_iter == 0 || self.n_grid == 0 {
            return bad("n_oos, n_iter and n_grid must be at least 1".into());
        }
        if self.n_init == 0 {
            return bad("n_init must be at least 1".into());
        }
        if !(self.big_m > 0.0 && self.big_m.is_finite()) {
            return bad(format!("big_m must be positive, got {}", self.big_m));
        }
        if !(self.price_cap > 0.0 && self.price_cap < self.big_m) {
            return bad("price_cap must be positive and below big_m".into());
        }
        if !(self.stop_tol > 0.0) {
            return bad("stop_tol must be positive".into());
        }
        if !(self.synthetic_spread >= 0.0) {
            return bad("synthetic_spread must be nonnegative".into());
        }
        self.solver.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c =
            ScenarioConfig::from_toml_str("radius = 0.01\nmode = \"joint-bound\"\n[solver]\ngap_tol = 1e-5\n").unwrap();
        assert_eq!(c.radius, 0.01);
        assert_eq!(c.mode, ScenarioMode::JointBound);
        assert_eq!(c.solver.gap_tol, 1e-5);
        assert_eq!(c.eps_joint, 0.2);
    }

    #[test]
    fn invariants_enforced() {
        assert!(ScenarioConfig::from_toml_str("eps_joint = 1.0").is_err());
        assert!(ScenarioConfig::from_toml_str("n_oos = 0").is_err());
        assert!(ScenarioConfig::from_toml_str("big_m = -1.0").is_err());
        assert!(ScenarioConfig::from_toml_str("typo_field = 3").is_err());
    }

    #[test]
    fn mode_labels() {
        for m in [
            ScenarioMode::BonferroniBound,
            ScenarioMode::JointBound,
            ScenarioMode::Bayesian,
            ScenarioMode::NoRegulation,
        ] {
            assert_eq!(ScenarioMode::from_label(m.label()), Some(m));
        }
    }
}
