//! Scenario runs: market solves at given violation rates, out-of-sample delivery tests,
//! the tuning loop, sweeps, and written artifacts.

mod oos;
mod plot;
mod sweeps;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bayes::{run_tuner, TunerConfig, TunerOutcome};
use crate::data::{generate_synthetic_samples, ErrorSampleMatrix, NetworkCase, ScenarioConfig, ScenarioMode};
use crate::dro::bonferroni_bounds;
use crate::error::{Error, Result};
use crate::market::{solve_market, Equilibrium, MarketParams};
use crate::solver::BnbStatus;

pub use oos::{out_of_sample, quantile, sample_overlap, OosReport};
pub use plot::{line_chart, render_report, Chart, Series};
pub use sweeps::{
    grid_search, player_sweep, player_sweep_summary, player_sweep_table, radius_sweep, GridSearch, PlayerSweepRow,
    RadiusSweep, RadiusSweepRow,
};

/// Synthetic error rows for `case`: enough for the training and test blocks of `cfg`, drawn
/// from `cfg.seed` and labelled with the case's periods.
pub fn synthetic_samples(case: &NetworkCase, cfg: &ScenarioConfig) -> Result<ErrorSampleMatrix> {
    let mut s = generate_synthetic_samples(
        cfg.seed,
        cfg.n_train + cfg.n_oos,
        case.n_periods(),
        cfg.synthetic_spread,
    )?;
    s.timestamps = case.period_labels.clone();
    Ok(s)
}

/// Case, configuration and the train/test partition of the error samples.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub case: NetworkCase,
    pub config: ScenarioConfig,
    pub train: ErrorSampleMatrix,
    pub test: ErrorSampleMatrix,
}

impl Experiment {
    /// Takes the first `n_train` rows for the ambiguity set and the next `n_oos` for testing.
    pub fn new(case: NetworkCase, samples: &ErrorSampleMatrix, config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        case.validate()?;
        if samples.n_periods() != case.n_periods() {
            return Err(Error::Dimension(format!(
                "samples cover {} periods, case has {}",
                samples.n_periods(),
                case.n_periods()
            )));
        }
        if config.horizon != case.n_periods() {
            log::warn!(
                "config horizon {} differs from the case's {} periods",
                config.horizon,
                case.n_periods()
            );
        }
        let (train, test) = samples.split(config.n_train, config.n_oos)?;
        let shared = sample_overlap(&train, &test);
        if shared > 0 {
            log::warn!("{shared} test rows also appear in the training rows");
        }
        Ok(Experiment {
            case,
            config,
            train,
            test,
        })
    }

    pub fn n_players(&self) -> usize {
        self.case.microgrids.len()
    }

    /// Same experiment with only the first `k` microgrids as players.
    pub fn with_players(&self, k: usize) -> Result<Self> {
        Ok(Experiment {
            case: self.case.with_players(k)?,
            ..self.clone()
        })
    }

    pub fn with_config(&self, config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        Ok(Experiment { config, ..self.clone() })
    }

    /// Solves the single-level model at `eps_ind` (no delivery constraints when `None`) and
    /// tests the resulting reserve bids on the held-out rows.
    pub fn solve(&self, eps_ind: Option<Vec<f64>>) -> Result<MarketRun> {
        let dt = self.train.delta_t;
        let params = MarketParams::from_config(&self.config, dt, eps_ind.clone());
        let sol = solve_market(&self.case, &self.train, &params, &self.config.solver)?;
        let r = &sol.result;
        let eq = sol.equilibrium.ok_or_else(|| {
            Error::Solver(format!(
                "no market equilibrium found ({:?} after {} nodes)",
                r.status, r.nodes
            ))
        })?;
        let oos = out_of_sample(&eq.rup, &self.test, self.config.r_fup, dt)?;
        Ok(MarketRun {
            eps_ind,
            status: r.status,
            nodes: r.nodes,
            gap: r.gap,
            summary: MarketSummary::new(&eq, dt),
            equilibrium: eq,
            oos,
        })
    }

    /// Rates prescribed by `mode` for the bound modes; `None` for the others.
    pub fn fixed_rates(&self, mode: ScenarioMode) -> Result<Option<Vec<f64>>> {
        let n = self.n_players();
        let (lo, hi) = bonferroni_bounds(self.config.eps_joint, n)?;
        Ok(match mode {
            ScenarioMode::BonferroniBound => Some(vec![lo; n]),
            ScenarioMode::JointBound => Some(vec![hi; n]),
            ScenarioMode::Bayesian | ScenarioMode::NoRegulation => None,
        })
    }

    /// One scenario in the configured mode.
    pub fn run(&self) -> Result<ExperimentResult> {
        self.run_mode(self.config.mode)
    }

    pub fn run_mode(&self, mode: ScenarioMode) -> Result<ExperimentResult> {
        let started = std::time::Instant::now();
        let (run, tuner, solves) = match mode {
            ScenarioMode::BonferroniBound | ScenarioMode::JointBound => (self.solve(self.fixed_rates(mode)?)?, None, 1),
            ScenarioMode::NoRegulation => (self.solve(None)?, None, 1),
            ScenarioMode::Bayesian => {
                let (run, outcome) = self.tune()?;
                let n = outcome.evaluations();
                (run, Some(outcome), n)
            }
        };
        Ok(ExperimentResult {
            mode,
            players: self.n_players(),
            radius: self.config.radius,
            seed: self.config.seed,
            run,
            tuner,
            solves,
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Runs the tuning loop with a market solve plus out-of-sample test per evaluation and
    /// returns the run at the best point. Fails if no evaluation completed.
    pub fn tune(&self) -> Result<(MarketRun, TunerOutcome)> {
        let tc = TunerConfig::from_scenario(&self.config, self.n_players());
        let mut runs: Vec<MarketRun> = Vec::new();
        let outcome = run_tuner(
            |x| {
                let run = self.solve(Some(tc.expand(x)))?;
                let e = run.oos.eps_e;
                runs.push(run);
                Ok(e)
            },
            &tc,
        )?;
        if let Some(msg) = &outcome.aborted {
            log::warn!("tuning stopped after {} evaluations: {msg}", outcome.evaluations());
        }
        let best = outcome
            .log
            .rows
            .iter()
            .position(|r| r.eps == outcome.best)
            .ok_or_else(|| {
                Error::Solver(
                    outcome
                        .aborted
                        .clone()
                        .unwrap_or_else(|| "tuning produced no point".into()),
                )
            })?;
        Ok((runs.swap_remove(best), outcome))
    }
}

/// Totals of a market outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarketSummary {
    pub operator_cost: f64,
    pub system_cost: f64,
    pub generation_cost: f64,
    pub microgrid_cost: Vec<f64>,
    /// Flexible output of all microgrids, MWh.
    pub energy_bid: f64,
    /// Reserve bids of all microgrids, MWh.
    pub reserve_bid: f64,
    /// Reserve bid per microgrid, MWh.
    pub reserve_bid_by_microgrid: Vec<f64>,
}

impl MarketSummary {
    pub fn new(eq: &Equilibrium, dt: f64) -> Self {
        let by_mg: Vec<f64> = (0..eq.rup.len()).map(|i| dt * eq.total_reserve_bid(i)).collect();
        MarketSummary {
            operator_cost: eq.operator_cost,
            system_cost: eq.system_cost,
            generation_cost: eq.generation_cost,
            microgrid_cost: eq.microgrid_cost.clone(),
            energy_bid: dt * eq.ps.iter().flatten().sum::<f64>(),
            reserve_bid: by_mg.iter().sum(),
            reserve_bid_by_microgrid: by_mg,
        }
    }
}

/// A market solve and its delivery test.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketRun {
    pub eps_ind: Option<Vec<f64>>,
    pub status: BnbStatus,
    pub nodes: usize,
    pub gap: f64,
    pub summary: MarketSummary,
    pub equilibrium: Equilibrium,
    pub oos: OosReport,
}

impl MarketRun {
    /// Optimal, or stopped at a limit with a finite gap on record.
    pub fn acceptable(&self) -> bool {
        match self.status {
            BnbStatus::Optimal => true,
            BnbStatus::NodeLimit | BnbStatus::TimeLimit => self.gap.is_finite(),
            BnbStatus::Infeasible => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub mode: ScenarioMode,
    pub players: usize,
    pub radius: f64,
    pub seed: u64,
    pub run: MarketRun,
    pub tuner: Option<TunerOutcome>,
    /// Market solves performed.
    pub solves: usize,
    /// Wall-clock time; reported on the console, never written to artifacts.
    pub seconds: f64,
}

#[derive(Serialize)]
struct ResultRecord<'a> {
    scenario: &'a str,
    players: usize,
    radius: f64,
    seed: u64,
    eps_ind: Vec<f64>,
    eps_e: f64,
    violations: usize,
    n_tests: usize,
    individual_rates: &'a [f64],
    summary: &'a MarketSummary,
    solver: SolverRecord,
}

#[derive(Serialize)]
struct SolverRecord {
    status: String,
    nodes: usize,
    gap: f64,
    solves: usize,
    stopped_early: bool,
}

impl ExperimentResult {
    pub fn eps_e(&self) -> f64 {
        self.run.oos.eps_e
    }

    pub fn eps_ind(&self) -> Vec<f64> {
        self.run.eps_ind.clone().unwrap_or_default()
    }

    /// Mean of the rates in use; `NaN` without regulation.
    pub fn mean_eps_ind(&self) -> f64 {
        let e = self.eps_ind();
        if e.is_empty() {
            f64::NAN
        } else {
            e.iter().sum::<f64>() / e.len() as f64
        }
    }

    /// `result.toml`, `bids.csv`, `oos.csv` and, after tuning, `tuner.csv` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rec = ResultRecord {
            scenario: self.mode.label(),
            players: self.players,
            radius: self.radius,
            seed: self.seed,
            eps_ind: self.eps_ind(),
            eps_e: self.eps_e(),
            violations: self.run.oos.violations,
            n_tests: self.run.oos.n_tests(),
            individual_rates: &self.run.oos.individual,
            summary: &self.run.summary,
            solver: SolverRecord {
                status: format!("{:?}", self.run.status),
                nodes: self.run.nodes,
                gap: self.run.gap,
                solves: self.solves,
                stopped_early: self.tuner.as_ref().is_some_and(|t| t.stopped_early),
            },
        };
        let toml = toml::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::new();
        let p = dir.join("result.toml");
        write_text(&p, &toml)?;
        out.push(p);
        let p = dir.join("bids.csv");
        write_text(&p, &bids_csv(&self.run.equilibrium))?;
        out.push(p);
        let p = dir.join("oos.csv");
        write_text(&p, &oos_csv(&self.run.oos))?;
        out.push(p);
        if let Some(t) = &self.tuner {
            let p = dir.join("tuner.csv");
            t.log.write_csv(&p)?;
            out.push(p);
        }
        Ok(out)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn bids_csv(eq: &Equilibrium) -> String {
    let mut s = String::from("microgrid,period,ps,pex,rup,price_e,price_r\n");
    for i in 0..eq.rup.len() {
        for t in 0..eq.rup[i].len() {
            let price = |p: &Vec<Vec<f64>>| p.get(i).map_or(f64::NAN, |r| r[t]);
            let _ = writeln!(
                s,
                "{i},{t},{:?},{:?},{:?},{:?},{:?}",
                eq.ps[i][t],
                eq.pex[i][t],
                eq.rup[i][t],
                price(&eq.price_e),
                price(&eq.price_r)
            );
        }
    }
    s
}

fn oos_csv(r: &OosReport) -> String {
    let nm = r.individual.len();
    let mut s = String::from("test");
    for i in 0..nm {
        let _ = write!(s, ",under_{i}");
    }
    s.push_str(",violated\n");
    for (k, (u, f)) in r.under.iter().zip(&r.flags).enumerate() {
        let _ = write!(s, "{k}");
        for v in u {
            let _ = write!(s, ",{v:?}");
        }
        let _ = writeln!(s, ",{}", f.iter().any(|&b| b) as u8);
    }
    s
}
