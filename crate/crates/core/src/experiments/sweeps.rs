use std::path::Path;

use crate::data::{write_results, ErrorSampleMatrix, ResultTable, ScenarioConfig, ScenarioMode};
use crate::dro::{bonferroni_bounds, grid_spacing};
use crate::error::Result;

use super::{quantile, Experiment, ExperimentResult};

#[derive(Clone, Debug, PartialEq)]
pub struct RadiusSweepRow {
    pub radius: f64,
    pub regulated: bool,
    pub eps_e: f64,
    /// Mean of the positive part of the total undelivered energy per test.
    pub mean_shortfall: f64,
    pub q20: f64,
    pub q80: f64,
    pub reserve_bid: f64,
}

impl RadiusSweepRow {
    fn from_result(r: &ExperimentResult) -> Self {
        let under = r.run.oos.total_under();
        RadiusSweepRow {
            radius: r.radius,
            regulated: r.mode != ScenarioMode::NoRegulation,
            eps_e: r.eps_e(),
            mean_shortfall: under.iter().map(|u| u.max(0.0)).sum::<f64>() / under.len() as f64,
            q20: quantile(&under, 0.2),
            q80: quantile(&under, 0.8),
            reserve_bid: r.run.summary.reserve_bid,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RadiusSweep {
    pub results: Vec<ExperimentResult>,
    pub benchmark: ExperimentResult,
}

impl RadiusSweep {
    /// One row per radius, then the unregulated benchmark.
    pub fn rows(&self) -> Vec<RadiusSweepRow> {
        self.results
            .iter()
            .chain(std::iter::once(&self.benchmark))
            .map(RadiusSweepRow::from_result)
            .collect()
    }

    pub fn table(&self) -> ResultTable {
        let mut t = ResultTable::new([
            "radius",
            "regulated",
            "eps_e",
            "mean_shortfall",
            "q20_under",
            "q80_under",
            "reserve_bid",
        ]);
        for r in self.rows() {
            t.push(vec![
                r.radius,
                r.regulated as u8 as f64,
                r.eps_e,
                r.mean_shortfall,
                r.q20,
                r.q80,
                r.reserve_bid,
            ])
            .expect("row width matches");
        }
        t
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_results(&self.table(), path)
    }
}

/// Runs the configured mode at every radius, plus one unregulated run.
pub fn radius_sweep(exp: &Experiment, radii: &[f64]) -> Result<RadiusSweep> {
    let mut results = Vec::with_capacity(radii.len());
    for &nu in radii {
        let x = exp.with_config(ScenarioConfig {
            radius: nu,
            ..exp.config.clone()
        })?;
        results.push(x.run()?);
    }
    let benchmark = exp.run_mode(ScenarioMode::NoRegulation)?;
    Ok(RadiusSweep { results, benchmark })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlayerSweepRow {
    pub players: usize,
    pub seed: u64,
    /// Mean tuned individual rate.
    pub eps_ind: f64,
    pub eps_e: f64,
    pub h: f64,
    pub solves: usize,
    pub stopped_early: bool,
}

/// Tunes the rates for every player count and seed. The seed restarts the tuner's design;
/// `samples` supplies the error rows for a seed, so a caller may also redraw the history.
pub fn player_sweep(
    exp: &Experiment,
    samples: impl Fn(u64) -> Result<ErrorSampleMatrix>,
    counts: &[usize],
    seeds: &[u64],
) -> Result<Vec<PlayerSweepRow>> {
    let mut rows = Vec::new();
    for &k in counts {
        let case = exp.case.with_players(k)?;
        for &seed in seeds {
            let cfg = ScenarioConfig {
                seed,
                ..exp.config.clone()
            };
            let x = Experiment::new(case.clone(), &samples(seed)?, cfg)?;
            let r = x.run_mode(ScenarioMode::Bayesian)?;
            let tuner = r.tuner.as_ref().expect("bayesian mode tunes");
            rows.push(PlayerSweepRow {
                players: k,
                seed,
                eps_ind: r.mean_eps_ind(),
                eps_e: r.eps_e(),
                h: tuner.best_h,
                solves: r.solves,
                stopped_early: tuner.stopped_early,
            });
        }
    }
    Ok(rows)
}

/// Seed-averaged `(players, mean tuned rate, mean joint rate)` in order of first appearance.
pub fn player_sweep_summary(rows: &[PlayerSweepRow]) -> Vec<(usize, f64, f64)> {
    let mut counts: Vec<usize> = Vec::new();
    for r in rows {
        if !counts.contains(&r.players) {
            counts.push(r.players);
        }
    }
    counts
        .into_iter()
        .map(|k| {
            let sel: Vec<&PlayerSweepRow> = rows.iter().filter(|r| r.players == k).collect();
            let n = sel.len() as f64;
            (
                k,
                sel.iter().map(|r| r.eps_ind).sum::<f64>() / n,
                sel.iter().map(|r| r.eps_e).sum::<f64>() / n,
            )
        })
        .collect()
}

pub fn player_sweep_table(rows: &[PlayerSweepRow]) -> ResultTable {
    let mut t = ResultTable::new(["players", "seed", "eps_ind", "eps_e", "h", "solves", "stopped_early"]);
    for r in rows {
        t.push(vec![
            r.players as f64,
            r.seed as f64,
            r.eps_ind,
            r.eps_e,
            r.h,
            r.solves as f64,
            r.stopped_early as u8 as f64,
        ])
        .expect("row width matches");
    }
    t
}

/// Evenly spaced tied-rate search over the Bonferroni interval.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSearch {
    pub spacing: f64,
    /// `(ε^ind, ε^e, |ε^e − ε^jot|)` per grid point.
    pub points: Vec<(f64, f64, f64)>,
    pub best: usize,
    pub solves: usize,
}

impl GridSearch {
    pub fn best_eps(&self) -> f64 {
        self.points[self.best].0
    }

    pub fn best_h(&self) -> f64 {
        self.points[self.best].2
    }

    pub fn table(&self) -> ResultTable {
        let mut t = ResultTable::new(["eps_ind", "eps_e", "h", "best"]);
        for (k, &(e, ee, h)) in self.points.iter().enumerate() {
            t.push(vec![e, ee, h, (k == self.best) as u8 as f64])
                .expect("row width matches");
        }
        t
    }
}

/// Solves the market at `n_grid` tied rates from `ε^jot/N` to `ε^jot` and keeps the point
/// closest to the target (the first one on ties).
pub fn grid_search(exp: &Experiment) -> Result<GridSearch> {
    let n = exp.n_players();
    let cfg = &exp.config;
    let (lo, _) = bonferroni_bounds(cfg.eps_joint, n)?;
    let spacing = grid_spacing(cfg.eps_joint, n, cfg.n_grid)?;
    let mut points = Vec::with_capacity(cfg.n_grid);
    for k in 0..cfg.n_grid {
        let e = lo + k as f64 * spacing;
        let run = exp.solve(Some(vec![e; n]))?;
        let ee = run.oos.eps_e;
        points.push((e, ee, (ee - cfg.eps_joint).abs()));
    }
    let best = (0..points.len())
        .min_by(|&a, &b| points[a].2.total_cmp(&points[b].2).then(a.cmp(&b)))
        .expect("at least one grid point");
    Ok(GridSearch {
        spacing,
        points,
        best,
        solves: cfg.n_grid,
    })
}
