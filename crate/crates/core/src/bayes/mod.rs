//! Bayesian tuning of the individual violation rates against a target joint rate.

pub mod gp;
pub mod search;

use std::path::Path;

pub use gp::{expected_improvement, gp_fit, matern52, GpModel, GpSettings, NoiseModel};
pub use search::{clamp_to_box, halton, nelder_mead, scale_to_box, NelderMeadSettings};

use crate::data::{EpsilonSearch, ScenarioConfig};
use crate::dro::bonferroni_bounds;
use crate::error::{Error, Result};

/// Random candidates scored before polishing.
pub const N_CANDIDATES: usize = 512;
/// Best-scoring candidates polished by Nelder-Mead.
const N_POLISH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub iteration: usize,
    pub eps: Vec<f64>,
    /// Empirical joint violation rate.
    pub eps_e: f64,
    /// `|eps_e − eps_joint|`
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationLog {
    pub eps_joint: f64,
    pub rows: Vec<Observation>,
}

impl ObservationLog {
    pub fn new(eps_joint: f64) -> Self {
        ObservationLog {
            eps_joint,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, iteration: usize, eps: Vec<f64>, eps_e: f64) -> &Observation {
        let h = (eps_e - self.eps_joint).abs();
        self.rows.push(Observation {
            iteration,
            eps,
            eps_e,
            h,
        });
        self.rows.last().expect("just pushed")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row with the smallest `h`, earliest on ties.
    pub fn best(&self) -> Option<&Observation> {
        self.rows
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| a.h.total_cmp(&b.h).then(i.cmp(j)))
            .map(|(_, r)| r)
    }

    /// Best `h` after each evaluation.
    pub fn best_trace(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.rows
            .iter()
            .map(|r| {
                best = best.min(r.h);
                best
            })
            .collect()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.eps.clone()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.h).collect()
    }

    /// Columns `iteration, eps_0.., eps_e, h`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dim = self.rows.first().map_or(1, |r| r.eps.len());
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
        let mut header = vec!["iteration".to_string()];
        header.extend((0..dim).map(|d| format!("eps_{d}")));
        header.extend(["eps_e".to_string(), "h".to_string()]);
        w.write_record(&header).map_err(|e| Error::parse(path, e.to_string()))?;
        for r in &self.rows {
            let mut rec = vec![r.iteration.to_string()];
            rec.extend(r.eps.iter().map(|v| format!("{v:?}")));
            rec.push(format!("{:?}", r.eps_e));
            rec.push(format!("{:?}", r.h));
            w.write_record(&rec).map_err(|e| Error::parse(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, eps_joint: f64) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
        let header = r.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
        let dim = header.iter().filter(|h| h.starts_with("eps_") && *h != "eps_e").count();
        let mut log = ObservationLog::new(eps_joint);
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::parse(path, format!("row {}: bad value in column {}", line + 2, k + 1)))
            };
            let iteration = num(0)? as usize;
            let eps = (1..=dim).map(num).collect::<Result<Vec<_>>>()?;
            log.push(iteration, eps, num(dim + 1)?);
        }
        Ok(log)
    }
}

/// Maximizes expected improvement over `bounds`: scores [`N_CANDIDATES`] shifted Halton
/// points, polishes the best few with Nelder-Mead on the box-clamped function, and breaks
/// ties by the lexicographically smallest point.
pub fn propose_next(model: &GpModel, best_h: f64, bounds: &[(f64, f64)], seed: u64) -> Vec<f64> {
    let ei = |x: &[f64]| model.expected_improvement(&clamp_to_box(x, bounds), best_h);
    let mut pool: Vec<(Vec<f64>, f64)> = halton(N_CANDIDATES, bounds.len(), seed)
        .iter()
        .map(|u| {
            let x = scale_to_box(u, bounds);
            let v = ei(&x);
            (x, v)
        })
        .collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[b].1.total_cmp(&pool[a].1).then(lex(&pool[a].0, &pool[b].0)));
    let step: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.05 * (hi - lo)).collect();
    let polished: Vec<(Vec<f64>, f64)> = order
        .iter()
        .take(N_POLISH)
        .filter(|&&i| pool[i].1 > 0.0)
        .map(|&i| {
            let (x, _) = nelder_mead(
                |x| -ei(x),
                &pool[i].0,
                &step,
                NelderMeadSettings {
                    max_iter: 200,
                    f_tol: 1e-14,
                    x_tol: 1e-9 * step.iter().fold(0.0, |a: f64, b| a.max(*b)).max(1e-300),
                },
            );
            let x = clamp_to_box(&x, bounds);
            let v = ei(&x);
            (x, v)
        })
        .collect();
    pool.extend(polished);
    let top = pool.iter().map(|p| p.1).fold(0.0, f64::max);
    let tie = 1e-9 * top;
    pool.into_iter()
        .filter(|p| p.1 >= top - tie)
        .map(|p| p.0)
        .min_by(|a, b| lex(a, b))
        .expect("candidate pool is non-empty")
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

#[derive(Clone, Debug, PartialEq)]
pub struct TunerConfig {
    pub eps_joint: f64,
    /// Number of microgrids; sets the search box.
    pub n_players: usize,
    pub search: EpsilonSearch,
    pub n_init: usize,
    pub n_iter: usize,
    pub stop_tol: f64,
    pub seed: u64,
    pub gp: GpSettings,
}

impl TunerConfig {
    pub fn from_scenario(cfg: &ScenarioConfig, n_players: usize) -> Self {
        TunerConfig {
            eps_joint: cfg.eps_joint,
            n_players,
            search: cfg.search,
            n_init: cfg.n_init,
            n_iter: cfg.n_iter,
            stop_tol: cfg.stop_tol,
            seed: cfg.seed,
            gp: GpSettings {
                seed: cfg.seed,
                ..Default::default()
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self.search {
            EpsilonSearch::TiedScalar => 1,
            EpsilonSearch::PerPlayer => self.n_players,
        }
    }

    pub fn bounds(&self) -> Result<Vec<(f64, f64)>> {
        let b = bonferroni_bounds(self.eps_joint, self.n_players)?;
        Ok(vec![b; self.dim()])
    }

    /// Per-microgrid rates for a search point.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        match self.search {
            EpsilonSearch::TiedScalar => vec![x[0]; self.n_players],
            EpsilonSearch::PerPlayer => x.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TunerOutcome {
    /// Best search point (one entry in tied mode).
    pub best: Vec<f64>,
    pub best_h: f64,
    pub log: ObservationLog,
    pub stopped_early: bool,
    /// Set when the evaluator failed; the log holds every completed evaluation.
    pub aborted: Option<String>,
}

impl TunerOutcome {
    /// Number of evaluator calls that completed.
    pub fn evaluations(&self) -> usize {
        self.log.len()
    }
}

/// Runs the tuning loop: an initial design of `n_init` shifted Halton points, then up to
/// `n_iter` rounds of fit, propose, evaluate. Stops as soon as some `h ≤ stop_tol`.
/// `evaluate` maps a search point to the empirical joint rate.
pub fn run_tuner(mut evaluate: impl FnMut(&[f64]) -> Result<f64>, cfg: &TunerConfig) -> Result<TunerOutcome> {
    if cfg.n_init == 0 {
        return Err(Error::Config("n_init must be at least 1".into()));
    }
    let bounds = cfg.bounds()?;
    let mut log = ObservationLog::new(cfg.eps_joint);
    let finish = |log: ObservationLog, stopped_early: bool, aborted: Option<String>| {
        let (best, best_h) = log
            .best()
            .map(|b| (b.eps.clone(), b.h))
            .unwrap_or((Vec::new(), f64::INFINITY));
        Ok(TunerOutcome {
            best,
            best_h,
            log,
            stopped_early,
            aborted,
        })
    };
    let degenerate = bounds.iter().all(|(lo, hi)| hi <= lo);
    let design: Vec<Vec<f64>> = if degenerate {
        vec![bounds.iter().map(|b| b.0).collect()]
    } else {
        halton(cfg.n_init, bounds.len(), cfg.seed)
            .iter()
            .map(|u| scale_to_box(u, &bounds))
            .collect()
    };
    for x in design {
        match evaluate(&x) {
            Ok(e) => {
                if log.push(0, x, e).h <= cfg.stop_tol {
                    return finish(log, true, None);
                }
            }
            Err(err) => return finish(log, false, Some(err.to_string())),
        }
    }
    if degenerate {
        return finish(log, false, None);
    }
    for m in 1..=cfg.n_iter {
        let gp = gp_fit(
            &log.inputs(),
            &log.values(),
            &bounds,
            &GpSettings {
                seed: cfg.gp.seed.wrapping_add(m as u64),
                ..cfg.gp
            },
        )?;
        let best_h = log.best().expect("design evaluated").h;
        let x = propose_next(&gp, best_h, &bounds, cfg.seed.wrapping_add(1000 + m as u64));
        match evaluate(&x) {
            Ok(e) => {
                if log.push(m, x, e).h <= cfg.stop_tol {
                    return finish(log, true, None);
                }
            }
            Err(err) => return finish(log, false, Some(err.to_string())),
        }
    }
    finish(log, false, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_players: usize, search: EpsilonSearch, stop_tol: f64) -> TunerConfig {
        TunerConfig {
            eps_joint: 0.2,
            n_players,
            search,
            n_init: 4,
            n_iter: 20,
            stop_tol,
            seed: 7,
            gp: GpSettings::default(),
        }
    }

    fn exact_gp(xs: &[Vec<f64>], ys: &[f64], b: &[(f64, f64)]) -> GpModel {
        gp_fit(
            xs,
            ys,
            b,
            &GpSettings {
                noise: NoiseModel::Fixed(0.0),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn log_round_trips_and_tracks_best() {
        let mut log = ObservationLog::new(0.2);
        log.push(0, vec![0.05, 0.1], 0.3);
        log.push(1, vec![0.07, 0.08], 0.18);
        log.push(2, vec![0.2, 0.2], 0.5);
        assert_eq!(log.best_trace().len(), 3);
        assert!((log.best().unwrap().h - 0.02).abs() < 1e-15);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        log.write_csv(&p).unwrap();
        assert_eq!(ObservationLog::read_csv(&p, 0.2).unwrap(), log);
    }

    #[test]
    fn single_center_observation_sends_proposal_to_boundary() {
        let b = vec![(0.05, 0.2), (0.05, 0.2)];
        let m = exact_gp(&[vec![0.125, 0.125]], &[0.1], &b);
        let x = propose_next(&m, 0.1, &b, 3);
        let on_edge = x
            .iter()
            .zip(&b)
            .any(|(v, (lo, hi))| (v - lo).abs() < 1e-9 || (v - hi).abs() < 1e-9);
        assert!(on_edge, "{x:?}");
    }

    #[test]
    fn flat_zero_ei_takes_lexicographic_minimum() {
        let b = vec![(0.05, 0.2)];
        let xs: Vec<Vec<f64>> = (0..4).map(|i| vec![0.05 + 0.05 * i as f64]).collect();
        let m = exact_gp(&xs, &[0.1; 4], &b);
        // the best observed value is far below the flat posterior: no improvement anywhere
        let x = propose_next(&m, -1.0, &b, 1);
        let cands: Vec<f64> = halton(N_CANDIDATES, 1, 1)
            .iter()
            .map(|u| scale_to_box(u, &b)[0])
            .collect();
        let lowest = cands.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(x, vec![lowest]);
    }

    #[test]
    fn one_dimensional_proposal_matches_dense_grid() {
        let b = vec![(0.05, 0.2)];
        let xs = vec![vec![0.06], vec![0.11], vec![0.13], vec![0.19]];
        let ys = [0.12, 0.03, 0.02, 0.1];
        let m = exact_gp(&xs, &ys, &b);
        let best = 0.02;
        let x = propose_next(&m, best, &b, 5);
        let n = 10_001;
        let (mut arg, mut top) = (0.0, -1.0);
        for k in 0..n {
            let e = 0.05 + 0.15 * k as f64 / (n - 1) as f64;
            let v = m.expected_improvement(&[e], best);
            if v > top {
                top = v;
                arg = e;
            }
        }
        assert!((x[0] - arg).abs() <= 0.15 / (n - 1) as f64 + 1e-9, "{} vs {arg}", x[0]);
    }

    #[test]
    fn constant_evaluator_stops_after_first_evaluation() {
        let out = run_tuner(|_| Ok(0.2), &cfg(4, EpsilonSearch::TiedScalar, 0.05)).unwrap();
        assert_eq!(out.evaluations(), 1);
        assert!(out.stopped_early);
        assert_eq!(out.best_h, 0.0);
    }

    #[test]
    fn recovers_analytic_optimum() {
        // ε^e = min(1, Σε) with four tied players: optimum at 4ε = 0.2
        let c = cfg(4, EpsilonSearch::TiedScalar, 1e-3);
        let out = run_tuner(|x| Ok((4.0 * x[0]).min(1.0)), &c).unwrap();
        assert!((out.best[0] - 0.05).abs() < 0.01, "{out:?}");
        assert!(out
            .log
            .rows
            .iter()
            .all(|r| r.eps[0] >= 0.05 - 1e-12 && r.eps[0] <= 0.2 + 1e-12));
        let trace = out.log.best_trace();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        for r in &out.log.rows {
            assert_eq!(r.h, (r.eps_e - 0.2).abs());
        }
    }

    #[test]
    fn per_player_search_and_determinism() {
        // ε^e = min(1, ε1 + ε2) on [0.1, 0.2]²: the target is hit only at the lower corner
        let c = cfg(2, EpsilonSearch::PerPlayer, 0.01);
        let f = |x: &[f64]| Ok((x[0] + x[1]).min(1.0));
        let a = run_tuner(f, &c).unwrap();
        let b = run_tuner(f, &c).unwrap();
        assert_eq!(a, b);
        assert!(a.log.len() <= c.n_init + c.n_iter);
        assert!(a.best_h < 0.05, "{a:?}");
    }

    #[test]
    fn failure_keeps_partial_log() {
        let mut calls = 0;
        let out = run_tuner(
            |_| {
                calls += 1;
                if calls == 3 {
                    Err(Error::Solver("boom".into()))
                } else {
                    Ok(0.9)
                }
            },
            &cfg(3, EpsilonSearch::TiedScalar, 0.05),
        )
        .unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(out.aborted.as_deref().unwrap().contains("boom"));
    }

    #[test]
    fn single_player_box_collapses() {
        let out = run_tuner(|x| Ok(x[0] * 0.5), &cfg(1, EpsilonSearch::TiedScalar, 0.05)).unwrap();
        assert_eq!(out.best, vec![0.2]);
        assert_eq!(out.evaluations(), 1);
    }
}
