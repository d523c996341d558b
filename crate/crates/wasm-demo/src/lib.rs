//! Browser bindings: the worst-case shortfall cost over a radius range, the tuner's
//! surrogate on a handful of observations, and one market solve on the desk case.

use wasm_bindgen::prelude::*;

use resgame_core::bayes::{gp_fit, GpSettings, NoiseModel};
use resgame_core::data::{generate_synthetic_samples, ScenarioConfig};
use resgame_core::dro::{AmbiguitySet, GroundMetric};
use resgame_core::experiments::Experiment;
use resgame_core::fixtures::{desk, desk_config, desk_samples};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Worst-case expected shortfall cost `Δt V sup E[ζ·R]` of fixed hourly bids `bids` at
/// `n` log-spaced radii between `10^log_lo` and `10^log_hi`. Returns the radii, then the
/// cost under the max-deviation metric, then under the Euclidean metric.
#[wasm_bindgen(js_name = penaltyCurve)]
pub fn penalty_curve(
    bids: Vec<f64>,
    spread: f64,
    seed: u64,
    voll: f64,
    log_lo: f64,
    log_hi: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    let dt = 0.5;
    let samples = generate_synthetic_samples(seed, 50, bids.len(), spread).map_err(js_err)?;
    let a: Vec<f64> = bids.iter().map(|r| dt * voll * r).collect();
    let n = n.max(2);
    let radii: Vec<f64> = (0..n)
        .map(|k| 10f64.powf(log_lo + (log_hi - log_lo) * k as f64 / (n - 1) as f64))
        .collect();
    let mut out = radii.clone();
    for metric in [GroundMetric::LInf, GroundMetric::Euclidean] {
        for &nu in &radii {
            let set = AmbiguitySet::new(samples.clone(), nu, metric).map_err(js_err)?;
            out.push(set.worst_case_linear(&a));
        }
    }
    Ok(out)
}

/// Surrogate fitted to observations `(xs[k], ys[k])` on `[lo, hi]`, evaluated at `n` grid
/// points. Returns the grid, posterior means, posterior standard deviations and expected
/// improvement over the smallest observation, `n` values each. With `fit_noise` the noise
/// variance is fitted as in the tuner, otherwise the observations are taken as exact.
#[wasm_bindgen(js_name = gpPosterior)]
pub fn gp_posterior(
    xs: Vec<f64>,
    ys: Vec<f64>,
    lo: f64,
    hi: f64,
    n: usize,
    fit_noise: bool,
) -> Result<Vec<f64>, JsError> {
    if !(hi > lo) {
        return Err(JsError::new("empty interval"));
    }
    let inputs: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let settings = if fit_noise {
        GpSettings::default()
    } else {
        GpSettings {
            noise: NoiseModel::Fixed(1e-8),
            ..GpSettings::default()
        }
    };
    let model = gp_fit(&inputs, &ys, &[(lo, hi)], &settings).map_err(js_err)?;
    let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let n = n.max(2);
    let grid: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let mut mean = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    let mut ei = Vec::with_capacity(n);
    for &x in &grid {
        let (m, s) = model.posterior(&[x]);
        mean.push(m);
        sd.push(s);
        ei.push(model.expected_improvement(&[x], best));
    }
    Ok([grid, mean, sd, ei].concat())
}

#[wasm_bindgen]
pub struct GameOutcome {
    eps_e: f64,
    status: String,
    nodes: usize,
    reserve: Vec<f64>,
    energy: Vec<f64>,
    operator_cost: f64,
    shortfall: Vec<f64>,
}

#[wasm_bindgen]
impl GameOutcome {
    /// Share of held-out tests in which any microgrid missed its delivery tolerance.
    #[wasm_bindgen(getter, js_name = jointRate)]
    pub fn joint_rate(&self) -> f64 {
        self.eps_e
    }

    #[wasm_bindgen(getter)]
    pub fn status(&self) -> String {
        self.status.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Reserve sold per microgrid over the horizon, MWh.
    #[wasm_bindgen(getter)]
    pub fn reserve(&self) -> Vec<f64> {
        self.reserve.clone()
    }

    /// Flexible output per microgrid over the horizon, MWh.
    #[wasm_bindgen(getter)]
    pub fn energy(&self) -> Vec<f64> {
        self.energy.clone()
    }

    #[wasm_bindgen(getter, js_name = operatorCost)]
    pub fn operator_cost(&self) -> f64 {
        self.operator_cost
    }

    /// Per-microgrid share of tests missed.
    #[wasm_bindgen(getter)]
    pub fn shortfall(&self) -> Vec<f64> {
        self.shortfall.clone()
    }
}

/// Solves the desk market with `players` microgrids at a shared violation rate `eps`
/// (none when `eps` is not positive) and tests the reserve bids on held-out samples.
#[wasm_bindgen(js_name = solveDesk)]
pub fn solve_desk(eps: f64, radius: f64, players: usize, seed: u64) -> Result<GameOutcome, JsError> {
    let cfg = ScenarioConfig {
        radius,
        seed,
        ..desk_config()
    };
    let case = desk().with_players(players).map_err(js_err)?;
    let exp = Experiment::new(case, &desk_samples(seed, &cfg).map_err(js_err)?, cfg).map_err(js_err)?;
    let rates = (eps > 0.0).then(|| vec![eps; players]);
    let run = exp.solve(rates).map_err(js_err)?;
    let dt = exp.train.delta_t;
    let eq = &run.equilibrium;
    Ok(GameOutcome {
        eps_e: run.oos.eps_e,
        status: format!("{:?}", run.status),
        nodes: run.nodes,
        reserve: eq.rup.iter().map(|r| dt * r.iter().sum::<f64>()).collect(),
        energy: eq.ps.iter().map(|r| dt * r.iter().sum::<f64>()).collect(),
        operator_cost: eq.operator_cost,
        shortfall: run.oos.individual.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_grows_with_radius() {
        let v = penalty_curve(vec![1.0, 2.0, 0.5, 1.0], 0.3, 3, 1.0, -4.0, -1.0, 5).unwrap();
        assert_eq!(v.len(), 15);
        for w in v[5..10].windows(2).chain(v[10..].windows(2)) {
            assert!(w[1] >= w[0]);
        }
        // the max-deviation ball prices the sum of magnitudes, never less than the Euclidean norm
        assert!(v[9] >= v[14]);
    }

    #[test]
    fn posterior_interpolates_exact_observations() {
        let xs = vec![0.05, 0.1, 0.15, 0.2];
        let ys = vec![0.12, 0.05, 0.02, 0.08];
        let v = gp_posterior(xs.clone(), ys.clone(), 0.05, 0.2, 4, false).unwrap();
        let (mean, sd, ei) = (&v[4..8], &v[8..12], &v[12..16]);
        for (m, y) in mean.iter().zip(&ys) {
            assert!((m - y).abs() < 1e-3, "{m} vs {y}");
        }
        assert!(sd.iter().all(|&s| s < 1e-2));
        assert!(ei.iter().all(|&e| e >= 0.0));
        // with fitted noise the mean may smooth, but stays within the data range
        let v = gp_posterior(xs, ys, 0.05, 0.2, 4, true).unwrap();
        assert!(v[4..8].iter().all(|m| (0.0..=0.12).contains(m)));
    }

    #[test]
    fn desk_game_reports_every_player() {
        let g = solve_desk(0.1, 1e-3, 3, 7).unwrap();
        assert_eq!(g.reserve().len(), 3);
        assert!((0.0..=1.0).contains(&g.joint_rate()));
        let free = solve_desk(0.0, 1e-3, 3, 7).unwrap();
        assert!(free.reserve().iter().sum::<f64>() >= g.reserve().iter().sum::<f64>() - 1e-6);
    }
}
