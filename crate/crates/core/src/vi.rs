//! Variational-inequality view of the market game: the game map, its Jacobian, the
//! equivalent convex potential problem, and cross-checks against the single-level model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ErrorSampleMatrix, NetworkCase};
use crate::error::{Error, Result};
use crate::market::{
    build_iso_model, build_microgrid_model, extract_equilibrium, solve_market, Equilibrium, IsoHandles, MarketParams,
    MicrogridHandles,
};
use crate::program::{ConicProgram, LinExpr, VarId};
use crate::solver::{solve_convex, BnbStatus, SolutionPoint, SolveStatus, SolverSettings};

/// Quantity agreement required by [`check_uniqueness`], MW.
pub const QUANTITY_TOL: f64 = 1e-4;

/// One player's cost `Σ q_ab x_a x_b + Σ c_a x_a` over layout indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlayerCost {
    pub name: String,
    /// Layout indices of the variables this player controls.
    pub vars: Vec<usize>,
    /// `(a, b, q)` with `a ≤ b`, meaning `q x_a x_b`.
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<(usize, f64)>,
}

impl PlayerCost {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.quadratic.iter().map(|&(a, b, q)| q * x[a] * x[b]).sum::<f64>()
            + self.linear.iter().map(|&(a, c)| c * x[a]).sum::<f64>()
    }
}

/// Stacked gradients of every player's cost with respect to its own strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct GameMap {
    pub labels: Vec<String>,
    /// Player index of each layout entry: 0 is the operator, `i + 1` microgrid `i`.
    pub owner: Vec<usize>,
    pub players: Vec<PlayerCost>,
    /// Assembled `∇F`; constant because every cost is at most quadratic.
    pub jacobian: DMatrix<f64>,
}

impl GameMap {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim());
        for (p, cost) in self.players.iter().enumerate() {
            for &(a, c) in &cost.linear {
                if self.owner[a] == p {
                    f[a] += c;
                }
            }
            for &(a, b, q) in &cost.quadratic {
                if self.owner[a] == p {
                    f[a] += q * x[b];
                }
                if self.owner[b] == p {
                    f[b] += q * x[a];
                }
            }
        }
        f
    }

    /// `max |∇F − ∇Fᵀ|`
    pub fn symmetry_defect(&self) -> f64 {
        let j = &self.jacobian;
        let mut worst: f64 = 0.0;
        for r in 0..j.nrows() {
            for c in 0..r {
                worst = worst.max((j[(r, c)] - j[(c, r)]).abs());
            }
        }
        worst
    }

    /// Central differences of [`GameMap::eval`], one column per perturbed coordinate.
    pub fn finite_difference_jacobian(&self, x: &[f64], h: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for k in 0..n {
            xp[k] = x[k] + h;
            let fp = self.eval(&xp);
            xp[k] = x[k] - h;
            let fm = self.eval(&xp);
            xp[k] = x[k];
            out.set_column(k, &((fp - fm) / (2.0 * h)));
        }
        out
    }

    /// Largest gap between [`GameMap::eval`] and central differences of the player costs.
    pub fn gradient_defect(&self, x: &[f64], h: f64) -> f64 {
        let f = self.eval(x);
        let mut xp = x.to_vec();
        let mut worst: f64 = 0.0;
        for a in 0..self.dim() {
            let cost = &self.players[self.owner[a]];
            xp[a] = x[a] + h;
            let up = cost.eval(&xp);
            xp[a] = x[a] - h;
            let dn = cost.eval(&xp);
            xp[a] = x[a];
            worst = worst.max(((up - dn) / (2.0 * h) - f[a]).abs());
        }
        worst
    }
}

/// Builds the game map with the layout `[operator, microgrid 1, …, microgrid n]`. The
/// operator holds generation, reserve, both prices and its view of each exchange; every
/// microgrid holds its own flexible output, its view of prices and exchanges, and the
/// worst-case penalty variables `l`, `W`.
pub fn assemble_jacobian(case: &NetworkCase, samples: &ErrorSampleMatrix, params: &MarketParams) -> Result<GameMap> {
    case.validate()?;
    let nt = case.n_periods();
    let ns = samples.n_samples();
    let dt = params.dt;
    let mut labels = Vec::new();
    let mut owner = Vec::new();
    let mut push = |labels: &mut Vec<String>, name: String, p: usize| -> usize {
        labels.push(name);
        owner.push(p);
        labels.len() - 1
    };
    let mut iso = PlayerCost {
        name: "operator".into(),
        ..Default::default()
    };
    for t in 0..nt {
        for (k, g) in case.generators.iter().enumerate() {
            let pg = push(&mut labels, format!("pg[{t}][{k}]"), 0);
            let rg = push(&mut labels, format!("rg[{t}][{k}]"), 0);
            iso.vars.extend([pg, rg]);
            iso.quadratic.push((pg, pg, g.cost_quadratic * dt * dt));
            iso.linear.push((rg, dt * g.cost_reserve));
        }
    }
    for i in 0..case.microgrids.len() {
        for t in 0..nt {
            let pr = push(&mut labels, format!("op.price_r[{i}][{t}]"), 0);
            let r = push(&mut labels, format!("op.rup[{i}][{t}]"), 0);
            let pe = push(&mut labels, format!("op.price_e[{i}][{t}]"), 0);
            let x = push(&mut labels, format!("op.pex[{i}][{t}]"), 0);
            iso.vars.extend([pr, r, pe, x]);
            iso.quadratic.push((pr, r, dt));
            iso.quadratic.push((pe, x, -dt));
        }
    }
    let mut players = vec![iso];
    for (i, m) in case.microgrids.iter().enumerate() {
        let p = i + 1;
        let mut c = PlayerCost {
            name: format!("mg{i}"),
            ..Default::default()
        };
        for t in 0..nt {
            let ps = push(&mut labels, format!("mg{i}.ps[{t}]"), p);
            let pr = push(&mut labels, format!("mg{i}.price_r[{t}]"), p);
            let r = push(&mut labels, format!("mg{i}.rup[{t}]"), p);
            let pe = push(&mut labels, format!("mg{i}.price_e[{t}]"), p);
            let x = push(&mut labels, format!("mg{i}.pex[{t}]"), p);
            c.vars.extend([ps, pr, r, pe, x]);
            c.quadratic.push((ps, ps, m.cost_quadratic * dt * dt));
            c.linear.push((r, dt * m.cost_reserve));
            c.quadratic.push((pr, r, -dt));
            c.quadratic.push((pe, x, dt));
        }
        let l = push(&mut labels, format!("mg{i}.l"), p);
        c.vars.push(l);
        c.linear.push((l, params.radius));
        for s in 0..ns {
            let w = push(&mut labels, format!("mg{i}.w[{s}]"), p);
            c.vars.push(w);
            c.linear.push((w, 1.0 / ns as f64));
        }
        players.push(c);
    }
    let n = labels.len();
    let mut jacobian = DMatrix::zeros(n, n);
    for (p, cost) in players.iter().enumerate() {
        for &(a, b, q) in &cost.quadratic {
            // ∂/∂x_b of the owner's ∂J/∂x_a and vice versa
            if a == b {
                if owner[a] == p {
                    jacobian[(a, a)] += 2.0 * q;
                }
            } else {
                if owner[a] == p {
                    jacobian[(a, b)] += q;
                }
                if owner[b] == p {
                    jacobian[(b, a)] += q;
                }
            }
        }
    }
    Ok(GameMap {
        labels,
        owner,
        players,
        jacobian,
    })
}

/// Options of the potential problem.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ThetaOptions {
    /// Weight linear reserve costs by one half, as the line integral of the map would give
    /// for a map whose reserve entries are treated as linear in the strategy.
    pub half_linear_reserve: bool,
}

/// The price-free convex problem whose minimizers are the game's equilibrium quantities.
#[derive(Clone, Debug)]
pub struct ThetaModel {
    pub program: ConicProgram,
    pub iso: IsoHandles,
    pub microgrids: Vec<MicrogridHandles>,
}

pub fn build_theta(
    case: &NetworkCase,
    samples: &ErrorSampleMatrix,
    params: &MarketParams,
    options: ThetaOptions,
) -> Result<ThetaModel> {
    let mut program = ConicProgram::new();
    let iso = build_iso_model(&mut program, case, samples, params, false)?;
    let mut microgrids = Vec::with_capacity(case.microgrids.len());
    for i in 0..case.microgrids.len() {
        microgrids.push(build_microgrid_model(
            &mut program,
            case,
            samples,
            i,
            params,
            &iso.links(i),
        )?);
    }
    if options.half_linear_reserve {
        let reserve: Vec<VarId> = iso
            .rg
            .iter()
            .flatten()
            .chain(iso.rup.iter().flatten())
            .copied()
            .collect();
        for (v, c) in program.objective.linear.iter_mut() {
            if reserve.contains(v) {
                *c *= 0.5;
            }
        }
    }
    Ok(ThetaModel {
        program,
        iso,
        microgrids,
    })
}

#[derive(Clone, Debug)]
pub struct ThetaSolution {
    pub model: ThetaModel,
    pub solution: SolutionPoint,
    pub equilibrium: Equilibrium,
    /// Marginal cost of energy at each microgrid's connection, `[i][t]`, from the duals
    /// of its balance rows.
    pub implied_price_e: Vec<Vec<f64>>,
}

pub fn solve_theta(
    case: &NetworkCase,
    samples: &ErrorSampleMatrix,
    params: &MarketParams,
    options: ThetaOptions,
    settings: &SolverSettings,
) -> Result<ThetaSolution> {
    let model = build_theta(case, samples, params, options)?;
    let solution = solve_convex(&model.program, settings)?;
    finish_theta(case, params, model, solution)
}

fn finish_theta(
    case: &NetworkCase,
    params: &MarketParams,
    model: ThetaModel,
    solution: SolutionPoint,
) -> Result<ThetaSolution> {
    if !matches!(solution.status, SolveStatus::Optimal | SolveStatus::ToleranceLimit) {
        let worst = model
            .program
            .constraints
            .iter()
            .max_by(|a, b| {
                a.slack(&solution.primal)
                    .min(0.0)
                    .abs()
                    .total_cmp(&b.slack(&solution.primal).min(0.0).abs())
            })
            .map(|c| c.name.clone())
            .unwrap_or_default();
        return Err(Error::Solver(format!(
            "potential problem ended {:?}; most violated row {worst}",
            solution.status
        )));
    }
    let equilibrium = extract_equilibrium(
        case,
        &model.program,
        &model.iso,
        &model.microgrids,
        params.dt,
        &solution.primal,
    );
    let implied_price_e = model
        .microgrids
        .iter()
        .map(|m| m.balance.iter().map(|&r| solution.dual(r) / params.dt).collect())
        .collect();
    Ok(ThetaSolution {
        model,
        solution,
        equilibrium,
        implied_price_e,
    })
}

/// Copy of `p` with variables and rows shuffled and every term list reversed.
/// Returns the program and the new index of each original variable.
fn permuted(p: &ConicProgram, seed: u64) -> (ConicProgram, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.variables.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pos = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        pos[old] = new;
    }
    let map = |v: VarId| VarId(pos[v.0]);
    let remap = |e: &LinExpr| LinExpr {
        terms: e.terms.iter().rev().map(|&(v, c)| (map(v), c)).collect(),
        constant: e.constant,
    };
    let mut out = ConicProgram::new();
    for &old in &order {
        let v = &p.variables[old];
        out.add_var(v.name.clone(), v.kind, v.lower, v.upper);
    }
    let mut rows: Vec<usize> = (0..p.constraints.len()).collect();
    rows.shuffle(&mut rng);
    for r in rows {
        let c = &p.constraints[r];
        let e = LinExpr {
            terms: c.terms.iter().rev().map(|&(v, a)| (map(v), a)).collect(),
            constant: 0.0,
        };
        out.add_constraint(c.name.clone(), e, c.sense, c.rhs);
    }
    for k in &p.cones {
        out.add_soc(k.name.clone(), k.vector.iter().map(remap).collect(), remap(&k.bound));
    }
    for &(v, q) in p.objective.quadratic.iter().rev() {
        out.add_quadratic_cost(map(v), q);
    }
    for &(v, c) in p.objective.linear.iter().rev() {
        out.add_linear_cost(map(v), c);
    }
    out.objective.constant = p.objective.constant;
    (out, pos)
}

/// Quantities compared across solution methods: generation, generator reserve, flexible
/// output, exchange and reserve bids, flattened in that order.
pub fn quantity_vector(eq: &Equilibrium) -> Vec<f64> {
    [&eq.pg, &eq.rg, &eq.ps, &eq.pex, &eq.rup]
        .iter()
        .flat_map(|m| m.iter().flatten().copied())
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessReport {
    pub starts: usize,
    /// Largest pairwise quantity deviation between potential-problem solves, MW.
    pub theta_spread: f64,
    /// Quantity deviation between the potential problem and the single-level model, MW.
    pub mpec_deviation: Option<f64>,
    pub mpec_status: Option<BnbStatus>,
    /// Largest gap between single-level energy prices and the implied prices of the
    /// potential problem. Informational only.
    pub price_gap: Option<f64>,
    /// Every generator and microgrid carries a positive quadratic cost.
    pub strictly_convex: bool,
    pub pass: bool,
}

/// Solves the potential problem from `starts` perturbed formulations and the single-level
/// model once, and compares the quantities.
pub fn check_uniqueness(
    case: &NetworkCase,
    samples: &ErrorSampleMatrix,
    params: &MarketParams,
    settings: &SolverSettings,
    starts: usize,
    with_mpec: bool,
) -> Result<UniquenessReport> {
    let starts = starts.max(1);
    let base = build_theta(case, samples, params, ThetaOptions::default())?;
    let mut quantities = Vec::with_capacity(starts);
    let mut first_theta = None;
    for k in 0..starts {
        let (sol, model) = if k == 0 {
            (solve_convex(&base.program, settings)?, base.clone())
        } else {
            let (p, pos) = permuted(&base.program, k as u64);
            let mut s = settings.clone();
            s.equilibrate = k % 2 == 0;
            let mut sol = solve_convex(&p, &s)?;
            sol.primal = pos.iter().map(|&j| sol.primal[j]).collect();
            (sol, base.clone())
        };
        let th = finish_theta(case, params, model, sol)?;
        quantities.push(quantity_vector(&th.equilibrium));
        if k == 0 {
            first_theta = Some(th);
        }
    }
    let mut theta_spread: f64 = 0.0;
    for a in 0..quantities.len() {
        for b in a + 1..quantities.len() {
            theta_spread = theta_spread.max(max_abs_diff(&quantities[a], &quantities[b]));
        }
    }
    let theta = first_theta.expect("at least one start");
    let (mut mpec_deviation, mut mpec_status, mut price_gap) = (None, None, None);
    if with_mpec {
        let sol = solve_market(case, samples, params, settings)?;
        mpec_status = Some(sol.result.status);
        if let Some(eq) = &sol.equilibrium {
            mpec_deviation = Some(max_abs_diff(&quantity_vector(eq), &quantities[0]));
            let flat_m: Vec<f64> = eq.price_e.iter().flatten().copied().collect();
            let flat_t: Vec<f64> = theta.implied_price_e.iter().flatten().copied().collect();
            price_gap = Some(max_abs_diff(&flat_m, &flat_t));
        }
    }
    let strictly_convex = case.generators.iter().all(|g| g.cost_quadratic > 0.0)
        && case.microgrids.iter().all(|m| m.cost_quadratic > 0.0);
    let mpec_ok =
        !with_mpec || (mpec_status == Some(BnbStatus::Optimal) && mpec_deviation.is_some_and(|d| d <= QUANTITY_TOL));
    Ok(UniquenessReport {
        starts,
        theta_spread,
        mpec_deviation,
        mpec_status,
        price_gap,
        strictly_convex,
        pass: theta_spread <= QUANTITY_TOL && mpec_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LeaderObjective;
    use crate::dro::GroundMetric;
    use crate::market::tests::{tiny_case, tiny_samples};

    fn params(eps: Option<Vec<f64>>) -> MarketParams {
        MarketParams {
            dt: 0.5,
            radius: 0.02,
            metric: GroundMetric::LInf,
            r_fup: 1.5,
            eps_ind: eps,
            big_m: 1e3,
            price_cap: 200.0,
            reserve_in_injections: true,
            leader_objective: LeaderObjective::SystemCost,
        }
    }

    #[test]
    fn jacobian_is_symmetric_and_matches_differences() {
        let case = tiny_case(2, 2);
        let samples = tiny_samples(3, 2);
        let g = assemble_jacobian(&case, &samples, &params(None)).unwrap();
        assert_eq!(g.symmetry_defect(), 0.0);
        let x: Vec<f64> = (0..g.dim()).map(|k| ((k * 37 % 11) as f64) * 0.3 - 1.2).collect();
        let fd = g.finite_difference_jacobian(&x, 1e-3);
        assert!((fd - &g.jacobian).amax() < 1e-5);
        assert!(g.gradient_defect(&x, 1e-3) < 1e-6);
        // generator diagonal is 2 m Δt²
        let pg = g.labels.iter().position(|l| l == "pg[0][0]").unwrap();
        assert!((g.jacobian[(pg, pg)] - 2.0 * 0.3 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_case_gives_zero_solution() {
        let mut case = tiny_case(1, 1);
        for b in &mut case.buses {
            b.net_load = vec![0.0];
        }
        case.reserve_req = vec![0.0];
        let th = solve_theta(
            &case,
            &tiny_samples(3, 1),
            &params(Some(vec![0.2])),
            ThetaOptions::default(),
            &SolverSettings::default(),
        )
        .unwrap();
        assert!(quantity_vector(&th.equilibrium).iter().all(|q| q.abs() < 1e-6));
        assert!(th.solution.objective.abs() < 1e-6);
    }

    #[test]
    fn permutation_round_trips() {
        let case = tiny_case(1, 2);
        let m = build_theta(&case, &tiny_samples(3, 2), &params(None), ThetaOptions::default()).unwrap();
        let (p, pos) = permuted(&m.program, 5);
        let x: Vec<f64> = (0..m.program.variables.len()).map(|k| k as f64 * 0.1).collect();
        let mut y = vec![0.0; x.len()];
        for (old, &new) in pos.iter().enumerate() {
            y[new] = x[old];
        }
        assert!((p.eval_objective(&y) - m.program.eval_objective(&x)).abs() < 1e-9);
        assert!((p.max_violation(&y) - m.program.max_violation(&x)).abs() < 1e-9);
    }

    #[test]
    fn potential_matches_single_level_model() {
        let case = tiny_case(2, 2);
        let samples = tiny_samples(4, 2);
        let r = check_uniqueness(
            &case,
            &samples,
            &params(Some(vec![0.1, 0.1])),
            &SolverSettings::default(),
            3,
            true,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.strictly_convex);
    }

    #[test]
    fn halving_reserve_costs_changes_objective_only_through_reserve() {
        let case = tiny_case(1, 1);
        let s = tiny_samples(3, 1);
        let full = build_theta(&case, &s, &params(None), ThetaOptions::default()).unwrap();
        let half = build_theta(
            &case,
            &s,
            &params(None),
            ThetaOptions {
                half_linear_reserve: true,
            },
        )
        .unwrap();
        let mut x = vec![0.0; full.program.variables.len()];
        x[full.iso.rg[0][0].0] = 2.0;
        let g = &case.generators[0];
        let diff = full.program.eval_objective(&x) - half.program.eval_objective(&x);
        assert!((diff - 0.5 * 0.5 * g.cost_reserve * 2.0).abs() < 1e-12);
    }
}
