//! The operator's dispatch, the microgrids' bidding problems, and the single-level model
//! that embeds the followers' optimality conditions into the leader.

pub mod dcflow;
pub mod lower;

use nalgebra::DMatrix;

pub use dcflow::{disconnected_buses, ptdf};
pub use lower::{apply_big_m, canonical, derive_kkt, CanonicalRow, ComplementarityPair, KktSystem, LowerLevel};

use crate::data::{ErrorSampleMatrix, LeaderObjective, NetworkCase, ScenarioConfig};
use crate::dro::{emit_drcc, emit_dro_penalty, DrccBlock, DroPenaltyBlock, GroundMetric};
use crate::error::{Error, Result};
use crate::program::{ConicProgram, LinExpr, RowId, Sense, VarId};
use crate::solver::{branch_and_bound, solve_convex, BnbResult, SolveStatus, SolverSettings};

/// Sensitivities below this are dropped from flow rows.
const PTDF_EPS: f64 = 1e-12;

/// Weight of `(x − x̂)²` in the proximal best-response check, $/MW².
const PROXIMAL_WEIGHT: f64 = 1.0;
/// Interior-point tolerance of the frozen-price re-solves. Bid moves are read off a
/// distance, which an engine stopping at gap `τ` only pins down to about `√τ`.
const CHECK_IPM_TOL: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq)]
pub struct MarketParams {
    pub dt: f64,
    pub radius: f64,
    pub metric: GroundMetric,
    pub r_fup: f64,
    /// One rate per microgrid; `None` drops the reserve-delivery constraints.
    pub eps_ind: Option<Vec<f64>>,
    pub big_m: f64,
    pub price_cap: f64,
    pub reserve_in_injections: bool,
    pub leader_objective: LeaderObjective,
}

impl MarketParams {
    pub fn from_config(cfg: &ScenarioConfig, dt: f64, eps_ind: Option<Vec<f64>>) -> Self {
        MarketParams {
            dt,
            radius: cfg.radius,
            metric: cfg.ground_metric,
            r_fup: cfg.r_fup,
            eps_ind,
            big_m: cfg.big_m,
            price_cap: cfg.price_cap,
            reserve_in_injections: cfg.reserve_in_injections,
            leader_objective: cfg.leader_objective,
        }
    }

    fn check(&self, case: &NetworkCase, samples: &ErrorSampleMatrix) -> Result<()> {
        if samples.n_periods() != case.n_periods() {
            return Err(Error::Dimension(format!(
                "samples cover {} periods, case has {}",
                samples.n_periods(),
                case.n_periods()
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!(
                "interval length must be positive, got {}",
                self.dt
            )));
        }
        if let Some(e) = &self.eps_ind {
            if e.len() != case.microgrids.len() {
                return Err(Error::Dimension(format!(
                    "{} violation rates for {} microgrids",
                    e.len(),
                    case.microgrids.len()
                )));
            }
        }
        Ok(())
    }
}

/// Handles of the operator's variables and rows.
#[derive(Clone, Debug)]
pub struct IsoHandles {
    /// `[t][k]`
    pub pg: Vec<Vec<VarId>>,
    pub rg: Vec<Vec<VarId>>,
    /// Energy bought by microgrid `i` from the grid, `[i][t]`.
    pub pex: Vec<Vec<VarId>>,
    /// Reserve sold by microgrid `i`, `[i][t]`.
    pub rup: Vec<Vec<VarId>>,
    /// Energy and reserve prices, `[i][t]`; empty when the model is price-free.
    pub price_e: Vec<Vec<VarId>>,
    pub price_r: Vec<Vec<VarId>>,
    pub balance: Vec<RowId>,
    pub reserve: Vec<RowId>,
    pub capacity: Vec<Vec<RowId>>,
    /// `(line, t, upper row, lower row)`
    pub flow_rows: Vec<(usize, usize, RowId, RowId)>,
    pub drcc: Vec<DrccBlock>,
    pub ptdf: DMatrix<f64>,
}

impl IsoHandles {
    pub fn has_prices(&self) -> bool {
        !self.price_e.is_empty()
    }

    /// Variables the operator shares with microgrid `i`.
    pub fn links(&self, i: usize) -> MicrogridLinks {
        let price = |p: &Vec<Vec<VarId>>| -> Vec<LinExpr> {
            if p.is_empty() {
                vec![LinExpr::new(); self.pex[i].len()]
            } else {
                p[i].iter().map(|&v| v.into()).collect()
            }
        };
        MicrogridLinks {
            pex: self.pex[i].clone(),
            rup: self.rup[i].clone(),
            price_e: price(&self.price_e),
            price_r: price(&self.price_r),
        }
    }
}

/// Net injection expression at every bus for period `t`.
fn injections(case: &NetworkCase, iso: &IsoHandles, t: usize, with_reserve: bool) -> Vec<LinExpr> {
    let mut inj: Vec<LinExpr> = (0..case.n_buses())
        .map(|b| LinExpr::constant(-case.passive_load(b, t)))
        .collect();
    let r = if with_reserve { 1.0 } else { 0.0 };
    for (k, g) in case.generators.iter().enumerate() {
        inj[g.bus].add_term(iso.pg[t][k], 1.0);
        if r != 0.0 {
            inj[g.bus].add_term(iso.rg[t][k], r);
        }
    }
    for (i, m) in case.microgrids.iter().enumerate() {
        inj[m.bus].add_term(iso.pex[i][t], -1.0);
        if r != 0.0 {
            inj[m.bus].add_term(iso.rup[i][t], r);
        }
    }
    inj
}

/// Adds the operator's dispatch: generation and reserve, energy and reserve balance,
/// generator capacity, line limits, and (when rates are given) the per-microgrid delivery
/// constraints. The exchange quantities `pex`, `rup` are created here as free variables;
/// microgrid models attach their own rows to them.
pub fn build_iso_model(
    program: &mut ConicProgram,
    case: &NetworkCase,
    samples: &ErrorSampleMatrix,
    params: &MarketParams,
    with_prices: bool,
) -> Result<IsoHandles> {
    case.validate()?;
    params.check(case, samples)?;
    let nt = case.n_periods();
    let ng = case.generators.len();
    let nm = case.microgrids.len();
    let dt = params.dt;
    let sens = ptdf(case)?;

    let pg: Vec<Vec<VarId>> = (0..nt)
        .map(|t| (0..ng).map(|k| program.add_nonneg(format!("pg[{t}][{k}]"))).collect())
        .collect();
    let rg: Vec<Vec<VarId>> = (0..nt)
        .map(|t| (0..ng).map(|k| program.add_nonneg(format!("rg[{t}][{k}]"))).collect())
        .collect();
    let pex: Vec<Vec<VarId>> = (0..nm)
        .map(|i| (0..nt).map(|t| program.add_free(format!("mg{i}.pex[{t}]"))).collect())
        .collect();
    let rup: Vec<Vec<VarId>> = (0..nm)
        .map(|i| (0..nt).map(|t| program.add_free(format!("mg{i}.rup[{t}]"))).collect())
        .collect();
    let (price_e, price_r) = if with_prices {
        // energy prices may go negative at export-congested buses; reserve prices may not
        let mk = |program: &mut ConicProgram, tag: &str, lo: f64| -> Vec<Vec<VarId>> {
            (0..nm)
                .map(|i| {
                    (0..nt)
                        .map(|t| program.add_continuous(format!("mg{i}.{tag}[{t}]"), lo, params.price_cap))
                        .collect()
                })
                .collect()
        };
        (mk(program, "price_e", -params.price_cap), mk(program, "price_r", 0.0))
    } else {
        (Vec::new(), Vec::new())
    };

    for t in 0..nt {
        for (k, g) in case.generators.iter().enumerate() {
            program.add_quadratic_cost(pg[t][k], g.cost_quadratic * dt * dt);
            program.add_linear_cost(rg[t][k], dt * g.cost_reserve);
        }
    }

    let mut balance = Vec::with_capacity(nt);
    let mut reserve = Vec::with_capacity(nt);
    let mut capacity = Vec::with_capacity(nt);
    for t in 0..nt {
        let mut e = LinExpr::new();
        for k in 0..ng {
            e.add_term(pg[t][k], 1.0);
        }
        for p in &pex {
            e.add_term(p[t], -1.0);
        }
        balance.push(program.add_constraint(format!("balance[{t}]"), e, Sense::Eq, case.total_passive_load(t)));

        let mut e = LinExpr::new();
        for k in 0..ng {
            e.add_term(rg[t][k], 1.0);
        }
        for r in &rup {
            e.add_term(r[t], 1.0);
        }
        reserve.push(program.add_constraint(format!("reserve[{t}]"), e, Sense::Ge, case.reserve_req[t]));

        capacity.push(
            case.generators
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let e = LinExpr::from(pg[t][k]) + LinExpr::from(rg[t][k]);
                    program.add_constraint(format!("capacity[{t}][{k}]"), e, Sense::Le, g.capacity_mw)
                })
                .collect(),
        );
    }

    let mut iso = IsoHandles {
        pg,
        rg,
        pex,
        rup,
        price_e,
        price_r,
        balance,
        reserve,
        capacity,
        flow_rows: Vec::new(),
        drcc: Vec::new(),
        ptdf: sens,
    };

    for t in 0..nt {
        let inj = injections(case, &iso, t, params.reserve_in_injections);
        for (l, br) in case.branches.iter().enumerate() {
            let mut f = LinExpr::new();
            for (b, e) in inj.iter().enumerate() {
                let s = iso.ptdf[(l, b)];
                if s.abs() > PTDF_EPS {
                    f.add_scaled(e, s);
                }
            }
            let hi = program.add_constraint(format!("flow_hi[{l}][{t}]"), f.clone(), Sense::Le, br.limit_mw);
            let lo = program.add_constraint(format!("flow_lo[{l}][{t}]"), f, Sense::Ge, -br.limit_mw);
            iso.flow_rows.push((l, t, hi, lo));
        }
    }

    if let Some(eps) = &params.eps_ind {
        for (i, &e) in eps.iter().enumerate() {
            let block = emit_drcc(
                program,
                samples,
                &iso.rup[i],
                e,
                params.r_fup,
                params.radius,
                dt,
                params.metric,
                i,
            )?;
            iso.drcc.push(block);
        }
    }
    Ok(iso)
}

/// Quantities and prices a microgrid shares with the operator.
#[derive(Clone, Debug, PartialEq)]
pub struct MicrogridLinks {
    pub pex: Vec<VarId>,
    pub rup: Vec<VarId>,
    pub price_e: Vec<LinExpr>,
    pub price_r: Vec<LinExpr>,
}

impl MicrogridLinks {
    /// Fresh exchange variables facing fixed prices, for solving a microgrid on its own.
    pub fn standalone(program: &mut ConicProgram, i: usize, price_e: &[f64], price_r: &[f64]) -> Self {
        MicrogridLinks {
            pex: (0..price_e.len())
                .map(|t| program.add_free(format!("mg{i}.pex[{t}]")))
                .collect(),
            rup: (0..price_r.len())
                .map(|t| program.add_free(format!("mg{i}.rup[{t}]")))
                .collect(),
            price_e: price_e.iter().map(|&p| LinExpr::constant(p)).collect(),
            price_r: price_r.iter().map(|&p| LinExpr::constant(p)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MicrogridHandles {
    pub index: usize,
    pub ps: Vec<VarId>,
    pub pex: Vec<VarId>,
    pub rup: Vec<VarId>,
    pub balance: Vec<RowId>,
    pub dnpl: Vec<RowId>,
    pub uppl: Vec<RowId>,
    pub dnrl: Vec<RowId>,
    pub uprl: Vec<RowId>,
    pub dro: DroPenaltyBlock,
    pub lower: LowerLevel,
}

impl MicrogridHandles {
    /// Own cost: flexible generation, reserve provision and the worst-case shortfall penalty.
    /// Market payments are excluded.
    pub fn own_cost(&self, case: &NetworkCase, dt: f64, x: &[f64]) -> f64 {
        let m = &case.microgrids[self.index];
        let gen: f64 = self
            .ps
            .iter()
            .zip(&self.rup)
            .map(|(&p, &r)| m.cost_quadratic * (dt * x[p.0]).powi(2) + dt * m.cost_reserve * x[r.0])
            .sum();
        gen + self.dro.value(x)
    }
}

/// Adds microgrid `i`'s bidding problem. Its own costs go into the program objective;
/// the full follower cost including payments is recorded in [`MicrogridHandles::lower`].
pub fn build_microgrid_model(
    program: &mut ConicProgram,
    case: &NetworkCase,
    samples: &ErrorSampleMatrix,
    i: usize,
    params: &MarketParams,
    links: &MicrogridLinks,
) -> Result<MicrogridHandles> {
    let m = case
        .microgrids
        .get(i)
        .ok_or_else(|| Error::Case(format!("no microgrid with index {i}")))?;
    let nt = case.n_periods();
    if links.pex.len() != nt || links.rup.len() != nt || links.price_e.len() != nt || links.price_r.len() != nt {
        return Err(Error::Dimension(format!(
            "microgrid {i} links do not span {nt} periods"
        )));
    }
    let dt = params.dt;
    let mut lower = LowerLevel::new(format!("mg{i}"));
    let ps: Vec<VarId> = (0..nt).map(|t| program.add_free(format!("mg{i}.ps[{t}]"))).collect();
    let (mut balance, mut dnpl, mut uppl, mut dnrl, mut uprl) = (vec![], vec![], vec![], vec![], vec![]);
    for t in 0..nt {
        let (p, x, r) = (ps[t], links.pex[t], links.rup[t]);
        let name = |tag: &str| format!("mg{i}.{tag}[{t}]");
        balance.push(program.add_constraint(
            name("balance"),
            LinExpr::from(x) + LinExpr::from(p),
            Sense::Eq,
            case.microgrid_load(i, t),
        ));
        dnpl.push(program.add_constraint(name("dnpl"), p.into(), Sense::Ge, -m.p_min));
        uppl.push(program.add_constraint(name("uppl"), p.into(), Sense::Le, m.p_max));
        dnrl.push(program.add_constraint(name("dnrl"), r.into(), Sense::Ge, 0.0));
        uprl.push(program.add_constraint(name("uprl"), LinExpr::from(r) - p * m.gamma, Sense::Le, 0.0));

        program.add_quadratic_cost(p, m.cost_quadratic * dt * dt);
        program.add_linear_cost(r, dt * m.cost_reserve);

        lower.add_var(p);
        lower.add_var(x);
        lower.add_var(r);
        lower.add_quadratic(p, m.cost_quadratic * dt * dt);
        lower.add_linear(x, links.price_e[t].scaled(dt));
        lower.add_linear(r, LinExpr::constant(dt * m.cost_reserve) - links.price_r[t].scaled(dt));
    }
    let dro = emit_dro_penalty(
        program,
        samples,
        &links.rup,
        m.voll,
        params.radius,
        dt,
        params.metric,
        i,
    )?;
    for v in dro.variables() {
        lower.add_var(v);
    }
    for &(v, c) in &dro.objective {
        lower.add_linear(v, LinExpr::constant(c));
    }
    for rows in [&balance, &dnpl, &uppl, &dnrl, &uprl] {
        lower.rows.extend(rows.iter().copied());
    }
    lower.rows.extend(dro.rows());
    if let crate::dro::NormBound::Cone(k) = dro.norm {
        lower.cones.push(k);
    }
    Ok(MicrogridHandles {
        index: i,
        ps,
        pex: links.pex.clone(),
        rup: links.rup.clone(),
        balance,
        dnpl,
        uppl,
        dnrl,
        uprl,
        dro,
        lower,
    })
}

/// The single-level model with every follower replaced by its big-M linearized KKT system.
#[derive(Clone, Debug)]
pub struct M3Model {
    pub program: ConicProgram,
    pub iso: IsoHandles,
    pub microgrids: Vec<MicrogridHandles>,
    pub kkt: Vec<KktSystem>,
    pub binaries: Vec<VarId>,
    pub params: MarketParams,
}

pub fn assemble_m3(case: &NetworkCase, samples: &ErrorSampleMatrix, params: &MarketParams) -> Result<M3Model> {
    if !params.metric.is_polyhedral() {
        return Err(Error::Config(
            "the single-level model needs a polyhedral ground metric (l1 or linf)".into(),
        ));
    }
    let mut program = ConicProgram::new();
    let iso = build_iso_model(&mut program, case, samples, params, true)?;
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
    let mut kkt = Vec::with_capacity(microgrids.len());
    let mut binaries = Vec::new();
    for mg in &microgrids {
        let sys = derive_kkt(&mut program, &mg.lower)?;
        binaries.extend(apply_big_m(&mut program, &sys.pairs, params.big_m)?);
        if params.leader_objective == LeaderObjective::OperatorCost {
            // payments = own cost − follower optimum; the optimum is the dual objective,
            // so subtracting it adds Σ q x² + Σ y_k g_k(0)
            for (&v, &q) in &mg.lower.quadratic {
                program.add_quadratic_cost(v, q);
            }
            for (&r, &y) in mg.lower.rows.iter().zip(&sys.duals) {
                let g0 = canonical(&program, r).g.constant;
                if g0 != 0.0 {
                    program.add_linear_cost(y, g0);
                }
            }
        }
        kkt.push(sys);
    }
    Ok(M3Model {
        program,
        iso,
        microgrids,
        kkt,
        binaries,
        params: params.clone(),
    })
}

/// Market outcome read off a solution point.
#[derive(Clone, Debug, PartialEq)]
pub struct Equilibrium {
    /// `[t][k]`
    pub pg: Vec<Vec<f64>>,
    pub rg: Vec<Vec<f64>>,
    /// `[i][t]`
    pub ps: Vec<Vec<f64>>,
    pub pex: Vec<Vec<f64>>,
    pub rup: Vec<Vec<f64>>,
    /// `[i][t]`; empty for price-free models.
    pub price_e: Vec<Vec<f64>>,
    pub price_r: Vec<Vec<f64>>,
    /// `[line][t]`
    pub flows: Vec<Vec<f64>>,
    pub generation_cost: f64,
    /// Net transfer from the operator to each microgrid.
    pub payments: Vec<f64>,
    /// Generation cost plus net payments.
    pub operator_cost: f64,
    /// Own cost minus payments received, per microgrid.
    pub microgrid_cost: Vec<f64>,
    pub dro_penalty: Vec<f64>,
    /// Generation cost plus every microgrid's own cost.
    pub system_cost: f64,
    pub objective: f64,
}

impl Equilibrium {
    pub fn total_reserve_bid(&self, i: usize) -> f64 {
        self.rup[i].iter().sum()
    }
}

/// Reads the market outcome from `x`, a point of the program the handles belong to.
pub fn extract_equilibrium(
    case: &NetworkCase,
    program: &ConicProgram,
    iso: &IsoHandles,
    microgrids: &[MicrogridHandles],
    dt: f64,
    x: &[f64],
) -> Equilibrium {
    let val = |v: &Vec<Vec<VarId>>| -> Vec<Vec<f64>> { v.iter().map(|r| r.iter().map(|u| x[u.0]).collect()).collect() };
    let nt = case.n_periods();
    let pg = val(&iso.pg);
    let rg = val(&iso.rg);
    let pex = val(&iso.pex);
    let rup = val(&iso.rup);
    let price_e = val(&iso.price_e);
    let price_r = val(&iso.price_r);
    let ps: Vec<Vec<f64>> = microgrids
        .iter()
        .map(|m| m.ps.iter().map(|u| x[u.0]).collect())
        .collect();

    let mut flows = vec![vec![0.0; nt]; case.branches.len()];
    for t in 0..nt {
        let inj: Vec<f64> = injections(case, iso, t, true).iter().map(|e| e.eval(x)).collect();
        for (l, row) in flows.iter_mut().enumerate() {
            row[t] = (0..case.n_buses()).map(|b| iso.ptdf[(l, b)] * inj[b]).sum();
        }
    }

    let mut generation_cost = 0.0;
    for t in 0..nt {
        for (k, g) in case.generators.iter().enumerate() {
            generation_cost += g.cost_quadratic * (dt * pg[t][k]).powi(2) + dt * g.cost_reserve * rg[t][k];
        }
    }
    let payments: Vec<f64> = (0..microgrids.len())
        .map(|i| {
            if price_e.is_empty() {
                return 0.0;
            }
            (0..nt)
                .map(|t| dt * (price_r[i][t] * rup[i][t] - price_e[i][t] * pex[i][t]))
                .sum()
        })
        .collect();
    let own: Vec<f64> = microgrids.iter().map(|m| m.own_cost(case, dt, x)).collect();
    let dro_penalty: Vec<f64> = microgrids.iter().map(|m| m.dro.value(x)).collect();
    let microgrid_cost = own.iter().zip(&payments).map(|(o, p)| o - p).collect();
    Equilibrium {
        pg,
        rg,
        ps,
        pex,
        rup,
        price_e,
        price_r,
        flows,
        generation_cost,
        operator_cost: generation_cost + payments.iter().sum::<f64>(),
        payments,
        microgrid_cost,
        dro_penalty,
        system_cost: generation_cost + own.iter().sum::<f64>(),
        objective: program.eval_objective(x),
    }
}

/// Post-solve checks that the single-level point is a genuine equilibrium.
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumCheck {
    /// Largest `|slack · dual|` over complementarity pairs.
    pub complementarity: f64,
    /// Largest stationarity row residual.
    pub stationarity: f64,
    /// Per microgrid: cost at the model point minus the optimum of its own problem at the
    /// model's prices. Near zero when the point is a best response.
    pub follower_gaps: Vec<f64>,
    /// Per microgrid: largest move of the exchange and reserve bids when the follower is
    /// re-solved at frozen prices with a proximal term centred on the model point. Zero
    /// exactly when the model bids are a best response, even if best responses are not unique.
    pub bid_deviation: Vec<f64>,
    /// Pairs whose slack or dual exceeds 90 % of big-M.
    pub near_big_m: Vec<String>,
}

impl EquilibriumCheck {
    pub fn max_follower_gap(&self) -> f64 {
        self.follower_gaps.iter().fold(0.0, |a, g| a.max(g.abs()))
    }

    pub fn max_bid_deviation(&self) -> f64 {
        self.bid_deviation.iter().fold(0.0, |a, g| a.max(*g))
    }
}

impl M3Model {
    pub fn equilibrium(&self, case: &NetworkCase, x: &[f64]) -> Equilibrium {
        extract_equilibrium(case, &self.program, &self.iso, &self.microgrids, self.params.dt, x)
    }

    pub fn check(&self, x: &[f64], settings: &SolverSettings) -> Result<EquilibriumCheck> {
        let settings = &SolverSettings {
            ipm_tol: settings.ipm_tol.min(CHECK_IPM_TOL),
            ..settings.clone()
        };
        let mut complementarity: f64 = 0.0;
        let mut near_big_m = Vec::new();
        let mut stationarity: f64 = 0.0;
        for sys in &self.kkt {
            for p in &sys.pairs {
                let (s, d) = (p.slack.eval(x), x[p.dual.0]);
                complementarity = complementarity.max((s * d).abs());
                if s > 0.9 * self.params.big_m || d > 0.9 * self.params.big_m {
                    near_big_m.push(p.name.clone());
                }
            }
            for &r in &sys.stationarity {
                let c = self.program.constraint(r);
                stationarity = stationarity.max((c.activity(x) - c.rhs).abs());
            }
        }
        let mut follower_gaps = Vec::with_capacity(self.microgrids.len());
        let mut bid_deviation = Vec::with_capacity(self.microgrids.len());
        let ok = |sol: &crate::solver::SolutionPoint, name: &str| -> Result<()> {
            if matches!(sol.status, SolveStatus::Optimal | SolveStatus::ToleranceLimit) {
                Ok(())
            } else {
                Err(Error::Solver(format!("{name} at frozen prices ended {:?}", sol.status)))
            }
        };
        for mg in &self.microgrids {
            let (mut p, map) = mg.lower.standalone(&self.program, x)?;
            let sol = solve_convex(&p, settings)?;
            ok(&sol, &mg.lower.name)?;
            follower_gaps.push(mg.lower.cost(x) - sol.objective);
            for (&old, &new) in &map {
                p.add_quadratic_cost(new, PROXIMAL_WEIGHT);
                p.add_linear_cost(new, -2.0 * PROXIMAL_WEIGHT * x[old.0]);
            }
            let prox = solve_convex(&p, settings)?;
            ok(&prox, &mg.lower.name)?;
            let dev = mg
                .pex
                .iter()
                .chain(&mg.rup)
                .map(|v| (prox.value(map[v]) - x[v.0]).abs())
                .fold(0.0, f64::max);
            bid_deviation.push(dev);
        }
        Ok(EquilibriumCheck {
            complementarity,
            stationarity,
            follower_gaps,
            bid_deviation,
            near_big_m,
        })
    }
}

/// A solved single-level model.
#[derive(Clone, Debug)]
pub struct MarketSolution {
    pub model: M3Model,
    pub result: BnbResult,
    pub equilibrium: Option<Equilibrium>,
}

pub fn solve_market(
    case: &NetworkCase,
    samples: &ErrorSampleMatrix,
    params: &MarketParams,
    settings: &SolverSettings,
) -> Result<MarketSolution> {
    let model = assemble_m3(case, samples, params)?;
    let result = branch_and_bound(&model.program, settings)?;
    let equilibrium = result.solution.as_ref().map(|s| model.equilibrium(case, &s.primal));
    Ok(MarketSolution {
        model,
        result,
        equilibrium,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{Branch, Bus, Generator, Microgrid};

    pub(crate) fn tiny_case(n_mg: usize, nt: usize) -> NetworkCase {
        let mut buses = vec![Bus {
            id: 1,
            is_slack: true,
            net_load: vec![20.0; nt],
        }];
        let mut branches = Vec::new();
        let mut microgrids = Vec::new();
        for i in 0..n_mg {
            buses.push(Bus {
                id: 2 + i as u32,
                is_slack: false,
                net_load: vec![4.0; nt],
            });
            branches.push(Branch {
                from: 0,
                to: i + 1,
                susceptance: 10.0,
                limit_mw: 50.0,
            });
            microgrids.push(Microgrid {
                id: format!("m{i}"),
                bus: i + 1,
                cost_quadratic: 0.4 + 0.1 * i as f64,
                cost_reserve: 2.0 + 0.7 * i as f64,
                p_max: 8.0,
                p_min: 2.0,
                gamma: 0.5,
                voll: 30.0 + 5.0 * i as f64,
            });
        }
        NetworkCase {
            buses,
            branches,
            generators: vec![Generator {
                id: "g1".into(),
                bus: 0,
                cost_quadratic: 0.3,
                cost_reserve: 6.0,
                capacity_mw: 60.0,
            }],
            microgrids,
            reserve_req: vec![3.0; nt],
            period_labels: (0..nt).map(|t| format!("t{t}")).collect(),
        }
    }

    pub(crate) fn tiny_samples(ns: usize, nt: usize) -> ErrorSampleMatrix {
        crate::data::generate_synthetic_samples(3, ns, nt, 0.2).unwrap()
    }

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
    fn binary_count_follows_follower_rows() {
        let (ns, nt) = (5, 2);
        let case = tiny_case(2, nt);
        let m = assemble_m3(&case, &tiny_samples(ns, nt), &params(Some(vec![0.1, 0.1]))).unwrap();
        // per microgrid: 4 bid rows per period, one row per sample, 2 per period + 1 for the linf norm
        assert_eq!(m.binaries.len(), 2 * (4 * nt + ns + 2 * nt + 1));
        assert!(m.program.validate().is_empty());
    }

    #[test]
    fn conic_metric_rejected() {
        let case = tiny_case(1, 2);
        let mut p = params(None);
        p.metric = GroundMetric::Euclidean;
        assert!(assemble_m3(&case, &tiny_samples(4, 2), &p).is_err());
    }

    #[test]
    fn solved_market_is_an_equilibrium() {
        let (ns, nt) = (4, 2);
        let case = tiny_case(1, nt);
        let samples = tiny_samples(ns, nt);
        let settings = SolverSettings::default();
        let sol = solve_market(&case, &samples, &params(Some(vec![0.2])), &settings).unwrap();
        let x = &sol.result.solution.as_ref().expect("feasible").primal;
        let eq = sol.equilibrium.as_ref().unwrap();
        for t in 0..nt {
            let supply: f64 = eq.pg[t].iter().sum();
            let imports: f64 = eq.pex.iter().map(|p| p[t]).sum();
            assert!((supply - imports - case.total_passive_load(t)).abs() < 1e-5);
            assert!((eq.pex[0][t] + eq.ps[0][t] - case.microgrid_load(0, t)).abs() < 1e-5);
        }
        let chk = sol.model.check(x, &settings).unwrap();
        assert!(chk.complementarity < 1e-4, "{chk:?}");
        assert!(chk.max_follower_gap() < 1e-5, "{chk:?}");
        assert!(chk.max_bid_deviation() < 1e-4, "{chk:?}");
        assert!(chk.near_big_m.is_empty());
        assert!((eq.objective - eq.system_cost).abs() < 1e-6 * eq.system_cost.abs().max(1.0));
    }

    #[test]
    fn operator_objective_equals_cost_with_payments() {
        let (ns, nt) = (3, 2);
        let case = tiny_case(1, nt);
        let mut p = params(Some(vec![0.2]));
        p.leader_objective = LeaderObjective::OperatorCost;
        let settings = SolverSettings::default();
        let sol = solve_market(&case, &tiny_samples(ns, nt), &p, &settings).unwrap();
        let eq = sol.equilibrium.unwrap();
        // strong duality turns the bilinear payment into a linear expression; both must agree
        assert!(
            (eq.objective - eq.operator_cost).abs() < 1e-4 * eq.operator_cost.abs().max(1.0),
            "{} vs {}",
            eq.objective,
            eq.operator_cost
        );
    }

    #[test]
    fn standalone_microgrid_matches_hand_solution() {
        // with γ = 0 no reserve can be offered, so ps minimizes m (Δt ps)² + Δt π (load − ps)
        let case = {
            let mut c = tiny_case(1, 1);
            c.microgrids[0].gamma = 0.0;
            c
        };
        let samples = tiny_samples(3, 1);
        let mut program = ConicProgram::new();
        let links = MicrogridLinks::standalone(&mut program, 0, &[3.0], &[0.0]);
        let mg = build_microgrid_model(&mut program, &case, &samples, 0, &params(None), &links).unwrap();
        let (alone, map) = mg.lower.standalone(&program, &[]).unwrap();
        let sol = solve_convex(&alone, &SolverSettings::default()).unwrap();
        let ps = sol.value(map[&mg.ps[0]]);
        let m = &case.microgrids[0];
        let expect = (0.5 * 3.0 / (2.0 * m.cost_quadratic * 0.25)).clamp(-m.p_min, m.p_max);
        assert!((ps - expect).abs() < 1e-5, "{ps} vs {expect}");
    }
}
