//! Follower problems as data: their variables, cost, and constraint rows. From this the
//! KKT system is derived mechanically, complementarity is linearized with big-M binaries,
//! and standalone copies can be re-solved at frozen prices.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::program::{ComplementarityLink, ConeId, ConicProgram, LinExpr, RowId, Sense, VarId};

/// `min Σ q_j x_j² + Σ c_j x_j` over follower variables `x`, where each `c_j` is an affine
/// expression in leader variables (prices), subject to rows owned by the follower.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LowerLevel {
    pub name: String,
    pub vars: Vec<VarId>,
    pub quadratic: BTreeMap<VarId, f64>,
    pub linear: BTreeMap<VarId, LinExpr>,
    pub rows: Vec<RowId>,
    pub cones: Vec<ConeId>,
}

/// A row written as `g(x) ≥ 0` or `g(x) = 0`, with `g` affine in follower variables.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalRow {
    pub g: LinExpr,
    pub equality: bool,
}

pub fn canonical(program: &ConicProgram, row: RowId) -> CanonicalRow {
    let c = program.constraint(row);
    let mut g = LinExpr {
        terms: c.terms.clone(),
        constant: -c.rhs,
    };
    if c.sense == Sense::Le {
        g = g.scaled(-1.0);
    }
    CanonicalRow {
        g,
        equality: c.sense == Sense::Eq,
    }
}

/// Multipliers and rows created by [`derive_kkt`].
#[derive(Clone, Debug, PartialEq)]
pub struct KktSystem {
    /// One multiplier per follower row, in the order of [`LowerLevel::rows`].
    pub duals: Vec<VarId>,
    /// One stationarity row per follower variable, in the order of [`LowerLevel::vars`].
    pub stationarity: Vec<RowId>,
    pub pairs: Vec<ComplementarityPair>,
}

/// `0 ≤ slack ⟂ dual ≥ 0`
#[derive(Clone, Debug, PartialEq)]
pub struct ComplementarityPair {
    pub name: String,
    pub slack: LinExpr,
    pub dual: VarId,
}

impl LowerLevel {
    pub fn new(name: impl Into<String>) -> Self {
        LowerLevel {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_var(&mut self, v: VarId) {
        self.vars.push(v);
    }

    pub fn add_quadratic(&mut self, v: VarId, q: f64) {
        *self.quadratic.entry(v).or_insert(0.0) += q;
    }

    pub fn add_linear(&mut self, v: VarId, c: LinExpr) {
        let e = self.linear.entry(v).or_default();
        *e += c;
    }

    /// Follower cost evaluated at a full program point.
    pub fn cost(&self, x: &[f64]) -> f64 {
        self.quadratic.iter().map(|(v, q)| q * x[v.0] * x[v.0]).sum::<f64>()
            + self.linear.iter().map(|(v, c)| c.eval(x) * x[v.0]).sum::<f64>()
    }

    /// Dual objective of the follower QP at `(x, y)`: `−Σ q_j x_j² − Σ_k y_k g_k(0)`.
    /// Equals the primal cost whenever `(x, y)` satisfies the KKT system.
    pub fn dual_objective(&self, program: &ConicProgram, kkt: &KktSystem, x: &[f64]) -> f64 {
        let quad: f64 = self.quadratic.iter().map(|(v, q)| q * x[v.0] * x[v.0]).sum();
        let lin: f64 = self
            .rows
            .iter()
            .zip(&kkt.duals)
            .map(|(&r, &y)| x[y.0] * canonical(program, r).g.constant)
            .sum();
        -quad - lin
    }

    /// Builds a copy of the follower problem with prices frozen at the values in `x`.
    /// Returns the program and the map from original to new variable handles.
    pub fn standalone(&self, program: &ConicProgram, x: &[f64]) -> Result<(ConicProgram, BTreeMap<VarId, VarId>)> {
        let mut p = ConicProgram::new();
        let mut map = BTreeMap::new();
        for &v in &self.vars {
            let var = program.var(v);
            map.insert(v, p.add_continuous(var.name.clone(), var.lower, var.upper));
        }
        let remap = |e: &LinExpr, map: &BTreeMap<VarId, VarId>| -> Result<LinExpr> {
            let mut out = LinExpr::constant(e.constant);
            for &(v, c) in &e.terms {
                let nv = map.get(&v).ok_or_else(|| {
                    Error::Program(format!(
                        "follower row references leader variable {}",
                        program.var(v).name
                    ))
                })?;
                out.add_term(*nv, c);
            }
            Ok(out)
        };
        for &r in &self.rows {
            let c = program.constraint(r);
            let e = remap(
                &LinExpr {
                    terms: c.terms.clone(),
                    constant: 0.0,
                },
                &map,
            )?;
            p.add_constraint(c.name.clone(), e, c.sense, c.rhs);
        }
        for &k in &self.cones {
            let cone = &program.cones[k.0];
            let vector = cone.vector.iter().map(|e| remap(e, &map)).collect::<Result<_>>()?;
            p.add_soc(cone.name.clone(), vector, remap(&cone.bound, &map)?);
        }
        for (v, &q) in &self.quadratic {
            p.add_quadratic_cost(map[v], q);
        }
        for (v, c) in &self.linear {
            p.add_linear_cost(map[v], c.eval(x));
        }
        Ok((p, map))
    }
}

/// Adds multipliers, stationarity rows and complementarity pairs of a polyhedral follower.
///
/// With rows `g_k(x) ≥ 0` (multiplier `y_k ≥ 0`) and `h_k(x) = 0` (free `y_k`), stationarity
/// reads `2 q_j x_j + c_j − Σ_k y_k ∂g_k/∂x_j = 0` for every follower variable.
pub fn derive_kkt(program: &mut ConicProgram, lower: &LowerLevel) -> Result<KktSystem> {
    if !lower.cones.is_empty() {
        return Err(Error::Program(format!(
            "{}: conic follower constraints admit no big-M complementarity; use a polyhedral ground metric",
            lower.name
        )));
    }
    for &v in &lower.vars {
        let var = program.var(v);
        if var.lower.is_finite() || var.upper.is_finite() {
            return Err(Error::Program(format!(
                "follower variable {} carries bounds; write them as rows so they get multipliers",
                var.name
            )));
        }
    }
    let rows: Vec<CanonicalRow> = lower.rows.iter().map(|&r| canonical(program, r)).collect();
    let mut duals = Vec::with_capacity(rows.len());
    let mut pairs = Vec::new();
    for (k, (&r, row)) in lower.rows.iter().zip(&rows).enumerate() {
        let name = format!("{}.mu[{}]", lower.name, program.constraint(r).name);
        let y = if row.equality {
            program.add_free(name)
        } else {
            program.add_nonneg(name)
        };
        duals.push(y);
        if !row.equality {
            pairs.push(ComplementarityPair {
                name: format!("{}.cs[{k}]", lower.name),
                slack: row.g.clone(),
                dual: y,
            });
        }
    }
    let mut stationarity = Vec::with_capacity(lower.vars.len());
    for &v in &lower.vars {
        let mut e = LinExpr::new();
        if let Some(&q) = lower.quadratic.get(&v) {
            e.add_term(v, 2.0 * q);
        }
        if let Some(c) = lower.linear.get(&v) {
            e += c.clone();
        }
        for (row, &y) in rows.iter().zip(&duals) {
            let a: f64 = row.g.terms.iter().filter(|(u, _)| *u == v).map(|(_, c)| c).sum();
            if a != 0.0 {
                e.add_term(y, -a);
            }
        }
        let name = format!("{}.stat[{}]", lower.name, program.var(v).name);
        stationarity.push(program.add_constraint(name, e, Sense::Eq, 0.0));
    }
    Ok(KktSystem {
        duals,
        stationarity,
        pairs,
    })
}

/// Replaces each pair by `slack ≤ M·U`, `dual ≤ M·(1 − U)` with a fresh binary `U`.
/// The nonnegativity of both sides is already part of the program.
pub fn apply_big_m(program: &mut ConicProgram, pairs: &[ComplementarityPair], big_m: f64) -> Result<Vec<VarId>> {
    if !(big_m > 0.0 && big_m.is_finite()) {
        return Err(Error::Config(format!("big-M must be positive, got {big_m}")));
    }
    let mut binaries = Vec::with_capacity(pairs.len());
    for p in pairs {
        let u = program.add_binary(format!("{}.u", p.name));
        program.add_constraint(
            format!("{}.bigm_slack", p.name),
            p.slack.clone() - u * big_m,
            Sense::Le,
            0.0,
        );
        program.add_constraint(
            format!("{}.bigm_dual", p.name),
            LinExpr::from(p.dual) + u * big_m,
            Sense::Le,
            big_m,
        );
        program.add_link(ComplementarityLink {
            name: p.name.clone(),
            binary: u,
            slack: p.slack.clone(),
            dual: p.dual,
        });
        binaries.push(u);
    }
    Ok(binaries)
}
