//! Wasserstein ambiguity sets: the worst-case expected shortfall penalty of a microgrid,
//! the worst-case CVaR form of an individual reserve-delivery chance constraint, and exact
//! optimal-transport distances between empirical distributions.

use serde::{Deserialize, Serialize};

use crate::data::ErrorSampleMatrix;
use crate::error::{Error, Result};
use crate::program::{ConeId, ConicProgram, LinExpr, RowId, Sense, VarId};

/// Ground metric of the transport cost between two error trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMetric {
    #[default]
    Euclidean,
    /// Sum of per-period deviations; its dual norm is the max-norm.
    L1,
    /// Largest per-period deviation; its dual norm is the sum of magnitudes.
    LInf,
}

impl GroundMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let d = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            GroundMetric::Euclidean => d.map(|v| v * v).sum::<f64>().sqrt(),
            GroundMetric::L1 => d.sum(),
            GroundMetric::LInf => d.fold(0.0, f64::max),
        }
    }

    pub fn dual_norm(self, v: &[f64]) -> f64 {
        match self {
            GroundMetric::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            GroundMetric::L1 => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            GroundMetric::LInf => v.iter().map(|x| x.abs()).sum(),
        }
    }

    /// True when the dual-norm bound can be written with linear rows only.
    pub fn is_polyhedral(self) -> bool {
        !matches!(self, GroundMetric::Euclidean)
    }
}

/// Wasserstein ball of radius `radius` around the empirical distribution of `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbiguitySet {
    pub center: ErrorSampleMatrix,
    pub radius: f64,
    pub metric: GroundMetric,
}

impl AmbiguitySet {
    pub fn new(center: ErrorSampleMatrix, radius: f64, metric: GroundMetric) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("radius must be nonnegative, got {radius}")));
        }
        Ok(AmbiguitySet { center, radius, metric })
    }

    /// Worst-case expectation of the linear loss `a·ζ` over the ball: `mean(a·ζ) + ν‖a‖_*`.
    pub fn worst_case_linear(&self, a: &[f64]) -> f64 {
        let n = self.center.n_samples() as f64;
        let mean = self
            .center
            .rows()
            .iter()
            .map(|r| r.iter().zip(a).map(|(z, c)| z * c).sum::<f64>())
            .sum::<f64>()
            / n;
        mean + self.radius * self.metric.dual_norm(a)
    }
}

/// Exact 1-Wasserstein distance between two uniform empirical distributions.
pub fn wasserstein_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    wasserstein_distance_with(a, b, GroundMetric::Euclidean)
}

pub fn wasserstein_distance_with(a: &[Vec<f64>], b: &[Vec<f64>], metric: GroundMetric) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Dimension("both sample sets must be non-empty".into()));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != d) {
        return Err(Error::Dimension("sample sets must share one column dimension".into()));
    }
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| metric.distance(x, y)).collect())
        .collect();
    let (m, n) = (a.len(), b.len());
    let flow_cost = min_cost_transport(&cost, &vec![n as i64; m], &vec![m as i64; n]);
    Ok(flow_cost / (m * n) as f64)
}

/// Balanced transportation problem by successive shortest paths with Dijkstra potentials.
fn min_cost_transport(cost: &[Vec<f64>], supply: &[i64], demand: &[i64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut flow = vec![vec![0i64; n]; m];
    // potentials: sources 0..m, sinks m..m+n
    let mut pot = vec![0.0f64; m + n];
    let inf = f64::INFINITY;
    loop {
        if sup.iter().all(|&s| s == 0) {
            break;
        }
        let mut dist = vec![inf; m + n];
        let mut parent = vec![usize::MAX; m + n];
        let mut done = vec![false; m + n];
        for i in 0..m {
            if sup[i] > 0 {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            for v in 0..m + n {
                if !done[v] && dist[v] < inf && (u == usize::MAX || dist[v] < dist[u]) {
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < m {
                for j in 0..n {
                    let rc = cost[u][j] + pot[u] - pot[m + j];
                    let nd = dist[u] + rc.max(0.0);
                    if nd < dist[m + j] {
                        dist[m + j] = nd;
                        parent[m + j] = u;
                    }
                }
            } else {
                let j = u - m;
                for i in 0..m {
                    if flow[i][j] > 0 {
                        let rc = -cost[i][j] + pot[u] - pot[i];
                        let nd = dist[u] + rc.max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            parent[i] = u;
                        }
                    }
                }
            }
        }
        let target = (0..n)
            .filter(|&j| dem[j] > 0 && dist[m + j] < inf)
            .min_by(|&x, &y| dist[m + x].total_cmp(&dist[m + y]))
            .expect("balanced transport always has an augmenting path");
        let dt = dist[m + target];
        for v in 0..m + n {
            pot[v] += dist[v].min(dt);
        }
        // walk back to the originating source, collecting the bottleneck
        let mut bottleneck = dem[target];
        let mut v = m + target;
        while parent[v] != usize::MAX {
            let p = parent[v];
            if v < m {
                bottleneck = bottleneck.min(flow[v][p - m]);
            }
            v = p;
        }
        bottleneck = bottleneck.min(sup[v]);
        sup[v] -= bottleneck;
        dem[target] -= bottleneck;
        let mut v = m + target;
        while parent[v] != usize::MAX {
            let p = parent[v];
            if v >= m {
                flow[p][v - m] += bottleneck;
            } else {
                flow[v][p - m] -= bottleneck;
            }
            v = p;
        }
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            total += flow[i][j] as f64 * cost[i][j];
        }
    }
    total
}

/// Individual-rate interval `[ε^jot/N_MG, ε^jot]` allowed by Boole's inequality.
pub fn bonferroni_bounds(eps_joint: f64, n_mg: usize) -> Result<(f64, f64)> {
    if !(eps_joint > 0.0 && eps_joint < 1.0) {
        return Err(Error::Config(format!("joint rate must lie in (0, 1), got {eps_joint}")));
    }
    if n_mg == 0 {
        return Err(Error::Config("need at least one microgrid".into()));
    }
    Ok((eps_joint / n_mg as f64, eps_joint))
}

/// Spacing of an `n_grid`-point grid spanning the Bonferroni interval.
pub fn grid_spacing(eps_joint: f64, n_mg: usize, n_grid: usize) -> Result<f64> {
    let (lo, hi) = bonferroni_bounds(eps_joint, n_mg)?;
    if n_grid < 2 {
        return Ok(0.0);
    }
    Ok((hi - lo) / (n_grid - 1) as f64)
}

/// How the dual-norm bound `‖a‖_* ≤ l` was written into the program.
#[derive(Clone, Debug, PartialEq)]
pub enum NormBound {
    /// `‖a‖₂ ≤ l`
    Cone(ConeId),
    /// Linear rows `l ∓ a_t ≥ 0`.
    MaxNorm(Vec<RowId>),
    /// Linear rows `u_t ∓ a_t ≥ 0` and `l − Σu_t ≥ 0`.
    SumNorm { aux: Vec<VarId>, rows: Vec<RowId> },
}

impl NormBound {
    pub fn rows(&self) -> Vec<RowId> {
        match self {
            NormBound::Cone(_) => Vec::new(),
            NormBound::MaxNorm(r) => r.clone(),
            NormBound::SumNorm { rows, .. } => rows.clone(),
        }
    }

    pub fn aux(&self) -> &[VarId] {
        match self {
            NormBound::SumNorm { aux, .. } => aux,
            _ => &[],
        }
    }
}

fn emit_norm_bound(
    program: &mut ConicProgram,
    prefix: &str,
    a: &[LinExpr],
    l: VarId,
    metric: GroundMetric,
    aux_lower: f64,
) -> NormBound {
    match metric {
        GroundMetric::Euclidean => NormBound::Cone(program.add_soc(format!("{prefix}.norm"), a.to_vec(), l.into())),
        GroundMetric::L1 => {
            let mut rows = Vec::new();
            for (t, at) in a.iter().enumerate() {
                rows.push(program.add_constraint(
                    format!("{prefix}.norm_lo[{t}]"),
                    LinExpr::from(l) - at.clone(),
                    Sense::Ge,
                    0.0,
                ));
                rows.push(program.add_constraint(
                    format!("{prefix}.norm_hi[{t}]"),
                    LinExpr::from(l) + at.clone(),
                    Sense::Ge,
                    0.0,
                ));
            }
            NormBound::MaxNorm(rows)
        }
        GroundMetric::LInf => {
            let mut rows = Vec::new();
            let mut aux = Vec::new();
            let mut sum = LinExpr::from(l);
            for (t, at) in a.iter().enumerate() {
                let u = program.add_continuous(format!("{prefix}.u[{t}]"), aux_lower, f64::INFINITY);
                rows.push(program.add_constraint(
                    format!("{prefix}.norm_lo[{t}]"),
                    LinExpr::from(u) - at.clone(),
                    Sense::Ge,
                    0.0,
                ));
                rows.push(program.add_constraint(
                    format!("{prefix}.norm_hi[{t}]"),
                    LinExpr::from(u) + at.clone(),
                    Sense::Ge,
                    0.0,
                ));
                sum.add_term(u, -1.0);
                aux.push(u);
            }
            rows.push(program.add_constraint(format!("{prefix}.norm_sum"), sum, Sense::Ge, 0.0));
            NormBound::SumNorm { aux, rows }
        }
    }
}

fn check_samples(samples: &ErrorSampleMatrix, reserve: &[VarId]) -> Result<()> {
    if reserve.len() != samples.n_periods() {
        return Err(Error::Dimension(format!(
            "{} reserve handles for {} sample periods",
            reserve.len(),
            samples.n_periods()
        )));
    }
    Ok(())
}

/// `Δt Σ_t ζ_{s,t} R_t · scale` for sample `s`.
fn sample_loss(samples: &ErrorSampleMatrix, s: usize, reserve: &[VarId], dt: f64, scale: f64) -> LinExpr {
    let mut e = LinExpr::new();
    for (t, &r) in reserve.iter().enumerate() {
        e.add_term(r, dt * samples.get(s, t) * scale);
    }
    e
}

/// Auxiliary variables and rows of a microgrid's worst-case shortfall penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct DroPenaltyBlock {
    pub microgrid: usize,
    pub l: VarId,
    pub w: Vec<VarId>,
    /// `W_s − Δt V ζ_s·R ≥ 0`, one per sample.
    pub sample_rows: Vec<RowId>,
    pub norm: NormBound,
    /// Linear objective terms this block added.
    pub objective: Vec<(VarId, f64)>,
    pub radius: f64,
}

impl DroPenaltyBlock {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * x[v.0]).sum()
    }

    /// Every variable owned by the block.
    pub fn variables(&self) -> Vec<VarId> {
        let mut v = vec![self.l];
        v.extend(&self.w);
        v.extend(self.norm.aux());
        v
    }

    /// Every linear row owned by the block.
    pub fn rows(&self) -> Vec<RowId> {
        let mut r = self.sample_rows.clone();
        r.extend(self.norm.rows());
        r
    }
}

/// Adds `ν l + 1ᵀW/N_S` to the objective together with the rows that make it equal the
/// worst-case expected load-shedding cost `sup E[Δt V ζ·R]` at the optimum. All block
/// variables are free and every restriction is a row, so the block can sit in a lower level.
#[allow(clippy::too_many_arguments)]
pub fn emit_dro_penalty(
    program: &mut ConicProgram,
    samples: &ErrorSampleMatrix,
    reserve: &[VarId],
    voll: f64,
    radius: f64,
    dt: f64,
    metric: GroundMetric,
    microgrid: usize,
) -> Result<DroPenaltyBlock> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("radius must be nonnegative, got {radius}")));
    }
    check_samples(samples, reserve)?;
    let p = format!("mg{microgrid}.dro");
    let ns = samples.n_samples();
    let l = program.add_free(format!("{p}.l"));
    let mut w = Vec::with_capacity(ns);
    let mut sample_rows = Vec::with_capacity(ns);
    for s in 0..ns {
        let ws = program.add_free(format!("{p}.w[{s}]"));
        let row = LinExpr::from(ws) - sample_loss(samples, s, reserve, dt, voll);
        sample_rows.push(program.add_constraint(format!("{p}.sample[{s}]"), row, Sense::Ge, 0.0));
        w.push(ws);
    }
    let a: Vec<LinExpr> = reserve.iter().map(|&r| LinExpr::term(r, dt * voll)).collect();
    let norm = emit_norm_bound(program, &p, &a, l, metric, f64::NEG_INFINITY);
    let mut objective = vec![(l, radius)];
    objective.extend(w.iter().map(|&ws| (ws, 1.0 / ns as f64)));
    for &(v, c) in &objective {
        program.add_linear_cost(v, c);
    }
    Ok(DroPenaltyBlock {
        microgrid,
        l,
        w,
        sample_rows,
        norm,
        objective,
        radius,
    })
}

/// Auxiliary variables and rows of one microgrid's worst-case CVaR delivery constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct DrccBlock {
    pub microgrid: usize,
    pub eta: VarId,
    pub l: VarId,
    pub w: Vec<VarId>,
    /// `−η − (νl + 1ᵀW/N_S)/ε ≥ 0`
    pub cvar_row: RowId,
    /// `W_s − Δt ζ_s·R + R̄ + η ≥ 0`, one per sample.
    pub sample_rows: Vec<RowId>,
    pub norm: NormBound,
    pub epsilon: f64,
    pub r_fup: f64,
}

/// Adds the convex inner approximation of
/// `inf_P P(Δt ζ·R ≤ R̄) ≥ 1 − ε` over the Wasserstein ball.
#[allow(clippy::too_many_arguments)]
pub fn emit_drcc(
    program: &mut ConicProgram,
    samples: &ErrorSampleMatrix,
    reserve: &[VarId],
    epsilon: f64,
    r_fup: f64,
    radius: f64,
    dt: f64,
    metric: GroundMetric,
    microgrid: usize,
) -> Result<DrccBlock> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "individual violation rate must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("radius must be nonnegative, got {radius}")));
    }
    check_samples(samples, reserve)?;
    let p = format!("mg{microgrid}.drcc");
    let ns = samples.n_samples();
    let eta = program.add_free(format!("{p}.eta"));
    let l = program.add_nonneg(format!("{p}.l"));
    let w: Vec<VarId> = (0..ns).map(|s| program.add_nonneg(format!("{p}.w[{s}]"))).collect();
    let mut cvar = LinExpr::term(eta, -1.0).with_term(l, -radius / epsilon);
    for &ws in &w {
        cvar.add_term(ws, -1.0 / (epsilon * ns as f64));
    }
    let cvar_row = program.add_constraint(format!("{p}.cvar"), cvar, Sense::Ge, 0.0);
    let sample_rows = (0..ns)
        .map(|s| {
            let row = LinExpr::from(w[s]) - sample_loss(samples, s, reserve, dt, 1.0) + LinExpr::from(eta);
            program.add_constraint(format!("{p}.sample[{s}]"), row, Sense::Ge, -r_fup)
        })
        .collect();
    let a: Vec<LinExpr> = reserve.iter().map(|&r| LinExpr::term(r, dt)).collect();
    let norm = emit_norm_bound(program, &p, &a, l, metric, 0.0);
    Ok(DrccBlock {
        microgrid,
        eta,
        l,
        w,
        cvar_row,
        sample_rows,
        norm,
        epsilon,
        r_fup,
    })
}

/// Worst-case CVaR margin of a fixed reserve schedule: the constraint holds iff the result is
/// `≤ 0`. Minimizes the piecewise-linear function of η exactly over its breakpoints.
pub fn drcc_margin(
    samples: &ErrorSampleMatrix,
    reserve: &[f64],
    epsilon: f64,
    r_fup: f64,
    radius: f64,
    dt: f64,
    metric: GroundMetric,
) -> f64 {
    let ns = samples.n_samples() as f64;
    let excess: Vec<f64> = samples
        .rows()
        .iter()
        .map(|z| dt * z.iter().zip(reserve).map(|(a, b)| a * b).sum::<f64>() - r_fup)
        .collect();
    let a: Vec<f64> = reserve.iter().map(|r| dt * r).collect();
    let lip = radius * metric.dual_norm(&a);
    let f = |eta: f64| eta + (lip + excess.iter().map(|e| (e - eta).max(0.0)).sum::<f64>() / ns) / epsilon;
    excess.iter().map(|&e| f(e)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_samples;
    use crate::solver::{solve_convex, SolveStatus, SolverSettings};
    use proptest::prelude::*;

    fn m(rows: Vec<Vec<f64>>) -> ErrorSampleMatrix {
        let nt = rows[0].len();
        ErrorSampleMatrix::new(rows, (0..nt).map(|t| format!("t{t}")).collect(), 0.5).unwrap()
    }

    #[test]
    fn distance_basics() {
        let a = vec![vec![0.0, 1.0], vec![2.0, 0.5]];
        assert_eq!(wasserstein_distance(&a, &a).unwrap(), 0.0);
        assert!((wasserstein_distance(&[vec![0.0]], &[vec![0.3]]).unwrap() - 0.3).abs() < 1e-15);
        assert!(wasserstein_distance(&a, &[vec![1.0, 1.0]]).is_ok());
        assert!(wasserstein_distance(&a, &[vec![1.0, 2.0, 3.0]]).is_err());
        assert!(wasserstein_distance(&[], &a).is_err());
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn four_point_sets_match_assignment_enumeration() {
        let a = generate_synthetic_samples(1, 4, 3, 0.3).unwrap();
        let b = generate_synthetic_samples(2, 4, 3, 0.3).unwrap();
        for metric in [GroundMetric::Euclidean, GroundMetric::L1, GroundMetric::LInf] {
            let brute = permutations(4)
                .iter()
                .map(|p| (0..4).map(|i| metric.distance(a.row(i), b.row(p[i]))).sum::<f64>() / 4.0)
                .fold(f64::INFINITY, f64::min);
            let w = wasserstein_distance_with(a.rows(), b.rows(), metric).unwrap();
            assert!((w - brute).abs() < 1e-12, "{metric:?}: {w} vs {brute}");
        }
    }

    #[test]
    fn unequal_sizes_split_mass() {
        // two atoms at 0 and 1 against one atom at 0: half the mass moves distance 1
        let w = wasserstein_distance(&[vec![0.0], vec![1.0]], &[vec![0.0]]).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
        // one-dimensional distributions: W1 is the area between the quantile functions
        let a: Vec<Vec<f64>> = [0.1, 0.4, 0.9].iter().map(|&v| vec![v]).collect();
        let b: Vec<Vec<f64>> = [0.0, 0.5].iter().map(|&v| vec![v]).collect();
        // quantiles on a 1/6 grid: a = .1,.1,.4,.4,.9,.9 ; b = 0,0,0,.5,.5,.5
        let expect = (0.1 + 0.1 + 0.4 + 0.1 + 0.4 + 0.4) / 6.0;
        assert!((wasserstein_distance(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000, n1 in 1usize..6, n2 in 1usize..6, n3 in 1usize..6) {
            let a = generate_synthetic_samples(s1, n1, 2, 0.3).unwrap();
            let b = generate_synthetic_samples(s2, n2, 2, 0.3).unwrap();
            let c = generate_synthetic_samples(s3, n3, 2, 0.3).unwrap();
            let ab = wasserstein_distance(a.rows(), b.rows()).unwrap();
            let ba = wasserstein_distance(b.rows(), a.rows()).unwrap();
            let bc = wasserstein_distance(b.rows(), c.rows()).unwrap();
            let ac = wasserstein_distance(a.rows(), c.rows()).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn bonferroni_and_spacing() {
        assert_eq!(bonferroni_bounds(0.2, 1).unwrap(), (0.2, 0.2));
        let (lo, hi) = bonferroni_bounds(0.2, 10).unwrap();
        assert!((lo - 0.02).abs() < 1e-15 && hi == 0.2);
        let (lo, _) = bonferroni_bounds(0.2, 7).unwrap();
        assert!((lo * 7.0 - 0.2).abs() < 1e-15);
        assert!((grid_spacing(0.2, 4, 20).unwrap() - 0.6 / 76.0).abs() < 1e-15);
        assert!(bonferroni_bounds(1.0, 3).is_err());
    }

    /// Fixes the reserve variables to `r`, solves, and returns the block's contribution.
    fn penalty_at(samples: &ErrorSampleMatrix, r: &[f64], voll: f64, radius: f64, metric: GroundMetric) -> f64 {
        let mut p = ConicProgram::new();
        let rv: Vec<VarId> = r
            .iter()
            .enumerate()
            .map(|(t, &v)| p.add_continuous(format!("r{t}"), v, v))
            .collect();
        let block = emit_dro_penalty(&mut p, samples, &rv, voll, radius, samples.delta_t, metric, 0).unwrap();
        let s = solve_convex(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        block.value(&s.primal)
    }

    #[test]
    fn penalty_single_sample_saa() {
        let s = m(vec![vec![0.1]]);
        assert!((penalty_at(&s, &[1.0], 1.0, 0.0, GroundMetric::Euclidean) - 0.05).abs() < 1e-7);
        assert!(penalty_at(&s, &[0.0], 1.0, 0.0, GroundMetric::LInf).abs() < 1e-7);
        assert!(penalty_at(&s, &[0.0], 1.0, 0.035, GroundMetric::L1).abs() < 1e-7);
    }

    #[test]
    fn penalty_matches_closed_form_for_every_metric() {
        let s = generate_synthetic_samples(5, 10, 3, 0.2).unwrap();
        let r = [0.8, 1.2, 0.3];
        for metric in [GroundMetric::Euclidean, GroundMetric::L1, GroundMetric::LInf] {
            for nu in [0.0, 0.01, 0.035, 0.1] {
                let got = penalty_at(&s, &r, 2.0, nu, metric);
                let a: Vec<f64> = r.iter().map(|v| v * s.delta_t * 2.0).collect();
                let want = AmbiguitySet::new(s.clone(), nu, metric).unwrap().worst_case_linear(&a);
                assert!((got - want).abs() < 1e-6, "{metric:?} nu={nu}: {got} vs {want}");
            }
        }
    }

    /// Worst-case expectation by a primal LP over transport plans to a discretized support:
    /// each sample may move its mass to grid points, total transport cost ≤ ν.
    fn transport_lp_oracle(samples: &ErrorSampleMatrix, r: f64, voll: f64, radius: f64) -> f64 {
        let grid: Vec<f64> = (0..=400).map(|k| -1.0 + k as f64 * 0.005).collect();
        let ns = samples.n_samples();
        let mut p = ConicProgram::new();
        let mut budget = LinExpr::new();
        for s in 0..ns {
            let z = samples.get(s, 0);
            let mut mass = LinExpr::new();
            for (c, &g) in grid.iter().enumerate() {
                let pi = p.add_nonneg(format!("pi[{s},{c}]"));
                mass.add_term(pi, 1.0);
                budget.add_term(pi, (g - z).abs());
                p.add_linear_cost(pi, -(samples.delta_t * g * r * voll));
            }
            p.add_constraint(format!("mass[{s}]"), mass, Sense::Eq, 1.0 / ns as f64);
        }
        p.add_constraint("budget", budget, Sense::Le, radius);
        let sol = solve_convex(&p, &SolverSettings::default()).unwrap();
        -sol.objective
    }

    #[test]
    fn penalty_matches_transport_lp() {
        let s = generate_synthetic_samples(9, 10, 1, 0.2).unwrap();
        let got = penalty_at(&s, &[1.3], 1.0, 0.035, GroundMetric::Euclidean);
        let want = transport_lp_oracle(&s, 1.3, 1.0, 0.035);
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        let saa = penalty_at(&s, &[1.3], 1.0, 0.0, GroundMetric::Euclidean);
        assert!(got >= saa);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn penalty_saa_limit_and_monotone(seed in 0u64..500, r0 in 0.0f64..3.0, r1 in 0.0f64..3.0) {
            let s = generate_synthetic_samples(seed, 6, 2, 0.3).unwrap();
            let r = [r0, r1];
            let saa: f64 = s.rows().iter().map(|z| 0.5 * (z[0] * r0 + z[1] * r1)).sum::<f64>() / 6.0;
            let p0 = penalty_at(&s, &r, 1.0, 0.0, GroundMetric::LInf);
            prop_assert!((p0 - saa).abs() < 1e-6);
            let p1 = penalty_at(&s, &r, 1.0, 0.02, GroundMetric::LInf);
            let p2 = penalty_at(&s, &r, 1.0, 0.05, GroundMetric::LInf);
            prop_assert!(p1 >= p0 - 1e-6 && p2 >= p1 - 1e-6);
        }
    }

    #[test]
    fn drcc_rejects_bad_rates() {
        let s = m(vec![vec![0.1]]);
        let mut p = ConicProgram::new();
        let r = p.add_nonneg("r");
        for eps in [0.0, 1.0, -0.1] {
            assert!(emit_drcc(&mut p, &s, &[r], eps, 1.5, 0.0, 0.5, GroundMetric::Euclidean, 0).is_err());
        }
    }

    #[test]
    fn drcc_zero_bid_is_feasible_and_keeps_constants() {
        let s = generate_synthetic_samples(3, 8, 2, 0.2).unwrap();
        let mut p = ConicProgram::new();
        let r: Vec<VarId> = (0..2).map(|t| p.add_continuous(format!("r{t}"), 0.0, 0.0)).collect();
        let b = emit_drcc(&mut p, &s, &r, 0.2, 1.5, 0.035, 0.5, GroundMetric::Euclidean, 0).unwrap();
        assert_eq!((b.epsilon, b.r_fup), (0.2, 1.5));
        // the hand-picked point η = −R̄, W = 0, l = 0 satisfies every row
        let mut x = vec![0.0; p.num_vars()];
        x[b.eta.0] = -1.5;
        assert!(p.max_violation(&x) <= 0.0);
        assert_eq!(
            solve_convex(&p, &SolverSettings::default()).unwrap().status,
            SolveStatus::Optimal
        );
    }

    /// Largest scalar bid `r` (same in every period) the block admits, from an LP.
    fn max_bid_lp(s: &ErrorSampleMatrix, eps: f64, radius: f64, metric: GroundMetric) -> f64 {
        let mut p = ConicProgram::new();
        let r = p.add_nonneg("r");
        let rv: Vec<VarId> = (0..s.n_periods())
            .map(|t| {
                let v = p.add_free(format!("r{t}"));
                p.add_constraint(format!("tie{t}"), LinExpr::from(v) - LinExpr::from(r), Sense::Eq, 0.0);
                v
            })
            .collect();
        emit_drcc(&mut p, s, &rv, eps, 1.5, radius, s.delta_t, metric, 0).unwrap();
        p.add_linear_cost(r, -1.0);
        p.add_constraint("cap", LinExpr::from(r), Sense::Le, 1e3);
        let sol = solve_convex(&p, &SolverSettings::default()).unwrap();
        sol.value(r)
    }

    /// Same quantity by bisection on the exact margin function.
    fn max_bid_bisection(s: &ErrorSampleMatrix, eps: f64, radius: f64, metric: GroundMetric) -> f64 {
        let nt = s.n_periods();
        let ok = |r: f64| drcc_margin(s, &vec![r; nt], eps, 1.5, radius, s.delta_t, metric) <= 0.0;
        let (mut lo, mut hi) = (0.0, 1e3);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn drcc_max_bid_shrinks_with_rate_and_grows_with_nothing() {
        let s = generate_synthetic_samples(21, 30, 3, 0.3).unwrap();
        for metric in [GroundMetric::Euclidean, GroundMetric::LInf] {
            let mut last = f64::INFINITY;
            for eps in [0.2, 0.15, 0.1, 0.05] {
                let lp = max_bid_lp(&s, eps, 0.035, metric);
                let bis = max_bid_bisection(&s, eps, 0.035, metric);
                assert!(
                    (lp - bis).abs() < 1e-4 * bis.max(1.0),
                    "{metric:?} eps={eps}: {lp} vs {bis}"
                );
                assert!(bis <= last + 1e-9);
                last = bis;
            }
            let mut last = f64::INFINITY;
            for nu in [0.0, 0.01, 0.05, 0.1] {
                let bis = max_bid_bisection(&s, 0.2, nu, metric);
                assert!(bis <= last + 1e-9);
                last = bis;
            }
        }
    }
}
