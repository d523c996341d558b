//! Convex engine: maps a binary-free [`ConicProgram`] onto Clarabel's standard form
//! `min ½xᵀPx + qᵀx  s.t.  Ax + s = b, s ∈ K`, then re-checks the KKT conditions itself.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{SolutionPoint, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::program::{ConicProgram, Sense, VarKind};

/// Scaled KKT residuals of a convex solve, each a dimensionless max-norm.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual_cone: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual_cone)
            .max(self.stationarity)
            .max(self.complementarity)
    }
}

/// Where a row of the standard form came from, and how its multiplier maps back.
#[derive(Clone, Copy)]
enum Origin {
    Row { index: usize, flip: bool },
    Lower(usize),
    Upper(usize),
    Fixed(usize),
    Cone(usize),
}

struct Standard {
    a_rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    origin: Vec<Origin>,
    n_zero: usize,
    n_nonneg: usize,
    soc_dims: Vec<usize>,
}

/// Sparse coefficients, right-hand side and where the row came from.
type StdRow = (Vec<(usize, f64)>, f64, Origin);

fn to_standard(p: &ConicProgram) -> Standard {
    let mut zero: Vec<StdRow> = Vec::new();
    let mut nonneg: Vec<StdRow> = Vec::new();
    for (i, c) in p.constraints.iter().enumerate() {
        let terms: Vec<(usize, f64)> = c.terms.iter().map(|&(v, a)| (v.0, a)).collect();
        match c.sense {
            Sense::Eq => zero.push((terms, c.rhs, Origin::Row { index: i, flip: true })),
            Sense::Le => nonneg.push((terms, c.rhs, Origin::Row { index: i, flip: false })),
            Sense::Ge => nonneg.push((
                terms.into_iter().map(|(j, a)| (j, -a)).collect(),
                -c.rhs,
                Origin::Row { index: i, flip: false },
            )),
        }
    }
    for (j, v) in p.variables.iter().enumerate() {
        if v.lower == v.upper {
            zero.push((vec![(j, 1.0)], v.lower, Origin::Fixed(j)));
            continue;
        }
        if v.lower.is_finite() {
            nonneg.push((vec![(j, -1.0)], -v.lower, Origin::Lower(j)));
        }
        if v.upper.is_finite() {
            nonneg.push((vec![(j, 1.0)], v.upper, Origin::Upper(j)));
        }
    }
    let mut st = Standard {
        a_rows: Vec::new(),
        b: Vec::new(),
        origin: Vec::new(),
        n_zero: zero.len(),
        n_nonneg: nonneg.len(),
        soc_dims: Vec::new(),
    };
    for (row, b, o) in zero.into_iter().chain(nonneg) {
        st.a_rows.push(row);
        st.b.push(b);
        st.origin.push(o);
    }
    for (k, cone) in p.cones.iter().enumerate() {
        st.soc_dims.push(cone.vector.len() + 1);
        for e in std::iter::once(&cone.bound).chain(&cone.vector) {
            let m = e.merged();
            st.a_rows.push(m.terms.iter().map(|&(v, a)| (v.0, -a)).collect());
            st.b.push(m.constant);
            st.origin.push(Origin::Cone(k));
        }
    }
    st
}

/// Solves a program whose binaries are all fixed or relaxed.
pub fn solve_convex(program: &ConicProgram, settings: &SolverSettings) -> Result<SolutionPoint> {
    settings.validate()?;
    if let Some(d) = program.validate().first() {
        return Err(Error::Program(d.to_string()));
    }
    if let Some(v) = program.variables.iter().find(|v| v.kind == VarKind::Binary) {
        return Err(Error::Program(format!(
            "binary variable {} must be fixed or relaxed before a convex solve",
            v.name
        )));
    }
    let n = program.num_vars();
    let st = to_standard(program);
    let m = st.b.len();

    let mut q = vec![0.0; n];
    let mut pdiag = vec![0.0; n];
    for &(v, c) in &program.objective.linear {
        q[v.0] += c;
    }
    for &(v, c) in &program.objective.quadratic {
        pdiag[v.0] += 2.0 * c;
    }

    if n == 0 {
        let ok = st.b.iter().zip(&st.origin).all(|(&b, _)| b >= -settings.feas_tol);
        return Ok(SolutionPoint {
            primal: vec![],
            duals: vec![0.0; program.constraints.len()],
            bound_duals: vec![],
            cone_duals: program.cones.iter().map(|c| vec![0.0; c.vector.len() + 1]).collect(),
            objective: program.objective.constant,
            status: if ok {
                SolveStatus::Optimal
            } else {
                SolveStatus::Infeasible
            },
            residuals: KktResiduals::default(),
        });
    }

    let (pi, pv): (Vec<usize>, Vec<f64>) = pdiag
        .iter()
        .enumerate()
        .filter(|(_, &d)| d != 0.0)
        .map(|(i, &d)| (i, d))
        .unzip();
    let pmat = CscMatrix::new_from_triplets(n, n, pi.clone(), pi, pv);
    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    for (r, row) in st.a_rows.iter().enumerate() {
        for &(j, a) in row {
            ai.push(r);
            aj.push(j);
            av.push(a);
        }
    }
    let amat = CscMatrix::new_from_triplets(m, n, ai, aj, av);
    let mut cones = Vec::new();
    if st.n_zero > 0 {
        cones.push(SupportedConeT::ZeroConeT(st.n_zero));
    }
    if st.n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(st.n_nonneg));
    }
    for &d in &st.soc_dims {
        cones.push(SupportedConeT::SecondOrderConeT(d));
    }
    let csettings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(settings.max_iter)
        .tol_gap_abs(settings.ipm_tol)
        .tol_gap_rel(settings.ipm_tol)
        .tol_feas(settings.ipm_tol)
        .equilibrate_enable(settings.equilibrate)
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&pmat, &q, &amat, &st.b, &cones, csettings)
        .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let x = sol.x.clone();
    let z = sol.z.clone();
    let residuals = kkt_residuals(&st, &pdiag, &q, &x, &z);
    let status = match sol.status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ if residuals.max() <= settings.feas_tol => SolveStatus::Optimal,
        _ => SolveStatus::ToleranceLimit,
    };

    let mut duals = vec![0.0; program.constraints.len()];
    let mut bound_duals = vec![0.0; n];
    let mut cone_duals: Vec<Vec<f64>> = program.cones.iter().map(|_| Vec::new()).collect();
    for (r, o) in st.origin.iter().enumerate() {
        match *o {
            Origin::Row { index, flip } => duals[index] = if flip { -z[r] } else { z[r] },
            Origin::Lower(j) => bound_duals[j] += z[r],
            Origin::Upper(j) => bound_duals[j] -= z[r],
            Origin::Fixed(j) => bound_duals[j] = -z[r],
            Origin::Cone(k) => cone_duals[k].push(z[r]),
        }
    }
    let objective = program.eval_objective(&x);
    Ok(SolutionPoint {
        primal: x,
        duals,
        bound_duals,
        cone_duals,
        objective,
        status,
        residuals,
    })
}

fn kkt_residuals(st: &Standard, pdiag: &[f64], q: &[f64], x: &[f64], z: &[f64]) -> KktResiduals {
    let n = x.len();
    let m = st.b.len();
    let mut res = KktResiduals::default();
    // s = b − Ax
    let mut s = st.b.clone();
    let mut grad: Vec<f64> = (0..n).map(|j| pdiag[j] * x[j] + q[j]).collect();
    let mut scale: Vec<f64> = grad.iter().map(|g| 1.0 + g.abs()).collect();
    for (r, row) in st.a_rows.iter().enumerate() {
        for &(j, a) in row {
            s[r] -= a * x[j];
            grad[j] += a * z[r];
            scale[j] += (a * z[r]).abs();
        }
    }
    res.stationarity = grad.iter().zip(&scale).map(|(g, sc)| g.abs() / sc).fold(0.0, f64::max);

    let rel = |v: f64, r: usize| v / (1.0 + st.b[r].abs());
    for r in 0..st.n_zero {
        res.primal = res.primal.max(rel(s[r].abs(), r));
    }
    for r in st.n_zero..st.n_zero + st.n_nonneg {
        res.primal = res.primal.max(rel((-s[r]).max(0.0), r));
        res.dual_cone = res.dual_cone.max((-z[r]).max(0.0));
        let c = (s[r] * z[r]).abs() / (1.0 + s[r].abs() + z[r].abs());
        res.complementarity = res.complementarity.max(c);
    }
    let mut r0 = st.n_zero + st.n_nonneg;
    for &d in &st.soc_dims {
        let sb = &s[r0..r0 + d];
        let zb = &z[r0..r0 + d];
        let bscale = 1.0 + st.b[r0..r0 + d].iter().map(|b| b.abs()).fold(0.0, f64::max);
        let snorm = sb[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let znorm = zb[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        res.primal = res.primal.max((snorm - sb[0]).max(0.0) / bscale);
        res.dual_cone = res.dual_cone.max((znorm - zb[0]).max(0.0));
        let dot: f64 = sb.iter().zip(zb).map(|(a, b)| a * b).sum();
        let mag = 1.0 + sb[0].abs() + snorm + zb[0].abs() + znorm;
        res.complementarity = res.complementarity.max(dot.abs() / mag);
        r0 += d;
    }
    debug_assert_eq!(r0, m);
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{LinExpr, VarId};

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn one_dimensional_bound() {
        let mut p = ConicProgram::new();
        let x = p.add_continuous("x", 3.0, f64::INFINITY);
        p.add_quadratic_cost(x, 1.0);
        let s = solve_convex(&p, &settings()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value(x) - 3.0).abs() < 1e-6);
        assert!((s.objective - 9.0).abs() < 1e-5);
        assert!((s.bound_duals[0] - 6.0).abs() < 1e-5);
    }

    #[test]
    fn one_dimensional_row() {
        let mut p = ConicProgram::new();
        let x = p.add_free("x");
        let r = p.add_constraint("x_ge_3", LinExpr::from(x), Sense::Ge, 3.0);
        p.add_quadratic_cost(x, 1.0);
        let s = solve_convex(&p, &settings()).unwrap();
        assert!((s.dual(r) - 6.0).abs() < 1e-5);
        // the same row written as -x <= -3 carries the same multiplier
        let mut p2 = ConicProgram::new();
        let x2 = p2.add_free("x");
        let r2 = p2.add_constraint("negx_le", LinExpr::term(x2, -1.0), Sense::Le, -3.0);
        p2.add_quadratic_cost(x2, 1.0);
        let s2 = solve_convex(&p2, &settings()).unwrap();
        assert!((s2.dual(r2) - 6.0).abs() < 1e-5);
    }

    #[test]
    fn equality_dual_sign() {
        // min x² s.t. x = 2: ∇f = 4 = y·1
        let mut p = ConicProgram::new();
        let x = p.add_free("x");
        let r = p.add_constraint("x_eq_2", LinExpr::from(x), Sense::Eq, 2.0);
        p.add_quadratic_cost(x, 1.0);
        let s = solve_convex(&p, &settings()).unwrap();
        assert!((s.dual(r) - 4.0).abs() < 1e-5);
        let mut fixed = ConicProgram::new();
        let y = fixed.add_continuous("y", 2.0, 2.0);
        fixed.add_quadratic_cost(y, 1.0);
        let s = solve_convex(&fixed, &settings()).unwrap();
        assert!((s.bound_duals[0] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn cone_touch() {
        let mut p = ConicProgram::new();
        let x = p.add_free("x");
        let y = p.add_free("y");
        p.add_soc("disc", vec![x.into(), y.into()], LinExpr::constant(1.0));
        p.add_linear_cost(x, -1.0);
        p.add_linear_cost(y, -1.0);
        let s = solve_convex(&p, &settings()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value(x) - h).abs() < 1e-6 && (s.value(y) - h).abs() < 1e-6);
        // ∇f = (−1, −1) = z₀·0 + z₁·(1,0) + z₂·(0,1)
        let z = &s.cone_duals[0];
        assert!((z[1] + 1.0).abs() < 1e-6 && (z[2] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut p = ConicProgram::new();
        let x = p.add_continuous("x", 0.0, 1.0);
        p.add_constraint("c", LinExpr::from(x), Sense::Ge, 2.0);
        p.add_linear_cost(x, 1.0);
        assert_eq!(solve_convex(&p, &settings()).unwrap().status, SolveStatus::Infeasible);

        let mut u = ConicProgram::new();
        let x = u.add_free("x");
        u.add_constraint("c", LinExpr::from(x), Sense::Le, 2.0);
        u.add_linear_cost(x, 1.0);
        assert_eq!(solve_convex(&u, &settings()).unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn binaries_must_be_fixed() {
        let mut p = ConicProgram::new();
        p.add_binary("u");
        assert!(solve_convex(&p, &settings()).is_err());
    }

    #[test]
    fn no_constraints_unconstrained_quadratic() {
        let mut p = ConicProgram::new();
        let x = p.add_free("x");
        p.add_quadratic_cost(x, 2.0);
        p.add_linear_cost(x, -4.0);
        let s = solve_convex(&p, &settings()).unwrap();
        assert!((s.value(x) - 1.0).abs() < 1e-6);
        assert!((s.objective + 2.0).abs() < 1e-6);
        let _ = VarId(0);
    }
}
