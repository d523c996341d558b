//! Solver-agnostic description of convex quadratic programs with second-order
//! cones and binary variables.
//!
//! Programs are built incrementally through handles ([`VarId`], [`RowId`],
//! [`ConeId`]) and are treated as immutable once handed to a solver.

mod expr;

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

pub use expr::{LinExpr, VarId};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Eq => "=",
            Sense::Le => "<=",
            Sense::Ge => ">=",
        }
    }
}

/// `Σ coef·x  (sense)  rhs`
#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum()
    }

    /// Signed slack that is nonnegative when the row holds (absolute residual for equalities).
    pub fn slack(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => self.rhs - a,
            Sense::Ge => a - self.rhs,
            Sense::Eq => -(a - self.rhs).abs(),
        }
    }
}

/// `‖vector‖₂ ≤ bound`
#[derive(Clone, Debug, PartialEq)]
pub struct SocConstraint {
    pub name: String,
    pub vector: Vec<LinExpr>,
    pub bound: LinExpr,
}

impl SocConstraint {
    pub fn violation(&self, x: &[f64]) -> f64 {
        let n = self.vector.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
        (n - self.bound.eval(x)).max(0.0)
    }
}

/// Separable convex quadratic objective `Σ q_j x_j² + Σ c_j x_j + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Objective {
    pub quadratic: Vec<(VarId, f64)>,
    pub linear: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant
            + self.quadratic.iter().map(|&(v, q)| q * x[v.0] * x[v.0]).sum::<f64>()
            + self.linear.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
    }
}

/// Annotation tying a big-M binary to the complementarity pair it models:
/// `binary = 1` leaves `slack` free and forces `dual = 0`, `binary = 0` forces `slack = 0`.
/// Branch-and-bound uses these to round relaxed points into feasible incumbents.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplementarityLink {
    pub name: String,
    pub binary: VarId,
    pub slack: LinExpr,
    pub dual: VarId,
}

/// A diagnostic raised by [`ConicProgram::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Per-binary decision passed to [`ConicProgram::relax_binaries`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fixing {
    Zero,
    One,
    Free,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConicProgram {
    pub variables: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
    pub cones: Vec<SocConstraint>,
    pub objective: Objective,
    pub links: Vec<ComplementarityLink>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind,
            lower,
            upper,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, VarKind::Continuous, lower, upper)
    }

    pub fn add_free(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_nonneg(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Continuous, 0.0, f64::INFINITY)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    /// Adds `expr (sense) rhs`; the constant part of `expr` is moved to the right-hand side
    /// and duplicate variables are merged.
    pub fn add_constraint(&mut self, name: impl Into<String>, expr: LinExpr, sense: Sense, rhs: f64) -> RowId {
        let m = expr.merged();
        self.constraints.push(LinearConstraint {
            name: name.into(),
            terms: m.terms,
            sense,
            rhs: rhs - m.constant,
        });
        RowId(self.constraints.len() - 1)
    }

    pub fn add_soc(&mut self, name: impl Into<String>, vector: Vec<LinExpr>, bound: LinExpr) -> ConeId {
        self.cones.push(SocConstraint {
            name: name.into(),
            vector,
            bound,
        });
        ConeId(self.cones.len() - 1)
    }

    pub fn add_quadratic_cost(&mut self, v: VarId, q: f64) {
        self.objective.quadratic.push((v, q));
    }

    pub fn add_linear_cost(&mut self, v: VarId, c: f64) {
        self.objective.linear.push((v, c));
    }

    /// Adds `scale · expr` to the objective.
    pub fn add_cost_expr(&mut self, expr: &LinExpr, scale: f64) {
        for &(v, c) in &expr.terms {
            self.objective.linear.push((v, c * scale));
        }
        self.objective.constant += expr.constant * scale;
    }

    pub fn add_link(&mut self, link: ComplementarityLink) {
        self.links.push(link);
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.variables[v.0]
    }

    pub fn constraint(&self, r: RowId) -> &LinearConstraint {
        &self.constraints[r.0]
    }

    pub fn binaries(&self) -> Vec<VarId> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
            .collect()
    }

    pub fn eval_objective(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Largest violation of bounds, linear rows and cones at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (var, v) in self.variables.iter().zip(x) {
            worst = worst.max(var.lower - v).max(v - var.upper);
        }
        for c in &self.constraints {
            worst = worst.max(-c.slack(x));
        }
        for k in &self.cones {
            worst = worst.max(k.violation(x));
        }
        worst
    }

    /// Checks every structural invariant and returns one diagnostic per problem.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let n = self.variables.len();
        let mut names = HashSet::new();
        for (i, v) in self.variables.iter().enumerate() {
            if !names.insert(v.name.as_str()) {
                out.push(diag(&v.name, format!("variable x{i} declared more than once")));
            }
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                out.push(diag(&v.name, format!("invalid bounds [{}, {}]", v.lower, v.upper)));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                out.push(diag(&v.name, "binary bounds outside [0, 1]".to_string()));
            }
        }
        let check_ref = |out: &mut Vec<Diagnostic>, subject: &str, v: VarId| {
            if v.0 >= n {
                out.push(diag(subject, format!("references undeclared variable x{}", v.0)));
            }
        };
        for c in &self.constraints {
            for &(v, coef) in &c.terms {
                check_ref(&mut out, &c.name, v);
                if !coef.is_finite() {
                    out.push(diag(&c.name, format!("non-finite coefficient on x{}", v.0)));
                }
            }
            if c.rhs.is_nan() {
                out.push(diag(&c.name, "right-hand side is NaN".to_string()));
            }
        }
        for k in &self.cones {
            if k.vector.is_empty() {
                out.push(diag(&k.name, "cone has an empty vector part".to_string()));
            }
            for e in k.vector.iter().chain(std::iter::once(&k.bound)) {
                for v in e.vars() {
                    check_ref(&mut out, &k.name, v);
                    if v.0 < n && self.variables[v.0].kind == VarKind::Binary {
                        out.push(diag(
                            &k.name,
                            format!("binary variable {} appears inside a cone", self.variables[v.0].name),
                        ));
                    }
                }
            }
        }
        for &(v, q) in &self.objective.quadratic {
            check_ref(&mut out, "objective", v);
            if !(q >= 0.0) {
                out.push(diag(
                    "objective",
                    format!("quadratic coefficient {q} on x{} breaks convexity", v.0),
                ));
            } else if v.0 < n && q > 0.0 && self.variables[v.0].kind == VarKind::Binary {
                out.push(diag(
                    "objective",
                    format!("binary variable {} appears quadratically", self.variables[v.0].name),
                ));
            }
        }
        for &(v, c) in &self.objective.linear {
            check_ref(&mut out, "objective", v);
            if !c.is_finite() {
                out.push(diag("objective", format!("non-finite linear coefficient on x{}", v.0)));
            }
        }
        for l in &self.links {
            check_ref(&mut out, &l.name, l.binary);
            check_ref(&mut out, &l.name, l.dual);
            if l.binary.0 < n && self.variables[l.binary.0].kind != VarKind::Binary {
                out.push(diag(&l.name, "link binary is not a binary variable".to_string()));
            }
        }
        out
    }

    /// Returns a copy where fixed binaries are pinned (bounds `[v, v]`, kept as continuous
    /// variables so handles stay valid) and free binaries become continuous in `[0, 1]`.
    /// Binaries missing from `fixings` are treated as free. Complementarity links are dropped.
    pub fn relax_binaries(&self, fixings: &BTreeMap<VarId, Fixing>) -> Result<ConicProgram> {
        for &v in fixings.keys() {
            let var = self
                .variables
                .get(v.0)
                .ok_or_else(|| Error::Program(format!("fixing references undeclared variable x{}", v.0)))?;
            if var.kind != VarKind::Binary {
                return Err(Error::Program(format!("cannot fix continuous variable {}", var.name)));
            }
        }
        let mut out = self.clone();
        for (i, var) in out.variables.iter_mut().enumerate() {
            if var.kind != VarKind::Binary {
                continue;
            }
            var.kind = VarKind::Continuous;
            match fixings.get(&VarId(i)).copied().unwrap_or(Fixing::Free) {
                Fixing::Zero => {
                    var.lower = 0.0;
                    var.upper = 0.0;
                }
                Fixing::One => {
                    var.lower = 1.0;
                    var.upper = 1.0;
                }
                Fixing::Free => {
                    var.lower = var.lower.max(0.0);
                    var.upper = var.upper.min(1.0);
                }
            }
        }
        // the relaxation has no binaries left for the links to refer to
        out.links.clear();
        Ok(out)
    }

    /// Human-readable listing, one variable/constraint per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let name = |v: VarId| -> &str { self.variables.get(v.0).map(|x| x.name.as_str()).unwrap_or("?") };
        let _ = writeln!(s, "variables {}", self.variables.len());
        for v in &self.variables {
            let kind = match v.kind {
                VarKind::Continuous => "cont",
                VarKind::Binary => "bin",
            };
            let _ = writeln!(s, "  {} {} [{}, {}]", kind, v.name, v.lower, v.upper);
        }
        let _ = writeln!(s, "objective");
        let mut obj = String::new();
        for &(v, q) in &self.objective.quadratic {
            let _ = write!(obj, " {:+} {}^2", q, name(v));
        }
        for &(v, c) in &self.objective.linear {
            let _ = write!(obj, " {:+} {}", c, name(v));
        }
        let _ = writeln!(s, " {} {:+}", obj.trim_start(), self.objective.constant);
        let _ = writeln!(s, "constraints {}", self.constraints.len());
        for c in &self.constraints {
            let mut row = String::new();
            for &(v, coef) in &c.terms {
                let _ = write!(row, " {:+} {}", coef, name(v));
            }
            let _ = writeln!(s, "  {}:{} {} {}", c.name, row, c.sense.symbol(), c.rhs);
        }
        let _ = writeln!(s, "cones {}", self.cones.len());
        let fmt_expr = |e: &LinExpr| {
            let mut t = String::new();
            for &(v, c) in &e.terms {
                let _ = write!(t, " {:+} {}", c, name(v));
            }
            let _ = write!(t, " {:+}", e.constant);
            t.trim_start().to_string()
        };
        for k in &self.cones {
            let parts: Vec<String> = k.vector.iter().map(fmt_expr).collect();
            let _ = writeln!(s, "  {}: ||({})|| <= {}", k.name, parts.join("; "), fmt_expr(&k.bound));
        }
        s
    }
}

fn diag(subject: &str, message: String) -> Diagnostic {
    Diagnostic {
        subject: subject.to_string(),
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_program_validates() {
        assert!(ConicProgram::new().validate().is_empty());
    }

    #[test]
    fn undeclared_variable_is_named() {
        let mut p = ConicProgram::new();
        p.add_free("x");
        p.add_constraint("row0", LinExpr::term(VarId(3), 1.0), Sense::Le, 1.0);
        let d = p.validate();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].subject, "row0");
        assert!(d[0].message.contains("x3"));
    }

    #[test]
    fn nonconvex_and_binary_misuse_are_reported() {
        let mut p = ConicProgram::new();
        let x = p.add_free("x");
        let u = p.add_binary("u");
        p.add_quadratic_cost(x, -1.0);
        p.add_quadratic_cost(u, 1.0);
        p.add_soc("k", vec![LinExpr::from(u)], LinExpr::from(x));
        assert_eq!(p.validate().len(), 3);
    }

    #[test]
    fn relax_without_binaries_is_identity() {
        let mut p = ConicProgram::new();
        let x = p.add_nonneg("x");
        p.add_constraint("c", LinExpr::from(x), Sense::Ge, 1.0);
        p.add_quadratic_cost(x, 1.0);
        assert_eq!(p.relax_binaries(&BTreeMap::new()).unwrap(), p);
    }

    fn big_m_pair() -> (ConicProgram, VarId, VarId, VarId) {
        let mut p = ConicProgram::new();
        let a = p.add_nonneg("a");
        let b = p.add_nonneg("b");
        let u = p.add_binary("u");
        let m = 10.0;
        p.add_constraint("a_le_MU", LinExpr::from(a) - u * m, Sense::Le, 0.0);
        p.add_constraint("b_le_M1mU", LinExpr::from(b) + u * m, Sense::Le, m);
        (p, a, b, u)
    }

    #[test]
    fn fixing_one_in_big_m_pattern() {
        let (p, a, b, u) = big_m_pair();
        let r = p.relax_binaries(&BTreeMap::from([(u, Fixing::One)])).unwrap();
        // with u pinned to 1 the rows read a <= M and b <= 0
        let x_ok = [10.0, 0.0, 1.0];
        let x_bad_b = [0.0, 0.1, 1.0];
        let x_bad_a = [10.5, 0.0, 1.0];
        assert!(r.max_violation(&x_ok) <= 0.0);
        assert!(r.max_violation(&x_bad_b) > 0.0);
        assert!(r.max_violation(&x_bad_a) > 0.0);
        assert_eq!(r.var(u).kind, VarKind::Continuous);
        assert_eq!((r.var(u).lower, r.var(u).upper), (1.0, 1.0));
        let _ = (a, b);
    }

    #[test]
    fn union_of_fixings_matches_mixed_integer_set() {
        let (p, _, _, u) = big_m_pair();
        let r0 = p.relax_binaries(&BTreeMap::from([(u, Fixing::Zero)])).unwrap();
        let r1 = p.relax_binaries(&BTreeMap::from([(u, Fixing::One)])).unwrap();
        for i in 0..=24 {
            for j in 0..=24 {
                let (a, b) = (i as f64 * 0.5, j as f64 * 0.5);
                let mixed = (a <= 1e-12 && b <= 10.0) || (a <= 10.0 && b <= 1e-12);
                let union = r0.max_violation(&[a, b, 0.0]) <= 0.0 || r1.max_violation(&[a, b, 1.0]) <= 0.0;
                assert_eq!(mixed, union, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn fixing_continuous_is_an_error() {
        let (p, a, _, _) = big_m_pair();
        assert!(p.relax_binaries(&BTreeMap::from([(a, Fixing::One)])).is_err());
    }

    #[test]
    fn dump_lists_one_constraint_per_line() {
        let (p, _, _, _) = big_m_pair();
        let d = p.dump();
        assert!(d.contains("  a_le_MU: +1 a -10 u <= 0\n"));
        assert!(d.contains("  b_le_M1mU: +1 b +10 u <= 10\n"));
    }

    proptest! {
        #[test]
        fn relax_is_idempotent_and_keeps_diagnostics(fix in proptest::collection::vec(0u8..3, 4)) {
            let mut p = ConicProgram::new();
            let x = p.add_free("x");
            let us: Vec<VarId> = (0..4).map(|i| p.add_binary(format!("u{i}"))).collect();
            let mut e = LinExpr::from(x);
            for &u in &us { e.add_term(u, 2.0); }
            p.add_constraint("c", e, Sense::Ge, 1.0);
            p.add_quadratic_cost(x, 1.0);
            let fixings: BTreeMap<VarId, Fixing> = us.iter().zip(&fix).map(|(&u, &f)| {
                (u, match f { 0 => Fixing::Zero, 1 => Fixing::One, _ => Fixing::Free })
            }).collect();
            let r1 = p.relax_binaries(&fixings).unwrap();
            let r2 = r1.relax_binaries(&BTreeMap::new()).unwrap();
            prop_assert_eq!(&r1, &r2);
            let base: Vec<_> = p.validate();
            for d in r1.validate() {
                prop_assert!(base.contains(&d));
            }
        }
    }
}
