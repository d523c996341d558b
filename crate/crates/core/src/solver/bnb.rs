//! Best-bound-first branch-and-bound over the binaries of a [`ConicProgram`], and the
//! exhaustive enumeration oracle used to check it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use super::{solve_convex, BranchingRule, SolutionPoint, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::program::{ConicProgram, Fixing, VarId};

/// Hard cap on the number of binaries [`enumerate_oracle`] accepts.
pub const ENUMERATION_CAP: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnbStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
}

/// One processed node: its parent's bound, its own relaxation value and the incumbent after it.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub depth: usize,
    pub parent_bound: f64,
    /// Relaxation objective, or `+∞` when the relaxation is infeasible.
    pub bound: f64,
    pub incumbent: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnbResult {
    /// Best mixed-integer point found (relaxed program values with binaries at 0/1).
    pub solution: Option<SolutionPoint>,
    pub status: BnbStatus,
    pub nodes: usize,
    pub best_bound: f64,
    pub incumbent: f64,
    pub gap: f64,
    pub trace: Vec<NodeRecord>,
    /// Objective of every accepted incumbent, in order of discovery.
    pub incumbent_history: Vec<f64>,
    /// Nodes whose relaxation ended at a tolerance limit rather than a certified optimum.
    pub inexact_nodes: usize,
}

fn gap_of(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    if !bound.is_finite() {
        return if bound < 0.0 { f64::INFINITY } else { 0.0 };
    }
    (incumbent - bound) / incumbent.abs().max(1.0)
}

struct Node {
    id: usize,
    depth: usize,
    bound: f64,
    fixings: BTreeMap<VarId, Fixing>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap pops the maximum; invert so the lowest bound, then the lowest id, comes first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    program: &'a ConicProgram,
    settings: &'a SolverSettings,
    binaries: Vec<VarId>,
    incumbent: Option<SolutionPoint>,
    history: Vec<f64>,
    inexact: usize,
}

impl<'a> Search<'a> {
    fn incumbent_value(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective)
    }

    fn solve_fixed(&mut self, fixings: &BTreeMap<VarId, Fixing>) -> Result<SolutionPoint> {
        let relaxed = self.program.relax_binaries(fixings)?;
        let sol = solve_convex(&relaxed, self.settings)?;
        if sol.status == SolveStatus::ToleranceLimit {
            self.inexact += 1;
        }
        Ok(sol)
    }

    /// Tries a fully fixed binary assignment and keeps it if it improves the incumbent.
    fn try_assignment(&mut self, fixings: BTreeMap<VarId, Fixing>) -> Result<bool> {
        let sol = self.solve_fixed(&fixings)?;
        let usable = matches!(sol.status, SolveStatus::Optimal | SolveStatus::ToleranceLimit)
            && self.program.max_violation(&sol.primal) <= self.settings.feas_tol * 10.0;
        let inc = self.incumbent_value();
        let improves = !inc.is_finite() || sol.objective < inc - 1e-9 * inc.abs().max(1.0);
        if usable && improves {
            self.history.push(sol.objective);
            self.incumbent = Some(sol);
            return Ok(true);
        }
        Ok(false)
    }

    fn fractional(&self, x: &[f64]) -> Vec<(VarId, f64)> {
        self.binaries
            .iter()
            .map(|&b| (b, x[b.0]))
            .filter(|&(_, v)| (v - v.round()).abs() > self.settings.integer_tol)
            .collect()
    }

    fn branch_var(&self, frac: &[(VarId, f64)]) -> VarId {
        match self.settings.branching {
            BranchingRule::FirstFractional => frac[0].0,
            BranchingRule::MostFractional => {
                let mut best = frac[0];
                for &(v, x) in &frac[1..] {
                    // strict comparison keeps the lowest index on ties
                    if (x - 0.5).abs() < (best.1 - 0.5).abs() - 1e-12 {
                        best = (v, x);
                    }
                }
                best.0
            }
        }
    }

    /// Rounds a relaxed node point into complete assignments using the complementarity links.
    fn heuristics(&mut self, node: &BTreeMap<VarId, Fixing>, x: &[f64]) -> Result<()> {
        let tau = 1e-6;
        let rounded = |b: VarId| if x[b.0] >= 0.5 { Fixing::One } else { Fixing::Zero };
        let mut candidates: Vec<BTreeMap<VarId, Fixing>> = Vec::new();
        for rule in 0..3 {
            let mut f: BTreeMap<VarId, Fixing> = self.binaries.iter().map(|&b| (b, rounded(b))).collect();
            for link in &self.program.links {
                let choice = match rule {
                    0 => {
                        if link.slack.eval(x) > tau {
                            Fixing::One
                        } else {
                            Fixing::Zero
                        }
                    }
                    1 => {
                        if x[link.dual.0] > tau {
                            Fixing::Zero
                        } else {
                            Fixing::One
                        }
                    }
                    _ => rounded(link.binary),
                };
                f.insert(link.binary, choice);
            }
            for (&b, &fx) in node {
                if fx != Fixing::Free {
                    f.insert(b, fx);
                }
            }
            if !candidates.contains(&f) {
                candidates.push(f);
            }
        }
        for f in candidates {
            self.try_assignment(f)?;
        }
        Ok(())
    }
}

/// Solves a mixed-binary program. Single worker and deterministic for fixed inputs.
pub fn branch_and_bound(program: &ConicProgram, settings: &SolverSettings) -> Result<BnbResult> {
    settings.validate()?;
    let binaries = program.binaries();
    if binaries.is_empty() {
        let sol = solve_convex(program, settings)?;
        let (status, inc) = match sol.status {
            SolveStatus::Infeasible => (BnbStatus::Infeasible, f64::INFINITY),
            SolveStatus::Unbounded => return Err(Error::Solver("relaxation is unbounded".into())),
            _ => (BnbStatus::Optimal, sol.objective),
        };
        let inexact = usize::from(sol.status == SolveStatus::ToleranceLimit);
        let solution = (status == BnbStatus::Optimal).then_some(sol);
        return Ok(BnbResult {
            solution,
            status,
            nodes: 1,
            best_bound: inc,
            incumbent: inc,
            gap: if inc.is_finite() { 0.0 } else { f64::INFINITY },
            trace: vec![NodeRecord {
                id: 0,
                depth: 0,
                parent_bound: f64::NEG_INFINITY,
                bound: inc,
                incumbent: inc,
                gap: 0.0,
            }],
            incumbent_history: if inc.is_finite() { vec![inc] } else { vec![] },
            inexact_nodes: inexact,
        });
    }

    // the clock is read only under a time limit; some targets have none
    let start = settings.time_limit.map(|_| Instant::now());
    let mut search = Search {
        program,
        settings,
        binaries,
        incumbent: None,
        history: Vec::new(),
        inexact: 0,
    };
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        id: 0,
        depth: 0,
        bound: f64::NEG_INFINITY,
        fixings: BTreeMap::new(),
    });
    let mut next_id = 1;
    let mut processed = 0;
    let mut trace = Vec::new();
    let mut limit: Option<BnbStatus> = None;

    while let Some(node) = heap.peek() {
        let inc = search.incumbent_value();
        if gap_of(inc, node.bound) <= settings.gap_tol {
            break;
        }
        if processed >= settings.node_limit {
            limit = Some(BnbStatus::NodeLimit);
            break;
        }
        if settings
            .time_limit
            .zip(start)
            .is_some_and(|(t, s)| s.elapsed().as_secs_f64() > t)
        {
            limit = Some(BnbStatus::TimeLimit);
            break;
        }
        let node = heap.pop().expect("peeked");
        processed += 1;
        let sol = search.solve_fixed(&node.fixings)?;
        let bound = match sol.status {
            SolveStatus::Infeasible => f64::INFINITY,
            SolveStatus::Unbounded => return Err(Error::Solver("node relaxation is unbounded".into())),
            _ => sol.objective.max(node.bound),
        };
        if bound.is_finite() && gap_of(search.incumbent_value(), bound) > settings.gap_tol {
            let frac = search.fractional(&sol.primal);
            if frac.is_empty() {
                // integral relaxation: re-solve with the binaries pinned to polish complementarity
                let fixed: BTreeMap<VarId, Fixing> = search
                    .binaries
                    .iter()
                    .map(|&b| {
                        (
                            b,
                            if sol.primal[b.0] >= 0.5 {
                                Fixing::One
                            } else {
                                Fixing::Zero
                            },
                        )
                    })
                    .collect();
                search.try_assignment(fixed)?;
            } else {
                if node.depth == 0 || processed % 8 == 0 {
                    search.heuristics(&node.fixings, &sol.primal)?;
                }
                let b = search.branch_var(&frac);
                for fx in [Fixing::Zero, Fixing::One] {
                    let mut f = node.fixings.clone();
                    f.insert(b, fx);
                    heap.push(Node {
                        id: next_id,
                        depth: node.depth + 1,
                        bound,
                        fixings: f,
                    });
                    next_id += 1;
                }
            }
        }
        let inc = search.incumbent_value();
        let global = heap.peek().map_or(inc, |n| n.bound.min(inc));
        let rec = NodeRecord {
            id: node.id,
            depth: node.depth,
            parent_bound: node.bound,
            bound: if sol.status == SolveStatus::Infeasible {
                f64::INFINITY
            } else {
                sol.objective
            },
            incumbent: inc,
            gap: gap_of(inc, global),
        };
        if settings.verbose {
            log::info!(
                "node {:>6} depth {:>3} bound {:>14.6e} incumbent {:>14.6e} gap {:.3e}",
                rec.id,
                rec.depth,
                rec.bound,
                rec.incumbent,
                rec.gap
            );
        }
        trace.push(rec);
    }

    let inc = search.incumbent_value();
    let best_bound = heap.peek().map_or(inc, |n| n.bound.min(inc));
    let status = match (limit, search.incumbent.is_some()) {
        (Some(l), _) => l,
        (None, true) => BnbStatus::Optimal,
        (None, false) => BnbStatus::Infeasible,
    };
    Ok(BnbResult {
        solution: search.incumbent,
        status,
        nodes: processed,
        best_bound,
        incumbent: inc,
        gap: gap_of(inc, best_bound),
        trace,
        incumbent_history: search.history,
        inexact_nodes: search.inexact,
    })
}

/// Exact optimum by solving every binary assignment; ties keep the lowest assignment index.
pub fn enumerate_oracle(program: &ConicProgram, settings: &SolverSettings) -> Result<BnbResult> {
    settings.validate()?;
    let binaries = program.binaries();
    if binaries.len() > ENUMERATION_CAP {
        return Err(Error::Solver(format!(
            "{} binaries exceed the enumeration cap of {ENUMERATION_CAP}",
            binaries.len()
        )));
    }
    let mut best: Option<SolutionPoint> = None;
    let mut history = Vec::new();
    let mut inexact = 0;
    let total = 1usize << binaries.len();
    for mask in 0..total {
        let fixings: BTreeMap<VarId, Fixing> = binaries
            .iter()
            .enumerate()
            .map(|(k, &b)| (b, if mask >> k & 1 == 1 { Fixing::One } else { Fixing::Zero }))
            .collect();
        let sol = solve_convex(&program.relax_binaries(&fixings)?, settings)?;
        match sol.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => return Err(Error::Solver("an assignment is unbounded".into())),
            SolveStatus::ToleranceLimit => inexact += 1,
            SolveStatus::Optimal => {}
        }
        if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
            history.push(sol.objective);
            best = Some(sol);
        }
    }
    let inc = best.as_ref().map_or(f64::INFINITY, |s| s.objective);
    Ok(BnbResult {
        status: if best.is_some() {
            BnbStatus::Optimal
        } else {
            BnbStatus::Infeasible
        },
        solution: best,
        nodes: total,
        best_bound: inc,
        incumbent: inc,
        gap: if inc.is_finite() { 0.0 } else { f64::INFINITY },
        trace: Vec::new(),
        incumbent_history: history,
        inexact_nodes: inexact,
    })
}

#[cfg(test)]
pub(super) mod tests {
    use super::*;
    use crate::program::{LinExpr, Sense};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_program(seed: u64, nbin: usize) -> ConicProgram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ConicProgram::new();
        let xs: Vec<VarId> = (0..3).map(|i| p.add_continuous(format!("x{i}"), -5.0, 5.0)).collect();
        let us: Vec<VarId> = (0..nbin).map(|i| p.add_binary(format!("u{i}"))).collect();
        for &x in &xs {
            p.add_quadratic_cost(x, rng.random_range(0.1..2.0));
            p.add_linear_cost(x, rng.random_range(-3.0..3.0));
        }
        for &u in &us {
            p.add_linear_cost(u, rng.random_range(-2.0..2.0));
        }
        for r in 0..4 {
            let mut e = LinExpr::new();
            for &x in &xs {
                e.add_term(x, rng.random_range(-1.0..1.0));
            }
            for &u in &us {
                if rng.random_bool(0.5) {
                    e.add_term(u, rng.random_range(-3.0..3.0));
                }
            }
            p.add_constraint(format!("r{r}"), e, Sense::Le, rng.random_range(0.0..2.0));
        }
        p
    }

    #[test]
    fn zero_binaries_matches_convex_solve() {
        let mut p = ConicProgram::new();
        let x = p.add_continuous("x", 3.0, f64::INFINITY);
        p.add_quadratic_cost(x, 1.0);
        let s = SolverSettings::default();
        let r = branch_and_bound(&p, &s).unwrap();
        let c = solve_convex(&p, &s).unwrap();
        assert_eq!(r.solution.unwrap(), c);
        assert_eq!(r.nodes, 1);
    }

    #[test]
    fn agrees_with_enumeration_on_random_programs() {
        let s = SolverSettings::default();
        for seed in 0..50 {
            let p = random_program(seed, 8);
            let a = branch_and_bound(&p, &s).unwrap();
            let b = enumerate_oracle(&p, &s).unwrap();
            assert_eq!(
                a.status == BnbStatus::Optimal,
                b.status == BnbStatus::Optimal,
                "seed {seed}"
            );
            if b.status == BnbStatus::Optimal {
                assert!(
                    (a.incumbent - b.incumbent).abs() <= 1e-5 * b.incumbent.abs().max(1.0),
                    "seed {seed}: bnb {} enum {}",
                    a.incumbent,
                    b.incumbent
                );
                assert!(a.gap >= -s.gap_tol);
            }
        }
    }

    #[test]
    fn bounds_monotone_and_incumbents_decrease() {
        let s = SolverSettings::default();
        for seed in 0..10 {
            let r = branch_and_bound(&random_program(100 + seed, 8), &s).unwrap();
            for rec in &r.trace {
                assert!(rec.bound >= rec.parent_bound - s.feas_tol * rec.parent_bound.abs().max(1.0));
            }
            for w in r.incumbent_history.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn deterministic() {
        let s = SolverSettings::default();
        let p = random_program(7, 8);
        assert_eq!(branch_and_bound(&p, &s).unwrap(), branch_and_bound(&p, &s).unwrap());
    }

    #[test]
    fn all_infeasible_fixings() {
        let mut p = ConicProgram::new();
        let u = p.add_binary("u");
        let x = p.add_continuous("x", 0.0, 1.0);
        p.add_constraint("c", LinExpr::from(x) + LinExpr::from(u), Sense::Ge, 3.0);
        let s = SolverSettings::default();
        assert_eq!(enumerate_oracle(&p, &s).unwrap().status, BnbStatus::Infeasible);
        assert_eq!(branch_and_bound(&p, &s).unwrap().status, BnbStatus::Infeasible);
    }

    #[test]
    fn node_limit_reports_gap() {
        let s = SolverSettings {
            node_limit: 1,
            ..SolverSettings::default()
        };
        let r = branch_and_bound(&random_program(3, 8), &s).unwrap();
        assert!(matches!(r.status, BnbStatus::NodeLimit | BnbStatus::Optimal));
        if r.status == BnbStatus::NodeLimit {
            assert!(r.gap > s.gap_tol || !r.incumbent.is_finite());
        }
    }

    #[test]
    fn enumeration_cap() {
        let mut p = ConicProgram::new();
        for i in 0..=ENUMERATION_CAP {
            p.add_binary(format!("u{i}"));
        }
        assert!(enumerate_oracle(&p, &SolverSettings::default()).is_err());
    }
}
