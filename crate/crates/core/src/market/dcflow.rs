//! DC power-flow sensitivities.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::data::NetworkCase;
use crate::error::{Error, Result};

/// Line-flow sensitivity to nodal injections, `B_line · B_bus⁻¹` with the slack removed.
/// Rows are branches, columns are buses; the slack column is zero.
pub fn ptdf(case: &NetworkCase) -> Result<DMatrix<f64>> {
    let nb = case.n_buses();
    let nl = case.branches.len();
    let slack = case.slack();
    let mut bbus = DMatrix::<f64>::zeros(nb, nb);
    let mut bline = DMatrix::<f64>::zeros(nl, nb);
    for (l, br) in case.branches.iter().enumerate() {
        let b = br.susceptance;
        bbus[(br.from, br.from)] += b;
        bbus[(br.to, br.to)] += b;
        bbus[(br.from, br.to)] -= b;
        bbus[(br.to, br.from)] -= b;
        bline[(l, br.from)] = b;
        bline[(l, br.to)] = -b;
    }
    let keep: Vec<usize> = (0..nb).filter(|&b| b != slack).collect();
    let mut out = DMatrix::<f64>::zeros(nl, nb);
    if keep.is_empty() {
        return Ok(out);
    }
    let reduced = bbus.select_rows(&keep).select_columns(&keep);
    let inv = reduced
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()));
    let inv = match inv {
        Some(m) => m,
        None => {
            let stranded = disconnected_buses(case);
            return Err(Error::Case(if stranded.is_empty() {
                "reduced susceptance matrix is singular".to_string()
            } else {
                format!("reduced susceptance matrix is singular; buses {stranded:?} are not connected to the slack")
            }));
        }
    };
    let sens = bline.select_columns(&keep) * inv;
    for (c, &b) in keep.iter().enumerate() {
        out.set_column(b, &sens.column(c));
    }
    Ok(out)
}

/// Bus ids unreachable from the slack bus through branches.
pub fn disconnected_buses(case: &NetworkCase) -> Vec<u32> {
    let nb = case.n_buses();
    let mut adj = vec![Vec::new(); nb];
    for br in &case.branches {
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }
    let mut seen = vec![false; nb];
    let mut queue = VecDeque::from([case.slack()]);
    seen[case.slack()] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    (0..nb).filter(|&b| !seen[b]).map(|b| case.buses[b].id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Branch, Bus};

    fn triangle() -> NetworkCase {
        let bus = |id, slack| Bus {
            id,
            is_slack: slack,
            net_load: vec![0.0],
        };
        let br = |from, to, x: f64| Branch {
            from,
            to,
            susceptance: 1.0 / x,
            limit_mw: 10.0,
        };
        NetworkCase {
            buses: vec![bus(1, true), bus(2, false), bus(3, false)],
            branches: vec![br(0, 1, 0.1), br(1, 2, 0.1), br(0, 2, 0.2)],
            generators: vec![],
            microgrids: vec![],
            reserve_req: vec![0.0],
            period_labels: vec!["t0".into()],
        }
    }

    #[test]
    fn triangle_split_follows_reactances() {
        // injecting at bus 3 and withdrawing at the slack: two paths, 0.2 direct vs 0.1+0.1 via bus 2,
        // so flows split evenly
        let p = ptdf(&triangle()).unwrap();
        assert!((p[(2, 2)] + 0.5).abs() < 1e-12);
        assert!((p[(1, 2)] + 0.5).abs() < 1e-12);
        assert!((p[(0, 2)] + 0.5).abs() < 1e-12);
        assert_eq!(p.column(0).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
    }

    #[test]
    fn flows_conserve_at_buses() {
        let c = triangle();
        let p = ptdf(&c).unwrap();
        let inj = nalgebra::DVector::from_vec(vec![-3.0, 1.0, 2.0]);
        let f = &p * &inj;
        // net outflow at each non-slack bus equals its injection
        for b in 1..3 {
            let mut out = 0.0;
            for (l, br) in c.branches.iter().enumerate() {
                if br.from == b {
                    out += f[l];
                }
                if br.to == b {
                    out -= f[l];
                }
            }
            assert!((out - inj[b]).abs() < 1e-12);
        }
    }

    #[test]
    fn island_is_named() {
        let mut c = triangle();
        c.branches = vec![c.branches[0].clone()];
        let e = ptdf(&c).unwrap_err().to_string();
        assert!(e.contains("[3]"), "{e}");
    }
}
