use std::collections::BTreeSet;

use crate::data::ErrorSampleMatrix;
use crate::error::{Error, Result};

/// Reserve-delivery outcome of fixed bids on held-out error samples.
#[derive(Clone, Debug, PartialEq)]
pub struct OosReport {
    /// `[test][i]` undelivered reserve energy in MWh.
    pub under: Vec<Vec<f64>>,
    /// `[test][i]`: the microgrid missed its delivery tolerance.
    pub flags: Vec<Vec<bool>>,
    pub violations: usize,
    /// Share of tests in which any microgrid missed.
    pub eps_e: f64,
    /// Per-microgrid share of tests missed.
    pub individual: Vec<f64>,
}

impl OosReport {
    pub fn n_tests(&self) -> usize {
        self.flags.len()
    }

    /// Joint rate recounted from the stored flags.
    pub fn recount(&self) -> f64 {
        let hits = self.flags.iter().filter(|f| f.iter().any(|&v| v)).count();
        hits as f64 / self.flags.len() as f64
    }

    /// Undelivered energy summed over microgrids, per test.
    pub fn total_under(&self) -> Vec<f64> {
        self.under.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Evaluates `rup` (`[i][t]`, MW) on every row of `tests`.
pub fn out_of_sample(rup: &[Vec<f64>], tests: &ErrorSampleMatrix, r_fup: f64, dt: f64) -> Result<OosReport> {
    let nt = tests.n_periods();
    if let Some(r) = rup.iter().find(|r| r.len() != nt) {
        return Err(Error::Dimension(format!(
            "reserve bid has {} periods, samples {nt}",
            r.len()
        )));
    }
    let n = tests.n_samples();
    let nm = rup.len();
    let mut under = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    let mut per_mg = vec![0usize; nm];
    let mut violations = 0;
    for z in tests.rows() {
        let u: Vec<f64> = rup
            .iter()
            .map(|r| dt * z.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let f: Vec<bool> = u.iter().map(|&v| v > r_fup).collect();
        for (c, &hit) in per_mg.iter_mut().zip(&f) {
            *c += hit as usize;
        }
        violations += f.iter().any(|&v| v) as usize;
        under.push(u);
        flags.push(f);
    }
    Ok(OosReport {
        under,
        flags,
        violations,
        eps_e: violations as f64 / n as f64,
        individual: per_mg.iter().map(|&c| c as f64 / n as f64).collect(),
    })
}

/// Number of rows of `b` that also occur, bit for bit, in `a`.
pub fn sample_overlap(a: &ErrorSampleMatrix, b: &ErrorSampleMatrix) -> usize {
    let key = |r: &[f64]| -> Vec<u64> { r.iter().map(|v| v.to_bits()).collect() };
    let seen: BTreeSet<Vec<u64>> = a.rows().iter().map(|r| key(r)).collect();
    b.rows().iter().filter(|r| seen.contains(&key(r))).count()
}

/// Linear-interpolation quantile of `v` at level `q` in `[0, 1]`.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: Vec<Vec<f64>>) -> ErrorSampleMatrix {
        let nt = rows[0].len();
        ErrorSampleMatrix::new(rows, (0..nt).map(|t| format!("t{t}")).collect(), 0.5).unwrap()
    }

    #[test]
    fn zero_bids_never_violate() {
        let s = matrix(vec![vec![0.9, 0.9], vec![-0.2, 0.5]]);
        let r = out_of_sample(&[vec![0.0, 0.0]], &s, 0.0, 0.5).unwrap();
        assert_eq!(r.eps_e, 0.0);
    }

    #[test]
    fn saturation() {
        let s = matrix(vec![vec![1.0], vec![0.8], vec![0.6]]);
        let r = out_of_sample(&[vec![10.0], vec![20.0]], &s, 1.0, 1.0).unwrap();
        assert_eq!(r.eps_e, 1.0);
        assert_eq!(r.individual, vec![1.0, 1.0]);
    }

    #[test]
    fn hand_count() {
        // dt·ζ·R of 1.4, 1.6 and 1.51 against a tolerance of 1.5
        let s = matrix(vec![vec![1.4], vec![1.6], vec![1.51]]);
        let r = out_of_sample(&[vec![1.0]], &s, 1.5, 1.0).unwrap();
        assert_eq!(r.violations, 2);
        assert_eq!(r.eps_e, 2.0 / 3.0);
    }

    #[test]
    fn overlap_counts_shared_rows() {
        let a = matrix(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        let b = matrix(vec![vec![0.3, 0.4], vec![0.5, 0.6]]);
        assert_eq!(sample_overlap(&a, &b), 1);
        assert_eq!(sample_overlap(&b, &matrix(vec![vec![0.0, 0.0]])), 0);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn recount_is_exact(
            cells in prop::collection::vec(-1.0f64..1.0, 12..60),
            r in prop::collection::vec(0.0f64..3.0, 6),
        ) {
            let nt = 3;
            let rows: Vec<Vec<f64>> = cells.chunks_exact(nt).map(|c| c.to_vec()).collect();
            let s = matrix(rows);
            let rup = vec![r[..3].to_vec(), r[3..].to_vec()];
            let rep = out_of_sample(&rup, &s, 0.3, 0.5).unwrap();
            prop_assert_eq!(rep.recount().to_bits(), rep.eps_e.to_bits());
            prop_assert!((0.0..=1.0).contains(&rep.eps_e));
            for (i, &p) in rep.individual.iter().enumerate() {
                prop_assert!(p <= rep.eps_e + 1e-15, "microgrid {} rate {} above joint {}", i, p, rep.eps_e);
            }
        }
    }
}
