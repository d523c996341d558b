//! Gaussian-process regression with a Matérn 5/2 ARD kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::search::{nelder_mead, NelderMeadSettings};
use crate::error::{Error, Result};

/// Diagonal jitter ladder tried when the covariance is not numerically positive definite.
const JITTER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];
/// Length-scale range on the unit-normalized input box.
const LENGTH_RANGE: (f64, f64) = (0.05, 20.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// Noise variance fitted together with the kernel, never below `floor`.
    Fitted {
        floor: f64,
    },
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpSettings {
    pub restarts: usize,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for GpSettings {
    fn default() -> Self {
        GpSettings {
            restarts: 8,
            noise: NoiseModel::Fitted { floor: 1e-6 },
            seed: 0,
        }
    }
}

/// `k(r) = σ² (1 + √5 r + 5r²/3) exp(−√5 r)` with `r` the length-scaled distance.
pub fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[derive(Clone, Debug)]
pub struct GpModel {
    pub signal_var: f64,
    /// Per input dimension, in units of the box width.
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
    /// Constant prior mean (the observation average).
    pub mean: f64,
    /// Jitter that made the covariance factorizable.
    pub jitter: f64,
    pub bounds: Vec<(f64, f64)>,
    x: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn normalize(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

fn kernel(a: &[f64], b: &[f64], signal_var: f64, ls: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    signal_var * matern52(r2.sqrt())
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
}

fn factor(x: &[Vec<f64>], y: &DVector<f64>, signal_var: f64, ls: &[f64], noise: f64) -> Option<Factor> {
    let n = x.len();
    let base = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], signal_var, ls));
    for &jit in &JITTER {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += noise + jit;
        }
        if let Some(chol) = Cholesky::new(k) {
            let alpha = chol.solve(y);
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let lml = -0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            if lml.is_finite() {
                return Some(Factor {
                    chol,
                    alpha,
                    jitter: jit,
                    lml,
                });
            }
        }
    }
    None
}

/// Fits hyperparameters by maximizing the log marginal likelihood with seeded multi-start
/// Nelder-Mead in log space. Inputs are normalized to the unit box given by `bounds`.
pub fn gp_fit(xs: &[Vec<f64>], ys: &[f64], bounds: &[(f64, f64)], settings: &GpSettings) -> Result<GpModel> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "{} inputs for {} observations",
            xs.len(),
            ys.len()
        )));
    }
    let d = bounds.len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Dimension(format!("inputs must have {d} coordinates")));
    }
    let n = ys.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, ys.iter().map(|v| v - mean));
    let var = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let scale = var.max(1e-4 * mean * mean).max(1e-8);
    let x: Vec<Vec<f64>> = xs.iter().map(|p| normalize(p, bounds)).collect();

    let (noise_lo, noise_hi, fit_noise) = match settings.noise {
        NoiseModel::Fitted { floor } => (floor.max(1e-12), scale.max(floor), true),
        NoiseModel::Fixed(v) => (v, v, false),
    };
    // parameter vector: [ln σ², ln ℓ_1..ℓ_d, (ln noise)]
    let lo: Vec<f64> = std::iter::once((1e-3 * scale).ln())
        .chain(std::iter::repeat_n(LENGTH_RANGE.0.ln(), d))
        .chain(fit_noise.then(|| noise_lo.ln()))
        .collect();
    let hi: Vec<f64> = std::iter::once((1e3 * scale).ln())
        .chain(std::iter::repeat_n(LENGTH_RANGE.1.ln(), d))
        .chain(fit_noise.then(|| noise_hi.ln()))
        .collect();
    let unpack = |p: &[f64]| -> (f64, Vec<f64>, f64) {
        let p: Vec<f64> = p.iter().zip(&lo).zip(&hi).map(|((v, l), h)| v.clamp(*l, *h)).collect();
        let noise = if fit_noise { p[d + 1].exp() } else { noise_lo };
        (p[0].exp(), p[1..=d].iter().map(|v| v.exp()).collect(), noise)
    };
    let objective = |p: &[f64]| -> f64 {
        let (s, ls, nz) = unpack(p);
        match factor(&x, &y, s, &ls, nz) {
            Some(f) => -f.lml,
            None => f64::INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..settings.restarts.max(1) {
        let start: Vec<f64> = if r == 0 {
            let mut s = vec![scale.ln()];
            s.extend(std::iter::repeat_n(0.5f64.ln(), d));
            if fit_noise {
                s.push((1e-2 * scale).max(noise_lo).min(noise_hi).ln());
            }
            s
        } else {
            lo.iter()
                .zip(&hi)
                .map(|(l, h)| l + rng.random::<f64>() * (h - l))
                .collect()
        };
        let step: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.25 * (h - l).max(1e-3)).collect();
        let (p, v) = nelder_mead(
            objective,
            &start,
            &step,
            NelderMeadSettings {
                max_iter: 300,
                f_tol: 1e-9,
                x_tol: 1e-6,
            },
        );
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((p, v));
        }
    }
    let (p, _) = best.expect("at least one restart");
    let (signal_var, length_scales, noise_var) = unpack(&p);
    let f = factor(&x, &y, signal_var, &length_scales, noise_var)
        .ok_or_else(|| Error::Solver("covariance not positive definite even with 1e-6 jitter".into()))?;
    Ok(GpModel {
        signal_var,
        length_scales,
        noise_var,
        mean,
        jitter: f.jitter,
        bounds: bounds.to_vec(),
        x,
        chol: f.chol,
        alpha: f.alpha,
    })
}

impl GpModel {
    pub fn n_obs(&self) -> usize {
        self.x.len()
    }

    /// Posterior mean and standard deviation of the latent function at `q`.
    pub fn posterior(&self, q: &[f64]) -> (f64, f64) {
        let u = normalize(q, &self.bounds);
        let kq = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| kernel(xi, &u, self.signal_var, &self.length_scales)),
        );
        let mean = self.mean + kq.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&kq)
            .expect("factor is nonsingular");
        let var = (self.signal_var - v.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.x.len();
        let logdet: f64 = 2.0 * self.chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        // yᵀK⁻¹y = αᵀKα
        let k = self.chol.l() * self.chol.l().transpose();
        let quad = self.alpha.dot(&(k * &self.alpha));
        -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn expected_improvement(&self, q: &[f64], best: f64) -> f64 {
        let (m, s) = self.posterior(q);
        expected_improvement(m, s, best)
    }
}

/// `E[(best − Y)⁺]` for `Y ~ N(mean, sd²)`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let gain = best - mean;
    if !(sd > 1e-300) {
        return gain.max(0.0);
    }
    let z = gain / sd;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (gain * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn exact() -> GpSettings {
        GpSettings {
            noise: NoiseModel::Fixed(0.0),
            ..Default::default()
        }
    }

    #[test]
    fn matern_values() {
        assert_eq!(matern52(0.0), 1.0);
        let r: f64 = 0.7;
        let s = 5f64.sqrt() * r;
        assert!((matern52(r) - (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()).abs() < 1e-15);
        assert!(matern52(20.0) < 1e-15);
    }

    #[test]
    fn single_observation_interpolates() {
        let m = gp_fit(&[vec![0.1]], &[0.3], &[(0.05, 0.2)], &exact()).unwrap();
        let (mu, sd) = m.posterior(&[0.1]);
        assert!((mu - 0.3).abs() < 1e-12);
        assert!(sd <= 1e-6);
    }

    #[test]
    fn collinear_points_predict_held_out_value() {
        let h = |e: f64| (e - 0.2f64).abs();
        let xs = [0.05, 0.1, 0.15];
        let m = gp_fit(
            &xs.iter().map(|&e| vec![e]).collect::<Vec<_>>(),
            &xs.map(h),
            &[(0.05, 0.2)],
            &exact(),
        )
        .unwrap();
        let (mu, _) = m.posterior(&[0.125]);
        assert!((mu - h(0.125)).abs() < 0.02, "{mu}");
        for &e in &xs {
            let (mu, sd) = m.posterior(&[e]);
            assert!((mu - h(e)).abs() < 1e-6 && sd <= 1e-6, "{e}: {mu} {sd}");
        }
    }

    #[test]
    fn duplicates_with_disagreement_need_noise() {
        let xs = vec![vec![0.1], vec![0.1], vec![0.15], vec![0.15]];
        let ys = [0.1, 0.2, 0.05, 0.12];
        let m = gp_fit(&xs, &ys, &[(0.05, 0.2)], &GpSettings::default()).unwrap();
        assert!(m.noise_var > 1e-4, "{}", m.noise_var);
        // exact interpolation is impossible; jitter must rescue a fixed zero noise
        let m0 = gp_fit(&xs, &ys, &[(0.05, 0.2)], &exact()).unwrap();
        assert!(m0.jitter > 0.0);
    }

    #[test]
    fn far_from_data_reverts_to_prior() {
        // alternating values force the shortest length scale
        let m = gp_fit(
            &[vec![0.0], vec![0.01], vec![0.02]],
            &[0.1, -0.1, 0.1],
            &[(0.0, 1.0)],
            &exact(),
        )
        .unwrap();
        let (mu, sd) = m.posterior(&[1.0]);
        assert!((sd - m.signal_var.sqrt()).abs() <= 0.05 * m.signal_var.sqrt());
        assert!((mu - m.mean).abs() < 1e-6);
    }

    #[test]
    fn fit_is_deterministic() {
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![0.05 + 0.025 * i as f64, 0.2 - 0.02 * i as f64])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] + x[1] - 0.2).abs()).collect();
        let b = [(0.05, 0.2), (0.05, 0.2)];
        let a = gp_fit(&xs, &ys, &b, &GpSettings::default()).unwrap();
        let c = gp_fit(&xs, &ys, &b, &GpSettings::default()).unwrap();
        assert_eq!(a.length_scales, c.length_scales);
        assert_eq!(a.posterior(&[0.1, 0.1]), c.posterior(&[0.1, 0.1]));
        assert!(a.log_marginal_likelihood().is_finite());
    }

    #[test]
    fn posterior_mean_matches_monte_carlo_conditioning() {
        // E[f_q | f_X = y] estimated by regressing f_q on f_X over joint prior draws
        let xs = vec![vec![0.2], vec![0.5], vec![0.9]];
        let ys = [0.3, -0.1, 0.4];
        let m = gp_fit(&xs, &ys, &[(0.0, 1.0)], &exact()).unwrap();
        let q = [0.65];
        let pts: Vec<Vec<f64>> = xs.iter().cloned().chain(std::iter::once(q.to_vec())).collect();
        let k = DMatrix::from_fn(4, 4, |i, j| kernel(&pts[i], &pts[j], m.signal_var, &m.length_scales));
        let l = Cholesky::new(k + DMatrix::identity(4, 4) * 1e-12).unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut sxx = DMatrix::<f64>::zeros(3, 3);
        let mut sqx = DVector::<f64>::zeros(3);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let z = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let f = &l * z;
            let fx = f.rows(0, 3).into_owned();
            sxx += &fx * fx.transpose();
            sqx += &fx * f[3];
            samples.push((fx, f[3]));
        }
        let beta = sxx.clone().lu().solve(&sqx).unwrap();
        let yc = DVector::from_iterator(3, ys.iter().map(|v| v - m.mean));
        let mc_mean = m.mean + beta.dot(&yc);
        // standard error of the regression prediction
        let resid: Vec<f64> = samples.iter().map(|(fx, fq)| fq - beta.dot(fx)).collect();
        let s2 = resid.iter().map(|r| r * r).sum::<f64>() / (n - 3) as f64;
        let cov = sxx.try_inverse().unwrap() * s2;
        let se = (yc.transpose() * cov * &yc)[(0, 0)].sqrt();
        let (mu, _) = m.posterior(&q);
        assert!((mu - mc_mean).abs() <= 3.0 * se, "{mu} vs {mc_mean} ± {se}");
    }

    #[test]
    fn ei_limits() {
        assert_eq!(expected_improvement(0.5, 0.0, 0.4), 0.0);
        assert!((expected_improvement(-0.6, 1e-12, 0.4) - 1.0).abs() < 1e-9);
        let m = gp_fit(&[vec![0.1], vec![0.15]], &[0.2, 0.1], &[(0.05, 0.2)], &exact()).unwrap();
        assert!(m.expected_improvement(&[0.15], 0.1) < 1e-9);
    }

    #[test]
    fn ei_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mean: f64 = rng.random_range(-1.0..1.0);
            let sd: f64 = rng.random_range(0.01..1.0);
            let best: f64 = rng.random_range(-1.0..1.0);
            let n = 20_000;
            let vals: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (best - (mean + sd * z)).max(0.0)
                })
                .collect();
            let avg = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let ei = expected_improvement(mean, sd, best);
            assert!(
                (ei - avg).abs() <= 3.0 * se + 1e-12,
                "{mean} {sd} {best}: {ei} vs {avg} ± {se}"
            );
        }
    }
}
