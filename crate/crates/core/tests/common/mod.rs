#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pxg_core::ppmx::CovariatePrior;
use statrs::function::gamma::ln_gamma;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Composite Simpson rule with `n` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Random symmetric positive definite matrix with a controlled spectrum.
pub fn random_spd<R: Rng + ?Sized>(q: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(q, q, |_, _| StandardNormal.sample(rng));
    let mut m: DMatrix<f64> = &a * a.transpose() / q as f64 + DMatrix::identity(q, q) * 0.5;
    let t = m.transpose();
    m = (m + t) * 0.5;
    m
}

/// Kolmogorov distance between an empirical sample and a CDF.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Piecewise-linear CDF through `(grid[i], cum[i])`, clamped outside.
pub fn interp_cdf(grid: &[f64], cum: &[f64], x: f64) -> f64 {
    if x <= grid[0] {
        return 0.0;
    }
    if x >= grid[grid.len() - 1] {
        return 1.0;
    }
    let k = grid.partition_point(|&g| g <= x);
    let (x0, x1) = (grid[k - 1], grid[k]);
    let (c0, c1) = (cum[k - 1], cum[k]);
    c0 + (c1 - c0) * (x - x0) / (x1 - x0)
}

/// Normalized cumulative trapezoid of `dens` on `grid`.
pub fn cumulative(grid: &[f64], dens: &[f64]) -> Vec<f64> {
    let mut cum = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        cum[i] = cum[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (grid[i] - grid[i - 1]);
    }
    let total = cum[cum.len() - 1];
    cum.iter().map(|c| c / total).collect()
}

pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

use pxg_core::gibbs::{run_chain, Schedule};
use pxg_core::trace::{Trace, TraceMeta};
use pxg_core::{BackendOptions, BackendRegistry, Dataset, Hyperparameters};

/// Runs one chain with the named backend and thin = 1.
pub fn fit(data: &Dataset, backend: &str, hyper: Hyperparameters, iterations: usize, burn_in: usize, seed: u64) -> Trace {
    let options = BackendOptions::new(hyper, seed);
    let b = BackendRegistry::with_defaults().create(backend, &options).unwrap();
    let schedule = Schedule::new(iterations, burn_in, 1).unwrap();
    run_chain(data, b.as_ref(), schedule, TraceMeta::new(backend, options, schedule)).unwrap()
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

/// log IG(σ²; b1, b2) density expressed in u = ln σ², Jacobian included.
pub fn ln_ig_in_u(u: f64, b1: f64, b2: f64) -> f64 {
    b1 * b2.ln() - ln_gamma(b1) - b1 * u - b2 * (-u).exp()
}

pub fn log_simpson(logs: &[f64], h: f64) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = logs.len() - 1;
    let mut acc = 0.0;
    for (i, l) in logs.iter().enumerate() {
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * (l - max).exp();
    }
    max + (acc * h / 3.0).ln()
}

/// Nested quadrature of the p = 1 covariate marginal in (μ, ln σ²).
pub fn similarity_by_quadrature(xs: &[f64], mu0: f64, s0: f64, b1: f64, b2: f64) -> f64 {
    let m = xs.len() as f64;
    let center = (xs.iter().sum::<f64>() + mu0 / s0) / (m + 1.0 / s0);
    let (lo, hi, nu) = (-14.0, 30.0, 8000);
    let h = (hi - lo) / nu as f64;
    let outer: Vec<f64> = (0..=nu)
        .map(|k| {
            let u = lo + k as f64 * h;
            let var = u.exp();
            let half = 14.0 * var.sqrt() * s0.sqrt().max(1.0);
            let log_lik = |mu: f64| xs.iter().map(|&x| ln_normal(x, mu, var)).sum::<f64>() + ln_normal(mu, mu0, s0 * var);
            let shift = log_lik(center);
            let inner = simpson(|mu| (log_lik(mu) - shift).exp(), center - half, center + half, 1200);
            shift + inner.ln() + ln_ig_in_u(u, b1, b2)
        })
        .collect();
    log_simpson(&outer, h)
}

/// Grid posterior of (μ, ln σ²) for p = 1 and the marginal CDFs of each.
pub fn grid_posterior(xs: &[f64], prior: &CovariatePrior) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mu0, s0, b1, b2) = (prior.mu0[0], prior.sigma0sq, prior.b1, prior.b2);
    let us: Vec<f64> = (0..=2400).map(|k| -9.0 + k as f64 * (18.0 / 2400.0)).collect();
    let mus: Vec<f64> = (0..=2400).map(|k| -5.0 + k as f64 * (10.0 / 2400.0)).collect();
    let logp: Vec<Vec<f64>> = us
        .iter()
        .map(|&u| {
            let var = u.exp();
            mus.iter()
                .map(|&mu| {
                    xs.iter().map(|&x| ln_normal(x, mu, var)).sum::<f64>()
                        + ln_normal(mu, mu0, s0 * var)
                        + ln_ig_in_u(u, b1, b2)
                })
                .collect()
        })
        .collect();
    let max = logp.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<Vec<f64>> = logp.iter().map(|row| row.iter().map(|l| (l - max).exp()).collect()).collect();
    let u_marg: Vec<f64> = dens.iter().map(|row| row.iter().sum()).collect();
    let mu_marg: Vec<f64> = (0..mus.len()).map(|j| dens.iter().map(|row| row[j]).sum()).collect();
    let u_cdf = cumulative(&us, &u_marg);
    let mu_cdf = cumulative(&mus, &mu_marg);
    (us, u_cdf, mus, mu_cdf)
}

/// Regression coefficients and residual variance of y_s on y_-s from the
/// covariance Σ = Ω^{-1}.
pub fn conditional_from_covariance(sigma: &DMatrix<f64>, s: usize) -> (DVector<f64>, f64) {
    let q = sigma.nrows();
    let rest: Vec<usize> = (0..q).filter(|&v| v != s).collect();
    let s_rr = DMatrix::from_fn(q - 1, q - 1, |a, b| sigma[(rest[a], rest[b])]);
    let s_rs = DVector::from_fn(q - 1, |a, _| sigma[(rest[a], s)]);
    let beta = s_rr.clone().lu().solve(&s_rs).unwrap();
    let tau = sigma[(s, s)] - s_rs.dot(&beta);
    (beta, tau)
}
