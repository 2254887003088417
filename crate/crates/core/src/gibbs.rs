//! Blocked Gibbs sampler over a truncated stick-breaking representation.
//!
//! One sweep runs, in order: stick variables and weights, allocations,
//! covariate parameters, then graph parameters through the backend.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{GraphBackend, GraphState};
use crate::error::{PxgError, Result};
use crate::linalg;
use crate::model::{Allocation, Dataset};
use crate::ppmx::{self, CovariateClusterParams, CovariateStats};
use crate::rng::{substream, ChainRng};
use crate::trace::{Draw, Trace, TraceMeta};

/// Iteration schedule. `iterations` counts every sweep, burn-in included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Schedule {
    pub fn new(iterations: usize, burn_in: usize, thin: usize) -> Result<Self> {
        let s = Self { iterations, burn_in, thin };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(PxgError::invalid(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(PxgError::invalid("thin must be at least 1"));
        }
        Ok(())
    }

    /// Whether the (0-based) sweep `it` is retained.
    pub fn keeps(&self, it: usize) -> bool {
        it >= self.burn_in && (it - self.burn_in).is_multiple_of(self.thin)
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// Stick variables, `v[K-1] = 1`.
    pub v: Vec<f64>,
    pub pi: Vec<f64>,
    pub z: Allocation,
    pub cov: Vec<CovariateClusterParams>,
    pub graphs: Vec<GraphState>,
    pub iteration: usize,
}

impl ChainState {
    pub fn k(&self) -> usize {
        self.pi.len()
    }
}

/// π_1 = V_1, π_j = V_j Π_{l<j} (1 - V_l).
pub fn sticks_to_weights(v: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    let mut pi = Vec::with_capacity(v.len());
    for &vj in v {
        pi.push(vj * rest);
        rest *= 1.0 - vj;
    }
    pi
}

/// V_j ~ Beta(1 + n_j, α + Σ_{l>j} n_l) for j < K, V_K = 1.
pub fn update_sticks<R: Rng + ?Sized>(z: &Allocation, alpha: f64, k: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if k == 0 {
        return Err(PxgError::invalid("K must be at least 1"));
    }
    if z.n() > 0 && z.max_label() >= k {
        return Err(PxgError::invalid("allocation label exceeds K"));
    }
    let sizes = z.sizes(k);
    let mut tail: usize = sizes.iter().sum();
    let mut v = Vec::with_capacity(k);
    for (j, &nj) in sizes.iter().enumerate() {
        tail -= nj;
        if j + 1 == k {
            v.push(1.0);
        } else {
            let beta = Beta::new(1.0 + nj as f64, alpha + tail as f64)
                .map_err(|e| PxgError::invalid(format!("stick parameters: {e}")))?;
            v.push(beta.sample(rng));
        }
    }
    let pi = sticks_to_weights(&v);
    Ok((v, pi))
}

/// Unnormalized log allocation weights of every row:
/// log p_ij = log π_j + log L(y_i | cluster j) + log N_p(x_i; μ_j, σ²_j I).
fn allocation_log_weights(data: &Dataset, state: &ChainState, backend: &dyn GraphBackend) -> Result<Vec<Vec<f64>>> {
    let k = state.k();
    let kernels = state.graphs.iter().map(|g| backend.likelihood_kernel(g)).collect::<Result<Vec<_>>>()?;
    let log_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
    Ok((0..data.n())
        .into_par_iter()
        .map(|i| {
            let y = data.y_row(i);
            let x = data.x_row(i);
            (0..k)
                .map(|j| {
                    if log_pi[j] == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        log_pi[j] + kernels[j].log_density(y) + state.cov[j].log_density(x)
                    }
                })
                .collect()
        })
        .collect())
}

/// Normalized allocation probabilities, one row per observation.
pub fn allocation_probabilities(data: &Dataset, state: &ChainState, backend: &dyn GraphBackend) -> Result<Vec<Vec<f64>>> {
    allocation_log_weights(data, state, backend)?
        .into_iter()
        .enumerate()
        .map(|(i, logp)| {
            let norm = linalg::log_sum_exp(&logp);
            if !norm.is_finite() {
                return Err(PxgError::DegenerateAllocation { row: i });
            }
            Ok(logp.iter().map(|lp| (lp - norm).exp()).collect())
        })
        .collect()
}

/// z_i ~ Categorical(allocation probabilities), one substream per row.
pub fn update_allocation(
    data: &Dataset,
    state: &ChainState,
    backend: &dyn GraphBackend,
    rng: &mut ChainRng,
) -> Result<Allocation> {
    let k = state.k();
    let weights = allocation_log_weights(data, state, backend)?;
    let base: u64 = rng.random();
    let labels = weights
        .into_par_iter()
        .enumerate()
        .map(|(i, logp)| {
            let norm = linalg::log_sum_exp(&logp);
            if !norm.is_finite() {
                return Err(PxgError::DegenerateAllocation { row: i });
            }
            let mut row_rng = substream(base, &[i as u64]);
            let u: f64 = row_rng.random();
            let mut acc = 0.0;
            let mut chosen = k - 1;
            for (j, lp) in logp.iter().enumerate() {
                acc += (lp - norm).exp();
                if u < acc {
                    chosen = j;
                    break;
                }
            }
            // Guard against rounding leaving the tail on a zero-weight label.
            while logp[chosen] == f64::NEG_INFINITY && chosen > 0 {
                chosen -= 1;
            }
            Ok(chosen)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Allocation::new(labels))
}

/// Covariate and graph parameters for every cluster given the allocation.
/// Empty clusters receive prior draws.
pub fn refresh_clusters(
    data: &Dataset,
    state: &mut ChainState,
    backend: &dyn GraphBackend,
    rng: &mut ChainRng,
) -> Result<()> {
    let k = state.k();
    let members = state.z.members(k);
    let base: u64 = rng.random();
    let hyper = backend.hyper();
    let updated = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut c_rng = substream(base, &[j as u64]);
            let rows = &members[j];
            if rows.is_empty() {
                let cov = ppmx::draw_prior_params(&hyper.covariate, &mut c_rng);
                let g = backend.prior_draw(&mut c_rng)?;
                return Ok((cov, g));
            }
            let stats = CovariateStats::from_rows(data.p(), rows.iter().map(|&i| data.x_row(i)));
            let post = ppmx::covariate_posterior_stats(&stats, &hyper.covariate);
            let cov = ppmx::draw_covariate_params(&post, &mut c_rng);
            let g = backend.local_update(&state.graphs[j], &data.cluster_data(rows), &mut c_rng)?;
            Ok((cov, g))
        })
        .collect::<Result<Vec<_>>>()?;
    for (j, (cov, g)) in updated.into_iter().enumerate() {
        state.cov[j] = cov;
        state.graphs[j] = g;
    }
    Ok(())
}

/// One full sweep.
pub fn gibbs_sweep(data: &Dataset, state: &mut ChainState, backend: &dyn GraphBackend, rng: &mut ChainRng) -> Result<()> {
    let hyper = backend.hyper();
    let (v, pi) = update_sticks(&state.z, hyper.alpha, state.k(), rng)?;
    state.v = v;
    state.pi = pi;
    state.z = update_allocation(data, state, backend, rng)?;
    refresh_clusters(data, state, backend, rng)?;
    state.iteration += 1;
    Ok(())
}

/// Lloyd's k-means on the covariates, seeded k-means++ style.
fn kmeans_labels(data: &Dataset, k: usize, rng: &mut ChainRng) -> Vec<usize> {
    let n = data.n();
    let k = k.min(n).max(1);
    let mut centers: Vec<DVector<f64>> = vec![data.x_row(rng.random_range(0..n)).clone()];
    while centers.len() < k {
        let d2: Vec<f64> = (0..n)
            .map(|i| centers.iter().map(|c| (data.x_row(i) - c).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        centers.push(data.x_row(pick).clone());
    }
    let mut labels = vec![0; n];
    for _ in 0..20 {
        for (i, l) in labels.iter_mut().enumerate() {
            let x = data.x_row(i);
            *l = (0..centers.len())
                .min_by(|&a, &b| (x - &centers[a]).norm_squared().total_cmp(&(x - &centers[b]).norm_squared()))
                .expect("at least one center");
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if !rows.is_empty() {
                let mut m = DVector::zeros(data.p());
                for &i in &rows {
                    m += data.x_row(i);
                }
                *center = m / rows.len() as f64;
            }
        }
    }
    labels
}

/// Initial state: k-means allocation into at most five clusters, prior graph
/// parameters, then one refresh.
pub fn initial_state(data: &Dataset, backend: &dyn GraphBackend, rng: &mut ChainRng) -> Result<ChainState> {
    let hyper = backend.hyper();
    let k = hyper.k;
    let z = Allocation::new(kmeans_labels(data, k.min(5), rng));
    let (v, pi) = update_sticks(&z, hyper.alpha, k, rng)?;
    let mut cov = Vec::with_capacity(k);
    let mut graphs = Vec::with_capacity(k);
    for _ in 0..k {
        cov.push(ppmx::draw_prior_params(&hyper.covariate, rng));
        graphs.push(backend.prior_draw(rng)?);
    }
    let mut state = ChainState { v, pi, z, cov, graphs, iteration: 0 };
    refresh_clusters(data, &mut state, backend, rng)?;
    Ok(state)
}

/// Σ_j log p(Y*_j | G_j) and Σ_j log g(X*_j) over non-empty clusters.
pub fn loglik_terms(data: &Dataset, state: &ChainState, backend: &dyn GraphBackend, seed: u64) -> Result<(f64, f64)> {
    let k = state.k();
    let members = state.z.members(k);
    let hyper = backend.hyper();
    let terms = (0..k)
        .into_par_iter()
        .filter(|&j| !members[j].is_empty())
        .map(|j| {
            let rows = &members[j];
            let mut m_rng = substream(seed, &[0x6d61_7267, state.iteration as u64, j as u64]);
            let g = backend.log_marginal(&state.graphs[j].edge_indicators(), &data.cluster_data(rows), &mut m_rng)?;
            let stats = CovariateStats::from_rows(data.p(), rows.iter().map(|&i| data.x_row(i)));
            Ok((g, ppmx::log_similarity_stats(&stats, &hyper.covariate)))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok(terms.iter().fold((0.0, 0.0), |acc, t| (acc.0 + t.0, acc.1 + t.1)))
}

/// Runs the sampler and records the retained draws.
pub fn run_chain(data: &Dataset, backend: &dyn GraphBackend, schedule: Schedule, meta: TraceMeta) -> Result<Trace> {
    schedule.validate()?;
    let hyper = backend.hyper();
    hyper.validate()?;
    hyper.check_dataset(data)?;
    let seed = meta.options.seed;
    let mut rng = substream(seed, &[0x696e_6974]);
    let mut state = initial_state(data, backend, &mut rng)?;
    let mut draws = Vec::with_capacity(schedule.retained());
    for it in 0..schedule.iterations {
        let mut sweep_rng = substream(seed, &[0x7377_6570, it as u64]);
        gibbs_sweep(data, &mut state, backend, &mut sweep_rng)?;
        if schedule.keeps(it) {
            let (graph_term, cov_term) = loglik_terms(data, &state, backend, seed)?;
            draws.push(Draw::from_state(it, &state, graph_term, cov_term));
        }
    }
    Ok(Trace { meta, dataset: data.clone(), draws })
}
