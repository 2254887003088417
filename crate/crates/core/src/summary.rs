//! Post-processing of retained draws: point-estimate partition, partition
//! averaged edge probabilities and precision entries, prediction at new
//! covariates, and DIC for the full model and its two nested variants.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::BackendRegistry;
use crate::error::{PxgError, Result};
use crate::linalg;
use crate::model::{Allocation, EdgeIndicators, Graph};
use crate::ppmx::{self, CovariateStats};
use crate::pseudo::{symmetrize, SymmetrizeRule};
use crate::rng::substream;
use crate::trace::{Draw, Trace};

pub const DEFAULT_CUTOFF: f64 = 0.5;

fn require_draws(trace: &Trace) -> Result<()> {
    if trace.is_empty() {
        return Err(PxgError::invalid("trace holds no retained draws"));
    }
    Ok(())
}

/// Mean co-clustering matrix `P̄_ik`.
pub fn coclustering(trace: &Trace) -> Result<DMatrix<f64>> {
    require_draws(trace)?;
    let n = trace.dataset.n();
    let mut p = DMatrix::<f64>::zeros(n, n);
    for d in &trace.draws {
        let z = d.z.labels();
        for i in 0..n {
            for k in i..n {
                if z[i] == z[k] {
                    p[(i, k)] += 1.0;
                }
            }
        }
    }
    p /= trace.len() as f64;
    for i in 0..n {
        for k in 0..i {
            p[(i, k)] = p[(k, i)];
        }
    }
    Ok(p)
}

/// Squared-loss distance of a partition to the co-clustering matrix.
pub fn dahl_loss(z: &Allocation, p: &DMatrix<f64>) -> f64 {
    let n = z.n();
    let l = z.labels();
    let mut loss = 0.0;
    for i in 0..n {
        for k in 0..n {
            let same = if l[i] == l[k] { 1.0 } else { 0.0 };
            loss += (same - p[(i, k)]).powi(2);
        }
    }
    loss
}

/// The retained partition closest to the mean co-clustering matrix, with
/// its draw index. Ties go to the earliest draw.
pub fn dahl_partition(trace: &Trace) -> Result<(Allocation, usize)> {
    let p = coclustering(trace)?;
    let mut best = (f64::INFINITY, 0);
    for (r, d) in trace.draws.iter().enumerate() {
        let loss = dahl_loss(&d.z, &p);
        if loss < best.0 {
            best = (loss, r);
        }
    }
    Ok((trace.draws[best.1].z.canonical(), best.1))
}

/// Per-observation partition-averaged summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbabilityField {
    /// Symmetric inclusion probabilities, zero diagonal.
    pub prob: Vec<DMatrix<f64>>,
    pub omega_hat: Vec<DMatrix<f64>>,
    pub partial_corr: Vec<DMatrix<f64>>,
}

impl EdgeProbabilityField {
    pub fn n(&self) -> usize {
        self.prob.len()
    }

    /// Median-probability graph of observation `i`: edges with probability
    /// strictly above `cutoff`.
    pub fn graph(&self, i: usize, cutoff: f64) -> Graph {
        Graph::support_of(&self.prob[i].map(|v| if v > cutoff { 1.0 } else { 0.0 }), 0.5)
    }
}

/// Indicators, precision entries and partial correlations of one cluster.
type ClusterSummary = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

fn cluster_summaries(draw: &Draw, needed: &[bool]) -> Vec<Option<ClusterSummary>> {
    draw.graphs
        .iter()
        .enumerate()
        .map(|(j, g)| {
            needed[j].then(|| (g.edge_indicators().to_matrix(), g.precision_summary(), g.partial_correlations()))
        })
        .collect()
}

/// p̂_st(x_i) = (1/N) Σ_r g_st^{z_i^r, r}, with the analogous averages of
/// precision entries and partial correlations. Directed pseudo-likelihood
/// indicators are symmetrized with `rule` after averaging.
pub fn partition_average(trace: &Trace, rule: SymmetrizeRule) -> Result<EdgeProbabilityField> {
    require_draws(trace)?;
    let n = trace.dataset.n();
    let q = trace.dataset.q();
    let mut prob = vec![DMatrix::<f64>::zeros(q, q); n];
    let mut omega_hat = prob.clone();
    let mut partial_corr = prob.clone();
    for d in &trace.draws {
        let mut needed = vec![false; d.k()];
        for &z in d.z.labels() {
            needed[z] = true;
        }
        let sums = cluster_summaries(d, &needed);
        for i in 0..n {
            let (g, om, pc) = sums[d.z.label(i)].as_ref().expect("occupied cluster");
            prob[i] += g;
            omega_hat[i] += om;
            partial_corr[i] += pc;
        }
    }
    let scale = 1.0 / trace.len() as f64;
    for i in 0..n {
        prob[i] = symmetrize(&(&prob[i] * scale), rule);
        omega_hat[i] *= scale;
        partial_corr[i] *= scale;
    }
    Ok(EdgeProbabilityField { prob, omega_hat, partial_corr })
}

/// Graphs for the clusters of `partition`: member probabilities are averaged
/// and thresholded at `cutoff`.
pub fn cluster_graphs(field: &EdgeProbabilityField, partition: &Allocation, cutoff: f64) -> Vec<Graph> {
    let k = partition.max_label() + 1;
    partition
        .members(k)
        .iter()
        .map(|rows| {
            let q = field.prob[0].nrows();
            let mut avg = DMatrix::<f64>::zeros(q, q);
            for &i in rows {
                avg += &field.prob[i];
            }
            avg /= rows.len().max(1) as f64;
            Graph::support_of(&avg.map(|v| if v > cutoff { 1.0 } else { 0.0 }), 0.5)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    /// Average the allocation probabilities of the new point.
    #[default]
    RaoBlackwell,
    /// Draw one allocation per retained draw.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub prob: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    pub partial_corr: DMatrix<f64>,
}

/// Allocation weights of a new covariate vector in one draw:
/// w_j ∝ π_j N_p(x; μ_j, σ²_j I).
pub fn allocation_weights(draw: &Draw, x_new: &DVector<f64>) -> Vec<f64> {
    let logw: Vec<f64> = draw.pi.iter().zip(&draw.cov).map(|(p, c)| p.ln() + c.log_density(x_new)).collect();
    let norm = linalg::log_sum_exp(&logw);
    logw.iter().map(|l| (l - norm).exp()).collect()
}

/// Predicted edge probabilities and precision summaries at `x_new`.
/// `stream` selects the random stream used by the sampled mode.
pub fn predict_graph(
    trace: &Trace,
    x_new: &DVector<f64>,
    mode: PredictMode,
    rule: SymmetrizeRule,
    stream: u64,
) -> Result<Prediction> {
    require_draws(trace)?;
    if x_new.len() != trace.dataset.p() {
        return Err(PxgError::dim(format!(
            "new covariate vector has length {} but p = {}",
            x_new.len(),
            trace.dataset.p()
        )));
    }
    let q = trace.dataset.q();
    let mut prob = DMatrix::<f64>::zeros(q, q);
    let mut omega_hat = prob.clone();
    let mut partial_corr = prob.clone();
    let mut rng = substream(trace.meta.options.seed, &[0x7072_6564, stream]);
    for d in &trace.draws {
        let w = allocation_weights(d, x_new);
        match mode {
            PredictMode::RaoBlackwell => {
                for (j, g) in d.graphs.iter().enumerate() {
                    if w[j] > 0.0 {
                        prob += g.edge_indicators().to_matrix() * w[j];
                        omega_hat += g.precision_summary() * w[j];
                        partial_corr += g.partial_correlations() * w[j];
                    }
                }
            }
            PredictMode::Sampled => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = w.len() - 1;
                for (j, wj) in w.iter().enumerate() {
                    acc += wj;
                    if u < acc {
                        chosen = j;
                        break;
                    }
                }
                let g = &d.graphs[chosen];
                prob += g.edge_indicators().to_matrix();
                omega_hat += g.precision_summary();
                partial_corr += g.partial_correlations();
            }
        }
    }
    let scale = 1.0 / trace.len() as f64;
    Ok(Prediction {
        prob: symmetrize(&(prob * scale), rule),
        omega_hat: omega_hat * scale,
        partial_corr: partial_corr * scale,
    })
}

/// Sample variance with the (B - 1) denominator; zero for a single value.
pub fn sample_variance(values: &[f64]) -> f64 {
    let b = values.len();
    if b < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / b as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64
}

/// Point-estimate ingredients shared by the three DIC variants.
#[derive(Debug, Clone, PartialEq)]
pub struct DicPoint {
    pub partition: Allocation,
    pub graphs: Vec<Graph>,
    /// Σ_j log p(Y*_j | Ĝ_j) at the point estimate.
    pub graph_loglik: f64,
    /// Σ_j log g(X*_j) at the point estimate.
    pub cov_loglik: f64,
}

/// Dahl partition, per-cluster median-probability graphs and the two
/// log-likelihood sums evaluated there.
pub fn dic_point(trace: &Trace, registry: &BackendRegistry, cutoff: f64) -> Result<DicPoint> {
    require_draws(trace)?;
    let backend = trace.backend(registry)?;
    let (partition, _) = dahl_partition(trace)?;
    let field = partition_average(trace, SymmetrizeRule::Union)?;
    let graphs = cluster_graphs(&field, &partition, cutoff);
    let data = &trace.dataset;
    let members = partition.members(graphs.len());
    let mut graph_loglik = 0.0;
    let mut cov_loglik = 0.0;
    for (j, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let mut rng = substream(trace.meta.options.seed, &[0x64_6963, j as u64]);
        graph_loglik +=
            backend.log_marginal(&EdgeIndicators::from_graph(&graphs[j]), &data.cluster_data(rows), &mut rng)?;
        let stats = CovariateStats::from_rows(data.p(), rows.iter().map(|&i| data.x_row(i)));
        cov_loglik += ppmx::log_similarity_stats(&stats, &backend.hyper().covariate);
    }
    Ok(DicPoint { partition, graphs, graph_loglik, cov_loglik })
}

/// −2 Σ_j [log p(Y*_j|Ĝ_j) + log g(X*_j)] + var_r(graph_term + cov_term).
pub fn dic_full(trace: &Trace, point: &DicPoint) -> f64 {
    let terms: Vec<f64> = trace.draws.iter().map(|d| d.graph_term + d.cov_term).collect();
    -2.0 * (point.graph_loglik + point.cov_loglik) + sample_variance(&terms)
}

/// −2 Σ_j log p(Y*_j|Ĝ_j) + var_r(graph_term) − 2 log g(X).
pub fn dic_graph_only(trace: &Trace, point: &DicPoint) -> f64 {
    let terms: Vec<f64> = trace.draws.iter().map(|d| d.graph_term).collect();
    let all = CovariateStats::from_rows(trace.dataset.p(), (0..trace.dataset.n()).map(|i| trace.dataset.x_row(i)));
    let log_g_all = ppmx::log_similarity_stats(&all, &trace.meta.options.hyper.covariate);
    -2.0 * point.graph_loglik + sample_variance(&terms) - 2.0 * log_g_all
}

/// −2 Σ_j log g(X*_j) + var_r(cov_term) − 2 log p(Y|G̃) + var_l(pooled graph_term),
/// with G̃ the median-probability graph of a single-cluster fit on all data.
pub fn dic_cov_only(trace: &Trace, point: &DicPoint, pooled: Option<&Trace>, registry: &BackendRegistry, cutoff: f64) -> Result<f64> {
    let pooled = pooled.ok_or(PxgError::MissingPooledTrace)?;
    if !pooled.is_pooled() {
        return Err(PxgError::invalid("the pooled trace must come from a single-cluster fit (K = 1)"));
    }
    if pooled.dataset != trace.dataset {
        return Err(PxgError::invalid("the pooled trace was fitted to different data"));
    }
    let pooled_point = dic_point(pooled, registry, cutoff)?;
    let cov_terms: Vec<f64> = trace.draws.iter().map(|d| d.cov_term).collect();
    let pooled_terms: Vec<f64> = pooled.draws.iter().map(|d| d.graph_term).collect();
    Ok(-2.0 * point.cov_loglik + sample_variance(&cov_terms) - 2.0 * pooled_point.graph_loglik
        + sample_variance(&pooled_terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub full: f64,
    pub graph_only: f64,
    pub cov_only: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov_only_note: Option<String>,
    pub clusters: usize,
}

pub fn dic_report(trace: &Trace, pooled: Option<&Trace>, registry: &BackendRegistry, cutoff: f64) -> Result<DicReport> {
    let point = dic_point(trace, registry, cutoff)?;
    let (cov_only, cov_only_note) = match dic_cov_only(trace, &point, pooled, registry, cutoff) {
        Ok(v) => (Some(v), None),
        Err(PxgError::MissingPooledTrace) => (None, Some(PxgError::MissingPooledTrace.to_string())),
        Err(e) => return Err(e),
    };
    Ok(DicReport {
        full: dic_full(trace, &point),
        graph_only: dic_graph_only(trace, &point),
        cov_only,
        cov_only_note,
        clusters: point.partition.num_clusters(),
    })
}

/// Upper-triangle edges sorted by decreasing probability, for reporting
/// false-discovery based selections downstream.
pub fn ranked_edges(prob: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let q = prob.nrows();
    let mut out = Vec::with_capacity(q * (q - 1) / 2);
    for s in 0..q {
        for t in (s + 1)..q {
            out.push((s, t, prob[(s, t)]));
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    out
}
