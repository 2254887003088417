//! Shared domain types and the density evaluations used by both backends.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PxgError, Result};
use crate::gwishart::GWishartParams;
use crate::linalg;
use crate::ppmx::CovariatePrior;
use crate::pseudo::SpikeSlab;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Off-diagonal precision entries at or below this magnitude count as zero.
pub const GRAPH_TOL: f64 = 1e-8;

/// Relative tolerance for the symmetry check on precision matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Responses `Y` (n x q) paired with covariates `X` (n x p).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    y_rows: Vec<DVector<f64>>,
    x_rows: Vec<DVector<f64>>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.nrows() != x.nrows() {
            return Err(PxgError::dim(format!(
                "Y has {} rows but X has {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.nrows() < 1 {
            return Err(PxgError::dim("dataset needs at least one observation"));
        }
        if y.ncols() < 2 {
            return Err(PxgError::dim(format!("need q >= 2 responses, got {}", y.ncols())));
        }
        if x.ncols() < 1 {
            return Err(PxgError::dim("need p >= 1 covariates"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(PxgError::NonFinite("Y".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PxgError::NonFinite("X".into()));
        }
        let y_rows = (0..y.nrows()).map(|i| y.row(i).transpose()).collect();
        let x_rows = (0..x.nrows()).map(|i| x.row(i).transpose()).collect();
        Ok(Self { y, x, y_rows, x_rows })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }
    pub fn q(&self) -> usize {
        self.y.ncols()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y_row(&self, i: usize) -> &DVector<f64> {
        &self.y_rows[i]
    }
    pub fn x_row(&self, i: usize) -> &DVector<f64> {
        &self.x_rows[i]
    }

    /// Subtracts column means from `Y`.
    pub fn centered(&self) -> Self {
        let mut y = self.y.clone();
        for mut col in y.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        Self::new(y, self.x.clone()).expect("centering preserves validity")
    }

    /// Centers and scales each response column to unit sample variance.
    /// Constant columns are only centered.
    pub fn standardized(&self) -> Self {
        let mut y = self.centered().y;
        let n = y.nrows() as f64;
        for mut col in y.column_iter_mut() {
            let sd = (col.norm_squared() / (n - 1.0).max(1.0)).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
        Self::new(y, self.x.clone()).expect("scaling preserves validity")
    }

    /// Sufficient statistics of the responses indexed by `rows`.
    pub fn cluster_data(&self, rows: &[usize]) -> ClusterData {
        let q = self.q();
        let mut scatter = DMatrix::<f64>::zeros(q, q);
        for &i in rows {
            let y = &self.y_rows[i];
            scatter.ger(1.0, y, y, 1.0);
        }
        ClusterData { n: rows.len(), scatter }
    }

    pub fn column_means_x(&self) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.x.column_iter().map(|c| c.mean()))
    }
}

/// Cluster-level response statistics: size and scatter `Y*^T Y*`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterData {
    pub n: usize,
    pub scatter: DMatrix<f64>,
}

impl ClusterData {
    pub fn empty(q: usize) -> Self {
        Self { n: 0, scatter: DMatrix::zeros(q, q) }
    }

    pub fn from_rows(y: &DMatrix<f64>) -> Self {
        Self { n: y.nrows(), scatter: y.transpose() * y }
    }

    pub fn q(&self) -> usize {
        self.scatter.nrows()
    }
}

/// Undirected graph on `q` nodes stored as a symmetric adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    q: usize,
    adj: Vec<bool>,
}

impl Graph {
    pub fn empty(q: usize) -> Self {
        Self { q, adj: vec![false; q * q] }
    }

    pub fn complete(q: usize) -> Self {
        let mut g = Self::empty(q);
        for s in 0..q {
            for t in (s + 1)..q {
                g.set_edge(s, t, true);
            }
        }
        g
    }

    pub fn from_edges(q: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(q);
        for &(s, t) in edges {
            if s >= q || t >= q || s == t {
                return Err(PxgError::invalid(format!("bad edge ({s}, {t}) for q = {q}")));
            }
            g.set_edge(s, t, true);
        }
        Ok(g)
    }

    /// Edges whose absolute off-diagonal entry exceeds `tol`.
    pub fn support_of(m: &DMatrix<f64>, tol: f64) -> Self {
        let q = m.nrows();
        let mut g = Self::empty(q);
        for s in 0..q {
            for t in (s + 1)..q {
                if m[(s, t)].abs() > tol {
                    g.set_edge(s, t, true);
                }
            }
        }
        g
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn has_edge(&self, s: usize, t: usize) -> bool {
        self.adj[s * self.q + t]
    }

    pub fn set_edge(&mut self, s: usize, t: usize, on: bool) {
        if s == t {
            return;
        }
        self.adj[s * self.q + t] = on;
        self.adj[t * self.q + s] = on;
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in 0..self.q {
            for t in (s + 1)..self.q {
                if self.has_edge(s, t) {
                    out.push((s, t));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        (0..self.q).filter(|&u| u != v && self.has_edge(v, u)).collect()
    }

    /// Packs the upper triangle into bytes; used as a cache key and in the
    /// trace format.
    pub fn upper_bits(&self) -> Vec<u8> {
        let mut bits = Vec::with_capacity(self.q * (self.q.saturating_sub(1)) / 2);
        for s in 0..self.q {
            for t in (s + 1)..self.q {
                bits.push(self.has_edge(s, t) as u8);
            }
        }
        bits
    }

    pub fn from_upper_bits(q: usize, bits: &[u8]) -> Result<Self> {
        if bits.len() != q * (q.saturating_sub(1)) / 2 {
            return Err(PxgError::dim("upper-triangle length does not match q"));
        }
        let mut g = Self::empty(q);
        let mut k = 0;
        for s in 0..q {
            for t in (s + 1)..q {
                g.set_edge(s, t, bits[k] != 0);
                k += 1;
            }
        }
        Ok(g)
    }

    pub fn to_indicator_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.q, self.q, |s, t| if self.has_edge(s, t) { 1.0 } else { 0.0 })
    }
}

/// Directed edge indicators `g_st`, one row per node. The pseudo-likelihood
/// backend does not force `g_st = g_ts`; for the Gaussian backend the
/// indicators are always symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeIndicators {
    q: usize,
    rows: Vec<bool>,
}

impl EdgeIndicators {
    pub fn from_graph(g: &Graph) -> Self {
        Self { q: g.q, rows: g.adj.clone() }
    }

    pub fn from_regressions(regs: &[NodeRegression]) -> Self {
        let q = regs.len();
        let mut rows = vec![false; q * q];
        for (s, r) in regs.iter().enumerate() {
            for (k, &on) in r.indicators.iter().enumerate() {
                rows[s * q + other_index(s, k)] = on;
            }
        }
        Self { q, rows }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn get(&self, s: usize, t: usize) -> bool {
        self.rows[s * self.q + t]
    }

    /// Indicators of row `s` in regression order (t != s ascending).
    pub fn row(&self, s: usize) -> Vec<bool> {
        (0..self.q).filter(|&t| t != s).map(|t| self.get(s, t)).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.q, self.q, |s, t| if self.get(s, t) { 1.0 } else { 0.0 })
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.q).all(|s| (0..self.q).all(|t| self.get(s, t) == self.get(t, s)))
    }

    /// `g_st OR g_ts`.
    pub fn union_graph(&self) -> Graph {
        let mut g = Graph::empty(self.q);
        for s in 0..self.q {
            for t in (s + 1)..self.q {
                g.set_edge(s, t, self.get(s, t) || self.get(t, s));
            }
        }
        g
    }
}

/// Index of the `k`-th regressor of node `s` (all nodes except `s`, ascending).
#[inline]
pub fn other_index(s: usize, k: usize) -> usize {
    if k < s {
        k
    } else {
        k + 1
    }
}

/// Position of node `t` among the regressors of node `s`.
#[inline]
pub fn regressor_slot(s: usize, t: usize) -> usize {
    debug_assert!(s != t);
    if t < s {
        t
    } else {
        t - 1
    }
}

/// Symmetric positive-definite precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix(DMatrix<f64>);

impl PrecisionMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(PxgError::dim("precision matrix must be square"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(PxgError::NonFinite("precision matrix".into()));
        }
        if !linalg::is_symmetric(&m, SYMMETRY_TOL) {
            return Err(PxgError::invalid("precision matrix is not symmetric"));
        }
        linalg::cholesky(&m)?;
        Ok(Self(m))
    }

    pub fn identity(q: usize) -> Self {
        Self(DMatrix::identity(q, q))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn q(&self) -> usize {
        self.0.nrows()
    }

    pub fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.q() != self.q() {
            return Err(PxgError::dim("graph and precision matrix sizes differ"));
        }
        for s in 0..self.q() {
            for t in (s + 1)..self.q() {
                let v = self.0[(s, t)];
                if !g.has_edge(s, t) && v.abs() > GRAPH_TOL {
                    return Err(PxgError::GraphIncompatible { s, t, value: v });
                }
            }
        }
        Ok(())
    }

    pub fn support(&self) -> Graph {
        Graph::support_of(&self.0, GRAPH_TOL)
    }

    /// Partial correlations `-ω_st / sqrt(ω_ss ω_tt)`, unit diagonal.
    pub fn partial_correlations(&self) -> DMatrix<f64> {
        let q = self.q();
        DMatrix::from_fn(q, q, |s, t| {
            if s == t {
                1.0
            } else {
                -self.0[(s, t)] / (self.0[(s, s)] * self.0[(t, t)]).sqrt()
            }
        })
    }
}

/// Cluster labels `z_i` (0-based internally).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    labels: Vec<usize>,
}

impl Allocation {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn single(n: usize) -> Self {
        Self { labels: vec![0; n] }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn sizes(&self, k: usize) -> Vec<usize> {
        let mut n = vec![0; k];
        for &z in &self.labels {
            n[z] += 1;
        }
        n
    }

    pub fn members(&self, k: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); k];
        for (i, &z) in self.labels.iter().enumerate() {
            sets[z].push(i);
        }
        sets
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Number of non-empty clusters.
    pub fn num_clusters(&self) -> usize {
        let mut seen = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Relabels clusters 0, 1, ... in order of first appearance.
    pub fn canonical(&self) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = self
            .labels
            .iter()
            .map(|z| {
                let next = map.len();
                *map.entry(*z).or_insert(next)
            })
            .collect();
        Self { labels }
    }
}

/// Node-wise regression `y_s | y_-s ~ N(y_-s^T beta, tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRegression {
    pub beta: DVector<f64>,
    pub tau: f64,
    pub indicators: Vec<bool>,
}

impl NodeRegression {
    pub fn new(beta: DVector<f64>, tau: f64, indicators: Vec<bool>) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(PxgError::invalid(format!("residual variance must be positive, got {tau}")));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(PxgError::NonFinite("regression coefficients".into()));
        }
        if beta.len() != indicators.len() {
            return Err(PxgError::dim("beta and indicator lengths differ"));
        }
        Ok(Self { beta, tau, indicators })
    }
}

/// All model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Cohesion / DP concentration.
    pub alpha: f64,
    /// Prior edge inclusion probability.
    pub alpha_g: f64,
    pub gwishart: GWishartParams,
    pub spike_slab: SpikeSlab,
    pub covariate: CovariatePrior,
    /// Stick-breaking truncation level.
    pub k: usize,
}

impl Hyperparameters {
    /// Defaults for a dataset: α = 1, b = 3, D = I, α_G = 0.5 (q <= 10) or
    /// 2/(q-1), η1 = 1, η0 = 0.01/q, a1 = a2 = 1, μ0 = column means of X,
    /// σ0² = 1, b1 = 2, b2 = 1, K = min(n, 20).
    pub fn defaults_for(data: &Dataset) -> Self {
        let q = data.q();
        Self {
            alpha: 1.0,
            alpha_g: default_alpha_g(q),
            gwishart: GWishartParams::default_for(q),
            spike_slab: SpikeSlab::default_for(q),
            covariate: CovariatePrior::new(data.column_means_x(), 1.0, 2.0, 1.0)
                .expect("defaults are valid"),
            k: data.n().min(20),
        }
    }

    pub fn q(&self) -> usize {
        self.gwishart.d.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariate.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(PxgError::invalid("alpha must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha_g) {
            return Err(PxgError::invalid("alpha_g must lie in [0, 1]"));
        }
        if self.k < 1 {
            return Err(PxgError::invalid("truncation level K must be at least 1"));
        }
        self.gwishart.validate()?;
        self.spike_slab.validate()?;
        self.covariate.validate()?;
        Ok(())
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if self.q() != data.q() {
            return Err(PxgError::dim(format!("D is {}x{} but q = {}", self.q(), self.q(), data.q())));
        }
        if self.p() != data.p() {
            return Err(PxgError::dim(format!("mu0 has length {} but p = {}", self.p(), data.p())));
        }
        Ok(())
    }
}

pub fn default_alpha_g(q: usize) -> f64 {
    if q <= 10 {
        0.5
    } else {
        2.0 / (q as f64 - 1.0)
    }
}

/// Precomputed Cholesky factor of a precision matrix for repeated Gaussian
/// log-density evaluation.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    chol: DMatrix<f64>,
    constant: f64,
}

impl GaussianKernel {
    pub fn new(omega: &DMatrix<f64>) -> Result<Self> {
        let chol = linalg::cholesky(omega)?;
        let q = omega.nrows() as f64;
        let constant = 0.5 * linalg::log_det_chol(&chol) - 0.5 * q * LN_2PI;
        Ok(Self { chol, constant })
    }

    /// log N_q(y; 0, Ω^{-1}).
    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        // y^T Ω y = |L^T y|^2
        let q = y.len();
        let mut quad = 0.0;
        for j in 0..q {
            let mut s = 0.0;
            for i in j..q {
                s += self.chol[(i, j)] * y[i];
            }
            quad += s * s;
        }
        self.constant - 0.5 * quad
    }
}

/// log N_q(y; 0, Ω^{-1}) via Cholesky of Ω.
pub fn gaussian_loglik(y: &DVector<f64>, omega: &PrecisionMatrix) -> Result<f64> {
    if y.len() != omega.q() {
        return Err(PxgError::dim("y and omega sizes differ"));
    }
    Ok(GaussianKernel::new(omega.matrix())?.log_density(y))
}

/// log N(y; mean, var).
pub fn normal_logpdf(y: f64, mean: f64, var: f64) -> f64 {
    let r = y - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// Σ_s log N(y_s; y_-s^T β_s, τ_s).
pub fn pseudo_loglik(y: &DVector<f64>, regs: &[NodeRegression]) -> Result<f64> {
    let q = y.len();
    if regs.len() != q {
        return Err(PxgError::dim(format!("need {q} regressions, got {}", regs.len())));
    }
    let mut total = 0.0;
    for (s, r) in regs.iter().enumerate() {
        if !(r.tau > 0.0) {
            return Err(PxgError::invalid(format!("tau_{s} = {} is not positive", r.tau)));
        }
        if r.beta.len() != q - 1 {
            return Err(PxgError::dim("beta length must be q - 1"));
        }
        let mut mean = 0.0;
        for k in 0..q - 1 {
            mean += y[other_index(s, k)] * r.beta[k];
        }
        total += normal_logpdf(y[s], mean, r.tau);
    }
    Ok(total)
}

/// Node-wise regressions implied by a precision matrix:
/// β_st = -ω_st / ω_ss, τ_s = 1 / ω_ss.
pub fn omega_to_regressions(omega: &PrecisionMatrix) -> Vec<NodeRegression> {
    let m = omega.matrix();
    let q = m.nrows();
    (0..q)
        .map(|s| {
            let wss = m[(s, s)];
            let beta = DVector::from_fn(q - 1, |k, _| -m[(s, other_index(s, k))] / wss);
            let indicators = (0..q - 1).map(|k| m[(s, other_index(s, k))].abs() > GRAPH_TOL).collect();
            NodeRegression { beta, tau: 1.0 / wss, indicators }
        })
        .collect()
}

/// Σ_j π_j N_q(y; 0, Ω_j^{-1}).
pub fn mixture_density(y: &DVector<f64>, weights: &[f64], omegas: &[PrecisionMatrix]) -> Result<f64> {
    if weights.is_empty() || omegas.is_empty() {
        return Err(PxgError::EmptyMixture);
    }
    if weights.len() != omegas.len() {
        return Err(PxgError::dim("weights and components differ in length"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
        return Err(PxgError::invalid(format!("mixture weights must form a simplex (sum {total})")));
    }
    let mut terms = Vec::with_capacity(weights.len());
    for (w, om) in weights.iter().zip(omegas) {
        terms.push(w.ln() + gaussian_loglik(y, om)?);
    }
    Ok(linalg::log_sum_exp(&terms).exp())
}

pub(crate) mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

pub(crate) mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}
