//! Likelihood backends behind a common trait, selected by name at runtime.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PxgError, Result};
use crate::gwishart::{self, NormConstCache};
use crate::model::{
    pseudo_loglik, ClusterData, EdgeIndicators, GaussianKernel, Graph, Hyperparameters, NodeRegression,
    PrecisionMatrix,
};
use crate::pseudo;
use crate::rng::{substream, ChainRng};

/// Graph-level parameters of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphState {
    Gaussian { graph: Graph, omega: PrecisionMatrix },
    Pseudo { regressions: Vec<NodeRegression> },
}

impl GraphState {
    pub fn kind(&self) -> &'static str {
        match self {
            GraphState::Gaussian { .. } => "gaussian",
            GraphState::Pseudo { .. } => "pseudo",
        }
    }

    pub fn q(&self) -> usize {
        match self {
            GraphState::Gaussian { graph, .. } => graph.q(),
            GraphState::Pseudo { regressions } => regressions.len(),
        }
    }

    pub fn edge_indicators(&self) -> EdgeIndicators {
        match self {
            GraphState::Gaussian { graph, .. } => EdgeIndicators::from_graph(graph),
            GraphState::Pseudo { regressions } => EdgeIndicators::from_regressions(regressions),
        }
    }

    /// Ω for the Gaussian backend; the symmetric reconstruction from the node
    /// regressions otherwise.
    pub fn precision_summary(&self) -> DMatrix<f64> {
        match self {
            GraphState::Gaussian { omega, .. } => omega.matrix().clone(),
            GraphState::Pseudo { regressions } => pseudo::reconstruct_omega(regressions),
        }
    }

    pub fn partial_correlations(&self) -> DMatrix<f64> {
        match self {
            GraphState::Gaussian { omega, .. } => omega.partial_correlations(),
            GraphState::Pseudo { regressions } => pseudo::partial_correlations(regressions),
        }
    }
}

/// Per-cluster response log-density used in the allocation step.
#[derive(Debug, Clone)]
pub enum LikelihoodKernel {
    Gaussian(GaussianKernel),
    Pseudo(Vec<NodeRegression>),
}

impl LikelihoodKernel {
    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        match self {
            LikelihoodKernel::Gaussian(k) => k.log_density(y),
            LikelihoodKernel::Pseudo(regs) => pseudo_loglik(y, regs).expect("validated regressions"),
        }
    }
}

/// Likelihood used to allocate observations under the pseudo backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoAllocation {
    /// Product of node-wise conditionals.
    #[default]
    Pseudo,
    /// Gaussian with the reconstructed precision, falling back to the
    /// pseudo-likelihood when the reconstruction is not positive definite.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendOptions {
    pub hyper: Hyperparameters,
    /// Monte Carlo draws per prior normalizing constant in edge moves.
    pub norm_const_draws: usize,
    /// Monte Carlo draws per constant in marginal likelihoods.
    pub marginal_draws: usize,
    pub pseudo_allocation: PseudoAllocation,
    pub seed: u64,
}

impl BackendOptions {
    pub fn new(hyper: Hyperparameters, seed: u64) -> Self {
        Self { hyper, norm_const_draws: 100, marginal_draws: 1000, pseudo_allocation: PseudoAllocation::Pseudo, seed }
    }
}

pub trait GraphBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn hyper(&self) -> &Hyperparameters;

    /// Draw of the graph parameters from their prior.
    fn prior_draw(&self, rng: &mut ChainRng) -> Result<GraphState>;

    /// One local update of a cluster's graph parameters given its data.
    fn local_update(&self, state: &GraphState, data: &ClusterData, rng: &mut ChainRng) -> Result<GraphState>;

    fn likelihood_kernel(&self, state: &GraphState) -> Result<LikelihoodKernel>;

    /// log p(Y* | G) with the continuous graph parameters integrated out.
    fn log_marginal(&self, indicators: &EdgeIndicators, data: &ClusterData, rng: &mut ChainRng) -> Result<f64>;
}

pub struct GWishartBackend {
    options: BackendOptions,
    constants: NormConstCache,
}

impl GWishartBackend {
    pub fn new(options: &BackendOptions) -> Result<Self> {
        options.hyper.validate()?;
        if options.norm_const_draws < 10 || options.marginal_draws < 10 {
            return Err(PxgError::invalid("Monte Carlo draw counts must be at least 10"));
        }
        let constants =
            NormConstCache::new(options.hyper.gwishart.clone(), options.norm_const_draws, options.seed);
        Ok(Self { options: options.clone(), constants })
    }

    fn unpack<'a>(&self, state: &'a GraphState) -> Result<(&'a Graph, &'a PrecisionMatrix)> {
        match state {
            GraphState::Gaussian { graph, omega } => Ok((graph, omega)),
            other => Err(PxgError::BackendMismatch { backend: self.name().into(), found: other.kind() }),
        }
    }
}

impl GraphBackend for GWishartBackend {
    fn name(&self) -> &'static str {
        "gwishart"
    }

    fn hyper(&self) -> &Hyperparameters {
        &self.options.hyper
    }

    fn prior_draw(&self, rng: &mut ChainRng) -> Result<GraphState> {
        let q = self.hyper().q();
        let mut graph = Graph::empty(q);
        for s in 0..q {
            for t in (s + 1)..q {
                graph.set_edge(s, t, rng.random::<f64>() < self.hyper().alpha_g);
            }
        }
        let omega = gwishart::sample_gwishart(&graph, &self.hyper().gwishart, rng)?;
        Ok(GraphState::Gaussian { graph, omega })
    }

    fn local_update(&self, state: &GraphState, data: &ClusterData, rng: &mut ChainRng) -> Result<GraphState> {
        let (graph, omega) = self.unpack(state)?;
        let q = graph.q();
        let mut graph = graph.clone();
        let mut omega = omega.clone();
        for s in 0..q {
            for t in (s + 1)..q {
                let mv = gwishart::update_edge_and_omega(
                    &graph,
                    &omega,
                    data,
                    self.hyper().alpha_g,
                    &self.constants,
                    (s, t),
                    rng,
                )?;
                graph = mv.graph;
                omega = mv.omega;
            }
        }
        let omega = gwishart::draw_posterior_omega(&graph, data, &self.hyper().gwishart, rng)?;
        Ok(GraphState::Gaussian { graph, omega })
    }

    fn likelihood_kernel(&self, state: &GraphState) -> Result<LikelihoodKernel> {
        let (_, omega) = self.unpack(state)?;
        Ok(LikelihoodKernel::Gaussian(GaussianKernel::new(omega.matrix())?))
    }

    fn log_marginal(&self, indicators: &EdgeIndicators, data: &ClusterData, rng: &mut ChainRng) -> Result<f64> {
        gwishart::log_marginal_gwishart(
            &indicators.union_graph(),
            data,
            &self.hyper().gwishart,
            self.options.marginal_draws,
            rng,
        )
    }
}

pub struct PseudoBackend {
    options: BackendOptions,
}

impl PseudoBackend {
    pub fn new(options: &BackendOptions) -> Result<Self> {
        options.hyper.validate()?;
        Ok(Self { options: options.clone() })
    }

    fn unpack<'a>(&self, state: &'a GraphState) -> Result<&'a [NodeRegression]> {
        match state {
            GraphState::Pseudo { regressions } => Ok(regressions),
            other => Err(PxgError::BackendMismatch { backend: self.name().into(), found: other.kind() }),
        }
    }
}

impl GraphBackend for PseudoBackend {
    fn name(&self) -> &'static str {
        "pseudo"
    }

    fn hyper(&self) -> &Hyperparameters {
        &self.options.hyper
    }

    fn prior_draw(&self, rng: &mut ChainRng) -> Result<GraphState> {
        let q = self.hyper().q();
        let regressions = (0..q)
            .map(|_| pseudo::prior_regression(q, &self.hyper().spike_slab, self.hyper().alpha_g, rng))
            .collect();
        Ok(GraphState::Pseudo { regressions })
    }

    fn local_update(&self, state: &GraphState, data: &ClusterData, rng: &mut ChainRng) -> Result<GraphState> {
        let regs = self.unpack(state)?;
        let base: u64 = rng.random();
        let h = self.hyper();
        let regressions = regs
            .par_iter()
            .enumerate()
            .map(|(s, r)| {
                let mut node_rng = substream(base, &[s as u64]);
                pseudo::update_node(s, data, r, &h.spike_slab, h.alpha_g, &mut node_rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphState::Pseudo { regressions })
    }

    fn likelihood_kernel(&self, state: &GraphState) -> Result<LikelihoodKernel> {
        let regs = self.unpack(state)?;
        if self.options.pseudo_allocation == PseudoAllocation::Gaussian {
            if let Ok(k) = GaussianKernel::new(&pseudo::reconstruct_omega(regs)) {
                return Ok(LikelihoodKernel::Gaussian(k));
            }
        }
        Ok(LikelihoodKernel::Pseudo(regs.to_vec()))
    }

    fn log_marginal(&self, indicators: &EdgeIndicators, data: &ClusterData, _rng: &mut ChainRng) -> Result<f64> {
        pseudo::log_pseudo_marginal(indicators, data, &self.hyper().spike_slab)
    }
}

pub type BackendConstructor = fn(&BackendOptions) -> Result<Box<dyn GraphBackend>>;

/// Name-to-constructor table of available backends.
pub struct BackendRegistry {
    entries: Vec<(&'static str, BackendConstructor)>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Registry holding `gwishart` and `pseudo`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("gwishart", |o| Ok(Box::new(GWishartBackend::new(o)?)));
        r.register("pseudo", |o| Ok(Box::new(PseudoBackend::new(o)?)));
        r
    }

    /// Adds or replaces a backend.
    pub fn register(&mut self, name: &'static str, ctor: BackendConstructor) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, ctor));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str, options: &BackendOptions) -> Result<Box<dyn GraphBackend>> {
        let (_, ctor) = self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| PxgError::UnknownBackend(name.to_string()))?;
        ctor(options)
    }
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}
