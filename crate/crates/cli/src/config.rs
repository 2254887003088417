//! JSON run configuration. Every field is optional; omitted fields take the
//! data-dependent defaults of [`Hyperparameters::defaults_for`].

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use pxg_core::backend::PseudoAllocation;
use pxg_core::{BackendOptions, Dataset, Hyperparameters};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, InputContext};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub alpha: Option<f64>,
    pub alpha_g: Option<f64>,
    /// G-Wishart degrees of freedom.
    pub b: Option<f64>,
    /// G-Wishart scale matrix, row by row.
    pub d: Option<Vec<Vec<f64>>>,
    pub eta0: Option<f64>,
    pub eta1: Option<f64>,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub mu0: Option<Vec<f64>>,
    pub sigma0sq: Option<f64>,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    /// Truncation level.
    pub k: Option<usize>,
    pub norm_const_draws: Option<usize>,
    pub marginal_draws: Option<usize>,
    pub pseudo_allocation: Option<PseudoAllocation>,
}

impl FitConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::file(path, e))
    }

    /// Resolved backend options for `data`.
    pub fn resolve(&self, data: &Dataset, seed: u64) -> CliResult<BackendOptions> {
        let mut h = Hyperparameters::defaults_for(data);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut h.alpha, self.alpha);
        set(&mut h.alpha_g, self.alpha_g);
        set(&mut h.gwishart.b, self.b);
        set(&mut h.spike_slab.eta0, self.eta0);
        set(&mut h.spike_slab.eta1, self.eta1);
        set(&mut h.spike_slab.a1, self.a1);
        set(&mut h.spike_slab.a2, self.a2);
        set(&mut h.covariate.sigma0sq, self.sigma0sq);
        set(&mut h.covariate.b1, self.b1);
        set(&mut h.covariate.b2, self.b2);
        if let Some(d) = &self.d {
            let q = d.len();
            if d.iter().any(|row| row.len() != q) {
                return Err(CliError::input("config field d must be a square matrix"));
            }
            h.gwishart.d = DMatrix::from_fn(q, q, |s, t| d[s][t]);
        }
        if let Some(mu0) = &self.mu0 {
            h.covariate.mu0 = DVector::from_column_slice(mu0);
        }
        if let Some(k) = self.k {
            h.k = k;
        }
        h.validate().into_input()?;
        h.check_dataset(data).into_input()?;
        let mut options = BackendOptions::new(h, seed);
        if let Some(m) = self.norm_const_draws {
            options.norm_const_draws = m;
        }
        if let Some(m) = self.marginal_draws {
            options.marginal_draws = m;
        }
        if let Some(a) = self.pseudo_allocation {
            options.pseudo_allocation = a;
        }
        if options.norm_const_draws == 0 || options.marginal_draws == 0 {
            return Err(CliError::input("Monte Carlo draw counts must be positive"));
        }
        Ok(options)
    }
}
