//! Synthetic data with known covariate-dependent precision matrices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PxgError, Result};
use crate::gwishart::{sample_gwishart, GWishartParams};
use crate::linalg;
use crate::model::{Dataset, Graph, PrecisionMatrix};
use crate::rng::{substream, ChainRng};

/// Three-node precision matrix, piecewise linear in `x ∈ (-1, 1)` with
/// breakpoints at -0.33 and 0.33.
pub fn example1_precision(x: f64) -> Result<(PrecisionMatrix, Graph)> {
    if !(x > -1.0 && x < 1.0) {
        return Err(PxgError::invalid(format!("example 1 covariate must lie in (-1, 1), got {x}")));
    }
    let (w12, w13, w23) = if x < -0.33 {
        (0.0, -0.75 * x + 0.25, 0.75 * x + 1.25)
    } else if x < 0.33 {
        (0.75 * x + 0.75, 0.0, -0.75 * x + 0.75)
    } else {
        (-0.75 * x + 1.25, 0.75 * x + 0.25, 0.0)
    };
    let m = DMatrix::from_row_slice(3, 3, &[1.2, w12, w13, w12, 1.2, w23, w13, w23, 1.2]);
    let omega = PrecisionMatrix::new(m)?;
    let graph = omega.support();
    Ok((omega, graph))
}

/// Region index (0, 1, 2) of an example 1 covariate.
pub fn example1_region(x: f64) -> usize {
    if x < -0.33 {
        0
    } else if x < 0.33 {
        1
    } else {
        2
    }
}

/// Five-node chain precision: diagonal 1.4, chain entries `x`,
/// `x ∈ (-0.8, 0) ∪ (0, 0.8)`.
pub fn example2_precision(x: f64) -> Result<(PrecisionMatrix, Graph)> {
    if !(x > -0.8 && x < 0.8) || x == 0.0 {
        return Err(PxgError::invalid(format!("example 2 covariate must lie in (-0.8, 0) or (0, 0.8), got {x}")));
    }
    let mut m = DMatrix::from_diagonal_element(5, 5, 1.4);
    for s in 0..4 {
        m[(s, s + 1)] = x;
        m[(s + 1, s)] = x;
    }
    let omega = PrecisionMatrix::new(m)?;
    let graph = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)])?;
    Ok((omega, graph))
}

/// Each edge present independently with probability `density`.
pub fn random_graph<R: Rng + ?Sized>(q: usize, density: f64, rng: &mut R) -> Graph {
    let mut g = Graph::empty(q);
    for s in 0..q {
        for t in (s + 1)..q {
            g.set_edge(s, t, rng.random::<f64>() < density);
        }
    }
    g
}

/// Two-cluster ground truth with covariate laws N_p(0, I) and N_p(2·1, I).
#[derive(Debug, Clone, PartialEq)]
pub struct Example3Truth {
    pub graphs: [Graph; 2],
    pub omegas: [PrecisionMatrix; 2],
    pub means: [DVector<f64>; 2],
}

pub fn example3_truth(q: usize, p: usize, sparsity: f64, df: f64, seed: u64) -> Result<Example3Truth> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(PxgError::invalid(format!("sparsity must lie in [0, 1), got {sparsity}")));
    }
    if q < 2 || p < 1 {
        return Err(PxgError::invalid("example 3 needs q >= 2 and p >= 1"));
    }
    let params = GWishartParams::new(df, DMatrix::identity(q, q))?;
    let mut rng = substream(seed, &[0x6578_3374]);
    let g1 = random_graph(q, sparsity, &mut rng);
    let g2 = random_graph(q, sparsity, &mut rng);
    let o1 = sample_gwishart(&g1, &params, &mut rng)?;
    let o2 = sample_gwishart(&g2, &params, &mut rng)?;
    Ok(Example3Truth {
        graphs: [g1, g2],
        omegas: [o1, o2],
        means: [DVector::zeros(p), DVector::from_element(p, 2.0)],
    })
}

/// Which design to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "example", rename_all = "lowercase")]
pub enum SimSpec {
    /// `n_per` covariates uniform on each of the three regions.
    Example1 { n_per: usize },
    /// `n` covariates uniform on (-0.8, 0) ∪ (0, 0.8).
    Example2 { n: usize },
    /// `n_per` observations from each of two clusters.
    Example3 { q: usize, p: usize, sparsity: f64, df: f64, n_per: usize },
}

/// Ground truth attached to a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// Region (examples 1, 3) or 0 (example 2) of each observation.
    pub labels: Vec<usize>,
    pub precisions: Vec<PrecisionMatrix>,
    pub graphs: Vec<Graph>,
    /// Graph of each label.
    pub cluster_graphs: Vec<Graph>,
}

/// y ~ N_q(0, Ω^{-1}).
pub fn draw_gaussian<R: Rng + ?Sized>(omega: &PrecisionMatrix, rng: &mut R) -> Result<DVector<f64>> {
    let l = linalg::cholesky(omega.matrix())?;
    let z = DVector::from_fn(omega.q(), |_, _| StandardNormal.sample(rng));
    Ok(linalg::solve_upper_t(&l, &z))
}

fn uniform_open<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R, reject: impl Fn(f64) -> bool) -> f64 {
    loop {
        let x = rng.random_range(lo..hi);
        if !reject(x) {
            return x;
        }
    }
}

pub fn generate(design: &SimSpec, seed: u64) -> Result<(Dataset, Truth)> {
    let mut rng: ChainRng = substream(seed, &[0x73_696d]);
    let mut xs: Vec<DVector<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut precisions = Vec::new();
    let mut graphs = Vec::new();
    let cluster_graphs;
    match design {
        SimSpec::Example1 { n_per } => {
            let bounds = [(-1.0, -0.33), (-0.33, 0.33), (0.33, 1.0)];
            for (r, (lo, hi)) in bounds.iter().enumerate() {
                for _ in 0..*n_per {
                    let x = uniform_open(*lo, *hi, &mut rng, |v| v <= -1.0);
                    let (om, g) = example1_precision(x)?;
                    xs.push(DVector::from_element(1, x));
                    labels.push(r);
                    precisions.push(om);
                    graphs.push(g);
                }
            }
            cluster_graphs = [-0.5, 0.0, 0.5].iter().map(|&x| example1_precision(x).map(|p| p.1)).collect::<Result<_>>()?;
        }
        SimSpec::Example2 { n } => {
            for _ in 0..*n {
                let x = uniform_open(-0.8, 0.8, &mut rng, |v| v == 0.0 || v <= -0.8);
                let (om, g) = example2_precision(x)?;
                xs.push(DVector::from_element(1, x));
                labels.push(0);
                precisions.push(om);
                graphs.push(g);
            }
            cluster_graphs = vec![example2_precision(0.4)?.1];
        }
        SimSpec::Example3 { q, p, sparsity, df, n_per } => {
            let truth = example3_truth(*q, *p, *sparsity, *df, seed)?;
            for c in 0..2 {
                for _ in 0..*n_per {
                    let x = DVector::from_fn(*p, |i, _| truth.means[c][i] + Distribution::<f64>::sample(&StandardNormal, &mut rng));
                    xs.push(x);
                    labels.push(c);
                    precisions.push(truth.omegas[c].clone());
                    graphs.push(truth.graphs[c].clone());
                }
            }
            cluster_graphs = truth.graphs.to_vec();
        }
    }
    let n = xs.len();
    if n == 0 {
        return Err(PxgError::invalid("simulation needs at least one observation"));
    }
    let q = precisions[0].q();
    let p = xs[0].len();
    let mut y = DMatrix::zeros(n, q);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let yi = draw_gaussian(&precisions[i], &mut rng)?;
        y.row_mut(i).copy_from(&yi.transpose());
        x.row_mut(i).copy_from(&xs[i].transpose());
    }
    let data = Dataset::new(y, x)?;
    Ok((data, Truth { labels, precisions, graphs, cluster_graphs }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_fixed_points() {
        let (om, g) = example1_precision(0.0).unwrap();
        assert_eq!(om.matrix()[(0, 1)], 0.75);
        assert_eq!(om.matrix()[(0, 2)], 0.0);
        assert_eq!(om.matrix()[(1, 2)], 0.75);
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
        let (om, g) = example1_precision(-0.5).unwrap();
        assert_eq!(om.matrix()[(0, 2)], 0.625);
        assert_eq!(om.matrix()[(1, 2)], 0.875);
        assert_eq!(g.edges(), vec![(0, 2), (1, 2)]);
        assert!(example1_precision(1.0).is_err());
    }

    #[test]
    fn example2_domain() {
        assert!(example2_precision(0.0).is_err());
        assert!(example2_precision(0.8).is_err());
        let (om, _) = example2_precision(-0.4).unwrap();
        assert_eq!(om.matrix()[(2, 3)], -0.4);
    }

    #[test]
    fn sizes_and_determinism() {
        let (d, t) = generate(&SimSpec::Example1 { n_per: 10 }, 7).unwrap();
        assert_eq!((d.n(), d.q(), d.p()), (30, 3, 1));
        assert_eq!(t.labels.len(), 30);
        let (d2, _) = generate(&SimSpec::Example1 { n_per: 10 }, 7).unwrap();
        assert_eq!(d, d2);
        let (d, t) = generate(&SimSpec::Example2 { n: 25 }, 1).unwrap();
        assert_eq!((d.n(), d.q()), (25, 5));
        assert!(t.graphs.iter().all(|g| g.edge_count() == 4));
    }

    #[test]
    fn example3_empty_when_no_sparsity() {
        let t = example3_truth(6, 2, 0.0, 3.0, 4).unwrap();
        assert_eq!(t.graphs[0].edge_count() + t.graphs[1].edge_count(), 0);
    }
}
