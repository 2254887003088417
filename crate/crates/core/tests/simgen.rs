mod common;

use common::mean_and_se;
use pxg_core::linalg::cholesky;
use pxg_core::simgen::{example1_precision, example1_region, example2_precision, example3_truth, generate, SimSpec};
use statrs::distribution::{Binomial, DiscreteCDF};

#[test]
fn example_precisions_are_positive_definite_on_a_fine_grid() {
    for k in 1..20_000 {
        let x = -1.0 + k as f64 * 1e-4;
        let (om, g) = example1_precision(x).unwrap();
        assert!(cholesky(om.matrix()).is_ok(), "example 1 at {x}");
        assert_eq!(g.edge_count(), 2, "x = {x}");
    }
    for k in 1..16_000 {
        let x = -0.8 + k as f64 * 1e-4;
        if x.abs() < 1e-12 {
            continue;
        }
        let (om, g) = example2_precision(x).unwrap();
        assert!(cholesky(om.matrix()).is_ok(), "example 2 at {x}");
        assert_eq!(g.edge_count(), 4);
    }
    assert!(example1_precision(1.0).is_err() && example2_precision(0.0).is_err() && example2_precision(-0.8).is_err());
}

#[test]
fn example1_regions_have_the_stated_graphs() {
    let missing = |x: f64| {
        let (_, g) = example1_precision(x).unwrap();
        (0..3).flat_map(|s| ((s + 1)..3).map(move |t| (s, t))).find(|&(s, t)| !g.has_edge(s, t)).unwrap()
    };
    assert_eq!((missing(-0.6), example1_region(-0.6)), ((0, 1), 0));
    assert_eq!((missing(0.1), example1_region(0.1)), ((0, 2), 1));
    assert_eq!((missing(0.8), example1_region(0.8)), ((1, 2), 2));
}

#[test]
fn random_edge_counts_are_binomial() {
    let q = 50;
    let pairs = q * (q - 1) / 2;
    let law = Binomial::new(0.01, pairs as u64).unwrap();
    let (lo, hi) = (law.inverse_cdf(0.005), law.inverse_cdf(0.995));
    let truth = example3_truth(q, 2, 0.01, 3.0, 17).unwrap();
    for g in &truth.graphs {
        let e = g.edge_count() as u64;
        assert!(e >= lo && e <= hi, "{e} edges outside [{lo}, {hi}]");
    }
    for om in &truth.omegas {
        assert!(cholesky(om.matrix()).is_ok());
    }
    for (g, om) in truth.graphs.iter().zip(&truth.omegas) {
        om.check_graph(g).unwrap();
    }
}

#[test]
fn slice_second_moments_match_the_true_covariance() {
    let (data, truth) = generate(&SimSpec::Example1 { n_per: 20_000 }, 5).unwrap();
    let rows: Vec<usize> = (0..data.n()).filter(|&i| (data.x_row(i)[0] + 0.65).abs() < 0.05).collect();
    assert!(rows.len() > 2000);
    for s in 0..3 {
        for t in s..3 {
            // E[y_s y_t] over the slice is the average of the true covariances.
            let prods: Vec<f64> = rows.iter().map(|&i| data.y_row(i)[s] * data.y_row(i)[t]).collect();
            let (m, se) = mean_and_se(&prods);
            let expect = rows
                .iter()
                .map(|&i| truth.precisions[i].matrix().clone().try_inverse().unwrap()[(s, t)])
                .sum::<f64>()
                / rows.len() as f64;
            assert!((m - expect).abs() < 3.0 * se, "({s},{t}) {m} ± {se} vs {expect}");
        }
    }
}

#[test]
fn generated_designs_have_consistent_shapes() {
    let (d1, t1) = generate(&SimSpec::Example1 { n_per: 10 }, 1).unwrap();
    assert_eq!((d1.n(), d1.q(), d1.p()), (30, 3, 1));
    for i in 0..30 {
        assert_eq!(t1.labels[i], example1_region(d1.x_row(i)[0]));
        assert_eq!(t1.labels[i], i / 10);
    }
    let (d2, t2) = generate(&SimSpec::Example2 { n: 50 }, 1).unwrap();
    assert_eq!((d2.n(), d2.q()), (50, 5));
    assert!((0..50).all(|i| d2.x_row(i)[0] != 0.0 && d2.x_row(i)[0].abs() < 0.8));
    assert_eq!(t2.cluster_graphs.len(), 1);
    let design = SimSpec::Example3 { q: 6, p: 2, sparsity: 0.3, df: 3.0, n_per: 15 };
    let (d3, t3) = generate(&design, 9).unwrap();
    assert_eq!((d3.n(), d3.q(), d3.p()), (30, 6, 2));
    assert_eq!(t3.cluster_graphs[t3.labels[29]], t3.graphs[29]);
    assert_eq!(generate(&design, 9).unwrap().0, d3);
    assert_ne!(generate(&design, 10).unwrap().0, d3);
}
