use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use pxg_core::pseudo::SymmetrizeRule;
use pxg_core::simgen::{generate, SimSpec};
use pxg_core::summary::{
    cluster_graphs, dahl_partition, dic_report, partition_average, predict_graph, ranked_edges, PredictMode,
};
use pxg_core::{BackendOptions, BackendRegistry, Dataset, Graph, Schedule, Trace, TraceMeta};
use serde::Serialize;

use crate::config::FitConfig;
use crate::error::{CliError, CliResult, InputContext};
use crate::io::{ensure_dir, float, read_matrix, write_json, write_matrix, Table};
use crate::{BackendName, DicArgs, FitArgs, Mode, PredictArgs, SimulateArgs, SummarizeArgs, Symmetrize};

/// Largest response dimension the G-Wishart backend accepts without `--force`.
const GWISHART_SOFT_LIMIT: usize = 15;

fn edge_list(g: &Graph) -> Vec<[usize; 2]> {
    g.edges().into_iter().map(|(s, t)| [s, t]).collect()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct ObservationTruth {
    label: usize,
    edges: Vec<[usize; 2]>,
    omega: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TruthFile {
    example: u8,
    seed: u64,
    n: usize,
    q: usize,
    p: usize,
    labels: Vec<usize>,
    cluster_graphs: Vec<Vec<[usize; 2]>>,
    observations: Vec<ObservationTruth>,
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let extra = a.q.is_some() || a.p.is_some() || a.sparsity.is_some() || a.df.is_some();
    if a.example != 3 && extra {
        return Err(CliError::input("--q, --p, --sparsity and --df apply to example 3 only"));
    }
    if a.n_per == Some(0) {
        return Err(CliError::input("--n-per must be positive"));
    }
    let design = match a.example {
        1 => SimSpec::Example1 { n_per: a.n_per.unwrap_or(100) },
        2 => SimSpec::Example2 { n: a.n_per.unwrap_or(300) },
        _ => SimSpec::Example3 {
            q: a.q.unwrap_or(50),
            p: a.p.unwrap_or(10),
            sparsity: a.sparsity.unwrap_or(0.01),
            df: a.df.unwrap_or(3.0),
            n_per: a.n_per.unwrap_or(250),
        },
    };
    let (data, truth) = generate(&design, a.seed).into_input()?;
    ensure_dir(&a.out)?;
    write_matrix(&a.out.join("Y.csv"), "y", data.y())?;
    write_matrix(&a.out.join("X.csv"), "x", data.x())?;
    let observations = (0..data.n())
        .map(|i| ObservationTruth {
            label: truth.labels[i],
            edges: edge_list(&truth.graphs[i]),
            omega: rows_of(truth.precisions[i].matrix()),
        })
        .collect();
    let file = TruthFile {
        example: a.example,
        seed: a.seed,
        n: data.n(),
        q: data.q(),
        p: data.p(),
        labels: truth.labels.clone(),
        cluster_graphs: truth.cluster_graphs.iter().map(edge_list).collect(),
        observations,
    };
    write_json(&a.out.join("truth.json"), &file)
}

#[derive(Serialize)]
struct DataInfo<'a> {
    y: &'a Path,
    x: &'a Path,
    n: usize,
    q: usize,
    p: usize,
    center: bool,
    standardize: bool,
}

#[derive(Serialize)]
struct RunSummary {
    retained: usize,
    mean_clusters: f64,
    mean_graph_term: f64,
    mean_cov_term: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: String,
    backend: &'a str,
    seed: u64,
    schedule: Schedule,
    pooled: bool,
    options: &'a BackendOptions,
    data: DataInfo<'a>,
    threads: usize,
    wall_time_secs: f64,
    summary: RunSummary,
}

fn load_dataset(a: &FitArgs) -> CliResult<Dataset> {
    let y = read_matrix(&a.y)?;
    let x = read_matrix(&a.x)?;
    if y.nrows() != x.nrows() {
        return Err(CliError::input(format!(
            "{} has {} rows but {} has {}",
            a.y.display(),
            y.nrows(),
            a.x.display(),
            x.nrows()
        )));
    }
    let data = Dataset::new(y, x).into_input()?;
    Ok(if a.standardize {
        data.standardized()
    } else if a.center {
        data.centered()
    } else {
        data
    })
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let data = load_dataset(a)?;
    if a.backend == BackendName::Gwishart && data.q() > GWISHART_SOFT_LIMIT && !a.force {
        return Err(CliError::input(format!(
            "warning: q = {} exceeds {GWISHART_SOFT_LIMIT}; the G-Wishart backend would be very slow. \
             Use --backend pseudo or pass --force",
            data.q()
        )));
    }
    let config = match &a.config {
        Some(path) => FitConfig::load(path)?,
        None => FitConfig::default(),
    };
    let mut options = config.resolve(&data, a.seed)?;
    if a.pooled {
        options.hyper.k = 1;
    }
    let schedule = Schedule::new(a.iters, a.burn, a.thin).into_input()?;
    let name = a.backend.as_str();
    let backend = BackendRegistry::with_defaults().create(name, &options).into_input()?;
    ensure_dir(&a.out)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let start = Instant::now();
    let meta = TraceMeta::new(name, options.clone(), schedule);
    let trace = pool.install(|| pxg_core::run_chain(&data, backend.as_ref(), schedule, meta))?;
    let wall = start.elapsed().as_secs_f64();

    trace.save(&a.out.join("trace.bin"))?;
    let mut t = Table::create(&a.out.join("loglik.csv"), &["iteration", "clusters", "graph_term", "cov_term", "total"])?;
    for d in &trace.draws {
        t.row([
            d.iteration.to_string(),
            d.z.num_clusters().to_string(),
            float(d.graph_term),
            float(d.cov_term),
            float(d.graph_term + d.cov_term),
        ])?;
    }
    t.finish()?;

    let r = trace.len() as f64;
    let summary = RunSummary {
        retained: trace.len(),
        mean_clusters: trace.draws.iter().map(|d| d.z.num_clusters() as f64).sum::<f64>() / r,
        mean_graph_term: trace.draws.iter().map(|d| d.graph_term).sum::<f64>() / r,
        mean_cov_term: trace.draws.iter().map(|d| d.cov_term).sum::<f64>() / r,
    };
    let manifest = Manifest {
        version: format!("pxg-v{}", env!("CARGO_PKG_VERSION")),
        backend: name,
        seed: a.seed,
        schedule,
        pooled: a.pooled,
        options: &options,
        data: DataInfo { y: &a.y, x: &a.x, n: data.n(), q: data.q(), p: data.p(), center: a.center, standardize: a.standardize },
        threads: pool.current_num_threads(),
        wall_time_secs: wall,
        summary,
    };
    write_json(&a.out.join("manifest.json"), &manifest)
}

fn load_trace(path: &Path) -> CliResult<Trace> {
    if !path.is_file() {
        return Err(CliError::file(path, "no such file"));
    }
    Trace::load(path).map_err(|e| CliError::file(path, e))
}

fn rule(s: Symmetrize) -> SymmetrizeRule {
    match s {
        Symmetrize::Union => SymmetrizeRule::Union,
        Symmetrize::Intersection => SymmetrizeRule::Intersection,
    }
}

fn check_cutoff(c: f64) -> CliResult<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(CliError::input(format!("--cutoff must lie in [0, 1], got {c}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct ClusterGraph {
    cluster: usize,
    size: usize,
    edges: Vec<[usize; 2]>,
}

#[derive(Serialize)]
struct GraphsFile {
    cutoff: f64,
    symmetrize: &'static str,
    clusters: Vec<ClusterGraph>,
}

pub fn summarize(a: &SummarizeArgs) -> CliResult<()> {
    check_cutoff(a.cutoff)?;
    let trace = load_trace(&a.trace)?;
    ensure_dir(&a.out)?;
    let (partition, _) = dahl_partition(&trace)?;
    let field = partition_average(&trace, rule(a.symmetrize))?;
    let q = trace.dataset.q();

    let mut t = Table::create(&a.out.join("allocation.csv"), &["obs", "cluster"])?;
    for (i, z) in partition.labels().iter().enumerate() {
        t.row([i.to_string(), z.to_string()])?;
    }
    t.finish()?;

    let mut t = Table::create(&a.out.join("edge_prob.csv"), &["obs", "s", "t", "prob"])?;
    for (i, p) in field.prob.iter().enumerate() {
        for s in 0..q {
            for u in (s + 1)..q {
                t.row([i.to_string(), s.to_string(), u.to_string(), float(p[(s, u)])])?;
            }
        }
    }
    t.finish()?;

    let mut t = Table::create(&a.out.join("precision.csv"), &["obs", "s", "t", "omega_hat", "partial_corr"])?;
    for i in 0..field.n() {
        for s in 0..q {
            for u in s..q {
                t.row([
                    i.to_string(),
                    s.to_string(),
                    u.to_string(),
                    float(field.omega_hat[i][(s, u)]),
                    float(field.partial_corr[i][(s, u)]),
                ])?;
            }
        }
    }
    t.finish()?;

    let graphs = cluster_graphs(&field, &partition, a.cutoff);
    let members = partition.members(graphs.len());
    let clusters = graphs
        .iter()
        .enumerate()
        .map(|(j, g)| ClusterGraph { cluster: j, size: members[j].len(), edges: edge_list(g) })
        .collect();
    let symmetrize = match a.symmetrize {
        Symmetrize::Union => "union",
        Symmetrize::Intersection => "intersection",
    };
    write_json(&a.out.join("graphs.json"), &GraphsFile { cutoff: a.cutoff, symmetrize, clusters })?;

    if a.ranked {
        let mut t = Table::create(&a.out.join("ranked_edges.csv"), &["cluster", "s", "t", "prob"])?;
        for (j, rows) in members.iter().enumerate() {
            let mut avg = DMatrix::<f64>::zeros(q, q);
            for &i in rows {
                avg += &field.prob[i];
            }
            avg /= rows.len().max(1) as f64;
            for (s, u, p) in ranked_edges(&avg) {
                t.row([j.to_string(), s.to_string(), u.to_string(), float(p)])?;
            }
        }
        t.finish()?;
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let trace = load_trace(&a.trace)?;
    let xnew = read_matrix(&a.xnew)?;
    let p = trace.dataset.p();
    if xnew.nrows() > 0 && xnew.ncols() != p {
        return Err(CliError::file(&a.xnew, format!("has {} columns but the fitted covariates have p = {p}", xnew.ncols())));
    }
    ensure_dir(&a.out)?;
    let mode = match a.mode {
        Mode::Rb => PredictMode::RaoBlackwell,
        Mode::Sampled => PredictMode::Sampled,
    };
    let q = trace.dataset.q();
    let mut probs = Table::create(&a.out.join("predicted_edge_prob.csv"), &["row", "s", "t", "prob"])?;
    let mut prec =
        Table::create(&a.out.join("predicted_precision.csv"), &["row", "s", "t", "omega_hat", "partial_corr"])?;
    for (r, row) in xnew.row_iter().enumerate() {
        let x = DVector::from_iterator(p, row.iter().copied());
        let pred = predict_graph(&trace, &x, mode, rule(a.symmetrize), r as u64)?;
        for s in 0..q {
            for u in s..q {
                if u > s {
                    probs.row([r.to_string(), s.to_string(), u.to_string(), float(pred.prob[(s, u)])])?;
                }
                prec.row([
                    r.to_string(),
                    s.to_string(),
                    u.to_string(),
                    float(pred.omega_hat[(s, u)]),
                    float(pred.partial_corr[(s, u)]),
                ])?;
            }
        }
    }
    probs.finish()?;
    prec.finish()
}

#[derive(Serialize)]
struct DicFile {
    full: f64,
    graph_only: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cov_only: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cov_only_note: Option<String>,
    clusters: usize,
    draws: usize,
    cutoff: f64,
}

pub fn dic(a: &DicArgs) -> CliResult<()> {
    check_cutoff(a.cutoff)?;
    let trace = load_trace(&a.trace)?;
    let pooled = a.pooled_trace.as_deref().map(load_trace).transpose()?;
    if let Some(p) = &pooled {
        if !p.is_pooled() {
            return Err(CliError::file(a.pooled_trace.as_deref().unwrap_or(Path::new("")), "not a pooled (fit --pooled) trace"));
        }
        if p.dataset != trace.dataset {
            return Err(CliError::input("the pooled trace was fitted to different data"));
        }
    }
    let report = dic_report(&trace, pooled.as_ref(), &BackendRegistry::with_defaults(), a.cutoff)?;
    let values = [Some(report.full), Some(report.graph_only), report.cov_only];
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Runtime("DIC evaluation produced a non-finite value".into()));
    }
    ensure_dir(&a.out)?;
    let file = DicFile {
        full: report.full,
        graph_only: report.graph_only,
        cov_only: report.cov_only,
        cov_only_note: report.cov_only_note,
        clusters: report.clusters,
        draws: trace.len(),
        cutoff: a.cutoff,
    };
    write_json(&a.out.join("dic.json"), &file)
}
