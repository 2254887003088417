//! Retained draws and their versioned little-endian binary encoding.
//!
//! Layout: magic `PXGTRACE`, one format-version byte, a length-prefixed JSON
//! metadata block, the dataset, then the draws.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendOptions, BackendRegistry, GraphBackend, GraphState};
use crate::error::{PxgError, Result};
use crate::gibbs::{ChainState, Schedule};
use crate::model::{Allocation, Dataset, Graph, NodeRegression, PrecisionMatrix};
use crate::ppmx::CovariateClusterParams;
use crate::rng::fnv1a;

pub const MAGIC: &[u8; 8] = b"PXGTRACE";
pub const FORMAT_VERSION: u8 = 1;

const TAG_GAUSSIAN: u8 = 0;
const TAG_PSEUDO: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub backend: String,
    pub options: BackendOptions,
    pub schedule: Schedule,
    pub config_hash: u64,
    pub crate_version: String,
}

impl TraceMeta {
    pub fn new(backend: &str, options: BackendOptions, schedule: Schedule) -> Self {
        let key = serde_json::to_vec(&(backend, &options, &schedule)).expect("metadata serializes");
        Self {
            backend: backend.to_string(),
            options,
            schedule,
            config_hash: fnv1a(&key),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub z: Allocation,
    pub pi: Vec<f64>,
    pub cov: Vec<CovariateClusterParams>,
    pub graphs: Vec<GraphState>,
    /// Σ_j log p(Y*_j | G_j).
    pub graph_term: f64,
    /// Σ_j log g(X*_j).
    pub cov_term: f64,
}

impl Draw {
    pub fn from_state(iteration: usize, state: &ChainState, graph_term: f64, cov_term: f64) -> Self {
        Self {
            iteration,
            z: state.z.clone(),
            pi: state.pi.clone(),
            cov: state.cov.clone(),
            graphs: state.graphs.clone(),
            graph_term,
            cov_term,
        }
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub dataset: Dataset,
    pub draws: Vec<Draw>,
}

fn fmt_err(msg: impl Into<String>) -> PxgError {
    PxgError::TraceFormat(msg.into())
}

fn read_len<R: Read>(r: &mut R, limit: u64, what: &str) -> Result<usize> {
    let v = r.read_u64::<LittleEndian>()?;
    if v > limit {
        return Err(fmt_err(format!("{what} = {v} is implausibly large")));
    }
    Ok(v as usize)
}

fn write_f64s<W: Write>(w: &mut W, vals: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in vals {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    /// A trace fitted with a single cluster, as needed for covariate-only DIC.
    pub fn is_pooled(&self) -> bool {
        self.meta.options.hyper.k == 1
    }

    pub fn backend(&self, registry: &BackendRegistry) -> Result<Box<dyn GraphBackend>> {
        registry.create(&self.meta.backend, &self.meta.options)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u8(FORMAT_VERSION)?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_u64::<LittleEndian>(meta.len() as u64)?;
        w.write_all(&meta)?;

        let d = &self.dataset;
        let (n, q, p) = (d.n(), d.q(), d.p());
        for v in [n, q, p] {
            w.write_u64::<LittleEndian>(v as u64)?;
        }
        for i in 0..n {
            write_f64s(w, d.y_row(i).iter().copied())?;
        }
        for i in 0..n {
            write_f64s(w, d.x_row(i).iter().copied())?;
        }

        w.write_u64::<LittleEndian>(self.draws.len() as u64)?;
        for draw in &self.draws {
            w.write_u64::<LittleEndian>(draw.iteration as u64)?;
            w.write_u32::<LittleEndian>(draw.k() as u32)?;
            for &z in draw.z.labels() {
                w.write_u32::<LittleEndian>(z as u32)?;
            }
            write_f64s(w, draw.pi.iter().copied())?;
            for c in &draw.cov {
                write_f64s(w, c.mu.iter().copied())?;
                w.write_f64::<LittleEndian>(c.sigmasq)?;
            }
            w.write_f64::<LittleEndian>(draw.graph_term)?;
            w.write_f64::<LittleEndian>(draw.cov_term)?;
            for g in &draw.graphs {
                match g {
                    GraphState::Gaussian { graph, omega } => {
                        w.write_u8(TAG_GAUSSIAN)?;
                        w.write_all(&graph.upper_bits())?;
                        write_f64s(w, omega.matrix().iter().copied())?;
                    }
                    GraphState::Pseudo { regressions } => {
                        w.write_u8(TAG_PSEUDO)?;
                        for r in regressions {
                            w.write_f64::<LittleEndian>(r.tau)?;
                            write_f64s(w, r.beta.iter().copied())?;
                            for &g in &r.indicators {
                                w.write_u8(g as u8)?;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fmt_err("file too short for a trace header"))?;
        if &magic != MAGIC {
            return Err(fmt_err("missing PXGTRACE magic header"));
        }
        let version = r.read_u8()?;
        if version != FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported trace format version {version}, expected {FORMAT_VERSION}")));
        }
        let meta_len = read_len(r, 1 << 30, "metadata length")?;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta: TraceMeta =
            serde_json::from_slice(&meta).map_err(|e| fmt_err(format!("metadata is not valid JSON: {e}")))?;

        let n = read_len(r, 1 << 32, "n")?;
        let q = read_len(r, 1 << 16, "q")?;
        let p = read_len(r, 1 << 16, "p")?;
        let y = read_f64s(r, n * q)?;
        let x = read_f64s(r, n * p)?;
        let dataset = Dataset::new(DMatrix::from_row_slice(n, q, &y), DMatrix::from_row_slice(n, p, &x))?;

        let count = read_len(r, 1 << 32, "draw count")?;
        let mut draws = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let iteration = r.read_u64::<LittleEndian>()? as usize;
            let k = r.read_u32::<LittleEndian>()? as usize;
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let z = r.read_u32::<LittleEndian>()? as usize;
                if z >= k {
                    return Err(fmt_err(format!("label {z} out of range for K = {k}")));
                }
                labels.push(z);
            }
            let pi = read_f64s(r, k)?;
            let mut cov = Vec::with_capacity(k);
            for _ in 0..k {
                let mu = DVector::from_vec(read_f64s(r, p)?);
                let sigmasq = r.read_f64::<LittleEndian>()?;
                cov.push(CovariateClusterParams { mu, sigmasq });
            }
            let graph_term = r.read_f64::<LittleEndian>()?;
            let cov_term = r.read_f64::<LittleEndian>()?;
            let mut graphs = Vec::with_capacity(k);
            for _ in 0..k {
                let state = match r.read_u8()? {
                    TAG_GAUSSIAN => {
                        let mut bits = vec![0u8; q * (q - 1) / 2];
                        r.read_exact(&mut bits)?;
                        let graph = Graph::from_upper_bits(q, &bits)?;
                        let omega = PrecisionMatrix::new(DMatrix::from_vec(q, q, read_f64s(r, q * q)?))?;
                        GraphState::Gaussian { graph, omega }
                    }
                    TAG_PSEUDO => {
                        let mut regressions = Vec::with_capacity(q);
                        for _ in 0..q {
                            let tau = r.read_f64::<LittleEndian>()?;
                            let beta = DVector::from_vec(read_f64s(r, q - 1)?);
                            let mut ind = vec![0u8; q - 1];
                            r.read_exact(&mut ind)?;
                            regressions.push(NodeRegression::new(beta, tau, ind.iter().map(|&b| b != 0).collect())?);
                        }
                        GraphState::Pseudo { regressions }
                    }
                    tag => return Err(fmt_err(format!("unknown graph-state tag {tag}"))),
                };
                graphs.push(state);
            }
            draws.push(Draw { iteration, z: Allocation::new(labels), pi, cov, graphs, graph_term, cov_term });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(fmt_err("trailing bytes after the last draw"));
        }
        Ok(Self { meta, dataset, draws })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r).map_err(|e| match e {
            PxgError::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => fmt_err("trace is truncated"),
            other => other,
        })
    }
}
