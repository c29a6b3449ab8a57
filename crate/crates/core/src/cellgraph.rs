//! Nuclei-level k-nearest-neighbour graphs.
//!
//! Each node is a nucleus with pixel coordinates and a feature vector. Every
//! node links to its `k` nearest other nodes by Euclidean distance (ties go
//! to the lower id) and the result is symmetrised into an undirected edge
//! set. The search is exact and quadratic.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusRecord {
    pub id: usize,
    pub coord: (f64, f64),
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    nodes: Vec<NucleusRecord>,
    edges: BTreeSet<(usize, usize)>,
    k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub mean_degree: f64,
    /// degree -> number of nodes with that degree
    pub degree_histogram: BTreeMap<usize, usize>,
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Builds the symmetrised k-NN graph.
pub fn build_knn_graph(nuclei: Vec<NucleusRecord>, k: usize) -> Result<CellGraph> {
    if nuclei.is_empty() {
        return Err(invalid("cannot build a cell graph from zero nuclei"));
    }
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    let dim = nuclei[0].features.len();
    for (i, n) in nuclei.iter().enumerate() {
        if n.id != i {
            return Err(invalid(format!("nucleus at position {i} has id {}", n.id)));
        }
        if !(n.coord.0.is_finite() && n.coord.1.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate of nucleus {i}")));
        }
        if n.features.len() != dim {
            return Err(invalid(format!(
                "nucleus {i} has {} features, expected {dim}",
                n.features.len()
            )));
        }
    }

    let n = nuclei.len();
    let take = k.min(n - 1);
    let mut edges = BTreeSet::new();
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (v, node) in nuclei.iter().enumerate() {
        if take == 0 {
            break;
        }
        candidates.clear();
        candidates.extend(
            nuclei
                .iter()
                .enumerate()
                .filter(|&(u, _)| u != v)
                .map(|(u, other)| (sq_dist(node.coord, other.coord), u)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if take < candidates.len() {
            candidates.select_nth_unstable_by(take - 1, cmp);
        }
        for &(_, u) in &candidates[..take] {
            edges.insert((v.min(u), v.max(u)));
        }
    }
    Ok(CellGraph { nodes: nuclei, edges, k })
}

impl CellGraph {
    pub fn nodes(&self) -> &[NucleusRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.features.len())
    }

    /// Sorted undirected neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Node features stacked as an `n x D` matrix.
    pub fn feature_matrix(&self) -> Tensor {
        let rows: Vec<Vec<f64>> = self.nodes.iter().map(|n| n.features.clone()).collect();
        Tensor::from_rows(&rows).expect("features share one dimension")
    }
}

pub fn graph_stats(g: &CellGraph) -> GraphStats {
    let mut degree = vec![0usize; g.node_count()];
    for &(u, v) in g.edges() {
        degree[u] += 1;
        degree[v] += 1;
    }
    let mut degree_histogram = BTreeMap::new();
    for d in degree {
        *degree_histogram.entry(d).or_insert(0) += 1;
    }
    let n = g.node_count();
    GraphStats {
        nodes: n,
        edges: g.edges().len(),
        mean_degree: if n == 0 { 0.0 } else { 2.0 * g.edges().len() as f64 / n as f64 },
        degree_histogram,
    }
}

/// Writes nuclei as `# dim=D` followed by `id,x,y,f1,...,fD` lines.
pub fn write_nuclei<W: Write>(mut out: W, nuclei: &[NucleusRecord]) -> Result<()> {
    let dim = nuclei.first().map_or(0, |n| n.features.len());
    writeln!(out, "# dim={dim}")?;
    for n in nuclei {
        let mut line = format!("{},{},{}", n.id, n.coord.0, n.coord.1);
        for f in &n.features {
            line.push(',');
            line.push_str(&f.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_nuclei<R: BufRead>(input: R) -> Result<Vec<NucleusRecord>> {
    let mut dim: Option<usize> = None;
    let mut nuclei = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        if let Some(header) = line.strip_prefix('#') {
            let value = header
                .trim()
                .strip_prefix("dim=")
                .ok_or_else(|| parse_err(format!("unrecognised header {line:?}")))?;
            dim = Some(value.trim().parse().map_err(|e| parse_err(format!("bad dim: {e}")))?);
            continue;
        }
        let d = dim.ok_or_else(|| parse_err("record before `# dim=D` header".into()))?;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 3 {
            return Err(parse_err(format!("expected {} fields, got {}", d + 3, fields.len())));
        }
        let id = fields[0].parse().map_err(|e| parse_err(format!("bad id: {e}")))?;
        let nums: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(format!("bad number: {e}")))?;
        nuclei.push(NucleusRecord {
            id,
            coord: (nums[0], nums[1]),
            features: nums[2..].to_vec(),
        });
    }
    Ok(nuclei)
}
