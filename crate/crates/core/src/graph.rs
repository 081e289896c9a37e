//! Communication graphs and their Laplacian.
//!
//! Nodes are indexed `0..N` in memory; the edge-file format and all
//! user-facing output use 1-based ids. The Laplacian `Omega` (and its block
//! form `Omega ⊗ I_n`) is only ever applied through adjacency lists.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Stacked};

/// Dense eigensolves are used up to this many nodes.
pub const DENSE_EIGEN_MAX_NODES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Star,
    Clique,
    Path,
    File,
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(Topology::Star),
            "clique" => Ok(Topology::Clique),
            "path" => Ok(Topology::Path),
            "file" => Ok(Topology::File),
            other => Err(Error::InvalidParameter(format!("unknown topology '{other}'"))),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Topology::Star => "star",
            Topology::Clique => "clique",
            Topology::Path => "path",
            Topology::File => "file",
        };
        f.write_str(s)
    }
}

/// Undirected, connected, simple graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct Graph {
    num_nodes: usize,
    /// `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

/// 1-based on-disk form.
#[derive(Serialize, Deserialize)]
struct GraphRepr {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<GraphRepr> for Graph {
    type Error = Error;

    fn try_from(r: GraphRepr) -> Result<Self> {
        let edges = r
            .edges
            .iter()
            .map(|&(i, j)| {
                if i == 0 || j == 0 {
                    Err(Error::InvalidGraph("node ids are 1-based".into()))
                } else {
                    Ok((i - 1, j - 1))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Graph::from_edges(r.num_nodes, &edges)
    }
}

impl From<Graph> for GraphRepr {
    fn from(g: Graph) -> Self {
        GraphRepr {
            num_nodes: g.num_nodes,
            edges: g.edges.iter().map(|&(i, j)| (i + 1, j + 1)).collect(),
        }
    }
}

impl Graph {
    /// Builds a graph from 0-based edges, rejecting self-loops, duplicates and
    /// disconnected inputs.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a node outside 1..={num_nodes}",
                    a + 1,
                    b + 1
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {}", a + 1)));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    e.0 + 1,
                    e.1 + 1
                )));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        adjacency.iter_mut().for_each(|a| a.sort_unstable());
        let g = Graph {
            num_nodes,
            edges,
            adjacency,
        };
        let unreachable = g.unreachable_from_first();
        if !unreachable.is_empty() {
            return Err(Error::Disconnected {
                unreachable: unreachable.iter().map(|i| i + 1).collect(),
            });
        }
        Ok(g)
    }

    /// Node 0 at the centre.
    pub fn star(num_nodes: usize) -> Result<Self> {
        let edges: Vec<_> = (1..num_nodes).map(|j| (0, j)).collect();
        Self::from_edges(num_nodes, &edges)
    }

    pub fn clique(num_nodes: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..num_nodes {
            for j in i + 1..num_nodes {
                edges.push((i, j));
            }
        }
        Self::from_edges(num_nodes, &edges)
    }

    pub fn path(num_nodes: usize) -> Result<Self> {
        let edges: Vec<_> = (1..num_nodes).map(|j| (j - 1, j)).collect();
        Self::from_edges(num_nodes, &edges)
    }

    /// Parses the edge-file format: first non-comment line `N`, then `i j`
    /// pairs (1-based, `i < j`). `#` starts a comment.
    pub fn parse_edge_file(text: &str) -> Result<Self> {
        let mut num_nodes = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: String| Error::EdgeFile {
                line: lineno + 1,
                msg,
            };
            match num_nodes {
                None => {
                    if fields.len() != 1 {
                        return Err(bad("expected the node count N".into()));
                    }
                    let n: usize = fields[0]
                        .parse()
                        .map_err(|_| bad(format!("'{}' is not a node count", fields[0])))?;
                    num_nodes = Some(n);
                }
                Some(n) => {
                    if fields.len() != 2 {
                        return Err(bad(format!("expected 'i j', got '{line}'")));
                    }
                    let parse = |s: &str| -> Result<usize> {
                        s.parse::<usize>()
                            .map_err(|_| bad(format!("'{s}' is not a node id")))
                    };
                    let (i, j) = (parse(fields[0])?, parse(fields[1])?);
                    if i == 0 || j == 0 || i > n || j > n {
                        return Err(bad(format!("edge ({i}, {j}) outside 1..={n}")));
                    }
                    if i >= j {
                        return Err(bad(format!("edge ({i}, {j}) must satisfy i < j")));
                    }
                    edges.push((i - 1, j - 1));
                }
            }
        }
        let n = num_nodes.ok_or(Error::EdgeFile {
            line: 0,
            msg: "empty edge file".into(),
        })?;
        Self::from_edges(n, &edges)
    }

    pub fn to_edge_file(&self) -> String {
        let mut s = format!("{}\n", self.num_nodes);
        for &(i, j) in &self.edges {
            s.push_str(&format!("{} {}\n", i + 1, j + 1));
        }
        s
    }

    fn unreachable_from_first(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        (0..self.num_nodes).filter(|&i| !seen[i]).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn min_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// `Omega_ij`: degree on the diagonal, -1 for edges, 0 otherwise.
    pub fn laplacian_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.degree(i) as f64
        } else if self.is_neighbor(i, j) {
            -1.0
        } else {
            0.0
        }
    }

    fn check_blocks(&self, x: &Stacked) -> Result<()> {
        if x.num_blocks() != self.num_nodes {
            return Err(Error::Dimension {
                expected: self.num_nodes,
                got: x.num_blocks(),
                context: "number of blocks in stacked vector",
            });
        }
        Ok(())
    }

    /// `(Omega ⊗ I_n) x`, block `i` being `d_i x_i - sum_{j in O_i} x_j`.
    pub fn laplacian_apply(&self, x: &Stacked) -> Result<Stacked> {
        self.check_blocks(x)?;
        let mut out = Stacked::zeros(x.num_blocks(), x.dim());
        for i in 0..self.num_nodes {
            let d = self.degree(i) as f64;
            let o = out.block_mut(i);
            o.iter_mut().zip(x.block(i)).for_each(|(o, v)| *o = d * v);
            for &j in self.neighbors(i) {
                o.iter_mut().zip(x.block(j)).for_each(|(o, v)| *o -= v);
            }
        }
        Ok(out)
    }

    /// `x^T (Omega ⊗ I_n) x = sum_{(i,j) in E} ||x_i - x_j||^2`.
    pub fn laplacian_quadratic(&self, x: &Stacked) -> Result<f64> {
        self.check_blocks(x)?;
        Ok(self
            .edges
            .iter()
            .map(|&(i, j)| {
                x.block(i)
                    .iter()
                    .zip(x.block(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum())
    }

    /// `max_{(i,j) in E} ||x_i - x_j||_2`; zero for a single node.
    pub fn max_edge_disagreement(&self, x: &Stacked) -> f64 {
        self.edges
            .iter()
            .map(|&(i, j)| crate::linalg::dist2(x.block(i), x.block(j)))
            .fold(0.0, f64::max)
    }

    /// Row-major dense `Omega`; intended for tests and small graphs.
    pub fn dense_laplacian(&self) -> Vec<f64> {
        let n = self.num_nodes;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.laplacian_entry(i, j);
            }
        }
        m
    }

    /// Largest and second-smallest Laplacian eigenvalues.
    pub fn spectral_bounds(&self) -> SpectralBounds {
        let n = self.num_nodes;
        if n == 1 {
            return SpectralBounds {
                psi_max: 0.0,
                psi_second_smallest: 0.0,
            };
        }
        if n <= DENSE_EIGEN_MAX_NODES {
            let m = DMatrix::from_row_slice(n, n, &self.dense_laplacian());
            let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.total_cmp(b));
            SpectralBounds {
                psi_max: ev[n - 1],
                psi_second_smallest: ev[1],
            }
        } else {
            self.spectral_bounds_power()
        }
    }

    /// Power-iteration route: `psi_max` from `Omega`, then `psi_{N-1}` as
    /// `psi_max - lambda_max((psi_max I - Omega) restricted to 1^perp)`.
    pub fn spectral_bounds_power(&self) -> SpectralBounds {
        let n = self.num_nodes;
        let apply = |v: &[f64]| -> Vec<f64> {
            let s = Stacked::from_flat(n, 1, v.to_vec()).expect("shape");
            self.laplacian_apply(&s).expect("shape").as_slice().to_vec()
        };
        let psi_max = power_iteration(n, |v| apply(v), 1e-10, 10_000);
        let shifted = |v: &[f64]| -> Vec<f64> {
            let lv = apply(v);
            v.iter().zip(&lv).map(|(a, b)| psi_max * a - b).collect()
        };
        let top_shifted = power_iteration(n, shifted, 1e-10, 10_000);
        SpectralBounds {
            psi_max,
            psi_second_smallest: psi_max - top_shifted,
        }
    }
}

/// Largest eigenvalue of a PSD operator on `1^perp` (the start vector and
/// every iterate are projected away from the all-ones direction).
fn power_iteration(n: usize, op: impl Fn(&[f64]) -> Vec<f64>, tol: f64, max_iter: usize) -> f64 {
    let project = |v: &mut Vec<f64>| {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let nv = dot(v, v).sqrt();
        if nv > 0.0 {
            v.iter_mut().for_each(|x| *x /= nv);
        }
    };
    let mut v: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
    project(&mut v);
    let mut est = 0.0;
    for _ in 0..max_iter {
        let mut w = op(&v);
        let next = dot(&v, &w);
        project(&mut w);
        v = w;
        if (next - est).abs() <= tol * next.abs().max(1.0) {
            return next;
        }
        est = next;
    }
    est
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub psi_max: f64,
    pub psi_second_smallest: f64,
}

/// Builds a named topology, or reads an edge file for [`Topology::File`].
pub fn build_topology(kind: Topology, num_nodes: usize, edge_file: Option<&str>) -> Result<Graph> {
    if num_nodes < 2 && kind != Topology::File {
        return Err(Error::InvalidGraph("topologies need N >= 2".into()));
    }
    match kind {
        Topology::Star => Graph::star(num_nodes),
        Topology::Clique => Graph::clique(num_nodes),
        Topology::Path => Graph::path(num_nodes),
        Topology::File => {
            let text = edge_file.ok_or_else(|| {
                Error::InvalidParameter("topology 'file' requires edge-file contents".into())
            })?;
            Graph::parse_edge_file(text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(blocks: &[&[f64]]) -> Stacked {
        Stacked::from_blocks(&blocks.iter().map(|b| b.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn named_topologies() {
        let g = build_topology(Topology::Star, 2, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.degrees(), vec![1, 1]);

        let g = build_topology(Topology::Clique, 4, None).unwrap();
        assert_eq!(g.num_edges(), 6);
        assert!(g.degrees().iter().all(|&d| d == 3));

        let g = build_topology(Topology::Star, 5, None).unwrap();
        assert_eq!(g.degrees(), vec![4, 1, 1, 1, 1]);
        assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.num_edges());
    }

    #[test]
    fn rejects_bad_edge_lists() {
        assert!(matches!(
            Graph::from_edges(3, &[(0, 1)]),
            Err(Error::Disconnected { ref unreachable }) if unreachable == &vec![3]
        ));
        assert!(Graph::from_edges(2, &[(0, 0)]).is_err());
        assert!(Graph::from_edges(2, &[(0, 1), (1, 0)]).is_err());
        assert!(build_topology(Topology::Star, 1, None).is_err());
    }

    #[test]
    fn edge_file_parsing() {
        let g = Graph::parse_edge_file("# ring\n4\n1 2\n2 3 # middle\n3 4\n1 4\n").unwrap();
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.degrees(), vec![2, 2, 2, 2]);
        assert_eq!(Graph::parse_edge_file(&g.to_edge_file()).unwrap(), g);

        let err = Graph::parse_edge_file("3\n1 2\n2 x\n").unwrap_err();
        assert!(matches!(err, Error::EdgeFile { line: 3, .. }));
        let err = Graph::parse_edge_file("3\n2 1\n").unwrap_err();
        assert!(matches!(err, Error::EdgeFile { line: 2, .. }));
        assert!(matches!(
            Graph::parse_edge_file("4\n1 2\n3 4\n"),
            Err(Error::Disconnected { .. })
        ));
    }

    #[test]
    fn laplacian_apply_examples() {
        let p = Graph::path(2).unwrap();
        let out = p.laplacian_apply(&s(&[&[1.0], &[0.0]])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, -1.0]);

        let star = Graph::star(3).unwrap();
        let out = star.laplacian_apply(&s(&[&[1.0], &[2.0], &[3.0]])).unwrap();
        assert_eq!(out.as_slice(), &[-3.0, 1.0, 2.0]);

        let c = Graph::clique(4).unwrap();
        let cons = Stacked::consensus(4, &[0.3, -1.2]);
        assert!(c.laplacian_apply(&cons).unwrap().as_slice().iter().all(|v| v.abs() < 1e-15));

        assert!(c.laplacian_apply(&Stacked::zeros(3, 2)).is_err());
    }

    #[test]
    fn laplacian_quadratic_examples() {
        let p = Graph::path(2).unwrap();
        assert_eq!(p.laplacian_quadratic(&s(&[&[1.0], &[0.0]])).unwrap(), 1.0);
        let c = Graph::clique(3).unwrap();
        assert_eq!(c.laplacian_quadratic(&s(&[&[1.0], &[2.0], &[4.0]])).unwrap(), 14.0);
        assert_eq!(
            c.laplacian_quadratic(&Stacked::consensus(3, &[5.0, 1.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn spectral_examples() {
        let b = Graph::path(2).unwrap().spectral_bounds();
        assert!((b.psi_max - 2.0).abs() < 1e-12);
        let b = Graph::star(5).unwrap().spectral_bounds();
        assert!((b.psi_max - 5.0).abs() < 1e-10);
        assert!((b.psi_second_smallest - 1.0).abs() < 1e-10);
        let b = Graph::clique(5).unwrap().spectral_bounds_power();
        assert!((b.psi_max - 5.0).abs() < 1e-8);
        let b = Graph::star(7).unwrap().spectral_bounds_power();
        assert!((b.psi_max - 7.0).abs() < 1e-8);
        assert!((b.psi_second_smallest - 1.0).abs() < 1e-6);
    }

    #[test]
    fn serde_uses_one_based_ids() {
        let g = Graph::star(3).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"num_nodes":3,"edges":[[1,2],[1,3]]}"#);
        let back: Graph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }
}
