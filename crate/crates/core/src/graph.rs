//! Undirected graphs with optional categorical node labels, plus the
//! adjacency transformations the pooling layer needs.

use std::collections::VecDeque;

use crate::autodiff::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Simple undirected graph stored as sorted neighbor lists. No self-loops,
/// no duplicate edges, no edge weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
    node_labels: Option<Vec<u32>>,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn node_labels(&self) -> Option<&[u32]> {
        self.node_labels.as_deref()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as (i, j) with i < j, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, nbrs) in self.adj.iter().enumerate() {
            for &j in nbrs {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.n() == 0 {
            return true;
        }
        let mut seen = vec![false; self.n()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n()
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n()];
        let mut components = 0;
        for start in 0..self.n() {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    /// Sparse adjacency for convolution. `normalized` premultiplies by
    /// inverse degrees; zero-degree rows are empty either way, so they
    /// receive no neighbor aggregate.
    pub fn to_sparse(&self, normalized: bool) -> SparseMatrix {
        let n = self.n();
        let entries: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let w = if normalized && !self.adj[i].is_empty() {
                    1.0 / self.adj[i].len() as f64
                } else {
                    1.0
                };
                self.adj[i].iter().map(|&j| (j, w)).collect()
            })
            .collect();
        SparseMatrix::from_row_entries(n, n, &entries)
    }
}

/// Validate and canonicalize: edges are deduplicated, symmetrized, and
/// stored sorted.
pub fn build_graph(
    n: usize,
    edges: &[(usize, usize)],
    node_labels: Option<Vec<u32>>,
) -> Result<Graph> {
    if let Some(labels) = &node_labels {
        if labels.len() != n {
            return Err(Error::LabelLengthMismatch {
                got: labels.len(),
                expected: n,
            });
        }
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i == j {
            return Err(Error::SelfLoop { node: i });
        }
        for node in [i, j] {
            if node >= n {
                return Err(Error::EndpointOutOfRange { node, n });
            }
        }
        adj[i].push(j);
        adj[j].push(i);
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    Ok(Graph { adj, node_labels })
}

/// One-hot node features over `alphabet`; unlabeled graphs get a single
/// all-ones column so the plain network sees only structure.
pub fn node_features(g: &Graph, alphabet: &[u32]) -> Result<Tensor> {
    match g.node_labels() {
        None => Ok(Tensor::filled(g.n(), 1, 1.0)),
        Some(labels) => {
            let mut out = Tensor::zeros(g.n(), alphabet.len());
            for (i, &label) in labels.iter().enumerate() {
                let j = alphabet
                    .iter()
                    .position(|&a| a == label)
                    .ok_or(Error::LabelOutsideAlphabet { label })?;
                out.set(i, j, 1.0);
            }
            Ok(out)
        }
    }
}

/// Connect every pair at graph distance in [1, r]; bounded BFS per node.
pub fn reachability_adjacency(g: &Graph, r: usize) -> Result<Graph> {
    if r < 1 {
        return Err(Error::InvalidRadius { radius: r });
    }
    let n = g.n();
    let mut adj = vec![Vec::new(); n];
    let mut dist = vec![usize::MAX; n];
    for start in 0..n {
        dist.fill(usize::MAX);
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            if dist[u] == r {
                continue;
            }
            for &v in g.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    adj[start].push(v);
                    queue.push_back(v);
                }
            }
        }
        adj[start].sort_unstable();
    }
    Ok(Graph {
        adj,
        node_labels: g.node_labels.clone(),
    })
}

/// Restrict to `indices`, renumbering nodes to list positions and carrying
/// labels over.
pub fn induced_subgraph(g: &Graph, indices: &[usize]) -> Result<Graph> {
    let n = g.n();
    let mut position = vec![usize::MAX; n];
    for (pos, &i) in indices.iter().enumerate() {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if position[i] != usize::MAX {
            return Err(Error::DuplicateIndex { index: i });
        }
        position[i] = pos;
    }
    let mut adj = vec![Vec::new(); indices.len()];
    for (pos, &i) in indices.iter().enumerate() {
        for &j in g.neighbors(i) {
            if position[j] != usize::MAX {
                adj[pos].push(position[j]);
            }
        }
        adj[pos].sort_unstable();
    }
    let node_labels = g
        .node_labels
        .as_ref()
        .map(|labels| indices.iter().map(|&i| labels[i]).collect());
    Ok(Graph { adj, node_labels })
}

pub fn degree_vector(g: &Graph) -> Vec<usize> {
    (0..g.n()).map(|i| g.degree(i)).collect()
}

/// A set of graphs with per-graph class labels in [0, C) and the node-label
/// alphabet shared by all graphs.
#[derive(Debug, Clone)]
pub struct LabeledGraphDataset {
    pub graphs: Vec<Graph>,
    pub class_labels: Vec<usize>,
    pub n_classes: usize,
    pub label_alphabet: Vec<u32>,
}

impl LabeledGraphDataset {
    /// Derives the class count and node-label alphabet from the data.
    /// Classes must already be contiguous from 0 and each must occur.
    pub fn new(graphs: Vec<Graph>, class_labels: Vec<usize>) -> Result<Self> {
        if graphs.len() != class_labels.len() {
            return Err(Error::LabelLengthMismatch {
                got: class_labels.len(),
                expected: graphs.len(),
            });
        }
        let n_classes = class_labels.iter().max().map_or(0, |&c| c + 1);
        let mut seen = vec![false; n_classes];
        for &c in &class_labels {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidConfig(format!(
                "class {missing} has no graphs"
            )));
        }
        let mut label_alphabet: Vec<u32> = graphs
            .iter()
            .filter_map(|g| g.node_labels())
            .flatten()
            .copied()
            .collect();
        label_alphabet.sort_unstable();
        label_alphabet.dedup();
        Ok(Self {
            graphs,
            class_labels,
            n_classes,
            label_alphabet,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Feature width d_f: alphabet size, or 1 for unlabeled corpora.
    pub fn feature_dim(&self) -> usize {
        if self.label_alphabet.is_empty() {
            1
        } else {
            self.label_alphabet.len()
        }
    }
}
