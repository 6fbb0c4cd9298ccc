//! Node down-sampling over embedding geometry: greedy farthest-point
//! sampling picks representative nodes, features move to the coarse graph
//! either by row selection or by attention-weighted aggregation, and the
//! adjacency is coarsened through reachability so the sampled graph stays
//! connected.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, reachability_adjacency, Graph};
use crate::seeding;

/// Ordered, distinct sample indices into a graph's nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    indices: Vec<usize>,
}

impl SampleSet {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            if seen[i] {
                return Err(Error::DuplicateIndex { index: i });
            }
            seen[i] = true;
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoolingConfig {
    /// Weight of the row-selection features in the convex combination with
    /// the attention-aggregated features.
    pub lambda: f64,
    /// Reachability radius used to coarsen the adjacency.
    pub radius: usize,
    /// p-norm of the coverage objective.
    pub p: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            radius: 3,
            p: 2.0,
        }
    }
}

impl PoolingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || !self.lambda.is_finite() {
            return Err(Error::InvalidMixing { lambda: self.lambda });
        }
        if self.radius < 1 {
            return Err(Error::InvalidRadius { radius: self.radius });
        }
        Ok(())
    }
}

/// Sampled node count: a quarter of the nodes, clamped to [5, 30] and never
/// above n.
pub fn sample_count(n: usize) -> usize {
    assert!(n >= 1);
    n.min(30.min(5.max(n / 4)))
}

fn p_dist(a: &[f64], b: &[f64], p: f64) -> f64 {
    debug_assert!(p >= 1.0);
    if p == 2.0 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    } else {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

/// Sum over all nodes of the p-distance to the nearest sampled node.
pub fn coverage_objective(e: &Tensor, s: &SampleSet, p: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..e.rows() {
        let nearest = s
            .indices()
            .iter()
            .map(|&i| p_dist(e.row(k), e.row(i), p))
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    total
}

fn fps_greedy(e: &Tensor, m: usize, start: usize) -> SampleSet {
    let n = e.rows();
    let mut indices = Vec::with_capacity(m);
    let mut selected = vec![false; n];
    let mut min_dist2 = vec![f64::INFINITY; n];
    let push = |idx: usize,
                    indices: &mut Vec<usize>,
                    selected: &mut Vec<bool>,
                    min_dist2: &mut Vec<f64>| {
        indices.push(idx);
        selected[idx] = true;
        for k in 0..n {
            let d = e.row_dist2(k, e, idx);
            if d < min_dist2[k] {
                min_dist2[k] = d;
            }
        }
    };
    push(start, &mut indices, &mut selected, &mut min_dist2);
    while indices.len() < m {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for k in 0..n {
            if !selected[k] && min_dist2[k] > best_d {
                best_d = min_dist2[k];
                best = k;
            }
        }
        push(best, &mut indices, &mut selected, &mut min_dist2);
    }
    SampleSet { indices }
}

/// Greedy farthest-point sampling: after a seeded uniform first pick, each
/// step adds the node maximizing its distance to the chosen set (ties to
/// the lowest index). Exactly `m` distinct indices.
pub fn farthest_point_sampling(e: &Tensor, m: usize, seed: u64) -> Result<SampleSet> {
    let n = e.rows();
    if m < 1 || m > n {
        return Err(Error::SampleCountOutOfRange { m, n });
    }
    let start = seeding::rng(seed, "fps", 0).gen_range(0..n);
    Ok(fps_greedy(e, m, start))
}

/// Farthest-point sampling with a pinned first index.
pub fn farthest_point_sampling_from(e: &Tensor, m: usize, start: usize) -> Result<SampleSet> {
    let n = e.rows();
    if m < 1 || m > n {
        return Err(Error::SampleCountOutOfRange { m, n });
    }
    if start >= n {
        return Err(Error::IndexOutOfRange { index: start, n });
    }
    Ok(fps_greedy(e, m, start))
}

/// Row selection: X_s = rows of X at the sampled indices, in sample order.
pub fn downsample_features_method1(x: &Tensor, s: &SampleSet) -> Tensor {
    let mut out = Tensor::zeros(s.m(), x.cols());
    for (r, &i) in s.indices().iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

/// Attention assignments Q (m×n): row i is the softmax over all nodes of
/// X·p_iᵀ, where p_i is the i-th sampled (pivotal) feature row.
pub fn attention_assignments(x: &Tensor, s: &SampleSet) -> Tensor {
    let n = x.rows();
    let mut q = Tensor::zeros(s.m(), n);
    for (r, &i) in s.indices().iter().enumerate() {
        let pivot = x.row(i);
        let row = q.row_mut(r);
        for k in 0..n {
            row[k] = x.row(k).iter().zip(pivot).map(|(a, b)| a * b).sum();
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    q
}

/// Attention aggregation: X_s = Q·X, each output row a convex combination
/// of all node features.
pub fn downsample_features_method2(x: &Tensor, s: &SampleSet) -> Tensor {
    let q = attention_assignments(x, s);
    Tensor::matmul(&q, false, x, false).expect("shapes agree by construction")
}

/// λ·X1 + (1−λ)·X2.
pub fn combine_features(x1: &Tensor, x2: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
        return Err(Error::InvalidMixing { lambda });
    }
    if x1.shape() != x2.shape() {
        return Err(Error::ShapeMismatch {
            context: "combine_features",
            expected: format!("{:?}", x1.shape()),
            got: format!("{:?}", x2.shape()),
        });
    }
    let mut out = x1.map(|v| lambda * v);
    out.axpy(1.0 - lambda, x2);
    Ok(out)
}

/// Coarse adjacency: connect sampled nodes whose distance in the original
/// graph is at most `r`, then restrict to the sample.
pub fn downsample_adjacency(g: &Graph, s: &SampleSet, r: usize) -> Result<Graph> {
    let reach = reachability_adjacency(g, r)?;
    induced_subgraph(&reach, s.indices())
}

/// The static part of a pooling pass for one graph: which nodes are kept
/// and how they are wired. Feature down-sampling stays on the training tape
/// because it must carry gradients.
#[derive(Debug, Clone)]
pub struct PoolingPlan {
    pub sample: SampleSet,
    pub coarse: Graph,
}

/// Sample over the embedding geometry and coarsen the adjacency.
pub fn plan_pooling(g: &Graph, e: &Tensor, cfg: &PoolingConfig, seed: u64) -> Result<PoolingPlan> {
    cfg.validate()?;
    assert_eq!(g.n(), e.rows(), "embedding rows must match node count");
    let m = sample_count(g.n());
    let sample = farthest_point_sampling(e, m, seed)?;
    let coarse = downsample_adjacency(g, &sample, cfg.radius)?;
    Ok(PoolingPlan { sample, coarse })
}
