//! Per-graph node embeddings: truncated random walks fed to skip-gram with
//! negative sampling. Each graph is embedded independently, so coordinates
//! of different graphs live in unrelated frames; only within-graph geometry
//! is meaningful.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Graph, LabeledGraphDataset};
use crate::seeding;

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    /// The window spans a whole walk (walks are at most 10 nodes), and
    /// training runs long enough to reach the skip-gram equilibrium, where
    /// quotient-adjacent clusters sit measurably closer than non-adjacent
    /// ones; shorter training leaves no usable shape in the layout.
    fn default() -> Self {
        Self {
            dim: 12,
            walks_per_node: 20,
            window: 10,
            negatives: 5,
            epochs: 10,
            step_size: 0.025,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Walk length grows with graph size, clamped to [4, 10].
pub fn walk_length(n: usize) -> usize {
    assert!(n >= 1);
    4.max((n / 10).min(10))
}

/// `walks_per_node` truncated random walks from every node. A walk ends
/// early only when it starts at an isolated node.
pub fn generate_walks(g: &Graph, cfg: &EmbeddingConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = g.n();
    let len = walk_length(n);
    let mut corpus = Vec::with_capacity(n * cfg.walks_per_node);
    for start in 0..n {
        for _ in 0..cfg.walks_per_node {
            let mut walk = Vec::with_capacity(len);
            walk.push(start);
            let mut current = start;
            while walk.len() < len {
                let nbrs = g.neighbors(current);
                if nbrs.is_empty() {
                    break;
                }
                current = nbrs[rng.gen_range(0..nbrs.len())];
                walk.push(current);
            }
            corpus.push(walk);
        }
    }
    corpus
}

/// Precomputed logistic values over [-6, 6]; saturates to 0/1 outside.
struct SigmoidTable {
    table: Vec<f64>,
}

const SIGMOID_BINS: usize = 1000;
const SIGMOID_MAX: f64 = 6.0;

impl SigmoidTable {
    fn new() -> Self {
        let table = (0..SIGMOID_BINS)
            .map(|i| {
                let x = (i as f64 / SIGMOID_BINS as f64 * 2.0 - 1.0) * SIGMOID_MAX;
                1.0 / (1.0 + (-x).exp())
            })
            .collect();
        Self { table }
    }

    fn get(&self, x: f64) -> f64 {
        if x >= SIGMOID_MAX {
            1.0
        } else if x <= -SIGMOID_MAX {
            0.0
        } else {
            let idx = ((x + SIGMOID_MAX) / (2.0 * SIGMOID_MAX) * SIGMOID_BINS as f64) as usize;
            self.table[idx.min(SIGMOID_BINS - 1)]
        }
    }
}

/// Cumulative unigram^0.75 distribution over corpus occurrences.
struct NoiseDistribution {
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    fn from_corpus(corpus: &[Vec<usize>], n: usize) -> Self {
        let mut counts = vec![0.0f64; n];
        for walk in corpus {
            for &node in walk {
                counts[node] += 1.0;
            }
        }
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for c in counts {
            acc += c.powf(0.75);
            cumulative.push(acc);
        }
        Self { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let r = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= r)
    }
}

fn context_pairs(walk: &[usize], window: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    walk.iter().enumerate().flat_map(move |(i, &center)| {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(walk.len() - 1);
        (lo..=hi)
            .filter(move |&j| j != i)
            .map(move |j| (center, walk[j]))
    })
}

/// Stream key for initial center vectors. Deliberately a fixed constant:
/// like mainstream word2vec implementations, a node's starting vector is a
/// deterministic function of the node identity alone, so node `i` starts
/// from the same coordinates in every graph. Training never shares data
/// across graphs; this only fixes the initialization convention.
const INIT_STREAM: u64 = 0x673a_11c4_0dd5_eedb;

/// U(-0.5/d, 0.5/d) init, each row keyed by its node index.
fn initial_vectors(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(n, d);
    let half = 0.5 / d as f64;
    for i in 0..n {
        let mut rng = seeding::rng(INIT_STREAM, "node-init", i as u64);
        for v in t.row_mut(i) {
            *v = rng.gen_range(-half..half);
        }
    }
    t
}

fn train_skipgram_impl(
    corpus: &[Vec<usize>],
    n: usize,
    cfg: &EmbeddingConfig,
) -> (Tensor, Tensor) {
    assert!(cfg.dim >= 1 && cfg.window >= 1 && cfg.negatives >= 1);
    assert!(!corpus.is_empty(), "empty walk corpus");
    let d = cfg.dim;
    let mut rng = seeding::rng(cfg.seed, "sgns", 0);
    let mut input = initial_vectors(n, d);
    let mut output = Tensor::zeros(n, d);

    let pairs_per_epoch: u64 = corpus
        .iter()
        .map(|w| context_pairs(w, cfg.window).count() as u64)
        .sum();
    let total_steps = pairs_per_epoch * cfg.epochs as u64;
    if total_steps == 0 {
        return (input, output);
    }

    let noise = NoiseDistribution::from_corpus(corpus, n);
    let sigmoid = SigmoidTable::new();
    let lr_floor = cfg.step_size * 1e-4;
    let mut processed = 0u64;
    let mut acc = vec![0.0f64; d];

    // Visit walks in a fresh shuffled order each epoch, as the original
    // random-walk embedding procedure interleaves start nodes per pass;
    // grouping all of one node's walks together biases the final geometry
    // toward whichever nodes are processed last.
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for &walk_idx in &order {
            let walk = &corpus[walk_idx];
            for (center, positive) in context_pairs(walk, cfg.window) {
                let lr = (cfg.step_size * (1.0 - processed as f64 / total_steps as f64))
                    .max(lr_floor);
                processed += 1;
                acc.fill(0.0);
                let in_row = input.row_mut(center);
                for k in 0..=cfg.negatives {
                    let (target, label) = if k == 0 {
                        (positive, 1.0)
                    } else {
                        let sampled = noise.sample(&mut rng);
                        if sampled == positive {
                            continue;
                        }
                        (sampled, 0.0)
                    };
                    let out_row = output.row_mut(target);
                    let dot: f64 = in_row.iter().zip(out_row.iter()).map(|(a, b)| a * b).sum();
                    let g = (label - sigmoid.get(dot)) * lr;
                    for ((a, o), i) in acc.iter_mut().zip(out_row.iter_mut()).zip(in_row.iter()) {
                        *a += g * *o;
                        *o += g * i;
                    }
                }
                for (i, a) in in_row.iter_mut().zip(&acc) {
                    *i += a;
                }
            }
        }
    }
    (input, output)
}

/// Skip-gram-with-negative-sampling training over a walk corpus. Returns
/// the input (center) vectors; nodes that never form a context pair keep
/// their random initialization.
pub fn train_skipgram(corpus: &[Vec<usize>], n: usize, cfg: &EmbeddingConfig) -> Tensor {
    train_skipgram_impl(corpus, n, cfg).0
}

/// Monte-Carlo estimate of the SGNS objective (mean per pair), used to
/// monitor that training actually reduces the loss.
#[cfg(test)]
fn corpus_loss(
    corpus: &[Vec<usize>],
    input: &Tensor,
    output: &Tensor,
    cfg: &EmbeddingConfig,
    loss_seed: u64,
) -> f64 {
    let noise = NoiseDistribution::from_corpus(corpus, input.rows());
    let mut rng = seeding::rng(loss_seed, "sgns-loss", 0);
    let mut total = 0.0;
    let mut pairs = 0u64;
    let eps = 1e-12;
    for walk in corpus {
        for (center, positive) in context_pairs(walk, cfg.window) {
            let dot: f64 = input
                .row(center)
                .iter()
                .zip(output.row(positive))
                .map(|(a, b)| a * b)
                .sum();
            let sig = 1.0 / (1.0 + (-dot).exp());
            total -= (sig.max(eps)).ln();
            for _ in 0..cfg.negatives {
                let neg = noise.sample(&mut rng);
                if neg == positive {
                    continue;
                }
                let dot: f64 = input
                    .row(center)
                    .iter()
                    .zip(output.row(neg))
                    .map(|(a, b)| a * b)
                    .sum();
                let sig = 1.0 / (1.0 + dot.exp());
                total -= (sig.max(eps)).ln();
            }
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Embed one graph: random walks, then skip-gram. Deterministic in
/// (graph, config, seed).
pub fn embed_graph(g: &Graph, cfg: &EmbeddingConfig) -> Tensor {
    let mut walk_rng = seeding::rng(cfg.seed, "walks", 0);
    let corpus = generate_walks(g, cfg, &mut walk_rng);
    train_skipgram(&corpus, g.n(), cfg)
}

/// Embed every graph of a dataset in parallel. Per-graph seeds derive from
/// `cfg.seed` and the graph index, so results are order-independent.
pub fn embed_dataset(ds: &LabeledGraphDataset, cfg: &EmbeddingConfig) -> Vec<Tensor> {
    ds.graphs
        .par_iter()
        .enumerate()
        .map(|(idx, g)| {
            let per_graph = cfg.with_seed(seeding::derive(cfg.seed, "embed", idx as u64));
            embed_graph(g, &per_graph)
        })
        .collect()
}

/// Rewrite node coordinates in a deterministic per-graph frame: center the
/// rows, rotate onto the principal axes of their covariance (descending
/// variance), orient each axis so its third moment is non-negative, and
/// scale to unit root-mean-square row norm.
///
/// Training embeds every graph independently, so raw coordinate frames are
/// arbitrary (any rotation/reflection of a solution is an equally good
/// solution) and carry no information. Fixing the frame per graph removes
/// that nuisance degree of freedom — classifiers otherwise have to spend
/// model capacity learning frame invariance from data. The construction
/// uses one graph's rows only and is invariant to node order: covariance,
/// eigenvalues, and third moments are all row-permutation invariant.
pub fn canonicalize_frame(e: &mut Tensor) {
    let (n, d) = e.shape();
    if n == 0 || d == 0 {
        return;
    }
    let data = e.data_mut();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += data[i * d + j] / n as f64;
        }
    }
    for i in 0..n {
        for j in 0..d {
            data[i * d + j] -= mean[j];
        }
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += data[i * d + a] * data[i * d + b] / n as f64;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[a * d + b] = cov[b * d + a];
        }
    }
    let v = jacobi_eigenvectors(&mut cov, d);
    // Components ordered by descending eigenvalue; exact ties keep index
    // order (sort is stable), so the result is deterministic.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| cov[b * d + b].partial_cmp(&cov[a * d + a]).unwrap());
    let mut proj = vec![0.0; n * d];
    for i in 0..n {
        for (jn, &jo) in order.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..d {
                s += data[i * d + k] * v[k * d + jo];
            }
            proj[i * d + jn] = s;
        }
    }
    for j in 0..d {
        let mut m3 = 0.0;
        for i in 0..n {
            m3 += proj[i * d + j].powi(3);
        }
        if m3 < 0.0 {
            for i in 0..n {
                proj[i * d + j] = -proj[i * d + j];
            }
        }
    }
    let ms: f64 = proj.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let scale = ms.sqrt().max(1e-12);
    for (dst, p) in data.iter_mut().zip(&proj) {
        *dst = p / scale;
    }
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix, in place:
/// `a` is reduced to (near-)diagonal eigenvalues and the accumulated
/// rotations are returned column-wise (a = V diag V^T).
fn jacobi_eigenvectors(a: &mut [f64], d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..50 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let theta = 0.5 * (a[q * d + q] - a[p * d + p]) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    v
}

const CACHE_MAGIC: &[u8; 8] = b"GGNNEMB1";

/// Write one embedding matrix with a header binding it to its source
/// (node count, dimension, and a caller-chosen seed fingerprint).
pub fn write_embedding_cache(path: &Path, e: &Tensor, fingerprint: u64) -> Result<()> {
    let mut w = Vec::with_capacity(32 + e.len() * 8);
    w.extend_from_slice(CACHE_MAGIC);
    w.extend_from_slice(&(e.rows() as u64).to_le_bytes());
    w.extend_from_slice(&(e.cols() as u64).to_le_bytes());
    w.extend_from_slice(&fingerprint.to_le_bytes());
    for v in e.data() {
        w.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&w)?;
    Ok(())
}

/// Read a cached embedding, verifying header fields against expectations.
pub fn read_embedding_cache(path: &Path, n: usize, dim: usize, fingerprint: u64) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile { path: path.into() }
            } else {
                Error::Io(e)
            }
        })?
        .read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 32 || &bytes[..8] != CACHE_MAGIC {
        return Err(fail("bad magic"));
    }
    let field = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (rows, cols, fp) = (field(8), field(16), field(24));
    if rows != n as u64 || cols != dim as u64 {
        return Err(fail("shape mismatch"));
    }
    if fp != fingerprint {
        return Err(fail("seed fingerprint mismatch"));
    }
    let expected = 32 + (n * dim) * 8;
    if bytes.len() != expected {
        return Err(fail("truncated payload"));
    }
    let data = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::from_vec(n, dim, data))
}
