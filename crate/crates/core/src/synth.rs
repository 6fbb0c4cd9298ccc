//! Seeded generators for six synthetic graph-classification tasks, all
//! built from one motif: dense random clusters joined by narrow bridges
//! into chains and loops.
//!
//! Every generator retains the planted cluster partition so tests can
//! recompute the class label from structure alone.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph, LabeledGraphDataset};
use crate::seeding;

/// Nodes per cluster are drawn uniformly from this range.
pub const CLUSTER_MIN: usize = 20;
pub const CLUSTER_MAX: usize = 45;
/// Random intra-cluster partners per node.
pub const INTRA_DEGREE: usize = 5;
/// Nodes on each side of an inter-cluster bridge.
pub const BRIDGE_WIDTH: usize = 3;

/// The six synthetic tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    /// Clusters in a chain vs. a closed loop; binary.
    Hlld,
    /// 3 to 6 clusters, topology randomized; class = count − 3.
    Cnc,
    /// 2 to 4 loops of clusters chained by shared clusters; class = loops − 2.
    Cnlc,
    /// Loop of clusters with binary labels; class = one-labeled count − 2.
    Nlc,
    /// Loop of clusters; class 1 iff diagonally opposite labels all match.
    Mdc,
    /// 2 or 3 mutually disconnected clusters; class = count − 2.
    TwoThree,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::Hlld,
        TaskId::Cnc,
        TaskId::Cnlc,
        TaskId::Nlc,
        TaskId::Mdc,
        TaskId::TwoThree,
    ];

    pub fn n_classes(self) -> usize {
        match self {
            TaskId::Hlld | TaskId::Mdc | TaskId::TwoThree => 2,
            TaskId::Cnlc => 3,
            TaskId::Cnc | TaskId::Nlc => 4,
        }
    }

    /// Whether graphs carry categorical node labels.
    pub fn node_labeled(self) -> bool {
        matches!(self, TaskId::Nlc | TaskId::Mdc)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Hlld => "hlld",
            TaskId::Cnc => "cnc",
            TaskId::Cnlc => "cnlc",
            TaskId::Nlc => "nlc",
            TaskId::Mdc => "mdc",
            TaskId::TwoThree => "twothree",
        }
    }

    pub fn parse(s: &str) -> Option<TaskId> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A generated graph plus the construction facts tests verify against.
#[derive(Debug, Clone)]
pub struct Planted {
    pub graph: Graph,
    pub class: usize,
    /// Node ids per planted cluster, in construction order.
    pub clusters: Vec<Vec<usize>>,
    /// Per-cluster binary labels for the node-labeled tasks.
    pub cluster_labels: Option<Vec<u32>>,
    /// Chain/loop flag where the family has one (loop = true).
    pub closed_loop: Option<bool>,
    /// Loop sizes (in clusters) for the chained-loops family.
    pub loop_sizes: Option<Vec<usize>>,
}

/// Dense random cluster: each node draws `intra_degree` distinct partners,
/// edges are the union, and the draw repeats until the result is connected.
pub fn gen_cluster(size: usize, intra_degree: usize, seed: u64) -> Result<Graph> {
    if size <= intra_degree {
        return Err(Error::ClusterTooSmall {
            size,
            degree: intra_degree,
        });
    }
    let mut rng = seeding::rng(seed, "cluster", 0);
    loop {
        let mut edges = Vec::with_capacity(size * intra_degree);
        for i in 0..size {
            let mut others: Vec<usize> = (0..size).filter(|&j| j != i).collect();
            others.shuffle(&mut rng);
            for &j in &others[..intra_degree] {
                edges.push((i, j));
            }
        }
        let g = build_graph(size, &edges, None)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
}

fn choose_distinct(rng: &mut ChaCha8Rng, set: &[usize], k: usize) -> Vec<usize> {
    let mut pool = set.to_vec();
    pool.shuffle(rng);
    pool.truncate(k);
    pool
}

fn bipartite_edges(
    rng: &mut ChaCha8Rng,
    a: &[usize],
    b: &[usize],
    width: usize,
) -> Vec<(usize, usize)> {
    let pa = choose_distinct(rng, a, width);
    let pb = choose_distinct(rng, b, width);
    let mut edges = Vec::with_capacity(width * width);
    for &x in &pa {
        for &y in &pb {
            edges.push((x, y));
        }
    }
    edges
}

/// Add a complete bipartite bridge between `width` random nodes of each
/// cluster.
pub fn bridge_clusters(
    g: &Graph,
    cluster_a: &[usize],
    cluster_b: &[usize],
    width: usize,
    seed: u64,
) -> Result<Graph> {
    for &node in cluster_a {
        if cluster_b.contains(&node) {
            return Err(Error::ClustersOverlap { node });
        }
    }
    let smallest = cluster_a.len().min(cluster_b.len());
    if width > smallest {
        return Err(Error::BridgeTooWide {
            width,
            size: smallest,
        });
    }
    let mut rng = seeding::rng(seed, "bridge", 0);
    let mut edges = g.edges();
    edges.extend(bipartite_edges(&mut rng, cluster_a, cluster_b, width));
    build_graph(g.n(), &edges, g.node_labels().map(<[u32]>::to_vec))
}

/// Accumulates clusters and bridges before one final validated build.
struct Assembly {
    edges: Vec<(usize, usize)>,
    clusters: Vec<Vec<usize>>,
    n: usize,
}

impl Assembly {
    fn new() -> Self {
        Self {
            edges: Vec::new(),
            clusters: Vec::new(),
            n: 0,
        }
    }

    fn add_cluster(&mut self, rng: &mut ChaCha8Rng) -> Result<usize> {
        let size = rng.gen_range(CLUSTER_MIN..=CLUSTER_MAX);
        self.add_cluster_of(rng, size)
    }

    fn add_cluster_of(&mut self, rng: &mut ChaCha8Rng, size: usize) -> Result<usize> {
        let g = gen_cluster(size, INTRA_DEGREE, rng.gen())?;
        let offset = self.n;
        self.edges
            .extend(g.edges().into_iter().map(|(i, j)| (i + offset, j + offset)));
        self.clusters.push((offset..offset + size).collect());
        self.n += size;
        Ok(self.clusters.len() - 1)
    }

    fn bridge(&mut self, rng: &mut ChaCha8Rng, a: usize, b: usize) {
        let edges = bipartite_edges(
            rng,
            &self.clusters[a],
            &self.clusters[b],
            BRIDGE_WIDTH,
        );
        self.edges.extend(edges);
    }

    fn finish(self, cluster_labels: Option<&[u32]>) -> Result<(Graph, Vec<Vec<usize>>)> {
        let node_labels = cluster_labels.map(|labels| {
            let mut out = vec![0u32; self.n];
            for (c, members) in self.clusters.iter().enumerate() {
                for &node in members {
                    out[node] = labels[c];
                }
            }
            out
        });
        let graph = build_graph(self.n, &self.edges, node_labels)?;
        Ok((graph, self.clusters))
    }
}

/// Chain or loop of `k` clusters; `closed` adds the bridge from the last
/// cluster back to the first.
fn gen_cluster_ring(rng: &mut ChaCha8Rng, k: usize, closed: bool) -> Result<(Graph, Vec<Vec<usize>>)> {
    let mut asm = Assembly::new();
    for _ in 0..k {
        asm.add_cluster(rng)?;
    }
    for i in 0..k - 1 {
        asm.bridge(rng, i, i + 1);
    }
    if closed {
        asm.bridge(rng, k - 1, 0);
    }
    asm.finish(None)
}

fn gen_hlld(rng: &mut ChaCha8Rng, class: usize) -> Result<Planted> {
    let k = rng.gen_range(3..=6);
    let closed = class == 1;
    let (graph, clusters) = gen_cluster_ring(rng, k, closed)?;
    Ok(Planted {
        graph,
        class,
        clusters,
        cluster_labels: None,
        closed_loop: Some(closed),
        loop_sizes: None,
    })
}

fn gen_cnc(rng: &mut ChaCha8Rng, class: usize) -> Result<Planted> {
    let k = class + 3;
    let closed = rng.gen::<bool>();
    let (graph, clusters) = gen_cluster_ring(rng, k, closed)?;
    Ok(Planted {
        graph,
        class,
        clusters,
        cluster_labels: None,
        closed_loop: Some(closed),
        loop_sizes: None,
    })
}

fn gen_cnlc(rng: &mut ChaCha8Rng, class: usize) -> Result<Planted> {
    let n_loops = class + 2;
    let loop_sizes: Vec<usize> = (0..n_loops).map(|_| rng.gen_range(3..=5)).collect();
    let mut asm = Assembly::new();

    // First loop stands alone; each later loop reuses one cluster of its
    // predecessor (never the one already shared) and rings fresh clusters
    // through it.
    let mut prev_loop: Vec<usize> = Vec::new();
    let mut prev_shared = usize::MAX;
    for &size in &loop_sizes {
        let ring: Vec<usize> = if prev_loop.is_empty() {
            (0..size)
                .map(|_| asm.add_cluster(rng))
                .collect::<Result<_>>()?
        } else {
            let candidates: Vec<usize> = prev_loop
                .iter()
                .copied()
                .filter(|&c| c != prev_shared)
                .collect();
            let shared = *candidates.choose(rng).expect("loop has spare clusters");
            let mut ring = vec![shared];
            for _ in 1..size {
                ring.push(asm.add_cluster(rng)?);
            }
            prev_shared = shared;
            ring
        };
        for w in ring.windows(2) {
            asm.bridge(rng, w[0], w[1]);
        }
        asm.bridge(rng, *ring.last().unwrap(), ring[0]);
        prev_loop = ring;
    }
    let (graph, clusters) = asm.finish(None)?;
    Ok(Planted {
        graph,
        class,
        clusters,
        cluster_labels: None,
        closed_loop: None,
        loop_sizes: Some(loop_sizes),
    })
}

fn gen_labeled_loop(
    rng: &mut ChaCha8Rng,
    k: usize,
    labels: Vec<u32>,
    class: usize,
) -> Result<Planted> {
    let mut asm = Assembly::new();
    for _ in 0..k {
        asm.add_cluster(rng)?;
    }
    for i in 0..k {
        asm.bridge(rng, i, (i + 1) % k);
    }
    let (graph, clusters) = asm.finish(Some(&labels))?;
    Ok(Planted {
        graph,
        class,
        clusters,
        cluster_labels: Some(labels),
        closed_loop: Some(true),
        loop_sizes: None,
    })
}

fn gen_nlc(rng: &mut ChaCha8Rng, class: usize) -> Result<Planted> {
    let k = *[6, 7, 8].choose(rng).unwrap();
    let ones = class + 2;
    let mut labels = vec![0u32; k];
    let positions: Vec<usize> = choose_distinct(rng, &(0..k).collect::<Vec<_>>(), ones);
    for p in positions {
        labels[p] = 1;
    }
    gen_labeled_loop(rng, k, labels, class)
}

fn gen_mdc(rng: &mut ChaCha8Rng, class: usize) -> Result<Planted> {
    let k = *[6, 8, 10].choose(rng).unwrap();
    let half = k / 2;
    let mut labels = vec![0u32; k];
    for j in 0..half {
        labels[j] = rng.gen_range(0..2);
    }
    if class == 1 {
        for j in 0..half {
            labels[half + j] = labels[j];
        }
    } else {
        // Flip a uniformly random nonempty subset of the diagonal pairs.
        let mut flips = vec![false; half];
        while !flips.iter().any(|&f| f) {
            for f in &mut flips {
                *f = rng.gen::<bool>();
            }
        }
        for j in 0..half {
            labels[half + j] = if flips[j] { 1 - labels[j] } else { labels[j] };
        }
    }
    gen_labeled_loop(rng, k, labels, class)
}

fn gen_twothree(rng: &mut ChaCha8Rng, class: usize) -> Result<Planted> {
    let k = class + 2;
    // Draw the total node count from the same range for both classes and
    // split it into k in-range cluster sizes, so the component count is the
    // only class signal — otherwise total size alone separates the classes.
    let total = rng.gen_range(3 * CLUSTER_MIN..=2 * CLUSTER_MAX);
    let mut sizes = Vec::with_capacity(k);
    let mut remaining = total;
    for parts_left in (1..=k).rev() {
        let size = if parts_left == 1 {
            remaining
        } else {
            let lo = CLUSTER_MIN.max(remaining.saturating_sub((parts_left - 1) * CLUSTER_MAX));
            let hi = CLUSTER_MAX.min(remaining - (parts_left - 1) * CLUSTER_MIN);
            rng.gen_range(lo..=hi)
        };
        sizes.push(size);
        remaining -= size;
    }
    let mut asm = Assembly::new();
    for size in sizes {
        asm.add_cluster_of(rng, size)?;
    }
    let (graph, clusters) = asm.finish(None)?;
    Ok(Planted {
        graph,
        class,
        clusters,
        cluster_labels: None,
        closed_loop: None,
        loop_sizes: None,
    })
}

/// Generate one graph of the given class.
pub fn gen_task_graph_for_class(task: TaskId, class: usize, seed: u64) -> Result<Planted> {
    assert!(class < task.n_classes(), "class out of range for task");
    let mut rng = seeding::rng(seed, "task", class as u64);
    match task {
        TaskId::Hlld => gen_hlld(&mut rng, class),
        TaskId::Cnc => gen_cnc(&mut rng, class),
        TaskId::Cnlc => gen_cnlc(&mut rng, class),
        TaskId::Nlc => gen_nlc(&mut rng, class),
        TaskId::Mdc => gen_mdc(&mut rng, class),
        TaskId::TwoThree => gen_twothree(&mut rng, class),
    }
}

/// Generate one graph with a uniformly drawn class.
pub fn gen_task_graph(task: TaskId, seed: u64) -> Result<Planted> {
    let class = seeding::rng(seed, "task-class", 0).gen_range(0..task.n_classes());
    gen_task_graph_for_class(task, class, seed)
}

/// Balanced dataset: classes cycle 0, 1, …, C−1, 0, … so counts differ by
/// at most one, and per-graph seeds make generation order-independent.
pub fn gen_dataset(task: TaskId, size: usize, seed: u64) -> Result<LabeledGraphDataset> {
    let c = task.n_classes();
    if size < c {
        return Err(Error::DatasetTooSmall { size, classes: c });
    }
    let mut graphs = Vec::with_capacity(size);
    let mut classes = Vec::with_capacity(size);
    for idx in 0..size {
        let class = idx % c;
        let planted = gen_task_graph_for_class(task, class, seeding::derive(seed, "synth", idx as u64))?;
        graphs.push(planted.graph);
        classes.push(planted.class);
    }
    LabeledGraphDataset::new(graphs, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::degree_vector;

    /// Contract clusters to single nodes; an edge joins two clusters iff
    /// any cross-edge exists.
    fn quotient(p: &Planted) -> Graph {
        let mut cluster_of = vec![usize::MAX; p.graph.n()];
        for (c, members) in p.clusters.iter().enumerate() {
            for &node in members {
                cluster_of[node] = c;
            }
        }
        assert!(
            cluster_of.iter().all(|&c| c != usize::MAX),
            "clusters must partition the nodes"
        );
        let mut edges = Vec::new();
        for (i, j) in p.graph.edges() {
            let (a, b) = (cluster_of[i], cluster_of[j]);
            if a != b {
                edges.push((a, b));
            }
        }
        build_graph(p.clusters.len(), &edges, None).unwrap()
    }

    fn cyclomatic(g: &Graph) -> usize {
        g.edge_count() + g.component_count() - g.n()
    }

    /// Class label recomputed from structure and planted metadata alone.
    fn recompute_class(task: TaskId, p: &Planted) -> usize {
        let q = quotient(p);
        match task {
            TaskId::Hlld => {
                let degs = degree_vector(&q);
                if degs.iter().all(|&d| d == 2) {
                    1
                } else {
                    assert_eq!(degs.iter().filter(|&&d| d == 1).count(), 2, "chain shape");
                    0
                }
            }
            TaskId::Cnc => q.n() - 3,
            TaskId::Cnlc => cyclomatic(&q) - 2,
            TaskId::Nlc => {
                let labels = p.cluster_labels.as_ref().unwrap();
                labels.iter().filter(|&&l| l == 1).count() - 2
            }
            TaskId::Mdc => {
                let labels = p.cluster_labels.as_ref().unwrap();
                let half = labels.len() / 2;
                let matched = (0..half).all(|j| labels[j] == labels[half + j]);
                usize::from(matched)
            }
            TaskId::TwoThree => p.graph.component_count() - 2,
        }
    }

    #[test]
    fn cluster_is_connected_with_min_degree() {
        let g = gen_cluster(20, 5, 77).unwrap();
        assert_eq!(g.n(), 20);
        assert!(g.is_connected());
        assert!(degree_vector(&g).iter().all(|&d| d >= 5));
    }

    #[test]
    fn cluster_six_nodes_degree_five_is_complete() {
        let g = gen_cluster(6, 5, 1).unwrap();
        assert_eq!(g.edge_count(), 15);
    }

    #[test]
    fn cluster_rejects_size_not_above_degree() {
        assert!(matches!(
            gen_cluster(5, 5, 0),
            Err(Error::ClusterTooSmall { size: 5, degree: 5 })
        ));
    }

    #[test]
    fn bridge_adds_exactly_width_squared_edges() {
        let g = build_graph(10, &[(0, 1), (5, 6)], None).unwrap();
        let a: Vec<usize> = (0..5).collect();
        let b: Vec<usize> = (5..10).collect();
        let bridged = bridge_clusters(&g, &a, &b, 3, 9).unwrap();
        assert_eq!(bridged.edge_count(), g.edge_count() + 9);
        let single = bridge_clusters(&g, &a, &b, 1, 9).unwrap();
        assert_eq!(single.edge_count(), g.edge_count() + 1);
        let unchanged = bridge_clusters(&g, &a, &b, 0, 9).unwrap();
        assert_eq!(unchanged, g);
    }

    #[test]
    fn bridge_rejects_overlap_and_excess_width() {
        let g = build_graph(6, &[], None).unwrap();
        assert!(matches!(
            bridge_clusters(&g, &[0, 1, 2], &[2, 3], 1, 0),
            Err(Error::ClustersOverlap { node: 2 })
        ));
        assert!(matches!(
            bridge_clusters(&g, &[0, 1], &[3, 4, 5], 3, 0),
            Err(Error::BridgeTooWide { width: 3, size: 2 })
        ));
    }

    #[test]
    fn task_graphs_are_connected_except_twothree() {
        for task in TaskId::ALL {
            for seed in 0..8 {
                let p = gen_task_graph(task, seed).unwrap();
                if task == TaskId::TwoThree {
                    assert_eq!(p.graph.component_count(), p.clusters.len(), "{task}");
                } else {
                    assert!(p.graph.is_connected(), "{task} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn emitted_class_matches_structural_recomputation() {
        for task in TaskId::ALL {
            for class in 0..task.n_classes() {
                for seed in 0..6 {
                    let p = gen_task_graph_for_class(task, class, seed).unwrap();
                    assert_eq!(p.class, class);
                    assert_eq!(
                        recompute_class(task, &p),
                        class,
                        "{task} class {class} seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn hlld_bridge_count_is_cluster_count_or_one_less() {
        for seed in 0..10 {
            let p = gen_task_graph(TaskId::Hlld, seed).unwrap();
            let q = quotient(&p);
            let k = p.clusters.len();
            let expected = if p.closed_loop.unwrap() { k } else { k - 1 };
            assert_eq!(q.edge_count(), expected);
        }
    }

    #[test]
    fn cnlc_cluster_count_matches_shared_loop_arithmetic() {
        for class in 0..3 {
            for seed in 0..6 {
                let p = gen_task_graph_for_class(TaskId::Cnlc, class, seed).unwrap();
                let sizes = p.loop_sizes.as_ref().unwrap();
                let expected: usize = sizes.iter().sum::<usize>() - (sizes.len() - 1);
                assert_eq!(p.clusters.len(), expected);
            }
        }
    }

    #[test]
    fn labeled_tasks_have_uniform_labels_within_clusters() {
        for task in [TaskId::Nlc, TaskId::Mdc] {
            let p = gen_task_graph(task, 3).unwrap();
            let node_labels = p.graph.node_labels().unwrap();
            let cluster_labels = p.cluster_labels.as_ref().unwrap();
            for (c, members) in p.clusters.iter().enumerate() {
                for &node in members {
                    assert_eq!(node_labels[node], cluster_labels[c]);
                }
            }
        }
    }

    #[test]
    fn twothree_total_size_is_class_independent() {
        // Both classes draw totals from the same [3·MIN, 2·MAX] range with
        // every cluster inside [MIN, MAX]; otherwise node count alone would
        // separate two components from three.
        for class in 0..2 {
            for seed in 0..30 {
                let p = gen_task_graph_for_class(TaskId::TwoThree, class, seed).unwrap();
                let n = p.graph.n();
                assert!(
                    (3 * CLUSTER_MIN..=2 * CLUSTER_MAX).contains(&n),
                    "class {class} seed {seed}: total {n}"
                );
                for members in &p.clusters {
                    assert!(
                        (CLUSTER_MIN..=CLUSTER_MAX).contains(&members.len()),
                        "class {class} seed {seed}: cluster size {}",
                        members.len()
                    );
                }
            }
        }
    }

    #[test]
    fn unlabeled_tasks_have_no_node_labels() {
        for task in [TaskId::Hlld, TaskId::Cnc, TaskId::Cnlc, TaskId::TwoThree] {
            let p = gen_task_graph(task, 0).unwrap();
            assert!(p.graph.node_labels().is_none(), "{task}");
        }
    }

    #[test]
    fn dataset_is_balanced_and_deterministic() {
        let ds = gen_dataset(TaskId::Cnc, 8, 5).unwrap();
        for class in 0..4 {
            assert_eq!(ds.class_labels.iter().filter(|&&c| c == class).count(), 2);
        }
        let again = gen_dataset(TaskId::Cnc, 8, 5).unwrap();
        assert_eq!(ds.class_labels, again.class_labels);
        for (a, b) in ds.graphs.iter().zip(&again.graphs) {
            assert_eq!(a, b);
        }
        let other = gen_dataset(TaskId::Cnc, 8, 6).unwrap();
        assert!(ds.graphs.iter().zip(&other.graphs).any(|(a, b)| a != b));
    }

    #[test]
    fn dataset_balance_within_one_at_odd_sizes() {
        let ds = gen_dataset(TaskId::Cnlc, 10, 1).unwrap();
        let mut counts = [0usize; 3];
        for &c in &ds.class_labels {
            counts[c] += 1;
        }
        assert_eq!(counts.iter().max().unwrap() - counts.iter().min().unwrap(), 1);
    }

    #[test]
    fn dataset_rejects_sizes_below_class_count() {
        assert!(matches!(
            gen_dataset(TaskId::Cnc, 3, 0),
            Err(Error::DatasetTooSmall { size: 3, classes: 4 })
        ));
    }

    #[test]
    fn task_names_round_trip() {
        for task in TaskId::ALL {
            assert_eq!(TaskId::parse(task.name()), Some(task));
            assert_eq!(TaskId::parse(&task.name().to_uppercase()), Some(task));
        }
        assert_eq!(TaskId::parse("nosuch"), None);
    }
}
