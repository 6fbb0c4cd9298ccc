//! Scratch diagnostic: train on hand-constructed node coordinates instead of
//! learned ones, in (A) a shared canonical frame and (B) a per-graph random
//! rotation, to separate "the network cannot exploit geometry" from "the
//! geometry is inconsistent across graphs".

use geognn_core::autodiff::Tensor;
use geognn_core::model::{ModelConfig, ModelVariant, PoolingMode};
use geognn_core::seeding;
use geognn_core::synth::{gen_task_graph_for_class, TaskId};
use geognn_core::train::{evaluate, train_fold, PreparedDataset, TrainConfig};
use geognn_core::graph::LabeledGraphDataset;
use rand::Rng;

const DIM: usize = 12;

/// `shape` interpolates centroid layout between a metric line/ring (1.0) and
/// a regular simplex with no quotient shape at all (0.0); `jitter` is the
/// half-width of per-node uniform noise relative to adjacent centroid gap.
fn ideal_embedding(
    clusters: &[Vec<usize>],
    closed: bool,
    n: usize,
    seed: u64,
    shape: f64,
    jitter: f64,
) -> Tensor {
    let c = clusters.len();
    let mut e = vec![0.0; n * DIM];
    let mut rng = seeding::rng(seed, "jitter", 0);
    for (k, members) in clusters.iter().enumerate() {
        // Metric layout: unit-spaced line for a chain, unit-chord circle for
        // a loop, in the first two coordinates.
        let (cx, cy) = if closed {
            let r = 0.5 / (std::f64::consts::PI / c as f64).sin();
            let th = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
            (r * th.cos(), r * th.sin())
        } else {
            (k as f64, 0.0)
        };
        // Simplex layout: orthogonal corners scaled for unit pairwise gap,
        // one axis per cluster (c <= 6 < DIM-2).
        let mut centroid = vec![0.0; DIM];
        centroid[0] = shape * cx;
        centroid[1] = shape * cy;
        centroid[2 + k] = (1.0 - shape) * std::f64::consts::FRAC_1_SQRT_2;
        for &v in members {
            for d in 0..DIM {
                e[v * DIM + d] = centroid[d] + rng.gen_range(-jitter..jitter);
            }
        }
    }
    Tensor::from_vec(n, DIM, e)
}

fn random_rotation(e: &mut Tensor, seed: u64) {
    let mut rng = seeding::rng(seed, "rot", 0);
    let (n, d) = (e.rows(), e.cols());
    let data = e.data_mut();
    // Compose Givens rotations over random coordinate pairs; 40 of them
    // thoroughly scrambles a 12-dim frame.
    for _ in 0..40 {
        let i = rng.gen_range(0..d);
        let mut j = rng.gen_range(0..d - 1);
        if j >= i {
            j += 1;
        }
        let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = th.sin_cos();
        for r in 0..n {
            let a = data[r * d + i];
            let b = data[r * d + j];
            data[r * d + i] = c * a - s * b;
            data[r * d + j] = s * a + c * b;
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let rotate: bool = args.get(1).map(|s| s == "rotate").unwrap_or(false);
    let size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(60);
    let shape: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let jitter: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let task = TaskId::Hlld;
    let mut graphs = Vec::new();
    let mut classes = Vec::new();
    let mut embeddings = Vec::new();
    for idx in 0..size {
        let class = idx % 2;
        let p = gen_task_graph_for_class(task, class, seeding::derive(7, "synth", idx as u64)).unwrap();
        let mut e = ideal_embedding(
            &p.clusters,
            p.closed_loop.unwrap(),
            p.graph.n(),
            seeding::derive(7, "emb", idx as u64),
            shape,
            jitter,
        );
        if rotate {
            random_rotation(&mut e, seeding::derive(7, "frame", idx as u64));
        }
        graphs.push(p.graph);
        classes.push(p.class);
        embeddings.push(e);
    }
    let ds = LabeledGraphDataset::new(graphs, classes).unwrap();
    let cfg = ModelConfig::new(ModelVariant::GnnEsr, PoolingMode::None, ds.n_classes, ds.feature_dim());
    let data = PreparedDataset { ds, embeddings: Some(embeddings), plans: None };

    let n = data.ds.graphs.len();
    let test: Vec<usize> = (0..n).filter(|i| i % 3 == 0).collect();
    let train: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();

    let tcfg = TrainConfig { epochs, decay_epoch: epochs / 2, folds: 3, seed: 7, ..TrainConfig::default() };
    let out = train_fold(&cfg, &data, &train, &tcfg, 0).unwrap();
    for (i, l) in out.epoch_losses.iter().enumerate() {
        if i % 10 == 0 || i + 1 == epochs {
            println!("epoch {i:3}  loss {l:.4}");
        }
    }
    let acc_tr = evaluate(&out.model, &data, &train).unwrap();
    let acc_te = evaluate(&out.model, &data, &test).unwrap();
    println!(
        "rotate={rotate} size={size} shape={shape} jitter={jitter}  train {acc_tr:.4}  test {acc_te:.4}"
    );
}
