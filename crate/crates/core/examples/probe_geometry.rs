//! Scratch diagnostic: measure how well the learned node coordinates separate
//! the planted clusters of a cluster-graph task, and whether the cluster
//! centroid layout reflects the quotient topology (chain filament vs ring).

use geognn_core::embedding::{embed_graph, EmbeddingConfig};
use geognn_core::seeding;
use geognn_core::synth::{gen_task_graph_for_class, TaskId};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_graphs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let walks: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let window: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);
    let negatives: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(5);
    let step: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.025);

    let mut ratios = (0.0, 0.0);
    for idx in 0..n_graphs {
        let class = idx % 2;
        let p =
            gen_task_graph_for_class(TaskId::Hlld, class, seeding::derive(7, "synth", idx as u64))
                .unwrap();
        let n = p.graph.n();
        let cfg = EmbeddingConfig {
            seed: seeding::derive(7, "embed", idx as u64),
            epochs,
            walks_per_node: walks,
            window,
            negatives,
            step_size: step,
            ..EmbeddingConfig::default()
        };
        let e = embed_graph(&p.graph, &cfg);
        let d = e.cols();
        let row = |i: usize| &e.data()[i * d..(i + 1) * d];

        let c = p.clusters.len();
        // Centroids.
        let mut cent = vec![vec![0.0; d]; c];
        for (k, members) in p.clusters.iter().enumerate() {
            for &v in members {
                for j in 0..d {
                    cent[k][j] += row(v)[j] / members.len() as f64;
                }
            }
        }
        // Mean intra-cluster distance.
        let mut intra = 0.0;
        let mut n_intra = 0usize;
        for members in &p.clusters {
            for (a, &u) in members.iter().enumerate() {
                for &v in &members[a + 1..] {
                    intra += dist(row(u), row(v));
                    n_intra += 1;
                }
            }
        }
        intra /= n_intra as f64;
        // Centroid distances: quotient-adjacent vs the rest.
        let closed = p.closed_loop.unwrap();
        let mut adj = 0.0;
        let mut n_adj = 0usize;
        let mut non = 0.0;
        let mut n_non = 0usize;
        for a in 0..c {
            for b in a + 1..c {
                let is_adj = b == a + 1 || (closed && a == 0 && b == c - 1);
                let dd = dist(&cent[a], &cent[b]);
                if is_adj {
                    adj += dd;
                    n_adj += 1;
                } else {
                    non += dd;
                    n_non += 1;
                }
            }
        }
        adj /= n_adj as f64;
        non /= n_non.max(1) as f64;
        let norm =
            (0..n).map(|i| dist(row(i), &vec![0.0; d])).sum::<f64>() / n as f64;
        println!(
            "graph {idx}: class={} clusters={c} n={n}  mean|e|={norm:.3}  intra={intra:.3}  centroid adj={adj:.3} nonadj={non:.3}",
            if closed { "loop" } else { "chain" },
        );
        ratios.0 += intra / adj;
        if n_non > 0 {
            ratios.1 += non / adj;
        }
    }
    println!(
        "mean intra/adj = {:.3}   mean nonadj/adj = {:.3}   (epochs={epochs} walks={walks} window={window} neg={negatives} step={step})",
        ratios.0 / n_graphs as f64,
        ratios.1 / n_graphs as f64,
    );
}
