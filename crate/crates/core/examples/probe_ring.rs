//! Scratch probe: how faithfully does the per-graph embedding lay out the
//! planted cluster ring? For each graph: cluster centroids, mean centroid
//! distance bucketed by quotient ring distance, top-2 PC mass of the
//! centroid cloud, and whether angular order around those PCs recovers the
//! planted ring order (up to rotation/reflection).

use geognn_core::embedding::{canonicalize_frame, embed_graph, EmbeddingConfig};
use geognn_core::seeding;
use geognn_core::synth::{gen_task_graph, TaskId};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task = TaskId::parse(args.get(1).map(|s| s.as_str()).unwrap_or("mdc")).unwrap();
    let n_graphs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let walks: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(20);
    let window: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(10);
    let step: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.025);

    let mut by_dist_sum = vec![0.0f64; 9];
    let mut by_dist_cnt = vec![0usize; 9];
    let mut pc2_sum = 0.0;
    let mut order_ok = 0usize;
    let mut ring_graphs = 0usize;

    for i in 0..n_graphs {
        let planted = gen_task_graph(task, seeding::derive(4400, "ringprobe", i as u64)).unwrap();
        let cfg = EmbeddingConfig {
            epochs,
            walks_per_node: walks,
            window,
            step_size: step,
            ..EmbeddingConfig::default()
        }
        .with_seed(seeding::derive(4401, "ringprobe-emb", i as u64));
        let mut e = embed_graph(&planted.graph, &cfg);
        canonicalize_frame(&mut e);
        let k = planted.clusters.len();
        let d = e.cols();

        // Centroids.
        let mut cent = vec![vec![0.0f64; d]; k];
        for (c, members) in planted.clusters.iter().enumerate() {
            for &v in members {
                for j in 0..d {
                    cent[c][j] += e.row(v)[j];
                }
            }
            for j in 0..d {
                cent[c][j] /= members.len() as f64;
            }
        }

        //

        // Quotient distance = ring distance when the quotient is a cycle;
        // fall back to chain distance otherwise.
        let ring = planted.closed_loop.unwrap_or(true);
        if !ring {
            continue;
        }
        ring_graphs += 1;
        for a in 0..k {
            for b in (a + 1)..k {
                let dd = {
                    let fwd = b - a;
                    fwd.min(k - fwd)
                };
                let dist: f64 = (0..d)
                    .map(|j| (cent[a][j] - cent[b][j]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                by_dist_sum[dd] += dist;
                by_dist_cnt[dd] += 1;
            }
        }

        // PCA of centroids: fraction of variance in the top 2 components,
        // via power iteration on the k×k Gram after centering.
        let mut mean = vec![0.0f64; d];
        for c in &cent {
            for j in 0..d {
                mean[j] += c[j] / k as f64;
            }
        }
        let x: Vec<Vec<f64>> = cent
            .iter()
            .map(|c| (0..d).map(|j| c[j] - mean[j]).collect())
            .collect();
        let mut cov = vec![vec![0.0f64; d]; d];
        for r in &x {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += r[a] * r[b];
                }
            }
        }
        let total: f64 = (0..d).map(|j| cov[j][j]).sum();
        // Top-2 eigenvalues by deflated power iteration.
        let mut mat = cov.clone();
        let mut evs = Vec::new();
        let mut vecs: Vec<Vec<f64>> = Vec::new();
        for _ in 0..2 {
            let mut v = vec![1.0f64; d];
            for it in 0..500 {
                let mut nv = vec![0.0f64; d];
                for a in 0..d {
                    for b in 0..d {
                        nv[a] += mat[a][b] * v[b];
                    }
                }
                let norm = nv.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                for a in 0..d {
                    nv[a] /= norm;
                }
                let diff: f64 = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
                v = nv;
                if diff < 1e-12 && it > 10 {
                    break;
                }
            }
            let mut mv = vec![0.0f64; d];
            for a in 0..d {
                for b in 0..d {
                    mv[a] += mat[a][b] * v[b];
                }
            }
            let lam: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
            evs.push(lam);
            for a in 0..d {
                for b in 0..d {
                    mat[a][b] -= lam * v[a] * v[b];
                }
            }
            vecs.push(v);
        }
        let frac = (evs[0] + evs[1]) / total.max(1e-300);
        pc2_sum += frac;

        // Angular order recovery in the top-2 plane.
        let mut ang: Vec<(f64, usize)> = (0..k)
            .map(|c| {
                let px: f64 = (0..d).map(|j| x[c][j] * vecs[0][j]).sum();
                let py: f64 = (0..d).map(|j| x[c][j] * vecs[1][j]).sum();
                (py.atan2(px), c)
            })
            .collect();
        ang.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let order: Vec<usize> = ang.iter().map(|&(_, c)| c).collect();
        // Ring order matches if `order` is a rotation of 0..k or its reverse.
        let pos: Vec<usize> = {
            let mut p = vec![0; k];
            for (idx, &c) in order.iter().enumerate() {
                p[c] = idx;
            }
            p
        };
        let mut good = true;
        for c in 0..k {
            let succ = (c + 1) % k;
            let dp = (pos[succ] + k - pos[c]) % k;
            if dp != 1 && dp != k - 1 {
                good = false;
                break;
            }
        }
        // Must be consistent direction throughout: recheck strictly.
        let dir = (pos[1] + k - pos[0]) % k;
        if good && (dir == 1 || dir == k - 1) {
            for c in 0..k {
                let succ = (c + 1) % k;
                if (pos[succ] + k - pos[c]) % k != dir {
                    good = false;
                    break;
                }
            }
        } else {
            good = false;
        }
        if good {
            order_ok += 1;
        }
        println!(
            "graph {i}: k={k} n={} pc2-mass {frac:.3} ring-order {}",
            planted.graph.n(),
            if good { "RECOVERED" } else { "scrambled" }
        );
    }

    println!("--- aggregate over {ring_graphs} ring graphs ---");
    for dd in 1..9 {
        if by_dist_cnt[dd] > 0 {
            println!(
                "ring distance {dd}: mean centroid distance {:.4} ({} pairs)",
                by_dist_sum[dd] / by_dist_cnt[dd] as f64,
                by_dist_cnt[dd]
            );
        }
    }
    if ring_graphs > 0 {
        println!(
            "top-2 PC mass {:.3}, ring order recovered {}/{}",
            pc2_sum / ring_graphs as f64,
            order_ok,
            ring_graphs
        );
    }
}
