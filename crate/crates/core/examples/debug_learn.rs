//! Scratch diagnostic: loss curve and train/test accuracy on one fold, with
//! embedding hyperparameter overrides and optional per-graph feature
//! standardization (center rows, unit mean norm).

use geognn_core::autodiff::Tensor;
use geognn_core::embedding::{embed_dataset, EmbeddingConfig};
use geognn_core::model::{ModelConfig, ModelVariant, PoolingMode};
use geognn_core::seeding;
use geognn_core::synth::{gen_dataset, TaskId};
use geognn_core::train::{evaluate, stratified_kfold, train_fold, PreparedDataset, TrainConfig};
use rand::Rng;

/// Center rows, rotate onto principal axes (descending variance), fix each
/// axis sign by third moment, and scale to unit RMS row norm.
fn canonicalize(e: &mut Tensor) {
    let (n, d) = (e.rows(), e.cols());
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
    // Covariance (upper triangle mirrored).
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
    // Cyclic Jacobi eigendecomposition: cov = V diag V^T.
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..30 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += cov[p * d + q] * cov[p * d + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = cov[p * d + q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let app = cov[p * d + p];
                let aqq = cov[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = cov[k * d + p];
                    let akq = cov[k * d + q];
                    cov[k * d + p] = c * akp - s * akq;
                    cov[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = cov[p * d + k];
                    let aqk = cov[q * d + k];
                    cov[p * d + k] = c * apk - s * aqk;
                    cov[q * d + k] = s * apk + c * aqk;
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
    // Order components by descending eigenvalue.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| cov[b * d + b].partial_cmp(&cov[a * d + a]).unwrap());
    // Project rows onto ordered components.
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
    // Sign fix by third moment.
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
    // Unit RMS row norm.
    let ms: f64 = proj.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let scale = ms.sqrt().max(1e-12);
    for (dst, p) in data.iter_mut().zip(&proj) {
        *dst = p / scale;
    }
}

fn random_rotation(e: &mut Tensor, seed: u64) {
    let mut rng = seeding::rng(seed, "rot", 0);
    let (n, d) = (e.rows(), e.cols());
    let data = e.data_mut();
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

/// In-plane nuisance for canonical frames: a uniform rotation of the two
/// leading axes (their eigenvalues are near-degenerate for ring-shaped
/// layouts, so the canonical choice there is arbitrary) plus an optional
/// reflection of the second axis (ring orientation).
fn inplane_rotation(e: &mut Tensor, seed: u64) {
    let mut rng = seeding::rng(seed, "inplane", 0);
    let (n, d) = (e.rows(), e.cols());
    let data = e.data_mut();
    let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (s, c) = th.sin_cos();
    let reflect = rng.gen::<bool>();
    for r in 0..n {
        let a = data[r * d];
        let b = data[r * d + 1];
        data[r * d] = c * a - s * b;
        data[r * d + 1] = s * a + c * b;
        if reflect {
            data[r * d + 1] = -data[r * d + 1];
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task = TaskId::parse(args.get(1).map(|s| s.as_str()).unwrap_or("hlld")).unwrap();
    let size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(60);
    let variant = match args.get(4).map(|s| s.as_str()) {
        Some("gnn") => ModelVariant::Gnn,
        _ => ModelVariant::GnnEsr,
    };
    let emb_epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(5);
    let window: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(4);
    let normalize: bool = args.get(7).map(|s| s == "norm").unwrap_or(false);
    let rotated_copies: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0);

    let ds = gen_dataset(task, size, 11).unwrap();
    let cfg = ModelConfig::new(variant, PoolingMode::None, ds.n_classes, ds.feature_dim());
    eprintln!(
        "preparing {size} graphs ({}) emb_epochs={emb_epochs} window={window} normalize={normalize}",
        variant.name()
    );
    let t0 = std::time::Instant::now();
    let data = if variant == ModelVariant::GnnEsr {
        let emb_cfg = EmbeddingConfig {
            epochs: emb_epochs,
            window,
            seed: seeding::derive(11, "prep-embed", 0),
            ..EmbeddingConfig::default()
        };
        let mut embeddings = embed_dataset(&ds, &emb_cfg);
        let mode = args.get(7).map(|s| s.as_str()).unwrap_or("raw");
        if mode == "canon" || mode == "canonaug" {
            for e in &mut embeddings {
                canonicalize(e);
            }
        } else if normalize {
            for e in &mut embeddings {
                let (n, d) = e.shape();
                let data = e.data_mut();
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        mean[j] += data[i * d + j] / n as f64;
                    }
                }
                let mut ms = 0.0;
                for i in 0..n {
                    for j in 0..d {
                        data[i * d + j] -= mean[j];
                        ms += data[i * d + j] * data[i * d + j];
                    }
                }
                let scale = (ms / n as f64).sqrt().max(1e-12);
                for v in data.iter_mut() {
                    *v /= scale;
                }
            }
        }
        PreparedDataset {
            ds,
            embeddings: Some(embeddings),
            plans: None,
        }
    } else {
        PreparedDataset::prepare(ds, &cfg, 11).unwrap()
    };
    eprintln!("prepare took {:.1}s", t0.elapsed().as_secs_f64());

    let tc = TrainConfig {
        epochs,
        decay_epoch: epochs / 2,
        folds: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let folds = stratified_kfold(&data.ds, 3, 11).unwrap();
    let test_idx = &folds[0];
    let train_idx: Vec<usize> = (0..data.ds.len())
        .filter(|i| !test_idx.contains(i))
        .collect();

    // Frame augmentation by expansion: append rotated copies of every
    // training graph so the net sees each geometry in many frames.
    // "canonaug" rotates only within the canonical frame's leading plane;
    // any other mode applies full random rotations.
    let inplane_only = args.get(7).map(|s| s == "canonaug").unwrap_or(false);
    let (data, train_idx) = if rotated_copies > 0 && variant == ModelVariant::GnnEsr {
        let mut graphs = data.ds.graphs.clone();
        let mut labels = data.ds.class_labels.clone();
        let mut embeddings = data.embeddings.clone().unwrap();
        let mut train2 = train_idx.clone();
        for &i in &train_idx {
            for copy in 0..rotated_copies {
                let mut e = embeddings[i].clone();
                if inplane_only {
                    inplane_rotation(&mut e, seeding::derive(99, "aug", (i * 1000 + copy) as u64));
                } else {
                    random_rotation(
                        &mut e,
                        seeding::derive(99, "aug", (i * 1000 + copy) as u64),
                    );
                }
                train2.push(graphs.len());
                graphs.push(data.ds.graphs[i].clone());
                labels.push(data.ds.class_labels[i]);
                embeddings.push(e);
            }
        }
        let ds2 = geognn_core::graph::LabeledGraphDataset::new(graphs, labels).unwrap();
        (
            PreparedDataset {
                ds: ds2,
                embeddings: Some(embeddings),
                plans: None,
            },
            train2,
        )
    } else {
        (data, train_idx)
    };

    let t0 = std::time::Instant::now();
    let outcome = train_fold(&cfg, &data, &train_idx, &tc, 0).unwrap();
    eprintln!("train took {:.1}s", t0.elapsed().as_secs_f64());
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        if e % 10 == 0 || e + 1 == outcome.epoch_losses.len() {
            eprintln!("epoch {e:3}  loss {l:.4}");
        }
    }
    let train_acc = evaluate(&outcome.model, &data, &train_idx).unwrap();
    let test_acc = evaluate(&outcome.model, &data, test_idx).unwrap();
    eprintln!("train accuracy {train_acc:.4}  test accuracy {test_acc:.4}");
}
