//! Small k-means used to check that embedding geometry recovers planted
//! cluster structure.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seeding;

fn nearest(centers: &Tensor, points: &Tensor, row: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = points.row_dist2(row, centers, c);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.rows();
    let d = points.cols();

    // k-means++ seeding: first center uniform, the rest proportional to
    // squared distance from the chosen set.
    let mut centers = Tensor::zeros(k, d);
    centers
        .row_mut(0)
        .copy_from_slice(points.row(rng.gen_range(0..n)));
    let mut dist2 = vec![0.0f64; n];
    for c in 1..k {
        let mut total = 0.0;
        for i in 0..n {
            let mut best = f64::INFINITY;
            for prev in 0..c {
                best = best.min(points.row_dist2(i, &centers, prev));
            }
            dist2[i] = best;
            total += best;
        }
        let chosen = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(chosen));
    }

    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(&centers, points, i);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, p) in sums.row_mut(assign[i]).iter_mut().zip(points.row(i)) {
                *s += p;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Revive an empty cluster at the point farthest from its
                // current center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = points.row_dist2(a, &centers, assign[a]);
                        let db = points.row_dist2(b, &centers, assign[b]);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centers.row_mut(c).copy_from_slice(points.row(far));
                changed = true;
            } else {
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let objective = (0..n).map(|i| points.row_dist2(i, &centers, assign[i])).sum();
    (assign, objective)
}

/// Lloyd's algorithm with k-means++ seeding and `restarts` independent
/// starts; returns the assignment with the lowest within-cluster sum of
/// squared distances. Deterministic given the seed.
pub fn kmeans(points: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "cannot split {n} points into {k} clusters"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = seeding::rng(seed, "kmeans", r as u64);
        let (assign, obj) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((assign, obj));
        }
    }
    Ok(best.unwrap().0)
}

/// Fraction of points on which two k-way partitions agree, maximized over
/// all relabelings of `b` (cluster ids carry no meaning).
pub fn partition_agreement(a: &[usize], b: &[usize], k: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let matches = a.iter().zip(b).filter(|&(&x, &y)| x == p[y]).count();
        best = best.max(matches);
    });
    best as f64 / a.len() as f64
}

fn permute(v: &mut Vec<usize>, at: usize, visit: &mut impl FnMut(&[usize])) {
    if at == v.len() {
        visit(v);
        return;
    }
    for i in at..v.len() {
        v.swap(at, i);
        permute(v, at + 1, visit);
        v.swap(at, i);
    }
}
