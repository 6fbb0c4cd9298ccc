//! Reverse-mode differentiation over a recorded op tape.
//!
//! The tape holds every intermediate tensor of one forward pass in
//! topological order. `backward` walks it once in reverse, accumulating
//! gradients additively at fan-out, and returns gradients for every
//! registered parameter. The adjacency operand of graph convolutions is a
//! constant and never receives a gradient.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::params::{GradientMap, ParamId, ParamStore};
use crate::autodiff::tensor::{gemm, SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Running statistics for one batch-normalization layer. Owned by the model
/// and updated in place during train-mode forwards.
#[derive(Debug, Clone)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnRunning {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    SpMul {
        m: Rc<SparseMatrix>,
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    /// Broadcast a 1×d row over every row of `a`.
    AddRow {
        a: Var,
        row: Var,
    },
    Scale {
        a: Var,
        k: f64,
    },
    Relu {
        a: Var,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    GatherRows {
        a: Var,
        idx: Rc<Vec<usize>>,
    },
    /// Per-segment, per-column max over rows. `argmax` stores the winning
    /// row per (segment, column); ties go to the first maximal row.
    SegmentMax {
        a: Var,
        argmax: Vec<usize>,
    },
    RowSoftmax {
        a: Var,
    },
    Dropout {
        a: Var,
        mask: Rc<Vec<f64>>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    SumAll {
        a: Var,
    },
    /// Mean softmax-cross-entropy against integer targets; `probs` caches
    /// the row-softmax of the logits.
    CrossEntropy {
        logits: Var,
        targets: Rc<Vec<usize>>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded forward computation. One tape per forward/backward cycle.
pub struct Tape {
    nodes: Vec<Node>,
    train: bool,
    strict: bool,
    rng: ChaCha8Rng,
}

impl Tape {
    /// Train-mode tape. The seed derandomizes dropout masks.
    pub fn train(seed: u64) -> Self {
        Self::with_mode(true, seed)
    }

    /// Eval-mode tape: dropout is the identity, batch-norm uses running
    /// statistics.
    pub fn eval() -> Self {
        Self::with_mode(false, 0)
    }

    pub fn with_mode(train: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            train,
            strict: cfg!(debug_assertions),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Toggle the non-finite output guard (defaults to on in debug builds).
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, context: &'static str) -> Result<Var> {
        if self.strict && !value.is_finite() {
            return Err(Error::NonFinite { context });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a constant input. Constants accept no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf { param: None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a parameter leaf; its gradient is collected by `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Leaf { param: Some(id) },
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `a * bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = Tensor::matmul(self.value(a), ta, self.value(b), tb)?;
        self.push(value, Op::MatMul { a, b, ta, tb }, "matmul")
    }

    /// Fixed sparse matrix times a recorded dense tensor.
    pub fn sparse_mul(&mut self, m: Rc<SparseMatrix>, x: Var) -> Result<Var> {
        if m.cols() != self.value(x).rows() {
            return Err(Error::ShapeMismatch {
                context: "sparse_mul",
                expected: format!("{} rows", m.cols()),
                got: format!("{}", self.value(x).rows()),
            });
        }
        let value = m.mul_dense(self.value(x));
        self.push(value, Op::SpMul { m, x }, "sparse_mul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                context: "add",
                expected: format!("{:?}", va.shape()),
                got: format!("{:?}", vb.shape()),
            });
        }
        let mut value = va.clone();
        value.axpy(1.0, vb);
        self.push(value, Op::Add { a, b }, "add")
    }

    /// Add a 1×d row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::ShapeMismatch {
                context: "add_row",
                expected: format!("1x{}", va.cols()),
                got: format!("{:?}", vr.shape()),
            });
        }
        let mut value = va.clone();
        for i in 0..value.rows() {
            for (o, r) in value.row_mut(i).iter_mut().zip(vr.row(0)) {
                *o += r;
            }
        }
        self.push(value, Op::AddRow { a, row }, "add_row")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).map(|v| k * v);
        self.push(value, Op::Scale { a, k }, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu { a }, "relu")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat_cols needs at least one input");
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::ShapeMismatch {
                    context: "concat_cols",
                    expected: format!("{rows} rows"),
                    got: format!("{}", v.rows()),
                });
            }
            cols += v.cols();
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p).clone();
            for i in 0..rows {
                value.row_mut(i)[off..off + v.cols()].copy_from_slice(v.row(i));
            }
            off += v.cols();
        }
        self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            "concat_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat_rows needs at least one input");
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::ShapeMismatch {
                    context: "concat_rows",
                    expected: format!("{cols} cols"),
                    got: format!("{}", v.cols()),
                });
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            "concat_rows",
        )
    }

    /// Select rows of `a` in the order given by `idx`.
    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let v = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * v.cols());
        for &i in idx.iter() {
            if i >= v.rows() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    n: v.rows(),
                });
            }
            data.extend_from_slice(v.row(i));
        }
        let value = Tensor::from_vec(idx.len(), v.cols(), data);
        self.push(value, Op::GatherRows { a, idx }, "gather_rows")
    }

    /// Column-wise max over the rows of each segment. `seg_of_row[i]` names
    /// the segment of row `i`; every segment in `0..n_seg` must own at least
    /// one row.
    pub fn segment_max(&mut self, a: Var, seg_of_row: &[usize], n_seg: usize) -> Result<Var> {
        let v = self.value(a);
        if seg_of_row.len() != v.rows() {
            return Err(Error::ShapeMismatch {
                context: "segment_max",
                expected: format!("{} membership entries", v.rows()),
                got: format!("{}", seg_of_row.len()),
            });
        }
        let d = v.cols();
        let mut value = Tensor::filled(n_seg, d, f64::NEG_INFINITY);
        let mut argmax = vec![usize::MAX; n_seg * d];
        for i in 0..v.rows() {
            let s = seg_of_row[i];
            assert!(s < n_seg, "segment id out of range");
            let src = v.row(i);
            let dst = value.row_mut(s);
            for j in 0..d {
                if src[j] > dst[j] {
                    dst[j] = src[j];
                    argmax[s * d + j] = i;
                }
            }
        }
        assert!(
            argmax.iter().all(|&r| r != usize::MAX),
            "segment_max: empty segment"
        );
        self.push(value, Op::SegmentMax { a, argmax }, "segment_max")
    }

    /// Softmax independently over each row.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mut value = v.clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        self.push(value, Op::RowSoftmax { a }, "row_softmax")
    }

    /// Inverted dropout with drop probability `p`. Identity in eval mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        assert!((0.0..1.0).contains(&p), "drop probability must be in [0,1)");
        if !self.train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let len = self.value(a).len();
        let mask: Vec<f64> = (0..len)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mut value = self.value(a).clone();
        for (o, m) in value.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(
            value,
            Op::Dropout {
                a,
                mask: Rc::new(mask),
            },
            "dropout",
        )
    }

    /// Per-column batch normalization with learned scale and shift. Train
    /// mode normalizes with batch statistics and folds them into `running`;
    /// eval mode reads `running` and leaves it untouched.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunning,
    ) -> Result<Var> {
        let v = self.value(x);
        let (n, d) = v.shape();
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            let pv = self.value(p);
            if pv.shape() != (1, d) {
                return Err(Error::ShapeMismatch {
                    context: "batch_norm",
                    expected: format!("1x{d} {name}"),
                    got: format!("{:?}", pv.shape()),
                });
            }
        }
        assert_eq!(running.mean.len(), d, "batch_norm running-stat width");
        let (mean, var) = if self.train {
            assert!(n > 0, "batch_norm on an empty batch");
            let mut mean = vec![0.0; d];
            let mut var = vec![0.0; d];
            for i in 0..n {
                for (m, x) in mean.iter_mut().zip(v.row(i)) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            for i in 0..n {
                for j in 0..d {
                    let c = v.get(i, j) - mean[j];
                    var[j] += c * c;
                }
            }
            for s in &mut var {
                *s /= n as f64;
            }
            let mom = running.momentum;
            for j in 0..d {
                running.mean[j] = mom * running.mean[j] + (1.0 - mom) * mean[j];
                running.var[j] = mom * running.var[j] + (1.0 - mom) * var[j];
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|&s| 1.0 / (s + running.eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                xhat.set(i, j, (v.get(i, j) - mean[j]) * inv_std[j]);
            }
        }
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        let mut value = Tensor::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                value.set(i, j, g[j] * xhat.get(i, j) + b[j]);
            }
        }
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "batch_norm",
        )
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar_value(s), Op::SumAll { a }, "sum_all")
    }

    /// Mean softmax-cross-entropy of `logits` (B×C) against integer class
    /// targets.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let (b, c) = v.shape();
        if targets.len() != b {
            return Err(Error::ShapeMismatch {
                context: "cross_entropy",
                expected: format!("{b} targets"),
                got: format!("{}", targets.len()),
            });
        }
        let mut probs = v.clone();
        for i in 0..b {
            softmax_in_place(probs.row_mut(i));
        }
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < c, "target class out of range");
            loss -= probs.get(i, t).max(f64::MIN_POSITIVE).ln();
        }
        loss /= b as f64;
        self.push(
            Tensor::scalar_value(loss),
            Op::CrossEntropy {
                logits,
                targets: Rc::new(targets.to_vec()),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Reverse pass from the scalar `loss`. Returns one gradient tensor per
    /// registered parameter; parameters that do not reach the loss get
    /// zeros.
    pub fn backward(&self, loss: Var, params: &ParamStore) -> Result<GradientMap> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                context: "backward loss",
                expected: "1x1".into(),
                got: format!("{:?}", lv.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar_value(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf { .. } => {
                    grads[id] = Some(g); // keep for parameter collection
                    continue;
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = ensure(&mut grads, *a, va.shape());
                    match (ta, tb) {
                        (false, false) => gemm(1.0, &g, false, vb, true, 1.0, ga),
                        (false, true) => gemm(1.0, &g, false, vb, false, 1.0, ga),
                        (true, false) => gemm(1.0, vb, false, &g, true, 1.0, ga),
                        (true, true) => gemm(1.0, vb, true, &g, true, 1.0, ga),
                    }
                    let gb = ensure(&mut grads, *b, vb.shape());
                    match (ta, tb) {
                        (false, false) => gemm(1.0, va, true, &g, false, 1.0, gb),
                        (false, true) => gemm(1.0, &g, true, va, false, 1.0, gb),
                        (true, false) => gemm(1.0, va, false, &g, false, 1.0, gb),
                        (true, true) => gemm(1.0, &g, true, va, true, 1.0, gb),
                    }
                }
                Op::SpMul { m, x } => {
                    let gx = m.transpose_mul_dense(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add { a, b } => {
                    acc_ref(&mut grads, *a, &g, self);
                    acc_ref(&mut grads, *b, &g, self);
                }
                Op::AddRow { a, row } => {
                    acc_ref(&mut grads, *a, &g, self);
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                }
                Op::Scale { a, k } => {
                    let ga = ensure(&mut grads, *a, g.shape());
                    ga.axpy(*k, &g);
                }
                Op::Relu { a } => {
                    let va = self.value(*a);
                    let ga = ensure(&mut grads, *a, va.shape());
                    for ((o, &gv), &xv) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.value(p).shape();
                        let gp = ensure(&mut grads, p, shape);
                        for i in 0..shape.0 {
                            for (o, v) in gp.row_mut(i).iter_mut().zip(&g.row(i)[off..off + shape.1])
                            {
                                *o += v;
                            }
                        }
                        off += shape.1;
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.value(p).shape();
                        let gp = ensure(&mut grads, p, shape);
                        for i in 0..shape.0 {
                            for (o, v) in gp.row_mut(i).iter_mut().zip(g.row(off + i)) {
                                *o += v;
                            }
                        }
                        off += shape.0;
                    }
                }
                Op::GatherRows { a, idx } => {
                    let shape = self.value(*a).shape();
                    let ga = ensure(&mut grads, *a, shape);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::SegmentMax { a, argmax } => {
                    let shape = self.value(*a).shape();
                    let d = shape.1;
                    let ga = ensure(&mut grads, *a, shape);
                    for s in 0..g.rows() {
                        for j in 0..d {
                            let winner = argmax[s * d + j];
                            *ga.row_mut(winner).get_mut(j).unwrap() += g.get(s, j);
                        }
                    }
                }
                Op::RowSoftmax { a } => {
                    let y = &self.nodes[id].value;
                    let shape = y.shape();
                    let ga = ensure(&mut grads, *a, shape);
                    for i in 0..shape.0 {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for (o, (y, gv)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o += y * (gv - dot);
                        }
                    }
                }
                Op::Dropout { a, mask } => {
                    let ga = ensure(&mut grads, *a, g.shape());
                    for ((o, gv), m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask.iter()) {
                        *o += gv * m;
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, d) = xhat.shape();
                    let gvec = self.value(*gamma).row(0).to_vec();
                    // Scale/shift gradients.
                    let mut dgamma = Tensor::zeros(1, d);
                    let mut dbeta = Tensor::zeros(1, d);
                    for i in 0..n {
                        for j in 0..d {
                            let gv = g.get(i, j);
                            dgamma.row_mut(0)[j] += gv * xhat.get(i, j);
                            dbeta.row_mut(0)[j] += gv;
                        }
                    }
                    // Input gradient: in train mode the batch statistics
                    // depend on x, so the mean/variance paths contribute.
                    let gx_shape = self.value(*x).shape();
                    let gx = ensure(&mut grads, *x, gx_shape);
                    if self.train {
                        let mut sum_dxhat = vec![0.0; d];
                        let mut sum_dxhat_xhat = vec![0.0; d];
                        for i in 0..n {
                            for j in 0..d {
                                let dxh = g.get(i, j) * gvec[j];
                                sum_dxhat[j] += dxh;
                                sum_dxhat_xhat[j] += dxh * xhat.get(i, j);
                            }
                        }
                        let nf = n as f64;
                        for i in 0..n {
                            for j in 0..d {
                                let dxh = g.get(i, j) * gvec[j];
                                let v = (inv_std[j] / nf)
                                    * (nf * dxh
                                        - sum_dxhat[j]
                                        - xhat.get(i, j) * sum_dxhat_xhat[j]);
                                *gx.row_mut(i).get_mut(j).unwrap() += v;
                            }
                        }
                    } else {
                        for i in 0..n {
                            for j in 0..d {
                                *gx.row_mut(i).get_mut(j).unwrap() +=
                                    g.get(i, j) * gvec[j] * inv_std[j];
                            }
                        }
                    }
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::SumAll { a } => {
                    let gs = g.scalar();
                    let shape = self.value(*a).shape();
                    let ga = ensure(&mut grads, *a, shape);
                    for o in ga.data_mut() {
                        *o += gs;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let gs = g.scalar();
                    let (b, c) = probs.shape();
                    let gl = ensure(&mut grads, *logits, (b, c));
                    let scale = gs / b as f64;
                    for i in 0..b {
                        for j in 0..c {
                            let onehot = if targets[i] == j { 1.0 } else { 0.0 };
                            *gl.row_mut(i).get_mut(j).unwrap() +=
                                scale * (probs.get(i, j) - onehot);
                        }
                    }
                }
            }
        }

        // Collect parameter gradients; a parameter may appear as several
        // leaves, in which case contributions add.
        let mut out: Vec<Tensor> = params
            .ids()
            .map(|id| {
                let t = params.get(id);
                Tensor::zeros(t.rows(), t.cols())
            })
            .collect();
        for (node, grad) in self.nodes.iter().zip(&grads) {
            if let Op::Leaf { param: Some(pid) } = node.op {
                if let Some(g) = grad {
                    out[pid.index()].axpy(1.0, g);
                }
            }
        }
        Ok(GradientMap::new(out))
    }
}

fn softmax_in_place(row: &mut [f64]) {
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

fn ensure(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot => *slot = Some(g),
    }
}

fn acc_ref(grads: &mut [Option<Tensor>], v: Var, g: &Tensor, tape: &Tape) {
    let shape = tape.value(v).shape();
    ensure(grads, v, shape).axpy(1.0, g);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::eval();
        let x = tape.constant(Tensor::from_vec(1, 2, vec![-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn row_softmax_rows_sum_to_one() {
        let mut tape = Tape::eval();
        let x = tape.constant(Tensor::from_rows(&[&[0.3, -1.2, 4.0], &[100.0, 100.0, 100.0]]));
        let y = tape.row_softmax(x).unwrap();
        for i in 0..2 {
            let s: f64 = tape.value(y).row(i).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
        // Equal logits spread mass uniformly.
        assert_abs_diff_eq!(tape.value(y).get(1, 0), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Tape::eval();
        let x = tape.constant(Tensor::filled(4, 4, 1.0));
        let y = tape.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_masks_and_rescales() {
        let mut tape = Tape::train(3);
        let x = tape.constant(Tensor::filled(20, 20, 1.0));
        let y = tape.dropout(x, 0.5).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!(kept > 120 && kept < 280, "kept {kept} of 400");
    }

    #[test]
    fn dropout_is_derandomized_by_tape_seed() {
        let run = |seed| {
            let mut tape = Tape::train(seed);
            let x = tape.constant(Tensor::filled(8, 8, 1.0));
            let y = tape.dropout(x, 0.5).unwrap();
            tape.value(y).data().to_vec()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn segment_max_takes_per_segment_columnwise_max() {
        let mut tape = Tape::eval();
        let x = tape.constant(Tensor::from_rows(&[&[1.0, 5.0], &[3.0, 2.0], &[0.0, 9.0]]));
        let y = tape.segment_max(x, &[0, 0, 1], 2).unwrap();
        assert_eq!(tape.value(y).row(0), &[3.0, 5.0]);
        assert_eq!(tape.value(y).row(1), &[0.0, 9.0]);
    }

    #[test]
    fn sum_all_gradient_is_ones() {
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let mut tape = Tape::eval();
        let wv = tape.param(&store, w);
        let loss = tape.sum_all(wv).unwrap();
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(w).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.register("used", Tensor::scalar_value(2.0));
        let unused = store.register("unused", Tensor::scalar_value(5.0));
        let mut tape = Tape::eval();
        let uv = tape.param(&store, used);
        let loss = tape.sum_all(uv).unwrap();
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(used).data(), &[1.0]);
        assert_eq!(grads.get(unused).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let store = ParamStore::new();
        let mut tape = Tape::eval();
        let x = tape.constant(Tensor::zeros(2, 2));
        assert!(tape.backward(x, &store).is_err());
    }

    #[test]
    fn strict_mode_rejects_non_finite() {
        let mut tape = Tape::eval();
        tape.set_strict(true);
        let x = tape.constant(Tensor::from_vec(1, 2, vec![1e308, 1e308]));
        let doubled = tape.add(x, x);
        assert!(matches!(doubled, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn cross_entropy_is_non_negative_and_matches_uniform() {
        let mut tape = Tape::eval();
        let logits = tape.constant(Tensor::zeros(3, 4));
        let loss = tape.cross_entropy_mean(logits, &[0, 1, 3]).unwrap();
        assert_abs_diff_eq!(tape.value(loss).scalar(), (4.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn batch_norm_eval_is_deterministic_and_uses_running_stats() {
        let mut store = ParamStore::new();
        let gamma = store.register("g", Tensor::filled(1, 2, 1.0));
        let beta = store.register("b", Tensor::zeros(1, 2));
        let mut running = BnRunning::new(2);
        running.mean = vec![1.0, -1.0];
        running.var = vec![4.0, 0.25];
        let x = Tensor::from_rows(&[&[3.0, 0.0], &[1.0, -1.0]]);
        let run = |running: &mut BnRunning| {
            let mut tape = Tape::eval();
            let xv = tape.constant(x.clone());
            let gv = tape.param(&store, gamma);
            let bv = tape.param(&store, beta);
            let y = tape.batch_norm(xv, gv, bv, running).unwrap();
            tape.value(y).data().to_vec()
        };
        let first = run(&mut running);
        let second = run(&mut running);
        assert_eq!(first, second);
        // (3-1)/sqrt(4+eps) ~ 1.0
        assert_abs_diff_eq!(first[0], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn batch_norm_train_updates_running_stats() {
        let mut store = ParamStore::new();
        let gamma = store.register("g", Tensor::filled(1, 1, 1.0));
        let beta = store.register("b", Tensor::zeros(1, 1));
        let mut running = BnRunning::new(1);
        let mut tape = Tape::train(0);
        let xv = tape.constant(Tensor::from_vec(4, 1, vec![2.0, 2.0, 2.0, 2.0]));
        let gv = tape.param(&store, gamma);
        let bv = tape.param(&store, beta);
        tape.batch_norm(xv, gv, bv, &mut running).unwrap();
        // Batch mean 2, var 0; momentum 0.9 folds 10% in.
        assert_abs_diff_eq!(running.mean[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(running.var[0], 0.9, epsilon = 1e-12);
    }
}
