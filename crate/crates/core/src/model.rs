//! Graph classifier assembly: spatial convolution stacks with optional
//! embedding-augmented inputs and optional attention-based down-sampling,
//! batched block-diagonally and read out by per-graph max pooling into a
//! fully connected classifier.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{BnRunning, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{node_features, Graph};
use crate::pooling::{PoolingConfig, PoolingPlan};
use crate::seeding;

/// Whether node inputs are label features alone or labels concatenated
/// with per-graph embedding coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    Gnn,
    GnnEsr,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Gnn => "gnn",
            ModelVariant::GnnEsr => "gnn-esr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gnn" => Ok(ModelVariant::Gnn),
            "gnn-esr" | "gnn_esr" | "gnnesr" => Ok(ModelVariant::GnnEsr),
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingMode {
    None,
    Spatial,
}

impl PoolingMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolingMode::None => "none",
            PoolingMode::Spatial => "spatial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(PoolingMode::None),
            "spatial" => Ok(PoolingMode::Spatial),
            other => Err(Error::InvalidConfig(format!("unknown pooling '{other}'"))),
        }
    }
}

impl std::fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full architecture description. `k1` convolution layers read the input,
/// `k2` more follow before the readout; when down-sampling is enabled `k3`
/// convolution layers run on the coarse graph, and `k4` readout/classifier
/// stages finish the network (only one is supported).
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub pooling: PoolingMode,
    pub conv_width: usize,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub k4: usize,
    /// Premultiply the adjacency by inverse degrees (zero-degree rows keep
    /// an empty neighborhood either way).
    pub normalized_conv: bool,
    pub classifier_hidden: Vec<usize>,
    pub dropout: f64,
    pub classes: usize,
    /// Width of the label-feature block (alphabet size, or 1 for unlabeled
    /// graphs).
    pub feature_dim: usize,
    /// Width of the embedding block appended to the features for the
    /// embedding-augmented variant.
    pub embedding_dim: usize,
    pub pool: PoolingConfig,
}

impl ModelConfig {
    pub fn new(
        variant: ModelVariant,
        pooling: PoolingMode,
        classes: usize,
        feature_dim: usize,
    ) -> Self {
        Self {
            variant,
            pooling,
            conv_width: 64,
            k1: 1,
            k2: 2,
            k3: 2,
            k4: 1,
            normalized_conv: false,
            classifier_hidden: vec![128, 64],
            dropout: 0.5,
            classes,
            feature_dim,
            embedding_dim: 12,
            pool: PoolingConfig::default(),
        }
    }

    pub fn uses_embedding(&self) -> bool {
        self.variant == ModelVariant::GnnEsr
    }

    pub fn uses_pooling(&self) -> bool {
        self.pooling == PoolingMode::Spatial
    }

    /// Node input width: label features plus, for the embedding-augmented
    /// variant, the embedding coordinates.
    pub fn input_dim(&self) -> usize {
        self.feature_dim
            + if self.uses_embedding() {
                self.embedding_dim
            } else {
                0
            }
    }

    /// Width of the per-graph readout before down-sampling (all
    /// convolution outputs concatenated).
    pub fn readout_width(&self) -> usize {
        (self.k1 + self.k2) * self.conv_width
    }

    /// Width of the coarse-graph readout.
    pub fn coarse_readout_width(&self) -> usize {
        self.k3 * self.conv_width
    }

    /// Width of the representation entering the classifier.
    pub fn representation_width(&self) -> usize {
        self.readout_width()
            + if self.uses_pooling() {
                self.coarse_readout_width()
            } else {
                0
            }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_width < 1 {
            return Err(Error::InvalidConfig("conv_width must be >= 1".into()));
        }
        if self.k1 < 1 {
            return Err(Error::InvalidConfig(
                "at least one input convolution layer is required".into(),
            ));
        }
        if self.k4 != 1 {
            return Err(Error::InvalidConfig(
                "only a single readout/classifier stage is supported".into(),
            ));
        }
        if self.uses_pooling() && self.k3 < 1 {
            return Err(Error::InvalidConfig(
                "down-sampling requires at least one coarse convolution layer".into(),
            ));
        }
        if self.classifier_hidden.iter().any(|&w| w < 1) {
            return Err(Error::InvalidConfig(
                "classifier widths must be >= 1".into(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        if self.feature_dim < 1 {
            return Err(Error::InvalidConfig("feature_dim must be >= 1".into()));
        }
        if self.uses_embedding() && self.embedding_dim < 1 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(
                "dropout must lie in [0, 1)".into(),
            ));
        }
        self.pool.validate()
    }

    /// Key-value rendering recorded in run directories and reports.
    pub fn describe(&self) -> String {
        format!(
            "model = {}\npooling = {}\nconv_width = {}\nk1 = {}\nk2 = {}\nk3 = {}\nk4 = {}\n\
             normalized_conv = {}\nclassifier_hidden = {}\ndropout = {}\nclasses = {}\n\
             feature_dim = {}\nembedding_dim = {}\nlambda = {}\npool_radius = {}\npool_norm = {}\n",
            self.variant,
            self.pooling,
            self.conv_width,
            self.k1,
            self.k2,
            self.k3,
            self.k4,
            self.normalized_conv,
            self.classifier_hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.dropout,
            self.classes,
            self.feature_dim,
            self.embedding_dim,
            self.pool.lambda,
            self.pool.radius,
            self.pool.p,
        )
    }
}

/// One spatial convolution: aggregate transformed neighbor features and add
/// a transformed self term, both rectified, then batch-normalize.
///
/// The neighbor aggregation uses whatever weights the sparse adjacency was
/// materialized with (unweighted or inverse-degree).
pub fn spatial_conv(
    tape: &mut Tape,
    adjacency: &Rc<SparseMatrix>,
    x: Var,
    phi1: Var,
    phi2: Var,
    gamma: Var,
    beta: Var,
    running: &mut BnRunning,
) -> Result<Var> {
    let t1 = tape.matmul(x, phi1)?;
    let t1 = tape.relu(t1)?;
    let t1 = tape.sparse_mul(Rc::clone(adjacency), t1)?;
    let t2 = tape.matmul(x, phi2)?;
    let t2 = tape.relu(t2)?;
    let sum = tape.add(t1, t2)?;
    tape.batch_norm(sum, gamma, beta, running)
}

#[derive(Debug, Clone)]
struct ConvLayer {
    phi1: ParamId,
    phi2: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct FcLayer {
    w: ParamId,
    b: ParamId,
    norm: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
struct Layers {
    conv_pre: Vec<ConvLayer>,
    conv_post: Vec<ConvLayer>,
    fc: Vec<FcLayer>,
}

/// Running batch-norm statistics for every normalized layer, kept outside
/// the parameter store because they are updated by forward passes rather
/// than by the optimizer.
#[derive(Debug, Clone)]
pub struct BnBank {
    conv_pre: Vec<BnRunning>,
    conv_post: Vec<BnRunning>,
    fc: Vec<BnRunning>,
}

/// A graph classifier: parameters, layer wiring, and batch-norm state.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    layers: Layers,
    bn: BnBank,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        *v = rng.gen_range(-limit..limit);
    }
    t
}

fn register_conv(
    params: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    d_in: usize,
    d_out: usize,
) -> ConvLayer {
    ConvLayer {
        phi1: params.register(format!("{name}.phi1"), glorot(rng, d_in, d_out)),
        phi2: params.register(format!("{name}.phi2"), glorot(rng, d_in, d_out)),
        gamma: params.register(format!("{name}.gamma"), Tensor::filled(1, d_out, 1.0)),
        beta: params.register(format!("{name}.beta"), Tensor::zeros(1, d_out)),
    }
}

impl Model {
    /// Allocate and initialize every layer of the configured architecture.
    pub fn assemble(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeding::rng(seed, "model", 0);
        let mut params = ParamStore::new();
        let w = cfg.conv_width;

        let mut conv_pre = Vec::new();
        let mut d_in = cfg.input_dim();
        for i in 0..cfg.k1 + cfg.k2 {
            conv_pre.push(register_conv(
                &mut params,
                &mut rng,
                &format!("conv_pre.{i}"),
                d_in,
                w,
            ));
            d_in = w;
        }

        let mut conv_post = Vec::new();
        if cfg.uses_pooling() {
            let mut d_in = w;
            for i in 0..cfg.k3 {
                conv_post.push(register_conv(
                    &mut params,
                    &mut rng,
                    &format!("conv_post.{i}"),
                    d_in,
                    w,
                ));
                d_in = w;
            }
        }

        let mut fc = Vec::new();
        let mut d = cfg.representation_width();
        for (i, &hidden) in cfg.classifier_hidden.iter().enumerate() {
            fc.push(FcLayer {
                w: params.register(format!("fc.{i}.w"), glorot(&mut rng, d, hidden)),
                b: params.register(format!("fc.{i}.b"), Tensor::zeros(1, hidden)),
                norm: Some((
                    params.register(format!("fc.{i}.gamma"), Tensor::filled(1, hidden, 1.0)),
                    params.register(format!("fc.{i}.beta"), Tensor::zeros(1, hidden)),
                )),
            });
            d = hidden;
        }
        let out_idx = cfg.classifier_hidden.len();
        fc.push(FcLayer {
            w: params.register(format!("fc.{out_idx}.w"), glorot(&mut rng, d, cfg.classes)),
            b: params.register(format!("fc.{out_idx}.b"), Tensor::zeros(1, cfg.classes)),
            norm: None,
        });

        let bn = BnBank {
            conv_pre: vec![BnRunning::new(w); conv_pre.len()],
            conv_post: vec![BnRunning::new(w); conv_post.len()],
            fc: cfg
                .classifier_hidden
                .iter()
                .map(|&h| BnRunning::new(h))
                .collect(),
        };

        Ok(Self {
            cfg: cfg.clone(),
            params,
            layers: Layers {
                conv_pre,
                conv_post,
                fc,
            },
            bn,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bn(&self) -> &BnBank {
        &self.bn
    }

    pub fn set_bn(&mut self, bn: BnBank) {
        self.bn = bn;
    }

    /// Batch-norm bank reset to identity statistics (zero mean, unit
    /// variance), as assembled.
    pub fn fresh_bn(&self) -> BnBank {
        BnBank {
            conv_pre: self
                .bn
                .conv_pre
                .iter()
                .map(|b| BnRunning::new(b.dim()))
                .collect(),
            conv_post: self
                .bn
                .conv_post
                .iter()
                .map(|b| BnRunning::new(b.dim()))
                .collect(),
            fc: self.bn.fc.iter().map(|b| BnRunning::new(b.dim())).collect(),
        }
    }

    /// Forward pass using the model's own parameters and batch-norm state.
    pub fn forward(&mut self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let Model {
            cfg,
            params,
            layers,
            bn,
        } = self;
        run_forward(cfg, layers, params, bn, tape, batch)
    }

    /// Forward pass against an external parameter store and batch-norm
    /// bank; used by gradient checking and read-only evaluation snapshots.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        bn: &mut BnBank,
        batch: &GraphBatch,
    ) -> Result<Var> {
        run_forward(&self.cfg, &self.layers, params, bn, tape, batch)
    }
}

fn run_forward(
    cfg: &ModelConfig,
    layers: &Layers,
    params: &ParamStore,
    bn: &mut BnBank,
    tape: &mut Tape,
    batch: &GraphBatch,
) -> Result<Var> {
    let b = batch.labels.len();
    if batch.features.cols() != cfg.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "batch features",
            expected: format!("input width {}", cfg.input_dim()),
            got: format!("width {}", batch.features.cols()),
        });
    }
    if batch.membership.len() != batch.features.rows()
        || batch.membership.iter().any(|&g| g >= b)
    {
        return Err(Error::ShapeMismatch {
            context: "graph membership",
            expected: format!("{} rows over {} graphs", batch.features.rows(), b),
            got: format!("{} entries", batch.membership.len()),
        });
    }
    if cfg.uses_pooling() != batch.pooling.is_some() {
        return Err(Error::InvalidConfig(
            "batch down-sampling data does not match the model's pooling mode".into(),
        ));
    }

    let mut h = tape.constant(batch.features.clone());
    let mut parts = Vec::with_capacity(layers.conv_pre.len());
    for (layer, running) in layers.conv_pre.iter().zip(&mut bn.conv_pre) {
        let phi1 = tape.param(params, layer.phi1);
        let phi2 = tape.param(params, layer.phi2);
        let gamma = tape.param(params, layer.gamma);
        let beta = tape.param(params, layer.beta);
        h = spatial_conv(tape, &batch.adjacency, h, phi1, phi2, gamma, beta, running)?;
        parts.push(h);
    }
    let y_nodes = tape.concat_cols(&parts)?;
    let y = tape.segment_max(y_nodes, &batch.membership, b)?;

    let representation = if let Some(pool) = &batch.pooling {
        let last = *parts.last().expect("at least one convolution layer");

        let xs1 = tape.gather_rows(last, Rc::clone(&pool.sample_rows))?;
        let mut attended = Vec::with_capacity(b);
        for gi in 0..b {
            let xg = tape.gather_rows(last, Rc::clone(&pool.node_rows[gi]))?;
            let pg = tape.gather_rows(last, Rc::clone(&pool.pivot_rows[gi]))?;
            let logits = tape.matmul_nt(pg, xg)?;
            let q = tape.row_softmax(logits)?;
            attended.push(tape.matmul(q, xg)?);
        }
        let xs2 = tape.concat_rows(&attended)?;
        let lam = cfg.pool.lambda;
        let xs1 = tape.scale(xs1, lam)?;
        let xs2 = tape.scale(xs2, 1.0 - lam)?;
        let mut hs = tape.add(xs1, xs2)?;

        let mut coarse_parts = Vec::with_capacity(layers.conv_post.len());
        for (layer, running) in layers.conv_post.iter().zip(&mut bn.conv_post) {
            let phi1 = tape.param(params, layer.phi1);
            let phi2 = tape.param(params, layer.phi2);
            let gamma = tape.param(params, layer.gamma);
            let beta = tape.param(params, layer.beta);
            hs = spatial_conv(
                tape,
                &pool.coarse_adjacency,
                hs,
                phi1,
                phi2,
                gamma,
                beta,
                running,
            )?;
            coarse_parts.push(hs);
        }
        let ys_nodes = tape.concat_cols(&coarse_parts)?;
        let ys = tape.segment_max(ys_nodes, &pool.coarse_membership, b)?;
        tape.concat_cols(&[y, ys])?
    } else {
        y
    };

    let mut h = representation;
    for (layer, maybe_running) in layers
        .fc
        .iter()
        .zip(bn.fc.iter_mut().map(Some).chain(std::iter::repeat_with(|| None)))
    {
        let w = tape.param(params, layer.w);
        let bias = tape.param(params, layer.b);
        h = tape.matmul(h, w)?;
        h = tape.add_row(h, bias)?;
        if let Some((gamma_id, beta_id)) = layer.norm {
            let running = maybe_running.expect("batch-norm state for each hidden layer");
            let gamma = tape.param(params, gamma_id);
            let beta = tape.param(params, beta_id);
            h = tape.batch_norm(h, gamma, beta, running)?;
            h = tape.relu(h)?;
            h = tape.dropout(h, cfg.dropout)?;
        }
    }
    Ok(h)
}

/// One graph ready for batching: its structure, optional embedding
/// coordinates, optional down-sampling plan, and class label.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub graph: &'a Graph,
    pub embedding: Option<&'a Tensor>,
    pub plan: Option<&'a PoolingPlan>,
    pub label: usize,
}

/// Per-batch down-sampling data: coarse wiring plus the row-index maps the
/// forward pass needs to gather and attend per graph.
#[derive(Debug, Clone)]
pub struct BatchPooling {
    coarse_adjacency: Rc<SparseMatrix>,
    /// Global feature-row index of every sampled node, in batch order.
    sample_rows: Rc<Vec<usize>>,
    /// Per graph: the global rows of all its nodes.
    node_rows: Vec<Rc<Vec<usize>>>,
    /// Per graph: the global rows of its sampled (pivotal) nodes.
    pivot_rows: Vec<Rc<Vec<usize>>>,
    coarse_membership: Vec<usize>,
}

/// A block-diagonal batch of graphs with stacked node inputs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub adjacency: Rc<SparseMatrix>,
    pub features: Tensor,
    pub membership: Vec<usize>,
    pub labels: Vec<usize>,
    pub pooling: Option<BatchPooling>,
}

/// Stack graphs block-diagonally; node inputs are label features, with
/// embedding coordinates appended for the embedding-augmented variant.
pub fn build_batch(
    items: &[BatchItem<'_>],
    cfg: &ModelConfig,
    alphabet: &[u32],
) -> Result<GraphBatch> {
    if items.is_empty() {
        return Err(Error::InvalidConfig("cannot batch zero graphs".into()));
    }
    let d_in = cfg.input_dim();
    let total_nodes: usize = items.iter().map(|it| it.graph.n()).sum();
    let mut features = Tensor::zeros(total_nodes, d_in);
    let mut membership = Vec::with_capacity(total_nodes);
    let mut labels = Vec::with_capacity(items.len());
    let mut blocks = Vec::with_capacity(items.len());
    let mut offset = 0usize;

    for (gi, item) in items.iter().enumerate() {
        let g = item.graph;
        if g.n() == 0 {
            return Err(Error::InvalidConfig("cannot batch an empty graph".into()));
        }
        if item.label >= cfg.classes {
            return Err(Error::InvalidConfig(format!(
                "label {} outside {} classes",
                item.label, cfg.classes
            )));
        }
        let f = node_features(g, alphabet)?;
        if f.cols() != cfg.feature_dim {
            return Err(Error::ShapeMismatch {
                context: "node label features",
                expected: format!("width {}", cfg.feature_dim),
                got: format!("width {}", f.cols()),
            });
        }
        for r in 0..g.n() {
            features.row_mut(offset + r)[..f.cols()].copy_from_slice(f.row(r));
        }
        if cfg.uses_embedding() {
            let e = item.embedding.ok_or_else(|| {
                Error::InvalidConfig("embedding-augmented model needs embeddings".into())
            })?;
            if e.rows() != g.n() || e.cols() != cfg.embedding_dim {
                return Err(Error::ShapeMismatch {
                    context: "embedding block",
                    expected: format!("{}x{}", g.n(), cfg.embedding_dim),
                    got: format!("{}x{}", e.rows(), e.cols()),
                });
            }
            for r in 0..g.n() {
                features.row_mut(offset + r)[cfg.feature_dim..].copy_from_slice(e.row(r));
            }
        }
        membership.extend(std::iter::repeat(gi).take(g.n()));
        labels.push(item.label);
        blocks.push(g.to_sparse(cfg.normalized_conv));
        offset += g.n();
    }

    let adjacency = Rc::new(SparseMatrix::block_diag(
        &blocks.iter().collect::<Vec<_>>(),
    ));

    let pooling = if cfg.uses_pooling() {
        let mut coarse_blocks = Vec::with_capacity(items.len());
        let mut sample_rows = Vec::new();
        let mut node_rows = Vec::with_capacity(items.len());
        let mut pivot_rows = Vec::with_capacity(items.len());
        let mut coarse_membership = Vec::new();
        let mut offset = 0usize;
        for (gi, item) in items.iter().enumerate() {
            let plan = item.plan.ok_or_else(|| {
                Error::InvalidConfig("down-sampling model needs per-graph plans".into())
            })?;
            if plan.coarse.n() != plan.sample.m() {
                return Err(Error::ShapeMismatch {
                    context: "down-sampling plan",
                    expected: format!("{} coarse nodes", plan.sample.m()),
                    got: format!("{}", plan.coarse.n()),
                });
            }
            let n = item.graph.n();
            if plan.sample.indices().iter().any(|&i| i >= n) {
                return Err(Error::IndexOutOfRange {
                    index: *plan.sample.indices().iter().max().unwrap(),
                    n,
                });
            }
            let pivots: Vec<usize> =
                plan.sample.indices().iter().map(|&i| offset + i).collect();
            sample_rows.extend_from_slice(&pivots);
            pivot_rows.push(Rc::new(pivots));
            node_rows.push(Rc::new((offset..offset + n).collect()));
            coarse_membership.extend(std::iter::repeat(gi).take(plan.sample.m()));
            coarse_blocks.push(plan.coarse.to_sparse(cfg.normalized_conv));
            offset += n;
        }
        Some(BatchPooling {
            coarse_adjacency: Rc::new(SparseMatrix::block_diag(
                &coarse_blocks.iter().collect::<Vec<_>>(),
            )),
            sample_rows: Rc::new(sample_rows),
            node_rows,
            pivot_rows,
            coarse_membership,
        })
    } else {
        None
    };

    Ok(GraphBatch {
        adjacency,
        features,
        membership,
        labels,
        pooling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::graph::build_graph;
    use crate::pooling::{farthest_point_sampling_from, plan_pooling, sample_count};
    use crate::pooling::downsample_adjacency;

    fn small_cfg(variant: ModelVariant, pooling: PoolingMode) -> ModelConfig {
        let mut cfg = ModelConfig::new(variant, pooling, 2, 1);
        cfg.conv_width = 4;
        cfg.k1 = 1;
        cfg.k2 = 1;
        cfg.k3 = 1;
        cfg.classifier_hidden = vec![3];
        cfg.embedding_dim = 2;
        cfg
    }

    fn random_embedding(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = seeding::rng(seed, "test-embed", 0);
        let mut t = Tensor::zeros(n, d);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    fn ring(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        build_graph(n, &edges, None).unwrap()
    }

    #[test]
    fn default_widths_match_the_architecture() {
        let cfg = ModelConfig::new(ModelVariant::GnnEsr, PoolingMode::None, 2, 3);
        assert_eq!(cfg.input_dim(), 15);
        assert_eq!(cfg.readout_width(), 192);
        assert_eq!(cfg.representation_width(), 192);
        let pooled = ModelConfig::new(ModelVariant::GnnEsr, PoolingMode::Spatial, 2, 3);
        assert_eq!(pooled.coarse_readout_width(), 128);
        assert_eq!(pooled.representation_width(), 320);
        let plain = ModelConfig::new(ModelVariant::Gnn, PoolingMode::None, 2, 3);
        assert_eq!(plain.input_dim(), 3);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut cfg = ModelConfig::new(ModelVariant::Gnn, PoolingMode::None, 2, 1);
        cfg.k4 = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(ModelVariant::Gnn, PoolingMode::None, 1, 1);
        assert!(cfg.validate().is_err());
        cfg.classes = 2;
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(ModelVariant::Gnn, PoolingMode::Spatial, 2, 1);
        cfg.k3 = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_and_pooling_names_round_trip() {
        assert_eq!(ModelVariant::parse("GNN-ESR").unwrap(), ModelVariant::GnnEsr);
        assert_eq!(ModelVariant::parse("gnn").unwrap(), ModelVariant::Gnn);
        assert!(ModelVariant::parse("mlp").is_err());
        assert_eq!(PoolingMode::parse("spatial").unwrap(), PoolingMode::Spatial);
        assert!(PoolingMode::parse("mean").is_err());
    }

    #[test]
    fn edgeless_graph_uses_only_the_self_term() {
        // With no edges the neighbor aggregation contributes nothing, so
        // zeroing phi2 must zero the pre-normalization activations.
        let g = build_graph(3, &[], None).unwrap();
        let cfg = small_cfg(ModelVariant::Gnn, PoolingMode::None);
        let model = Model::assemble(&cfg, 7).unwrap();
        let first = model.layers.conv_pre[0].clone();
        let phi2 = model.params.get(first.phi2).clone();

        let batch = build_batch(
            &[BatchItem {
                graph: &g,
                embedding: None,
                plan: None,
                label: 0,
            }],
            &cfg,
            &[],
        )
        .unwrap();

        let mut tape = Tape::eval();
        let x = tape.constant(batch.features.clone());
        let p1 = tape.param(&model.params, first.phi1);
        let p2 = tape.param(&model.params, first.phi2);
        let t1 = tape.matmul(x, p1).unwrap();
        let t1 = tape.relu(t1).unwrap();
        let t1 = tape.sparse_mul(Rc::clone(&batch.adjacency), t1).unwrap();
        assert!(tape.value(t1).data().iter().all(|&v| v == 0.0));
        let t2 = tape.matmul(x, p2).unwrap();
        let t2 = tape.relu(t2).unwrap();
        let mut expect = Vec::new();
        for &f in batch.features.data() {
            for c in 0..4 {
                expect.push((f * phi2.get(0, c)).max(0.0));
            }
        }
        assert_eq!(tape.value(t2).data(), &expect[..]);
    }

    #[test]
    fn single_node_graph_with_zero_head_gives_uniform_logits() {
        let g = build_graph(1, &[], None).unwrap();
        let cfg = small_cfg(ModelVariant::Gnn, PoolingMode::None);
        let mut model = Model::assemble(&cfg, 3).unwrap();
        let head = model.layers.fc.last().unwrap().clone();
        *model.params.get_mut(head.w) = Tensor::zeros(3, 2);
        *model.params.get_mut(head.b) = Tensor::zeros(1, 2);

        let batch = build_batch(
            &[BatchItem {
                graph: &g,
                embedding: None,
                plan: None,
                label: 1,
            }],
            &cfg,
            &[],
        )
        .unwrap();
        let mut tape = Tape::eval();
        let logits = model.forward(&mut tape, &batch).unwrap();
        let row = tape.value(logits);
        assert_eq!(row.shape(), (1, 2));
        assert_eq!(row.get(0, 0), row.get(0, 1));
    }

    #[test]
    fn duplicated_graph_gets_identical_logits() {
        let g = ring(9);
        let e = random_embedding(9, 2, 40);
        let cfg = small_cfg(ModelVariant::GnnEsr, PoolingMode::None);
        let mut model = Model::assemble(&cfg, 11).unwrap();
        let other = ring(5);
        let oe = random_embedding(5, 2, 41);
        let batch = build_batch(
            &[
                BatchItem {
                    graph: &g,
                    embedding: Some(&e),
                    plan: None,
                    label: 0,
                },
                BatchItem {
                    graph: &other,
                    embedding: Some(&oe),
                    plan: None,
                    label: 1,
                },
                BatchItem {
                    graph: &g,
                    embedding: Some(&e),
                    plan: None,
                    label: 0,
                },
            ],
            &cfg,
            &[],
        )
        .unwrap();
        let mut tape = Tape::eval();
        let logits = model.forward(&mut tape, &batch).unwrap();
        let out = tape.value(logits);
        for c in 0..2 {
            assert!((out.get(0, c) - out.get(2, c)).abs() < 1e-9);
        }
    }

    fn permute_graph(g: &Graph, perm: &[usize]) -> Graph {
        // perm[old] = new position
        let edges: Vec<(usize, usize)> = g
            .edges()
            .into_iter()
            .map(|(u, v)| (perm[u], perm[v]))
            .collect();
        let labels = g.node_labels().map(|ls| {
            let mut out = vec![0u32; ls.len()];
            for (old, &l) in ls.iter().enumerate() {
                out[perm[old]] = l;
            }
            out
        });
        build_graph(g.n(), &edges, labels).unwrap()
    }

    fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for old in 0..t.rows() {
            out.row_mut(perm[old]).copy_from_slice(t.row(old));
        }
        out
    }

    #[test]
    fn logits_are_invariant_under_node_permutation() {
        let g = ring(16);
        let e = random_embedding(16, 2, 50);
        let perm: Vec<usize> = (0..16).map(|i| (i * 7 + 3) % 16).collect();
        let pg = permute_graph(&g, &perm);
        let pe = permute_rows(&e, &perm);

        // Without down-sampling.
        let cfg = small_cfg(ModelVariant::GnnEsr, PoolingMode::None);
        let mut model = Model::assemble(&cfg, 21).unwrap();
        let logits_of = |model: &mut Model, g: &Graph, e: &Tensor| {
            let batch = build_batch(
                &[BatchItem {
                    graph: g,
                    embedding: Some(e),
                    plan: None,
                    label: 0,
                }],
                &cfg,
                &[],
            )
            .unwrap();
            let mut tape = Tape::eval();
            let v = model.forward(&mut tape, &batch).unwrap();
            tape.value(v).clone()
        };
        let a = logits_of(&mut model, &g, &e);
        let b = logits_of(&mut model, &pg, &pe);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }

        // With down-sampling: pin the farthest-point start to corresponding
        // nodes so both runs sample corresponding sets.
        let cfg = small_cfg(ModelVariant::GnnEsr, PoolingMode::Spatial);
        let mut model = Model::assemble(&cfg, 22).unwrap();
        let m = sample_count(16);
        let s0 = farthest_point_sampling_from(&e, m, 4).unwrap();
        let s1 = farthest_point_sampling_from(&pe, m, perm[4]).unwrap();
        let plan0 = PoolingPlan {
            coarse: downsample_adjacency(&g, &s0, cfg.pool.radius).unwrap(),
            sample: s0,
        };
        let plan1 = PoolingPlan {
            coarse: downsample_adjacency(&pg, &s1, cfg.pool.radius).unwrap(),
            sample: s1,
        };
        let pooled_logits = |model: &mut Model, g: &Graph, e: &Tensor, plan: &PoolingPlan| {
            let batch = build_batch(
                &[BatchItem {
                    graph: g,
                    embedding: Some(e),
                    plan: Some(plan),
                    label: 0,
                }],
                &cfg,
                &[],
            )
            .unwrap();
            let mut tape = Tape::eval();
            let v = model.forward(&mut tape, &batch).unwrap();
            tape.value(v).clone()
        };
        let a = pooled_logits(&mut model, &g, &e, &plan0);
        let b = pooled_logits(&mut model, &pg, &pe, &plan1);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn full_model_gradient_passes_finite_difference_check() {
        let g0 = ring(16);
        let g1 = build_graph(
            9,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 0), (2, 6)],
            None,
        )
        .unwrap();
        let e0 = random_embedding(16, 2, 60);
        let e1 = random_embedding(9, 2, 61);
        let cfg = small_cfg(ModelVariant::GnnEsr, PoolingMode::Spatial);
        let model = Model::assemble(&cfg, 33).unwrap();
        let plan0 = plan_pooling(&g0, &e0, &cfg.pool, 70).unwrap();
        let plan1 = plan_pooling(&g1, &e1, &cfg.pool, 71).unwrap();
        let batch = build_batch(
            &[
                BatchItem {
                    graph: &g0,
                    embedding: Some(&e0),
                    plan: Some(&plan0),
                    label: 0,
                },
                BatchItem {
                    graph: &g1,
                    embedding: Some(&e1),
                    plan: Some(&plan1),
                    label: 1,
                },
            ],
            &cfg,
            &[],
        )
        .unwrap();
        let labels = batch.labels.clone();
        let check = finite_difference_check(model.params(), 1e-5, |tape, params| {
            let mut bn = model.fresh_bn();
            let logits = model.forward_with(tape, params, &mut bn, &batch)?;
            tape.cross_entropy_mean(logits, &labels)
        })
        .unwrap();
        assert!(
            check.passes(1e-4),
            "worst {} at {} ({} vs {})",
            check.max_rel_err,
            check.worst_param,
            check.analytic,
            check.numeric
        );
    }

    #[test]
    fn batch_requires_matching_pooling_data() {
        let g = ring(8);
        let cfg = small_cfg(ModelVariant::Gnn, PoolingMode::Spatial);
        let err = build_batch(
            &[BatchItem {
                graph: &g,
                embedding: None,
                plan: None,
                label: 0,
            }],
            &cfg,
            &[],
        );
        assert!(err.is_err());

        // A batch built without pooling fed to a pooling model is rejected.
        let plain = small_cfg(ModelVariant::Gnn, PoolingMode::None);
        let batch = build_batch(
            &[BatchItem {
                graph: &g,
                embedding: None,
                plan: None,
                label: 0,
            }],
            &plain,
            &[],
        )
        .unwrap();
        let mut model = Model::assemble(&cfg, 5).unwrap();
        let mut tape = Tape::eval();
        assert!(model.forward(&mut tape, &batch).is_err());
    }

    #[test]
    fn labeled_features_and_embeddings_are_stacked_side_by_side() {
        let g = build_graph(3, &[(0, 1), (1, 2)], Some(vec![2, 5, 2])).unwrap();
        let e = random_embedding(3, 2, 80);
        let mut cfg = small_cfg(ModelVariant::GnnEsr, PoolingMode::None);
        cfg.feature_dim = 2;
        let batch = build_batch(
            &[BatchItem {
                graph: &g,
                embedding: Some(&e),
                plan: None,
                label: 0,
            }],
            &cfg,
            &[2, 5],
        )
        .unwrap();
        assert_eq!(batch.features.shape(), (3, 4));
        assert_eq!(batch.features.row(0)[..2], [1.0, 0.0]);
        assert_eq!(batch.features.row(1)[..2], [0.0, 1.0]);
        assert_eq!(batch.features.row(0)[2..], e.row(0)[..]);
        assert_eq!(batch.membership, vec![0, 0, 0]);
    }

    #[test]
    fn graph_variant_rejects_missing_embeddings_only_when_needed() {
        let g = ring(5);
        let plain = small_cfg(ModelVariant::Gnn, PoolingMode::None);
        assert!(build_batch(
            &[BatchItem {
                graph: &g,
                embedding: None,
                plan: None,
                label: 0
            }],
            &plain,
            &[],
        )
        .is_ok());
        let esr = small_cfg(ModelVariant::GnnEsr, PoolingMode::None);
        assert!(build_batch(
            &[BatchItem {
                graph: &g,
                embedding: None,
                plan: None,
                label: 0
            }],
            &esr,
            &[],
        )
        .is_err());
    }
}
