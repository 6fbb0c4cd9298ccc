//! Cross-validated training: stratified folds, minibatch Adam with a
//! stepped learning-rate schedule, final-epoch evaluation, and
//! machine-readable experiment reports.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::{AdamState, Tape};
use crate::embedding::{embed_dataset, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::graph::LabeledGraphDataset;
use crate::model::{build_batch, BatchItem, Model, ModelConfig, ModelVariant, PoolingMode};
use crate::pooling::{plan_pooling, PoolingPlan};
use crate::seeding;
use crate::synth::{gen_dataset, TaskId};
use crate::tu::{read_tu_dataset, CorpusLocation};

/// Optimizer schedule and cross-validation shape.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Epoch at which the learning rate drops from `lr_start` to `lr_end`.
    pub decay_epoch: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr_start: 0.005,
            lr_end: 0.0005,
            decay_epoch: 100,
            folds: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::InvalidConfig(
                "need 0 < lr_end <= lr_start".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("need at least two folds".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.lr_start
        } else {
            self.lr_end
        }
    }

    /// Key-value rendering recorded in run directories and reports.
    pub fn describe(&self) -> String {
        format!(
            "epochs = {}\nbatch_size = {}\nlr_start = {}\nlr_end = {}\ndecay_epoch = {}\n\
             folds = {}\nseed = {}\n",
            self.epochs,
            self.batch_size,
            self.lr_start,
            self.lr_end,
            self.decay_epoch,
            self.folds,
            self.seed
        )
    }
}

/// A dataset with everything the model variant needs precomputed: one
/// embedding per graph (never fit across graphs) and one down-sampling
/// plan per graph (fixed for the whole experiment).
#[derive(Debug)]
pub struct PreparedDataset {
    pub ds: LabeledGraphDataset,
    pub embeddings: Option<Vec<crate::autodiff::Tensor>>,
    pub plans: Option<Vec<PoolingPlan>>,
}

impl PreparedDataset {
    /// Embed each graph independently when the variant consumes embedding
    /// inputs or the down-sampler needs embedding geometry, rewrite each
    /// embedding in its canonical per-graph frame (raw skip-gram frames are
    /// arbitrary, so leaving them random forces the classifier to learn
    /// frame invariance from data), then fix each graph's sample set and
    /// coarse wiring.
    pub fn prepare(ds: LabeledGraphDataset, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let needs_embedding = cfg.uses_embedding() || cfg.uses_pooling();
        let embeddings = if needs_embedding {
            let mut emb_cfg = EmbeddingConfig::default().with_seed(seed);
            emb_cfg.dim = cfg.embedding_dim;
            let mut embeddings = embed_dataset(&ds, &emb_cfg);
            for e in &mut embeddings {
                crate::embedding::canonicalize_frame(e);
            }
            Some(embeddings)
        } else {
            None
        };
        let plans = if cfg.uses_pooling() {
            let embeddings = embeddings.as_ref().expect("pooling requires embeddings");
            let plans = ds
                .graphs
                .par_iter()
                .zip(embeddings.par_iter())
                .enumerate()
                .map(|(idx, (g, e))| {
                    plan_pooling(g, e, &cfg.pool, seeding::derive(seed, "pool", idx as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(plans)
        } else {
            None
        };
        Ok(Self {
            ds,
            embeddings,
            plans,
        })
    }

    pub fn item(&self, idx: usize) -> BatchItem<'_> {
        BatchItem {
            graph: &self.ds.graphs[idx],
            embedding: self.embeddings.as_ref().map(|e| &e[idx]),
            plan: self.plans.as_ref().map(|p| &p[idx]),
            label: self.ds.class_labels[idx],
        }
    }
}

/// Deterministic stratified folds: within each class, indices are shuffled
/// by a class-keyed stream and dealt round-robin, so per-class counts
/// differ by at most one across folds.
pub fn stratified_kfold(
    ds: &LabeledGraphDataset,
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidConfig("need at least two folds".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (idx, &c) in ds.class_labels.iter().enumerate() {
        by_class[c].push(idx);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < folds {
            return Err(Error::ClassTooSmall {
                class,
                got: members.len(),
                folds,
            });
        }
    }
    let mut out = vec![Vec::new(); folds];
    for (class, mut members) in by_class.into_iter().enumerate() {
        let mut rng = seeding::rng(seed, "fold", class as u64);
        members.shuffle(&mut rng);
        for (i, idx) in members.into_iter().enumerate() {
            out[i % folds].push(idx);
        }
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

/// A trained fold: the final-epoch model plus the mean training loss per
/// epoch for convergence monitoring.
#[derive(Debug)]
pub struct FoldOutcome {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
}

/// Train one model on the given indices: seeded per-epoch shuffling,
/// minibatch Adam on mean cross-entropy, one learning-rate step at the
/// decay epoch. Returns the final-epoch model (no early stopping).
pub fn train_fold(
    model_cfg: &ModelConfig,
    data: &PreparedDataset,
    train_idx: &[usize],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let fold_seed = seeding::derive(cfg.seed, "fold-train", fold as u64);
    let mut model = Model::assemble(model_cfg, seeding::derive(fold_seed, "init", 0))?;
    let mut adam = AdamState::new(model.params());
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_counter = 0u64;

    for epoch in 0..cfg.epochs {
        let mut rng = seeding::rng(fold_seed, "shuffle", epoch as u64);
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<BatchItem<'_>> = chunk.iter().map(|&i| data.item(i)).collect();
            let batch = build_batch(&items, model_cfg, &data.ds.label_alphabet)?;
            let mut tape = Tape::train(seeding::derive(fold_seed, "tape", batch_counter));
            batch_counter += 1;
            let logits = model.forward(&mut tape, &batch)?;
            let loss = tape.cross_entropy_mean(logits, &batch.labels)?;
            loss_sum += tape.value(loss).scalar() * chunk.len() as f64;
            let grads = tape.backward(loss, model.params())?;
            adam.step(model.params_mut(), &grads, lr)?;
        }
        epoch_losses.push(loss_sum / order.len() as f64);
    }
    Ok(FoldOutcome {
        model,
        epoch_losses,
    })
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of graphs whose highest logit (ties to the lowest class index)
/// matches the label. Batch-norm uses the model's running statistics, so
/// grouping into evaluation batches does not affect results.
pub fn evaluate(model: &Model, data: &PreparedDataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation set".into()));
    }
    let cfg = model.config();
    let mut bn = model.bn().clone();
    let mut correct = 0usize;
    for chunk in idx.chunks(64) {
        let items: Vec<BatchItem<'_>> = chunk.iter().map(|&i| data.item(i)).collect();
        let batch = build_batch(&items, cfg, &data.ds.label_alphabet)?;
        let mut tape = Tape::eval();
        let logits = model.forward_with(&mut tape, model.params(), &mut bn, &batch)?;
        let out = tape.value(logits);
        for (r, &label) in batch.labels.iter().enumerate() {
            if argmax_lowest(out.row(r)) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Where an experiment's graphs come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic { task: TaskId, size: usize },
    Corpus { dir: PathBuf, name: String },
}

impl DataSource {
    pub fn id(&self) -> String {
        match self {
            DataSource::Synthetic { task, size } => format!("{task}[{size}]"),
            DataSource::Corpus { name, .. } => name.clone(),
        }
    }

    pub fn load(&self, seed: u64) -> Result<LabeledGraphDataset> {
        match self {
            DataSource::Synthetic { task, size } => {
                gen_dataset(*task, *size, seeding::derive(seed, "data", 0))
            }
            DataSource::Corpus { dir, name } => {
                read_tu_dataset(&CorpusLocation::new(dir, name))
            }
        }
    }
}

/// Everything needed to run one experiment end to end.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub variant: ModelVariant,
    pub pooling: PoolingMode,
    /// Mixing weight between selected and attention-aggregated features.
    pub lambda: f64,
    pub normalized_conv: bool,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn new(source: DataSource, variant: ModelVariant, train: TrainConfig) -> Self {
        Self {
            source,
            variant,
            pooling: PoolingMode::None,
            lambda: 0.5,
            normalized_conv: false,
            train,
        }
    }

    fn model_config(&self, ds: &LabeledGraphDataset) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(self.variant, self.pooling, ds.n_classes, ds.feature_dim());
        cfg.pool.lambda = self.lambda;
        cfg.normalized_conv = self.normalized_conv;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Cross-validated result of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub dataset: String,
    pub variant: ModelVariant,
    pub pooling: PoolingMode,
    pub fingerprint: u64,
    pub model_description: String,
    pub train_description: String,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub wall_clock_seconds: f64,
    pub seed: u64,
}

/// 64-bit FNV-1a over the rendered configuration.
pub fn config_fingerprint(text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ExperimentReport {
    fn from_folds(
        spec: &ExperimentSpec,
        model_description: String,
        fold_accuracies: Vec<f64>,
        wall_clock_seconds: f64,
    ) -> Self {
        let n = fold_accuracies.len() as f64;
        let mean = fold_accuracies.iter().sum::<f64>() / n;
        let var = fold_accuracies
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / n;
        let train_description = spec.train.describe();
        let fingerprint =
            config_fingerprint(&format!("{model_description}{train_description}"));
        Self {
            dataset: spec.source.id(),
            variant: spec.variant,
            pooling: spec.pooling,
            fingerprint,
            model_description,
            train_description,
            fold_accuracies,
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
            wall_clock_seconds,
            seed: spec.train.seed,
        }
    }

    /// Deterministic report body: identical bytes for identical
    /// specification and seed. Volatile values (timestamps, wall clock)
    /// belong in '#'-prefixed header lines, not here.
    pub fn render_body(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("dataset = {}\n", self.dataset));
        s.push_str(&format!("fingerprint = {:016x}\n", self.fingerprint));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("folds = {}\n", self.fold_accuracies.len()));
        for (i, a) in self.fold_accuracies.iter().enumerate() {
            s.push_str(&format!("fold_accuracy.{i} = {a:.6}\n"));
        }
        s.push_str(&format!("mean_accuracy = {:.6}\n", self.mean_accuracy));
        s.push_str(&format!("std_accuracy = {:.6}\n", self.std_accuracy));
        s.push_str(&self.model_description);
        s.push_str(&self.train_description);
        s
    }

    /// Full text document: volatile header plus deterministic body.
    pub fn render_text(&self, timestamp: &str) -> String {
        format!(
            "# generated_at = {}\n# wall_clock_seconds = {:.3}\n{}",
            timestamp,
            self.wall_clock_seconds,
            self.render_body()
        )
    }

    pub fn csv_header() -> &'static str {
        "dataset,model,pooling,seed,folds,mean_accuracy,std_accuracy,fingerprint"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:016x}",
            self.dataset,
            self.variant,
            self.pooling,
            self.seed,
            self.fold_accuracies.len(),
            self.mean_accuracy,
            self.std_accuracy,
            self.fingerprint
        )
    }
}

/// Load or generate the dataset, prepare embeddings and plans, split into
/// stratified folds, train and evaluate each fold in parallel, aggregate.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.train.validate()?;
    let started = Instant::now();
    let ds = spec.source.load(spec.train.seed)?;
    let model_cfg = spec.model_config(&ds)?;
    let data = PreparedDataset::prepare(ds, &model_cfg, spec.train.seed)?;
    let folds = stratified_kfold(&data.ds, spec.train.folds, spec.train.seed)?;

    let fold_accuracies = folds
        .par_iter()
        .enumerate()
        .map(|(fi, test_idx)| {
            let train_idx: Vec<usize> = (0..data.ds.len())
                .filter(|i| !test_idx.contains(i))
                .collect();
            let outcome = train_fold(&model_cfg, &data, &train_idx, &spec.train, fi)?;
            evaluate(&outcome.model, &data, test_idx)
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(ExperimentReport::from_folds(
        spec,
        model_cfg.describe(),
        fold_accuracies,
        started.elapsed().as_secs_f64(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn tiny_dataset(per_class: &[usize]) -> LabeledGraphDataset {
        let mut graphs = Vec::new();
        let mut labels = Vec::new();
        for (class, &count) in per_class.iter().enumerate() {
            for _ in 0..count {
                graphs.push(build_graph(2, &[(0, 1)], None).unwrap());
                labels.push(class);
            }
        }
        LabeledGraphDataset::new(graphs, labels).unwrap()
    }

    #[test]
    fn stratified_folds_balance_each_class() {
        let ds = tiny_dataset(&[500, 500]);
        let folds = stratified_kfold(&ds, 10, 3).unwrap();
        assert_eq!(folds.len(), 10);
        for fold in &folds {
            assert_eq!(fold.len(), 100);
            let ones = fold.iter().filter(|&&i| ds.class_labels[i] == 1).count();
            assert_eq!(ones, 50);
        }
    }

    #[test]
    fn stratified_folds_cover_disjointly() {
        let ds = tiny_dataset(&[13, 27, 20]);
        let folds = stratified_kfold(&ds, 4, 9).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
        // Per-class counts differ by at most one across folds.
        for class in 0..3 {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| ds.class_labels[i] == class).count())
                .collect();
            let lo = counts.iter().min().unwrap();
            let hi = counts.iter().max().unwrap();
            assert!(hi - lo <= 1, "class {class}: {counts:?}");
        }
    }

    #[test]
    fn small_class_is_rejected() {
        let ds = tiny_dataset(&[5, 30]);
        assert!(matches!(
            stratified_kfold(&ds, 10, 0),
            Err(Error::ClassTooSmall {
                class: 0,
                got: 5,
                folds: 10
            })
        ));
    }

    #[test]
    fn folds_are_deterministic_in_seed() {
        let ds = tiny_dataset(&[40, 40]);
        assert_eq!(
            stratified_kfold(&ds, 5, 11).unwrap(),
            stratified_kfold(&ds, 5, 11).unwrap()
        );
        assert_ne!(
            stratified_kfold(&ds, 5, 11).unwrap(),
            stratified_kfold(&ds, 5, 12).unwrap()
        );
    }

    #[test]
    fn lr_schedule_steps_once() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.005);
        assert_eq!(cfg.lr_at(99), 0.005);
        assert_eq!(cfg.lr_at(100), 0.0005);
        assert_eq!(cfg.lr_at(199), 0.0005);
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.lr_end = 0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.folds = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }

    fn quick_train_cfg(epochs: usize, folds: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            lr_start: 0.005,
            lr_end: 0.0005,
            decay_epoch: epochs / 2,
            folds,
            seed,
        }
    }

    fn small_model_cfg(ds: &LabeledGraphDataset) -> ModelConfig {
        let mut cfg = ModelConfig::new(
            ModelVariant::Gnn,
            PoolingMode::None,
            ds.n_classes,
            ds.feature_dim(),
        );
        cfg.conv_width = 8;
        cfg.classifier_hidden = vec![8];
        cfg
    }

    #[test]
    fn constant_classifier_scores_chance_and_ties_go_low() {
        let ds = tiny_dataset(&[3, 3, 3, 3]);
        let mut cfg = small_model_cfg(&ds);
        cfg.classes = 4;
        let data = PreparedDataset::prepare(ds, &cfg, 0).unwrap();
        let mut model = Model::assemble(&cfg, 1).unwrap();
        // Zero every parameter: logits become all-zero, so every graph is
        // predicted as class 0 (lowest index wins ties).
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let t = model.params_mut().get_mut(id);
            *t = crate::autodiff::Tensor::zeros(t.rows(), t.cols());
        }
        let idx: Vec<usize> = (0..12).collect();
        let acc = evaluate(&model, &data, &idx).unwrap();
        assert!((acc - 0.25).abs() < 1e-12);
        // Hand count on a lopsided fixture: 4 of 5 graphs are class 0.
        let ds = tiny_dataset(&[4, 1]);
        let mut cfg = small_model_cfg(&ds);
        cfg.classes = 2;
        let data = PreparedDataset::prepare(ds, &cfg, 0).unwrap();
        let mut model = Model::assemble(&cfg, 1).unwrap();
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let t = model.params_mut().get_mut(id);
            *t = crate::autodiff::Tensor::zeros(t.rows(), t.cols());
        }
        let acc = evaluate(&model, &data, &[0, 1, 2, 3, 4]).unwrap();
        assert!((acc - 0.8).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let ds = gen_dataset(TaskId::TwoThree, 12, 5).unwrap();
        let cfg = small_model_cfg(&ds);
        let data = PreparedDataset::prepare(ds, &cfg, 5).unwrap();
        let tc = quick_train_cfg(6, 2, 5);
        let idx: Vec<usize> = (0..data.ds.len()).collect();
        let a = train_fold(&cfg, &data, &idx, &tc, 0).unwrap();
        assert!(
            a.epoch_losses.last().unwrap() < a.epoch_losses.first().unwrap(),
            "losses {:?}",
            a.epoch_losses
        );
        let b = train_fold(&cfg, &data, &idx, &tc, 0).unwrap();
        for id in a.model.params().ids() {
            assert_eq!(
                a.model.params().get(id).data(),
                b.model.params().get(id).data(),
                "parameter {} diverged",
                a.model.params().name(id)
            );
        }
        let c = train_fold(&cfg, &data, &idx, &tc, 1).unwrap();
        let differs = a
            .model
            .params()
            .ids()
            .any(|id| a.model.params().get(id).data() != c.model.params().get(id).data());
        assert!(differs, "different folds should train differently");
    }

    #[test]
    fn experiment_report_is_reproducible() {
        let spec = ExperimentSpec::new(
            DataSource::Synthetic {
                task: TaskId::TwoThree,
                size: 8,
            },
            ModelVariant::Gnn,
            quick_train_cfg(2, 2, 7),
        );
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.fold_accuracies.len(), 2);
        assert_eq!(a.render_body(), b.render_body());
        let mean = a.fold_accuracies.iter().sum::<f64>() / 2.0;
        assert_eq!(a.mean_accuracy, mean);
        assert!(a.fold_accuracies.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(
            a.csv_row().split(',').count(),
            ExperimentReport::csv_header().split(',').count()
        );
        // Volatile values stay in '#' header lines.
        let text = a.render_text("2000-01-01T00:00:00Z");
        for line in text.lines() {
            if line.contains("wall_clock") || line.contains("generated_at") {
                assert!(line.starts_with('#'));
            }
        }
        assert!(!a.render_body().contains("wall_clock"));
    }

    #[test]
    fn fingerprint_separates_configs() {
        assert_ne!(
            config_fingerprint("epochs = 200\n"),
            config_fingerprint("epochs = 100\n")
        );
        assert_eq!(config_fingerprint("x"), config_fingerprint("x"));
    }
}
