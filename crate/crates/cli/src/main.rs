//! `geognn` — generate synthetic graph corpora, embed them, and train
//! cross-validated graph classifiers, with a one-shot mode that re-runs the
//! whole synthetic comparison grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use geognn_core::embedding::{embed_graph, write_embedding_cache, EmbeddingConfig};
use geognn_core::graph::LabeledGraphDataset;
use geognn_core::model::{ModelVariant, PoolingMode};
use geognn_core::seeding;
use geognn_core::synth::{gen_dataset, TaskId};
use geognn_core::train::{
    config_fingerprint, run_experiment, DataSource, ExperimentReport, ExperimentSpec, TrainConfig,
};
use geognn_core::tu::{read_tu_dataset, write_tu_dataset, CorpusLocation};
use geognn_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "geognn",
    version,
    about = "Synthetic graph classification: corpus generation, node embedding, and cross-validated training"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task corpus as TU-format text files.
    Generate(GenerateArgs),
    /// Embed every graph of a corpus and cache the coordinates.
    Embed(EmbedArgs),
    /// Train one cross-validated experiment and write its report.
    Train(TrainArgs),
    /// Run the full synthetic comparison grid and aggregate a table.
    Reproduce(ReproduceArgs),
    /// Print summary statistics of a corpus.
    Inspect(InspectArgs),
}

fn parse_task(s: &str) -> std::result::Result<TaskId, String> {
    TaskId::parse(s).ok_or_else(|| format!("unknown task '{s}'"))
}

fn parse_model(s: &str) -> std::result::Result<ModelVariant, String> {
    ModelVariant::parse(s).map_err(|e| e.to_string())
}

fn parse_pooling(s: &str) -> std::result::Result<PoolingMode, String> {
    PoolingMode::parse(s).map_err(|e| e.to_string())
}

fn parse_lambda(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("lambda {v} outside [0, 1]"))
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Synthetic task: hlld, cnc, cnlc, nlc, mdc, or twothree.
    #[arg(long, value_parser = parse_task)]
    task: TaskId,
    /// Number of graphs.
    #[arg(long, default_value_t = 1000)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the TU files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    /// Directory holding a TU-format corpus.
    #[arg(long)]
    dataset_dir: PathBuf,
    /// Corpus name (file prefix); inferred when the directory holds one.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for per-graph embedding cache files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Synthetic task to generate for this run.
    #[arg(long, value_parser = parse_task, conflicts_with = "dataset_dir")]
    task: Option<TaskId>,
    /// Directory holding a TU-format corpus to train on instead.
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    /// Corpus name (file prefix); inferred when the directory holds one.
    #[arg(long, requires = "dataset_dir")]
    name: Option<String>,
    /// Synthetic corpus size (default 1000; 200 with --quick).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_parser = parse_model, default_value = "gnn-esr")]
    model: ModelVariant,
    #[arg(long, value_parser = parse_pooling, default_value = "none")]
    pooling: PoolingMode,
    /// Mixing weight between selected and attention-aggregated features.
    #[arg(long, value_parser = parse_lambda, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Cross-validation folds (default 10; 3 with --quick).
    #[arg(long)]
    folds: Option<usize>,
    /// Smoke-run scale: size 200, 3 folds.
    #[arg(long)]
    quick: bool,
    /// Output directory for report and config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Smoke-run scale: size 200, 3 folds (default: size 1000, 10 folds).
    #[arg(long)]
    quick: bool,
    /// Output directory for per-run reports and the aggregate table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Directory holding a TU-format corpus.
    #[arg(long)]
    dataset_dir: PathBuf,
    /// Corpus name (file prefix); inferred when the directory holds one.
    #[arg(long)]
    name: Option<String>,
    /// Optional directory to also write the summary into.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Embed(args) => embed(args),
        Command::Train(args) => train(args),
        Command::Reproduce(args) => reproduce(args),
        Command::Inspect(args) => inspect(args),
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

/// Write the fully resolved configuration of this run into its directory.
fn write_config(dir: &Path, body: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = format!("# generated_at = {}\n{}", timestamp(), body);
    fs::write(dir.join("config.txt"), text)?;
    Ok(())
}

/// Resolve the corpus file prefix: take `--name` when given, otherwise
/// infer it from a unique `*_A.txt` in the directory.
fn resolve_corpus(dir: &Path, name: Option<String>) -> Result<CorpusLocation> {
    if let Some(name) = name {
        return Ok(CorpusLocation::new(dir, &name));
    }
    if !dir.is_dir() {
        return Err(Error::MissingFile {
            path: dir.to_path_buf(),
        });
    }
    let mut prefixes = Vec::new();
    for entry in fs::read_dir(dir)? {
        let file = entry?.file_name();
        let file = file.to_string_lossy();
        if let Some(prefix) = file.strip_suffix("_A.txt") {
            prefixes.push(prefix.to_string());
        }
    }
    prefixes.sort();
    match prefixes.len() {
        0 => Err(Error::MissingFile {
            path: dir.join("<name>_A.txt"),
        }),
        1 => Ok(CorpusLocation::new(dir, &prefixes[0])),
        _ => Err(Error::InvalidConfig(format!(
            "directory holds several corpora ({}); pass --name",
            prefixes.join(", ")
        ))),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let ds = gen_dataset(args.task, args.size, args.seed)?;
    let loc = CorpusLocation::new(&args.out, args.task.name());
    write_tu_dataset(&ds, &loc)?;
    write_config(
        &args.out,
        &format!(
            "command = generate\ntask = {}\nsize = {}\nseed = {}\n",
            args.task, args.size, args.seed
        ),
    )?;
    println!(
        "wrote {} graphs ({} classes) to {}",
        ds.len(),
        ds.n_classes,
        args.out.display()
    );
    Ok(())
}

fn embed(args: EmbedArgs) -> Result<()> {
    let loc = resolve_corpus(&args.dataset_dir, args.name)?;
    let ds = read_tu_dataset(&loc)?;
    let cfg = EmbeddingConfig::default();
    let config_body = format!(
        "command = embed\ncorpus = {}\nseed = {}\ndim = {}\nwalks_per_node = {}\nwindow = {}\n\
         negatives = {}\nepochs = {}\nstep_size = {}\n",
        loc.name,
        args.seed,
        cfg.dim,
        cfg.walks_per_node,
        cfg.window,
        cfg.negatives,
        cfg.epochs,
        cfg.step_size
    );
    let base_fp = config_fingerprint(&config_body);
    fs::create_dir_all(&args.out)?;
    for (idx, g) in ds.graphs.iter().enumerate() {
        let per_graph = cfg.with_seed(seeding::derive(args.seed, "embed", idx as u64));
        let e = embed_graph(g, &per_graph);
        let path = args.out.join(format!("graph_{idx:05}.emb"));
        write_embedding_cache(&path, &e, seeding::derive(base_fp, "graph", idx as u64))?;
    }
    write_config(&args.out, &config_body)?;
    println!(
        "embedded {} graphs into {}",
        ds.len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let size = args.size.unwrap_or(if args.quick { 200 } else { 1000 });
    let folds = args.folds.unwrap_or(if args.quick { 3 } else { 10 });
    let source = match (&args.task, &args.dataset_dir) {
        (Some(task), None) => DataSource::Synthetic { task: *task, size },
        (None, Some(dir)) => {
            let loc = resolve_corpus(dir, args.name.clone())?;
            DataSource::Corpus {
                dir: dir.clone(),
                name: loc.name.to_string(),
            }
        }
        _ => {
            return Err(Error::InvalidConfig(
                "pass exactly one of --task or --dataset-dir".into(),
            ))
        }
    };
    let mut train_cfg = TrainConfig {
        folds,
        seed: args.seed,
        ..TrainConfig::default()
    };
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
        train_cfg.decay_epoch = epochs / 2;
    }
    let spec = ExperimentSpec {
        source,
        variant: args.model,
        pooling: args.pooling,
        lambda: args.lambda,
        normalized_conv: false,
        train: train_cfg,
    };

    let report = run_experiment(&spec)?;
    fs::create_dir_all(&args.out)?;
    fs::write(
        args.out.join("report.txt"),
        report.render_text(&timestamp()),
    )?;
    fs::write(
        args.out.join("report.csv"),
        format!("{}\n{}\n", ExperimentReport::csv_header(), report.csv_row()),
    )?;
    write_config(
        &args.out,
        &format!(
            "command = train\nsource = {}\nquick = {}\n{}{}",
            report.dataset,
            args.quick,
            report.model_description,
            report.train_description
        ),
    )?;
    print!("{}", report.render_body());
    println!(
        "mean accuracy {:.4} +- {:.4} -> {}",
        report.mean_accuracy,
        report.std_accuracy,
        args.out.display()
    );
    Ok(())
}

/// The synthetic rows of the published comparison: every task under both
/// model variants, plus the down-sampling configuration on mdc.
fn comparison_grid() -> Vec<(TaskId, ModelVariant, PoolingMode)> {
    let mut grid = Vec::new();
    for task in [TaskId::Hlld, TaskId::Cnc, TaskId::Cnlc, TaskId::Nlc, TaskId::Mdc] {
        grid.push((task, ModelVariant::Gnn, PoolingMode::None));
        grid.push((task, ModelVariant::GnnEsr, PoolingMode::None));
    }
    grid.push((TaskId::Mdc, ModelVariant::GnnEsr, PoolingMode::Spatial));
    grid
}

fn reproduce(args: ReproduceArgs) -> Result<()> {
    let (size, folds) = if args.quick { (200, 3) } else { (1000, 10) };
    let grid = comparison_grid();
    write_config(
        &args.out,
        &format!(
            "command = reproduce\nquick = {}\nsize = {}\nfolds = {}\nseed = {}\nruns = {}\n",
            args.quick,
            size,
            folds,
            args.seed,
            grid.len()
        ),
    )?;
    let reports_dir = args.out.join("reports");
    fs::create_dir_all(&reports_dir)?;

    let mut rows = Vec::with_capacity(grid.len());
    for (i, (task, variant, pooling)) in grid.iter().enumerate() {
        let spec = ExperimentSpec {
            source: DataSource::Synthetic { task: *task, size },
            variant: *variant,
            pooling: *pooling,
            lambda: 0.5,
            normalized_conv: false,
            train: TrainConfig {
                folds,
                seed: seeding::derive(args.seed, "repro", i as u64),
                ..TrainConfig::default()
            },
        };
        let report = run_experiment(&spec)?;
        let file = format!("{}_{}_{}.txt", task.name(), variant.name(), pooling.name());
        fs::write(reports_dir.join(file), report.render_text(&timestamp()))?;
        println!(
            "{:<10} {:<8} {:<8} mean {:.4} +- {:.4}",
            task.name(),
            variant.name(),
            pooling.name(),
            report.mean_accuracy,
            report.std_accuracy
        );
        rows.push(report);
    }

    let mut csv = String::from(ExperimentReport::csv_header());
    csv.push('\n');
    let mut table = format!(
        "{:<12} {:<8} {:<8} {:>8} {:>8}\n",
        "task", "model", "pooling", "mean", "std"
    );
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        table.push_str(&format!(
            "{:<12} {:<8} {:<8} {:>8.4} {:>8.4}\n",
            r.dataset, r.variant, r.pooling, r.mean_accuracy, r.std_accuracy
        ));
    }
    fs::write(args.out.join("table.csv"), csv)?;
    fs::write(args.out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn corpus_summary(ds: &LabeledGraphDataset, name: &str) -> String {
    let n_graphs = ds.len();
    let mut nodes: Vec<usize> = ds.graphs.iter().map(|g| g.n()).collect();
    let mut edges: Vec<usize> = ds.graphs.iter().map(|g| g.edge_count()).collect();
    nodes.sort_unstable();
    edges.sort_unstable();
    let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
    let mut class_counts = vec![0usize; ds.n_classes];
    for &c in &ds.class_labels {
        class_counts[c] += 1;
    }
    let mut s = String::new();
    s.push_str(&format!("corpus = {name}\n"));
    s.push_str(&format!("graphs = {n_graphs}\n"));
    s.push_str(&format!("classes = {}\n", ds.n_classes));
    for (c, count) in class_counts.iter().enumerate() {
        s.push_str(&format!("class_count.{c} = {count}\n"));
    }
    s.push_str(&format!(
        "nodes_min/mean/max = {}/{:.1}/{}\n",
        nodes[0],
        mean(&nodes),
        nodes[n_graphs - 1]
    ));
    s.push_str(&format!(
        "edges_min/mean/max = {}/{:.1}/{}\n",
        edges[0],
        mean(&edges),
        edges[n_graphs - 1]
    ));
    s.push_str(&format!(
        "node_labels = {}\n",
        if ds.label_alphabet.is_empty() {
            "none".to_string()
        } else {
            format!("{} distinct", ds.label_alphabet.len())
        }
    ));
    s
}

fn inspect(args: InspectArgs) -> Result<()> {
    let loc = resolve_corpus(&args.dataset_dir, args.name)?;
    let ds = read_tu_dataset(&loc)?;
    let summary = corpus_summary(&ds, &loc.name);
    print!("{summary}");
    if let Some(out) = args.out {
        fs::create_dir_all(&out)?;
        fs::write(out.join("summary.txt"), &summary)?;
        write_config(
            &out,
            &format!(
                "command = inspect\ncorpus = {}\ndir = {}\n",
                loc.name,
                args.dataset_dir.display()
            ),
        )?;
    }
    Ok(())
}
