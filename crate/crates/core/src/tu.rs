//! Reader and writer for the line-oriented benchmark corpus format used by
//! the common graph-classification collections: `<name>_A.txt` (directed
//! edge list of 1-indexed global node ids), `<name>_graph_indicator.txt`,
//! `<name>_graph_labels.txt`, and optional `<name>_node_labels.txt`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{build_graph, LabeledGraphDataset};

/// Directory plus dataset name prefix, e.g. `data/HLLD` with name `HLLD`.
#[derive(Debug, Clone)]
pub struct CorpusLocation {
    pub dir: PathBuf,
    pub name: String,
}

impl CorpusLocation {
    pub fn new(dir: impl Into<PathBuf>, name: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            name: name.into(),
        }
    }

    fn file(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{suffix}.txt", self.name))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.into() }
        } else {
            Error::Io(e)
        }
    })?;
    // Tolerate trailing newline and blank padding lines at the end.
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    Ok(lines)
}

fn corpus_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Corpus {
        path: path.into(),
        line,
        message: message.into(),
    }
}

fn parse_int(tok: &str, path: &Path, line: usize) -> Result<i64> {
    tok.trim()
        .parse::<i64>()
        .map_err(|_| corpus_err(path, line, format!("non-integer token {:?}", tok.trim())))
}

/// Load a corpus, remapping class labels to 0..C in first-appearance order.
/// Also returns that mapping: entry `c` is the raw label now called `c`.
pub fn read_tu_dataset_mapped(loc: &CorpusLocation) -> Result<(LabeledGraphDataset, Vec<i64>)> {
    let indicator_path = loc.file("graph_indicator");
    let labels_path = loc.file("graph_labels");
    let edges_path = loc.file("A");

    let raw_classes: Vec<i64> = {
        let path = &labels_path;
        read_lines(path)?
            .iter()
            .enumerate()
            .map(|(i, l)| parse_int(l, path, i + 1))
            .collect::<Result<_>>()?
    };
    let n_graphs = raw_classes.len();

    // graph_of[v] for global node v, 0-indexed both ways.
    let graph_of: Vec<usize> = {
        let path = &indicator_path;
        read_lines(path)?
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let id = parse_int(l, path, i + 1)?;
                if id < 1 || id as usize > n_graphs {
                    return Err(corpus_err(
                        path,
                        i + 1,
                        format!("node assigned to absent graph {id}"),
                    ));
                }
                Ok(id as usize - 1)
            })
            .collect::<Result<_>>()?
    };
    let total_nodes = graph_of.len();

    let mut node_count = vec![0usize; n_graphs];
    for &g in &graph_of {
        node_count[g] += 1;
    }
    if let Some(empty) = node_count.iter().position(|&c| c == 0) {
        return Err(corpus_err(
            &indicator_path,
            graph_of.len(),
            format!("graph {} has no nodes", empty + 1),
        ));
    }
    // Global id -> (graph, local id); nodes are local in indicator order.
    let mut local_of = vec![0usize; total_nodes];
    let mut seen = vec![0usize; n_graphs];
    for (v, &g) in graph_of.iter().enumerate() {
        local_of[v] = seen[g];
        seen[g] += 1;
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    {
        let path = &edges_path;
        for (i, line) in read_lines(path)?.iter().enumerate() {
            let Some((a, b)) = line.split_once(',') else {
                return Err(corpus_err(path, i + 1, "expected \"i, j\""));
            };
            let a = parse_int(a, path, i + 1)?;
            let b = parse_int(b, path, i + 1)?;
            for v in [a, b] {
                if v < 1 || v as usize > total_nodes {
                    return Err(corpus_err(path, i + 1, format!("dangling endpoint {v}")));
                }
            }
            let (a, b) = (a as usize - 1, b as usize - 1);
            if graph_of[a] != graph_of[b] {
                return Err(corpus_err(path, i + 1, "edge crosses graphs"));
            }
            if a != b {
                edges[graph_of[a]].push((local_of[a], local_of[b]));
            }
        }
    }

    let node_labels: Option<Vec<u32>> = {
        let path = loc.file("node_labels");
        if path.exists() {
            let lines = read_lines(&path)?;
            if lines.len() != total_nodes {
                return Err(corpus_err(
                    &path,
                    lines.len(),
                    format!("{} labels for {total_nodes} nodes", lines.len()),
                ));
            }
            Some(
                lines
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let v = parse_int(l, &path, i + 1)?;
                        u32::try_from(v)
                            .map_err(|_| corpus_err(&path, i + 1, "negative node label"))
                    })
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        }
    };

    // Continuous node attributes are validated, then dropped: the models
    // here consume categorical labels only.
    {
        let path = loc.file("node_attributes");
        if path.exists() {
            let lines = read_lines(&path)?;
            if lines.len() != total_nodes {
                return Err(corpus_err(
                    &path,
                    lines.len(),
                    format!("{} attribute rows for {total_nodes} nodes", lines.len()),
                ));
            }
            for (i, line) in lines.iter().enumerate() {
                for tok in line.split(',') {
                    tok.trim().parse::<f64>().map_err(|_| {
                        corpus_err(&path, i + 1, format!("non-numeric attribute {:?}", tok.trim()))
                    })?;
                }
            }
        }
    }

    let mut per_graph_labels: Vec<Vec<u32>> = vec![Vec::new(); n_graphs];
    if let Some(all) = &node_labels {
        for (v, &g) in graph_of.iter().enumerate() {
            per_graph_labels[g].push(all[v]);
        }
    }

    let graphs = (0..n_graphs)
        .map(|g| {
            let labels = node_labels.is_some().then(|| per_graph_labels[g].clone());
            build_graph(node_count[g], &edges[g], labels)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut class_map: Vec<i64> = Vec::new();
    let class_labels: Vec<usize> = raw_classes
        .iter()
        .map(|&raw| {
            class_map.iter().position(|&m| m == raw).unwrap_or_else(|| {
                class_map.push(raw);
                class_map.len() - 1
            })
        })
        .collect();

    let dataset = LabeledGraphDataset::new(graphs, class_labels)?;
    Ok((dataset, class_map))
}

pub fn read_tu_dataset(loc: &CorpusLocation) -> Result<LabeledGraphDataset> {
    read_tu_dataset_mapped(loc).map(|(ds, _)| ds)
}

/// Write a dataset in the exact format `read_tu_dataset` accepts. Each
/// undirected edge appears in both directions, ordered by source node.
pub fn write_tu_dataset(ds: &LabeledGraphDataset, loc: &CorpusLocation) -> Result<()> {
    let labeled: Vec<bool> = ds.graphs.iter().map(|g| g.node_labels().is_some()).collect();
    let any_labeled = labeled.iter().any(|&l| l);
    if any_labeled && !labeled.iter().all(|&l| l) {
        return Err(Error::InvalidConfig(
            "cannot serialize a mix of labeled and unlabeled graphs".into(),
        ));
    }

    fs::create_dir_all(&loc.dir)?;
    let mut a = BufWriter::new(fs::File::create(loc.file("A"))?);
    let mut indicator = BufWriter::new(fs::File::create(loc.file("graph_indicator"))?);
    let mut labels = BufWriter::new(fs::File::create(loc.file("graph_labels"))?);
    let mut node_labels = any_labeled
        .then(|| fs::File::create(loc.file("node_labels")).map(BufWriter::new))
        .transpose()?;

    let mut offset = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        writeln!(labels, "{}", ds.class_labels[gi])?;
        for i in 0..g.n() {
            writeln!(indicator, "{}", gi + 1)?;
            for &j in g.neighbors(i) {
                writeln!(a, "{}, {}", offset + i + 1, offset + j + 1)?;
            }
        }
        if let (Some(w), Some(ls)) = (node_labels.as_mut(), g.node_labels()) {
            for &l in ls {
                writeln!(w, "{l}")?;
            }
        }
        offset += g.n();
    }
    a.flush()?;
    indicator.flush()?;
    labels.flush()?;
    if let Some(mut w) = node_labels {
        w.flush()?;
    }
    Ok(())
}
