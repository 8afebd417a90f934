//! Text ingestion for graphs, node features, labels and splits.
//!
//! Node ids in the files are arbitrary non-negative integers. They are
//! remapped to a dense `0..n` range in ascending order of the original id; the
//! [`IdMap`] keeps the permutation so exported embeddings can be keyed by the
//! original ids again.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::scalar::Scalar;

/// Dense ids ↔ original ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    original: Vec<u64>,
    dense: HashMap<u64, u32>,
}

impl IdMap {
    pub fn from_sorted_unique(original: Vec<u64>) -> Self {
        debug_assert!(original.windows(2).all(|w| w[0] < w[1]));
        let dense = original.iter().enumerate().map(|(i, &o)| (o, i as u32)).collect();
        Self { original, dense }
    }

    /// The map where dense and original ids coincide.
    pub fn identity(n: usize) -> Self {
        Self::from_sorted_unique((0..n as u64).collect())
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn original(&self, dense: usize) -> u64 {
        self.original[dense]
    }

    pub fn dense(&self, original: u64) -> Option<usize> {
        self.dense.get(&original).map(|&d| d as usize)
    }
}

/// Node feature matrix, one row per node, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T>(DenseMatrix<T>);

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(values: DenseMatrix<T>) -> Result<Self> {
        if !values.all_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self(values))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.0
    }

    /// Rescales each row to unit L1 norm; all-zero rows are left alone.
    pub fn row_normalized(&self) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.rows() {
            let row = m.row_mut(i);
            let s: T = row.iter().map(|v| v.abs()).sum();
            if s > T::zero() {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        Self(m)
    }

    pub fn to_csr(&self) -> CsrMatrix<T> {
        CsrMatrix::from_dense(&self.0)
    }
}

/// Ground-truth node labels and classification splits. Used only by the
/// downstream evaluators, never during self-supervised training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labels: Vec<u32>,
    pub num_classes: usize,
    /// Category names in label order, when the file used names.
    pub class_names: Vec<String>,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl LabelSet {
    pub fn new(labels: Vec<u32>, num_classes: usize, train: Vec<u32>, val: Vec<u32>, test: Vec<u32>) -> Result<Self> {
        let s = Self { labels, num_classes, class_names: Vec::new(), train, val, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= self.num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{}", self.num_classes)));
        }
        let n = self.labels.len();
        let mut seen = vec![false; n];
        for (name, split) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in split {
                let i = i as usize;
                if i >= n {
                    return Err(Error::InvalidArgument(format!("{name} split references node {i} of {n}")));
                }
                if seen[i] {
                    return Err(Error::InvalidArgument(format!("node {i} appears in more than one split position")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    /// Replaces the splits with a stratified random one: `per_class_train`
    /// nodes of every class for training, then `num_val` and `num_test` nodes
    /// from the remainder.
    pub fn with_stratified_split(mut self, per_class_train: usize, num_val: usize, num_test: usize, seed: u64) -> Self {
        let mut order: Vec<u32> = (0..self.labels.len() as u32).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut taken = vec![0usize; self.num_classes];
        let mut rest = Vec::new();
        self.train.clear();
        for i in order {
            let c = self.labels[i as usize] as usize;
            if taken[c] < per_class_train {
                taken[c] += 1;
                self.train.push(i);
            } else {
                rest.push(i);
            }
        }
        let num_val = num_val.min(rest.len());
        self.val = rest[..num_val].to_vec();
        let end = (num_val + num_test).min(rest.len());
        self.test = rest[num_val..end].to_vec();
        self
    }

    pub fn has_splits(&self) -> bool {
        !self.train.is_empty() && !self.test.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFormat {
    /// `id,v1,...,vd` per line.
    Csv,
    /// Header `rows cols`, then `id col value` per nonzero.
    Triplets,
    /// Tab or space separated `id v1 ... vd label`, as in the citation-network releases.
    Content,
}

impl FeatureFormat {
    pub fn detect(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => FeatureFormat::Csv,
            Some("content") => FeatureFormat::Content,
            _ => FeatureFormat::Triplets,
        }
    }
}

/// File locations of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    #[serde(default)]
    pub feature_format: Option<FeatureFormat>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub train_split: Option<PathBuf>,
    #[serde(default)]
    pub val_split: Option<PathBuf>,
    #[serde(default)]
    pub test_split: Option<PathBuf>,
}

impl DatasetPaths {
    pub fn new(edges: impl Into<PathBuf>, features: impl Into<PathBuf>) -> Self {
        Self {
            edges: edges.into(),
            features: features.into(),
            feature_format: None,
            labels: None,
            train_split: None,
            val_split: None,
            test_split: None,
        }
    }

    pub fn with_labels(mut self, labels: impl Into<PathBuf>) -> Self {
        self.labels = Some(labels.into());
        self
    }

    /// Resolves relative paths against `root`.
    pub fn resolved(&self, root: &Path) -> Self {
        let fix = |p: &PathBuf| if p.is_absolute() { p.clone() } else { root.join(p) };
        Self {
            edges: fix(&self.edges),
            features: fix(&self.features),
            feature_format: self.feature_format,
            labels: self.labels.as_ref().map(fix),
            train_split: self.train_split.as_ref().map(fix),
            val_split: self.val_split.as_ref().map(fix),
            test_split: self.test_split.as_ref().map(fix),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.edges.as_path(), self.features.as_path()];
        for p in [&self.labels, &self.train_split, &self.val_split, &self.test_split].into_iter().flatten() {
            v.push(p.as_path());
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub graph: Graph,
    pub features: FeatureMatrix<T>,
    pub labels: Option<LabelSet>,
    pub ids: IdMap,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn parse_id(path: &Path, line: usize, tok: &str) -> Result<u64> {
    tok.parse::<u64>().map_err(|_| parse_err(path, line, format!("expected a non-negative integer node id, found {tok:?}")))
}

fn parse_value<T: Scalar>(path: &Path, line: usize, tok: &str) -> Result<T> {
    let v: f64 = tok.parse().map_err(|_| parse_err(path, line, format!("expected a number, found {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {tok:?}")));
    }
    Ok(T::of(v))
}

/// Edge list in original ids plus ids declared on their own (isolated nodes).
struct RawEdges {
    pairs: Vec<(u64, u64)>,
    nodes: BTreeSet<u64>,
}

fn read_edges(path: &Path) -> Result<RawEdges> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    let mut nodes = BTreeSet::new();
    for (line, body) in content_lines(&text) {
        let toks: Vec<&str> = tokens(body).collect();
        match toks.as_slice() {
            [a] => {
                nodes.insert(parse_id(path, line, a)?);
            }
            [a, b] => {
                let (u, v) = (parse_id(path, line, a)?, parse_id(path, line, b)?);
                nodes.insert(u);
                nodes.insert(v);
                pairs.push((u, v));
            }
            _ => return Err(parse_err(path, line, format!("expected \"u v\", found {} fields", toks.len()))),
        }
    }
    Ok(RawEdges { pairs, nodes })
}

fn build_graph(raw: &RawEdges, ids: &IdMap) -> Result<Graph> {
    let dense = raw.pairs.iter().map(|&(u, v)| (ids.dense(u).unwrap() as u32, ids.dense(v).unwrap() as u32));
    Graph::from_edges(ids.len(), dense)
}

/// Loads just the graph from an edge list.
pub fn load_graph(edge_path: &Path) -> Result<(Graph, IdMap)> {
    let raw = read_edges(edge_path)?;
    let ids = IdMap::from_sorted_unique(raw.nodes.iter().copied().collect());
    let graph = build_graph(&raw, &ids)?;
    Ok((graph, ids))
}

/// Writes `u v` lines in original ids, each undirected edge once, followed by
/// isolated nodes on lines of their own.
pub fn save_edge_list(graph: &Graph, ids: &IdMap, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for (u, v) in graph.edges() {
        writeln!(w, "{} {}", ids.original(u as usize), ids.original(v as usize)).map_err(io)?;
    }
    for i in (0..graph.num_nodes()).filter(|&i| graph.degree(i) == 0) {
        writeln!(w, "{}", ids.original(i)).map_err(io)?;
    }
    w.flush().map_err(io)
}

enum RawFeatures<T> {
    Rows { rows: BTreeMap<u64, Vec<T>>, cols: usize, labels: Option<BTreeMap<u64, String>> },
    Triplets { rows: usize, cols: usize, entries: Vec<(u64, usize, T, usize)> },
}

fn read_features<T: Scalar>(path: &Path, format: FeatureFormat) -> Result<RawFeatures<T>> {
    let text = read_text(path)?;
    match format {
        FeatureFormat::Csv | FeatureFormat::Content => {
            let with_label = format == FeatureFormat::Content;
            let mut rows = BTreeMap::new();
            let mut labels = BTreeMap::new();
            let mut width = None;
            for (line, body) in content_lines(&text) {
                let toks: Vec<&str> = tokens(body).collect();
                let min = if with_label { 2 } else { 1 };
                if toks.len() < min {
                    return Err(parse_err(path, line, "row has no values"));
                }
                let id = parse_id(path, line, toks[0])?;
                let vals_end = toks.len() - usize::from(with_label);
                let vals = toks[1..vals_end].iter().map(|t| parse_value::<T>(path, line, t)).collect::<Result<Vec<_>>>()?;
                match width {
                    None => width = Some(vals.len()),
                    Some(w) if w != vals.len() => {
                        return Err(parse_err(path, line, format!("expected {w} values, found {}", vals.len())))
                    }
                    _ => {}
                }
                if rows.insert(id, vals).is_some() {
                    return Err(parse_err(path, line, format!("duplicate feature row for node {id}")));
                }
                if with_label {
                    labels.insert(id, toks[toks.len() - 1].to_string());
                }
            }
            Ok(RawFeatures::Rows { rows, cols: width.unwrap_or(0), labels: with_label.then_some(labels) })
        }
        FeatureFormat::Triplets => {
            let mut lines = content_lines(&text);
            let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing \"rows cols\" header"))?;
            let h: Vec<&str> = tokens(header).collect();
            if h.len() != 2 {
                return Err(parse_err(path, hline, "header must be \"rows cols\""));
            }
            let rows = parse_id(path, hline, h[0])? as usize;
            let cols = parse_id(path, hline, h[1])? as usize;
            let mut entries = Vec::new();
            for (line, body) in lines {
                let t: Vec<&str> = tokens(body).collect();
                if t.len() != 3 {
                    return Err(parse_err(path, line, format!("expected \"row col value\", found {} fields", t.len())));
                }
                let id = parse_id(path, line, t[0])?;
                let col = parse_id(path, line, t[1])? as usize;
                if col >= cols {
                    return Err(parse_err(path, line, format!("column {col} outside 0..{cols}")));
                }
                entries.push((id, col, parse_value::<T>(path, line, t[2])?, line));
            }
            Ok(RawFeatures::Triplets { rows, cols, entries })
        }
    }
}

fn read_labels(path: &Path, ids: &IdMap) -> Result<(Vec<u32>, usize, Vec<String>)> {
    let text = read_text(path)?;
    let mut raw = Vec::new();
    for (line, body) in content_lines(&text) {
        let t: Vec<&str> = tokens(body).collect();
        if t.len() != 2 {
            return Err(parse_err(path, line, "expected \"node label\""));
        }
        let id = parse_id(path, line, t[0])?;
        let dense = ids.dense(id).ok_or_else(|| parse_err(path, line, format!("unknown node {id}")))?;
        raw.push((dense, t[1].to_string(), line));
    }
    labels_from_strings(path, raw, ids.len())
}

/// Integer labels are used as given; any non-integer label switches to names
/// mapped to classes in sorted order.
fn labels_from_strings(path: &Path, raw: Vec<(usize, String, usize)>, n: usize) -> Result<(Vec<u32>, usize, Vec<String>)> {
    let numeric = raw.iter().all(|(_, l, _)| l.parse::<u32>().is_ok());
    let names: Vec<String> =
        if numeric { Vec::new() } else { raw.iter().map(|(_, l, _)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect() };
    let mut labels = vec![u32::MAX; n];
    for (dense, l, line) in raw {
        if labels[dense] != u32::MAX {
            return Err(parse_err(path, line, "node labelled twice"));
        }
        labels[dense] = if numeric { l.parse().unwrap() } else { names.binary_search(&l).unwrap() as u32 };
    }
    if let Some(missing) = labels.iter().position(|&l| l == u32::MAX) {
        return Err(Error::Dimension(format!("node with dense id {missing} has no label")));
    }
    let num_classes = if numeric { labels.iter().max().map_or(0, |&m| m as usize + 1) } else { names.len() };
    Ok((labels, num_classes, names))
}

fn read_split(path: &Path, ids: &IdMap) -> Result<Vec<u32>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(line, body)| {
            let id = parse_id(path, line, body)?;
            ids.dense(id).map(|d| d as u32).ok_or_else(|| parse_err(path, line, format!("unknown node {id}")))
        })
        .collect()
}

/// Loads a graph, its features and, when given, labels and split files.
///
/// The node set is the union of ids in the edge list and the feature file;
/// the feature file must provide exactly one row per node.
pub fn load_dataset<T: Scalar>(paths: &DatasetPaths) -> Result<Dataset<T>> {
    let raw_edges = read_edges(&paths.edges)?;
    let format = paths.feature_format.unwrap_or_else(|| FeatureFormat::detect(&paths.features));
    let raw_features = read_features::<T>(&paths.features, format)?;

    let mut all = raw_edges.nodes.clone();
    match &raw_features {
        RawFeatures::Rows { rows, .. } => all.extend(rows.keys().copied()),
        RawFeatures::Triplets { entries, .. } => all.extend(entries.iter().map(|e| e.0)),
    }
    let ids = IdMap::from_sorted_unique(all.into_iter().collect());
    let n = ids.len();
    let graph = build_graph(&raw_edges, &ids)?;

    let mut content_labels = None;
    let features = match raw_features {
        RawFeatures::Rows { rows, cols, labels } => {
            if rows.len() != n {
                return Err(Error::Dimension(format!(
                    "{} feature rows for {n} nodes in {}",
                    rows.len(),
                    paths.features.display()
                )));
            }
            content_labels = labels;
            // BTreeMap order is ascending original id, i.e. dense order.
            let data: Vec<T> = rows.into_values().flatten().collect();
            DenseMatrix::from_vec(n, cols, data)?
        }
        RawFeatures::Triplets { rows, cols, entries } => {
            if rows != n {
                return Err(Error::Dimension(format!(
                    "feature header declares {rows} rows for {n} nodes in {}",
                    paths.features.display()
                )));
            }
            let mut m = DenseMatrix::zeros(n, cols);
            for (id, col, v, _) in entries {
                let i = ids.dense(id).unwrap();
                m.set(i, col, v);
            }
            m
        }
    };
    let features = FeatureMatrix::new(features)?;

    let labels = match (&paths.labels, content_labels) {
        (Some(p), _) => Some(read_labels(p, &ids)?),
        (None, Some(map)) => {
            let raw = map.into_iter().map(|(id, l)| (ids.dense(id).unwrap(), l, 0)).collect();
            Some(labels_from_strings(&paths.features, raw, n)?)
        }
        (None, None) => None,
    };
    let labels = match labels {
        Some((labels, num_classes, class_names)) => {
            let split = |p: &Option<PathBuf>| p.as_ref().map_or(Ok(Vec::new()), |p| read_split(p, &ids));
            let mut set = LabelSet::new(
                labels,
                num_classes,
                split(&paths.train_split)?,
                split(&paths.val_split)?,
                split(&paths.test_split)?,
            )?;
            set.class_names = class_names;
            Some(set)
        }
        None => None,
    };

    Ok(Dataset { graph, features, labels, ids })
}
