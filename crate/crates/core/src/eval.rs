//! Downstream evaluation of frozen embeddings.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{dot, DenseMatrix, Parallelism};
use crate::model::{pair_probabilities, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: String,
    pub dataset: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs_address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Metrics {
    pub fn from_values(task: &str, dataset: &str, values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            task: task.to_string(),
            dataset: dataset.to_string(),
            mean,
            std,
            runs: values.len(),
            values,
            micro_f1: None,
            config_hash: None,
            inputs_address: None,
            seed: None,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

// ---------------------------------------------------------------- AUC

/// Mann–Whitney AUC; tied scores contribute 0.5.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", scores.len().to_string(), labels.len().to_string()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

// ---------------------------------------------------------------- logistic regression

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogRegConfig {
    pub l2: f64,
    pub step: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Scale embedding rows to unit L2 norm before fitting.
    pub normalize_rows: bool,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { l2: 1e-4, step: 0.1, max_iter: 2000, tol: 1e-7, normalize_rows: false }
    }
}

#[derive(Debug, Clone)]
pub struct LogReg {
    pub weight: DenseMatrix<f64>,
    pub bias: Vec<f64>,
    pub losses: Vec<f64>,
}

impl LogReg {
    pub fn logits(&self, x: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        let mut out = x.matmul(&self.weight, Parallelism::Sequential).expect("feature width checked at fit");
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        out
    }

    pub fn predict(&self, x: &DenseMatrix<f64>) -> Vec<u32> {
        let logits = self.logits(x);
        logits.iter_rows().map(|r| argmax(r) as u32).collect()
    }
}

fn argmax(r: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in r.iter().enumerate() {
        if v > r[best] {
            best = i;
        }
    }
    best
}

/// Copy of `x` with every non-zero row scaled to unit L2 norm.
pub fn l2_rows(x: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

fn softmax_ce(logits: &mut DenseMatrix<f64>, y: &[u32]) -> f64 {
    let mut loss = 0.0;
    for (i, &c) in y.iter().enumerate() {
        let row = logits.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
        loss -= row[c as usize].max(f64::MIN_POSITIVE).ln();
    }
    loss / y.len() as f64
}

/// Multinomial logistic regression by full-batch gradient descent from a
/// random start. `x` is used as given (no row scaling here).
pub fn fit_logreg<R: Rng>(
    x: &DenseMatrix<f64>,
    y: &[u32],
    num_classes: usize,
    cfg: &LogRegConfig,
    rng: &mut R,
) -> Result<LogReg> {
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(Error::shape("fit_logreg", format!("{} labels", x.rows()), y.len().to_string()));
    }
    if let Some(&c) = y.iter().find(|&&c| c as usize >= num_classes) {
        return Err(Error::InvalidArgument(format!("label {c} outside {num_classes} classes")));
    }
    let (m, d) = x.shape();
    let mut weight = DenseMatrix::from_fn(d, num_classes, |_, _| rng.gen_range(-0.01..0.01));
    let mut bias = vec![0.0; num_classes];
    let mut losses = Vec::new();
    let penalty = |w: &DenseMatrix<f64>| 0.5 * cfg.l2 * w.as_slice().iter().map(|v| v * v).sum::<f64>();
    for _ in 0..cfg.max_iter {
        let mut probs = x.matmul(&weight, Parallelism::Sequential)?;
        for i in 0..m {
            for (o, b) in probs.row_mut(i).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let loss = softmax_ce(&mut probs, y) + penalty(&weight);
        let converged = losses.last().is_some_and(|&prev: &f64| (prev - loss).abs() < cfg.tol);
        losses.push(loss);
        if converged {
            break;
        }
        for (i, &c) in y.iter().enumerate() {
            probs.row_mut(i)[c as usize] -= 1.0;
        }
        probs.scale(1.0 / m as f64);
        let mut grad_w = x.t_matmul(&probs, Parallelism::Sequential)?;
        for (g, w) in grad_w.as_mut_slice().iter_mut().zip(weight.as_slice()) {
            *g += cfg.l2 * w;
        }
        for (j, b) in bias.iter_mut().enumerate() {
            let g: f64 = (0..m).map(|i| probs.get(i, j)).sum();
            *b -= cfg.step * g;
        }
        for (w, g) in weight.as_mut_slice().iter_mut().zip(grad_w.as_slice()) {
            *w -= cfg.step * g;
        }
    }
    Ok(LogReg { weight, bias, losses })
}

/// Micro-averaged F1 over multi-label indicator rows.
pub fn micro_f1(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        for (&a, &b) in p.iter().zip(t) {
            match (a, b) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

fn one_hot(labels: &[u32], k: usize) -> Vec<Vec<bool>> {
    labels.iter().map(|&c| (0..k).map(|j| j == c as usize).collect()).collect()
}

/// Test accuracy of logistic regression over `runs` random restarts; also
/// fills `micro_f1`.
#[allow(clippy::too_many_arguments)]
pub fn logreg_classify(
    z: &DenseMatrix<f64>,
    labels: &[u32],
    num_classes: usize,
    train: &[u32],
    test: &[u32],
    runs: usize,
    seed: u64,
    cfg: &LogRegConfig,
) -> Result<Metrics> {
    if labels.len() != z.rows() {
        return Err(Error::Dimension(format!("{} labels for {} embeddings", labels.len(), z.rows())));
    }
    if train.is_empty() || test.is_empty() || runs == 0 {
        return Err(Error::InvalidArgument("classification needs train and test nodes and at least one run".into()));
    }
    let x = if cfg.normalize_rows { l2_rows(z) } else { z.clone() };
    let idx = |s: &[u32]| s.iter().map(|&i| i as usize).collect::<Vec<_>>();
    let (xtr, xte) = (x.select_rows(&idx(train)), x.select_rows(&idx(test)));
    let ytr: Vec<u32> = train.iter().map(|&i| labels[i as usize]).collect();
    let yte: Vec<u32> = test.iter().map(|&i| labels[i as usize]).collect();
    let present: HashSet<u32> = ytr.iter().copied().collect();
    if present.len() < num_classes {
        log::warn!("{} of {num_classes} classes absent from the training split", num_classes - present.len());
    }
    let results = (0..runs)
        .into_par_iter()
        .map(|run| {
            let model = fit_logreg(&xtr, &ytr, num_classes, cfg, &mut run_rng(seed, run))?;
            let pred = model.predict(&xte);
            let acc = pred.iter().zip(&yte).filter(|(a, b)| a == b).count() as f64 / yte.len() as f64;
            let f1 = micro_f1(&one_hot(&pred, num_classes), &one_hot(&yte, num_classes));
            Ok((acc, f1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = Metrics::from_values("classify", "", results.iter().map(|r| r.0).collect());
    m.micro_f1 = Some(mean_std(&results.iter().map(|r| r.1).collect::<Vec<_>>()).0);
    Ok(m)
}

/// One-vs-rest multi-label variant: one binary model per label, threshold 0.5,
/// micro-F1 on the test nodes averaged over runs.
#[allow(clippy::too_many_arguments)]
pub fn logreg_multilabel(
    z: &DenseMatrix<f64>,
    labels: &[Vec<bool>],
    train: &[u32],
    test: &[u32],
    runs: usize,
    seed: u64,
    cfg: &LogRegConfig,
) -> Result<Metrics> {
    if labels.len() != z.rows() {
        return Err(Error::Dimension(format!("{} label rows for {} embeddings", labels.len(), z.rows())));
    }
    let k = labels.first().map_or(0, Vec::len);
    let x = if cfg.normalize_rows { l2_rows(z) } else { z.clone() };
    let idx = |s: &[u32]| s.iter().map(|&i| i as usize).collect::<Vec<_>>();
    let (xtr, xte) = (x.select_rows(&idx(train)), x.select_rows(&idx(test)));
    let truth: Vec<Vec<bool>> = test.iter().map(|&i| labels[i as usize].clone()).collect();
    let values = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(seed, run);
            let mut pred = vec![vec![false; k]; test.len()];
            for j in 0..k {
                let y: Vec<u32> = train.iter().map(|&i| labels[i as usize][j] as u32).collect();
                let model = fit_logreg(&xtr, &y, 2, cfg, &mut rng)?;
                let logits = model.logits(&xte);
                for (p, row) in pred.iter_mut().zip(logits.iter_rows()) {
                    // p(1) > 0.5 exactly when the positive logit wins
                    p[j] = row[1] > row[0];
                }
            }
            Ok(micro_f1(&pred, &truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = Metrics::from_values("classify_multilabel", "", values);
    m.micro_f1 = Some(m.mean);
    Ok(m)
}

// ---------------------------------------------------------------- clustering

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Cluster the directions of the embeddings (rows scaled to unit L2 norm).
    pub normalize_rows: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300, tol: 1e-8, normalize_rows: true }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seed<R: Rng>(x: &DenseMatrix<f64>, k: usize, rng: &mut R) -> DenseMatrix<f64> {
    let n = x.rows();
    let mut centers = DenseMatrix::zeros(k, x.cols());
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centers
}

/// Lloyd iterations from k-means++ seeds, best inertia over restarts.
/// Returns (assignment, inertia).
pub fn kmeans<R: Rng>(x: &DenseMatrix<f64>, k: usize, cfg: &KMeansConfig, rng: &mut R) -> Result<(Vec<u32>, f64)> {
    let (n, d) = x.shape();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} for {n} points")));
    }
    let mut best: Option<(Vec<u32>, f64)> = None;
    for _ in 0..cfg.restarts.max(1) {
        let mut centers = plus_plus_seed(x, k, rng);
        let mut assign = vec![0u32; n];
        let mut inertia = f64::INFINITY;
        for _ in 0..cfg.max_iter {
            let mut new_inertia = 0.0;
            let mut dists = vec![0.0; n];
            for i in 0..n {
                let (mut bc, mut bd) = (0, f64::INFINITY);
                for c in 0..k {
                    let dd = sq_dist(x.row(i), centers.row(c));
                    if dd < bd {
                        bc = c;
                        bd = dd;
                    }
                }
                assign[i] = bc as u32;
                dists[i] = bd;
                new_inertia += bd;
            }
            let mut sums = DenseMatrix::<f64>::zeros(k, d);
            let mut counts = vec![0usize; k];
            for i in 0..n {
                let c = assign[i] as usize;
                counts[c] += 1;
                for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // reseed at the point farthest from its center
                    let far = (0..n).max_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap();
                    dists[far] = 0.0;
                    centers.row_mut(c).copy_from_slice(x.row(far));
                } else {
                    let inv = 1.0 / counts[c] as f64;
                    for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                        *dst = s * inv;
                    }
                }
            }
            let done = inertia.is_finite() && inertia - new_inertia <= cfg.tol * inertia.max(1.0);
            inertia = new_inertia;
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((assign, inertia));
        }
    }
    Ok(best.unwrap())
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI with the mutual information divided by the mean of the two entropies.
pub fn nmi(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("nmi", a.len().to_string(), b.len().to_string()));
    }
    let ka = *a.iter().max().unwrap() as usize + 1;
    let kb = *b.iter().max().unwrap() as usize + 1;
    let mut joint = vec![0usize; ka * kb];
    let (mut ca, mut cb) = (vec![0usize; ka], vec![0usize; kb]);
    for (&x, &y) in a.iter().zip(b) {
        joint[x as usize * kb + y as usize] += 1;
        ca[x as usize] += 1;
        cb[y as usize] += 1;
    }
    let n = a.len() as f64;
    let (ha, hb) = (entropy(ca.iter().copied(), n), entropy(cb.iter().copied(), n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}

pub fn kmeans_nmi(z: &DenseMatrix<f64>, k: usize, labels: &[u32], runs: usize, seed: u64, cfg: &KMeansConfig) -> Result<Metrics> {
    if labels.len() != z.rows() {
        return Err(Error::Dimension(format!("{} labels for {} embeddings", labels.len(), z.rows())));
    }
    let x = if cfg.normalize_rows { l2_rows(z) } else { z.clone() };
    let values = (0..runs)
        .into_par_iter()
        .map(|run| {
            let (assign, _) = kmeans(&x, k, cfg, &mut run_rng(seed, run))?;
            nmi(&assign, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_values("cluster", "", values))
}

// ---------------------------------------------------------------- link prediction

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkScorer {
    /// Probability the trained hop classifier assigns to the 1-hop category.
    #[default]
    HopClassifier,
    InnerProduct,
}

impl LinkScorer {
    pub fn score(&self, params: &ModelParams<f64>, z: &DenseMatrix<f64>, u: u32, v: u32) -> f64 {
        let (zu, zv) = (z.row(u as usize), z.row(v as usize));
        match self {
            LinkScorer::HopClassifier => pair_probabilities(params, zu, zv)[0],
            LinkScorer::InnerProduct => dot(zu, zv),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkSplit {
    pub damaged: Graph,
    pub positives: Vec<(u32, u32)>,
    pub negatives: Vec<(u32, u32)>,
}

/// Removes `round(ratio · m)` uniformly chosen edges and draws as many
/// uniform node pairs that are not edges of the original graph.
pub fn split_edges<R: Rng>(graph: &Graph, ratio: f64, rng: &mut R) -> Result<LinkSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("removal ratio {ratio} outside (0, 1)")));
    }
    let n = graph.num_nodes();
    let mut edges: Vec<(u32, u32)> = graph.edges().collect();
    let removed = ((ratio * edges.len() as f64).round() as usize).min(edges.len());
    if removed == 0 {
        return Err(Error::InvalidArgument("no edges to remove".into()));
    }
    let max_pairs = n * (n - 1) / 2;
    if max_pairs - edges.len() < removed {
        return Err(Error::InvalidArgument("graph too dense for equal-count negatives".into()));
    }
    edges.shuffle(rng);
    let positives = edges[..removed].to_vec();
    let damaged = Graph::from_edges(n, edges[removed..].iter().copied())?;
    let mut seen = HashSet::with_capacity(removed);
    let mut negatives = Vec::with_capacity(removed);
    while negatives.len() < removed {
        let u = rng.gen_range(0..n as u32);
        let v = rng.gen_range(0..n as u32);
        if u == v || graph.has_edge(u as usize, v as usize) {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            negatives.push(key);
        }
    }
    Ok(LinkSplit { damaged, positives, negatives })
}

/// AUC of `scorer` on one split given parameters trained on the damaged graph.
pub fn link_auc(split: &LinkSplit, params: &ModelParams<f64>, z: &DenseMatrix<f64>, scorer: LinkScorer) -> Result<f64> {
    let mut scores = Vec::with_capacity(split.positives.len() * 2);
    let mut labels = Vec::with_capacity(scores.capacity());
    for (pairs, label) in [(&split.positives, true), (&split.negatives, false)] {
        for &(u, v) in pairs.iter() {
            scores.push(scorer.score(params, z, u, v));
            labels.push(label);
        }
    }
    auc(&scores, &labels)
}

/// Repeats split → retrain on damaged graph → score, `runs` times. `train_fn`
/// receives the damaged graph and the run index and returns the trained
/// parameters with their embeddings.
pub fn link_prediction<F>(
    graph: &Graph,
    ratio: f64,
    runs: usize,
    seed: u64,
    scorer: LinkScorer,
    mut train_fn: F,
) -> Result<Metrics>
where
    F: FnMut(&Graph, usize) -> Result<(ModelParams<f64>, DenseMatrix<f64>)>,
{
    let mut values = Vec::with_capacity(runs);
    for run in 0..runs {
        let split = split_edges(graph, ratio, &mut run_rng(seed, run))?;
        let (params, z) = train_fn(&split.damaged, run)?;
        values.push(link_auc(&split, &params, &z, scorer)?);
    }
    Ok(Metrics::from_values("linkpred", "", values))
}
