#![allow(dead_code)]

use hopembed::model::{backward, encode_cached, forward_loss, LossOptions};
use hopembed::{DenseMatrix, EncoderInput, FeatureMatrix, Graph, MergePolicy, ModelParams, PairBatch, Parallelism};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const UNREACHABLE: u32 = u32::MAX;

pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in u + 1..n as u32 {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, edges).unwrap()
}

/// All-pairs hop distances by Floyd–Warshall on the adjacency matrix.
pub fn floyd_warshall(g: &Graph) -> Vec<Vec<u32>> {
    let n = g.num_nodes();
    let mut d = vec![vec![UNREACHABLE; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
        for &j in g.neighbors(i) {
            row[j as usize] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if d[i][k] == UNREACHABLE {
                continue;
            }
            for j in 0..n {
                if d[k][j] != UNREACHABLE && d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Connected 12-node graph: a ring with three chords.
pub fn toy12() -> Graph {
    let mut edges: Vec<(u32, u32)> = (0..12).map(|i| (i, (i + 1) % 12)).collect();
    edges.extend([(0, 6), (2, 9), (4, 7)]);
    Graph::from_edges(12, edges).unwrap()
}

pub fn path(n: usize) -> Graph {
    Graph::from_edges(n, (0..n as u32 - 1).map(|i| (i, i + 1))).unwrap()
}

pub fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMatrix::new(DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
}

pub fn cora_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora")
}

/// Every ordered pair of distinct nodes, labeled by category from the oracle distances.
pub fn all_pairs(g: &Graph, policy: &MergePolicy) -> PairBatch {
    let d = floyd_warshall(g);
    let mut batch = PairBatch::default();
    for i in 0..g.num_nodes() {
        for j in 0..g.num_nodes() {
            if i == j || d[i][j] == UNREACHABLE {
                continue;
            }
            let label = policy.boundaries().iter().position(|&b| d[i][j] <= b).unwrap_or(policy.boundaries().len());
            batch.push(i as u32, j as u32, label as u8);
        }
    }
    batch
}

#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

fn loss_of(input: &EncoderInput<f64>, params: &ModelParams<f64>, batch: &PairBatch) -> f64 {
    forward_loss(batch, input, params, LossOptions::default(), Parallelism::Sequential).unwrap().0
}

/// Signs of every ReLU input and every pair difference; finite differences are
/// only meaningful while this stays fixed.
fn kink_pattern(input: &EncoderInput<f64>, params: &ModelParams<f64>, batch: &PairBatch) -> Vec<i8> {
    let cache = encode_cached(input, params, Parallelism::Sequential).unwrap();
    let sign = |v: f64| (v > 0.0) as i8 - (v < 0.0) as i8;
    let mut out: Vec<i8> = cache.pre.iter().flat_map(|m| m.as_slice().iter().map(|&v| sign(v))).collect();
    let z = &cache.embeddings;
    for p in 0..batch.len() {
        let (t, c) = (z.row(batch.targets[p] as usize), z.row(batch.contexts[p] as usize));
        out.extend(t.iter().zip(c).map(|(a, b)| sign(a - b)));
    }
    out
}

/// Central differences against `backward` for every parameter entry. Entries
/// whose ±h perturbation crosses a ReLU or |·| kink are skipped. The relative
/// error floor of 1e-5 keeps roundoff on near-zero gradients from dominating.
pub fn gradient_check(input: &EncoderInput<f64>, params: &ModelParams<f64>, batch: &PairBatch, h: f64) -> GradientCheck {
    let (_, cache) = forward_loss(batch, input, params, LossOptions::default(), Parallelism::Sequential).unwrap();
    let grads = backward(&cache, batch, input, params, Parallelism::Sequential).unwrap();
    let base = kink_pattern(input, params, batch);
    let mut out = GradientCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, g) in analytic.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][k] -= h;
            if kink_pattern(input, &plus, batch) != base || kink_pattern(input, &minus, batch) != base {
                out.skipped += 1;
                continue;
            }
            let numeric = (loss_of(input, &plus, batch) - loss_of(input, &minus, batch)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.checked += 1;
        }
    }
    out
}
