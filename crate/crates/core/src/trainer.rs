//! Self-supervised training loop: sample pairs, forward, backward, Adam.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::context::{ContextIndex, MergePolicy};
use crate::dataset::{FeatureMatrix, IdMap};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormalizedAdjacency};
use crate::linalg::{DenseMatrix, Parallelism};
use crate::model::{backward, encode_input, forward_loss, EncoderInput, LossOptions, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::sampler::{PairSampler, SamplerConfig};
use crate::scalar::Scalar;

/// Learning rates and epoch counts searched by default.
pub const LR_GRID: [f64; 5] = [0.001, 0.003, 0.005, 0.007, 0.009];
pub const EPOCH_GRID: [usize; 3] = [100, 200, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub policy: MergePolicy,
    pub embedding_dim: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub sampler: SamplerConfig,
    /// Seeds parameter initialization and dropout masks.
    pub seed: u64,
    /// Defaults to `ceil(n / targets_per_batch)`.
    pub batches_per_epoch: Option<usize>,
    pub weight_decay: f64,
    pub interaction_dropout: f64,
    /// Rescale feature rows to unit L1 norm before training.
    pub normalize_features: bool,
    pub parallelism: Parallelism,
    /// Mean epoch loss above this (or non-finite) aborts the run.
    pub divergence_threshold: f64,
    /// Epochs after which parameters and embeddings are kept, so one long run
    /// also yields every shorter run of the same seed.
    pub snapshot_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            policy: MergePolicy::default_four(),
            embedding_dim: 512,
            layers: 1,
            epochs: 300,
            lr: 0.001,
            sampler: SamplerConfig::default(),
            seed: 0,
            batches_per_epoch: None,
            weight_decay: 0.0,
            interaction_dropout: 0.0,
            normalize_features: true,
            parallelism: Parallelism::Sequential,
            divergence_threshold: 1e6,
            snapshot_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.embedding_dim == 0 || self.layers == 0 || self.epochs == 0 {
            return Err(Error::Config("embedding_dim, layers and epochs must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::Config("batches_per_epoch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.interaction_dropout) || self.weight_decay < 0.0 {
            return Err(Error::Config("dropout must lie in [0, 1) and weight decay be non-negative".into()));
        }
        if let Some(&e) = self.snapshot_epochs.iter().find(|&&e| e == 0 || e > self.epochs) {
            return Err(Error::Config(format!("snapshot epoch {e} outside 1..={}", self.epochs)));
        }
        Ok(())
    }

    pub fn batches_for(&self, num_nodes: usize) -> usize {
        self.batches_per_epoch.unwrap_or_else(|| num_nodes.div_ceil(self.sampler.targets_per_batch).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epoch_losses: Vec<f64>,
    pub wall_time_secs: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub num_nodes: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub policy: MergePolicy,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub inputs_address: Option<String>,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default)]
    pub embedding_path: Option<PathBuf>,
}

impl RunReport {
    /// Mean loss over the first and the last `fraction` of epochs.
    pub fn head_tail_means(&self, fraction: f64) -> (f64, f64) {
        let n = self.epoch_losses.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&self.epoch_losses[..k]), mean(&self.epoch_losses[n - k..]))
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub epoch: usize,
    pub params: ModelParams<T>,
    pub optimizer: AdamState<T>,
    pub embeddings: DenseMatrix<T>,
    pub mean_loss: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub optimizer: AdamState<T>,
    pub embeddings: DenseMatrix<T>,
    pub report: RunReport,
    pub snapshots: Vec<Snapshot<T>>,
}

/// The state of a run after some number of epochs.
#[derive(Debug, Clone, Copy)]
pub struct EpochView<'a, T> {
    pub epoch: usize,
    pub params: &'a ModelParams<T>,
    pub optimizer: &'a AdamState<T>,
    pub embeddings: &'a DenseMatrix<T>,
    pub epoch_losses: &'a [f64],
    pub elapsed_secs: f64,
}

impl<T: Scalar> TrainOutcome<T> {
    /// State after `epoch` epochs: the final state or a snapshot.
    pub fn at_epoch(&self, epoch: usize) -> Option<EpochView<'_, T>> {
        let losses = self.report.epoch_losses.get(..epoch)?;
        if epoch == self.report.epochs {
            return Some(EpochView {
                epoch,
                params: &self.params,
                optimizer: &self.optimizer,
                embeddings: &self.embeddings,
                epoch_losses: losses,
                elapsed_secs: self.report.wall_time_secs,
            });
        }
        self.snapshots.iter().find(|s| s.epoch == epoch).map(|s| EpochView {
            epoch,
            params: &s.params,
            optimizer: &s.optimizer,
            embeddings: &s.embeddings,
            epoch_losses: losses,
            elapsed_secs: s.elapsed_secs,
        })
    }
}

/// Trains on `graph` with a prebuilt context index (its cap must match the policy).
pub fn train<T: Scalar>(
    graph: &Graph,
    features: &FeatureMatrix<T>,
    index: &ContextIndex,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_inner(graph, features, index, config, None)
}

/// Builds the context index and trains.
pub fn train_from_scratch<T: Scalar>(
    graph: &Graph,
    features: &FeatureMatrix<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let index = ContextIndex::for_policy(graph, &config.policy, config.parallelism)?;
    train(graph, features, &index, config)
}

/// Like [`train`], additionally writing the final parameters and optimizer
/// state to `checkpoint`. If the run diverges, the parameters from the last
/// finished epoch are written there instead before the error is returned.
pub fn train_checkpointed<T: Scalar>(
    graph: &Graph,
    features: &FeatureMatrix<T>,
    index: &ContextIndex,
    config: &TrainConfig,
    checkpoint: &Path,
) -> Result<TrainOutcome<T>> {
    let mut outcome = train_inner(graph, features, index, config, Some(checkpoint))?;
    save_checkpoint(checkpoint, &outcome.params, Some(&outcome.optimizer))?;
    outcome.report.checkpoint_path = Some(checkpoint.to_path_buf());
    Ok(outcome)
}

fn dropout_mask<T: Scalar, R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> DenseMatrix<T> {
    let keep = T::of(1.0 / (1.0 - p));
    DenseMatrix::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < p { T::zero() } else { keep })
}

fn train_inner<T: Scalar>(
    graph: &Graph,
    features: &FeatureMatrix<T>,
    index: &ContextIndex,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let started = Instant::now();
    let n = graph.num_nodes();
    if features.rows() != n {
        return Err(Error::Dimension(format!("{} feature rows for {n} nodes", features.rows())));
    }
    let features = if config.normalize_features { features.row_normalized() } else { features.clone() };
    let par = config.parallelism;
    let input = EncoderInput::new(NormalizedAdjacency::new(graph, true), &features)?;
    let components = graph.components();
    let mut sampler = PairSampler::new(index, &components, &config.policy, config.sampler.clone())?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params =
        ModelParams::init(features.cols(), config.embedding_dim, config.layers, config.policy.alpha(), &mut init_rng)?;
    let mut optimizer = AdamState::new(&params, AdamConfig { lr: config.lr, ..AdamConfig::default() })?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);

    let batches = config.batches_for(n);
    let mut last_good = params.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut snapshots = Vec::new();
    let wd = T::of(config.weight_decay);

    let diverged = |epoch: usize, loss: f64, last_good: &ModelParams<T>| -> Error {
        if let Some(path) = checkpoint {
            if let Err(e) = save_checkpoint(path, last_good, None) {
                log::error!("could not save last good checkpoint: {e}");
            }
        }
        Error::Diverged { epoch, loss }
    };

    for epoch in 1..=config.epochs {
        let mut sum = 0.0;
        for _ in 0..batches {
            let batch = sampler.next_batch()?;
            let options = LossOptions {
                pair_weights: None,
                interaction_mask: (config.interaction_dropout > 0.0)
                    .then(|| dropout_mask(batch.len(), config.embedding_dim, config.interaction_dropout, &mut dropout_rng)),
            };
            let (loss, cache) = match forward_loss(&batch, &input, &params, options, par) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(diverged(epoch, f64::NAN, &last_good)),
                Err(e) => return Err(e),
            };
            let loss = loss.as_f64();
            if loss > config.divergence_threshold {
                return Err(diverged(epoch, loss, &last_good));
            }
            let mut grads = backward(&cache, &batch, &input, &params, par)?;
            if config.weight_decay > 0.0 {
                grads.add_scaled(wd, &params);
            }
            match adam_step(&mut params, &grads, &mut optimizer) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => return Err(diverged(epoch, loss, &last_good)),
                Err(e) => return Err(e),
            }
            sum += loss;
        }
        let mean = sum / batches as f64;
        if !mean.is_finite() || mean > config.divergence_threshold || !params.all_finite() {
            return Err(diverged(epoch, mean, &last_good));
        }
        epoch_losses.push(mean);
        last_good.clone_from(&params);
        if epoch % 50 == 0 || epoch == config.epochs {
            log::info!("epoch {epoch}/{}: mean loss {mean:.5}", config.epochs);
        }
        if config.snapshot_epochs.contains(&epoch) && epoch != config.epochs {
            snapshots.push(Snapshot {
                epoch,
                params: params.clone(),
                optimizer: optimizer.clone(),
                embeddings: encode_input(&input, &params, par)?,
                mean_loss: mean,
                elapsed_secs: started.elapsed().as_secs_f64(),
            });
        }
    }

    let embeddings = encode_input(&input, &params, par)?;
    let report = RunReport {
        final_loss: *epoch_losses.last().unwrap(),
        epoch_losses,
        wall_time_secs: started.elapsed().as_secs_f64(),
        steps: config.epochs * batches,
        num_nodes: n,
        embedding_dim: config.embedding_dim,
        seed: config.seed,
        lr: config.lr,
        epochs: config.epochs,
        policy: config.policy.clone(),
        config_hash: None,
        inputs_address: None,
        checkpoint_path: None,
        embedding_path: None,
    };
    Ok(TrainOutcome { params, optimizer, embeddings, report, snapshots })
}

/// Writes `# n q` and then `original_id v1 ... vq` per node.
pub fn export_embeddings<T: Scalar>(z: &DenseMatrix<T>, path: &Path, ids: &IdMap) -> Result<()> {
    if !z.all_finite() {
        return Err(Error::NonFinite("embeddings to export".into()));
    }
    if ids.len() != z.rows() {
        return Err(Error::Dimension(format!("{} ids for {} embedding rows", ids.len(), z.rows())));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# {} {}", z.rows(), z.cols()).map_err(io)?;
    for (i, row) in z.iter_rows().enumerate() {
        write!(w, "{}", ids.original(i)).map_err(io)?;
        for v in row {
            write!(w, " {v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a file written by [`export_embeddings`]; rows come back in file order.
pub fn import_embeddings(path: &Path) -> Result<(Vec<u64>, DenseMatrix<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: &str| Error::Parse { path: path.to_path_buf(), line, message: msg.to_string() };
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty embedding file"))?;
    let dims: Vec<usize> = header
        .strip_prefix('#')
        .ok_or_else(|| bad(1, "missing \"# n q\" header"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(1, "bad header")))
        .collect::<Result<_>>()?;
    let [n, q] = dims[..] else {
        return Err(bad(1, "header must be \"# n q\""));
    };
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * q);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let id = toks.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(i + 1, "bad node id"))?;
        let before = data.len();
        for t in toks {
            data.push(t.parse::<f64>().map_err(|_| bad(i + 1, "bad value"))?);
        }
        if data.len() - before != q {
            return Err(bad(i + 1, "row length differs from header"));
        }
        ids.push(id);
    }
    if ids.len() != n {
        return Err(Error::Dimension(format!("header promises {n} rows, found {}", ids.len())));
    }
    Ok((ids, DenseMatrix::from_vec(n, q, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.txt");
        let z = DenseMatrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let ids = IdMap::from_sorted_unique(vec![42]);
        export_embeddings(&z, &p, &ids).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "# 1 3\n42 1 2 3\n");
    }

    #[test]
    fn export_import_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.txt");
        let z = DenseMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let ids = IdMap::from_sorted_unique(vec![5, 9, 100]);
        export_embeddings(&z, &p, &ids).unwrap();
        let (back_ids, back) = import_embeddings(&p).unwrap();
        assert_eq!(back_ids, vec![5, 9, 100]);
        assert_eq!(back, z);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.lr = 0.0;
        assert!(c.validate().is_err());
        let c = TrainConfig { snapshot_epochs: vec![400], ..TrainConfig::default() };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"policy": [1, 2], "epochs": 5}"#).unwrap();
        assert_eq!(c.policy.alpha(), 3);
        assert_eq!(c.batches_for(1000), 4);
    }
}
