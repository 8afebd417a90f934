use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hopembed::checkpoint::{load_checkpoint, save_checkpoint};
use hopembed::digest::{config_hash, inputs_address};
use hopembed::eval::{kmeans_nmi, link_prediction, logreg_classify, mean_std, Metrics};
use hopembed::model::encode_input;
use hopembed::trainer::{export_embeddings, import_embeddings, train_checkpointed, train_from_scratch, EpochView};
use hopembed::{
    load_dataset, ContextIndex, Dataset, DenseMatrix, EncoderInput, LabelSet, MergePolicy, NormalizedAdjacency, Parallelism,
    RunReport, TrainConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfigFile;

/// A failure caused by how the tool was invoked or by missing prerequisites;
/// reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Session {
    pub cfg: RunConfigFile,
    pub config_path: PathBuf,
    pub jobs: usize,
}

struct Loaded {
    data: Dataset<f64>,
    inputs: String,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_json<S: Serialize>(value: &S) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

impl Session {
    fn par(&self) -> Parallelism {
        if self.jobs > 1 {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }

    fn load(&self) -> anyhow::Result<Loaded> {
        let data = load_dataset::<f64>(&self.cfg.dataset)?;
        let inputs = inputs_address(&self.cfg.dataset.all())?;
        log::info!(
            "loaded {}: {} nodes, {} edges, {} features",
            self.cfg.dataset_name(),
            data.graph.num_nodes(),
            data.graph.num_edges(),
            data.features.cols()
        );
        Ok(Loaded { data, inputs })
    }

    fn cache_path(&self, inputs: &str, cap: u32) -> PathBuf {
        self.cfg.output_dir.join("cache").join(format!("{}-cap{cap}.hctx", &inputs[..16]))
    }

    fn run_dir(&self, hash: &str) -> PathBuf {
        self.cfg.output_dir.join(hash)
    }

    /// Hash of a training configuration together with its inputs. Settings
    /// that cannot change results (parallelism, snapshots) are left out.
    fn train_hash(&self, train: &TrainConfig, inputs: &str) -> anyhow::Result<String> {
        let mut t = train.clone();
        t.parallelism = Parallelism::default();
        t.snapshot_epochs.clear();
        Ok(config_hash(&(&t, inputs))?)
    }

    fn caps_to_prepare(&self, ablation: bool) -> Vec<u32> {
        let mut caps = vec![self.cfg.train.policy.cap()];
        if ablation {
            caps.extend(self.cfg.ablation.policies.iter().map(MergePolicy::cap));
        }
        caps.sort_unstable();
        caps.dedup();
        caps
    }

    pub fn prepare(&self, ablation: bool) -> anyhow::Result<()> {
        let loaded = self.load()?;
        let graph = &loaded.data.graph;
        fs::create_dir_all(self.cfg.output_dir.join("cache"))?;
        for cap in self.caps_to_prepare(ablation) {
            let path = self.cache_path(&loaded.inputs, cap);
            let index = match fs::read(&path) {
                Ok(bytes) => match ContextIndex::from_bytes(&bytes) {
                    Ok(index) if index.num_nodes() == graph.num_nodes() && index.cap() == cap => {
                        eprintln!("context cache {} already present; nothing to do", path.display());
                        index
                    }
                    _ => {
                        log::warn!("rebuilding unreadable or stale cache {}", path.display());
                        self.build_cache(graph, cap, &path)?
                    }
                },
                Err(_) => self.build_cache(graph, cap, &path)?,
            };
            println!("cache {} (cap {cap})", path.display());
            let totals = index.hop_totals();
            for (h, count) in totals.iter().enumerate() {
                println!("  hop {}: {count} pairs", h + 1);
            }
        }
        Ok(())
    }

    fn build_cache(&self, graph: &hopembed::Graph, cap: u32, path: &Path) -> anyhow::Result<ContextIndex> {
        let index = ContextIndex::build(graph, cap, self.par())?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, index.to_bytes())?;
        fs::rename(&tmp, path)?;
        log::info!("wrote {}", path.display());
        Ok(index)
    }

    fn load_cache(&self, inputs: &str, policy: &MergePolicy) -> anyhow::Result<ContextIndex> {
        let path = self.cache_path(inputs, policy.cap());
        let bytes = fs::read(&path).map_err(|_| {
            usage(format!(
                "context cache {} not found; run `hopembed prepare --config {}{}` first",
                path.display(),
                self.config_path.display(),
                if policy.cap() == self.cfg.train.policy.cap() { "" } else { " --ablation" }
            ))
        })?;
        let index = ContextIndex::from_bytes(&bytes).with_context(|| format!("reading {}", path.display()))?;
        Ok(index)
    }

    /// Trains one configuration unless its artifacts already exist.
    fn train_cell(&self, loaded: &Loaded, index: &ContextIndex, train: &TrainConfig) -> anyhow::Result<RunReport> {
        let hash = self.train_hash(train, &loaded.inputs)?;
        let dir = self.run_dir(&hash);
        let report_path = dir.join("report.json");
        if let Ok(text) = fs::read_to_string(&report_path) {
            if let Ok(report) = serde_json::from_str::<RunReport>(&text) {
                eprintln!("run {hash} already trained; reusing {}", report_path.display());
                return Ok(report);
            }
        }
        fs::create_dir_all(&dir)?;
        let mut train = train.clone();
        train.parallelism = self.par();
        let outcome = train_checkpointed(&loaded.data.graph, &loaded.data.features, index, &train, &dir.join("checkpoint.hckp"))?;
        let view = outcome.at_epoch(train.epochs).expect("final state");
        self.write_cell(loaded, &train, &hash, &view, outcome.report.steps)
    }

    fn write_cell(
        &self,
        loaded: &Loaded,
        train: &TrainConfig,
        hash: &str,
        view: &EpochView<'_, f64>,
        steps: usize,
    ) -> anyhow::Result<RunReport> {
        let dir = self.run_dir(hash);
        fs::create_dir_all(&dir)?;
        let checkpoint = dir.join("checkpoint.hckp");
        let embeddings = dir.join("embeddings.txt");
        save_checkpoint(&checkpoint, view.params, Some(view.optimizer))?;
        export_embeddings(view.embeddings, &embeddings, &loaded.data.ids)?;
        let report = RunReport {
            epoch_losses: view.epoch_losses.to_vec(),
            wall_time_secs: view.elapsed_secs,
            final_loss: *view.epoch_losses.last().unwrap(),
            steps,
            num_nodes: loaded.data.graph.num_nodes(),
            embedding_dim: train.embedding_dim,
            seed: train.seed,
            lr: train.lr,
            epochs: view.epoch,
            policy: train.policy.clone(),
            config_hash: Some(hash.to_string()),
            inputs_address: Some(loaded.inputs.clone()),
            checkpoint_path: Some(checkpoint),
            embedding_path: Some(embeddings),
        };
        let mut cell = train.clone();
        cell.epochs = view.epoch;
        cell.snapshot_epochs.clear();
        write_json(&dir.join("config.json"), &cell)?;
        write_json(&dir.join("report.json"), &report)?;
        Ok(report)
    }

    pub fn train(&self, grid: bool) -> anyhow::Result<()> {
        let loaded = self.load()?;
        let index = self.load_cache(&loaded.inputs, &self.cfg.train.policy)?;
        if !grid {
            let report = self.train_cell(&loaded, &index, &self.cfg.train)?;
            return print_json(&report);
        }

        let epochs = {
            let mut e = self.cfg.grid.epochs.clone();
            e.sort_unstable();
            e.dedup();
            e
        };
        let longest = *epochs.last().unwrap();
        let batches = self.cfg.train.batches_for(loaded.data.graph.num_nodes());
        let cell_config =
            |lr: f64, e: usize| TrainConfig { lr, epochs: e, snapshot_epochs: Vec::new(), ..self.cfg.train.clone() };
        let run_lr = |lr: f64| -> anyhow::Result<Vec<RunReport>> {
            let done: Option<Vec<RunReport>> = epochs
                .iter()
                .map(|&e| {
                    let hash = self.train_hash(&cell_config(lr, e), &loaded.inputs).ok()?;
                    let text = fs::read_to_string(self.run_dir(&hash).join("report.json")).ok()?;
                    serde_json::from_str(&text).ok()
                })
                .collect();
            if let Some(reports) = done {
                eprintln!("grid row lr={lr} already trained; reusing");
                return Ok(reports);
            }
            // one run to the longest epoch count; shorter cells are its snapshots
            let mut train = cell_config(lr, longest);
            train.snapshot_epochs = epochs.clone();
            train.parallelism =
                if self.jobs > 1 && self.cfg.grid.lrs.len() == 1 { Parallelism::Rayon } else { Parallelism::Sequential };
            let outcome = hopembed::train(&loaded.data.graph, &loaded.data.features, &index, &train)?;
            epochs
                .iter()
                .map(|&e| {
                    let cell = cell_config(lr, e);
                    let hash = self.train_hash(&cell, &loaded.inputs)?;
                    let view = outcome.at_epoch(e).expect("snapshot for every grid epoch");
                    self.write_cell(&loaded, &cell, &hash, &view, e * batches)
                })
                .collect()
        };
        let rows: Vec<Vec<RunReport>> = if self.jobs > 1 {
            self.cfg.grid.lrs.par_iter().map(|&lr| run_lr(lr)).collect::<anyhow::Result<_>>()?
        } else {
            self.cfg.grid.lrs.iter().map(|&lr| run_lr(lr)).collect::<anyhow::Result<_>>()?
        };
        let cells: Vec<GridCell> = rows
            .into_iter()
            .flatten()
            .map(|r| GridCell {
                lr: r.lr,
                epochs: r.epochs,
                final_loss: r.final_loss,
                config_hash: r.config_hash.clone().unwrap_or_default(),
                embedding_path: r.embedding_path.clone(),
            })
            .collect();
        let summary = GridSummary {
            dataset: self.cfg.dataset_name(),
            inputs_address: loaded.inputs.clone(),
            seed: self.cfg.train.seed,
            cells,
        };
        let hash = config_hash(&(&self.cfg.train, &self.cfg.grid, &loaded.inputs))?;
        write_json(&self.cfg.output_dir.join(format!("grid-{hash}.json")), &summary)?;
        print_json(&summary)
    }

    fn labels(&self, data: &Dataset<f64>) -> anyhow::Result<LabelSet> {
        let labels = data.labels.clone().ok_or_else(|| usage("this task needs labels; set `dataset.labels` in the config"))?;
        if labels.has_splits() {
            return Ok(labels);
        }
        let s = &self.cfg.eval.split;
        Ok(labels.with_stratified_split(s.per_class_train, s.num_val, s.num_test, s.seed))
    }

    /// Embeddings in dataset node order, from `path` or from the trained run.
    fn embeddings(&self, loaded: &Loaded, path: Option<&Path>) -> anyhow::Result<(DenseMatrix<f64>, PathBuf)> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => {
                let hash = self.train_hash(&self.cfg.train, &loaded.inputs)?;
                let p = self.run_dir(&hash).join("embeddings.txt");
                if !p.exists() {
                    return Err(usage(format!(
                        "no embeddings at {}; run `hopembed train --config {}` first",
                        p.display(),
                        self.config_path.display()
                    )));
                }
                p
            }
        };
        let (ids, z) = import_embeddings(&path)?;
        let ids_map = &loaded.data.ids;
        if ids.len() != ids_map.len() {
            bail!(hopembed::Error::Dimension(format!("{} embedding rows for {} nodes", ids.len(), ids_map.len())));
        }
        let mut out = DenseMatrix::zeros(z.rows(), z.cols());
        let mut seen = vec![false; ids.len()];
        for (row, id) in ids.iter().enumerate() {
            let dense = ids_map
                .dense(*id)
                .filter(|&d| !seen[d])
                .ok_or_else(|| hopembed::Error::InvalidArgument(format!("embedding id {id} unknown or repeated")))?;
            seen[dense] = true;
            out.row_mut(dense).copy_from_slice(z.row(row));
        }
        Ok((out, path))
    }

    fn stamp(&self, mut m: Metrics, loaded: &Loaded, extra: &impl Serialize) -> anyhow::Result<Metrics> {
        m.dataset = self.cfg.dataset_name();
        m.config_hash = Some(config_hash(&(self.train_hash(&self.cfg.train, &loaded.inputs)?, &self.cfg.eval, extra))?);
        m.inputs_address = Some(loaded.inputs.clone());
        m.seed = Some(self.cfg.eval.seed);
        Ok(m)
    }

    pub fn eval(&self, task: Task, embeddings: Option<&Path>, ratio: Option<f64>) -> anyhow::Result<()> {
        let loaded = self.load()?;
        let e = &self.cfg.eval;
        let out_dir = self.run_dir(&self.train_hash(&self.cfg.train, &loaded.inputs)?);
        let results = match task {
            Task::Classify | Task::Cluster => {
                let labels = self.labels(&loaded.data)?;
                let (z, source) = self.embeddings(&loaded, embeddings)?;
                let m = if task == Task::Classify {
                    logreg_classify(
                        &z,
                        &labels.labels,
                        labels.num_classes,
                        &labels.train,
                        &labels.test,
                        e.classify_runs,
                        e.seed,
                        &e.logreg,
                    )?
                } else {
                    kmeans_nmi(&z, labels.num_classes, &labels.labels, e.cluster_runs, e.seed, &e.kmeans)?
                };
                vec![self.stamp(m, &loaded, &source)?]
            }
            Task::Linkpred => {
                let ratios = ratio.map_or_else(|| e.removal_ratios.clone(), |r| vec![r]);
                let mut train = self.cfg.train.clone();
                train.epochs = e.linkpred_epochs.unwrap_or(train.epochs);
                train.snapshot_epochs.clear();
                train.parallelism = self.par();
                let mut out = Vec::new();
                for r in ratios {
                    let m = link_prediction(&loaded.data.graph, r, e.linkpred_runs, e.seed, e.scorer, |g, run| {
                        let mut t = train.clone();
                        t.seed = train.seed.wrapping_add(run as u64);
                        t.sampler.seed = train.sampler.seed.wrapping_add(run as u64);
                        let o = train_from_scratch(g, &loaded.data.features, &t)?;
                        log::info!("linkpred ratio {r} run {run} trained (final loss {:.4})", o.report.final_loss);
                        Ok((o.params, o.embeddings))
                    })?;
                    let mut m = self.stamp(m, &loaded, &(r, train.epochs))?;
                    m.task = format!("linkpred@{r}");
                    out.push(m);
                }
                out
            }
        };
        fs::create_dir_all(&out_dir)?;
        for m in &results {
            let name = format!("metrics-{}.json", m.task.replace('@', "-"));
            write_json(&out_dir.join(name), m)?;
        }
        if results.len() == 1 {
            print_json(&results[0])
        } else {
            print_json(&results)
        }
    }

    pub fn ablate(&self, check_trend: bool) -> anyhow::Result<()> {
        let loaded = self.load()?;
        let labels = self.labels(&loaded.data)?;
        let e = &self.cfg.eval;
        let a = &self.cfg.ablation;
        let jobs: Vec<(usize, u64)> = (0..a.policies.len()).flat_map(|p| a.seeds.iter().map(move |&s| (p, s))).collect();
        let run = |&(p, seed): &(usize, u64)| -> anyhow::Result<f64> {
            let policy = &a.policies[p];
            let index = self.load_cache(&loaded.inputs, policy)?;
            let mut train = self.cfg.train.clone();
            train.policy = policy.clone();
            train.seed = seed;
            train.sampler.seed = seed;
            let report = self.train_cell(&loaded, &index, &train)?;
            let (z, _) = self.embeddings(&loaded, report.embedding_path.as_deref())?;
            let m = logreg_classify(
                &z,
                &labels.labels,
                labels.num_classes,
                &labels.train,
                &labels.test,
                e.classify_runs,
                e.seed,
                &e.logreg,
            )?;
            Ok(m.mean)
        };
        let accs: Vec<f64> = if self.jobs > 1 {
            jobs.par_iter().map(run).collect::<anyhow::Result<_>>()?
        } else {
            jobs.iter().map(run).collect::<anyhow::Result<_>>()?
        };
        let rows: Vec<AblationRow> = a
            .policies
            .iter()
            .enumerate()
            .map(|(p, policy)| {
                let per_seed: Vec<f64> = jobs.iter().zip(&accs).filter(|((q, _), _)| *q == p).map(|(_, &v)| v).collect();
                let (mean, std) = mean_std(&per_seed);
                AblationRow {
                    alpha: policy.alpha(),
                    policy: policy.to_string(),
                    boundaries: policy.boundaries().to_vec(),
                    accuracy: mean,
                    std,
                    per_seed,
                }
            })
            .collect();
        let table = AblationTable {
            dataset: self.cfg.dataset_name(),
            inputs_address: loaded.inputs.clone(),
            seeds: a.seeds.clone(),
            config_hash: config_hash(&(&self.cfg.train, &self.cfg.eval, &self.cfg.ablation, &loaded.inputs))?,
            rows,
        };
        write_json(&self.cfg.output_dir.join(format!("ablation-{}.json", table.config_hash)), &table)?;
        println!("{:>5}  {:<24} {:>9} {:>7}", "alpha", "policy", "accuracy", "std");
        for r in &table.rows {
            println!("{:>5}  {:<24} {:>9.4} {:>7.4}", r.alpha, r.policy, r.accuracy, r.std);
        }
        if check_trend {
            let find = |alpha: usize| table.rows.iter().find(|r| r.alpha == alpha);
            match (find(4), find(2)) {
                (Some(four), Some(two)) if four.accuracy >= two.accuracy => {
                    eprintln!("trend holds: alpha=4 {:.4} >= alpha=2 {:.4}", four.accuracy, two.accuracy)
                }
                (Some(four), Some(two)) => bail!("trend violated: alpha=4 {:.4} < alpha=2 {:.4}", four.accuracy, two.accuracy),
                _ => return Err(usage("--check-trend needs policies with alpha 2 and 4")),
            }
        }
        Ok(())
    }

    pub fn export(&self, checkpoint: &Path, out: &Path) -> anyhow::Result<()> {
        let loaded = self.load()?;
        let (params, _) = load_checkpoint::<f64>(checkpoint)?;
        let features =
            if self.cfg.train.normalize_features { loaded.data.features.row_normalized() } else { loaded.data.features.clone() };
        let input = EncoderInput::new(NormalizedAdjacency::new(&loaded.data.graph, true), &features)?;
        let z = encode_input(&input, &params, self.par())?;
        export_embeddings(&z, out, &loaded.data.ids)?;
        eprintln!("wrote {} embeddings of width {} to {}", z.rows(), z.cols(), out.display());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Classify,
    Cluster,
    Linkpred,
}

#[derive(Serialize)]
struct GridCell {
    lr: f64,
    epochs: usize,
    final_loss: f64,
    config_hash: String,
    embedding_path: Option<PathBuf>,
}

#[derive(Serialize)]
struct GridSummary {
    dataset: String,
    inputs_address: String,
    seed: u64,
    cells: Vec<GridCell>,
}

#[derive(Serialize)]
struct AblationRow {
    alpha: usize,
    policy: String,
    boundaries: Vec<u32>,
    accuracy: f64,
    std: f64,
    per_seed: Vec<f64>,
}

#[derive(Serialize)]
struct AblationTable {
    dataset: String,
    inputs_address: String,
    seeds: Vec<u64>,
    config_hash: String,
    rows: Vec<AblationRow>,
}
