use std::fs;
use std::path::{Path, PathBuf};

use hopembed::eval::{KMeansConfig, LinkScorer, LogRegConfig};
use hopembed::trainer::{EPOCH_GRID, LR_GRID};
use hopembed::{DatasetPaths, Error, MergePolicy, Result, TrainConfig};
use serde::{Deserialize, Serialize};

/// Environment variable naming the directory relative dataset paths resolve against.
pub const DATA_ROOT_ENV: &str = "HOPEMBED_DATA_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Short name used in metric files; defaults to the edge file's directory name.
    #[serde(default)]
    pub dataset_name: Option<String>,
    pub dataset: DatasetPaths,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    /// When set, overrides the training and sampler seeds.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub per_class_train: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { per_class_train: 20, num_val: 500, num_test: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub classify_runs: usize,
    pub cluster_runs: usize,
    pub linkpred_runs: usize,
    pub removal_ratios: Vec<f64>,
    pub scorer: LinkScorer,
    /// Training epochs for each link-prediction retrain; defaults to `train.epochs`.
    pub linkpred_epochs: Option<usize>,
    /// Used when the dataset has no split files.
    pub split: SplitConfig,
    pub logreg: LogRegConfig,
    pub kmeans: KMeansConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            classify_runs: 50,
            cluster_runs: 10,
            linkpred_runs: 10,
            removal_ratios: vec![0.2, 0.5, 0.7],
            scorer: LinkScorer::default(),
            linkpred_epochs: None,
            split: SplitConfig::default(),
            logreg: LogRegConfig::default(),
            kmeans: KMeansConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lrs: Vec<f64>,
    pub epochs: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lrs: LR_GRID.to_vec(), epochs: EPOCH_GRID.to_vec() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub policies: Vec<MergePolicy>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { policies: MergePolicy::ablation_family(), seeds: vec![0] }
    }
}

impl RunConfigFile {
    /// Reads and validates a config. Relative dataset paths resolve against
    /// `data_root` when given, else against the config file's directory;
    /// a relative output directory resolves against the working directory.
    pub fn load(path: &Path, data_root: Option<&Path>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let mut cfg: RunConfigFile = serde_json::from_str(&text)?;
        let base = match data_root {
            Some(r) => r.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        cfg.dataset = cfg.dataset.resolved(&base);
        cfg.apply_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = Some(s);
            self.train.seed = s;
            self.train.sampler.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let e = &self.eval;
        if e.classify_runs == 0 || e.cluster_runs == 0 || e.linkpred_runs == 0 {
            return Err(Error::Config("evaluation run counts must be positive".into()));
        }
        if let Some(r) = e.removal_ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::Config(format!("removal ratio {r} outside (0, 1)")));
        }
        if e.linkpred_epochs == Some(0) {
            return Err(Error::Config("linkpred_epochs must be positive".into()));
        }
        if self.grid.lrs.iter().any(|&l| !(l > 0.0)) || self.grid.epochs.contains(&0) {
            return Err(Error::Config("grid learning rates and epochs must be positive".into()));
        }
        if self.ablation.policies.is_empty() || self.ablation.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one policy and one seed".into()));
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            self.dataset
                .edges
                .parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }
}
