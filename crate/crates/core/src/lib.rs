//! Node embeddings learned without labels by predicting, for pairs of nodes,
//! which merged hop-distance category separates them.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which training uses by default.

pub mod checkpoint;
pub mod context;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod scalar;
pub mod trainer;

pub use context::{bfs_hops, ContextIndex, Hop, MergePolicy};
pub use dataset::{load_dataset, load_graph, Dataset, DatasetPaths, FeatureFormat, FeatureMatrix, IdMap, LabelSet};
pub use error::{Error, Result};
pub use graph::{Components, Graph, NormalizedAdjacency};
pub use linalg::{CsrMatrix, DenseMatrix, Parallelism};
pub use model::{EncoderInput, ModelParams};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use sampler::{PairBatch, PairSampler, SamplerConfig};
pub use scalar::Scalar;
pub use trainer::{train, RunReport, TrainConfig, TrainOutcome};

pub type Matrix = DenseMatrix<f64>;
pub type SparseMatrix = CsrMatrix<f64>;
pub type Features = FeatureMatrix<f64>;
pub type Adjacency = NormalizedAdjacency<f64>;
pub type Model = ModelParams<f64>;
pub type Optimizer = AdamState<f64>;
pub type Outcome = TrainOutcome<f64>;

pub type Matrix32 = DenseMatrix<f32>;
pub type Model32 = ModelParams<f32>;
