pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod kernel_dt;
pub mod kernels;
pub mod linalg;
pub mod linear_dt;
pub mod numopt;
pub mod pairs;
pub mod pipeline;
pub mod predictors;
pub mod qp;
pub mod regression;
pub mod scalar;
pub mod svm;
pub mod text;

pub use classifier::{Classifier, KernelClassifier, LinearClassifier};
pub use data::{AugmentedVector, ClassId, ClassSplit, TextCorpus, VisualDataset};
pub use error::{Error, Result};
pub use evaluation::{BenchmarkConfig, BenchmarkReport, RocResult, SyntheticTask};
pub use kernels::{KernelMatrix, KernelSpec};
pub use pipeline::{Formulation, PipelineConfig};
