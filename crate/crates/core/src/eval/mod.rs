//! Reconstruction metrics, frozen-latent extraction, RBF-kernel SVM
//! classification, and a PCA embedding for plotting.

mod embed;
mod latents;
mod metrics;
mod svm;

pub use embed::{embed2d, write_embedding_csv, EmbeddingRow};
pub use latents::{extract_latents, LatentBank, LatentRow};
pub use metrics::{recon_metrics, write_metrics_csv, Confusion, ReconMetrics, METRICS_CSV_HEADER};
pub use svm::{classify_eval, rbf_kernel, svm_predict, svm_train, BinarySvm, SvmConfig, SvmModel};

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}
