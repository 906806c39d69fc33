//! Paired voxel / multi-view samples: procedural shape families, an
//! orthographic renderer, binvox and PGM file formats, and dataset manifests.

mod binvox;
mod dataset;
mod generate;
mod pgm;
mod render;
mod voxel;

pub use binvox::{read_binvox, read_binvox_bytes, write_binvox, write_binvox_bytes};
pub use dataset::{
    build_dataset, load_samples, DatasetConfig, DatasetManifest, LoadedSample, Modalities, SampleRecord, Split,
    MANIFEST_FILE,
};
pub use generate::{chair_arm_region, generate_shape, sample_params, Family};
pub use pgm::{read_pgm, write_pgm, write_pgm_bytes};
pub use render::{default_poses, render_views, Image, MultiViewSet, Pose, RenderMode};
pub use voxel::VoxelGrid;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{family}: parameter {index} = {value} outside [{lo}, {hi}]")]
    ParamOutOfRange {
        family: &'static str,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{family}: expected {expected} parameters, got {actual}")]
    ParamCount {
        family: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unknown shape family `{0}`")]
    UnknownFamily(String),
    #[error("malformed binvox header: {0}")]
    MalformedHeader(String),
    #[error("binvox dims {0:?} are not cubic")]
    NonCubic([usize; 3]),
    #[error("binvox run lengths cover {actual} voxels, header declares {expected}")]
    RleLengthMismatch { expected: usize, actual: usize },
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error("grid is not binary (entry {index} = {value})")]
    NotBinary { index: usize, value: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("render size {height}x{width} smaller than grid resolution {resolution}")]
    RenderTooSmall {
        height: usize,
        width: usize,
        resolution: usize,
    },
    #[error("manifest {path}: line {line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
        let path = path.into();
        move |source| DataError::Io { path, source }
    }
}
