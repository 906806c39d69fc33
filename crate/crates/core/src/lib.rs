//! Generative-contrastive voxel / multi-view VAE: a reverse-mode tape, the
//! switch-encoded network, its losses and trainer, and evaluation tools.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the precision for callers that do not care.

pub mod data;
pub mod eval;
pub mod latentlab;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod trainer;

pub type SwitchVae32 = model::SwitchVae<f32>;
pub type SwitchVae64 = model::SwitchVae<f64>;
pub type VoxelGrid32 = data::VoxelGrid<f32>;
pub type VoxelGrid64 = data::VoxelGrid<f64>;
pub type Checkpoint32 = model::Checkpoint<f32>;
pub type Checkpoint64 = model::Checkpoint<f64>;
pub type TrainState32 = trainer::TrainState<f32>;
pub type TrainState64 = trainer::TrainState<f64>;
