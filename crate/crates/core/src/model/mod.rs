//! The SwitchVAE network: a 3D-convolutional voxel encoder, a shared-weight
//! multi-view image encoder aggregated by a GRU, and one decoder fed by
//! whichever encoder the per-epoch switch selects.

mod checkpoint;
mod network;
#[cfg(test)]
mod tests;

pub use checkpoint::{Checkpoint, RngPosition, CHECKPOINT_VERSION};
pub use network::{
    decode_on, image_encode_on, param_branch, param_shapes, switch_on, voxel_encode_on, BranchVars, SwitchVae,
    Switched, BRIDGE, INIT_STREAM, VOXEL_CHANNELS, VOXEL_STRIDES,
};

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::NumericsError;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("voxel resolution {actual} does not match model resolution {expected}")]
    ResolutionMismatch { expected: usize, actual: usize },
    #[error("{what}: expected {expected}, got {actual}")]
    InputMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Which encoder produced a latent, or which one the switch selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Img,
    Vox,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Img => "img",
            Modality::Vox => "vox",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::Img => Modality::Vox,
            Modality::Vox => Modality::Img,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "img" | "image" => Ok(Modality::Img),
            "vox" | "voxel" => Ok(Modality::Vox),
            other => Err(ModelError::Config(format!("unknown modality `{other}`"))),
        }
    }
}

/// How the contrastive term's gradient treats the branch the switch did not select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastivePolicy {
    /// The contrastive gradient reaches both encoders.
    #[default]
    BothSided,
    /// The inactive branch's latent is detached inside the contrastive term.
    StopInactive,
}

impl std::str::FromStr for ContrastivePolicy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both-sided" => Ok(Self::BothSided),
            "stop-inactive" | "contrastive-stop-inactive" => Ok(Self::StopInactive),
            other => Err(ModelError::Config(format!("unknown contrastive policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for ContrastivePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::BothSided => "both-sided",
            Self::StopInactive => "stop-inactive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent: usize,
    /// Voxel grid edge length; must be divisible by 4.
    pub resolution: usize,
    pub views: usize,
    pub view_height: usize,
    pub view_width: usize,
    pub view_channels: usize,
    /// Channel widths of the stride-2 per-view conv layers.
    pub image_channels: Vec<usize>,
    pub view_feature: usize,
    pub gru_hidden: usize,
    pub contrastive_policy: ContrastivePolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent: 128,
            resolution: 32,
            views: 8,
            view_height: 32,
            view_width: 32,
            view_channels: 1,
            image_channels: vec![8, 16, 32],
            view_feature: 64,
            gru_hidden: 128,
            contrastive_policy: ContrastivePolicy::BothSided,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("latent", self.latent),
            ("resolution", self.resolution),
            ("views", self.views),
            ("view_height", self.view_height),
            ("view_width", self.view_width),
            ("view_channels", self.view_channels),
            ("view_feature", self.view_feature),
            ("gru_hidden", self.gru_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.image_channels.is_empty() || self.image_channels.contains(&0) {
            return Err(ModelError::Config(
                "image_channels must be nonempty and positive".into(),
            ));
        }
        if !self.resolution.is_multiple_of(4) {
            return Err(ModelError::Config(format!(
                "resolution {} is not divisible by 4",
                self.resolution
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution<T> {
    pub mean: Vec<T>,
    pub log_var: Vec<T>,
}

impl<T: Scalar> LatentDistribution<T> {
    pub fn new(mean: Vec<T>, log_var: Vec<T>) -> Result<Self, ModelError> {
        if mean.len() != log_var.len() {
            return Err(NumericsError::LengthMismatch {
                expected: mean.len(),
                actual: log_var.len(),
            }
            .into());
        }
        if log_var.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite {
                context: "log_var".into(),
            }
            .into());
        }
        Ok(Self { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub z: Vec<T>,
    pub source: Modality,
}

/// `z = μ + exp(½ log σ²) ∘ ε`.
pub fn reparameterize<T: Scalar>(
    dist: &LatentDistribution<T>,
    eps: &[T],
    source: Modality,
) -> Result<LatentCode<T>, ModelError> {
    if eps.len() != dist.dim() {
        return Err(NumericsError::LengthMismatch {
            expected: dist.dim(),
            actual: eps.len(),
        }
        .into());
    }
    let half = T::of(0.5);
    let z = dist
        .mean
        .iter()
        .zip(&dist.log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    Ok(LatentCode { z, source })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchDecision {
    pub alpha: Modality,
    pub p_vox: f64,
    pub epoch: usize,
}

impl SwitchDecision {
    /// One Bernoulli(p_vox) draw: voxel branch on success.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, p_vox: f64, epoch: usize) -> Self {
        let u: f64 = rng.random();
        let alpha = if u < p_vox { Modality::Vox } else { Modality::Img };
        Self { alpha, p_vox, epoch }
    }

    pub fn fixed(alpha: Modality, epoch: usize) -> Self {
        let p_vox = if alpha == Modality::Vox { 1.0 } else { 0.0 };
        Self { alpha, p_vox, epoch }
    }
}

/// Returns `(active, inactive)` according to `decision.alpha`.
pub fn switch_select<'d, T>(
    decision: &SwitchDecision,
    dist_img: &'d LatentDistribution<T>,
    dist_vox: &'d LatentDistribution<T>,
) -> (&'d LatentDistribution<T>, &'d LatentDistribution<T>) {
    match decision.alpha {
        Modality::Vox => (dist_vox, dist_img),
        Modality::Img => (dist_img, dist_vox),
    }
}
