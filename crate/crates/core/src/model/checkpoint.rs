//! Checkpoint container.
//!
//! ```text
//! SWITCHVAE-CKPT\n
//! <manifest byte length>\n
//! <UTF-8 JSON manifest>
//! <little-endian f64 parameter payloads, manifest order>
//! <little-endian f64 velocity payloads, same order, when present>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{param_shapes, ModelConfig, ModelError, SwitchVae};
use crate::numerics::{ParamGroup, Tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"SWITCHVAE-CKPT\n";

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPosition {
    pub seed: u64,
    pub stream: u64,
    /// Word position as a decimal string (a `u128`).
    pub word_pos: String,
}

impl RngPosition {
    pub fn of(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, ModelError> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| ModelError::Checkpoint(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    id: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    precision: String,
    epoch: usize,
    config: ModelConfig,
    params: Vec<ParamEntry>,
    has_velocities: bool,
    rng: BTreeMap<String, RngPosition>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: SwitchVae<T>,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Optimizer velocities keyed by parameter id.
    pub velocities: Option<BTreeMap<String, Vec<T>>>,
    pub rng: BTreeMap<String, RngPosition>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let params = self.model.params();
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            precision: T::NAME.to_string(),
            epoch: self.epoch,
            config: self.model.config().clone(),
            params: params
                .iter()
                .map(|(id, t)| ParamEntry {
                    id: id.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            has_velocities: self.velocities.is_some(),
            rng: self.rng.clone(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let n_vals = params.num_values() * if self.velocities.is_some() { 2 } else { 1 };
        let mut out = Vec::with_capacity(MAGIC.len() + 24 + json.len() + 8 * n_vals);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(format!("{}\n", json.len()).as_bytes());
        out.extend_from_slice(&json);
        let push = |out: &mut Vec<u8>, vals: &[T]| {
            for v in vals {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        };
        for (_, t) in params.iter() {
            push(&mut out, t.values());
        }
        if let Some(vel) = &self.velocities {
            for (id, t) in params.iter() {
                let v = vel
                    .get(id)
                    .filter(|v| v.len() == t.len())
                    .ok_or_else(|| ModelError::Checkpoint(format!("velocity for {id} missing or misshapen")))?;
                push(&mut out, v);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing magic line"))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing manifest length"))?;
        let len: usize = std::str::from_utf8(&rest[..nl])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad manifest length"))?;
        let rest = &rest[nl + 1..];
        if rest.len() < len {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest =
            serde_json::from_slice(&rest[..len]).map_err(|e| ModelError::Checkpoint(format!("manifest: {e}")))?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let expected = param_shapes(&manifest.config);
        if expected.len() != manifest.params.len()
            || expected
                .iter()
                .zip(&manifest.params)
                .any(|((id, shape), e)| *id != e.id || *shape != e.shape)
        {
            return Err(bad("parameter ids or shapes do not match the model config"));
        }
        let mut payload = rest[len..].chunks_exact(8);
        let n_vals: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let want = n_vals * if manifest.has_velocities { 2 } else { 1 };
        if payload.len() != want || !payload.remainder().is_empty() {
            return Err(ModelError::Checkpoint(format!(
                "payload holds {} values, expected {want}",
                rest[len..].len() / 8
            )));
        }
        let mut take = |n: usize| -> Vec<T> {
            payload
                .by_ref()
                .take(n)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect()
        };
        let mut params = ParamGroup::new();
        for (id, shape) in &expected {
            let n = shape.iter().product();
            params.insert(id.clone(), Tensor::new(shape.clone(), take(n))?)?;
        }
        let velocities = manifest.has_velocities.then(|| {
            expected
                .iter()
                .map(|(id, shape)| (id.clone(), take(shape.iter().product())))
                .collect()
        });
        Ok(Self {
            model: SwitchVae::from_params(manifest.config, params)?,
            epoch: manifest.epoch,
            velocities,
            rng: manifest.rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
