use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ContrastivePolicy, LatentDistribution, Modality, ModelConfig, ModelError};
use crate::data::{MultiViewSet, VoxelGrid};
use crate::numerics::{gru_cell, gru_param_shapes, BoundParams, GruWeights, Padding, ParamGroup, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub const VOXEL_CHANNELS: [usize; 4] = [8, 16, 32, 64];
pub const VOXEL_STRIDES: [usize; 4] = [1, 2, 1, 2];
/// Width of the dense layer between the conv stack and the latent heads (and its decoder mirror).
pub const BRIDGE: usize = 343;
const DECONV_CHANNELS: [usize; 4] = [32, 16, 8, 1];
const DECONV_STRIDES: [usize; 4] = [2, 1, 2, 1];
const K: usize = 3;
/// Stream index of the parameter-initialization RNG.
pub const INIT_STREAM: u64 = 0;

/// Tape handles of one encoder branch's outputs.
#[derive(Debug, Clone, Copy)]
pub struct BranchVars {
    pub mean: Var,
    pub log_var: Var,
    pub z: Var,
}

/// Result of applying the switch on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Switched {
    pub active: BranchVars,
    /// Latents entering the contrastive term; the inactive one is detached under
    /// [`ContrastivePolicy::StopInactive`].
    pub z_img: Var,
    pub z_vox: Var,
}

/// Selects the active branch; only its latent is meant to feed the decoder.
pub fn switch_on<T: Scalar>(
    tape: &mut Tape<'_, T>,
    alpha: Modality,
    img: BranchVars,
    vox: BranchVars,
    policy: ContrastivePolicy,
) -> Switched {
    let (mut z_img, mut z_vox) = (img.z, vox.z);
    if policy == ContrastivePolicy::StopInactive {
        match alpha {
            Modality::Vox => z_img = tape.detach(img.z),
            Modality::Img => z_vox = tape.detach(vox.z),
        }
    }
    let active = if alpha == Modality::Vox { vox } else { img };
    Switched { active, z_img, z_vox }
}

fn spatial_trace(d: usize) -> (Vec<usize>, Vec<usize>) {
    let mut enc = vec![d];
    for s in VOXEL_STRIDES {
        enc.push(enc.last().unwrap().div_ceil(s));
    }
    let mut dec = vec![d / 4];
    for s in DECONV_STRIDES {
        dec.push(dec.last().unwrap() * s);
    }
    (enc, dec)
}

fn image_extents(cfg: &ModelConfig) -> (usize, usize) {
    let (mut h, mut w) = (cfg.view_height, cfg.view_width);
    for _ in &cfg.image_channels {
        h = h.div_ceil(2);
        w = w.div_ceil(2);
    }
    (h, w)
}

/// Every parameter id with its shape, in id order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut c_in = 1;
    for (i, &c) in VOXEL_CHANNELS.iter().enumerate() {
        out.push((format!("vox/conv{i}/w"), vec![c, c_in, K, K, K]));
        out.push((format!("vox/conv{i}/b"), vec![c]));
        c_in = c;
    }
    let d4 = cfg.resolution / 4;
    let flat = d4 * d4 * d4 * VOXEL_CHANNELS[3];
    out.push(("vox/fc/w".into(), vec![BRIDGE, flat]));
    out.push(("vox/fc/b".into(), vec![BRIDGE]));
    for head in ["mu", "logvar"] {
        out.push((format!("vox/{head}/w"), vec![cfg.latent, BRIDGE]));
        out.push((format!("vox/{head}/b"), vec![cfg.latent]));
    }

    let mut c_in = cfg.view_channels;
    for (i, &c) in cfg.image_channels.iter().enumerate() {
        out.push((format!("img/conv{i}/w"), vec![c, c_in, K, K]));
        out.push((format!("img/conv{i}/b"), vec![c]));
        c_in = c;
    }
    let (h, w) = image_extents(cfg);
    out.push(("img/fc/w".into(), vec![cfg.view_feature, c_in * h * w]));
    out.push(("img/fc/b".into(), vec![cfg.view_feature]));
    for (name, shape) in gru_param_shapes(cfg.view_feature, cfg.gru_hidden) {
        out.push((format!("img/gru/{name}"), shape));
    }
    for head in ["mu", "logvar"] {
        out.push((format!("img/{head}/w"), vec![cfg.latent, cfg.gru_hidden]));
        out.push((format!("img/{head}/b"), vec![cfg.latent]));
    }

    out.push(("dec/fc0/w".into(), vec![BRIDGE, cfg.latent]));
    out.push(("dec/fc0/b".into(), vec![BRIDGE]));
    out.push(("dec/fc1/w".into(), vec![flat, BRIDGE]));
    out.push(("dec/fc1/b".into(), vec![flat]));
    let mut c_in = VOXEL_CHANNELS[3];
    for (i, &c) in DECONV_CHANNELS.iter().enumerate() {
        out.push((format!("dec/deconv{i}/w"), vec![c_in, c, K, K, K]));
        out.push((format!("dec/deconv{i}/b"), vec![c]));
        c_in = c;
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Encoder a parameter belongs to; `None` for decoder parameters.
pub fn param_branch(id: &str) -> Option<Modality> {
    if id.starts_with("vox/") {
        Some(Modality::Vox)
    } else if id.starts_with("img/") {
        Some(Modality::Img)
    } else {
        None
    }
}

fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape.len() {
        2 => (shape[1], shape[0]),
        _ => {
            let rf: usize = shape[2..].iter().product();
            (shape[1] * rf, shape[0] * rf)
        }
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn voxel_encode_on<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &BoundParams,
    input: Var,
) -> Result<(Var, Var), ModelError> {
    let mut x = input;
    for (i, s) in VOXEL_STRIDES.iter().enumerate() {
        let (w, b) = (p.var(&format!("vox/conv{i}/w"))?, p.var(&format!("vox/conv{i}/b"))?);
        x = tape.conv3d(x, w, b, *s)?;
        x = tape.elu(x);
    }
    let x = tape.flatten(x)?;
    let x = tape.dense(x, p.var("vox/fc/w")?, Some(p.var("vox/fc/b")?))?;
    let x = tape.elu(x);
    let mu = tape.dense(x, p.var("vox/mu/w")?, Some(p.var("vox/mu/b")?))?;
    let lv = tape.dense(x, p.var("vox/logvar/w")?, Some(p.var("vox/logvar/b")?))?;
    Ok((mu, lv))
}

/// `views` are `[C, H, W]` leaves in pose order.
pub fn image_encode_on<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    views: &[Var],
) -> Result<(Var, Var), ModelError> {
    let gru = GruWeights::from_bound(p, "img/gru")?;
    let conv: Vec<(Var, Var)> = (0..cfg.image_channels.len())
        .map(|i| Ok((p.var(&format!("img/conv{i}/w"))?, p.var(&format!("img/conv{i}/b"))?)))
        .collect::<Result<_, ModelError>>()?;
    let (fw, fb) = (p.var("img/fc/w")?, p.var("img/fc/b")?);
    let mut h = tape.constant(vec![cfg.gru_hidden], vec![T::zero(); cfg.gru_hidden])?;
    for &v in views {
        let mut x = v;
        for &(w, b) in &conv {
            x = tape.conv2d(x, w, b, 2, Padding::Same)?;
            x = tape.elu(x);
        }
        let x = tape.flatten(x)?;
        let x = tape.dense(x, fw, Some(fb))?;
        let x = tape.elu(x);
        h = gru_cell(tape, h, x, &gru)?;
    }
    let mu = tape.dense(h, p.var("img/mu/w")?, Some(p.var("img/mu/b")?))?;
    let lv = tape.dense(h, p.var("img/logvar/w")?, Some(p.var("img/logvar/b")?))?;
    Ok((mu, lv))
}

/// Returns the flattened `D³` occupancy probabilities.
pub fn decode_on<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    z: Var,
) -> Result<Var, ModelError> {
    let x = tape.dense(z, p.var("dec/fc0/w")?, Some(p.var("dec/fc0/b")?))?;
    let x = tape.elu(x);
    let x = tape.dense(x, p.var("dec/fc1/w")?, Some(p.var("dec/fc1/b")?))?;
    let x = tape.elu(x);
    let d4 = cfg.resolution / 4;
    let mut x = tape.reshape(x, vec![VOXEL_CHANNELS[3], d4, d4, d4])?;
    for (i, s) in DECONV_STRIDES.iter().enumerate() {
        let (w, b) = (p.var(&format!("dec/deconv{i}/w"))?, p.var(&format!("dec/deconv{i}/b"))?);
        x = tape.deconv3d(x, w, b, *s)?;
        x = if i + 1 < DECONV_STRIDES.len() {
            tape.elu(x)
        } else {
            tape.sigmoid(x)
        };
    }
    Ok(tape.flatten(x)?)
}

/// Model configuration plus its parameters.
#[derive(Debug, Clone)]
pub struct SwitchVae<T> {
    config: ModelConfig,
    params: ParamGroup<T>,
}

impl<T: Scalar> SwitchVae<T> {
    /// Glorot-uniform weights and zero biases drawn from the seed's init stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::check_config(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let mut params = ParamGroup::new();
        for (id, shape) in param_shapes(&config) {
            let t = if shape.len() == 1 {
                Tensor::zeros(shape)
            } else {
                let a = glorot_bound(&shape);
                Tensor::from_fn(shape, |_| T::of(rng.random_range(-a..a)))
            };
            params.insert(id, t)?;
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking every id and shape.
    pub fn from_params(config: ModelConfig, params: ParamGroup<T>) -> Result<Self, ModelError> {
        Self::check_config(&config)?;
        let expected = param_shapes(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((id, shape), (pid, t)) in expected.iter().zip(params.iter()) {
            if id != pid || shape.as_slice() != t.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {pid} {:?} does not match expected {id} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    fn check_config(config: &ModelConfig) -> Result<(), ModelError> {
        config.validate()?;
        let (enc, dec) = spatial_trace(config.resolution);
        let mirrored: Vec<usize> = enc.iter().rev().copied().collect();
        if dec != mirrored || dec.last() != Some(&config.resolution) {
            return Err(ModelError::Config(format!(
                "decoder trace {dec:?} does not mirror encoder trace {enc:?}"
            )));
        }
        Ok(())
    }

    /// Encoder spatial extents followed by decoder extents.
    pub fn spatial_trace(&self) -> (Vec<usize>, Vec<usize>) {
        spatial_trace(self.config.resolution)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamGroup<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamGroup<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamGroup<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> SwitchVae<U> {
        SwitchVae {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn voxel_input(&self, tape: &mut Tape<'_, T>, grid: &VoxelGrid<T>) -> Result<Var, ModelError> {
        let d = self.config.resolution;
        if grid.resolution() != d {
            return Err(ModelError::ResolutionMismatch {
                expected: d,
                actual: grid.resolution(),
            });
        }
        Ok(tape.constant(vec![1, d, d, d], grid.values().to_vec())?)
    }

    pub fn view_inputs(&self, tape: &mut Tape<'_, T>, views: &MultiViewSet<T>) -> Result<Vec<Var>, ModelError> {
        let c = &self.config;
        if views.len() != c.views {
            return Err(ModelError::InputMismatch {
                what: "view count",
                expected: c.views,
                actual: views.len(),
            });
        }
        views
            .views
            .iter()
            .map(|img| {
                for (what, expected, actual) in [
                    ("view height", c.view_height, img.height),
                    ("view width", c.view_width, img.width),
                    ("view channels", c.view_channels, img.channels),
                ] {
                    if expected != actual {
                        return Err(ModelError::InputMismatch { what, expected, actual });
                    }
                }
                Ok(tape.constant(vec![img.channels, img.height, img.width], img.to_chw())?)
            })
            .collect()
    }

    pub fn voxel_encode(&self, grid: &VoxelGrid<T>) -> Result<LatentDistribution<T>, ModelError> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let x = self.voxel_input(&mut tape, grid)?;
        let (mu, lv) = voxel_encode_on(&mut tape, &p, x)?;
        LatentDistribution::new(tape.value(mu).to_vec(), tape.value(lv).to_vec())
    }

    pub fn image_encode(&self, views: &MultiViewSet<T>) -> Result<LatentDistribution<T>, ModelError> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let xs = self.view_inputs(&mut tape, views)?;
        let (mu, lv) = image_encode_on(&mut tape, &p, &self.config, &xs)?;
        LatentDistribution::new(tape.value(mu).to_vec(), tape.value(lv).to_vec())
    }

    pub fn encode(
        &self,
        modality: Modality,
        grid: Option<&VoxelGrid<T>>,
        views: Option<&MultiViewSet<T>>,
    ) -> Result<LatentDistribution<T>, ModelError> {
        let missing = |what| ModelError::Config(format!("{what} input required for {modality} encoding"));
        match modality {
            Modality::Vox => self.voxel_encode(grid.ok_or_else(|| missing("voxel"))?),
            Modality::Img => self.image_encode(views.ok_or_else(|| missing("view"))?),
        }
    }

    pub fn decode(&self, z: &[T]) -> Result<VoxelGrid<T>, ModelError> {
        if z.len() != self.config.latent {
            return Err(ModelError::InputMismatch {
                what: "latent length",
                expected: self.config.latent,
                actual: z.len(),
            });
        }
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let zv = tape.constant(vec![z.len()], z)?;
        let out = decode_on(&mut tape, &p, &self.config, zv)?;
        VoxelGrid::new(self.config.resolution, tape.value(out).to_vec()).map_err(|e| ModelError::Config(e.to_string()))
    }
}
