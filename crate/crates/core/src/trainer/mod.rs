//! End-to-end training: per-epoch switch draws, seeded batch shuffling,
//! Nesterov SGD with a stepped learning-rate decay, checkpoints, and a latent
//! collapse monitor.

mod optim;
mod step;

pub use optim::{lr_schedule, sgd_nesterov_step, OptimizerState};
pub use step::{sample_forward, sample_step, SampleForward, SampleResult};

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, LoadedSample};
use crate::losses::{LossBreakdown, LossWeights};
use crate::model::{Checkpoint, Modality, ModelError, RngPosition, SwitchDecision, SwitchVae};
use crate::numerics::{NumericsError, ParamGrads};
use crate::scalar::{Precision, Scalar};

pub const EPOCH_CSV_HEADER: &str = "epoch,alpha,lr,recon,kl,contras,total,latent_var";
pub const SWITCH_STREAM: u64 = 1;
pub const EPS_STREAM: u64 = 2;
pub const SHUFFLE_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (samples {samples:?}); last finite epoch losses: {last_finite:?}; {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        samples: Vec<String>,
        last_finite: Option<LossBreakdown>,
        detail: String,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which encoder feeds the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Random switch with probability `p_vox` for the voxel branch.
    #[default]
    Switch,
    /// Plain voxel VAE: the image encoder is neither run nor updated.
    VoxelOnly,
    /// Plain multi-view VAE: the voxel encoder is neither run nor updated.
    ImageOnly,
}

impl std::str::FromStr for TrainMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "switch" => Ok(Self::Switch),
            "voxel-only" => Ok(Self::VoxelOnly),
            "image-only" => Ok(Self::ImageOnly),
            other => Err(TrainError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Switch => "switch",
            Self::VoxelOnly => "voxel-only",
            Self::ImageOnly => "image-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub decay_after: usize,
    pub p_vox: f64,
    pub mode: TrainMode,
    pub weights: LossWeights,
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads for per-sample forwards; results are reduced in sample order.
    pub threads: usize,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub collapse_threshold: f64,
    pub collapse_patience: usize,
    /// Rescale each batch gradient to at most this L2 norm. Off by default.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr0: 2e-4,
            momentum: 0.9,
            decay: 0.96,
            decay_every: 10,
            decay_after: 50,
            p_vox: 0.8,
            mode: TrainMode::Switch,
            weights: LossWeights::default(),
            seed: 0,
            precision: Precision::F64,
            threads: 1,
            checkpoint_every: 0,
            collapse_threshold: 1e-6,
            collapse_patience: 10,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_vox) {
            return bad(format!("p_vox = {} outside [0, 1]", self.p_vox));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 = {} must be positive", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum = {} outside [0, 1)", self.momentum));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) || self.decay_every == 0 {
            return bad("decay must lie in (0, 1] with a positive interval".into());
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip = {c} must be positive"));
            }
        }
        self.weights.validate()?;
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0
            * self
                .decay
                .powi((epoch.saturating_sub(self.decay_after) / self.decay_every) as i32)
    }

    /// Effective weights: single-encoder baselines carry no contrastive term.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.mode != TrainMode::Switch {
            w.lambda_contras = 0.0;
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: Modality,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub latent_var: f64,
    pub collapse_warning: bool,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.alpha,
            self.lr,
            self.loss.recon,
            self.loss.kl,
            self.loss.contras,
            self.loss.total,
            self.latent_var
        )
    }
}

pub fn write_epoch_csv(records: &[EpochRecord], path: &Path) -> Result<(), TrainError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    writeln!(f, "{EPOCH_CSV_HEADER}").map_err(io_err(path))?;
    for r in records {
        writeln!(f, "{}", r.csv_row()).map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

/// Mean over dimensions of the across-batch (population) variance of μ.
pub fn collapse_monitor<T: Scalar>(mus: &[Vec<T>]) -> f64 {
    if mus.is_empty() {
        return 0.0;
    }
    let n = mus.len() as f64;
    let dim = mus[0].len();
    if dim == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for d in 0..dim {
        // Shifted by the first row so identical rows give exactly zero.
        let x0 = mus[0][d].to_f64_lossy();
        let (mut s, mut s2) = (0.0, 0.0);
        for m in mus {
            let x = m[d].to_f64_lossy() - x0;
            s += x;
            s2 += x * x;
        }
        let mean = s / n;
        total += (s2 / n - mean * mean).max(0.0);
    }
    total / dim as f64
}

/// Counts consecutive epochs whose latent variance falls below a threshold.
#[derive(Debug, Clone)]
pub struct CollapseTracker {
    threshold: f64,
    patience: usize,
    run: usize,
}

impl CollapseTracker {
    pub fn new(threshold: f64, patience: usize) -> Self {
        Self {
            threshold,
            patience,
            run: 0,
        }
    }

    /// Feeds one epoch's statistic; true once the run reaches the patience.
    pub fn update(&mut self, stat: f64) -> bool {
        if stat < self.threshold {
            self.run += 1;
        } else {
            self.run = 0;
        }
        self.run >= self.patience
    }
}

/// Training sample with both modalities in memory.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub id: String,
    pub grid: crate::data::VoxelGrid<T>,
    pub views: Option<crate::data::MultiViewSet<T>>,
}

impl<T: Scalar> TrainSample<T> {
    pub fn from_loaded(s: LoadedSample<T>) -> Result<Self, TrainError> {
        let grid = s
            .voxels
            .ok_or_else(|| TrainError::Config(format!("sample {} has no voxel grid", s.id)))?;
        Ok(Self {
            id: s.id,
            grid,
            views: s.views,
        })
    }
}

/// Named RNG streams of one run.
#[derive(Debug, Clone)]
pub struct RngStreams {
    seed: u64,
    pub switch: ChaCha8Rng,
    pub eps: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            seed,
            switch: stream(SWITCH_STREAM),
            eps: stream(EPS_STREAM),
            shuffle: stream(SHUFFLE_STREAM),
        }
    }

    pub fn positions(&self) -> BTreeMap<String, RngPosition> {
        BTreeMap::from([
            ("eps".to_string(), RngPosition::of(self.seed, &self.eps)),
            ("shuffle".to_string(), RngPosition::of(self.seed, &self.shuffle)),
            ("switch".to_string(), RngPosition::of(self.seed, &self.switch)),
        ])
    }

    pub fn restore(seed: u64, pos: &BTreeMap<String, RngPosition>) -> Result<Self, TrainError> {
        let get = |k: &str| -> Result<ChaCha8Rng, TrainError> {
            let p = pos
                .get(k)
                .ok_or_else(|| TrainError::Config(format!("checkpoint lacks rng stream `{k}`")))?;
            if p.seed != seed {
                return Err(TrainError::Config(format!(
                    "checkpoint seed {} differs from configured seed {seed}",
                    p.seed
                )));
            }
            Ok(p.restore()?)
        };
        Ok(Self {
            seed,
            switch: get("switch")?,
            eps: get("eps")?,
            shuffle: get("shuffle")?,
        })
    }
}

/// Mutable state of a training run, resumable from a checkpoint.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: SwitchVae<T>,
    pub optimizer: OptimizerState<T>,
    pub rngs: RngStreams,
    /// Completed epochs.
    pub epoch: usize,
    collapse: CollapseTracker,
    last_finite: Option<LossBreakdown>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: SwitchVae<T>, cfg: &TrainConfig) -> Self {
        let optimizer = OptimizerState::new(model.params());
        Self {
            model,
            optimizer,
            rngs: RngStreams::new(cfg.seed),
            epoch: 0,
            collapse: CollapseTracker::new(cfg.collapse_threshold, cfg.collapse_patience),
            last_finite: None,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>, cfg: &TrainConfig) -> Result<Self, TrainError> {
        let rngs = RngStreams::restore(cfg.seed, &ckpt.rng)?;
        let optimizer = match ckpt.velocities {
            Some(v) => OptimizerState::from_velocities(ckpt.model.params(), v)?,
            None => OptimizerState::new(ckpt.model.params()),
        };
        Ok(Self {
            model: ckpt.model,
            optimizer,
            rngs,
            epoch: ckpt.epoch,
            collapse: CollapseTracker::new(cfg.collapse_threshold, cfg.collapse_patience),
            last_finite: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            epoch: self.epoch,
            velocities: Some(self.optimizer.velocities().clone()),
            rng: self.rngs.positions(),
        }
    }

    /// Runs one epoch over `data` and returns its record.
    pub fn run_epoch(&mut self, data: &[TrainSample<T>], cfg: &TrainConfig) -> Result<EpochRecord, TrainError> {
        let epoch = self.epoch;
        let alpha = match cfg.mode {
            TrainMode::Switch => SwitchDecision::draw(&mut self.rngs.switch, cfg.p_vox, epoch).alpha,
            TrainMode::VoxelOnly => Modality::Vox,
            TrainMode::ImageOnly => Modality::Img,
        };
        let (run_img, run_vox) = match cfg.mode {
            TrainMode::Switch => (true, true),
            TrainMode::VoxelOnly => (false, true),
            TrainMode::ImageOnly => (true, false),
        };
        let weights = cfg.effective_weights();
        let lr = cfg.lr(epoch);
        let n = self.model.config().latent;

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rngs.shuffle);

        let mut losses = Vec::with_capacity(data.len());
        let mut batch_vars = Vec::new();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let eps: Vec<(Vec<T>, Vec<T>)> = batch
                .iter()
                .map(|_| {
                    let mut draw = || -> Vec<T> {
                        (0..n)
                            .map(|_| T::of(StandardNormal.sample(&mut self.rngs.eps)))
                            .collect()
                    };
                    let e_img = draw();
                    let e_vox = draw();
                    (e_img, e_vox)
                })
                .collect();
            let model = &self.model;
            let run = |k: usize| {
                let s = &data[batch[k]];
                let (ei, ev) = eps[k].clone();
                sample_step(
                    model,
                    &s.grid,
                    s.views.as_ref(),
                    alpha,
                    ei,
                    ev,
                    &weights,
                    run_img,
                    run_vox,
                )
            };
            let results: Vec<Result<SampleResult<T>, TrainError>> = if cfg.threads > 1 {
                use rayon::prelude::*;
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| TrainError::Config(e.to_string()))?;
                pool.install(|| (0..batch.len()).into_par_iter().map(run).collect())
            } else {
                (0..batch.len()).map(run).collect()
            };

            let ids = || batch.iter().map(|&i| data[i].id.clone()).collect::<Vec<_>>();
            let mut grads = ParamGrads::new();
            let scale = T::one() / T::of(batch.len() as f64);
            let mut mus = Vec::with_capacity(batch.len());
            for r in results {
                let r = r.map_err(|e| TrainError::NonFinite {
                    epoch,
                    batch: b,
                    samples: ids(),
                    last_finite: self.last_finite,
                    detail: e.to_string(),
                })?;
                if !r.loss.total.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch: b,
                        samples: ids(),
                        last_finite: self.last_finite,
                        detail: format!("sample losses {:?}", r.loss),
                    });
                }
                grads.add_scaled(&r.grads, scale);
                losses.push(r.loss);
                mus.push(r.mu_active);
            }
            if mus.len() > 1 {
                batch_vars.push(collapse_monitor(&mus));
            }
            if let Some(c) = cfg.grad_clip {
                let norm = grads.norm().to_f64_lossy();
                if norm > c {
                    grads.scale(T::of(c / norm));
                }
            }
            sgd_nesterov_step(
                self.model.params_mut(),
                &grads,
                &mut self.optimizer,
                T::of(lr),
                T::of(cfg.momentum),
            )?;
        }

        let loss = LossBreakdown::mean(&losses);
        // Undefined (NaN) when no batch holds two samples; NaN never counts as collapsed.
        let latent_var = if batch_vars.is_empty() {
            f64::NAN
        } else {
            batch_vars.iter().sum::<f64>() / batch_vars.len() as f64
        };
        let collapse_warning = self.collapse.update(latent_var);
        if collapse_warning {
            log::warn!("epoch {epoch}: latent variance {latent_var:e} below threshold; encoders may have collapsed");
        }
        self.last_finite = Some(loss);
        self.epoch += 1;
        Ok(EpochRecord {
            epoch,
            alpha,
            lr,
            loss,
            latent_var,
            collapse_warning,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    pub records: Vec<EpochRecord>,
}

/// Trains until `cfg.epochs` epochs have completed.
///
/// With `checkpoint_dir`, writes `epoch_NNNN.ckpt` every `checkpoint_every`
/// epochs and `final.ckpt` at the end.
pub fn train<T: Scalar>(
    data: &[TrainSample<T>],
    state: TrainState<T>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome<T>, TrainError> {
    train_with(data, state, cfg, checkpoint_dir, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    data: &[TrainSample<T>],
    mut state: TrainState<T>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    let need_views = cfg.mode != TrainMode::VoxelOnly;
    if let Some(s) = data.iter().find(|s| need_views && s.views.is_none()) {
        return Err(TrainError::Config(format!("sample {} has no views", s.id)));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut records = Vec::new();
    while state.epoch < cfg.epochs {
        let rec = state.run_epoch(data, cfg)?;
        log::info!(
            "epoch {} alpha={} lr={:.3e} recon={:.4} kl={:.4} contras={:.4} total={:.4} latent_var={:.3e}",
            rec.epoch,
            rec.alpha,
            rec.lr,
            rec.loss.recon,
            rec.loss.kl,
            rec.loss.contras,
            rec.loss.total,
            rec.latent_var
        );
        on_epoch(&rec);
        records.push(rec);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && state.epoch.is_multiple_of(cfg.checkpoint_every) && state.epoch < cfg.epochs
            {
                state
                    .checkpoint()
                    .save(&dir.join(format!("epoch_{:04}.ckpt", state.epoch)))?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        state.checkpoint().save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome { state, records })
}
