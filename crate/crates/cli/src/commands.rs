use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use switchvae::data::{build_dataset, load_samples, DatasetConfig, DatasetManifest, Modalities, Split, MANIFEST_FILE};
use switchvae::eval::{
    embed2d, extract_latents, recon_metrics, svm_predict, svm_train, write_embedding_csv, write_metrics_csv,
    LatentBank, SvmConfig,
};
use switchvae::latentlab::{arithmetic, export_reconstructions, interpolate, traverse};
use switchvae::losses::LossWeights;
use switchvae::model::{Checkpoint, Modality, ModelConfig, SwitchVae};
use switchvae::scalar::{Precision, Scalar};
use switchvae::trainer::{train_with, write_epoch_csv, EpochRecord, TrainConfig, TrainMode, TrainSample, TrainState};

use crate::cli::{
    ArithmeticArgs, EvalClassifyArgs, EvalReconArgs, GenDataArgs, InterpolateArgs, LatentSource, OutputArgs, TrainArgs,
    TraverseArgs,
};

/// Invalid command-line input, as opposed to a failure while doing the work.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("missing required --{flag}")))
}

impl OutputArgs {
    pub fn resolve(&self) -> Result<PathBuf> {
        if let Some(out) = &self.out {
            return Ok(out.clone());
        }
        let id = self
            .run_id
            .as_deref()
            .ok_or_else(|| usage("either --out or --run-id is required"))?;
        if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
            return Err(usage(format!("run id `{id}` must be a plain directory name")));
        }
        Ok(self.out_root.join(id))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(DatasetManifest::read(&file)?)
}

/// Evaluation runs in double precision whatever the training precision was.
fn load_model(path: &Path) -> Result<SwitchVae<f64>> {
    Ok(Checkpoint::<f64>::load(path)?.model)
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let out = a.output.resolve()?;
    let cfg = DatasetConfig {
        families: a.families.clone(),
        counts: vec![a.count; a.families.len()],
        train_fraction: a.train_fraction,
        seed: a.seed,
        resolution: a.resolution,
        views: a.views,
        view_height: a.view_height.unwrap_or(a.resolution),
        view_width: a.view_width.unwrap_or(a.resolution),
        mode: a.render_mode,
    };
    create_dir(&out)?;
    let manifest = build_dataset(&cfg, &out)?;
    log::info!("wrote {} samples to {}", manifest.samples.len(), out.display());
    println!("{}", out.join(MANIFEST_FILE).display());
    Ok(())
}

pub fn train_configs(a: &TrainArgs, manifest: &DatasetManifest) -> Result<(ModelConfig, TrainConfig)> {
    let model = ModelConfig {
        latent: a.latent,
        resolution: manifest.resolution,
        views: manifest.views,
        view_height: manifest.view_height,
        view_width: manifest.view_width,
        view_channels: manifest.view_channels,
        image_channels: a.image_channels.clone(),
        view_feature: a.view_feature,
        gru_hidden: a.gru_hidden,
        contrastive_policy: a.contrastive_policy,
    };
    let train = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr0: a.lr,
        momentum: a.momentum,
        decay: a.decay,
        decay_every: a.decay_every,
        decay_after: a.decay_after,
        p_vox: a.p_vox,
        mode: a.mode,
        weights: LossWeights {
            lambda_kl: a.lambda_kl,
            lambda_contras: a.lambda_contras,
            gamma: a.gamma,
            recon_weight: a.recon_weight,
            unit_norm: a.unit_norm,
        },
        seed: a.seed,
        precision: a.precision,
        threads: a.threads,
        checkpoint_every: a.checkpoint_every,
        collapse_threshold: a.collapse_threshold,
        collapse_patience: a.collapse_patience,
        grad_clip: a.grad_clip,
    };
    model.validate().map_err(|e| usage(e.to_string()))?;
    train.validate().map_err(|e| usage(e.to_string()))?;
    Ok((model, train))
}

/// `settings` is the effective configuration, written next to the outputs.
pub fn train(a: &TrainArgs, settings: &str) -> Result<()> {
    let data = required(&a.data, "data")?;
    let manifest = read_manifest(data)?;
    let (model_cfg, cfg) = train_configs(a, &manifest)?;
    let out = a.output.resolve()?;
    create_dir(&out)?;
    std::fs::write(out.join("config.txt"), settings).with_context(|| format!("writing {}", out.display()))?;
    match cfg.precision {
        Precision::F32 => train_in::<f32>(a, &manifest, model_cfg, &cfg, &out),
        Precision::F64 => train_in::<f64>(a, &manifest, model_cfg, &cfg, &out),
    }
}

fn train_in<T: Scalar>(
    a: &TrainArgs,
    manifest: &DatasetManifest,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<()> {
    let wanted = if cfg.mode == TrainMode::VoxelOnly {
        Modalities::VOXELS
    } else {
        Modalities::BOTH
    };
    let samples = load_samples::<T>(manifest, Some(Split::Train), wanted)?
        .into_iter()
        .map(TrainSample::from_loaded)
        .collect::<Result<Vec<_>, _>>()?;
    if samples.is_empty() {
        bail!("training split of {} is empty", manifest.base_dir.display());
    }
    let state = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::<T>::load(path)?;
            if *ckpt.model.config() != model_cfg {
                return Err(usage(format!(
                    "{} was trained with a different model config",
                    path.display()
                )));
            }
            TrainState::from_checkpoint(ckpt, cfg)?
        }
        None => TrainState::new(SwitchVae::new(model_cfg, cfg.seed)?, cfg),
    };
    let start = state.epoch;
    let csv = out.join("epochs.csv");
    let mut records = if start > 0 {
        earlier_records(&csv, start)?
    } else {
        Vec::new()
    };
    let mut warned = false;
    let outcome = train_with(&samples, state, cfg, Some(&out.join("checkpoints")), |r| {
        if r.collapse_warning && !warned {
            log::warn!(
                "latent collapse suspected at epoch {} (variance {:.3e})",
                r.epoch,
                r.latent_var
            );
            warned = true;
        }
    })?;
    let new_rows: Vec<String> = outcome.records.iter().map(EpochRecord::csv_row).collect();
    if start == 0 {
        write_epoch_csv(&outcome.records, &csv)?;
    } else {
        records.extend(new_rows);
        let mut s = String::from(switchvae::trainer::EPOCH_CSV_HEADER);
        s.push('\n');
        for r in &records {
            s.push_str(r);
            s.push('\n');
        }
        std::fs::write(&csv, s).with_context(|| format!("writing {}", csv.display()))?;
    }
    println!("{}", out.join("checkpoints").join("final.ckpt").display());
    Ok(())
}

/// Rows of an existing epoch CSV that precede a resumed run.
fn earlier_records(csv: &Path, before: usize) -> Result<Vec<String>> {
    let Ok(text) = std::fs::read_to_string(csv) else {
        return Ok(Vec::new());
    };
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e < before)
        })
        .map(str::to_string)
        .collect())
}

pub fn eval_recon(a: &EvalReconArgs) -> Result<()> {
    let model = load_model(required(&a.checkpoint, "checkpoint")?)?;
    let manifest = read_manifest(required(&a.data, "data")?)?;
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage(format!("threshold {} outside [0, 1]", a.threshold)));
    }
    let out = a.output.resolve()?;
    let wanted = match a.modality {
        Modality::Vox => Modalities::VOXELS,
        Modality::Img => Modalities::BOTH,
    };
    let samples = load_samples::<f64>(&manifest, a.split.split(), wanted)?;
    if samples.is_empty() {
        bail!("no samples in the selected split");
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in &samples {
        let target = s
            .voxels
            .as_ref()
            .ok_or_else(|| anyhow!("sample {} has no voxel grid", s.id))?;
        let dist = model.encode(a.modality, s.voxels.as_ref(), s.views.as_ref())?;
        let pred = model.decode(&dist.mean)?;
        rows.push((s.id.clone(), recon_metrics(target, &pred, a.threshold)?));
    }
    create_dir(&out)?;
    let path = out.join("metrics.csv");
    write_metrics_csv(&rows, &path)?;
    let n = rows.len() as f64;
    let mean = |f: fn(&switchvae::eval::ReconMetrics) -> f64| rows.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
    println!(
        "iou={:.6} precision={:.6} recall={:.6} accuracy={:.6} n={}",
        mean(|m| m.iou),
        mean(|m| m.precision),
        mean(|m| m.recall),
        mean(|m| m.accuracy),
        rows.len()
    );
    Ok(())
}

pub fn eval_classify(a: &EvalClassifyArgs) -> Result<()> {
    let model = load_model(required(&a.checkpoint, "checkpoint")?)?;
    let train_path = a
        .svm_train_manifest
        .as_ref()
        .or(a.data.as_ref())
        .ok_or_else(|| usage("missing --svm-train-manifest (or --data)"))?;
    let test_path = a
        .svm_test_manifest
        .as_ref()
        .or(a.data.as_ref())
        .ok_or_else(|| usage("missing --svm-test-manifest (or --data)"))?;
    let svm = SvmConfig {
        c: a.svm_c,
        gamma: a.svm_gamma,
        ..SvmConfig::default()
    };
    let out = a.output.resolve()?;
    let train_manifest = read_manifest(train_path)?;
    let test_manifest = read_manifest(test_path)?;
    if train_manifest.categories != test_manifest.categories {
        bail!("train and test manifests label different categories");
    }
    let train = extract_latents(&model, &train_manifest, a.svm_train_split.split(), a.modality)?;
    let test = extract_latents(&model, &test_manifest, a.svm_test_split.split(), a.modality)?;
    if train.is_empty() || test.is_empty() {
        bail!("empty SVM training or test set");
    }
    let svm_model = svm_train(&train.vectors(), &train.labels(), &svm)?;
    let predicted = svm_predict(&svm_model, &test.vectors())?;
    let correct = predicted.iter().zip(test.labels()).filter(|(p, l)| **p == *l).count();
    let accuracy = correct as f64 / test.len() as f64;

    create_dir(&out)?;
    train.write_csv(&out.join("latents_train.csv"))?;
    test.write_csv(&out.join("latents_test.csv"))?;
    let mut s = String::from("id,label,predicted\n");
    for (r, p) in test.rows().iter().zip(&predicted) {
        writeln!(s, "{},{},{p}", r.id, r.label).unwrap();
    }
    writeln!(s, "accuracy,,{accuracy}").unwrap();
    let path = out.join("predictions.csv");
    std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
    write_embedding_csv(&embed2d(&test), &out.join("embedding.csv"))?;
    println!("accuracy={accuracy:.6} correct={correct} n={}", test.len());
    Ok(())
}

/// Model and latent bank holding (at least) the requested ids.
fn latent_inputs(src: &LatentSource, ids: &[&str]) -> Result<(SwitchVae<f64>, LatentBank)> {
    let model = load_model(required(&src.checkpoint, "checkpoint")?)?;
    let bank = match (&src.latents, &src.data) {
        (Some(csv), _) => LatentBank::read_csv(csv)?,
        (None, Some(data)) => {
            let mut manifest = read_manifest(data)?;
            let wanted: HashSet<&str> = ids.iter().copied().collect();
            manifest.samples.retain(|s| wanted.contains(s.id.as_str()));
            extract_latents(&model, &manifest, src.split.split(), src.modality)?
        }
        (None, None) => return Err(usage("either --latents or --data is required")),
    };
    if bank.dim() != model.config().latent {
        bail!(
            "latents have {} dimensions, model expects {}",
            bank.dim(),
            model.config().latent
        );
    }
    Ok((model, bank))
}

fn code(bank: &LatentBank, id: &str, modality: Modality) -> Result<Vec<f64>> {
    bank.get(id, modality)
        .or_else(|| bank.find(id))
        .map(|r| r.mu.clone())
        .ok_or_else(|| anyhow!("no latent for sample `{id}`"))
}

fn export(codes: &[Vec<f64>], model: &SwitchVae<f64>, out: &Path) -> Result<()> {
    let written = export_reconstructions(codes, model, out, "recon_")?;
    let mut s = String::from("index");
    for i in 0..model.config().latent {
        write!(s, ",z_{i}").unwrap();
    }
    s.push('\n');
    for (k, z) in codes.iter().enumerate() {
        write!(s, "{k}").unwrap();
        for v in z {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    let path = out.join("codes.csv");
    std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
    for p in written.iter().filter(|p| p.extension().is_some_and(|e| e == "binvox")) {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn latent_interpolate(a: &InterpolateArgs) -> Result<()> {
    let (from, to) = (required(&a.from, "from")?, required(&a.to, "to")?);
    if a.steps < 2 {
        return Err(usage(format!("--steps must be at least 2, got {}", a.steps)));
    }
    let out = a.output.resolve()?;
    let (model, bank) = latent_inputs(&a.source, &[from, to])?;
    let m = a.source.modality;
    let path = interpolate(&code(&bank, from, m)?, &code(&bank, to, m)?, a.steps)?;
    export(&path.codes, &model, &out)
}

pub fn latent_arithmetic(a: &ArithmeticArgs) -> Result<()> {
    let base = required(&a.base, "base")?;
    let plus = required(&a.plus, "plus")?;
    let minus = required(&a.minus, "minus")?;
    let out = a.output.resolve()?;
    let (model, bank) = latent_inputs(&a.source, &[base, plus, minus])?;
    let m = a.source.modality;
    let z = arithmetic(&code(&bank, base, m)?, &code(&bank, plus, m)?, &code(&bank, minus, m)?)?;
    export(&[z], &model, &out)
}

pub fn latent_traverse(a: &TraverseArgs) -> Result<()> {
    let id = required(&a.id, "id")?;
    let dim = *required(&a.dim, "dim")?;
    if a.values.is_empty() {
        return Err(usage("--values must not be empty"));
    }
    let out = a.output.resolve()?;
    let (model, bank) = latent_inputs(&a.source, &[id])?;
    let codes = traverse(&code(&bank, id, a.source.modality)?, dim, &a.values)?;
    export(&codes, &model, &out)
}
