//! End-to-end: dataset on disk, a short training run, checkpoint round trip,
//! frozen latents and latent-space edits.

use switchvae::data::{build_dataset, load_samples, DatasetConfig, Family, Modalities, Split, VoxelGrid};
use switchvae::eval::{classify_eval, extract_latents, recon_metrics, SvmConfig};
use switchvae::latentlab::{arithmetic, interpolate, traverse};
use switchvae::model::{Checkpoint, Modality, ModelConfig, SwitchVae};
use switchvae::trainer::{train, TrainConfig, TrainSample, TrainState};

fn small_model_config() -> ModelConfig {
    ModelConfig {
        latent: 8,
        resolution: 8,
        views: 2,
        view_height: 8,
        view_width: 8,
        image_channels: vec![4, 8],
        view_feature: 16,
        gru_hidden: 12,
        ..ModelConfig::default()
    }
}

#[test]
fn train_checkpoint_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data_cfg = DatasetConfig {
        families: Family::ALL.to_vec(),
        counts: vec![5; 4],
        seed: 2,
        resolution: 8,
        views: 2,
        view_height: 8,
        view_width: 8,
        ..DatasetConfig::default()
    };
    let manifest = build_dataset(&data_cfg, dir.path()).unwrap();
    assert_eq!(manifest.samples.len(), 20);

    let samples: Vec<TrainSample<f64>> = load_samples(&manifest, Some(Split::Train), Modalities::BOTH)
        .unwrap()
        .into_iter()
        .map(|s| TrainSample::from_loaded(s).unwrap())
        .collect();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        lr0: 2e-5,
        grad_clip: Some(1000.0),
        seed: 4,
        ..TrainConfig::default()
    };
    let model = SwitchVae::<f64>::new(small_model_config(), 4).unwrap();
    let out = train(&samples, TrainState::new(model, &cfg), &cfg, None).unwrap();
    assert_eq!(out.records.len(), 3);
    assert!(out.records.iter().all(|r| r.loss.total.is_finite()));

    let path = dir.path().join("m.ckpt");
    out.state.checkpoint().save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back.epoch, 3);
    assert_eq!(back.model.params(), out.state.model.params());

    let train_bank = extract_latents(&back.model, &manifest, Some(Split::Train), Modality::Vox).unwrap();
    let test_bank = extract_latents(&back.model, &manifest, Some(Split::Test), Modality::Vox).unwrap();
    assert_eq!(train_bank.len() + test_bank.len(), 20);
    let acc = classify_eval(&train_bank, &test_bank, &SvmConfig::default()).unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let img_bank = extract_latents(&back.model, &manifest, Some(Split::Test), Modality::Img).unwrap();
    assert_eq!(img_bank.len(), test_bank.len());

    let z = |i: usize| -> Vec<f64> { train_bank.rows()[i].mu.clone() };
    let line = interpolate(&z(0), &z(1), 5).unwrap();
    assert_eq!(line.codes.first().unwrap(), &z(0));
    assert_eq!(line.codes.last().unwrap(), &z(1));
    let same = arithmetic(&z(0), &z(1), &z(1)).unwrap();
    assert!(same.iter().zip(z(0)).all(|(a, b)| (a - b).abs() < 1e-12));
    let steps = traverse(&z(2), 3, &[-1.0, 0.0, 1.0]).unwrap();
    assert_eq!(steps.len(), 3);
    assert!(steps.iter().all(|c| c.len() == 8 && c[0] == z(2)[0]));

    // Decoding is deterministic.
    let a = back.model.decode(&line.codes[2]).unwrap();
    assert_eq!(a, back.model.decode(&line.codes[2]).unwrap());
    let occ: Vec<bool> = a.values().iter().map(|&v| v >= 0.5).collect();
    let m = recon_metrics(&VoxelGrid::from_occupancy(8, &occ).unwrap(), &a, 0.5).unwrap();
    assert_eq!((m.precision, m.recall), (1.0, 1.0));
}

#[test]
fn f32_and_f64_models_agree() {
    let m64 = SwitchVae::<f64>::new(small_model_config(), 9).unwrap();
    let m32 = SwitchVae::<f32>::new(small_model_config(), 9).unwrap();
    let a = m64.decode(&[0.25; 8]).unwrap();
    let b = m32.decode(&[0.25f32; 8]).unwrap();
    let worst = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - f64::from(*y)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}
