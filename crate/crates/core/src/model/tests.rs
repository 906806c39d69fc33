use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::data::{default_poses, generate_shape, render_views, Family, Image, MultiViewSet, RenderMode, VoxelGrid};

fn small_config() -> ModelConfig {
    ModelConfig {
        latent: 8,
        resolution: 8,
        views: 2,
        view_height: 8,
        view_width: 8,
        view_channels: 1,
        image_channels: vec![4, 8],
        view_feature: 16,
        gru_hidden: 12,
        contrastive_policy: ContrastivePolicy::BothSided,
    }
}

fn random_grid(rng: &mut ChaCha8Rng, d: usize) -> VoxelGrid<f64> {
    let occ: Vec<bool> = (0..d * d * d).map(|_| rng.random_bool(0.3)).collect();
    VoxelGrid::from_occupancy(d, &occ).unwrap()
}

fn random_views(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> MultiViewSet<f64> {
    let views = (0..cfg.views)
        .map(|_| {
            let mut img = Image::zeros(cfg.view_height, cfg.view_width, cfg.view_channels);
            img.values.iter_mut().for_each(|v| *v = rng.random::<f64>());
            img
        })
        .collect();
    MultiViewSet {
        views,
        poses: default_poses(cfg.views),
    }
}

#[test]
fn encoder_output_lengths() {
    let cfg = small_config();
    let m = SwitchVae::<f64>::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = m.voxel_encode(&random_grid(&mut rng, 8)).unwrap();
    assert_eq!((d.mean.len(), d.log_var.len()), (8, 8));
    let d = m.image_encode(&random_views(&mut rng, &cfg)).unwrap();
    assert_eq!((d.mean.len(), d.log_var.len()), (8, 8));
}

#[test]
fn zero_weights_give_head_biases() {
    let m = SwitchVae::<f64>::new(small_config(), 1).unwrap();
    let mut params = m.params().clone();
    for (_, t) in params.iter_mut() {
        t.values_mut().fill(0.0);
    }
    let mu_b: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
    let lv_b: Vec<f64> = (0..8).map(|i| 0.05 * i as f64).collect();
    params.get_mut("vox/mu/b").unwrap().values_mut().copy_from_slice(&mu_b);
    params
        .get_mut("vox/logvar/b")
        .unwrap()
        .values_mut()
        .copy_from_slice(&lv_b);
    let m = SwitchVae::from_params(small_config(), params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let d = m.voxel_encode(&random_grid(&mut rng, 8)).unwrap();
        assert_eq!(d.mean, mu_b);
        assert_eq!(d.log_var, lv_b);
    }
}

#[test]
fn zero_decoder_outputs_half() {
    let m = SwitchVae::<f64>::new(small_config(), 1).unwrap();
    let mut params = m.params().clone();
    for (_, t) in params.iter_mut() {
        t.values_mut().fill(0.0);
    }
    let m = SwitchVae::from_params(small_config(), params).unwrap();
    let g = m.decode(&[0.7; 8]).unwrap();
    assert_eq!(g.resolution(), 8);
    assert!(g.values().iter().all(|&v| v == 0.5));
}

#[test]
fn decode_shape_range_and_determinism() {
    let m = SwitchVae::<f64>::new(small_config(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
    let a = m.decode(&z).unwrap();
    let b = m.decode(&z).unwrap();
    assert_eq!(a.values().len(), 512);
    assert!(a.values().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(a, b);
    assert!(m.decode(&z[..4]).is_err());
}

#[test]
fn voxel_encoder_is_input_sensitive() {
    let m = SwitchVae::<f64>::new(small_config(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let (a, b) = (random_grid(&mut rng, 8), random_grid(&mut rng, 8));
        assert_ne!(m.voxel_encode(&a).unwrap().mean, m.voxel_encode(&b).unwrap().mean);
    }
}

#[test]
fn image_encoder_is_order_sensitive_and_deterministic() {
    let cfg = small_config();
    let m = SwitchVae::<f64>::new(cfg.clone(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let views = random_views(&mut rng, &cfg);
    let mut swapped = views.clone();
    swapped.views.swap(0, 1);
    let a = m.image_encode(&views).unwrap();
    assert_ne!(a.mean, m.image_encode(&swapped).unwrap().mean);

    let mut dup = views.clone();
    dup.views[1] = dup.views[0].clone();
    assert_eq!(m.image_encode(&dup).unwrap(), m.image_encode(&dup).unwrap());
}

#[test]
fn input_contract_errors() {
    let cfg = small_config();
    let m = SwitchVae::<f64>::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(
        m.voxel_encode(&random_grid(&mut rng, 4)),
        Err(ModelError::ResolutionMismatch { expected: 8, actual: 4 })
    ));
    let mut views = random_views(&mut rng, &cfg);
    views.views.pop();
    assert!(matches!(m.image_encode(&views), Err(ModelError::InputMismatch { .. })));
}

#[test]
fn rendered_views_feed_the_image_encoder() {
    let cfg = small_config();
    let m = SwitchVae::<f64>::new(cfg.clone(), 1).unwrap();
    let g: VoxelGrid<f64> = generate_shape(Family::Table, &[0.8, 0.7, 0.6, 0.1, 0.1], 8).unwrap();
    let views = render_views(&g, &default_poses(2), 8, 8, RenderMode::Silhouette).unwrap();
    assert_eq!(m.image_encode(&views).unwrap().dim(), 8);
}

#[test]
fn shape_mirror_at_32() {
    let m = SwitchVae::<f32>::new(
        ModelConfig {
            latent: 4,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    let (enc, dec) = m.spatial_trace();
    assert_eq!(enc, vec![32, 32, 16, 16, 8]);
    assert_eq!(dec, vec![8, 16, 16, 32, 32]);
    assert!(ModelConfig {
        resolution: 30,
        ..ModelConfig::default()
    }
    .validate()
    .is_err());
}

#[test]
fn init_is_seeded() {
    let a = SwitchVae::<f64>::new(small_config(), 3).unwrap();
    let b = SwitchVae::<f64>::new(small_config(), 3).unwrap();
    let c = SwitchVae::<f64>::new(small_config(), 4).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    assert!(a.params().get("dec/fc0/b").unwrap().values().iter().all(|&v| v == 0.0));
}

#[test]
fn reparameterize_cases() {
    let d = LatentDistribution::new(vec![1.0, -2.0, 0.5], vec![0.3, -1.0, 2.0]).unwrap();
    assert_eq!(reparameterize(&d, &[0.0; 3], Modality::Vox).unwrap().z, d.mean);
    let unit = LatentDistribution::new(vec![1.0, -2.0, 0.5], vec![0.0; 3]).unwrap();
    let z = reparameterize(&unit, &[0.0, 1.0, 0.0], Modality::Img).unwrap().z;
    assert_eq!(z, vec![1.0, -1.0, 0.5]);
    assert!(reparameterize(&d, &[0.0; 2], Modality::Vox).is_err());
    assert!(LatentDistribution::new(vec![0.0], vec![f64::NAN]).is_err());
}

#[test]
fn reparameterize_sample_mean() {
    let d = LatentDistribution::new(vec![0.7, -1.2], vec![0.5, -0.4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 100_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = reparameterize(&d, &eps, Modality::Vox).unwrap().z;
        sum[0] += z[0];
        sum[1] += z[1];
    }
    for i in 0..2 {
        let sigma = (0.5 * d.log_var[i]).exp();
        assert!((sum[i] / n as f64 - d.mean[i]).abs() < 3.0 * sigma / (n as f64).sqrt());
    }
}

#[test]
fn switch_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    assert!((0..200).all(|e| SwitchDecision::draw(&mut rng, 1.0, e).alpha == Modality::Vox));
    assert!((0..200).all(|e| SwitchDecision::draw(&mut rng, 0.0, e).alpha == Modality::Img));
    let vox = (0..10_000)
        .filter(|&e| SwitchDecision::draw(&mut rng, 0.8, e).alpha == Modality::Vox)
        .count();
    let f = vox as f64 / 10_000.0;
    assert!((0.79..=0.81).contains(&f), "{f}");
}

#[test]
fn switch_select_routes_branches() {
    let img = LatentDistribution::new(vec![1.0], vec![0.0]).unwrap();
    let vox = LatentDistribution::new(vec![2.0], vec![0.0]).unwrap();
    let (a, i) = switch_select(&SwitchDecision::fixed(Modality::Vox, 0), &img, &vox);
    assert_eq!((a.mean[0], i.mean[0]), (2.0, 1.0));
    let (a, i) = switch_select(&SwitchDecision::fixed(Modality::Img, 0), &img, &vox);
    assert_eq!((a.mean[0], i.mean[0]), (1.0, 2.0));
}

#[test]
fn checkpoint_round_trip_and_validation() {
    let m = SwitchVae::<f32>::new(small_config(), 21).unwrap();
    let vel = m
        .params()
        .iter()
        .map(|(id, t)| (id.to_string(), vec![0.25f32; t.len()]))
        .collect();
    let ck = Checkpoint {
        model: m.clone(),
        epoch: 7,
        velocities: Some(vel),
        rng: Default::default(),
    };
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(back.model.params(), m.params());
    assert_eq!(back.epoch, 7);
    assert_eq!(back.velocities, ck.velocities);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    assert!(Checkpoint::<f32>::from_bytes(&bytes[1..]).is_err());
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let tampered = text.replacen("\"latent\":8", "\"latent\":9", 1);
    assert_ne!(tampered, text);
    let mut t = bytes.clone();
    let pos = text.find("\"latent\":8").unwrap();
    t[pos + 9] = b'9';
    assert!(matches!(
        Checkpoint::<f32>::from_bytes(&t),
        Err(ModelError::Checkpoint(_))
    ));
}

#[test]
fn rng_position_resumes_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    rng.set_stream(2);
    for _ in 0..37 {
        let _: u32 = rng.random();
    }
    let pos = RngPosition::of(5, &rng);
    let mut back = pos.restore().unwrap();
    let a: Vec<u64> = (0..5).map(|_| rng.random()).collect();
    let b: Vec<u64> = (0..5).map(|_| back.random()).collect();
    assert_eq!(a, b);
}
