//! The training objective: γ-weighted reconstruction cross entropy, KL to the
//! standard normal prior, and a squared-distance contrastive term between the
//! two encoders' latents.
//!
//! Per-sample terms are sums over voxels and latent dimensions; batches average
//! over samples.

use serde::{Deserialize, Serialize};

use crate::data::VoxelGrid;
use crate::model::{LatentCode, LatentDistribution};
use crate::numerics::{bce_sum, kl_sum, NumericsError, Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_kl: f64,
    pub lambda_contras: f64,
    pub gamma: f64,
    /// Multiplier on the reconstruction term, 1 in every normal configuration.
    /// Setting it to 0 removes reconstruction pressure, which the collapse harness relies on.
    pub recon_weight: f64,
    /// Scale latents to unit length before the contrastive distance.
    pub unit_norm: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_kl: 1e-3,
            lambda_contras: 1.0,
            gamma: 0.8,
            recon_weight: 1.0,
            unit_norm: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), NumericsError> {
        let bad = |m: String| Err(NumericsError::InvalidArgument(m));
        if !(self.lambda_kl >= 0.0 && self.lambda_kl.is_finite()) {
            return bad(format!("lambda_kl = {} must be finite and >= 0", self.lambda_kl));
        }
        if !(self.lambda_contras >= 0.0 && self.lambda_contras.is_finite()) {
            return bad(format!(
                "lambda_contras = {} must be finite and >= 0",
                self.lambda_contras
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma = {} must lie in (0, 1)", self.gamma));
        }
        if !(self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return bad(format!("recon_weight = {} must be finite and >= 0", self.recon_weight));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub contras: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(recon: f64, kl: f64, contras: f64, w: &LossWeights) -> Self {
        Self {
            recon,
            kl,
            contras,
            total: w.recon_weight * recon + w.lambda_kl * kl + w.lambda_contras * contras,
        }
    }

    /// Elementwise mean of a nonempty slice; zeros when empty.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let mut m = Self::default();
        for b in items {
            m.recon += b.recon;
            m.kl += b.kl;
            m.contras += b.contras;
            m.total += b.total;
        }
        m.recon /= n;
        m.kl /= n;
        m.contras /= n;
        m.total /= n;
        m
    }
}

/// `Σ_k −γ x_k log x̂_k − (1−γ)(1−x_k) log(1−x̂_k)` with `x̂` clamped to `[1e-7, 1−1e-7]`.
pub fn recon_loss<T: Scalar>(target: &VoxelGrid<T>, prediction: &VoxelGrid<T>, gamma: T) -> Result<T, NumericsError> {
    if target.resolution() != prediction.resolution() {
        let (a, b) = (target.resolution(), prediction.resolution());
        return Err(NumericsError::shape("recon_loss", &[a, a, a], &[b, b, b]));
    }
    Ok(bce_sum(prediction.values(), target.values(), gamma))
}

/// `−½ Σ (1 + log σ² − μ² − σ²)`.
pub fn kl_loss<T: Scalar>(dist: &LatentDistribution<T>) -> T {
    kl_sum(&dist.mean, &dist.log_var)
}

/// `‖z_img − z_vox‖²`.
pub fn contrastive_loss<T: Scalar>(z_img: &LatentCode<T>, z_vox: &LatentCode<T>) -> Result<T, NumericsError> {
    if z_img.z.len() != z_vox.z.len() {
        return Err(NumericsError::LengthMismatch {
            expected: z_img.z.len(),
            actual: z_vox.z.len(),
        });
    }
    Ok(z_img.z.iter().zip(&z_vox.z).map(|(&a, &b)| (a - b) * (a - b)).sum())
}

fn unit<T: Scalar>(z: &[T]) -> Vec<T> {
    let n = z.iter().map(|&v| v * v).sum::<T>().sqrt();
    z.iter().map(|&v| v / n).collect()
}

/// Composes the three terms; KL applies to the switched (active) branch only.
pub fn total_loss<T: Scalar>(
    target: &VoxelGrid<T>,
    prediction: &VoxelGrid<T>,
    dist_active: &LatentDistribution<T>,
    z_img: &LatentCode<T>,
    z_vox: &LatentCode<T>,
    weights: &LossWeights,
) -> Result<LossBreakdown, NumericsError> {
    weights.validate()?;
    let recon = recon_loss(target, prediction, T::of(weights.gamma))?;
    let kl = kl_loss(dist_active);
    let contras = if weights.unit_norm {
        let (a, b) = (unit(&z_img.z), unit(&z_vox.z));
        contrastive_loss(
            &LatentCode {
                z: a,
                source: z_img.source,
            },
            &LatentCode {
                z: b,
                source: z_vox.source,
            },
        )?
    } else {
        contrastive_loss(z_img, z_vox)?
    };
    Ok(LossBreakdown::compose(
        recon.to_f64_lossy(),
        kl.to_f64_lossy(),
        contras.to_f64_lossy(),
        weights,
    ))
}

/// Tape handles of the objective and its components.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub contras: Var,
}

impl ObjectiveVars {
    pub fn breakdown<T: Scalar>(&self, tape: &Tape<'_, T>, w: &LossWeights) -> LossBreakdown {
        LossBreakdown::compose(
            tape.item(self.recon).to_f64_lossy(),
            tape.item(self.kl).to_f64_lossy(),
            tape.item(self.contras).to_f64_lossy(),
            w,
        )
    }
}

/// Records the objective on a tape.
///
/// A term whose weight is zero is evaluated on detached inputs so that it
/// neither contributes gradient nor marks parameters as reached.
pub fn objective_on<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    target: impl Into<std::borrow::Cow<'a, [T]>>,
    prediction: Var,
    active: (Var, Var),
    z_img: Var,
    z_vox: Var,
    w: &LossWeights,
) -> Result<ObjectiveVars, NumericsError> {
    w.validate()?;
    let gate = |tape: &mut Tape<'a, T>, v: Var, weight: f64| if weight == 0.0 { tape.detach(v) } else { v };

    let pred = gate(tape, prediction, w.recon_weight);
    let recon = tape.recon_bce(pred, target, T::of(w.gamma))?;

    let (mu, lv) = (gate(tape, active.0, w.lambda_kl), gate(tape, active.1, w.lambda_kl));
    let kl = tape.kl_divergence(mu, lv)?;

    let (mut a, mut b) = (gate(tape, z_img, w.lambda_contras), gate(tape, z_vox, w.lambda_contras));
    if w.unit_norm {
        a = tape.unit_norm(a)?;
        b = tape.unit_norm(b)?;
    }
    let contras = tape.sq_dist(a, b)?;

    let mut total = tape.scale(recon, T::of(w.recon_weight));
    let k = tape.scale(kl, T::of(w.lambda_kl));
    total = tape.add(total, k)?;
    let c = tape.scale(contras, T::of(w.lambda_contras));
    total = tape.add(total, c)?;
    Ok(ObjectiveVars {
        total,
        recon,
        kl,
        contras,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Modality;
    use proptest::prelude::*;

    fn dist(mean: Vec<f64>, log_var: Vec<f64>) -> LatentDistribution<f64> {
        LatentDistribution::new(mean, log_var).unwrap()
    }

    fn code(z: Vec<f64>, source: Modality) -> LatentCode<f64> {
        LatentCode { z, source }
    }

    fn single(v: f64) -> VoxelGrid<f64> {
        VoxelGrid::new(1, vec![v]).unwrap()
    }

    #[test]
    fn recon_closed_forms() {
        let ln2 = std::f64::consts::LN_2;
        let pos = recon_loss(&single(1.0), &single(0.5), 0.8).unwrap();
        assert!((pos - 0.8 * ln2).abs() < 1e-12);
        assert!((pos - 0.5545177).abs() < 1e-7);
        let neg = recon_loss(&single(0.0), &single(0.5), 0.8).unwrap();
        assert!((neg - 0.2 * ln2).abs() < 1e-12);
        assert!((neg - 0.1386294).abs() < 1e-7);
    }

    #[test]
    fn recon_near_perfect_sits_at_clamp_floor() {
        let t = VoxelGrid::filled(16, 1.0);
        let p = VoxelGrid::filled(16, 1.0 - 1e-7);
        let got = recon_loss(&t, &p, 0.8).unwrap();
        // 4096 voxels each contribute -0.8 ln(1 - 1e-7), about 8e-8.
        let floor = -4096.0 * 0.8 * (-1e-7f64).ln_1p();
        assert!((got - floor).abs() < 1e-12);
        assert!(got / 4096.0 < 1e-4);
    }

    #[test]
    fn recon_rejects_shape_mismatch() {
        assert!(recon_loss(&VoxelGrid::<f64>::empty(4), &VoxelGrid::empty(8), 0.8).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_loss(&dist(vec![0.0; 5], vec![0.0; 5])), 0.0);
        assert!((kl_loss(&dist(vec![1.0], vec![0.0])) - 0.5).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((kl_loss(&dist(vec![0.0], vec![1.0])) - (e - 2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn contrastive_closed_form_and_length_check() {
        let a = code(vec![1.0, 2.0], Modality::Img);
        let b = code(vec![1.0, 0.0], Modality::Vox);
        assert_eq!(contrastive_loss(&a, &b).unwrap(), 4.0);
        assert_eq!(contrastive_loss(&a, &a).unwrap(), 0.0);
        assert!(contrastive_loss(&a, &code(vec![1.0], Modality::Vox)).is_err());
    }

    #[test]
    fn total_reduces_to_recon_without_regularizers() {
        let t = VoxelGrid::new(2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = VoxelGrid::new(2, vec![0.3, 0.6, 0.9, 0.2, 0.5, 0.5, 0.7, 0.1]).unwrap();
        let d = dist(vec![0.3, -0.2], vec![0.1, 0.4]);
        let (a, b) = (
            code(vec![0.5, 1.0], Modality::Img),
            code(vec![-1.0, 0.0], Modality::Vox),
        );
        let w = LossWeights {
            lambda_kl: 0.0,
            lambda_contras: 0.0,
            ..LossWeights::default()
        };
        let out = total_loss(&t, &p, &d, &a, &b, &w).unwrap();
        assert_eq!(out.total, out.recon);
        assert!(out.kl > 0.0 && out.contras > 0.0);

        let w = LossWeights {
            lambda_kl: 0.37,
            lambda_contras: 2.5,
            ..LossWeights::default()
        };
        let out = total_loss(&t, &p, &d, &a, &b, &w).unwrap();
        assert!((out.total - (out.recon + 0.37 * out.kl + 2.5 * out.contras)).abs() < 1e-12);
    }

    #[test]
    fn tape_objective_matches_value_functions() {
        let t = VoxelGrid::new(2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = vec![0.3, 0.6, 0.9, 0.2, 0.5, 0.5, 0.7, 0.1];
        let w = LossWeights {
            lambda_kl: 0.2,
            lambda_contras: 1.5,
            ..LossWeights::default()
        };
        let mut tape = Tape::<f64>::new();
        let pv = tape.leaf(vec![8], p.clone(), true).unwrap();
        let mu = tape.leaf(vec![2], vec![0.3, -0.2], true).unwrap();
        let lv = tape.leaf(vec![2], vec![0.1, 0.4], true).unwrap();
        let zi = tape.leaf(vec![2], vec![0.5, 1.0], true).unwrap();
        let zv = tape.leaf(vec![2], vec![-1.0, 0.0], true).unwrap();
        let o = objective_on(&mut tape, t.values(), pv, (mu, lv), zi, zv, &w).unwrap();
        let got = o.breakdown(&tape, &w);
        let want = total_loss(
            &t,
            &VoxelGrid::new(2, p).unwrap(),
            &dist(vec![0.3, -0.2], vec![0.1, 0.4]),
            &code(vec![0.5, 1.0], Modality::Img),
            &code(vec![-1.0, 0.0], Modality::Vox),
            &w,
        )
        .unwrap();
        assert!((got.total - want.total).abs() < 1e-12);
        assert!((tape.item(o.total) - want.total).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_terms_do_not_reach_inputs() {
        let target = [1.0, 0.0];
        let w = LossWeights {
            lambda_kl: 0.0,
            lambda_contras: 0.0,
            ..LossWeights::default()
        };
        let mut tape = Tape::<f64>::new();
        let pv = tape.leaf(vec![2], vec![0.4, 0.4], true).unwrap();
        let mu = tape.leaf(vec![1], vec![0.3], true).unwrap();
        let lv = tape.leaf(vec![1], vec![0.1], true).unwrap();
        let zi = tape.leaf(vec![1], vec![0.5], true).unwrap();
        let zv = tape.leaf(vec![1], vec![-1.0], true).unwrap();
        let o = objective_on(&mut tape, &target, pv, (mu, lv), zi, zv, &w).unwrap();
        let g = tape.backward(o.total).unwrap();
        assert!(g.get(pv).is_some());
        for v in [mu, lv, zi, zv] {
            assert!(g.get(v).is_none());
        }
    }

    #[test]
    fn unit_norm_flag_bounds_contrastive_term() {
        let t = single(1.0);
        let d = dist(vec![0.0], vec![0.0]);
        let w = LossWeights {
            unit_norm: true,
            ..LossWeights::default()
        };
        let a = code(vec![30.0, 40.0], Modality::Img);
        let b = code(vec![-3.0, -4.0], Modality::Vox);
        let out = total_loss(&t, &single(0.5), &d, &a, &b, &w).unwrap();
        assert!((out.contras - 4.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_weights_rejected() {
        for w in [
            LossWeights {
                gamma: 1.0,
                ..LossWeights::default()
            },
            LossWeights {
                gamma: 0.0,
                ..LossWeights::default()
            },
            LossWeights {
                lambda_kl: -1.0,
                ..LossWeights::default()
            },
            LossWeights {
                lambda_contras: f64::NAN,
                ..LossWeights::default()
            },
        ] {
            assert!(w.validate().is_err());
        }
    }

    #[test]
    fn recon_minimized_at_target() {
        for x in [0.0, 1.0] {
            let scan: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
            let losses: Vec<f64> = scan
                .iter()
                .map(|&p| recon_loss(&single(x), &single(p), 0.8).unwrap())
                .collect();
            let argmin = losses.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let expected = if x == 1.0 { scan.len() - 1 } else { 0 };
            assert_eq!(argmin, expected);
        }
    }

    proptest! {
        #[test]
        fn losses_nonnegative(
            xs in proptest::collection::vec(any::<bool>(), 8),
            ps in proptest::collection::vec(0.0f64..1.0, 8),
            mu in proptest::collection::vec(-5.0f64..5.0, 3),
            lv in proptest::collection::vec(-5.0f64..5.0, 3),
            z in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let t = VoxelGrid::new(2, xs.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
            let p = VoxelGrid::new(2, ps).unwrap();
            prop_assert!(recon_loss(&t, &p, 0.8).unwrap() >= 0.0);
            prop_assert!(kl_loss(&dist(mu, lv)) >= 0.0);
            let a = code(z[..3].to_vec(), Modality::Img);
            let b = code(z[3..].to_vec(), Modality::Vox);
            let ab = contrastive_loss(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, contrastive_loss(&b, &a).unwrap());
        }

        #[test]
        fn kl_zero_only_at_prior(mu in -2.0f64..2.0, lv in -2.0f64..2.0) {
            let k = kl_loss(&dist(vec![mu], vec![lv]));
            if mu.abs() > 1e-3 || lv.abs() > 1e-3 {
                prop_assert!(k > 0.0);
            }
        }
    }
}
