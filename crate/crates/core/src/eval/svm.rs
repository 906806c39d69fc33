//! One-vs-rest C-SVM with an RBF kernel, solved by SMO over a precomputed Gram matrix.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{EvalError, LatentBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// Kernel bandwidth; `None` means `1 / dim`.
    pub gamma: Option<f64>,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

impl SvmConfig {
    pub fn gamma_for(&self, dim: usize) -> f64 {
        self.gamma.unwrap_or(1.0 / dim.max(1) as f64)
    }
}

/// `exp(-gamma · ‖a − b‖²)`.
pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// One binary machine: `f(x) = Σ coef_i · k(sv_i, x) + bias`, `coef_i = y_i·α_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Maximal KKT violation `m(α) − M(α)` when the solver stopped.
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64], gamma: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &c)| c * rbf_kernel(sv, x, gamma))
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Sorted distinct training labels; machine `k` separates `classes[k]` from the rest.
    pub classes: Vec<usize>,
    pub machines: Vec<BinarySvm>,
    pub gamma: f64,
    pub c: f64,
    pub dim: usize,
}

impl SvmModel {
    /// Decision value of every machine, in class order.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_vector(x, self.dim)?;
        Ok(self.machines.iter().map(|m| m.decision(x, self.gamma)).collect())
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<usize, EvalError> {
        let values = self.decision_values(x)?;
        let mut best = 0;
        for (k, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = k;
            }
        }
        Ok(self.classes[best])
    }
}

fn check_vector(x: &[f64], dim: usize) -> Result<(), EvalError> {
    if x.len() != dim {
        return Err(EvalError::Shape(format!(
            "vector length {} but model expects {dim}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Invalid("non-finite input vector".into()));
    }
    Ok(())
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Dual solution for labels `y ∈ {±1}` over the Gram matrix `k` (row-major `n×n`).
fn smo(k: &[f64], y: &[f64], cfg: &SvmConfig) -> Result<(Vec<f64>, f64, f64, usize), EvalError> {
    let n = y.len();
    let c = cfg.c;
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − Σα with Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0; n];
    let up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);
    let mut iter = 0;
    loop {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                (i, gmax) = (t, v);
            }
            if low(alpha[t], y[t]) && v < gmin {
                (j, gmin) = (t, v);
            }
        }
        let residual = (gmax - gmin).max(0.0);
        if i == usize::MAX || j == usize::MAX || gmax - gmin < cfg.tol {
            let rho = bias_rho(&alpha, &grad, y, c, gmax, gmin);
            return Ok((alpha, rho, if residual.is_finite() { residual } else { 0.0 }, iter));
        }
        if iter >= cfg.max_iter {
            return Err(EvalError::Invalid(format!(
                "SMO did not reach tolerance {} in {} iterations (violation {residual})",
                cfg.tol, cfg.max_iter
            )));
        }
        iter += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let quad = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else {
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[t * n + i] * di + y[j] * k[t * n + j] * dj);
        }
    }
}

/// Offset `ρ` with `f(x) = Σ y_i α_i k(x_i, x) − ρ`: mean of `y_i ∇_i` over free
/// vectors, else the midpoint of the feasible interval.
fn bias_rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64, gmax: f64, gmin: f64) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for t in 0..alpha.len() {
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += y[t] * grad[t];
            count += 1;
        }
    }
    if count > 0 {
        sum / count as f64
    } else if gmax.is_finite() && gmin.is_finite() {
        -(gmax + gmin) / 2.0
    } else if gmax.is_finite() {
        -gmax
    } else if gmin.is_finite() {
        -gmin
    } else {
        0.0
    }
}

/// Trains one machine per class. Samples are put in a canonical order first,
/// so the result does not depend on the order of the inputs.
pub fn svm_train(vectors: &[Vec<f64>], labels: &[usize], cfg: &SvmConfig) -> Result<SvmModel, EvalError> {
    if vectors.len() != labels.len() {
        return Err(EvalError::Shape(format!(
            "{} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) || !(cfg.tol > 0.0) {
        return Err(EvalError::Invalid(format!("invalid SVM C={} tol={}", cfg.c, cfg.tol)));
    }
    let dim = vectors.first().map_or(0, Vec::len);
    for v in vectors {
        check_vector(v, dim)?;
    }
    let gamma = cfg.gamma_for(dim);
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(EvalError::Invalid(format!("invalid SVM gamma {gamma}")));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(EvalError::Invalid(format!(
            "SVM needs at least 2 classes, got {}",
            classes.len()
        )));
    }

    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| {
        labels[a]
            .cmp(&labels[b])
            .then_with(|| lex_cmp(&vectors[a], &vectors[b]))
    });
    let xs: Vec<&[f64]> = order.iter().map(|&i| vectors[i].as_slice()).collect();
    let ls: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let n = xs.len();
    let mut gram = vec![0.0; n * n];
    for a in 0..n {
        gram[a * n + a] = 1.0;
        for b in 0..a {
            let v = rbf_kernel(xs[a], xs[b], gamma);
            gram[a * n + b] = v;
            gram[b * n + a] = v;
        }
    }

    let machines = classes
        .iter()
        .map(|&class| {
            let y: Vec<f64> = ls.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let (alpha, rho, kkt_residual, iterations) = smo(&gram, &y, cfg)?;
            let (support, coef) = alpha
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0.0)
                .map(|(t, &a)| (xs[t].to_vec(), y[t] * a))
                .unzip();
            Ok(BinarySvm {
                support,
                coef,
                bias: -rho,
                kkt_residual,
                iterations,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    log::debug!("svm: {} machines over {n} samples", machines.len());
    Ok(SvmModel {
        classes,
        machines,
        gamma,
        c: cfg.c,
        dim,
    })
}

pub fn svm_predict(model: &SvmModel, vectors: &[Vec<f64>]) -> Result<Vec<usize>, EvalError> {
    vectors.iter().map(|v| model.predict_one(v)).collect()
}

/// Trains on `train`, returns the fraction of `test` rows labelled correctly.
pub fn classify_eval(train: &LatentBank, test: &LatentBank, cfg: &SvmConfig) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Invalid("empty test bank".into()));
    }
    let model = svm_train(&train.vectors(), &train.labels(), cfg)?;
    let predicted = svm_predict(&model, &test.vectors())?;
    let correct = predicted.iter().zip(test.labels()).filter(|(p, l)| **p == *l).count();
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    /// Independent per-point KKT check: `y f(x)` against the margin given `α`.
    fn kkt_violation(m: &BinarySvm, x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let a = m
                .support
                .iter()
                .zip(&m.coef)
                .find(|(sv, _)| sv.as_slice() == xi.as_slice())
                .map_or(0.0, |(_, &cf)| cf * yi);
            let margin = yi * m.decision(xi, gamma);
            let v = if a <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if a >= c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    #[test]
    fn kernel_identity() {
        assert_eq!(rbf_kernel(&[0.3, -7.0], &[0.3, -7.0], 5.0), 1.0);
        assert!((rbf_kernel(&[0.0], &[2.0], 0.5) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn xor_is_separated() {
        let x = vec![vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]];
        let labels = vec![1, 1, 0, 0];
        let cfg = SvmConfig {
            c: 10.0,
            gamma: Some(1.0),
            ..SvmConfig::default()
        };
        let m = svm_train(&x, &labels, &cfg).unwrap();
        assert_eq!(svm_predict(&m, &x).unwrap(), labels);
        for (k, mach) in m.machines.iter().enumerate() {
            assert!(mach.kkt_residual <= 1e-3);
            assert!(mach.coef.iter().all(|c| c.abs() <= 10.0 + 1e-12));
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if l == m.classes[k] { 1.0 } else { -1.0 })
                .collect();
            assert!(kkt_violation(mach, &x, &y, 10.0, 1.0) <= 1e-3);
        }
    }

    fn clusters(rng: &mut ChaCha8Rng, per: usize, centers: &[[f64; 2]], spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut x = Vec::new();
        let mut l = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per {
                let dx: f64 = StandardNormal.sample(rng);
                let dy: f64 = StandardNormal.sample(rng);
                x.push(vec![c[0] + spread * dx, c[1] + spread * dy]);
                l.push(k);
            }
        }
        (x, l)
    }

    #[test]
    fn separable_clusters_and_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, l) = clusters(&mut rng, 20, &[[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]], 0.5);
        let cfg = SvmConfig::default();
        let m = svm_train(&x, &l, &cfg).unwrap();
        assert_eq!(svm_predict(&m, &x).unwrap(), l);
        for (k, mach) in m.machines.iter().enumerate() {
            assert!(mach.kkt_residual <= 1e-3);
            assert!(mach.coef.iter().all(|c| c.abs() <= cfg.c + 1e-12));
            let y: Vec<f64> = l.iter().map(|&c| if c == k { 1.0 } else { -1.0 }).collect();
            assert!(kkt_violation(mach, &x, &y, cfg.c, m.gamma) <= 1e-3);
        }
    }

    #[test]
    fn decision_values_ignore_sample_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, l) = clusters(&mut rng, 15, &[[0.0, 0.0], [1.5, 0.0], [0.0, 1.5]], 0.8);
        let m = svm_train(&x, &l, &SvmConfig::default()).unwrap();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.shuffle(&mut rng);
        let xp: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let lp: Vec<usize> = idx.iter().map(|&i| l[i]).collect();
        let mp = svm_train(&xp, &lp, &SvmConfig::default()).unwrap();
        for _ in 0..20 {
            let q = vec![rng.random_range(-2.0..3.0), rng.random_range(-2.0..3.0)];
            let (a, b) = (m.decision_values(&q).unwrap(), mp.decision_values(&q).unwrap());
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let m = SvmModel {
            classes: vec![3, 5],
            machines: vec![
                BinarySvm {
                    support: vec![],
                    coef: vec![],
                    bias: 0.2,
                    kkt_residual: 0.0,
                    iterations: 0,
                };
                2
            ],
            gamma: 1.0,
            c: 1.0,
            dim: 1,
        };
        assert_eq!(m.predict_one(&[0.0]).unwrap(), 3);
    }

    #[test]
    fn bad_inputs() {
        let cfg = SvmConfig::default();
        assert!(svm_train(&[vec![0.0], vec![1.0]], &[2, 2], &cfg).is_err());
        assert!(svm_train(&[vec![0.0], vec![f64::NAN]], &[0, 1], &cfg).is_err());
        assert!(svm_train(&[vec![0.0], vec![1.0, 2.0]], &[0, 1], &cfg).is_err());
        let m = svm_train(&[vec![0.0], vec![1.0]], &[0, 1], &cfg).unwrap();
        assert!(m.predict_one(&[f64::INFINITY]).is_err());
    }
}
