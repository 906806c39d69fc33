use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{io_err, EvalError, LatentBank};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub label: usize,
    pub x: f64,
    pub y: f64,
}

/// Projects the bank onto its top two principal components.
///
/// Each component's sign is chosen so that its largest-magnitude coordinate is
/// positive. With fewer than two dimensions the missing coordinate is 0.
pub fn embed2d(bank: &LatentBank) -> Vec<EmbeddingRow> {
    let (n, d) = (bank.len(), bank.dim());
    if n == 0 {
        return Vec::new();
    }
    let rows = bank.rows();
    // Shifted mean: identical rows centre to exact zeros.
    let first = &rows[0].mu;
    let mean: Vec<f64> = (0..d)
        .map(|j| first[j] + rows.iter().map(|r| r.mu[j] - first[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i].mu[j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let components: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let mut big = 0;
            for (i, x) in v.iter().enumerate() {
                if x.abs() > v[big].abs() {
                    big = i;
                }
            }
            let sign = if v[big] < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|x| x * sign).collect()
        })
        .collect();
    let project = |i: usize, k: usize| {
        components
            .get(k)
            .map_or(0.0, |c| (0..d).map(|j| centered[(i, j)] * c[j]).sum())
    };
    rows.iter()
        .enumerate()
        .map(|(i, r)| EmbeddingRow {
            id: r.id.clone(),
            label: r.label,
            x: project(i, 0),
            y: project(i, 1),
        })
        .collect()
}

pub fn write_embedding_csv(rows: &[EmbeddingRow], path: &Path) -> Result<(), EvalError> {
    let mut s = String::from("id,label,x,y\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.id, r.label, r.x, r.y).unwrap();
    }
    std::fs::write(path, s).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::eval::LatentRow;
    use crate::model::Modality;

    fn bank(points: &[Vec<f64>]) -> LatentBank {
        LatentBank::from_rows(
            points[0].len(),
            points.iter().enumerate().map(|(i, p)| LatentRow {
                id: format!("p{i}"),
                label: i % 2,
                source: Modality::Vox,
                mu: p.clone(),
            }),
        )
        .unwrap()
    }

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn axis_aligned_data_is_recovered() {
        // Uncorrelated axes, large spread on the second.
        let pts: Vec<Vec<f64>> = [(-1.0, -10.0), (1.0, -5.0), (1.0, 5.0), (-1.0, 10.0)]
            .iter()
            .map(|&(a, b)| vec![a + 2.0, b + 3.0])
            .collect();
        let e = embed2d(&bank(&pts));
        for (p, r) in pts.iter().zip(&e) {
            assert!((r.x.abs() - (p[1] - 3.0).abs()).abs() < 1e-9);
            assert!((r.y.abs() - (p[0] - 2.0).abs()).abs() < 1e-9);
        }
        // Sign convention: the largest coordinate of each axis is +1, so x tracks +b.
        assert!((e[3].x - 10.0).abs() < 1e-9);
    }

    #[test]
    fn identical_points_embed_at_origin() {
        let pts = vec![vec![0.1, 0.7, -3.3]; 5];
        for r in embed2d(&bank(&pts)) {
            assert_eq!((r.x, r.y), (0.0, 0.0));
        }
    }

    #[test]
    fn first_component_has_most_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scales = [0.5, 3.0, 1.0, 2.0, 0.1];
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                scales
                    .iter()
                    .map(|s| s * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        let e = embed2d(&bank(&pts));
        let xs: Vec<f64> = e.iter().map(|r| r.x).collect();
        let ys: Vec<f64> = e.iter().map(|r| r.y).collect();
        assert!(variance(&xs) >= variance(&ys));
        // Projected variance equals the largest eigenvalue of the covariance.
        let d = pts[0].len();
        let m: Vec<f64> = (0..d).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / 200.0).collect();
        let c = DMatrix::from_fn(200, d, |i, j| pts[i][j] - m[j]);
        let top = SymmetricEigen::new(c.transpose() * &c / 200.0).eigenvalues.max();
        assert!((variance(&xs) - top).abs() < 1e-9 * top);
    }

    #[test]
    fn deterministic_and_empty() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 1.0], vec![0.0, 0.5]];
        assert_eq!(embed2d(&bank(&pts)), embed2d(&bank(&pts)));
        assert!(embed2d(&LatentBank::new(3)).is_empty());
    }
}
