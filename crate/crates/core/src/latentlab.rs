//! Latent-space exploration: interpolation, vector arithmetic, single-axis
//! sweeps, and export of decoded shapes.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{write_binvox, write_pgm, DataError, Image, VoxelGrid};
use crate::model::{ModelError, SwitchVae};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("latent length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("interpolation needs at least 2 steps, got {0}")]
    Steps(usize),
    #[error("dimension {dim} out of range for latent size {len}")]
    Dim { dim: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn same_len(a: usize, b: usize) -> Result<(), LatentError> {
    if a == b {
        Ok(())
    } else {
        Err(LatentError::Length(a, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath<T> {
    pub z_a: Vec<T>,
    pub z_b: Vec<T>,
    /// `steps` codes from `z_a` to `z_b` inclusive.
    pub codes: Vec<Vec<T>>,
}

/// `z_t = (1 − t)·z_a + t·z_b` for `t = 0, 1/(T−1), …, 1`. Endpoints are exact.
pub fn interpolate<T: Scalar>(z_a: &[T], z_b: &[T], steps: usize) -> Result<LatentPath<T>, LatentError> {
    same_len(z_a.len(), z_b.len())?;
    if steps < 2 {
        return Err(LatentError::Steps(steps));
    }
    let last = T::from_usize(steps - 1).unwrap();
    let codes = (0..steps)
        .map(|k| {
            if k == 0 {
                return z_a.to_vec();
            }
            if k == steps - 1 {
                return z_b.to_vec();
            }
            let t = T::from_usize(k).unwrap() / last;
            z_a.iter().zip(z_b).map(|(&a, &b)| (T::one() - t) * a + t * b).collect()
        })
        .collect();
    Ok(LatentPath {
        z_a: z_a.to_vec(),
        z_b: z_b.to_vec(),
        codes,
    })
}

/// `z_base + (z_plus − z_minus)`.
pub fn arithmetic<T: Scalar>(z_base: &[T], z_plus: &[T], z_minus: &[T]) -> Result<Vec<T>, LatentError> {
    same_len(z_base.len(), z_plus.len())?;
    same_len(z_base.len(), z_minus.len())?;
    Ok(z_base
        .iter()
        .zip(z_plus.iter().zip(z_minus))
        .map(|(&b, (&p, &m))| b + (p - m))
        .collect())
}

/// Copies of `z` with coordinate `dim` set to each of `values`, in order.
pub fn traverse<T: Scalar>(z: &[T], dim: usize, values: &[T]) -> Result<Vec<Vec<T>>, LatentError> {
    if dim >= z.len() {
        return Err(LatentError::Dim { dim, len: z.len() });
    }
    Ok(values
        .iter()
        .map(|&v| {
            let mut c = z.to_vec();
            c[dim] = v;
            c
        })
        .collect())
}

/// Slice through the middle of the grid, perpendicular to `axis` (0 = x).
pub fn mid_slice<T: Scalar>(grid: &VoxelGrid<T>, axis: usize) -> Image<T> {
    let d = grid.resolution();
    let m = d / 2;
    let mut img = Image::zeros(d, d, 1);
    for r in 0..d {
        for c in 0..d {
            img.values[r * d + c] = match axis {
                0 => grid.get(m, r, c),
                1 => grid.get(r, m, c),
                _ => grid.get(r, c, m),
            };
        }
    }
    img
}

/// Decodes each code and writes `{prefix}{k:03}.binvox` (thresholded at 0.5)
/// plus the three mid-axis probability slices `{prefix}{k:03}_{x,y,z}.pgm`.
/// Returns the written paths in order.
pub fn export_reconstructions<T: Scalar>(
    codes: &[Vec<T>],
    model: &SwitchVae<T>,
    out_dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>, LatentError> {
    if codes.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|source| LatentError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let half = T::from_f64(0.5).unwrap();
    let mut written = Vec::with_capacity(4 * codes.len());
    for (k, z) in codes.iter().enumerate() {
        let grid = model.decode(z)?;
        let stem = format!("{prefix}{k:03}");
        let path = out_dir.join(format!("{stem}.binvox"));
        write_binvox(&grid.threshold(half), &path)?;
        written.push(path);
        for (axis, name) in ["x", "y", "z"].iter().enumerate() {
            let path = out_dir.join(format!("{stem}_{name}.pgm"));
            write_pgm(&mid_slice(&grid, axis), &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
