//! Orthographic ray casting of voxel grids.
//!
//! The camera for pose `(azimuth, elevation)` sits at distance `D` from the grid
//! center along `(cos e·cos a, cos e·sin a, sin e)` and looks at the center. The
//! image plane spans `D × D` world units (one voxel per pixel when `H = W = D`),
//! with `right = (−sin a, cos a, 0)` and `up = right × forward`. For pose (0°, 0°)
//! pixel `(row, col)` therefore sees voxel column `y = col`, `z = D − 1 − row`.
//! Oblique views crop the cube corners that fall outside that square.

use super::{DataError, VoxelGrid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl Pose {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self {
            azimuth_deg,
            elevation_deg,
        }
    }
}

/// Azimuths 0°, 45°, …, 315° at 30° elevation.
pub fn default_poses(count: usize) -> Vec<Pose> {
    (0..count)
        .map(|i| Pose::new(360.0 * i as f64 / count as f64, 30.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RenderMode {
    /// 1 where the ray hits an occupied voxel.
    #[default]
    Silhouette,
    /// First-hit distance from the image plane divided by `2D`; 0 on a miss.
    Depth,
}

impl std::str::FromStr for RenderMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "silhouette" => Ok(RenderMode::Silhouette),
            "depth" => Ok(RenderMode::Depth),
            other => Err(DataError::Config(format!("unknown render mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for RenderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RenderMode::Silhouette => "silhouette",
            RenderMode::Depth => "depth",
        })
    }
}

/// Row-major `H × W × C` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f64> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![T::zero(); height * width * channels],
        }
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.values[(row * self.width + col) * self.channels + ch]
    }

    /// Channel-major `[C, H, W]` copy, the layout the image encoder consumes.
    pub fn to_chw(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.values.len());
        for c in 0..self.channels {
            for i in 0..self.height * self.width {
                out.push(self.values[i * self.channels + c]);
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values: self.values.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

/// Ordered views of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSet<T = f64> {
    pub views: Vec<Image<T>>,
    pub poses: Vec<Pose>,
}

impl<T: Scalar> MultiViewSet<T> {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> MultiViewSet<U> {
        MultiViewSet {
            views: self.views.iter().map(Image::cast).collect(),
            poses: self.poses.clone(),
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Distance along the ray to the first occupied voxel, by grid traversal.
fn first_hit<T: Scalar>(grid: &VoxelGrid<T>, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    let n = grid.resolution();
    let size = n as f64;
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if o[k] < 0.0 || o[k] > size {
                return None;
            }
        } else {
            let a = (0.0 - o[k]) / d[k];
            let b = (size - o[k]) / d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if t0 > t1 || t1 < 0.0 {
        return None;
    }
    let t_start = t0.max(0.0);
    let p = [0, 1, 2].map(|k| o[k] + d[k] * (t_start + 1e-9));
    let mut cell = [0, 1, 2].map(|k| (p[k].floor().max(0.0) as usize).min(n - 1));
    let mut step = [0isize; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for k in 0..3 {
        if d[k] > 1e-12 {
            step[k] = 1;
            t_max[k] = (cell[k] as f64 + 1.0 - o[k]) / d[k];
            t_delta[k] = 1.0 / d[k];
        } else if d[k] < -1e-12 {
            step[k] = -1;
            t_max[k] = (cell[k] as f64 - o[k]) / d[k];
            t_delta[k] = -1.0 / d[k];
        }
    }
    let mut t = t_start;
    loop {
        if grid.occupied(cell[0], cell[1], cell[2]) {
            return Some(t);
        }
        let k = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t = t_max[k];
        t_max[k] += t_delta[k];
        let next = cell[k] as isize + step[k];
        if step[k] == 0 || next < 0 || next >= n as isize {
            return None;
        }
        cell[k] = next as usize;
    }
}

/// Renders single-channel orthographic views of a grid.
pub fn render_views<T: Scalar>(
    grid: &VoxelGrid<T>,
    poses: &[Pose],
    height: usize,
    width: usize,
    mode: RenderMode,
) -> Result<MultiViewSet<T>, DataError> {
    let n = grid.resolution();
    if height < n || width < n {
        return Err(DataError::RenderTooSmall {
            height,
            width,
            resolution: n,
        });
    }
    let size = n as f64;
    let center = [size / 2.0; 3];
    let views = poses
        .iter()
        .map(|pose| {
            let (az, el) = (pose.azimuth_deg.to_radians(), pose.elevation_deg.to_radians());
            let dir_to_cam = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            let forward = dir_to_cam.map(|v| -v);
            let right = [-az.sin(), az.cos(), 0.0];
            let up = cross(right, forward);
            let mut img = Image::zeros(height, width, 1);
            for r in 0..height {
                let v = (0.5 - (r as f64 + 0.5) / height as f64) * size;
                for c in 0..width {
                    let u = ((c as f64 + 0.5) / width as f64 - 0.5) * size;
                    let origin = [0, 1, 2].map(|k| center[k] + size * dir_to_cam[k] + u * right[k] + v * up[k]);
                    if let Some(t) = first_hit(grid, origin, forward) {
                        img.values[r * width + c] = match mode {
                            RenderMode::Silhouette => T::one(),
                            RenderMode::Depth => T::of((t / (2.0 * size)).clamp(1e-6, 1.0)),
                        };
                    }
                }
            }
            img
        })
        .collect();
    Ok(MultiViewSet {
        views,
        poses: poses.to_vec(),
    })
}
