//! Procedural shape families.
//!
//! Shapes are unions of axis-aligned boxes and vertical cylinders in a unit
//! frame with `z` up. Before voxelization the union's bounding box is scaled
//! uniformly so its largest extent spans the whole grid, and centered along the
//! other axes. Box primitives snap to voxel boundaries and always keep at least
//! one voxel of thickness.

use rand::Rng;

use super::{DataError, VoxelGrid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Box,
    Table,
    Chair,
    CylinderPost,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Box, Family::Table, Family::Chair, Family::CylinderPost];

    pub fn name(self) -> &'static str {
        match self {
            Family::Box => "box",
            Family::Table => "table",
            Family::Chair => "chair",
            Family::CylinderPost => "cylinder-post",
        }
    }

    /// Inclusive `[lo, hi]` range of every parameter.
    ///
    /// * box: size x, size y, size z
    /// * table: top width, top depth, height, top thickness, leg thickness
    /// * chair: seat height, seat width, seat depth, back height, leg thickness, arms (0 or 1)
    /// * cylinder-post: radius, height, base width, base thickness
    pub fn param_ranges(self) -> &'static [(f64, f64)] {
        match self {
            Family::Box => &[(0.3, 1.0), (0.3, 1.0), (0.3, 1.0)],
            Family::Table => &[(0.6, 1.0), (0.5, 1.0), (0.4, 0.8), (0.06, 0.15), (0.06, 0.15)],
            Family::Chair => &[(0.3, 0.5), (0.4, 0.6), (0.4, 0.6), (0.35, 0.5), (0.05, 0.1), (0.0, 1.0)],
            Family::CylinderPost => &[(0.08, 0.2), (0.6, 1.0), (0.4, 0.8), (0.05, 0.15)],
        }
    }
}

impl std::str::FromStr for Family {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| DataError::UnknownFamily(s.to_string()))
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
enum Prim {
    Cuboid {
        lo: [f64; 3],
        hi: [f64; 3],
    },
    /// Vertical cylinder.
    Cylinder {
        cx: f64,
        cy: f64,
        r: f64,
        z0: f64,
        z1: f64,
    },
}

impl Prim {
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Prim::Cuboid { lo, hi } => (lo, hi),
            Prim::Cylinder { cx, cy, r, z0, z1 } => ([cx - r, cy - r, z0], [cx + r, cy + r, z1]),
        }
    }
}

fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> Prim {
    Prim::Cuboid { lo, hi }
}

fn validate(family: Family, params: &[f64]) -> Result<(), DataError> {
    let ranges = family.param_ranges();
    if params.len() != ranges.len() {
        return Err(DataError::ParamCount {
            family: family.name(),
            expected: ranges.len(),
            actual: params.len(),
        });
    }
    for (index, (&value, &(lo, hi))) in params.iter().zip(ranges).enumerate() {
        let arms_flag = family == Family::Chair && index == 5;
        if !(value >= lo && value <= hi) || (arms_flag && value != 0.0 && value != 1.0) {
            return Err(DataError::ParamOutOfRange {
                family: family.name(),
                index,
                value,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// Main body and optional arm primitives of a chair.
fn chair_parts(p: &[f64]) -> (Vec<Prim>, Vec<Prim>) {
    let (seat_h, w, d, back_h, t) = (p[0], p[1], p[2], p[3], p[4]);
    let seat_top = seat_h + t;
    let mut body = vec![cuboid([0.0, 0.0, seat_h], [w, d, seat_top])];
    for (x0, y0) in [(0.0, 0.0), (w - t, 0.0), (0.0, d - t), (w - t, d - t)] {
        body.push(cuboid([x0, y0, 0.0], [x0 + t, y0 + t, seat_h]));
    }
    body.push(cuboid([0.0, d - t, seat_top], [w, d, seat_top + back_h]));
    let arm_top = seat_top + 0.45 * back_h;
    let arms = vec![
        cuboid([0.0, 0.0, seat_top], [t, d - t, arm_top]),
        cuboid([w - t, 0.0, seat_top], [w, d - t, arm_top]),
    ];
    (body, arms)
}

fn primitives(family: Family, p: &[f64]) -> Vec<Prim> {
    match family {
        Family::Box => vec![cuboid([0.0; 3], [p[0], p[1], p[2]])],
        Family::Table => {
            let (w, d, h, top, t) = (p[0], p[1], p[2], p[3], p[4]);
            let mut v = vec![cuboid([0.0, 0.0, h - top], [w, d, h])];
            for (x0, y0) in [(0.0, 0.0), (w - t, 0.0), (0.0, d - t), (w - t, d - t)] {
                v.push(cuboid([x0, y0, 0.0], [x0 + t, y0 + t, h - top]));
            }
            v
        }
        Family::Chair => {
            let (mut body, arms) = chair_parts(p);
            if p[5] == 1.0 {
                body.extend(arms);
            }
            body
        }
        Family::CylinderPost => {
            let (r, h, bw, bt) = (p[0], p[1], p[2], p[3]);
            let c = bw.max(2.0 * r) / 2.0;
            vec![
                cuboid([c - bw / 2.0, c - bw / 2.0, 0.0], [c + bw / 2.0, c + bw / 2.0, bt]),
                Prim::Cylinder {
                    cx: c,
                    cy: c,
                    r,
                    z0: bt,
                    z1: bt + h,
                },
            ]
        }
    }
}

/// Uniform scale and offset mapping the union bounding box into the unit cube.
#[derive(Debug, Clone, Copy)]
struct Normalization {
    scale: f64,
    offset: [f64; 3],
}

impl Normalization {
    fn fit(prims: &[Prim]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in prims {
            let (a, b) = p.bounds();
            for k in 0..3 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(b[k]);
            }
        }
        let ext = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let scale = 1.0 / ext;
        let mut offset = [0.0; 3];
        for k in 0..3 {
            // Center each axis inside [0, 1].
            offset[k] = 0.5 - 0.5 * (lo[k] + hi[k]) * scale;
        }
        Self { scale, offset }
    }

    fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| v[k] * self.scale + self.offset[k])
    }
}

/// Snapped voxel index range `[a, b)` covering `[lo, hi]` on a `d`-voxel axis.
fn snap(lo: f64, hi: f64, d: usize) -> (usize, usize) {
    let df = d as f64;
    let clamp = |v: f64| v.round().clamp(0.0, df) as usize;
    let (mut a, mut b) = (clamp(lo * df - 1e-9), clamp(hi * df + 1e-9));
    if b <= a {
        let c = ((0.5 * (lo + hi) * df).floor().clamp(0.0, df - 1.0)) as usize;
        a = c;
        b = c + 1;
    }
    (a, b)
}

fn rasterize(prims: &[Prim], norm: &Normalization, d: usize, occ: &mut [bool]) {
    let idx = |x: usize, y: usize, z: usize| (x * d + y) * d + z;
    for p in prims {
        match *p {
            Prim::Cuboid { lo, hi } => {
                let (lo, hi) = (norm.apply(lo), norm.apply(hi));
                let r: Vec<(usize, usize)> = (0..3).map(|k| snap(lo[k], hi[k], d)).collect();
                for x in r[0].0..r[0].1 {
                    for y in r[1].0..r[1].1 {
                        for z in r[2].0..r[2].1 {
                            occ[idx(x, y, z)] = true;
                        }
                    }
                }
            }
            Prim::Cylinder { cx, cy, r, z0, z1 } => {
                let c = norm.apply([cx, cy, z0]);
                let top = norm.apply([cx, cy, z1])[2];
                let rr = r * norm.scale * d as f64;
                let (za, zb) = snap(c[2], top, d);
                let (ccx, ccy) = (c[0] * d as f64, c[1] * d as f64);
                // Voxel nearest the axis is always filled.
                let ax = (ccx.floor() as usize).min(d - 1);
                let ay = (ccy.floor() as usize).min(d - 1);
                for x in 0..d {
                    for y in 0..d {
                        let dx = x as f64 + 0.5 - ccx;
                        let dy = y as f64 + 0.5 - ccy;
                        if dx * dx + dy * dy <= rr * rr || (x == ax && y == ay) {
                            for z in za..zb {
                                occ[idx(x, y, z)] = true;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Voxelizes one member of a shape family at resolution `resolution`.
pub fn generate_shape<T: Scalar>(family: Family, params: &[f64], resolution: usize) -> Result<VoxelGrid<T>, DataError> {
    validate(family, params)?;
    if resolution == 0 {
        return Err(DataError::InvalidGrid("resolution must be positive".into()));
    }
    let prims = primitives(family, params);
    let norm = Normalization::fit(&prims);
    let mut occ = vec![false; resolution.pow(3)];
    rasterize(&prims, &norm, resolution, &mut occ);
    VoxelGrid::from_occupancy(resolution, &occ)
}

/// Voxels covered by the chair's arms under the same normalization as the full chair.
pub fn chair_arm_region<T: Scalar>(params: &[f64], resolution: usize) -> Result<VoxelGrid<T>, DataError> {
    validate(Family::Chair, params)?;
    let (body, arms) = chair_parts(params);
    let norm = Normalization::fit(&body);
    let mut occ = vec![false; resolution.pow(3)];
    rasterize(&arms, &norm, resolution, &mut occ);
    VoxelGrid::from_occupancy(resolution, &occ)
}

/// Draws a parameter vector uniformly from the family's ranges.
pub fn sample_params<R: Rng + ?Sized>(family: Family, rng: &mut R) -> Vec<f64> {
    family
        .param_ranges()
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            if family == Family::Chair && i == 5 {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            } else {
                rng.random_range(lo..=hi)
            }
        })
        .collect()
}
