use super::DataError;
use crate::scalar::Scalar;

/// Cubic occupancy grid, indexed `(x, y, z)` with `z` fastest.
///
/// Ground-truth grids hold exactly 0 or 1; reconstructions hold values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T = f64> {
    resolution: usize,
    values: Vec<T>,
}

impl<T: Scalar> VoxelGrid<T> {
    pub fn new(resolution: usize, values: Vec<T>) -> Result<Self, DataError> {
        if resolution == 0 {
            return Err(DataError::InvalidGrid("resolution must be positive".into()));
        }
        let n = resolution.pow(3);
        if values.len() != n {
            return Err(DataError::InvalidGrid(format!(
                "{} values for a {resolution}^3 grid",
                values.len()
            )));
        }
        Ok(Self { resolution, values })
    }

    pub fn empty(resolution: usize) -> Self {
        Self::filled(resolution, T::zero())
    }

    pub fn filled(resolution: usize, v: T) -> Self {
        Self {
            resolution,
            values: vec![v; resolution.pow(3)],
        }
    }

    pub fn from_occupancy(resolution: usize, occ: &[bool]) -> Result<Self, DataError> {
        Self::new(
            resolution,
            occ.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
        )
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution + y) * self.resolution + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.values[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.values[i] = v;
    }

    /// Occupied at the 0.5 level.
    #[inline]
    pub fn occupied(&self, x: usize, y: usize, z: usize) -> bool {
        self.get(x, y, z) >= T::of(0.5)
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == T::zero() || v == T::one())
    }

    pub fn ensure_binary(&self) -> Result<(), DataError> {
        match self.values.iter().position(|&v| v != T::zero() && v != T::one()) {
            None => Ok(()),
            Some(index) => Err(DataError::NotBinary {
                index,
                value: self.values[index].to_f64_lossy(),
            }),
        }
    }

    /// Binary grid with 1 where the value is at least `threshold`.
    pub fn threshold(&self, threshold: T) -> Self {
        Self {
            resolution: self.resolution,
            values: self
                .values
                .iter()
                .map(|&v| if v >= threshold { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn count_filled(&self) -> usize {
        self.values.iter().filter(|&&v| v >= T::of(0.5)).count()
    }

    /// Number of voxels whose occupancy differs between two grids.
    pub fn hamming(&self, other: &Self) -> usize {
        self.values
            .iter()
            .zip(&other.values)
            .filter(|(&a, &b)| (a >= T::of(0.5)) != (b >= T::of(0.5)))
            .count()
    }

    pub fn cast<U: Scalar>(&self) -> VoxelGrid<U> {
        VoxelGrid {
            resolution: self.resolution,
            values: self.values.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}
