//! binvox reader and writer (see `docs/binvox.md`).
//!
//! Voxel `(x, y, z)` of a grid is stored at binvox position `x·D² + z·D + y`:
//! `y` runs fastest, then `z`, then `x`. Data is a run-length stream of
//! `(value, count)` byte pairs with `count` in `1..=255`.

use std::path::Path;

use super::{DataError, VoxelGrid};
use crate::scalar::Scalar;

fn binvox_order(d: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..d).flat_map(move |x| (0..d).flat_map(move |z| (0..d).map(move |y| (x, y, z))))
}

/// Encodes a binary grid.
pub fn write_binvox_bytes<T: Scalar>(grid: &VoxelGrid<T>) -> Result<Vec<u8>, DataError> {
    grid.ensure_binary()?;
    let d = grid.resolution();
    let mut out = format!("#binvox 1\ndim {d} {d} {d}\ntranslate 0 0 0\nscale 1\ndata\n").into_bytes();
    let mut run: Option<(u8, u8)> = None;
    for (x, y, z) in binvox_order(d) {
        let v = u8::from(grid.get(x, y, z) == T::one());
        run = match run {
            Some((rv, n)) if rv == v && n < u8::MAX => Some((rv, n + 1)),
            Some((rv, n)) => {
                out.extend([rv, n]);
                Some((v, 1))
            }
            None => Some((v, 1)),
        };
    }
    if let Some((rv, n)) = run {
        out.extend([rv, n]);
    }
    Ok(out)
}

pub fn write_binvox<T: Scalar>(grid: &VoxelGrid<T>, path: &Path) -> Result<(), DataError> {
    let bytes = write_binvox_bytes(grid)?;
    std::fs::write(path, bytes).map_err(DataError::io(path))
}

pub fn read_binvox<T: Scalar>(path: &Path) -> Result<VoxelGrid<T>, DataError> {
    let bytes = std::fs::read(path).map_err(DataError::io(path))?;
    read_binvox_bytes(&bytes)
}

fn next_line<'b>(bytes: &'b [u8], pos: &mut usize) -> Result<&'b str, DataError> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| DataError::MalformedHeader("header ended before `data`".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end])
        .map(str::trim)
        .map_err(|_| DataError::MalformedHeader("header is not ASCII".into()))
}

pub fn read_binvox_bytes<T: Scalar>(bytes: &[u8]) -> Result<VoxelGrid<T>, DataError> {
    let mut pos = 0;
    let magic = next_line(bytes, &mut pos)?;
    if !magic.starts_with("#binvox") {
        return Err(DataError::MalformedHeader(format!("magic line `{magic}`")));
    }
    let mut dims: Option<[usize; 3]> = None;
    loop {
        let line = next_line(bytes, &mut pos)?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("data") => break,
            Some("dim") => {
                let v: Vec<usize> = parts
                    .map(|p| p.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| DataError::MalformedHeader(format!("bad dim line `{line}`")))?;
                if v.len() != 3 || v.contains(&0) {
                    return Err(DataError::MalformedHeader(format!("bad dim line `{line}`")));
                }
                dims = Some([v[0], v[1], v[2]]);
            }
            Some("translate") | Some("scale") => {
                for p in parts {
                    p.parse::<f64>()
                        .map_err(|_| DataError::MalformedHeader(format!("bad number in `{line}`")))?;
                }
            }
            Some(other) => {
                return Err(DataError::MalformedHeader(format!("unexpected keyword `{other}`")));
            }
            None => return Err(DataError::MalformedHeader("empty header line".into())),
        }
    }
    let dims = dims.ok_or_else(|| DataError::MalformedHeader("missing dim line".into()))?;
    if dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(DataError::NonCubic(dims));
    }
    let d = dims[0];
    let expected = d * d * d;
    let data = &bytes[pos..];
    let pairs = data.chunks(2);
    let mut occ = Vec::with_capacity(expected);
    let mut total = 0usize;
    for pair in pairs {
        let [value, count] = pair else {
            return Err(DataError::RleLengthMismatch {
                expected,
                actual: total,
            });
        };
        if *value > 1 {
            return Err(DataError::MalformedHeader(format!("voxel value {value} in run data")));
        }
        if *count == 0 {
            return Err(DataError::MalformedHeader("zero-length run".into()));
        }
        total += *count as usize;
        if total <= expected {
            occ.extend(std::iter::repeat_n(*value == 1, *count as usize));
        }
    }
    if total != expected {
        return Err(DataError::RleLengthMismatch {
            expected,
            actual: total,
        });
    }
    let mut grid = VoxelGrid::empty(d);
    for ((x, y, z), filled) in binvox_order(d).zip(occ) {
        if filled {
            grid.set(x, y, z, T::one());
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn random_grid_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let occ: Vec<bool> = (0..16 * 16 * 16).map(|_| rng.random_bool(0.3)).collect();
        let g = VoxelGrid::<f64>::from_occupancy(16, &occ).unwrap();
        let bytes = write_binvox_bytes(&g).unwrap();
        assert_eq!(read_binvox_bytes::<f64>(&bytes).unwrap(), g);
    }

    #[test]
    fn storage_order_is_y_fastest() {
        let mut g = VoxelGrid::<f64>::empty(2);
        g.set(0, 1, 0, 1.0); // binvox position 1
        let bytes = write_binvox_bytes(&g).unwrap();
        let data = &bytes[bytes.len() - 6..];
        assert_eq!(data, &[0, 1, 1, 1, 0, 6]);
    }

    #[test]
    fn non_cubic_rejected() {
        let bytes = b"#binvox 1\ndim 32 32 16\ntranslate 0 0 0\nscale 1\ndata\n\x00\xff";
        assert!(matches!(
            read_binvox_bytes::<f64>(bytes),
            Err(DataError::NonCubic([32, 32, 16]))
        ));
    }

    #[test]
    fn rle_length_mismatch_rejected() {
        let short = b"#binvox 1\ndim 2 2 2\ndata\n\x00\x07";
        assert!(matches!(
            read_binvox_bytes::<f64>(short),
            Err(DataError::RleLengthMismatch { expected: 8, actual: 7 })
        ));
        let long = b"#binvox 1\ndim 2 2 2\ndata\n\x00\x07\x01\x02";
        assert!(matches!(
            read_binvox_bytes::<f64>(long),
            Err(DataError::RleLengthMismatch { expected: 8, actual: 9 })
        ));
    }

    #[test]
    fn malformed_headers_rejected() {
        for bad in [
            &b"binvox 1\ndim 2 2 2\ndata\n\x00\x08"[..],
            b"#binvox 1\ndata\n\x00\x08",
            b"#binvox 1\ndim 2 2\ndata\n\x00\x08",
            b"#binvox 1\ndim 2 2 2\ncolour red\ndata\n\x00\x08",
            b"#binvox 1\ndim 2 2 2\n",
        ] {
            assert!(
                matches!(read_binvox_bytes::<f64>(bad), Err(DataError::MalformedHeader(_))),
                "{:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn non_binary_grid_not_written() {
        let g = VoxelGrid::<f64>::filled(2, 0.5);
        assert!(matches!(write_binvox_bytes(&g), Err(DataError::NotBinary { .. })));
    }
}
