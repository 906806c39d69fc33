//! Binary portable graymap (P5, maxval 255).

use std::path::Path;

use super::{DataError, Image};
use crate::scalar::Scalar;

pub fn write_pgm_bytes<T: Scalar>(img: &Image<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    for r in 0..img.height {
        for c in 0..img.width {
            let v = img.get(r, c, 0).to_f64_lossy().clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_pgm<T: Scalar>(img: &Image<T>, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, write_pgm_bytes(img)).map_err(DataError::io(path))
}

pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Image<T>, DataError> {
    let bytes = std::fs::read(path).map_err(DataError::io(path))?;
    parse_pgm(&bytes)
}

fn parse_pgm<T: Scalar>(bytes: &[u8]) -> Result<Image<T>, DataError> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::MalformedPgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(DataError::MalformedPgm(format!("magic `{}`", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| DataError::MalformedPgm(format!("bad number `{s}`")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(DataError::MalformedPgm(format!("maxval {maxval}")));
    }
    pos += 1;
    let data = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| DataError::MalformedPgm("short pixel data".into()))?;
    Ok(Image {
        height,
        width,
        channels: 1,
        values: data.iter().map(|&b| T::of(b as f64 / maxval as f64)).collect(),
    })
}
