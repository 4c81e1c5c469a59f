//! Binary PGM (P5) / PPM (P6) images with maxval 255.
//!
//! Normalized images are stored as their raw 8-bit source values; the
//! epsilon used for normalization goes into a sidecar text file next to the
//! image (`<file>.norm`) so a read reproduces the same normalized samples.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{normalize_image, Grid, Image, Shape, DEFAULT_EPSILON};

const MAXVAL: f64 = 255.0;

/// Encodes a grid whose samples are interpreted in `[0, 1]`; samples outside
/// are clamped.
pub fn encode_pnm(grid: &Grid) -> Result<Vec<u8>> {
    let shape = grid.shape();
    let magic = match shape.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidArgument(format!(
                "PNM supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", shape.width, shape.height).into_bytes();
    out.extend(grid.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Decodes P5/P6 bytes into raw samples `k / 255`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Grid> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format("PNM header", format!("unsupported magic {other:?}"))),
    };
    let width = parse_usize(&next_token(bytes, &mut pos)?)?;
    let height = parse_usize(&next_token(bytes, &mut pos)?)?;
    let maxval = parse_usize(&next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::format("PNM header", format!("maxval {maxval} (only 255 supported)")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let shape = Shape::new(width, height, channels);
    let raster = bytes
        .get(pos..pos + shape.len())
        .ok_or_else(|| Error::format("PNM raster", "truncated pixel data"))?;
    Grid::new(shape, raster.iter().map(|&b| b as f64 / MAXVAL).collect())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Grid> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_pnm(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    fs::write(path, encode_pnm(grid)?)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".norm");
    PathBuf::from(name)
}

/// Writes a normalized image together with its epsilon sidecar.
pub fn write_image(path: impl AsRef<Path>, image: &Image, epsilon: f64) -> Result<()> {
    let path = path.as_ref();
    let raw = image.map(|v| v - epsilon);
    write_pnm(path, &raw)?;
    fs::write(sidecar_path(path), format!("epsilon {epsilon:e}\n"))?;
    Ok(())
}

/// Reads an image and normalizes it with the sidecar epsilon, falling back
/// to [`DEFAULT_EPSILON`] when no sidecar exists.
pub fn read_image(path: impl AsRef<Path>) -> Result<(Image, f64)> {
    let path = path.as_ref();
    let raw = read_pnm(path)?;
    let sidecar = sidecar_path(path);
    let epsilon = if sidecar.exists() {
        parse_sidecar(&fs::read_to_string(sidecar)?)?
    } else {
        DEFAULT_EPSILON
    };
    Ok((normalize_image(&raw, epsilon)?, epsilon))
}

fn parse_sidecar(text: &str) -> Result<f64> {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix("epsilon"))
        .map(|v| v.trim().parse::<f64>())
        .next()
        .ok_or_else(|| Error::format("normalization sidecar", "missing epsilon line"))?
        .map_err(|e| Error::format("normalization sidecar", e.to_string()))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * MAXVAL).round() as u8
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("PNM header", "unexpected end of header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_usize(token: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| Error::format("PNM header", format!("expected integer, got {token:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_with_comment_is_parsed() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let g = decode_pnm(&bytes).unwrap();
        assert_eq!(g.shape(), Shape::gray(2, 1));
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_truncated_and_unsupported() {
        assert!(decode_pnm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(encode_pnm(&Grid::zeros(Shape::new(1, 1, 2))).is_err());
    }

    #[test]
    fn image_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let raw = Grid::from_fn(Shape::new(3, 2, 3), |i| (i * 13 % 256) as f64 / 255.0);
        let img = normalize_image(&raw, 2e-3).unwrap();
        write_image(&path, &img, 2e-3).unwrap();
        let (back, eps) = read_image(&path).unwrap();
        assert_eq!(eps, 2e-3);
        assert!(back.max_abs_diff(&img) < 1e-12);
    }

    proptest! {
        #[test]
        fn every_8bit_level_survives_normalized_round_trip(levels in proptest::collection::vec(any::<u8>(), 1..64)) {
            let n = levels.len();
            let raw = Grid::new(Shape::gray(n, 1), levels.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
            let img = normalize_image(&raw, DEFAULT_EPSILON).unwrap();
            let bytes = encode_pnm(&img.map(|v| v - DEFAULT_EPSILON)).unwrap();
            let decoded = decode_pnm(&bytes).unwrap();
            prop_assert_eq!(decoded.data(), raw.data());
        }
    }
}
