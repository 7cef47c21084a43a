//! Binary PPM (P6) / PGM (P5) readers and writers.
//!
//! Round trips are bit-exact: maxval is always 255 and the header uses a
//! single canonical form.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::Image;
use crate::{Error, Result};

fn bad(path: &Path, msg: &str) -> Error {
    Error::Config { path: path.display().to_string(), msg: msg.to_string() }
}

/// Parse the three header integers of a PNM file, skipping whitespace and
/// `#` comments. Returns (value, next offset).
fn parse_int(data: &[u8], mut pos: usize) -> Option<(usize, usize)> {
    loop {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
        } else {
            break;
        }
    }
    let start = pos;
    while pos < data.len() && data[pos].is_ascii_digit() {
        pos += 1;
    }
    if pos == start {
        return None;
    }
    let v = std::str::from_utf8(&data[start..pos]).ok()?.parse().ok()?;
    Some((v, pos))
}

fn read_pnm(path: &Path, magic: &[u8], channels: usize) -> Result<Image> {
    let data = fs::read(path)?;
    if data.len() < 2 || &data[..2] != magic {
        return Err(bad(path, "wrong magic number"));
    }
    let (cols, pos) = parse_int(&data, 2).ok_or_else(|| bad(path, "bad width"))?;
    let (rows, pos) = parse_int(&data, pos).ok_or_else(|| bad(path, "bad height"))?;
    let (maxval, pos) = parse_int(&data, pos).ok_or_else(|| bad(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(bad(path, "only maxval 255 is supported"));
    }
    if rows == 0 || cols == 0 {
        return Err(bad(path, "zero dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let need = rows * cols * channels;
    if data.len() < start + need {
        return Err(bad(path, "truncated raster"));
    }
    Ok(Image { rows, cols, channels, data: data[start..start + need].to_vec() })
}

/// Read a binary P6 color image.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    read_pnm(path.as_ref(), b"P6", 3)
}

/// Read a binary P5 grayscale image.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    read_pnm(path.as_ref(), b"P5", 1)
}

/// Read a frame by extension. `.ppm` and `.pgm` are supported; `.png` slots
/// in behind the same interface once a decoder is wired up.
pub fn read_any(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        Some("pgm") => read_pgm(path),
        Some(other) => Err(bad(path, &format!("unsupported image extension .{other}"))),
        None => Err(bad(path, "missing image extension")),
    }
}

fn write_pnm(path: &Path, img: &Image, magic: &str) -> Result<()> {
    let mut out = Vec::with_capacity(img.data.len() + 32);
    write!(out, "{}\n{} {}\n255\n", magic, img.cols, img.rows)?;
    out.extend_from_slice(&img.data);
    fs::write(path, out)?;
    Ok(())
}

/// Write a binary P6 color image.
pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    assert_eq!(img.channels, 3, "write_ppm needs a 3-channel image");
    write_pnm(path.as_ref(), img, "P6")
}

/// Write a binary P5 grayscale image.
pub fn write_pgm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    assert_eq!(img.channels, 1, "write_pgm needs a 1-channel image");
    write_pnm(path.as_ref(), img, "P5")
}
