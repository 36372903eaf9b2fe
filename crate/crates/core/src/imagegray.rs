//! Snapshot → square 8-bit grayscale image, and binary PGM I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::plantsim::Snapshot;

/// Square row-major 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    side: usize,
    pixels: Vec<u8>,
}

/// How raw parameter values are mapped onto `[0, 255]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Normalization {
    /// Min-max over the snapshot itself.
    #[default]
    PerImage,
    /// Fixed `(low, high)` per parameter; values outside are clamped.
    PerParameter(Vec<(f64, f64)>),
}

/// `⌈√count⌉`, the smallest side whose square holds `count` cells.
pub fn side_for(count: usize) -> usize {
    let mut side = (count as f64).sqrt() as usize;
    while side * side < count {
        side += 1;
    }
    while side > 0 && (side - 1) * (side - 1) >= count {
        side -= 1;
    }
    side
}

fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

impl GrayImage {
    pub fn new(side: usize, pixels: Vec<u8>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::InvalidArgument(format!(
                "{} pixels do not form a {side}x{side} image",
                pixels.len()
            )));
        }
        Ok(Self { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.side + col]
    }

    /// Pixels scaled to `[0, 1]` network inputs.
    pub fn to_unit_floats(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }
}

pub fn encode(snapshot: &Snapshot) -> Result<GrayImage> {
    encode_values(&snapshot.values, &Normalization::PerImage)
}

pub fn encode_with(snapshot: &Snapshot, norm: &Normalization) -> Result<GrayImage> {
    encode_values(&snapshot.values, norm)
}

/// Packs `values` row-major into a zero-padded square and scales them to
/// bytes. A constant input maps every data cell to 0.
pub fn encode_values(values: &[f64], norm: &Normalization) -> Result<GrayImage> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("snapshot has no parameters".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at parameter {i}")));
    }
    let side = side_for(values.len());
    let mut pixels = vec![0u8; side * side];
    match norm {
        Normalization::PerImage => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                let span = max - min;
                for (p, v) in pixels.iter_mut().zip(values) {
                    *p = round_half_up(255.0 * (v - min) / span);
                }
            }
        }
        Normalization::PerParameter(ranges) => {
            if ranges.len() != values.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} ranges for {} parameters",
                    ranges.len(),
                    values.len()
                )));
            }
            for ((p, v), (lo, hi)) in pixels.iter_mut().zip(values).zip(ranges) {
                *p = if hi > lo {
                    round_half_up(255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
                } else {
                    0
                };
            }
        }
    }
    GrayImage::new(side, pixels)
}

pub fn pgm_bytes(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.side, image.side).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&pgm_bytes(image)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

/// Parses a binary (P5) 8-bit PGM. Header comments are skipped.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(Error::MalformedPgm("file too short".into()));
    }
    let magic = String::from_utf8_lossy(&bytes[..2]).into_owned();
    if magic != "P5" {
        return Err(Error::UnsupportedPgm(magic));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments before each header token.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedPgm("expected a header number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedPgm("header number out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::MalformedPgm(format!("maxval {maxval}, expected 255")));
    }
    if width != height {
        return Err(Error::MalformedPgm(format!("non-square {width}x{height} image")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedPgm("missing whitespace after header".into()));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::MalformedPgm(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            width * height
        )));
    }
    GrayImage::new(width, payload.to_vec()).map_err(|e| Error::MalformedPgm(e.to_string()))
}
