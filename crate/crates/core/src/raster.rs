//! Row-major rasters, label maps and binary PGM (P5) IO.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<V> {
    width: usize,
    height: usize,
    data: Vec<V>,
}

impl<V: Copy> Raster<V> {
    pub fn new(width: usize, height: usize, data: Vec<V>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} raster with {} values",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: V) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[V] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> V {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: V) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape<W>(&self, other: &Raster<W>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<W: Copy>(&self, f: impl Fn(V) -> W) -> Raster<W> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub const BACKGROUND: u8 = 0;
pub const VILLI: u8 = 1;
pub const CRYPT: u8 = 2;
pub const SHOULDER: u8 = 3;
pub const BORDER: u8 = 4;
pub const MAX_LABEL: u8 = BORDER;

/// Per-pixel class labels: background, villi, crypt, villi shoulder and
/// crypt border.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap(Raster<u8>);

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > MAX_LABEL) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside 0..={MAX_LABEL}"
            )));
        }
        Ok(Self(Raster::new(width, height, labels)?))
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![BACKGROUND; width * height])
    }

    pub fn raster(&self) -> &Raster<u8> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.0.get(x, y)
    }

    /// Sets a pixel; out-of-range coordinates are ignored.
    pub fn paint(&mut self, x: i64, y: i64, label: u8) {
        debug_assert!(label <= MAX_LABEL);
        if x >= 0 && y >= 0 && (x as usize) < self.0.width && (y as usize) < self.0.height {
            self.0.set(x as usize, y as usize, label);
        }
    }

    pub fn contains_label(&self, label: u8) -> bool {
        self.0.data.contains(&label)
    }

    pub fn mask(&self, label: u8) -> Raster<bool> {
        self.0.map(|l| l == label)
    }

    /// Stacks `other` below `self`; widths must agree.
    pub fn stack_below(&self, other: &LabelMap) -> Result<LabelMap> {
        if self.width() != other.width() {
            return Err(Error::ShapeMismatch("label maps of different widths".into()));
        }
        let mut labels = self.0.data.clone();
        labels.extend_from_slice(&other.0.data);
        LabelMap::new(self.width(), self.height() + other.height(), labels)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode_pgm(&bytes)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.encode_pgm())?;
        f.flush()?;
        Ok(())
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend_from_slice(&self.0.data);
        out
    }

    /// Decodes a binary PGM whose pixel values are label ids.
    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(Error::Parse("not a binary PGM (expected P5)".into()));
        }
        let width = parse_header_number(bytes, &mut pos, "width")?;
        let height = parse_header_number(bytes, &mut pos, "height")?;
        let maxval = parse_header_number(bytes, &mut pos, "maxval")?;
        if maxval != 255 {
            return Err(Error::Parse(format!("PGM maxval must be 255, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        pos += 1;
        let need = width
            .checked_mul(height)
            .ok_or_else(|| Error::Parse("PGM dimensions overflow".into()))?;
        let pixels = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::Parse(format!("PGM raster truncated: need {need} bytes")))?;
        LabelMap::new(width, height, pixels.to_vec())
            .map_err(|e| Error::Parse(format!("PGM label map: {e}")))
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Parse(format!("invalid PGM {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let m = LabelMap::new(3, 2, vec![0, 1, 2, 3, 4, 0]).unwrap();
        let enc = m.encode_pgm();
        assert_eq!(LabelMap::decode_pgm(&enc).unwrap(), m);
        let mut commented = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(&[0, 1, 2, 3, 4, 0]);
        assert_eq!(LabelMap::decode_pgm(&commented).unwrap(), m);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(LabelMap::decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(LabelMap::decode_pgm(b"P5\n2 2\n255\n\x00\x01").is_err());
        assert!(LabelMap::decode_pgm(b"P5\n1 1\n255\n\x09").is_err());
        assert!(LabelMap::decode_pgm(b"P5\n1 1\n15\n\x00").is_err());
    }

    #[test]
    fn label_map_validates() {
        assert!(LabelMap::new(2, 1, vec![0, 5]).is_err());
        assert!(LabelMap::new(0, 1, vec![]).is_err());
        assert!(LabelMap::new(2, 2, vec![0; 3]).is_err());
    }
}
