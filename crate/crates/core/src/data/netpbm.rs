use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Image, LabelMap};
use crate::error::{Error, Result};

/// Binary Netpbm raster (P5 gray or P6 RGB) with 8- or 16-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Netpbm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Netpbm {
    pub fn new(width: usize, height: usize, channels: usize, maxval: u16, samples: Vec<u16>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!("unsupported channel count {channels}")));
        }
        if maxval == 0 {
            return Err(Error::Format("maxval must be positive".into()));
        }
        if samples.len() != width * height * channels {
            return Err(Error::Dimension { expected: width * height * channels, got: samples.len() });
        }
        if let Some(s) = samples.iter().find(|&&s| s > maxval) {
            return Err(Error::Format(format!("sample {s} exceeds maxval {maxval}")));
        }
        Ok(Self { width, height, channels, maxval, samples })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        write!(w, "{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval)?;
        if self.maxval < 256 {
            let bytes: Vec<u8> = self.samples.iter().map(|&s| s as u8).collect();
            w.write_all(&bytes)?;
        } else {
            let bytes: Vec<u8> = self.samples.iter().flat_map(|s| s.to_be_bytes()).collect();
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 2];
        r.read_exact(&mut magic)?;
        let channels = match &magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&magic)))),
        };
        let width = header_number(&mut r)?;
        let height = header_number(&mut r)?;
        let maxval = header_number(&mut r)?;
        if maxval == 0 || maxval > u16::MAX as usize {
            return Err(Error::Format(format!("maxval {maxval} out of range")));
        }
        let count = width * height * channels;
        let samples = if maxval < 256 {
            let mut buf = vec![0u8; count];
            r.read_exact(&mut buf)?;
            buf.into_iter().map(u16::from).collect()
        } else {
            let mut buf = vec![0u8; 2 * count];
            r.read_exact(&mut buf)?;
            buf.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
        };
        Self::new(width, height, channels, maxval as u16, samples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

/// Reads one decimal header field, skipping whitespace and `#` comments, and
/// consumes the single whitespace byte that terminates it.
fn header_number<R: BufRead>(r: &mut R) -> Result<usize> {
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        match byte[0] {
            b'#' => {
                let mut line = Vec::new();
                r.read_until(b'\n', &mut line)?;
            }
            c if c.is_ascii_whitespace() => {}
            c if c.is_ascii_digit() => break,
            c => return Err(Error::Format(format!("unexpected header byte {c:#04x}"))),
        }
    }
    let mut value = (byte[0] - b'0') as usize;
    loop {
        r.read_exact(&mut byte)?;
        match byte[0] {
            c if c.is_ascii_digit() => {
                value = value
                    .checked_mul(10)
                    .and_then(|v| v.checked_add((c - b'0') as usize))
                    .ok_or_else(|| Error::Format("header number overflows".into()))?;
            }
            c if c.is_ascii_whitespace() => return Ok(value),
            c => return Err(Error::Format(format!("unexpected header byte {c:#04x}"))),
        }
    }
}

/// Maps `[lo, hi]` linearly onto `0..=maxval`, rounding to nearest.
pub fn quantize(image: &Image, lo: f64, hi: f64, maxval: u16) -> Result<Netpbm> {
    if !(hi > lo) {
        return Err(Error::Config(format!("empty sample range [{lo}, {hi}]")));
    }
    let scale = maxval as f64 / (hi - lo);
    let samples = image
        .as_slice()
        .iter()
        .map(|&v| ((v - lo) * scale).round().clamp(0.0, maxval as f64) as u16)
        .collect();
    Netpbm::new(image.width(), image.height(), image.channels(), maxval, samples)
}

/// Inverse of [`quantize`] up to rounding.
pub fn dequantize(pnm: &Netpbm, lo: f64, hi: f64) -> Result<Image> {
    let scale = (hi - lo) / pnm.maxval as f64;
    let data = pnm.samples.iter().map(|&s| lo + s as f64 * scale).collect();
    Image::new(pnm.height, pnm.width, pnm.channels, data)
}

/// 8-bit gray map holding label indices directly.
pub fn labels_to_pgm(labels: &LabelMap) -> Result<Netpbm> {
    let max = labels.labels.iter().copied().max().unwrap_or(0);
    if max > 255 {
        return Err(Error::Format(format!("label {max} does not fit an 8-bit map")));
    }
    let samples = labels.labels.iter().map(|&l| l as u16).collect();
    Netpbm::new(labels.width, labels.height, 1, 255, samples)
}

pub fn pgm_to_labels(pnm: &Netpbm) -> Result<LabelMap> {
    if pnm.channels != 1 {
        return Err(Error::Format("label map must be a gray image".into()));
    }
    LabelMap::new(pnm.height, pnm.width, pnm.samples.iter().map(|&s| s as usize).collect())
}
