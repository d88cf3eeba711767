use std::path::Path;

use serde::{Deserialize, Serialize};

use super::netpbm::{dequantize, labels_to_pgm, pgm_to_labels, quantize, Netpbm};
use super::{LabeledImage, Scenario};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One (clean, noisy, truth) triple; file names are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub clean: String,
    pub noisy: String,
    pub truth: String,
    /// Sample values mapped to 0 and maxval in the noisy file.
    pub noisy_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: Scenario,
    pub palette: Vec<Vec<f64>>,
    pub images: Vec<ManifestEntry>,
}

/// Writes 16-bit PPMs, 8-bit truth maps and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, scenario: &Scenario, images: &[LabeledImage]) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(images.len());
    for (k, img) in images.iter().enumerate() {
        let entry = ManifestEntry {
            seed: scenario.seed.wrapping_add(k as u64),
            clean: format!("clean_{k:03}.ppm"),
            noisy: format!("noisy_{k:03}.ppm"),
            truth: format!("truth_{k:03}.pgm"),
            noisy_range: {
                let (lo, hi) = img.noisy.range();
                if hi > lo { [lo, hi] } else { [lo, lo + 1.0] }
            },
        };
        quantize(&img.clean, 0.0, 1.0, 65535)?.save(dir.join(&entry.clean))?;
        quantize(&img.noisy, entry.noisy_range[0], entry.noisy_range[1], 65535)?.save(dir.join(&entry.noisy))?;
        labels_to_pgm(&img.truth)?.save(dir.join(&entry.truth))?;
        entries.push(entry);
    }
    let manifest = Manifest { scenario: *scenario, palette: scenario.palette(), images: entries };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<LabeledImage>)> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut images = Vec::with_capacity(manifest.images.len());
    for e in &manifest.images {
        let clean = dequantize(&Netpbm::load(dir.join(&e.clean))?, 0.0, 1.0)?;
        let noisy = dequantize(&Netpbm::load(dir.join(&e.noisy))?, e.noisy_range[0], e.noisy_range[1])?;
        let truth = pgm_to_labels(&Netpbm::load(dir.join(&e.truth))?)?;
        if truth.labels.iter().any(|&l| l >= manifest.palette.len()) {
            return Err(Error::Format(format!("{} holds labels outside the palette", e.truth)));
        }
        images.push(LabeledImage { clean, noisy, truth, palette: manifest.palette.clone() });
    }
    Ok((manifest, images))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario::colors(4).with_size(12, 10);
        let imgs = s.generate_set(2).unwrap();
        let m = write_dataset(dir.path(), &s, &imgs).unwrap();
        assert_eq!(m.images.len(), 2);
        let (m2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        for (a, b) in imgs.iter().zip(&back) {
            assert_eq!(a.truth, b.truth);
            assert_eq!(a.clean, b.clean);
            let step = (m.images[0].noisy_range[1] - m.images[0].noisy_range[0]).abs().max(10.0) / 65535.0;
            for (x, y) in a.noisy.as_slice().iter().zip(b.noisy.as_slice()) {
                assert!((x - y).abs() <= step);
            }
        }
    }
}
