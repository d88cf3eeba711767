//! Toroidal grid graphs and per-pixel weight patches.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel grid with wrap-around `(2r+1) x (2r+1)` neighborhoods.
///
/// Neighbor `p` of pixel `i` sits at window offset `(p / side - r, p % side - r)`,
/// so the center is at position `(|N| - 1) / 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGraph {
    height: usize,
    width: usize,
    radius: usize,
    neighbors: Vec<usize>,
    // reverse[k * |N| + p] is the unique pixel i whose neighbor p is k
    reverse: Vec<usize>,
}

impl GridGraph {
    pub fn new(height: usize, width: usize, radius: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!("grid dimensions {height}x{width} must be positive")));
        }
        if radius == 0 {
            return Err(Error::Config("neighborhood radius must be at least 1".into()));
        }
        let side = 2 * radius + 1;
        let nn = side * side;
        let n = height * width;
        let r = radius as isize;
        let (h, w) = (height as isize, width as isize);
        let mut neighbors = Vec::with_capacity(n * nn);
        let mut reverse = vec![0; n * nn];
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let p = ((dy + r) * side as isize + dx + r) as usize;
                        let k = ((y + dy).rem_euclid(h) * w + (x + dx).rem_euclid(w)) as usize;
                        neighbors.push(k);
                        reverse[k * nn + p] = i;
                    }
                }
            }
        }
        Ok(Self { height, width, radius, neighbors, reverse })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Patch size `|N| = (2r+1)^2`.
    pub fn patch_len(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    pub fn center(&self) -> usize {
        (self.patch_len() - 1) / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        let nn = self.patch_len();
        &self.neighbors[i * nn..(i + 1) * nn]
    }

    /// For pixel `k`, entry `p` is the pixel whose patch position `p` points at `k`.
    pub fn reverse_neighbors(&self, k: usize) -> &[usize] {
        let nn = self.patch_len();
        &self.reverse[k * nn..(k + 1) * nn]
    }
}

/// Weight patches `Ω_i|_N`, one strictly positive probability vector per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    patch_len: usize,
    data: Vec<f64>,
}

const WEIGHT_TOL: f64 = 1e-9;

impl WeightField {
    pub fn uniform(graph: &GridGraph) -> Self {
        let nn = graph.patch_len();
        Self { patch_len: nn, data: vec![1.0 / nn as f64; graph.n_pixels() * nn] }
    }

    /// Random interior patches `softmax(z)` with `z_p ~ U(-spread, spread)`.
    pub fn random<R: rand::Rng>(graph: &GridGraph, rng: &mut R, spread: f64) -> Self {
        let nn = graph.patch_len();
        let mut data = vec![0.0; graph.n_pixels() * nn];
        let mut z = vec![0.0; nn];
        for patch in data.chunks_mut(nn) {
            for zp in z.iter_mut() {
                *zp = rng.random_range(-spread..=spread);
            }
            crate::manifold::softmax_into(&z, patch);
        }
        Self { patch_len: nn, data }
    }

    /// Builds a field from raw patch data and validates it.
    pub fn from_vec(patch_len: usize, data: Vec<f64>) -> Result<Self> {
        if patch_len == 0 || !data.len().is_multiple_of(patch_len) {
            return Err(Error::Dimension { expected: patch_len, got: data.len() });
        }
        let field = Self { patch_len, data };
        field.validate()?;
        Ok(field)
    }

    #[cfg(test)]
    pub(crate) fn from_raw(patch_len: usize, data: Vec<f64>) -> Self {
        Self { patch_len, data }
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn n_pixels(&self) -> usize {
        self.data.len() / self.patch_len
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        &self.data[i * self.patch_len..(i + 1) * self.patch_len]
    }

    pub fn patches(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.patch_len)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Reports the first patch that is not strictly positive or not normalized.
    pub fn validate(&self) -> Result<()> {
        for (pixel, patch) in self.patches().enumerate() {
            if let Some(v) = patch.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidWeights { pixel, reason: format!("entry {v} is not positive") });
            }
            let s: f64 = patch.iter().sum();
            if (s - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::InvalidWeights { pixel, reason: format!("patch sums to {s}") });
            }
        }
        Ok(())
    }

    pub fn check_graph(&self, graph: &GridGraph) -> Result<()> {
        if self.patch_len != graph.patch_len() || self.n_pixels() != graph.n_pixels() {
            return Err(Error::Dimension {
                expected: graph.n_pixels() * graph.patch_len(),
                got: self.data.len(),
            });
        }
        Ok(())
    }

    /// Dense `|I| x |I|` weight matrix; duplicate neighbors on tiny tori add up.
    pub fn to_dense(&self, graph: &GridGraph) -> Vec<f64> {
        let n = graph.n_pixels();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for (w, &k) in self.patch(i).iter().zip(graph.neighbors(i)) {
                out[i * n + k] += w;
            }
        }
        out
    }

    pub fn write<W: Write>(&self, graph: &GridGraph, mut out: W) -> Result<()> {
        self.check_graph(graph)?;
        let header = OmegaHeader {
            height: graph.height(),
            width: graph.width(),
            radius: graph.radius(),
            dtype: "f64".into(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<(GridGraph, Self)> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: OmegaHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Format(format!("weight header: {e}")))?;
        if header.dtype != "f64" {
            return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
        }
        let graph = GridGraph::new(header.height, header.width, header.radius)?;
        let count = graph.n_pixels() * graph.patch_len();
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        if payload.len() != count * 8 {
            return Err(Error::Format(format!(
                "weight payload has {} bytes, expected {}",
                payload.len(),
                count * 8
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let field = Self::from_vec(graph.patch_len(), data)?;
        Ok((graph, field))
    }

    pub fn save(&self, graph: &GridGraph, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write(graph, std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(GridGraph, Self)> {
        Self::read(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OmegaHeader {
    height: usize,
    width: usize,
    radius: usize,
    dtype: String,
}
