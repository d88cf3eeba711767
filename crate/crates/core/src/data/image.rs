use crate::error::{Error, Result};

/// Multi-channel image with interleaved row-major samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("image needs at least one channel".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension { expected: height * width * channels, got: data.len() });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, color: &[f64]) -> Self {
        let data = color.iter().cloned().cycle().take(height * width * color.len()).collect();
        Self { height, width, channels: color.len(), data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Smallest and largest sample value.
    pub fn range(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Per-pixel label indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Dimension { expected: height * width, got: labels.len() });
        }
        Ok(Self { height, width, labels })
    }
}
