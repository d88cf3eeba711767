use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Image, LabelMap};
use crate::error::{Error, Result};
use crate::manifold::{AssignmentState, TangentField};

/// Noise level of the line scenario.
pub const DEFAULT_LINES_NOISE: f64 = 0.5;
/// Noise level at which the pixelwise nearest-color error of the color scenario is about 50%.
pub const DEFAULT_COLORS_NOISE: f64 = 0.61;
/// Smoothing of one-hot ground-truth rows.
pub const DEFAULT_TRUTH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Black Voronoi edges on white.
    Lines,
    /// Voronoi cells filled with palette colors.
    Colors,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(Self::Lines),
            "colors" => Ok(Self::Colors),
            other => Err(Error::Config(format!("unknown scenario kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub height: usize,
    pub width: usize,
    pub cells: usize,
    pub noise: f64,
    pub seed: u64,
    /// Lines only: a pixel is on an edge when the gap between its two nearest seed
    /// distances is below this value.
    #[serde(default = "default_edge_threshold")]
    pub edge_threshold: f64,
}

fn default_edge_threshold() -> f64 {
    1.0
}

impl Scenario {
    pub fn lines(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Lines,
            height: 128,
            width: 128,
            cells: 30,
            noise: DEFAULT_LINES_NOISE,
            seed,
            edge_threshold: default_edge_threshold(),
        }
    }

    pub fn colors(seed: u64) -> Self {
        Self { kind: ScenarioKind::Colors, noise: DEFAULT_COLORS_NOISE, ..Self::lines(seed) }
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn with_cells(mut self, cells: usize) -> Self {
        self.cells = cells;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scenario size must be positive".into()));
        }
        if self.cells < 2 {
            return Err(Error::Config(format!("scenario needs at least 2 cells, got {}", self.cells)));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Config(format!("invalid noise level {}", self.noise)));
        }
        if !(self.edge_threshold > 0.0) {
            return Err(Error::Config(format!("invalid edge threshold {}", self.edge_threshold)));
        }
        Ok(())
    }

    pub fn palette(&self) -> Vec<Vec<f64>> {
        match self.kind {
            ScenarioKind::Lines => lines_palette(),
            ScenarioKind::Colors => colors_palette(),
        }
    }

    pub fn generate(&self) -> Result<LabeledImage> {
        match self.kind {
            ScenarioKind::Lines => gen_voronoi_lines(self),
            ScenarioKind::Colors => gen_voronoi_colors(self),
        }
    }

    /// `count` images with seeds `seed, seed + 1, ...`.
    pub fn generate_set(&self, count: usize) -> Result<Vec<LabeledImage>> {
        (0..count).map(|k| self.with_seed(self.seed.wrapping_add(k as u64)).generate()).collect()
    }
}

/// Label 0 is the white background, label 1 the black line.
pub fn lines_palette() -> Vec<Vec<f64>> {
    vec![vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0]]
}

/// The eight corners of the RGB cube.
pub fn colors_palette() -> Vec<Vec<f64>> {
    (0..8).map(|c| vec![(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64]).collect()
}

/// Clean and noisy image with ground truth.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub clean: Image,
    pub noisy: Image,
    pub truth: LabelMap,
    pub palette: Vec<Vec<f64>>,
}

impl LabeledImage {
    pub fn n_labels(&self) -> usize {
        self.palette.len()
    }

    /// One-hot rows smoothed to `1 - ε(|J|-1)/|J|` on the true label and `ε/|J|` elsewhere.
    pub fn w_star(&self, eps: f64) -> AssignmentState {
        truth_state(&self.truth.labels, self.n_labels(), eps)
    }

    /// `Π0 W*`.
    pub fn v_star(&self) -> TangentField {
        TangentField::projected(self.n_labels(), self.w_star(DEFAULT_TRUTH_EPS).as_slice().to_vec())
    }
}

pub fn truth_state(labels: &[usize], n_labels: usize, eps: f64) -> AssignmentState {
    let c = n_labels as f64;
    let mut data = vec![eps / c; labels.len() * n_labels];
    for (row, &l) in data.chunks_mut(n_labels).zip(labels) {
        row[l] = 1.0 - eps * (c - 1.0) / c;
    }
    AssignmentState::from_raw(n_labels, data)
}

fn sample_sites(s: &Scenario) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    (0..s.cells)
        .map(|_| (rng.random_range(0.0..s.height as f64), rng.random_range(0.0..s.width as f64)))
        .collect()
}

/// Distances to the nearest and second-nearest site, and the index of the nearest.
fn nearest_two(sites: &[(f64, f64)], y: f64, x: f64) -> (f64, f64, usize) {
    let (mut d1, mut d2, mut best) = (f64::INFINITY, f64::INFINITY, 0);
    for (j, &(sy, sx)) in sites.iter().enumerate() {
        let d = ((sy - y).powi(2) + (sx - x).powi(2)).sqrt();
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    (d1, d2, best)
}

fn render(s: &Scenario, labels: Vec<usize>, palette: Vec<Vec<f64>>) -> Result<LabeledImage> {
    let data = labels.iter().flat_map(|&l| palette[l].iter().cloned()).collect();
    let clean = Image::new(s.height, s.width, 3, data)?;
    let noisy = add_noise(&clean, s.noise, s.seed)?;
    let truth = LabelMap::new(s.height, s.width, labels)?;
    Ok(LabeledImage { clean, noisy, truth, palette })
}

fn pixel_centers(s: &Scenario) -> impl IndexedParallelIterator<Item = (f64, f64)> + '_ {
    (0..s.height * s.width)
        .into_par_iter()
        .map(move |i| ((i / s.width) as f64 + 0.5, (i % s.width) as f64 + 0.5))
}

pub fn gen_voronoi_lines(s: &Scenario) -> Result<LabeledImage> {
    if s.kind != ScenarioKind::Lines || s.cells == 0 {
        return Err(Error::Config("line scenario with at least one cell expected".into()));
    }
    let sites = sample_sites(s);
    let labels = pixel_centers(s)
        .map(|(y, x)| {
            let (d1, d2, _) = nearest_two(&sites, y, x);
            usize::from(d2 - d1 < s.edge_threshold)
        })
        .collect();
    render(s, labels, lines_palette())
}

pub fn gen_voronoi_colors(s: &Scenario) -> Result<LabeledImage> {
    if s.kind != ScenarioKind::Colors || s.cells == 0 {
        return Err(Error::Config("color scenario with at least one cell expected".into()));
    }
    let sites = sample_sites(s);
    let palette = colors_palette();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(2);
    let colors: Vec<usize> = (0..s.cells).map(|_| rng.random_range(0..palette.len())).collect();
    let labels = pixel_centers(s).map(|(y, x)| colors[nearest_two(&sites, y, x).2]).collect();
    render(s, labels, palette)
}

/// I.i.d. Gaussian noise per sample, not clipped.
pub fn add_noise(image: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("invalid noise level {sigma}")));
    }
    let mut out = image.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    for v in out.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Index of the closest palette color for every pixel.
pub fn nearest_labels(image: &Image, palette: &[Vec<f64>]) -> Vec<usize> {
    (0..image.n_pixels())
        .into_par_iter()
        .map(|i| {
            let px = image.pixel(i);
            let mut best = (f64::INFINITY, 0);
            for (l, color) in palette.iter().enumerate() {
                let d: f64 = px.iter().zip(color).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, l);
                }
            }
            best.1
        })
        .collect()
}

/// Percentage of labels that differ from the ground truth.
pub fn wrong_percentage(labels: &[usize], truth: &[usize]) -> f64 {
    debug_assert_eq!(labels.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    let wrong = labels.iter().zip(truth).filter(|(a, b)| a != b).count();
    100.0 * wrong as f64 / truth.len() as f64
}

/// Bisection on the noise level so that the mean pixelwise nearest-color error
/// over `count` images of the scenario hits `target` percent.
pub fn calibrate_noise(s: &Scenario, count: usize, target: f64, iters: usize) -> Result<f64> {
    let clean: Vec<LabeledImage> = s.with_noise(0.0).generate_set(count)?;
    let error_at = |sigma: f64| -> Result<f64> {
        let mut total = 0.0;
        for (k, img) in clean.iter().enumerate() {
            let noisy = add_noise(&img.clean, sigma, s.seed.wrapping_add(k as u64))?;
            total += wrong_percentage(&nearest_labels(&noisy, &img.palette), &img.truth.labels);
        }
        Ok(total / count.max(1) as f64)
    };
    let (mut lo, mut hi) = (0.0, 8.0);
    if error_at(hi)? < target {
        return Err(Error::Domain(format!("target error {target}% not reachable")));
    }
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if error_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sites_give_one_straight_band() {
        let s = Scenario::lines(3).with_size(64, 64).with_cells(2).with_noise(0.0);
        let img = s.generate().unwrap();
        let on: usize = img.truth.labels.iter().sum();
        assert!(on > 0 && on < 64 * 64 / 8);
        let sites = sample_sites(&s);
        let (a, b) = (sites[0], sites[1]);
        // line pixels hug the bisector, and pixels on the bisector are line pixels
        let norm = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        for (i, &l) in img.truth.labels.iter().enumerate() {
            let (y, x) = ((i / 64) as f64 + 0.5, (i % 64) as f64 + 0.5);
            let da = ((y - a.0).powi(2) + (x - a.1).powi(2)).sqrt();
            let db = ((y - b.0).powi(2) + (x - b.1).powi(2)).sqrt();
            let signed = ((y - 0.5 * (a.0 + b.0)) * (b.0 - a.0) + (x - 0.5 * (a.1 + b.1)) * (b.1 - a.1)) / norm;
            assert_eq!(l == 1, (da - db).abs() < 1.0);
            if signed.abs() < 0.5 {
                assert_eq!(l, 1);
            }
        }
    }

    #[test]
    fn line_fraction_in_band() {
        let img = Scenario::lines(11).generate().unwrap();
        let frac = img.truth.labels.iter().sum::<usize>() as f64 / img.truth.labels.len() as f64;
        assert!(frac > 0.0 && frac < 0.25, "{frac}");
    }

    #[test]
    fn generators_are_deterministic() {
        for s in [Scenario::lines(5).with_size(40, 30), Scenario::colors(5).with_size(40, 30)] {
            let a = s.generate().unwrap();
            let b = s.generate().unwrap();
            assert_eq!(a.noisy, b.noisy);
            assert_eq!(a.truth, b.truth);
            let c = s.with_seed(6).generate().unwrap();
            assert_ne!(a.noisy, c.noisy);
        }
    }

    #[test]
    fn single_cell_is_constant() {
        let img = Scenario::colors(1).with_size(16, 16).with_cells(1).with_noise(0.0).generate().unwrap();
        assert!(img.truth.labels.iter().all(|&l| l == img.truth.labels[0]));
        assert!(Scenario::colors(1).with_cells(1).validate().is_err());
    }

    #[test]
    fn truth_matches_nearest_palette_of_clean_image() {
        for s in [Scenario::lines(2).with_size(48, 48), Scenario::colors(2).with_size(48, 48)] {
            let img = s.generate().unwrap();
            assert_eq!(nearest_labels(&img.clean, &img.palette), img.truth.labels);
        }
    }

    #[test]
    fn palettes_are_distinct() {
        for p in [lines_palette(), colors_palette()] {
            for i in 0..p.len() {
                for j in 0..i {
                    assert_ne!(p[i], p[j]);
                }
            }
        }
    }

    #[test]
    fn noise_statistics() {
        let clean = Image::filled(128, 128, &[0.2, 0.5, 0.9]);
        assert_eq!(add_noise(&clean, 0.0, 1).unwrap(), clean);
        let sigma = 0.3;
        let noisy = add_noise(&clean, sigma, 1).unwrap();
        for ch in 0..3 {
            let diffs: Vec<f64> =
                (0..clean.n_pixels()).map(|i| noisy.pixel(i)[ch] - clean.pixel(i)[ch]).collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
            assert!((var.sqrt() / sigma - 1.0).abs() < 0.05);
        }
        let wide = add_noise(&clean, 2.0, 1).unwrap();
        let (lo, hi) = wide.range();
        assert!(lo < 0.0 && hi > 1.0);
    }

    #[test]
    fn calibrated_color_noise_gives_half_wrong() {
        let img = Scenario::colors(0).generate().unwrap();
        let err = wrong_percentage(&nearest_labels(&img.noisy, &img.palette), &img.truth.labels);
        assert!((err - 50.0).abs() <= 5.0, "{err}");
    }

    #[test]
    fn w_star_rows() {
        let st = truth_state(&[1, 0], 4, 1e-6);
        let r = st.row(0);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((r[1] - (1.0 - 0.75e-6)).abs() < 1e-15 && (r[0] - 0.25e-6).abs() < 1e-18);
        assert_eq!(wrong_percentage(&[0, 1], &[1, 0]), 100.0);
        assert_eq!(wrong_percentage(&[0, 1], &[0, 1]), 0.0);
    }
}
