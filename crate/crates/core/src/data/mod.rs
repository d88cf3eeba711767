//! Synthetic scenarios, noise, ground-truth encodings and image files.

mod image;
mod manifest;
mod netpbm;
mod scenario;

pub use image::{Image, LabelMap};
pub use manifest::{read_dataset, write_dataset, Manifest, ManifestEntry, MANIFEST_FILE};
pub use netpbm::{dequantize, labels_to_pgm, pgm_to_labels, quantize, Netpbm};
pub use scenario::{
    add_noise, calibrate_noise, colors_palette, gen_voronoi_colors, gen_voronoi_lines, lines_palette, nearest_labels,
    truth_state, wrong_percentage, LabeledImage, Scenario, ScenarioKind, DEFAULT_COLORS_NOISE, DEFAULT_LINES_NOISE,
    DEFAULT_TRUTH_EPS,
};
