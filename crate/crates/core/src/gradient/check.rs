//! Per-pixel comparison of the closed-form parameter gradient with a reference.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::oracle::{fd_gradient_oracle, quadrature_gradient, FdSettings};
use super::{full_gradient, GradientConfig, ParameterGradient};
use crate::data::{truth_state, Scenario, DEFAULT_TRUTH_EPS};
use crate::error::{Error, Result};
use crate::flow::{distance_field, DistanceField, FlowOperator};
use crate::graph::{GridGraph, WeightField};
use crate::manifold::TangentField;
use crate::vecops::cosine;

/// Cosine threshold a pixel has to reach to count as agreeing.
pub const AGREEMENT_COSINE: f64 = 0.9;
/// Gauss-Legendre nodes of the dense reference.
pub const DENSE_NODES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Central differences through an explicit Euler solve.
    #[default]
    Fd,
    /// Quadrature of the exact differential with dense matrix exponentials.
    Dense,
}

impl std::str::FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd" => Ok(Reference::Fd),
            "dense" => Ok(Reference::Dense),
            _ => Err(Error::Config(format!("unknown reference {s:?} (expected fd or dense)"))),
        }
    }
}

/// Small lines-scenario problem with `labels` labels; labels past the first two are gray levels.
#[derive(Debug, Clone)]
pub struct CheckInstance {
    pub graph: GridGraph,
    pub dist: DistanceField,
    pub vstar: TangentField,
    pub omega: WeightField,
}

pub fn check_instance(size: usize, labels: usize, seed: u64, noise: f64, cells: usize) -> Result<CheckInstance> {
    if labels < 2 {
        return Err(Error::Config(format!("need at least two labels, got {labels}")));
    }
    let img = Scenario::lines(seed).with_size(size, size).with_cells(cells).with_noise(noise).generate()?;
    let mut palette = img.palette.clone();
    for j in 2..labels {
        let level = (j - 1) as f64 / (labels - 1) as f64;
        palette.push(vec![level; 3]);
    }
    let graph = GridGraph::new(size, size, 1)?;
    let dist = distance_field(&img.noisy, &palette, crate::flow::DEFAULT_RHO)?;
    let w = truth_state(&img.truth.labels, labels, DEFAULT_TRUTH_EPS);
    let vstar = TangentField::projected(labels, w.as_slice().to_vec());
    let omega = WeightField::uniform(&graph);
    Ok(CheckInstance { graph, dist, vstar, omega })
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Per-pixel cosine; `None` where either patch gradient is exactly zero.
    pub cosines: Vec<Option<f64>>,
    /// Share of pixels whose cosine is at least [`AGREEMENT_COSINE`].
    pub fraction: f64,
    pub seconds: f64,
}

/// Cosine between the tangent parts of two gradients, patch by patch.
pub fn patch_cosines(a: &ParameterGradient, b: &ParameterGradient) -> Result<Vec<Option<f64>>> {
    if a.as_slice().len() != b.as_slice().len() || a.patch_len() != b.patch_len() {
        return Err(Error::Dimension { expected: a.as_slice().len(), got: b.as_slice().len() });
    }
    let (a, b) = (a.centered(), b.centered());
    Ok(a.patches().zip(b.patches()).map(|(x, y)| cosine(x, y)).collect())
}

pub fn agreement(cosines: &[Option<f64>]) -> f64 {
    if cosines.is_empty() {
        return 0.0;
    }
    let good = cosines.iter().filter(|c| c.is_some_and(|c| c >= AGREEMENT_COSINE)).count();
    good as f64 / cosines.len() as f64
}

/// Compares the closed-form gradient with `reference` at the instance's weights.
pub fn run_check(inst: &CheckInstance, cfg: &GradientConfig, reference: Reference) -> Result<CheckReport> {
    let start = Instant::now();
    let op = FlowOperator::new(&inst.graph, &inst.omega, &inst.dist)?;
    let closed = full_gradient(&op, &inst.vstar, cfg)?.euclidean;
    let other = match reference {
        Reference::Fd => {
            let fd = FdSettings { t: cfg.t, tau: cfg.tau, ..Default::default() };
            fd_gradient_oracle(&inst.graph, &inst.omega, &inst.dist, &inst.vstar, &fd)?
        }
        Reference::Dense => quadrature_gradient(&op, &inst.vstar, cfg.t, cfg.tau, DENSE_NODES)?,
    };
    let cosines = patch_cosines(&closed, &other)?;
    Ok(CheckReport { fraction: agreement(&cosines), cosines, seconds: start.elapsed().as_secs_f64() })
}
