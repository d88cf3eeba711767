//! Riemannian gradient descent on weight fields.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{wrong_percentage, LabeledImage};
use crate::error::{Error, Result};
use crate::flow::{distance_field, lift_to_labeling, solve_linearized, DistanceField, FlowOperator};
use crate::gradient::oracle::{fd_gradient_oracle, FdSettings};
use crate::gradient::{
    full_gradient, loss_distance, regularizer, riemannian_gradient, GradientConfig, ParameterGradient, RankMode,
};
use crate::graph::{GridGraph, WeightField};
use crate::manifold::{lift_into, TangentField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    ClosedForm,
    FdOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub t: f64,
    pub m: usize,
    pub tau: f64,
    pub rho: f64,
    pub step_size: f64,
    pub max_iters: usize,
    /// Stops when the Riemannian gradient norm drops below this value.
    pub grad_tol: f64,
    pub seed: u64,
    pub rank: RankMode,
    pub gradient: GradientMode,
    pub include_second_summand: bool,
    /// Halve the step and retry whenever the loss would increase.
    pub backoff: bool,
    /// Scales the step by `|I|` and the regularizer strength by `1/|I|`, so that
    /// `step_size` and `tau` mean the same on every image size.
    pub pixel_normalized: bool,
    pub max_halvings: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t: crate::flow::DEFAULT_T,
            m: crate::krylov::DEFAULT_KRYLOV_DIM,
            tau: crate::gradient::DEFAULT_TAU,
            rho: crate::flow::DEFAULT_RHO,
            step_size: DEFAULT_STEP_SIZE,
            max_iters: 100,
            grad_tol: 1e-6,
            seed: 0,
            rank: RankMode::RankOne,
            gradient: GradientMode::ClosedForm,
            include_second_summand: true,
            backoff: true,
            pixel_normalized: true,
            max_halvings: 30,
            checkpoint_every: 10,
        }
    }
}

/// Default descent step.
pub const DEFAULT_STEP_SIZE: f64 = 0.5;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.t, self.rho, self.step_size];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.m == 0 || self.max_iters == 0 {
            return Err(Error::Config(format!("invalid training configuration {self:?}")));
        }
        if !(self.tau >= 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::Config(format!("invalid training configuration {self:?}")));
        }
        if let RankMode::Rank(0) = self.rank {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        Ok(())
    }

    /// Regularizer strength and descent step actually used on `n_pixels` pixels.
    pub fn effective(&self, n_pixels: usize) -> (f64, f64) {
        if self.pixel_normalized {
            (self.tau / n_pixels as f64, self.step_size * n_pixels as f64)
        } else {
            (self.tau, self.step_size)
        }
    }

    pub fn gradient_config(&self, n_pixels: usize) -> GradientConfig {
        GradientConfig {
            t: self.t,
            m: self.m,
            tau: self.effective(n_pixels).0,
            rank: self.rank,
            include_second_summand: self.include_second_summand,
        }
    }
}

/// Distances, target tangent field and ground-truth labels of one training image.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub dist: DistanceField,
    pub vstar: TangentField,
    pub truth: Vec<usize>,
}

impl TrainSample {
    /// Uses the noisy image of `img`.
    pub fn from_labeled(img: &LabeledImage, rho: f64) -> Result<Self> {
        Ok(Self {
            dist: distance_field(&img.noisy, &img.palette, rho)?,
            vstar: img.v_star(),
            truth: img.truth.labels.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub wrong_pct: f64,
    pub grad_norm: f64,
    pub sigma1: f64,
    pub sigma_ratio: f64,
    pub step_size: f64,
    pub seconds: f64,
}

/// Row `k` holds the metrics of the `k`-th iterate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Equality of everything except wall-clock time.
    pub fn same_numbers(&self, other: &TrainTrace) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.wrong_pct.to_bits() == b.wrong_pct.to_bits()
                    && a.grad_norm.to_bits() == b.grad_norm.to_bits()
                    && a.sigma1.to_bits() == b.sigma1.to_bits()
                    && a.sigma_ratio.to_bits() == b.sigma_ratio.to_bits()
                    && a.step_size.to_bits() == b.step_size.to_bits()
            })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    GradTol,
    /// No step size within the halving budget decreased the loss.
    Stalled,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub omega: WeightField,
    pub trace: TrainTrace,
    pub stop: StopReason,
}

/// Wrong-pixel percentage and cosine loss of a tangent field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub wrong_pct: f64,
    pub loss: f64,
}

pub fn evaluate(v: &TangentField, vstar: &TangentField, truth: &[usize]) -> Evaluation {
    Evaluation { wrong_pct: wrong_percentage(&lift_to_labeling(v), truth), loss: loss_distance(v, vstar) }
}

/// Labels of the linearized flow for the given weights.
pub fn label_with(graph: &GridGraph, omega: &WeightField, dist: &DistanceField, t: f64, m: usize) -> Result<Vec<usize>> {
    let op = FlowOperator::new(graph, omega, dist)?;
    Ok(lift_to_labeling(&solve_linearized(&op, t, m)?))
}

/// `Ω_i ← exp_{Ω_i}(-h ∇_i)` patch by patch.
pub fn descend_step(omega: &WeightField, grad: &ParameterGradient, h: f64) -> Result<WeightField> {
    let nn = omega.patch_len();
    if grad.as_slice().len() != omega.as_slice().len() {
        return Err(Error::Dimension { expected: omega.as_slice().len(), got: grad.as_slice().len() });
    }
    let mut data = vec![0.0; omega.as_slice().len()];
    let mut z = vec![0.0; nn];
    for ((o, w), g) in data.chunks_mut(nn).zip(omega.patches()).zip(grad.patches()) {
        for (zv, gv) in z.iter_mut().zip(g) {
            *zv = -h * gv;
        }
        lift_into(w, &z, o);
    }
    WeightField::from_vec(nn, data)
}

/// Averaged loss, gradients and metrics over all samples at one weight field.
#[derive(Debug, Clone)]
pub struct BatchState {
    pub loss: f64,
    pub wrong_pct: f64,
    pub euclidean: ParameterGradient,
    pub riemannian: ParameterGradient,
    pub sigma1: f64,
    pub sigma_ratio: f64,
}

impl BatchState {
    fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.riemannian.is_finite()
    }
}

struct SampleResult {
    loss: f64,
    wrong_pct: f64,
    euclidean: ParameterGradient,
    sigmas: Vec<f64>,
}

fn sample_gradient(graph: &GridGraph, omega: &WeightField, s: &TrainSample, cfg: &TrainConfig) -> Result<SampleResult> {
    let op = FlowOperator::new(graph, omega, &s.dist)?;
    match cfg.gradient {
        GradientMode::ClosedForm => {
            let out = full_gradient(&op, &s.vstar, &cfg.gradient_config(graph.n_pixels()))?;
            let wrong_pct = wrong_percentage(&lift_to_labeling(&out.v_t), &s.truth);
            Ok(SampleResult { loss: out.loss, wrong_pct, euclidean: out.euclidean, sigmas: out.sigmas })
        }
        GradientMode::FdOracle => {
            let v = solve_linearized(&op, cfg.t, cfg.m)?;
            let tau = cfg.effective(graph.n_pixels()).0;
            let settings = FdSettings { t: cfg.t, tau, ..FdSettings::default() };
            let euclidean = fd_gradient_oracle(graph, omega, &s.dist, &s.vstar, &settings)?;
            let loss = loss_distance(&v, &s.vstar) + regularizer(omega, tau);
            let wrong_pct = wrong_percentage(&lift_to_labeling(&v), &s.truth);
            Ok(SampleResult { loss, wrong_pct, euclidean, sigmas: Vec::new() })
        }
    }
}

/// Mean loss and mean Euclidean gradient over the samples, lifted once.
pub fn batch_state(graph: &GridGraph, omega: &WeightField, samples: &[TrainSample], cfg: &TrainConfig) -> Result<BatchState> {
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let results: Vec<SampleResult> =
        samples.par_iter().map(|s| sample_gradient(graph, omega, s, cfg)).collect::<Result<_>>()?;
    let count = results.len() as f64;
    let mut euclidean = ParameterGradient::zeros(omega.n_pixels(), omega.patch_len());
    let (mut loss, mut wrong, mut s1, mut ratio) = (0.0, 0.0, 0.0, 0.0);
    for r in &results {
        euclidean.axpy(1.0 / count, &r.euclidean);
        loss += r.loss / count;
        wrong += r.wrong_pct / count;
        s1 += r.sigmas.first().copied().unwrap_or(0.0) / count;
        ratio += match r.sigmas.as_slice() {
            [a, b, ..] if *a > 0.0 => b / a / count,
            _ => 0.0,
        };
    }
    let riemannian = riemannian_gradient(&euclidean, omega);
    Ok(BatchState { loss, wrong_pct: wrong, euclidean, riemannian, sigma1: s1, sigma_ratio: ratio })
}

pub fn train(graph: &GridGraph, samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(graph, samples, cfg, WeightField::uniform(graph), |_, _| Ok(()))
}

/// Descent from `init`; `checkpoint(k, Ω_k)` runs every `checkpoint_every` accepted steps.
pub fn train_from<F>(
    graph: &GridGraph,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    init: WeightField,
    mut checkpoint: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &WeightField) -> Result<()>,
{
    cfg.validate()?;
    init.check_graph(graph)?;
    let start = Instant::now();
    let mut omega = init;
    let mut h = cfg.step_size;
    let mut trace = TrainTrace::default();
    let mut state = batch_state(graph, &omega, samples, cfg)?;
    let record = |trace: &mut TrainTrace, k: usize, st: &BatchState, h: f64| {
        trace.rows.push(TraceRow {
            iteration: k,
            loss: st.loss,
            wrong_pct: st.wrong_pct,
            grad_norm: st.riemannian.norm(),
            sigma1: st.sigma1,
            sigma_ratio: st.sigma_ratio,
            step_size: h,
            seconds: start.elapsed().as_secs_f64(),
        });
    };
    record(&mut trace, 0, &state, h);
    if !state.is_finite() {
        return Ok(TrainOutcome { omega, trace, stop: StopReason::NonFinite });
    }
    let mut stop = StopReason::MaxIters;
    for k in 1..=cfg.max_iters {
        if state.riemannian.norm() < cfg.grad_tol {
            stop = StopReason::GradTol;
            break;
        }
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let scale = cfg.effective(graph.n_pixels()).1 / cfg.step_size;
            let candidate = descend_step(&omega, &state.riemannian, h * scale)?;
            let next = batch_state(graph, &candidate, samples, cfg)?;
            if !next.is_finite() {
                record(&mut trace, k, &next, h);
                log::error!("non-finite loss or gradient at iteration {k}");
                return Ok(TrainOutcome { omega, trace, stop: StopReason::NonFinite });
            }
            if !cfg.backoff || next.loss <= state.loss {
                accepted = Some((candidate, next));
                break;
            }
            h *= 0.5;
        }
        let Some((candidate, next)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        omega = candidate;
        state = next;
        record(&mut trace, k, &state, h);
        log::info!("iteration {k}: loss {:.6} wrong {:.2}% step {h:.3e}", state.loss, state.wrong_pct);
        if cfg.checkpoint_every > 0 && k % cfg.checkpoint_every == 0 {
            checkpoint(k, &omega)?;
        }
    }
    Ok(TrainOutcome { omega, trace, stop })
}
