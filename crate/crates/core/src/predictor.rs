//! Prototype-based prediction of weight patches from local image features.
//!
//! A pixel with feature `f` gets the patch `softmax(Σ_j α_j ν_j)` where
//! `α = softmax_j(-σ ‖f - p_j‖)`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{wrong_percentage, Image};
use crate::error::{Error, Result};
use crate::flow::FlowOperator;
use crate::gradient::{full_gradient, ParameterGradient};
use crate::graph::{GridGraph, WeightField};
use crate::manifold::{center_in_place, replicator_into, softmax_into};
use crate::training::{label_with, TrainConfig, TrainSample};
use crate::vecops::{axpy, dot};

/// Default prototype count.
pub const DEFAULT_PROTOTYPES: usize = 50;
pub const KMEANS_ITERS: usize = 20;
pub const KMEANS_RESTARTS: usize = 3;

/// Raw samples of the window around every pixel, in neighbor order.
pub fn patch_features(image: &Image, graph: &GridGraph) -> Result<Vec<f64>> {
    if image.height() != graph.height() || image.width() != graph.width() {
        return Err(Error::Dimension { expected: graph.n_pixels(), got: image.n_pixels() });
    }
    let c = image.channels();
    let dim = c * graph.patch_len();
    let mut out = vec![0.0; graph.n_pixels() * dim];
    out.par_chunks_mut(dim).enumerate().for_each(|(i, f)| {
        for (slot, &k) in f.chunks_mut(c).zip(graph.neighbors(i)) {
            slot.copy_from_slice(image.pixel(k));
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    feat_dim: usize,
    patch_len: usize,
    /// `N x feat_dim`.
    protos: Vec<f64>,
    /// `N x patch_len`, rows in `T0`.
    nu: Vec<f64>,
    sigma: f64,
}

impl PredictorParams {
    pub fn new(feat_dim: usize, patch_len: usize, protos: Vec<f64>, nu: Vec<f64>, sigma: f64) -> Result<Self> {
        if feat_dim == 0 || patch_len == 0 || protos.is_empty() || !protos.len().is_multiple_of(feat_dim) {
            return Err(Error::Config("prototype array does not match the feature dimension".into()));
        }
        let n = protos.len() / feat_dim;
        if nu.len() != n * patch_len {
            return Err(Error::Dimension { expected: n * patch_len, got: nu.len() });
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("scale must be positive, got {sigma}")));
        }
        if !crate::vecops::all_finite(&protos) || !crate::vecops::all_finite(&nu) {
            return Err(Error::NonFinite("predictor parameters"));
        }
        for row in nu.chunks(patch_len) {
            if row.iter().sum::<f64>().abs() > 1e-9 * (1.0 + row.iter().map(|v| v.abs()).sum::<f64>()) {
                return Err(Error::Config("tangent vectors must sum to zero".into()));
            }
        }
        Ok(Self { feat_dim, patch_len, protos, nu, sigma })
    }

    pub fn n_protos(&self) -> usize {
        self.protos.len() / self.feat_dim
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn proto(&self, j: usize) -> &[f64] {
        &self.protos[j * self.feat_dim..(j + 1) * self.feat_dim]
    }

    pub fn nu(&self, j: usize) -> &[f64] {
        &self.nu[j * self.patch_len..(j + 1) * self.patch_len]
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Header line `{"protos","feat_dim","patch_len","sigma","dtype"}` followed by
    /// little-endian prototypes and tangent vectors.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = PredHeader {
            protos: self.n_protos(),
            feat_dim: self.feat_dim,
            patch_len: self.patch_len,
            sigma: self.sigma,
            dtype: "f64".into(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for v in self.protos.iter().chain(&self.nu) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let h: PredHeader = serde_json::from_str(line.trim_end())?;
        if h.dtype != "f64" {
            return Err(Error::Format(format!("unsupported dtype {}", h.dtype)));
        }
        let count = h.protos * (h.feat_dim + h.patch_len);
        let mut buf = vec![0u8; 8 * count];
        r.read_exact(&mut buf)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format("trailing bytes after predictor payload".into()));
        }
        let vals: Vec<f64> = buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let split = h.protos * h.feat_dim;
        Self::new(h.feat_dim, h.patch_len, vals[..split].to_vec(), vals[split..].to_vec(), h.sigma)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct PredHeader {
    protos: usize,
    feat_dim: usize,
    patch_len: usize,
    sigma: f64,
    dtype: String,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from k-means++ seeds; returns centers and inertia.
fn kmeans_once(points: &[f64], dim: usize, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let n = points.len() / dim;
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(pt(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(pt(i), &centers[..dim])).collect();
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(pt(next));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(pt(i), &centers[start..start + dim]));
        }
    }
    for _ in 0..iters {
        let assign: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest_center(pt(i), &centers, dim).0)
            .collect();
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            axpy(1.0, pt(i), &mut sums[a * dim..(a + 1) * dim]);
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centers[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
    }
    let inertia = (0..n).map(|i| nearest_center(pt(i), &centers, dim).1).sum();
    (centers, inertia)
}

fn nearest_center(p: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks(dim).enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Best of `restarts` seeded k-means runs.
pub fn kmeans(points: &[f64], dim: usize, k: usize, iters: usize, restarts: usize, seed: u64) -> Result<Vec<f64>> {
    if dim == 0 || points.is_empty() {
        return Err(Error::Config("empty feature corpus".into()));
    }
    let mut rows: Vec<&[f64]> = points.chunks(dim).collect();
    rows.sort_by(|a, b| a.iter().zip(*b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    rows.dedup();
    if k == 0 || k > rows.len() {
        return Err(Error::Config(format!("{k} prototypes requested but the corpus has {} distinct patches", rows.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, dim, k, iters, &mut rng);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    Ok(best.unwrap().0)
}

/// `ν_j = Π0(exp(-‖p_{j,k} - p_{j,center}‖))` over window positions `k`.
pub fn initial_tangent(proto: &[f64], channels: usize, center: usize) -> Vec<f64> {
    let mid = &proto[center * channels..(center + 1) * channels];
    let mut nu: Vec<f64> = proto.chunks(channels).map(|px| (-sq_dist(px, mid).sqrt()).exp()).collect();
    center_in_place(&mut nu);
    nu
}

/// Prototypes by k-means on clean window features, tangent vectors pointing at
/// neighbors that share the center color, and unit scale.
pub fn init_predictor(clean: &[Image], graph: &GridGraph, n_protos: usize, seed: u64) -> Result<PredictorParams> {
    if clean.is_empty() {
        return Err(Error::Config("empty training corpus".into()));
    }
    let channels = clean[0].channels();
    let dim = channels * graph.patch_len();
    let mut feats = Vec::new();
    for img in clean {
        if img.channels() != channels {
            return Err(Error::Config("images with different channel counts".into()));
        }
        feats.extend(patch_features(img, graph)?);
    }
    let protos = kmeans(&feats, dim, n_protos, KMEANS_ITERS, KMEANS_RESTARTS, seed)?;
    let nu = protos.chunks(dim).flat_map(|p| initial_tangent(p, channels, graph.center())).collect();
    PredictorParams::new(dim, graph.patch_len(), protos, nu, 1.0)
}

/// `α_ij` and `‖f_i - p_j‖` for one pixel.
fn soft_assign(f: &[f64], params: &PredictorParams, alpha: &mut [f64], dist: &mut [f64]) {
    for (j, d) in dist.iter_mut().enumerate() {
        *d = sq_dist(f, params.proto(j)).sqrt();
    }
    let z: Vec<f64> = dist.iter().map(|d| -params.sigma * d).collect();
    softmax_into(&z, alpha);
}

/// Soft assignments `α_ij`, `|I| x N`.
pub fn similarity_weights(features: &[f64], params: &PredictorParams) -> Result<Vec<f64>> {
    let n = params.n_protos();
    check_features(features, params)?;
    let mut out = vec![0.0; features.len() / params.feat_dim * n];
    out.par_chunks_mut(n).zip(features.par_chunks(params.feat_dim)).for_each(|(a, f)| {
        let mut d = vec![0.0; n];
        soft_assign(f, params, a, &mut d);
    });
    Ok(out)
}

fn check_features(features: &[f64], params: &PredictorParams) -> Result<()> {
    if !features.len().is_multiple_of(params.feat_dim) {
        return Err(Error::Dimension { expected: params.feat_dim, got: features.len() % params.feat_dim });
    }
    Ok(())
}

/// `Ω̂_i = exp_{uniform}(Σ_j α_ij ν_j)`.
pub fn predict_weights(features: &[f64], params: &PredictorParams) -> Result<WeightField> {
    let nn = params.patch_len;
    let alpha = similarity_weights(features, params)?;
    let mut data = vec![0.0; alpha.len() / params.n_protos() * nn];
    data.par_chunks_mut(nn).zip(alpha.par_chunks(params.n_protos())).for_each(|(o, a)| {
        let mut v = vec![0.0; nn];
        for (j, &aj) in a.iter().enumerate() {
            axpy(aj, params.nu(j), &mut v);
        }
        softmax_into(&v, o);
    });
    WeightField::from_vec(nn, data)
}

/// Gradient with respect to prototypes, tangent vectors and `log σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGradient {
    pub protos: Vec<f64>,
    pub nu: Vec<f64>,
    pub log_sigma: f64,
}

impl PredictorGradient {
    pub fn zeros(params: &PredictorParams) -> Self {
        Self { protos: vec![0.0; params.protos.len()], nu: vec![0.0; params.nu.len()], log_sigma: 0.0 }
    }

    pub fn axpy(&mut self, alpha: f64, other: &PredictorGradient) {
        axpy(alpha, &other.protos, &mut self.protos);
        axpy(alpha, &other.nu, &mut self.nu);
        self.log_sigma += alpha * other.log_sigma;
    }

    pub fn norm(&self) -> f64 {
        (dot(&self.protos, &self.protos) + dot(&self.nu, &self.nu) + self.log_sigma * self.log_sigma).sqrt()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.protos.iter().chain(&self.nu).cloned().chain(std::iter::once(self.log_sigma)).collect()
    }

    fn is_finite(&self) -> bool {
        self.log_sigma.is_finite() && crate::vecops::all_finite(&self.protos) && crate::vecops::all_finite(&self.nu)
    }
}

/// Pulls a Euclidean gradient `∂L/∂Ω̂` back to the predictor parameters.
pub fn predictor_chain_rule(
    features: &[f64],
    params: &PredictorParams,
    d_omega: &ParameterGradient,
) -> Result<PredictorGradient> {
    check_features(features, params)?;
    let (n, nn, dim) = (params.n_protos(), params.patch_len, params.feat_dim);
    let n_pix = features.len() / dim;
    if d_omega.as_slice().len() != n_pix * nn {
        return Err(Error::Dimension { expected: n_pix * nn, got: d_omega.as_slice().len() });
    }
    let omega = predict_weights(features, params)?;
    let sigma = params.sigma;
    // per-pixel contributions, reduced sequentially for reproducibility
    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = (0..n_pix)
        .into_par_iter()
        .map(|i| {
            let f = &features[i * dim..(i + 1) * dim];
            let mut alpha = vec![0.0; n];
            let mut dist = vec![0.0; n];
            soft_assign(f, params, &mut alpha, &mut dist);
            let mut g = vec![0.0; nn];
            replicator_into(omega.patch(i), d_omega.patch(i), &mut g);
            let c: Vec<f64> = (0..n).map(|j| dot(&g, params.nu(j))).collect();
            let mean_c = dot(&alpha, &c);
            let e: Vec<f64> = (0..n).map(|j| alpha[j] * (c[j] - mean_c)).collect();
            let ls = -sigma * dot(&e, &dist);
            (alpha, g, e, ls)
        })
        .collect();
    let mut out = PredictorGradient::zeros(params);
    for (i, (alpha, g, e, ls)) in parts.iter().enumerate() {
        let f = &features[i * dim..(i + 1) * dim];
        for j in 0..n {
            axpy(alpha[j], g, &mut out.nu[j * nn..(j + 1) * nn]);
            let p = params.proto(j);
            let d = sq_dist(f, p).sqrt();
            if d > 0.0 && e[j] != 0.0 {
                let coef = -sigma * e[j] / d;
                for ((o, pv), fv) in out.protos[j * dim..(j + 1) * dim].iter_mut().zip(p).zip(f) {
                    *o += coef * (pv - fv);
                }
            }
        }
        out.log_sigma += ls;
    }
    for row in out.nu.chunks_mut(nn) {
        center_in_place(row);
    }
    Ok(out)
}

/// Predictor parameters moved by `-h` times the gradient: Euclidean in `p` and `log σ`,
/// inside `T0` for `ν`.
pub fn predictor_step(params: &PredictorParams, grad: &PredictorGradient, h: f64) -> Result<PredictorParams> {
    let mut protos = params.protos.clone();
    axpy(-h, &grad.protos, &mut protos);
    let mut step = grad.nu.clone();
    for row in step.chunks_mut(params.patch_len) {
        center_in_place(row);
    }
    let mut nu = params.nu.clone();
    axpy(-h, &step, &mut nu);
    let sigma = (params.sigma.ln() - h * grad.log_sigma).exp();
    PredictorParams::new(params.feat_dim, params.patch_len, protos, nu, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub n_protos: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    pub backoff: bool,
    pub max_halvings: usize,
}

/// Default predictor descent step.
pub const DEFAULT_PREDICTOR_STEP: f64 = 0.05;

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            n_protos: DEFAULT_PROTOTYPES,
            steps: 100,
            step_size: DEFAULT_PREDICTOR_STEP,
            seed: 0,
            backoff: true,
            max_halvings: 30,
        }
    }
}

/// One image for predictor training or validation.
#[derive(Debug, Clone)]
pub struct PredictorSample {
    pub features: Vec<f64>,
    pub sample: TrainSample,
}

impl PredictorSample {
    pub fn new(noisy: &Image, graph: &GridGraph, sample: TrainSample) -> Result<Self> {
        Ok(Self { features: patch_features(noisy, graph)?, sample })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorTraceRow {
    pub step: usize,
    pub train_loss: f64,
    pub train_wrong_pct: f64,
    pub val_wrong_pct: f64,
    pub grad_norm: f64,
    pub sigma: f64,
    pub step_size: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PredictorTrace {
    pub rows: Vec<PredictorTraceRow>,
}

impl PredictorTrace {
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

    /// Equality of everything except wall-clock time.
    pub fn same_numbers(&self, other: &PredictorTrace) -> bool {
        let key = |r: &PredictorTraceRow| {
            [r.train_loss, r.train_wrong_pct, r.val_wrong_pct, r.grad_norm, r.sigma, r.step_size].map(f64::to_bits)
        };
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.step == b.step && key(a) == key(b))
    }
}

#[derive(Debug, Clone)]
pub struct PredictorOutcome {
    pub params: PredictorParams,
    pub trace: PredictorTrace,
    /// Set when training stopped on a non-finite loss or gradient.
    pub non_finite: bool,
}

struct PredictorState {
    loss: f64,
    wrong_pct: f64,
    grad: PredictorGradient,
}

/// Mean loss over the samples and its gradient in the predictor parameters.
fn predictor_state(
    graph: &GridGraph,
    params: &PredictorParams,
    samples: &[PredictorSample],
    flow: &TrainConfig,
) -> Result<PredictorState> {
    let gcfg = flow.gradient_config(graph.n_pixels());
    let results: Vec<(f64, f64, PredictorGradient)> = samples
        .par_iter()
        .map(|s| {
            let omega = predict_weights(&s.features, params)?;
            let op = FlowOperator::new(graph, &omega, &s.sample.dist)?;
            let out = full_gradient(&op, &s.sample.vstar, &gcfg)?;
            let wrong = wrong_percentage(&crate::flow::lift_to_labeling(&out.v_t), &s.sample.truth);
            let grad = predictor_chain_rule(&s.features, params, &out.euclidean)?;
            Ok((out.loss, wrong, grad))
        })
        .collect::<Result<_>>()?;
    let count = results.len() as f64;
    let mut grad = PredictorGradient::zeros(params);
    let (mut loss, mut wrong) = (0.0, 0.0);
    for (l, w, g) in &results {
        loss += l / count;
        wrong += w / count;
        grad.axpy(1.0 / count, g);
    }
    Ok(PredictorState { loss, wrong_pct: wrong, grad })
}

/// Mean wrong-pixel percentage of the linearized flow with predicted weights.
pub fn predicted_error(
    graph: &GridGraph,
    params: &PredictorParams,
    samples: &[PredictorSample],
    flow: &TrainConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let errs: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let omega = predict_weights(&s.features, params)?;
            let labels = label_with(graph, &omega, &s.sample.dist, flow.t, flow.m)?;
            Ok(wrong_percentage(&labels, &s.sample.truth))
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Gradient descent on the predictor parameters through the linearized flow.
pub fn train_predictor(
    graph: &GridGraph,
    init: PredictorParams,
    train: &[PredictorSample],
    validation: &[PredictorSample],
    flow: &TrainConfig,
    cfg: &PredictorConfig,
) -> Result<PredictorOutcome> {
    if train.is_empty() {
        return Err(Error::Config("no predictor training samples".into()));
    }
    if !(cfg.step_size > 0.0) {
        return Err(Error::Config(format!("invalid predictor step {}", cfg.step_size)));
    }
    flow.validate()?;
    let start = Instant::now();
    let mut params = init;
    let mut h = cfg.step_size;
    // same normalization as weight training: the loss gradient shrinks like 1/|I|
    let scale = if flow.pixel_normalized { graph.n_pixels() as f64 } else { 1.0 };
    let mut trace = PredictorTrace::default();
    let mut state = predictor_state(graph, &params, train, flow)?;
    let push = |trace: &mut PredictorTrace, k: usize, st: &PredictorState, p: &PredictorParams, h: f64| -> Result<()> {
        trace.rows.push(PredictorTraceRow {
            step: k,
            train_loss: st.loss,
            train_wrong_pct: st.wrong_pct,
            val_wrong_pct: predicted_error(graph, p, validation, flow)?,
            grad_norm: st.grad.norm(),
            sigma: p.sigma,
            step_size: h,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    };
    push(&mut trace, 0, &state, &params, h)?;
    for k in 1..=cfg.steps {
        if !state.loss.is_finite() || !state.grad.is_finite() {
            return Ok(PredictorOutcome { params, trace, non_finite: true });
        }
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let candidate = match predictor_step(&params, &state.grad, h * scale) {
                Ok(c) => c,
                Err(Error::NonFinite(_)) | Err(Error::Config(_)) => {
                    h *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let next = predictor_state(graph, &candidate, train, flow)?;
            if !cfg.backoff || next.loss <= state.loss {
                accepted = Some((candidate, next));
                break;
            }
            h *= 0.5;
        }
        let Some((candidate, next)) = accepted else {
            log::info!("predictor training stalled at step {k}");
            break;
        };
        params = candidate;
        state = next;
        push(&mut trace, k, &state, &params, h)?;
        log::info!("predictor step {k}: loss {:.6} wrong {:.2}%", state.loss, state.wrong_pct);
    }
    let non_finite = !state.loss.is_finite();
    Ok(PredictorOutcome { params, trace, non_finite })
}
