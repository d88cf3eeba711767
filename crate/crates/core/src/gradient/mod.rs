//! Loss, regularizer and the closed-form parameter gradient of the linearized flow.

pub mod adjoint;
pub mod check;
mod lowrank;
pub mod oracle;

pub use lowrank::{
    apply_da_transpose, assemble_b1, assemble_b1_with, benzi_factors, AugmentedOperator, AugmentedTranspose,
    GradientFactors, RankMode,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{solve_linearized, FlowOperator};
use crate::graph::WeightField;
use crate::krylov::{phi_action, DEFAULT_KRYLOV_DIM};
use crate::manifold::{center_in_place, replicator_into, TangentField};
use crate::vecops::{dot, norm};

/// Default regularization strength.
pub const DEFAULT_TAU: f64 = 0.1;

/// Patch-shaped gradient, `|I| x |N|` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradient {
    patch_len: usize,
    data: Vec<f64>,
}

impl ParameterGradient {
    pub fn zeros(n_pixels: usize, patch_len: usize) -> Self {
        Self { patch_len, data: vec![0.0; n_pixels * patch_len] }
    }

    pub fn from_vec(patch_len: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % patch_len, 0);
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.data, other)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParameterGradient) {
        crate::vecops::axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        crate::vecops::scale(alpha, &mut self.data);
    }

    pub fn is_finite(&self) -> bool {
        crate::vecops::all_finite(&self.data)
    }

    /// Patch-wise `Π0`.
    pub fn centered(&self) -> Self {
        let mut data = self.data.clone();
        for patch in data.chunks_mut(self.patch_len) {
            center_in_place(patch);
        }
        Self { patch_len: self.patch_len, data }
    }
}

/// `1 - <V*, V> / (‖V*‖ ‖V‖)`, defined as 1 when either norm vanishes.
pub fn loss_distance(v: &TangentField, vstar: &TangentField) -> f64 {
    loss_distance_slice(v.as_slice(), vstar.as_slice())
}

pub(crate) fn loss_distance_slice(v: &[f64], vstar: &[f64]) -> f64 {
    let nv = norm(v);
    let ns = norm(vstar);
    if nv == 0.0 || ns == 0.0 {
        return 1.0;
    }
    1.0 - dot(vstar, v) / (ns * nv)
}

/// Gradient of [`loss_distance`] in `V`, projected row-wise onto the tangent space.
pub fn loss_distance_grad(v: &TangentField, vstar: &TangentField) -> Result<TangentField> {
    let nv = norm(v.as_slice());
    let ns = norm(vstar.as_slice());
    if nv == 0.0 || ns == 0.0 {
        return Err(Error::Domain("cosine loss gradient is undefined at a zero field".into()));
    }
    let inner = dot(vstar.as_slice(), v.as_slice());
    let a = -1.0 / (ns * nv);
    let b = inner / (ns * nv * nv * nv);
    let data = vstar.as_slice().iter().zip(v.as_slice()).map(|(s, x)| a * s + b * x).collect();
    Ok(TangentField::projected(v.n_labels(), data))
}

/// `(τ/2) Σ_i ‖Π0 log Ω_i‖²`.
pub fn regularizer(omega: &WeightField, tau: f64) -> f64 {
    let mut total = 0.0;
    let mut t = vec![0.0; omega.patch_len()];
    for patch in omega.patches() {
        log_centered(patch, &mut t);
        total += dot(&t, &t);
    }
    0.5 * tau * total
}

fn log_centered(patch: &[f64], out: &mut [f64]) {
    for (o, w) in out.iter_mut().zip(patch) {
        *o = w.ln();
    }
    center_in_place(out);
}

/// Euclidean representer `τ t_i / Ω_i` of the regularizer differential.
pub fn regularizer_grad(omega: &WeightField, tau: f64) -> ParameterGradient {
    let nn = omega.patch_len();
    let mut data = vec![0.0; omega.as_slice().len()];
    for (g, patch) in data.chunks_mut(nn).zip(omega.patches()) {
        log_centered(patch, g);
        for (gv, w) in g.iter_mut().zip(patch) {
            *gv *= tau / w;
        }
    }
    ParameterGradient::from_vec(nn, data)
}

/// Patch-wise `R_{Ω_i}(∂L_i)`.
pub fn riemannian_gradient(euclidean: &ParameterGradient, omega: &WeightField) -> ParameterGradient {
    let nn = omega.patch_len();
    let mut data = vec![0.0; euclidean.data.len()];
    for ((o, g), w) in data.chunks_mut(nn).zip(euclidean.patches()).zip(omega.patches()) {
        replicator_into(w, g, o);
    }
    ParameterGradient::from_vec(nn, data)
}

/// `df2(Ω)^T (T φ(T A^{J T}) g)`: the contribution of the data-dependent affine term.
pub fn second_summand_grad(op: &FlowOperator, g: &[f64], t: f64, m: usize) -> Result<ParameterGradient> {
    if norm(g) == 0.0 {
        return Ok(ParameterGradient::zeros(op.n_pixels(), op.graph().patch_len()));
    }
    let q = phi_action(&op.transposed(), g, t, m)?;
    Ok(adjoint::df2_adjoint(op, &q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    /// Flow integration time.
    pub t: f64,
    /// Krylov dimension.
    pub m: usize,
    /// Regularization strength.
    pub tau: f64,
    pub rank: RankMode,
    /// Adds the exact `b`-column term; when false the low-rank contraction covers
    /// the full differential of the augmented matrix instead.
    pub include_second_summand: bool,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            t: crate::flow::DEFAULT_T,
            m: DEFAULT_KRYLOV_DIM,
            tau: DEFAULT_TAU,
            rank: RankMode::RankOne,
            include_second_summand: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradientOutcome {
    /// `f_L(v_T) + R(Ω)`.
    pub loss: f64,
    pub flow_loss: f64,
    pub reg: f64,
    pub v_t: TangentField,
    pub euclidean: ParameterGradient,
    pub riemannian: ParameterGradient,
    /// Singular values of the reshaped core (empty when the flow term vanishes).
    pub sigmas: Vec<f64>,
    /// Set when `v_T = 0` and only the regularizer contributes.
    pub degenerate: bool,
}

/// Loss value, Euclidean and Riemannian parameter gradient at the operator's `Ω`.
pub fn full_gradient(op: &FlowOperator, vstar: &TangentField, cfg: &GradientConfig) -> Result<GradientOutcome> {
    let (loss, flow_loss, reg, v_t, euclidean, sigmas, degenerate) = euclidean_gradient(op, vstar, cfg)?;
    let riemannian = riemannian_gradient(&euclidean, op.omega());
    Ok(GradientOutcome { loss, flow_loss, reg, v_t, euclidean, riemannian, sigmas, degenerate })
}

type Parts = (f64, f64, f64, TangentField, ParameterGradient, Vec<f64>, bool);

fn euclidean_gradient(op: &FlowOperator, vstar: &TangentField, cfg: &GradientConfig) -> Result<Parts> {
    if !op.is_barycentric() {
        return Err(Error::Config("the parameter gradient needs a flow linearized at the barycenter".into()));
    }
    if !(cfg.t > 0.0) || cfg.m == 0 || !(cfg.tau >= 0.0) {
        return Err(Error::Config(format!("invalid gradient configuration {cfg:?}")));
    }
    if vstar.as_slice().len() != op.dim_n() {
        return Err(Error::Dimension { expected: op.dim_n(), got: vstar.as_slice().len() });
    }
    let v_t = solve_linearized(op, cfg.t, cfg.m)?;
    let flow_loss = loss_distance(&v_t, vstar);
    let reg = regularizer(op.omega(), cfg.tau);
    let mut grad = regularizer_grad(op.omega(), cfg.tau);
    if norm(v_t.as_slice()) == 0.0 {
        log::warn!("flow solution vanishes; using the regularizer gradient only");
        return Ok((flow_loss + reg, flow_loss, reg, v_t, grad, Vec::new(), true));
    }
    let g = loss_distance_grad(&v_t, vstar)?;
    if norm(g.as_slice()) == 0.0 {
        return Ok((flow_loss + reg, flow_loss, reg, v_t, grad, Vec::new(), false));
    }
    let b1 = assemble_b1(op, v_t.as_slice(), g.as_slice(), cfg.t, cfg.m)?;
    let aug = AugmentedOperator::new(op, cfg.t);
    let factors = benzi_factors(&aug, &b1, cfg.m)?;
    let first = apply_da_transpose(op, &factors, cfg.rank, cfg.t, !cfg.include_second_summand);
    grad.axpy(1.0, &first);
    if cfg.include_second_summand {
        let second = second_summand_grad(op, g.as_slice(), cfg.t, cfg.m)?;
        grad.axpy(1.0, &second);
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("parameter gradient"));
    }
    Ok((flow_loss + reg, flow_loss, reg, v_t, grad, factors.sigmas, false))
}

#[cfg(test)]
mod tests;
