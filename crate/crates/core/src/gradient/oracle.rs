//! Reference gradients for verification: central finite differences of the full
//! loss through an explicit Euler solve, and a dense quadrature evaluation of the
//! exact differential.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::adjoint::{da_adjoint_rank1, da_forward_dense};
use super::{loss_distance_slice, loss_distance_grad, regularizer, regularizer_grad, ParameterGradient};
use crate::error::{Error, Result};
use crate::flow::{euler_affine, DistanceField, FlowOperator};
use crate::graph::{GridGraph, WeightField};
use crate::krylov::{dexpm_dense, expm_dense, LinearOperator};
use crate::manifold::TangentField;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Default Euler step of the finite-difference flow solver.
pub const DEFAULT_FD_EULER_STEP: f64 = 1e-3;
/// Default cap on loss evaluations.
pub const DEFAULT_FD_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy)]
pub struct FdSettings {
    pub t: f64,
    pub tau: f64,
    pub h_fd: f64,
    pub euler_h: f64,
    pub budget: usize,
}

impl Default for FdSettings {
    fn default() -> Self {
        Self {
            t: crate::flow::DEFAULT_T,
            tau: super::DEFAULT_TAU,
            h_fd: DEFAULT_FD_STEP,
            euler_h: DEFAULT_FD_EULER_STEP,
            budget: DEFAULT_FD_BUDGET,
        }
    }
}

/// Full loss `f_L(v_T) + R(Ω)` with `v_T` from explicit Euler.
pub fn euler_loss(
    graph: &GridGraph,
    omega: &WeightField,
    dist: &DistanceField,
    vstar: &TangentField,
    t: f64,
    tau: f64,
    euler_h: f64,
) -> Result<f64> {
    let op = FlowOperator::new(graph, omega, dist)?;
    let v = euler_affine(&op, op.b(), t, euler_h)?;
    Ok(loss_distance_slice(&v, vstar.as_slice()) + regularizer(omega, tau))
}

/// Central differences of the loss along `Π0 e_p` inside every patch.
///
/// Entry `(i, p)` approximates `<∂L_i, e_p - 1/|N|>`, the tangent projection of
/// the Euclidean gradient. Refuses when `2 |I| |N|` exceeds the budget.
pub fn fd_gradient_oracle(
    graph: &GridGraph,
    omega: &WeightField,
    dist: &DistanceField,
    vstar: &TangentField,
    s: &FdSettings,
) -> Result<ParameterGradient> {
    let nn = graph.patch_len();
    let count = graph.n_pixels() * nn;
    if 2 * count > s.budget {
        return Err(Error::Budget { needed: 2 * count, budget: s.budget });
    }
    let values: Result<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let (i, p) = (idx / nn, idx % nn);
            let patch = omega.patch(i);
            let floor = patch.iter().cloned().fold(f64::INFINITY, f64::min);
            let h = s.h_fd.min(0.5 * floor);
            let eval = |sign: f64| -> Result<f64> {
                let mut data = omega.as_slice().to_vec();
                for (q, v) in data[i * nn..(i + 1) * nn].iter_mut().enumerate() {
                    let dir = if q == p { 1.0 } else { 0.0 } - 1.0 / nn as f64;
                    *v += sign * h * dir;
                }
                let perturbed = WeightField::from_vec(nn, data)?;
                euler_loss(graph, &perturbed, dist, vstar, s.t, s.tau, s.euler_h)
            };
            Ok((eval(1.0)? - eval(-1.0)?) / (2.0 * h))
        })
        .collect();
    Ok(ParameterGradient::from_vec(nn, values?))
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let nf = count as f64;
    for k in 0..count {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=count {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(0.5 * (1.0 - x));
        weights.push(0.5 * w);
    }
    (nodes, weights)
}

/// Dense augmented matrix `[[T A^J, T b], [0, 0]]`.
pub fn augmented_dense(op: &FlowOperator, t: f64) -> DMatrix<f64> {
    let n = op.dim_n();
    let mut out = DMatrix::<f64>::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(&(op.to_dense() * t));
    for (r, v) in op.b().iter().enumerate() {
        out[(r, n)] = t * v;
    }
    out
}

/// Exact Euclidean gradient by Gauss-Legendre quadrature of
/// `∫_0^1 <d𝒜 ·, e^{-s𝒜^T} b1 (e^{s𝒜} e_{n+1})^T> ds`, dense in the state dimension.
pub fn quadrature_gradient(
    op: &FlowOperator,
    vstar: &TangentField,
    t: f64,
    tau: f64,
    nodes: usize,
) -> Result<ParameterGradient> {
    let n = op.dim_n();
    let aug = augmented_dense(op, t);
    let e = expm_dense(&aug)?;
    let v_t: Vec<f64> = (0..n).map(|r| e[(r, n)]).collect();
    let mut grad = regularizer_grad(op.omega(), tau);
    let v_field = TangentField::from_vec_unchecked(op.n_labels(), v_t);
    if crate::vecops::norm(v_field.as_slice()) == 0.0 {
        return Ok(grad);
    }
    let g = loss_distance_grad(&v_field, vstar)?;
    let mut ghat = DVector::<f64>::zeros(n + 1);
    ghat.rows_mut(0, n).copy_from_slice(g.as_slice());
    let b1 = e.transpose() * ghat;
    let mut e_last = DVector::<f64>::zeros(n + 1);
    e_last[n] = 1.0;
    let (s_nodes, s_weights) = gauss_legendre_unit(nodes);
    let aug_t = aug.transpose();
    for (s, w) in s_nodes.iter().zip(&s_weights) {
        let x = expm_dense(&(&aug_t * -s))? * &b1;
        let y = expm_dense(&(&aug * *s))? * &e_last;
        let term = da_adjoint_rank1(op, x.as_slice(), y.as_slice(), t, true);
        grad.axpy(*w, &term);
    }
    Ok(grad)
}

/// Directional derivative of `v_T(Ω)` along patch direction `y`, from the
/// differential of the matrix exponential of the augmented matrix.
pub fn v_t_directional_dense(op: &FlowOperator, y: &[f64], t: f64) -> Result<Vec<f64>> {
    let n = op.dim_n();
    let aug = augmented_dense(op, t);
    let da = da_forward_dense(op, y, t);
    let d = dexpm_dense(&aug, &da)?;
    Ok((0..n).map(|r| d[(r, n)]).collect())
}
