//! The augmented matrix `𝒜 = [[T A^J, T b], [0, 0]]` and the two-sided Krylov
//! approximation of `φ(-𝒜^T ⊕ 𝒜)(b1 ⊗ e_{n+1})` compressed by an SVD.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::adjoint::da_adjoint_rank1;
use super::ParameterGradient;
use crate::error::{Error, Result};
use crate::flow::FlowOperator;
use crate::krylov::{arnoldi, expm_action, kron_sum, phi_apply_dense, LinearOperator, DEFAULT_BREAKDOWN_TOL};
use crate::vecops::{dot, norm};

/// Matrix-free `𝒜(Ω)` of dimension `n + 1`.
pub struct AugmentedOperator<'a> {
    op: &'a FlowOperator,
    t: f64,
}

impl<'a> AugmentedOperator<'a> {
    pub fn new(op: &'a FlowOperator, t: f64) -> Self {
        Self { op, t }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn flow(&self) -> &FlowOperator {
        self.op
    }

    pub fn transposed(&self) -> AugmentedTranspose<'_> {
        AugmentedTranspose { aug: self, sign: 1.0 }
    }

    /// `M1 = -𝒜^T`.
    pub fn neg_transposed(&self) -> AugmentedTranspose<'_> {
        AugmentedTranspose { aug: self, sign: -1.0 }
    }
}

impl LinearOperator for AugmentedOperator<'_> {
    fn dim(&self) -> usize {
        self.op.dim_n() + 1
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.op.dim_n();
        self.op.apply(&x[..n], &mut y[..n]);
        let xl = x[n];
        for (yi, bi) in y[..n].iter_mut().zip(self.op.b()) {
            *yi = self.t * (*yi + bi * xl);
        }
        y[n] = 0.0;
    }
}

/// `sign · 𝒜^T = sign · [[T A^{J T}, 0], [T b^T, 0]]`.
pub struct AugmentedTranspose<'a> {
    aug: &'a AugmentedOperator<'a>,
    sign: f64,
}

impl LinearOperator for AugmentedTranspose<'_> {
    fn dim(&self) -> usize {
        self.aug.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let op = self.aug.op;
        let n = op.dim_n();
        let f = self.sign * self.aug.t;
        op.transposed().apply(&x[..n], &mut y[..n]);
        for yi in y[..n].iter_mut() {
            *yi *= f;
        }
        y[n] = f * dot(op.b(), &x[..n]);
    }
}

/// `b1 = (expm(T A^J)^T g ; <v_T, g>)`.
pub fn assemble_b1(op: &FlowOperator, v_t: &[f64], g: &[f64], t: f64, m: usize) -> Result<Vec<f64>> {
    assemble_b1_with(&op.transposed(), v_t, g, t, m)
}

/// [`assemble_b1`] for an arbitrary operator given through its transpose.
pub fn assemble_b1_with<A: LinearOperator + ?Sized>(
    a_transposed: &A,
    v_t: &[f64],
    g: &[f64],
    t: f64,
    m: usize,
) -> Result<Vec<f64>> {
    if norm(g) == 0.0 {
        return Err(Error::Domain("loss gradient is zero; the flow term of the gradient vanishes".into()));
    }
    let mut top = expm_action(a_transposed, g, t, m)?;
    top.push(dot(v_t, g));
    Ok(top)
}

/// How many singular triplets of the reshaped core enter the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    #[default]
    RankOne,
    Rank(usize),
    Full,
}

impl RankMode {
    fn count(self, available: usize) -> usize {
        match self {
            RankMode::RankOne => 1.min(available),
            RankMode::Rank(r) => r.min(available),
            RankMode::Full => available,
        }
    }
}

/// Compressed representation `c Σ_i σ_i u_i w_i^T` of
/// `vec_r^{-1} φ(-𝒜^T ⊕ 𝒜)(b1 ⊗ e_{n+1})`.
#[derive(Debug, Clone)]
pub struct GradientFactors {
    /// `‖b1‖`.
    pub c: f64,
    /// All singular values of the reshaped core, non-increasing.
    pub sigmas: Vec<f64>,
    /// Left factors `P y_i`.
    pub u: Vec<Vec<f64>>,
    /// Right factors `Q z_i`.
    pub w: Vec<Vec<f64>>,
    /// Effective Krylov dimensions of the two Arnoldi runs.
    pub m_eff: (usize, usize),
}

impl GradientFactors {
    pub fn sigma1(&self) -> f64 {
        self.sigmas.first().copied().unwrap_or(0.0)
    }

    /// `σ2/σ1`, zero when there is a single singular value.
    pub fn sigma_ratio(&self) -> f64 {
        match self.sigmas.as_slice() {
            [s1, s2, ..] if *s1 > 0.0 => s2 / s1,
            _ => 0.0,
        }
    }

    /// Dense `c Σ_{i<r} σ_i u_i w_i^T`; intended for small instances.
    pub fn reconstruct(&self, rank: RankMode) -> DMatrix<f64> {
        let k = self.u.first().map_or(0, |v| v.len());
        let mut out = DMatrix::<f64>::zeros(k, k);
        for i in 0..rank.count(self.u.len()) {
            let u = DVector::from_column_slice(&self.u[i]);
            let w = DVector::from_column_slice(&self.w[i]);
            out += u * w.transpose() * (self.c * self.sigmas[i]);
        }
        out
    }
}

/// Two Arnoldi runs, on `(-𝒜^T, b1)` and `(𝒜, e_{n+1})`, followed by
/// `φ(T1 ⊕ T2) e_1` on the small Kronecker sum and an SVD of its `m1 x m2` reshape.
pub fn benzi_factors(aug: &AugmentedOperator<'_>, b1: &[f64], m: usize) -> Result<GradientFactors> {
    let k = aug.dim();
    if b1.len() != k {
        return Err(Error::Dimension { expected: k, got: b1.len() });
    }
    let mut e_last = vec![0.0; k];
    e_last[k - 1] = 1.0;
    let m1 = aug.neg_transposed();
    let left = arnoldi(&m1, b1, m, DEFAULT_BREAKDOWN_TOL)?;
    let right = arnoldi(aug, &e_last, m, DEFAULT_BREAKDOWN_TOL)?;
    let (ma, mb) = (left.m_eff, right.m_eff);
    let ks = kron_sum(&left.h, &right.h);
    let mut e1 = DVector::<f64>::zeros(ma * mb);
    e1[0] = 1.0;
    let (_, core) = phi_apply_dense(&ks, &e1)?;
    let x = DMatrix::from_row_slice(ma, mb, core.as_slice());
    let svd = x.svd(true, true);
    let uu = svd.u.ok_or_else(|| Error::Numeric("SVD did not return U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not return V^T".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut sigmas = Vec::with_capacity(order.len());
    let mut u = Vec::with_capacity(order.len());
    let mut w = Vec::with_capacity(order.len());
    for &idx in &order {
        sigmas.push(svd.singular_values[idx]);
        let y: Vec<f64> = uu.column(idx).iter().cloned().collect();
        let z: Vec<f64> = vt.row(idx).iter().cloned().collect();
        u.push(left.combine(&y));
        w.push(right.combine(&z));
    }
    Ok(GradientFactors { c: norm(b1), sigmas, u, w, m_eff: (ma, mb) })
}

/// `Σ_i c σ_i <d𝒜(Ω) ·, u_i w_i^T>` over the selected singular triplets.
pub fn apply_da_transpose(
    op: &FlowOperator,
    factors: &GradientFactors,
    rank: RankMode,
    t: f64,
    include_b_column: bool,
) -> ParameterGradient {
    let nn = op.graph().patch_len();
    let mut g = ParameterGradient::zeros(op.n_pixels(), nn);
    for i in 0..rank.count(factors.u.len()) {
        let coef = factors.c * factors.sigmas[i];
        if coef == 0.0 {
            continue;
        }
        let term = da_adjoint_rank1(op, &factors.u[i], &factors.w[i], t, include_b_column);
        g.axpy(coef, &term);
    }
    g
}
