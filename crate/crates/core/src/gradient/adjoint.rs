//! Differentials of `Ω ↦ S(W0)`, `Ω ↦ b(Ω)`, `Ω ↦ A^J(Ω)` and of the augmented
//! matrix, with their adjoints.
//!
//! Parameter directions `Y` are `|I| x |N|` arrays aligned with the weight patches.
//! Forward maps return vectors (or dense matrices for the small-instance oracles);
//! adjoints return patch-shaped arrays.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::ParameterGradient;
use crate::flow::FlowOperator;
use crate::manifold::replicator_into;
use crate::vecops::{axpy, dot};

fn patch_len(op: &FlowOperator) -> usize {
    op.graph().patch_len()
}

/// `df1(Ω) Y`: block `i` is `R_{S_i}(-(1/ρ) Σ_p Y_ip D_{k_p})`.
pub fn df1_forward(op: &FlowOperator, y: &[f64]) -> Vec<f64> {
    let c = op.n_labels();
    let nn = patch_len(op);
    let scale = -1.0 / op.rho();
    let mut out = vec![0.0; op.n_pixels() * c];
    out.par_chunks_mut(c).enumerate().for_each(|(i, o)| {
        let mut acc = vec![0.0; c];
        for (&yp, &k) in y[i * nn..(i + 1) * nn].iter().zip(op.graph().neighbors(i)) {
            axpy(scale * yp, op.dist().row(k), &mut acc);
        }
        replicator_into(op.s0().row(i), &acc, o);
    });
    out
}

/// `df1(Ω)^T Z`: entry `(i, p)` is `-(1/ρ) <R_{S_i} Z_i, D_{k_p}>`.
pub fn df1_adjoint(op: &FlowOperator, z: &[f64]) -> ParameterGradient {
    let c = op.n_labels();
    let nn = patch_len(op);
    let scale = -1.0 / op.rho();
    let mut out = vec![0.0; op.n_pixels() * nn];
    out.par_chunks_mut(nn).enumerate().for_each(|(i, g)| {
        let mut r = vec![0.0; c];
        replicator_into(op.s0().row(i), &z[i * c..(i + 1) * c], &mut r);
        for (gp, &k) in g.iter_mut().zip(op.graph().neighbors(i)) {
            *gp = scale * dot(&r, op.dist().row(k));
        }
    });
    ParameterGradient::from_vec(nn, out)
}

fn apply_rw0(op: &FlowOperator, z: &[f64]) -> Vec<f64> {
    let c = op.n_labels();
    let mut out = vec![0.0; z.len()];
    for ((o, zi), w) in out.chunks_mut(c).zip(z.chunks(c)).zip(op.w0().rows()) {
        replicator_into(w, zi, o);
    }
    out
}

/// `df2(Ω) Y = vec_r(R_{W0} df1(Ω) Y)`.
pub fn df2_forward(op: &FlowOperator, y: &[f64]) -> Vec<f64> {
    apply_rw0(op, &df1_forward(op, y))
}

/// `df2(Ω)^T Z = df1(Ω)^T (R_{W0} Z)`.
pub fn df2_adjoint(op: &FlowOperator, z: &[f64]) -> ParameterGradient {
    df1_adjoint(op, &apply_rw0(op, z))
}

/// `(df3(Ω) Y) v` without forming the matrix.
pub fn df3_forward_apply(op: &FlowOperator, y: &[f64], v: &[f64]) -> Vec<f64> {
    let c = op.n_labels();
    let nn = patch_len(op);
    let ds = df1_forward(op, y);
    let mut out = vec![0.0; op.n_pixels() * c];
    out.par_chunks_mut(c).enumerate().for_each(|(i, o)| {
        let s = op.s0().row(i);
        let dsi = &ds[i * c..(i + 1) * c];
        let mut zeta = vec![0.0; c];
        let mut yv = vec![0.0; c];
        for ((&w, &yp), &k) in op.omega().patch(i).iter().zip(&y[i * nn..(i + 1) * nn]).zip(op.graph().neighbors(i)) {
            axpy(w, &v[k * c..(k + 1) * c], &mut zeta);
            axpy(yp, &v[k * c..(k + 1) * c], &mut yv);
        }
        // dR_s[ds] ζ = ds∘ζ - ds <s, ζ> - s <ds, ζ>
        let s_zeta = dot(s, &zeta);
        let ds_zeta = dot(dsi, &zeta);
        replicator_into(s, &yv, o);
        for j in 0..c {
            o[j] += dsi[j] * zeta[j] - dsi[j] * s_zeta - s[j] * ds_zeta;
        }
    });
    out
}

/// `<df3(Ω) Y, a z^T>` as a function of `Y`, i.e. the patch field of the adjoint
/// applied to the rank-one matrix `a z^T`.
pub fn df3_adjoint_rank1(op: &FlowOperator, a: &[f64], z: &[f64]) -> ParameterGradient {
    let c = op.n_labels();
    let nn = patch_len(op);
    let scale = -1.0 / op.rho();
    let mut out = vec![0.0; op.n_pixels() * nn];
    out.par_chunks_mut(nn).enumerate().for_each(|(i, g)| {
        let s = op.s0().row(i);
        let ai = &a[i * c..(i + 1) * c];
        let mut zeta = vec![0.0; c];
        for (&w, &k) in op.omega().patch(i).iter().zip(op.graph().neighbors(i)) {
            axpy(w, &z[k * c..(k + 1) * c], &mut zeta);
        }
        let s_zeta = dot(s, &zeta);
        let a_s = dot(ai, s);
        let h: Vec<f64> = (0..c).map(|j| ai[j] * zeta[j] - ai[j] * s_zeta - zeta[j] * a_s).collect();
        let mut rh = vec![0.0; c];
        replicator_into(s, &h, &mut rh);
        let mut ra = vec![0.0; c];
        replicator_into(s, ai, &mut ra);
        for (gp, &k) in g.iter_mut().zip(op.graph().neighbors(i)) {
            *gp = scale * dot(&rh, op.dist().row(k)) + dot(&ra, &z[k * c..(k + 1) * c]);
        }
    });
    ParameterGradient::from_vec(nn, out)
}

/// `<d𝒜(Ω) Y, u w^T>` as a patch field, where `𝒜 = [[T A^J, T b], [0, 0]]`.
///
/// With `include_b_column = false` only the `A^J` block of the differential is
/// contracted; the `b` column is then expected to be accounted for separately.
pub fn da_adjoint_rank1(
    op: &FlowOperator,
    u: &[f64],
    w: &[f64],
    t: f64,
    include_b_column: bool,
) -> ParameterGradient {
    let n = op.dim_n();
    let mut g = df3_adjoint_rank1(op, &u[..n], &w[..n]);
    if include_b_column && w[n] != 0.0 {
        let gb = df2_adjoint(op, &u[..n]);
        g.axpy(w[n], &gb);
    }
    g.scale(t);
    g
}

/// Dense `df3(Ω) Y` assembled from the dense weight matrix; oracle for small instances.
pub fn df3_forward_dense(op: &FlowOperator, y: &[f64]) -> DMatrix<f64> {
    let n = op.n_pixels();
    let c = op.n_labels();
    let nn = patch_len(op);
    let mut omega = DMatrix::<f64>::zeros(n, n);
    let mut ydense = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (p, &k) in op.graph().neighbors(i).iter().enumerate() {
            omega[(i, k)] += op.omega().patch(i)[p];
            ydense[(i, k)] += y[i * nn + p];
        }
    }
    let ds = df1_forward(op, y);
    let id = DMatrix::<f64>::identity(c, c);
    let mut rs = DMatrix::<f64>::zeros(n * c, n * c);
    let mut drs = DMatrix::<f64>::zeros(n * c, n * c);
    for i in 0..n {
        let s = op.s0().row(i);
        let d = &ds[i * c..(i + 1) * c];
        for a in 0..c {
            for b in 0..c {
                let delta = if a == b { 1.0 } else { 0.0 };
                rs[(i * c + a, i * c + b)] = delta * s[a] - s[a] * s[b];
                drs[(i * c + a, i * c + b)] = delta * d[a] - d[a] * s[b] - s[a] * d[b];
            }
        }
    }
    drs * omega.kronecker(&id) + rs * ydense.kronecker(&id)
}

/// Dense `d𝒜(Ω) Y` of size `(n+1) x (n+1)`.
pub fn da_forward_dense(op: &FlowOperator, y: &[f64], t: f64) -> DMatrix<f64> {
    let n = op.dim_n();
    let mut out = DMatrix::<f64>::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(&(df3_forward_dense(op, y) * t));
    let db = df2_forward(op, y);
    for (r, v) in db.iter().enumerate() {
        out[(r, n)] = t * v;
    }
    out
}
