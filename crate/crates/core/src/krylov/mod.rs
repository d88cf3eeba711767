//! Matrix-free Krylov approximations of `expm(tA) b` and `t φ(tA) b`.

mod dense;

pub use dense::{dexpm_dense, expm_dense, kron, kron_sum, phi_apply_dense, phi_dense, unvec_r, vec_r};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, norm};

/// Default Krylov subspace dimension.
pub const DEFAULT_KRYLOV_DIM: usize = 10;

/// Default relative breakdown tolerance for [`arnoldi`].
pub const DEFAULT_BREAKDOWN_TOL: f64 = 1e-12;

/// A square linear map given only through its action.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`; `y` is fully overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }

    /// Materializes the operator column by column.
    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            out.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        out
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
}

#[derive(Debug, Clone)]
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.0.nrows();
        for (i, yi) in y.iter_mut().enumerate().take(n) {
            *yi = self.0.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// The zero map on `R^n`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroOperator(pub usize);

impl LinearOperator for ZeroOperator {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, _x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
    }
}

/// Wraps a closure `(x, y) -> ()` writing `A x` into `y`.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Orthonormal Krylov basis with its Hessenberg projection.
#[derive(Debug, Clone)]
pub struct KrylovDecomposition {
    /// Basis columns `q_1..q_{m_eff}`, each of length `n`.
    pub q: Vec<Vec<f64>>,
    /// `m_eff x m_eff` upper Hessenberg matrix.
    pub h: DMatrix<f64>,
    pub beta: f64,
    pub m_eff: usize,
    /// Norm of the residual that would have produced `q_{m_eff+1}`.
    pub residual: f64,
}

impl KrylovDecomposition {
    /// `Q y` for a coefficient vector of length `m_eff`.
    pub fn combine(&self, y: &[f64]) -> Vec<f64> {
        let n = self.q.first().map_or(0, |q| q.len());
        let mut out = vec![0.0; n];
        for (qj, &yj) in self.q.iter().zip(y) {
            axpy(yj, qj, &mut out);
        }
        out
    }
}

/// Arnoldi iteration with modified Gram-Schmidt and one reorthogonalization pass.
///
/// Stops early once the new residual norm drops below `breakdown_tol` times the
/// norm of the operator image of the current basis vector. Requests with
/// `m > n` are clamped to `n`.
pub fn arnoldi<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    m: usize,
    breakdown_tol: f64,
) -> Result<KrylovDecomposition> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension { expected: n, got: b.len() });
    }
    if m == 0 {
        return Err(Error::Config("Krylov dimension must be at least 1".into()));
    }
    let beta = norm(b);
    if beta == 0.0 {
        return Err(Error::Domain("Krylov starting vector is zero".into()));
    }
    if !beta.is_finite() {
        return Err(Error::NonFinite("Krylov starting vector"));
    }
    let m = m.min(n);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    q.push(b.iter().map(|v| v / beta).collect());
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut w = vec![0.0; n];
    let mut m_eff = m;
    let mut residual = 0.0;
    for j in 0..m {
        a.apply(&q[j], &mut w);
        let image_norm = norm(&w);
        for _pass in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &w);
                axpy(-c, qi, &mut w);
                h[(i, j)] += c;
            }
        }
        let r = norm(&w);
        if !r.is_finite() {
            return Err(Error::NonFinite("Arnoldi residual"));
        }
        h[(j + 1, j)] = r;
        residual = r;
        if r <= breakdown_tol * image_norm.max(f64::MIN_POSITIVE) {
            m_eff = j + 1;
            residual = 0.0;
            break;
        }
        if j + 1 < m {
            q.push(w.iter().map(|v| v / r).collect());
        }
    }
    let h = h.view((0, 0), (m_eff, m_eff)).into_owned();
    Ok(KrylovDecomposition { q, h, beta, m_eff, residual })
}

/// `expm(tA) b ≈ ‖b‖ Q expm(tH) e_1`.
pub fn expm_action<A: LinearOperator + ?Sized>(a: &A, b: &[f64], t: f64, m: usize) -> Result<Vec<f64>> {
    let k = arnoldi(a, b, m, DEFAULT_BREAKDOWN_TOL)?;
    let e = expm_dense(&(&k.h * t))?;
    let y: Vec<f64> = e.column(0).iter().map(|v| v * k.beta).collect();
    Ok(k.combine(&y))
}

/// `t φ(tA) b ≈ t ‖b‖ Q φ(tH) e_1`.
pub fn phi_action<A: LinearOperator + ?Sized>(a: &A, b: &[f64], t: f64, m: usize) -> Result<Vec<f64>> {
    let k = arnoldi(a, b, m, DEFAULT_BREAKDOWN_TOL)?;
    let (_, col) = phi_dense(&(&k.h * t))?;
    let y: Vec<f64> = col.iter().map(|v| v * k.beta * t).collect();
    Ok(k.combine(&y))
}

/// Dense reference for `t φ(tA) b` using the augmented matrix `[[tA, tb], [0, 0]]`.
pub fn phi_action_dense(a: &DMatrix<f64>, b: &[f64], t: f64) -> Result<Vec<f64>> {
    let v = DVector::from_iterator(b.len(), b.iter().map(|x| x * t));
    let (_, col) = phi_apply_dense(&(a * t), &v)?;
    Ok(col.as_slice().to_vec())
}

/// Dense reference for `expm(tA) b`.
pub fn expm_action_dense(a: &DMatrix<f64>, b: &[f64], t: f64) -> Result<Vec<f64>> {
    let e = expm_dense(&(a * t))?;
    Ok((e * DVector::from_column_slice(b)).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_op(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DenseOperator {
        DenseOperator(DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * scale))
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        norm(&crate::vecops::sub(a, b)) / norm(b).max(1e-300)
    }

    #[test]
    fn scalar_multiple_of_identity_breaks_down_immediately() {
        let a = DenseOperator(DMatrix::identity(5, 5) * 2.5);
        let k = arnoldi(&a, &[1.0, 2.0, 0.0, -1.0, 3.0], 4, DEFAULT_BREAKDOWN_TOL).unwrap();
        assert_eq!(k.m_eff, 1);
        assert!((k.h[(0, 0)] - 2.5).abs() < 1e-14);
        let k = arnoldi(&ZeroOperator(4), &[1.0, 0.0, 0.0, 0.0], 3, DEFAULT_BREAKDOWN_TOL).unwrap();
        assert_eq!(k.m_eff, 1);
        assert_eq!(k.h[(0, 0)], 0.0);
    }

    #[test]
    fn full_space_is_invariant() {
        let a = DenseOperator(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])));
        let s = 1.0 / 3f64.sqrt();
        let k = arnoldi(&a, &[s, s, s], 3, DEFAULT_BREAKDOWN_TOL).unwrap();
        assert_eq!(k.m_eff, 3);
        let q = DMatrix::from_fn(3, 3, |i, j| k.q[j][i]);
        assert!((q.transpose() * &q - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert!((&a.0 * &q - &q * &k.h).amax() < 1e-12);
    }

    #[test]
    fn arnoldi_relation_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_op(&mut rng, 20, 1.0);
        let b = random_vec(&mut rng, 20);
        let k = arnoldi(&a, &b, 8, DEFAULT_BREAKDOWN_TOL).unwrap();
        assert_eq!(k.m_eff, 8);
        let q = DMatrix::from_fn(20, 8, |i, j| k.q[j][i]);
        assert!((q.transpose() * &q - DMatrix::identity(8, 8)).amax() < 1e-10);
        let first: Vec<f64> = k.q[0].clone();
        assert!(rel_err(&first, &crate::vecops::scaled(1.0 / norm(&b), &b)) < 1e-15);
        let resid = &a.0 * &q - &q * &k.h;
        let hn = k.h.norm();
        for j in 0..7 {
            assert!(resid.column(j).norm() <= 1e-8 * hn);
        }
    }

    #[test]
    fn rejects_zero_start() {
        assert!(matches!(arnoldi(&ZeroOperator(3), &[0.0; 3], 2, 1e-12), Err(Error::Domain(_))));
        assert!(arnoldi(&ZeroOperator(3), &[1.0; 3], 0, 1e-12).is_err());
    }

    #[test]
    fn actions_on_trivial_operators() {
        let b = vec![1.0, -2.0, 0.5];
        let v = phi_action(&ZeroOperator(3), &b, 2.0, 3).unwrap();
        assert!(rel_err(&v, &[2.0, -4.0, 1.0]) < 1e-15);
        let v = expm_action(&ZeroOperator(3), &b, 2.0, 3).unwrap();
        assert!(rel_err(&v, &b) < 1e-15);
        let id = DenseOperator(DMatrix::identity(3, 3));
        let v = phi_action(&id, &b, 1.0, 3).unwrap();
        let e1 = std::f64::consts::E - 1.0;
        assert!(rel_err(&v, &crate::vecops::scaled(e1, &b)) < 1e-14);
        let v = expm_action(&id, &b, 0.5, 3).unwrap();
        assert!(rel_err(&v, &crate::vecops::scaled(0.5f64.exp(), &b)) < 1e-14);
    }

    #[test]
    fn full_dimension_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_op(&mut rng, 30, 0.3);
        let b = random_vec(&mut rng, 30);
        for t in [0.5, 1.0, 3.0] {
            let v = phi_action(&a, &b, t, 30).unwrap();
            assert!(rel_err(&v, &phi_action_dense(&a.0, &b, t).unwrap()) < 1e-9);
            let v = expm_action(&a, &b, t, 30).unwrap();
            assert!(rel_err(&v, &expm_action_dense(&a.0, &b, t).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn fn_operator_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_op(&mut rng, 6, 1.0);
        let f = FnOperator::new(6, |x: &[f64], y: &mut [f64]| d.apply(x, y));
        assert_eq!(f.to_dense(), d.0);
        let x = random_vec(&mut rng, 6);
        let y = random_vec(&mut rng, 6);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let lhs = f.apply_vec(&combo);
        let rhs: Vec<f64> = f.apply_vec(&x).iter().zip(f.apply_vec(&y)).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        assert!(rel_err(&lhs, &rhs) < 1e-12);
    }
}
