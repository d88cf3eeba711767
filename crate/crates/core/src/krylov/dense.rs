//! Dense matrix exponential, φ-function via augmentation, and Kronecker helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.53939833006323e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `(V - U)^{-1} (V + U)`
fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Numeric("singular Padé denominator in expm".into()))
}

fn pade_low(a: &DMatrix<f64>, coeffs: &[f64]) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    let id = DMatrix::<f64>::identity(k, k);
    let a2 = a * a;
    let mut powers = vec![id.clone(), a2.clone()];
    while powers.len() * 2 < coeffs.len() {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut odd = DMatrix::<f64>::zeros(k, k);
    let mut even = DMatrix::<f64>::zeros(k, k);
    for (j, pw) in powers.iter().enumerate() {
        even += pw * coeffs[2 * j];
        odd += pw * coeffs[2 * j + 1];
    }
    pade_solve(a * odd, even)
}

fn pade_13(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = &PADE_13;
    let k = a.nrows();
    let id = DMatrix::<f64>::identity(k, k);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + id * b[0];
    pade_solve(u, v)
}

/// Matrix exponential by scaling and squaring with diagonal Padé approximants
/// of degree 3, 5, 7, 9 or 13.
pub fn expm_dense(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension { expected: m.nrows(), got: m.ncols() });
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("expm_dense input"));
    }
    let k = m.nrows();
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let n1 = norm1(m);
    for (deg, theta) in THETA {
        if n1 <= theta {
            let coeffs: &[f64] = match deg {
                3 => &PADE_3,
                5 => &PADE_5,
                7 => &PADE_7,
                _ => &PADE_9,
            };
            return pade_low(m, coeffs);
        }
    }
    let s = (n1 / THETA_13).log2().ceil().max(0.0) as i32;
    let scaled = m * 2f64.powi(-s);
    let mut r = pade_13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("expm_dense result"));
    }
    Ok(r)
}

/// `(expm(M), φ(M) v)` from the exponential of `[[M, v], [0, 0]]`.
pub fn phi_apply_dense(m: &DMatrix<f64>, v: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = m.nrows();
    if v.len() != k {
        return Err(Error::Dimension { expected: k, got: v.len() });
    }
    let mut aug = DMatrix::<f64>::zeros(k + 1, k + 1);
    aug.view_mut((0, 0), (k, k)).copy_from(m);
    aug.view_mut((0, k), (k, 1)).copy_from(v);
    let e = expm_dense(&aug)?;
    let em = e.view((0, 0), (k, k)).into_owned();
    let col = e.view((0, k), (k, 1)).column(0).into_owned();
    Ok((em, col))
}

/// `(expm(M), φ(M) e_1)`.
pub fn phi_dense(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = m.nrows();
    if k == 0 {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    let mut e1 = DVector::<f64>::zeros(k);
    e1[0] = 1.0;
    phi_apply_dense(m, &e1)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `A ⊕ B = A ⊗ I + I ⊗ B`.
pub fn kron_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ia = DMatrix::<f64>::identity(a.nrows(), a.nrows());
    let ib = DMatrix::<f64>::identity(b.nrows(), b.nrows());
    a.kronecker(&ib) + ia.kronecker(b)
}

/// Row-stacking vectorization.
pub fn vec_r(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().cloned())
}

/// Inverse of [`vec_r`].
pub fn unvec_r(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Differential of the matrix exponential at `X` in direction `Y`, evaluated as
/// `vec_r^{-1}((expm(X) ⊗ I) φ(-X ⊕ X^T) vec_r(Y))`.
pub fn dexpm_dense(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = x.nrows();
    if x.ncols() != k || y.nrows() != k || y.ncols() != k {
        return Err(Error::Dimension { expected: k, got: y.nrows().max(y.ncols()) });
    }
    let ks = kron_sum(&(-x), &x.transpose());
    let (_, phi_y) = phi_apply_dense(&ks, &vec_r(y))?;
    let ex = expm_dense(x)?;
    let id = DMatrix::<f64>::identity(k, k);
    Ok(unvec_r(&(ex.kronecker(&id) * phi_y), k, k))
}
