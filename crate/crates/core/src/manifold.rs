//! Fisher-Rao geometry on the open probability simplex and on products of simplices.
//!
//! Single-point maps act on [`SimplexPoint`] / [`TangentVector`]; the field forms act
//! row-wise on [`AssignmentState`] / [`TangentField`], which store their rows
//! contiguously so that the backing slice is exactly the row-stacked vectorization.

use crate::error::{check_len, Error, Result};
use crate::vecops::dot;

/// Entries of lifted simplex points are floored here before renormalization.
pub const SIMPLEX_FLOOR: f64 = 1e-12;

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl SimplexPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate_simplex(&values, SUM_TOL)?;
        Ok(Self(values))
    }

    pub fn barycenter(dim: usize) -> Self {
        Self(vec![1.0 / dim as f64; dim])
    }

    #[cfg(test)]
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TangentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let s: f64 = values.iter().sum();
        if !s.is_finite() || s.abs() > SUM_TOL * (1.0 + values.iter().map(|v| v.abs()).sum::<f64>())
        {
            return Err(Error::Domain(format!("tangent vector sums to {s}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn validate_simplex(values: &[f64], tol: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Domain("empty simplex point".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("simplex entry {v} is not strictly positive")));
    }
    let s: f64 = values.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::Domain(format!("simplex point sums to {s}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// slice kernels

/// `out = z - mean(z)`.
pub fn project_tangent_into(z: &[f64], out: &mut [f64]) {
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - mean;
    }
}

/// In-place centering.
pub fn center_in_place(z: &mut [f64]) {
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    for v in z.iter_mut() {
        *v -= mean;
    }
}

/// `out = (Diag(p) - p p^T) z`.
#[inline]
pub fn replicator_into(p: &[f64], z: &[f64], out: &mut [f64]) {
    let pz = dot(p, z);
    for ((o, pi), zi) in out.iter_mut().zip(p).zip(z) {
        *o = pi * (zi - pz);
    }
}

/// `out = p e^z / <p, e^z>`, evaluated with the max of `z` subtracted.
pub fn lift_into(p: &[f64], z: &[f64], out: &mut [f64]) {
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for ((o, pi), zi) in out.iter_mut().zip(p).zip(z) {
        *o = pi * (zi - zmax).exp();
        total += *o;
    }
    let mut floored = false;
    for o in out.iter_mut() {
        *o /= total;
        if *o < SIMPLEX_FLOOR {
            *o = SIMPLEX_FLOOR;
            floored = true;
        }
    }
    if floored {
        let s: f64 = out.iter().sum();
        for o in out.iter_mut() {
            *o /= s;
        }
    }
}

/// Lifting from the barycenter, i.e. a softmax of `z`.
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let c = z.len() as f64;
    let bary = vec![1.0 / c; z.len()];
    lift_into(&bary, z, out);
}

// ---------------------------------------------------------------------------
// single-point operations

pub fn project_tangent(z: &[f64]) -> Result<TangentVector> {
    if z.len() < 2 {
        return Err(Error::Dimension { expected: 2, got: z.len() });
    }
    let mut out = vec![0.0; z.len()];
    project_tangent_into(z, &mut out);
    Ok(TangentVector(out))
}

pub fn replicator_apply(p: &SimplexPoint, z: &[f64]) -> Result<TangentVector> {
    check_len(p.dim(), z.len())?;
    let mut out = vec![0.0; z.len()];
    replicator_into(p.as_slice(), z, &mut out);
    Ok(TangentVector(out))
}

/// The lifting map `exp_p(z) = p e^z / <p, e^z>`.
pub fn exp_map(p: &SimplexPoint, z: &[f64]) -> Result<SimplexPoint> {
    check_len(p.dim(), z.len())?;
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("exp_map argument"));
    }
    let mut out = vec![0.0; z.len()];
    lift_into(p.as_slice(), z, &mut out);
    Ok(SimplexPoint(out))
}

/// Inverse of the lifting map restricted to the tangent space: `Π0(log q - log p)`.
pub fn exp_map_inverse(p: &SimplexPoint, q: &SimplexPoint) -> Result<TangentVector> {
    check_len(p.dim(), q.dim())?;
    ensure_positive(p.as_slice())?;
    ensure_positive(q.as_slice())?;
    let diff: Vec<f64> = q.0.iter().zip(&p.0).map(|(a, b)| a.ln() - b.ln()).collect();
    project_tangent(&diff)
}

/// The exponential map `Exp_p(v) = p e^{v/p} / <p, e^{v/p}>`.
pub fn riemannian_exp(p: &SimplexPoint, v: &TangentVector) -> Result<SimplexPoint> {
    check_len(p.dim(), v.0.len())?;
    let z: Vec<f64> = v.0.iter().zip(&p.0).map(|(vi, pi)| vi / pi).collect();
    exp_map(p, &z)
}

/// `Exp_p^{-1}(q) = R_p log(q/p)`.
pub fn riemannian_exp_inverse(p: &SimplexPoint, q: &SimplexPoint) -> Result<TangentVector> {
    check_len(p.dim(), q.dim())?;
    ensure_positive(p.as_slice())?;
    ensure_positive(q.as_slice())?;
    let logratio: Vec<f64> = q.0.iter().zip(&p.0).map(|(a, b)| (a / b).ln()).collect();
    replicator_apply(p, &logratio)
}

fn ensure_positive(x: &[f64]) -> Result<()> {
    match x.iter().find(|v| !(**v > 0.0)) {
        Some(v) => Err(Error::Domain(format!("entry {v} is not strictly positive"))),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// fields

/// Row-stochastic, strictly positive `|I| x |J|` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentState {
    n_labels: usize,
    data: Vec<f64>,
}

/// `|I| x |J|` matrix with zero row sums stored row-major; `as_slice` is `vec_r(V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    n_labels: usize,
    data: Vec<f64>,
}

impl AssignmentState {
    pub fn new(n_labels: usize, data: Vec<f64>) -> Result<Self> {
        if n_labels == 0 || !data.len().is_multiple_of(n_labels) {
            return Err(Error::Dimension { expected: n_labels, got: data.len() });
        }
        for row in data.chunks(n_labels) {
            validate_simplex(row, 1e-10)?;
        }
        Ok(Self { n_labels, data })
    }

    pub(crate) fn from_raw(n_labels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % n_labels, 0);
        Self { n_labels, data }
    }

    pub fn barycenter(n_pixels: usize, n_labels: usize) -> Self {
        Self { n_labels, data: vec![1.0 / n_labels as f64; n_pixels * n_labels] }
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_pixels(&self) -> usize {
        self.data.len() / self.n_labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_labels..(i + 1) * self.n_labels]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.n_labels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mean Shannon entropy of the rows.
    pub fn mean_entropy(&self) -> f64 {
        let total: f64 = self
            .rows()
            .map(|r| -r.iter().map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>())
            .sum();
        total / self.n_pixels() as f64
    }
}

impl TangentField {
    pub fn new(n_labels: usize, data: Vec<f64>) -> Result<Self> {
        if n_labels == 0 || !data.len().is_multiple_of(n_labels) {
            return Err(Error::Dimension { expected: n_labels, got: data.len() });
        }
        for row in data.chunks(n_labels) {
            let s: f64 = row.iter().sum();
            let scale = 1.0 + row.iter().map(|v| v.abs()).sum::<f64>();
            if s.abs() > 1e-9 * scale {
                return Err(Error::Domain(format!("tangent row sums to {s}")));
            }
        }
        Ok(Self { n_labels, data })
    }

    /// Wraps a vectorized field without checking row sums.
    pub fn from_vec_unchecked(n_labels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % n_labels, 0);
        Self { n_labels, data }
    }

    pub fn zeros(n_pixels: usize, n_labels: usize) -> Self {
        Self { n_labels, data: vec![0.0; n_pixels * n_labels] }
    }

    /// Row-wise `Π0` of an arbitrary `|I| x |J|` matrix.
    pub fn projected(n_labels: usize, mut data: Vec<f64>) -> Self {
        for row in data.chunks_mut(n_labels) {
            center_in_place(row);
        }
        Self { n_labels, data }
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_pixels(&self) -> usize {
        self.data.len() / self.n_labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_labels..(i + 1) * self.n_labels]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.n_labels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn max_row_sum(&self) -> f64 {
        self.rows().map(|r| r.iter().sum::<f64>().abs()).fold(0.0, f64::max)
    }
}

/// Row-wise `R_W Z`.
pub fn replicator_field(w: &AssignmentState, z: &[f64]) -> Result<TangentField> {
    check_len(w.data.len(), z.len())?;
    let c = w.n_labels;
    let mut out = vec![0.0; z.len()];
    for ((o, p), zi) in out.chunks_mut(c).zip(w.rows()).zip(z.chunks(c)) {
        replicator_into(p, zi, o);
    }
    Ok(TangentField { n_labels: c, data: out })
}

/// Row-wise lifting `exp_W(Z)`.
pub fn exp_map_field(w: &AssignmentState, z: &[f64]) -> Result<AssignmentState> {
    check_len(w.data.len(), z.len())?;
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("exp_map_field argument"));
    }
    let c = w.n_labels;
    let mut out = vec![0.0; z.len()];
    for ((o, p), zi) in out.chunks_mut(c).zip(w.rows()).zip(z.chunks(c)) {
        lift_into(p, zi, o);
    }
    Ok(AssignmentState { n_labels: c, data: out })
}

/// Row-wise `exp_W^{-1}(Q) = Π0(log Q - log W)`.
pub fn exp_map_inverse_field(w: &AssignmentState, q: &AssignmentState) -> Result<TangentField> {
    check_len(w.data.len(), q.data.len())?;
    let data: Vec<f64> = q.data.iter().zip(&w.data).map(|(a, b)| a.ln() - b.ln()).collect();
    Ok(TangentField::projected(w.n_labels, data))
}

/// Row-wise `Exp_W(V)`.
pub fn riemannian_exp_field(w: &AssignmentState, v: &TangentField) -> Result<AssignmentState> {
    check_len(w.data.len(), v.data.len())?;
    let z: Vec<f64> = v.data.iter().zip(&w.data).map(|(a, b)| a / b).collect();
    exp_map_field(w, &z)
}

/// Row-wise `Exp_W^{-1}(Q) = R_W log(Q / W)`.
pub fn riemannian_exp_inverse_field(
    w: &AssignmentState,
    q: &AssignmentState,
) -> Result<TangentField> {
    check_len(w.data.len(), q.data.len())?;
    let logratio: Vec<f64> = q.data.iter().zip(&w.data).map(|(a, b)| (a / b).ln()).collect();
    replicator_field(w, &logratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn simplex(raw: Vec<f64>) -> SimplexPoint {
        let s: f64 = raw.iter().sum();
        SimplexPoint::new(raw.into_iter().map(|v| v / s).collect()).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_tangent(&[1.0, 2.0, 3.0]).unwrap().as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(project_tangent(&[5.0, 5.0]).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(matches!(project_tangent(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn replicator_examples() {
        let p = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        let r = replicator_apply(&p, &[1.0, 0.0]).unwrap();
        assert!(close(r.as_slice(), &[0.25, -0.25], 1e-15));

        let p = SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap();
        let r = replicator_apply(&p, &[1.0, 1.0, 1.0]).unwrap();
        assert!(close(r.as_slice(), &[0.0; 3], 1e-15));

        // dense Diag(p) - p p^T
        let pv = [0.2, 0.3, 0.5];
        let z = [1.0, 2.0, 3.0];
        let mut dense = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                let m = if i == j { pv[i] } else { 0.0 } - pv[i] * pv[j];
                dense[i] += m * z[j];
            }
        }
        let r = replicator_apply(&p, &z).unwrap();
        assert!(close(r.as_slice(), &dense, 1e-15));
        assert!(replicator_apply(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exp_map_examples() {
        let bary = SimplexPoint::barycenter(4);
        assert!(close(exp_map(&bary, &[0.0; 4]).unwrap().as_slice(), bary.as_slice(), 1e-15));

        let p = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        let q = exp_map(&p, &[2f64.ln(), 0.0]).unwrap();
        assert!(close(q.as_slice(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));

        // huge arguments stay finite thanks to the max shift
        let q = exp_map(&p, &[1000.0, 0.0]).unwrap();
        assert!(q.as_slice().iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn exp_map_inverse_examples() {
        let p = SimplexPoint::barycenter(2);
        let q = SimplexPoint::new(vec![0.8, 0.2]).unwrap();
        let t = exp_map_inverse(&p, &q).unwrap();
        // Π0(log q - log p) = ±(ln 0.8 - ln 0.2)/2 = ±ln 2
        assert!(close(t.as_slice(), &[std::f64::consts::LN_2, -std::f64::consts::LN_2], 1e-12));
        assert!(close(exp_map_inverse(&q, &q).unwrap().as_slice(), &[0.0, 0.0], 1e-15));
    }

    #[test]
    fn riemannian_exp_examples() {
        let p = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let e = riemannian_exp(&p, &TangentVector::zeros(2)).unwrap();
        assert!(close(e.as_slice(), p.as_slice(), 1e-15));

        let bary = SimplexPoint::barycenter(2);
        let v = project_tangent(&[1.0, 0.0]).unwrap();
        let a = riemannian_exp(&bary, &v).unwrap();
        // Exp_p(Π0 z) at the barycenter equals exp_p(c Π0 z) = exp_p(2 Π0 z) = exp_p(R_p^{-1}...)
        let rz = replicator_apply(&bary, &[1.0, 0.0]).unwrap();
        let b = riemannian_exp(&bary, &rz).unwrap();
        let c = exp_map(&bary, &[1.0, 0.0]).unwrap();
        assert!(close(b.as_slice(), c.as_slice(), 1e-15));
        assert!(a.as_slice()[0] > 0.5);
    }

    #[test]
    fn riemannian_exp_inverse_dense() {
        let p = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        let q = SimplexPoint::new(vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let v = riemannian_exp_inverse(&p, &q).unwrap();
        let l = [(4.0f64 / 3.0).ln(), (2.0f64 / 3.0).ln()];
        let dense = [0.25 * l[0] - 0.25 * l[1], -0.25 * l[0] + 0.25 * l[1]];
        assert!(close(v.as_slice(), &dense, 1e-15));
        assert!(riemannian_exp_inverse(&p, &SimplexPoint::from_raw(vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn field_forms_act_rowwise() {
        let w = AssignmentState::new(2, vec![0.5, 0.5, 0.2, 0.8]).unwrap();
        let z = [1.0, 0.0, 0.0, 1.0];
        let r = replicator_field(&w, &z).unwrap();
        let r1 = replicator_apply(&SimplexPoint::new(vec![0.2, 0.8]).unwrap(), &[0.0, 1.0]).unwrap();
        assert!(close(r.row(1), r1.as_slice(), 1e-15));
        let e = exp_map_field(&w, &z).unwrap();
        let back = exp_map_inverse_field(&w, &e).unwrap();
        let e2 = exp_map_field(&w, back.as_slice()).unwrap();
        assert!(close(e.as_slice(), e2.as_slice(), 1e-12));
        let v = riemannian_exp_inverse_field(&w, &e).unwrap();
        let e3 = riemannian_exp_field(&w, &v).unwrap();
        assert!(close(e.as_slice(), e3.as_slice(), 1e-12));
    }

    fn simplex_strategy(dim: usize) -> impl Strategy<Value = SimplexPoint> {
        prop::collection::vec(0.05f64..1.0, dim).prop_map(simplex)
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_symmetric(
            x in prop::collection::vec(-5.0f64..5.0, 5),
            y in prop::collection::vec(-5.0f64..5.0, 5),
        ) {
            let px = project_tangent(&x).unwrap();
            let ppx = project_tangent(px.as_slice()).unwrap();
            prop_assert!(close(px.as_slice(), ppx.as_slice(), 1e-12));
            let py = project_tangent(&y).unwrap();
            prop_assert!((dot(px.as_slice(), &y) - dot(&x, py.as_slice())).abs() < 1e-10);
        }

        #[test]
        fn replicator_output_is_tangent(p in simplex_strategy(4), z in prop::collection::vec(-3.0f64..3.0, 4)) {
            let r = replicator_apply(&p, &z).unwrap();
            prop_assert!(r.as_slice().iter().sum::<f64>().abs() < 1e-12);
            let ones = replicator_apply(&p, &[1.0; 4]).unwrap();
            prop_assert!(ones.as_slice().iter().all(|v| v.abs() < 1e-15));
        }

        #[test]
        fn exp_map_shift_invariant(p in simplex_strategy(4), z in prop::collection::vec(-3.0f64..3.0, 4), a in -10.0f64..10.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + a).collect();
            let q1 = exp_map(&p, &z).unwrap();
            let q2 = exp_map(&p, &shifted).unwrap();
            prop_assert!(close(q1.as_slice(), q2.as_slice(), 1e-12));
            let q3 = exp_map(&p, project_tangent(&z).unwrap().as_slice()).unwrap();
            prop_assert!(close(q1.as_slice(), q3.as_slice(), 1e-12));
        }

        #[test]
        fn maps_are_mutually_inverse(p in simplex_strategy(3), q in simplex_strategy(3)) {
            let t = exp_map_inverse(&p, &q).unwrap();
            prop_assert!(close(exp_map(&p, t.as_slice()).unwrap().as_slice(), q.as_slice(), 1e-10));
            let v = riemannian_exp_inverse(&p, &q).unwrap();
            prop_assert!(close(riemannian_exp(&p, &v).unwrap().as_slice(), q.as_slice(), 1e-10));
        }
    }
}
