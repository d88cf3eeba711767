//! Distance, likelihood and similarity fields, the linearized flow operator and
//! its solvers.

use rayon::prelude::*;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::graph::{GridGraph, WeightField};
use crate::krylov::{phi_action, LinearOperator};
use crate::manifold::{
    center_in_place, lift_into, replicator_into, softmax_into, AssignmentState, TangentField,
};
use crate::vecops::{axpy, dot, norm};

/// Default flow integration time.
pub const DEFAULT_T: f64 = 5.0;
/// Default distance scale.
pub const DEFAULT_RHO: f64 = 1.0;
/// Default explicit Euler step.
pub const DEFAULT_EULER_STEP: f64 = 0.01;

/// How pixel-to-label distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Color of the pixel itself.
    #[default]
    Center,
    /// Root mean square distance over the pixel's neighborhood.
    Patch,
}

/// `|I| x |J|` matrix of pixel-to-label distances with its scale `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    n_labels: usize,
    data: Vec<f64>,
    rho: f64,
}

impl DistanceField {
    pub fn new(n_labels: usize, data: Vec<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Config(format!("rho must be positive, got {rho}")));
        }
        if n_labels == 0 || !data.len().is_multiple_of(n_labels) {
            return Err(Error::Dimension { expected: n_labels, got: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("distance field"));
        }
        Ok(Self { n_labels, data, rho })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_pixels(&self) -> usize {
        self.data.len() / self.n_labels
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_labels..(i + 1) * self.n_labels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Pixelwise nearest label.
    pub fn argmin_labels(&self) -> Vec<usize> {
        self.data
            .chunks(self.n_labels)
            .map(|r| {
                let mut best = 0;
                for (j, v) in r.iter().enumerate() {
                    if *v < r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

fn check_palette(image: &Image, labels: &[Vec<f64>]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Config("label set is empty".into()));
    }
    for l in labels {
        if l.len() != image.channels() {
            return Err(Error::Dimension { expected: image.channels(), got: l.len() });
        }
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `D_ij = ‖f_i - l_j‖` for every pixel color `f_i` and label color `l_j`.
pub fn distance_field(image: &Image, labels: &[Vec<f64>], rho: f64) -> Result<DistanceField> {
    check_palette(image, labels)?;
    let data = (0..image.n_pixels())
        .flat_map(|i| labels.iter().map(move |l| sq_dist(image.pixel(i), l).sqrt()))
        .collect();
    DistanceField::new(labels.len(), data, rho)
}

pub fn distance_field_with(
    image: &Image,
    labels: &[Vec<f64>],
    rho: f64,
    mode: DistanceMode,
    graph: &GridGraph,
) -> Result<DistanceField> {
    match mode {
        DistanceMode::Center => distance_field(image, labels, rho),
        DistanceMode::Patch => {
            check_palette(image, labels)?;
            if graph.n_pixels() != image.n_pixels() {
                return Err(Error::Dimension { expected: graph.n_pixels(), got: image.n_pixels() });
            }
            let nn = graph.patch_len() as f64;
            let data = (0..image.n_pixels())
                .flat_map(|i| {
                    labels.iter().map(move |l| {
                        let s: f64 = graph.neighbors(i).iter().map(|&k| sq_dist(image.pixel(k), l)).sum();
                        (s / nn).sqrt()
                    })
                })
                .collect();
            DistanceField::new(labels.len(), data, rho)
        }
    }
}

/// Row-wise `L_i = exp_{W_i}(-D_i / ρ)`.
pub fn likelihood(w: &AssignmentState, d: &DistanceField) -> Result<AssignmentState> {
    if w.as_slice().len() != d.data.len() || w.n_labels() != d.n_labels {
        return Err(Error::Dimension { expected: w.as_slice().len(), got: d.data.len() });
    }
    let c = d.n_labels;
    let mut out = vec![0.0; d.data.len()];
    let inv = -1.0 / d.rho;
    out.par_chunks_mut(c).zip(d.data.par_chunks(c)).enumerate().for_each(|(i, (o, di))| {
        let z: Vec<f64> = di.iter().map(|v| v * inv).collect();
        lift_into(w.row(i), &z, o);
    });
    Ok(AssignmentState::from_raw(c, out))
}

/// `S_i = Exp_{W_i}(Σ_k ω_ik Exp^{-1}_{W_i}(L_k))`.
pub fn similarity(
    w: &AssignmentState,
    l: &AssignmentState,
    graph: &GridGraph,
    omega: &WeightField,
) -> Result<AssignmentState> {
    omega.check_graph(graph)?;
    let c = w.n_labels();
    if w.n_pixels() != graph.n_pixels() || l.as_slice().len() != w.as_slice().len() {
        return Err(Error::Dimension { expected: graph.n_pixels() * c, got: l.as_slice().len() });
    }
    let mut out = vec![0.0; w.as_slice().len()];
    out.par_chunks_mut(c).enumerate().for_each(|(i, o)| {
        let wi = w.row(i);
        let mut acc = vec![0.0; c];
        let mut logratio = vec![0.0; c];
        let mut tangent = vec![0.0; c];
        for (&wt, &k) in omega.patch(i).iter().zip(graph.neighbors(i)) {
            for ((lr, lk), p) in logratio.iter_mut().zip(l.row(k)).zip(wi) {
                *lr = (lk / p).ln();
            }
            replicator_into(wi, &logratio, &mut tangent);
            axpy(wt, &tangent, &mut acc);
        }
        // Exp_p(v) = exp_p(v / p)
        for (a, p) in acc.iter_mut().zip(wi) {
            *a /= p;
        }
        lift_into(wi, &acc, o);
    });
    Ok(AssignmentState::from_raw(c, out))
}

/// The linear operator `A^J(Ω) = Diag(R_S)(Ω ⊗ I)` together with the affine term
/// `b` of the linearized flow `v' = A^J v + b`.
#[derive(Debug, Clone)]
pub struct FlowOperator {
    graph: GridGraph,
    omega: WeightField,
    dist: DistanceField,
    w0: AssignmentState,
    s0: AssignmentState,
    b: Vec<f64>,
    barycentric: bool,
}

impl FlowOperator {
    /// Linearization at the barycenter, with `b = vec_r(R_{W0} S(W0))`.
    pub fn new(graph: &GridGraph, omega: &WeightField, dist: &DistanceField) -> Result<Self> {
        let w0 = AssignmentState::barycenter(graph.n_pixels(), dist.n_labels());
        let mut op = Self::assemble(graph, omega, dist, w0)?;
        let c = dist.n_labels;
        let mut b = vec![0.0; op.s0.as_slice().len()];
        for ((bi, si), wi) in b.chunks_mut(c).zip(op.s0.rows()).zip(op.w0.rows()) {
            replicator_into(wi, si, bi);
        }
        op.b = b;
        op.barycentric = true;
        Ok(op)
    }

    /// Re-linearization at an arbitrary state `W`, with `b = vec_r(Π0 S(W))`.
    pub fn at_state(
        graph: &GridGraph,
        omega: &WeightField,
        dist: &DistanceField,
        w: AssignmentState,
    ) -> Result<Self> {
        let mut op = Self::assemble(graph, omega, dist, w)?;
        let mut b = op.s0.as_slice().to_vec();
        for row in b.chunks_mut(dist.n_labels) {
            center_in_place(row);
        }
        op.b = b;
        Ok(op)
    }

    fn assemble(
        graph: &GridGraph,
        omega: &WeightField,
        dist: &DistanceField,
        w0: AssignmentState,
    ) -> Result<Self> {
        omega.check_graph(graph)?;
        if dist.n_pixels() != graph.n_pixels() {
            return Err(Error::Dimension { expected: graph.n_pixels(), got: dist.n_pixels() });
        }
        let l = likelihood(&w0, dist)?;
        let s0 = similarity(&w0, &l, graph, omega)?;
        Ok(Self {
            graph: graph.clone(),
            omega: omega.clone(),
            dist: dist.clone(),
            w0,
            s0,
            b: Vec::new(),
            barycentric: false,
        })
    }

    pub fn graph(&self) -> &GridGraph {
        &self.graph
    }

    pub fn omega(&self) -> &WeightField {
        &self.omega
    }

    pub fn dist(&self) -> &DistanceField {
        &self.dist
    }

    pub fn rho(&self) -> f64 {
        self.dist.rho
    }

    pub fn n_labels(&self) -> usize {
        self.dist.n_labels
    }

    pub fn n_pixels(&self) -> usize {
        self.graph.n_pixels()
    }

    /// State dimension `n = |I| |J|`.
    pub fn dim_n(&self) -> usize {
        self.graph.n_pixels() * self.dist.n_labels
    }

    /// Whether the operator is linearized at the barycenter.
    pub fn is_barycentric(&self) -> bool {
        self.barycentric
    }

    /// Linearization point `W0`.
    pub fn w0(&self) -> &AssignmentState {
        &self.w0
    }

    /// Similarities `S(W0)`.
    pub fn s0(&self) -> &AssignmentState {
        &self.s0
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn transposed(&self) -> Transposed<'_> {
        Transposed(self)
    }

    /// Row-wise `R_{S(W0)}` applied in place.
    pub fn apply_rs_in_place(&self, x: &mut [f64]) {
        let c = self.n_labels();
        x.par_chunks_mut(c).enumerate().for_each(|(i, xi)| {
            let s = self.s0.row(i);
            let sz = dot(s, xi);
            for (v, sj) in xi.iter_mut().zip(s) {
                *v = sj * (*v - sz);
            }
        });
    }

    /// `(Ω ⊗ I) v`: neighborhood averages of the blocks of `v`.
    pub fn average_in(&self, v: &[f64], y: &mut [f64]) {
        let c = self.n_labels();
        y.par_chunks_mut(c).enumerate().for_each(|(i, yi)| {
            yi.fill(0.0);
            for (&w, &k) in self.omega.patch(i).iter().zip(self.graph.neighbors(i)) {
                axpy(w, &v[k * c..(k + 1) * c], yi);
            }
        });
    }

    /// `(Ω ⊗ I)^T u`.
    pub fn average_transpose_in(&self, u: &[f64], y: &mut [f64]) {
        let c = self.n_labels();
        y.par_chunks_mut(c).enumerate().for_each(|(k, yk)| {
            yk.fill(0.0);
            for (p, &i) in self.graph.reverse_neighbors(k).iter().enumerate() {
                axpy(self.omega.patch(i)[p], &u[i * c..(i + 1) * c], yk);
            }
        });
    }
}

impl LinearOperator for FlowOperator {
    fn dim(&self) -> usize {
        self.w0.as_slice().len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.average_in(x, y);
        self.apply_rs_in_place(y);
    }
}

/// Transposed view `A^J(Ω)^T = (Ω ⊗ I)^T Diag(R_S)`.
#[derive(Clone, Copy)]
pub struct Transposed<'a>(&'a FlowOperator);

impl LinearOperator for Transposed<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut r = x.to_vec();
        self.0.apply_rs_in_place(&mut r);
        self.0.average_transpose_in(&r, y);
    }
}

/// `v(T) = T φ(T A) b`; a zero `b` gives the zero solution.
pub fn solve_affine<A: LinearOperator + ?Sized>(a: &A, b: &[f64], t: f64, m: usize) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::Config(format!("integration time must be positive, got {t}")));
    }
    if norm(b) == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    phi_action(a, b, t, m)
}

/// Explicit Euler for `v' = A v + b` from `v = 0`, using `ceil(T/h)` equal steps ending at `T`.
pub fn euler_affine<A: LinearOperator + ?Sized>(a: &A, b: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) || !(h > 0.0) {
        return Err(Error::Config(format!("Euler needs positive T and h, got T={t}, h={h}")));
    }
    let steps = ((t / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let n = b.len();
    let mut v = vec![0.0; n];
    let mut av = vec![0.0; n];
    for _ in 0..steps {
        a.apply(&v, &mut av);
        for ((vi, ai), bi) in v.iter_mut().zip(&av).zip(b) {
            *vi += dt * (ai + bi);
        }
    }
    Ok(v)
}

/// Solution `V_T` of the linearized flow at time `T` with a Krylov space of dimension `m`.
pub fn solve_linearized(op: &FlowOperator, t: f64, m: usize) -> Result<TangentField> {
    let v = solve_affine(op, op.b(), t, m)?;
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("linearized flow solution"));
    }
    Ok(TangentField::from_vec_unchecked(op.n_labels(), v))
}

pub fn integrate_euler(op: &FlowOperator, t: f64, h: f64) -> Result<TangentField> {
    let v = euler_affine(op, op.b(), t, h)?;
    Ok(TangentField::from_vec_unchecked(op.n_labels(), v))
}

/// Row-wise argmax with ties resolved towards the smaller label index.
pub fn argmax_rows(data: &[f64], n_labels: usize) -> Vec<usize> {
    data.chunks(n_labels)
        .map(|r| {
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Labels of the limit `lim_{s→∞} Exp_1(s V)`.
pub fn lift_to_labeling(v: &TangentField) -> Vec<usize> {
    argmax_rows(v.as_slice(), v.n_labels())
}

/// Default entropy threshold `1e-3 log |J|` for stopping the nonlinear iteration.
pub fn default_entropy_eps(n_labels: usize) -> f64 {
    1e-3 * (n_labels as f64).ln()
}

#[derive(Debug, Clone)]
pub struct NonlinearOutcome {
    pub state: AssignmentState,
    pub tangent: TangentField,
    pub labels: Vec<usize>,
    pub steps: usize,
    pub entropy: f64,
}

/// Sequence of linearized flows approximating the nonlinear assignment flow.
///
/// Starting at `W = 1`, `V = 0`, each step re-linearizes at the current `W`,
/// adds `h_k φ(h_k A) Π0 S(W)` to `V` and sets `W = Exp_1(V)`. Stops after all
/// steps or once the mean row entropy of `W` drops below `eps`.
pub fn integrate_nonlinear(
    graph: &GridGraph,
    omega: &WeightField,
    dist: &DistanceField,
    step_sizes: &[f64],
    m: usize,
    eps: f64,
) -> Result<NonlinearOutcome> {
    if step_sizes.is_empty() {
        return Err(Error::Config("at least one step size is required".into()));
    }
    let c = dist.n_labels();
    let n = graph.n_pixels() * c;
    let mut w = AssignmentState::barycenter(graph.n_pixels(), c);
    let mut v = vec![0.0; n];
    let mut steps = 0;
    for &h in step_sizes {
        let op = FlowOperator::at_state(graph, omega, dist, w)?;
        let dv = solve_affine(&op, op.b(), h, m)?;
        if !dv.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("nonlinear flow increment"));
        }
        axpy(1.0, &dv, &mut v);
        w = exp_at_barycenter(&v, c);
        steps += 1;
        if w.mean_entropy() < eps {
            break;
        }
    }
    let entropy = w.mean_entropy();
    let tangent = TangentField::from_vec_unchecked(c, v);
    let labels = argmax_rows(w.as_slice(), c);
    Ok(NonlinearOutcome { state: w, tangent, labels, steps, entropy })
}

/// `Exp_1(V)` row-wise, i.e. `softmax(c V)`.
pub fn exp_at_barycenter(v: &[f64], n_labels: usize) -> AssignmentState {
    let c = n_labels as f64;
    let mut out = vec![0.0; v.len()];
    let mut z = vec![0.0; n_labels];
    for (o, vi) in out.chunks_mut(n_labels).zip(v.chunks(n_labels)) {
        for (zj, x) in z.iter_mut().zip(vi) {
            *zj = c * x;
        }
        softmax_into(&z, o);
    }
    AssignmentState::from_raw(n_labels, out)
}
