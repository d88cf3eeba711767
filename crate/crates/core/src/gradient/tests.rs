use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{augmented_dense, quadrature_gradient};
use super::*;
use crate::flow::DistanceField;
use crate::graph::GridGraph;
use crate::krylov::{expm_dense, kron_sum, phi_action_dense, phi_apply_dense, vec_r, LinearOperator, ZeroOperator};
use crate::manifold::softmax_into;
use crate::vecops::sub;

struct Instance {
    op: FlowOperator,
    vstar: TangentField,
}

fn instance(seed: u64, h: usize, w: usize, c: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GridGraph::new(h, w, 1).unwrap();
    let omega = WeightField::random(&g, &mut rng, 1.0);
    let n = h * w;
    let d = DistanceField::new(c, (0..n * c).map(|_| rng.random_range(0.0..1.5)).collect(), 1.0).unwrap();
    let op = FlowOperator::new(&g, &omega, &d).unwrap();
    let mut vs = vec![0.0; n * c];
    for row in vs.chunks_mut(c) {
        row[rng.random_range(0..c)] = 1.0;
    }
    Instance { op, vstar: TangentField::projected(c, vs) }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(b).max(1e-300)
}

#[test]
fn loss_examples() {
    let vs = TangentField::projected(2, vec![1.0, 0.0, 0.0, 1.0]);
    let scaled = TangentField::from_vec_unchecked(2, vs.as_slice().iter().map(|x| 3.0 * x).collect());
    assert!(loss_distance(&scaled, &vs).abs() < 1e-15);
    let neg = TangentField::from_vec_unchecked(2, vs.as_slice().iter().map(|x| -x).collect());
    assert!((loss_distance(&neg, &vs) - 2.0).abs() < 1e-15);
    let orth = TangentField::projected(2, vec![1.0, 0.0, 1.0, 0.0]);
    assert!((loss_distance(&orth, &vs) - 1.0).abs() < 1e-15);
    assert_eq!(loss_distance(&TangentField::zeros(2, 2), &vs), 1.0);
    assert!(loss_distance_grad(&TangentField::zeros(2, 2), &vs).is_err());
}

#[test]
fn loss_grad_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vs = TangentField::projected(3, random_vec(&mut rng, 12));
    let g = loss_distance_grad(&vs, &vs).unwrap();
    assert!(norm(g.as_slice()) < 1e-15);
    let v = TangentField::projected(3, random_vec(&mut rng, 12));
    let g = loss_distance_grad(&v, &vs).unwrap();
    let v2 = TangentField::from_vec_unchecked(3, v.as_slice().iter().map(|x| 2.5 * x).collect());
    let g2 = loss_distance_grad(&v2, &vs).unwrap();
    assert!(rel(&crate::vecops::scaled(2.5, g2.as_slice()), g.as_slice()) < 1e-13);
    // central differences along tangent directions
    let h = 1e-6;
    for _ in 0..5 {
        let d = TangentField::projected(3, random_vec(&mut rng, 12));
        let plus: Vec<f64> = v.as_slice().iter().zip(d.as_slice()).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = v.as_slice().iter().zip(d.as_slice()).map(|(a, b)| a - h * b).collect();
        let fd = (loss_distance_slice(&plus, vs.as_slice()) - loss_distance_slice(&minus, vs.as_slice())) / (2.0 * h);
        assert!((fd - dot(g.as_slice(), d.as_slice())).abs() < 1e-6);
    }
}

#[test]
fn regularizer_examples() {
    let g = GridGraph::new(2, 2, 1).unwrap();
    let u = WeightField::uniform(&g);
    assert!(regularizer(&u, 0.7).abs() < 1e-28);
    assert!(regularizer_grad(&u, 0.7).norm() < 1e-13);
    let toy = WeightField::from_vec(2, vec![0.8, 0.2]).unwrap();
    let r = regularizer(&toy, 1.0);
    let ln2 = 2f64.ln();
    assert!((r - ln2 * ln2).abs() < 1e-15);
    assert!((r - 0.4805).abs() < 1e-4);
    assert!((regularizer(&toy, 2.0) - 2.0 * r).abs() < 1e-15);
}

#[test]
fn regularizer_grad_pairs_with_differential() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = GridGraph::new(3, 3, 1).unwrap();
    let omega = WeightField::random(&g, &mut rng, 1.0);
    let tau = 0.3;
    let grad = regularizer_grad(&omega, tau);
    for _ in 0..5 {
        let mut y = random_vec(&mut rng, 81);
        for patch in y.chunks_mut(9) {
            center_in_place(patch);
        }
        // τ Σ_i <t_i, Y_i / Ω_i>
        let mut expect = 0.0;
        for i in 0..9 {
            let mut t = vec![0.0; 9];
            for (tp, w) in t.iter_mut().zip(omega.patch(i)) {
                *tp = w.ln();
            }
            center_in_place(&mut t);
            for p in 0..9 {
                expect += tau * t[p] * y[i * 9 + p] / omega.patch(i)[p];
            }
        }
        assert!((grad.dot(&y) - expect).abs() < 1e-10);
        let h = 1e-6;
        let shift = |s: f64| {
            let data: Vec<f64> = omega.as_slice().iter().zip(&y).map(|(w, d)| w + s * h * d * 0.01).collect();
            regularizer(&WeightField::from_vec(9, data).unwrap(), tau)
        };
        let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h * 0.01);
        assert!((fd - expect).abs() < 1e-6 * (1.0 + expect.abs()));
    }
}

#[test]
fn b1_on_zero_stub_and_dense_oracle() {
    let g = vec![0.5, -0.5, 0.25, -0.25];
    let b = vec![0.1, -0.1, 0.3, -0.3];
    let t = 2.0;
    let v_t: Vec<f64> = b.iter().map(|x| t * x).collect();
    let b1 = assemble_b1_with(&ZeroOperator(4), &v_t, &g, t, 4).unwrap();
    assert!(rel(&b1[..4], &g) < 1e-15);
    assert!((b1[4] - t * dot(&b, &g)).abs() < 1e-15);

    let inst = instance(3, 2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_vec(&mut rng, 8);
    let v = random_vec(&mut rng, 8);
    let b1 = assemble_b1(&inst.op, &v, &g, 5.0, 8).unwrap();
    let e = expm_dense(&(inst.op.to_dense() * 5.0)).unwrap();
    let expect = e.transpose() * DVector::from_column_slice(&g);
    assert!(rel(&b1[..8], expect.as_slice()) < 1e-9);
    // linear in g
    let b1b = assemble_b1(&inst.op, &v, &crate::vecops::scaled(-3.0, &g), 5.0, 8).unwrap();
    assert!(rel(&b1b, &crate::vecops::scaled(-3.0, &b1)) < 1e-12);
    assert!(assemble_b1(&inst.op, &v, &[0.0; 8], 5.0, 8).is_err());
}

#[test]
fn augmented_operator_structure() {
    let inst = instance(4, 2, 3, 3);
    let aug = AugmentedOperator::new(&inst.op, 1.7);
    let dense = augmented_dense(&inst.op, 1.7);
    assert!((aug.to_dense() - &dense).amax() < 1e-13);
    assert!((aug.transposed().to_dense() - dense.transpose()).amax() < 1e-13);
    assert!((aug.neg_transposed().to_dense() + dense.transpose()).amax() < 1e-13);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_vec(&mut rng, 19);
    assert_eq!(aug.apply_vec(&x)[18], 0.0);
}

fn dense_core(op: &FlowOperator, b1: &[f64], t: f64) -> DMatrix<f64> {
    let k = b1.len();
    let aug = augmented_dense(op, t);
    let ks = kron_sum(&(-aug.transpose()), &aug);
    let mut e = DVector::<f64>::zeros(k);
    e[k - 1] = 1.0;
    let rhs = DVector::from_column_slice(b1).kronecker(&e);
    let (_, col) = phi_apply_dense(&ks, &rhs).unwrap();
    DMatrix::from_row_slice(k, k, col.as_slice())
}

#[test]
fn benzi_single_dimension() {
    let inst = instance(5, 2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b1 = random_vec(&mut rng, 9);
    let aug = AugmentedOperator::new(&inst.op, 2.0);
    let f = benzi_factors(&aug, &b1, 1).unwrap();
    assert_eq!(f.sigmas.len(), 1);
    let q1: Vec<f64> = b1.iter().map(|v| v / norm(&b1)).collect();
    let t11 = dot(&q1, &aug.neg_transposed().apply_vec(&q1));
    let phi = (t11.exp() - 1.0) / t11;
    let mut e = DVector::<f64>::zeros(9);
    e[8] = 1.0;
    let expect = DVector::from_column_slice(&b1) * e.transpose() * phi;
    assert!((f.reconstruct(RankMode::Full) - expect).amax() < 1e-12);
}

#[test]
fn benzi_full_dimension_matches_dense_kronecker() {
    for (seed, c) in [(6, 2), (7, 3)] {
        let inst = instance(seed, 2, 2, c);
        let k = 4 * c + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = random_vec(&mut rng, k);
        let aug = AugmentedOperator::new(&inst.op, 3.0);
        let f = benzi_factors(&aug, &b1, k).unwrap();
        let dense = dense_core(&inst.op, &b1, 3.0);
        let full = f.reconstruct(RankMode::Full);
        assert!((&full - &dense).amax() < 1e-9 * dense.amax());
        assert!(f.sigmas.windows(2).all(|s| s[0] >= s[1]));
        assert!(f.u.iter().chain(&f.w).all(|v| norm(v) <= 1.0 + 1e-10));
        // truncation error of the rank-one part in the spectral norm
        let r1 = f.reconstruct(RankMode::RankOne);
        let err = (&full - r1).svd(false, false).singular_values.max();
        let whole = full.svd(false, false).singular_values.max();
        assert!(err / whole <= f.sigma_ratio() + 1e-10);
    }
}

#[test]
fn zero_factors_give_zero_gradient() {
    let inst = instance(8, 3, 3, 2);
    let k = inst.op.dim_n() + 1;
    let f = GradientFactors { c: 0.0, sigmas: vec![1.0], u: vec![vec![1.0; k]], w: vec![vec![1.0; k]], m_eff: (1, 1) };
    let g = apply_da_transpose(&inst.op, &f, RankMode::RankOne, 5.0, true);
    assert!(g.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn second_summand_pairs_with_dense_flow() {
    let inst = instance(9, 2, 2, 3);
    let op = &inst.op;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_vec(&mut rng, 12);
    let t = 4.0;
    let grad = second_summand_grad(op, &g, t, 12).unwrap();
    let zero = second_summand_grad(op, &[0.0; 12], t, 12).unwrap();
    assert!(zero.norm() == 0.0);
    let a = op.to_dense();
    for _ in 0..3 {
        let y = random_vec(&mut rng, 36);
        let db = adjoint::df2_forward(op, &y);
        let flow = phi_action_dense(&a, &db, t).unwrap();
        assert!((grad.dot(&y) - dot(&g, &flow)).abs() < 1e-8 * (1.0 + dot(&g, &flow).abs()));
    }
    let g2 = second_summand_grad(op, &crate::vecops::scaled(2.0, &g), t, 12).unwrap();
    assert!(rel(g2.as_slice(), &crate::vecops::scaled(2.0, grad.as_slice())) < 1e-12);
}

#[test]
fn full_rank_gradient_matches_quadrature_in_both_modes() {
    let inst = instance(10, 2, 2, 3);
    let k = inst.op.dim_n() + 1;
    let exact = quadrature_gradient(&inst.op, &inst.vstar, 5.0, 0.1, 24).unwrap();
    for include in [true, false] {
        let cfg = GradientConfig { t: 5.0, m: k, tau: 0.1, rank: RankMode::Full, include_second_summand: include };
        let out = full_gradient(&inst.op, &inst.vstar, &cfg).unwrap();
        assert!(rel(out.euclidean.as_slice(), exact.as_slice()) < 1e-8, "include={include}");
    }
}

#[test]
fn perfect_fit_and_regularizer_limit() {
    let inst = instance(11, 3, 3, 2);
    let v = solve_linearized(&inst.op, 5.0, 10).unwrap();
    let cfg = GradientConfig { tau: 0.0, ..GradientConfig::default() };
    let out = full_gradient(&inst.op, &v, &cfg).unwrap();
    assert!(out.flow_loss.abs() < 1e-12);
    assert!(out.euclidean.norm() < 1e-9);
    let cfg = GradientConfig { tau: 0.4, ..GradientConfig::default() };
    let out = full_gradient(&inst.op, &v, &cfg).unwrap();
    let reg = regularizer_grad(inst.op.omega(), 0.4);
    assert!(rel(out.euclidean.as_slice(), reg.as_slice()) < 1e-8);
}

#[test]
fn riemannian_gradient_properties() {
    let inst = instance(12, 3, 3, 3);
    let omega = inst.op.omega();
    let constant = ParameterGradient::from_vec(9, vec![2.0; 81]);
    assert!(riemannian_gradient(&constant, omega).norm() < 1e-15);
    assert_eq!(riemannian_gradient(&ParameterGradient::zeros(9, 9), omega).norm(), 0.0);
    let out = full_gradient(&inst.op, &inst.vstar, &GradientConfig::default()).unwrap();
    for patch in out.riemannian.patches() {
        assert!(patch.iter().sum::<f64>().abs() < 1e-12);
    }
}

#[test]
fn tiny_riemannian_step_decreases_loss() {
    let inst = instance(13, 4, 4, 3);
    let cfg = GradientConfig { m: 49, rank: RankMode::Full, ..GradientConfig::default() };
    let out = full_gradient(&inst.op, &inst.vstar, &cfg).unwrap();
    let omega = inst.op.omega();
    let h = 1e-4;
    let mut data = vec![0.0; omega.as_slice().len()];
    for ((o, w), r) in data.chunks_mut(9).zip(omega.patches()).zip(out.riemannian.patches()) {
        let z: Vec<f64> = r.iter().map(|v| -h * v).collect();
        crate::manifold::lift_into(w, &z, o);
    }
    let stepped = WeightField::from_vec(9, data).unwrap();
    let op2 = FlowOperator::new(inst.op.graph(), &stepped, inst.op.dist()).unwrap();
    let after = full_gradient(&op2, &inst.vstar, &cfg).unwrap();
    assert!(after.loss < out.loss);
}

#[test]
fn rejects_non_barycentric_operator() {
    let inst = instance(14, 2, 2, 2);
    let mut w = vec![0.0; 8];
    for row in w.chunks_mut(2) {
        softmax_into(&[0.3, -0.2], row);
    }
    let st = crate::manifold::AssignmentState::new(2, w).unwrap();
    let op = FlowOperator::at_state(inst.op.graph(), inst.op.omega(), inst.op.dist(), st).unwrap();
    assert!(full_gradient(&op, &inst.vstar, &GradientConfig::default()).is_err());
}

#[test]
fn vec_r_helper_roundtrip() {
    let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(vec_r(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}
