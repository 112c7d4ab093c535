use super::*;
use crate::linalg::{Mat, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// A small problem mixing every variable kind and a block LMI.
fn sample_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Problem::new();
    let w = p.symmetric("W", 3);
    let g = p.rectangular("G", 3, 3);
    let k = p.rectangular("K", 1, 3);
    let s = p.scalar("s");
    let d = p.symmetric_block_diag("D", &[2, 1]);
    let a = random_mat(&mut rng, 3, 3);
    let b = random_mat(&mut rng, 3, 1);
    let mut blk = BlockLmi::new(&[3, 3, 1]);
    let gg = MatExpr::var(g) + MatExpr::var(g).transpose() - MatExpr::var(w);
    blk.set(0, 0, -gg);
    blk.set(1, 0, MatExpr::var(g).lmul(&a) + MatExpr::var(k).lmul(&b));
    blk.set(1, 1, -MatExpr::var(w) + MatExpr::var(d));
    blk.set(2, 2, MatExpr::scaled(s, Mat::from_element(1, 1, -1.0)));
    blk.set(0, 2, MatExpr::var(k).transpose());
    p.add_block("main", blk, 1e-7);
    p.add_psd("w pd", MatExpr::var(w), 0.0);
    p.minimize_trace(MatExpr::var(s), 1.0);
    p.minimize_neg_logdet(MatExpr::var(w), 0.5);
    p
}

#[test]
fn symmetric_variable_triangle_count() {
    let mut p = Problem::new();
    let v = p.symmetric("P", 2);
    p.add_lmi("c", MatExpr::var(v), 0.0);
    assert_eq!(p.compile().unwrap().n, 3);
    let mut p = Problem::new();
    let v = p.symmetric_block_diag("Psi", &[2, 2]);
    p.add_lmi("c", MatExpr::var(v), 0.0);
    assert_eq!(p.compile().unwrap().n, 6);
}

#[test]
fn duplicate_and_unreferenced_variables_are_rejected() {
    let mut p = Problem::new();
    let a = p.scalar("a");
    let b = p.scalar("a");
    p.add_lmi("c", MatExpr::var(a) + MatExpr::var(b), 0.0);
    assert_eq!(p.compile(), Err(LmiError::DuplicateVariable("a".into())));
    let mut p = Problem::new();
    let a = p.scalar("a");
    p.scalar("lonely");
    p.add_lmi("c", MatExpr::var(a), 0.0);
    assert_eq!(p.compile(), Err(LmiError::UnreferencedVariable("lonely".into())));
}

#[test]
fn nonlinear_product_is_rejected() {
    let mut p = Problem::new();
    let a = p.rectangular("A", 2, 2);
    let b = p.rectangular("B", 2, 2);
    assert_eq!(MatExpr::var(a).try_mul(MatExpr::var(b)), Err(LmiError::Nonlinear));
    let c = MatExpr::constant(Mat::identity(2, 2) * 3.0);
    let prod = MatExpr::var(a).try_mul(c).unwrap();
    let vals = alloc::vec![Mat::identity(2, 2), Mat::zeros(2, 2)];
    assert_eq!(prod.evaluate(&vals), Mat::identity(2, 2) * 3.0);
}

#[test]
fn asymmetric_constraint_is_rejected() {
    let mut p = Problem::new();
    let g = p.rectangular("G", 2, 2);
    p.add_lmi("bad", MatExpr::var(g), 0.0);
    assert!(matches!(p.compile(), Err(LmiError::NotSymmetric { .. })));
}

#[test]
fn zero_assignment_gives_constant_block() {
    let p = sample_problem(3);
    let cp = p.compile().unwrap();
    let x = Vector::zeros(cp.n);
    assert_eq!(cp.constraint_value(0, &x), cp.constraints[0].map.f0);
    let zeros: alloc::vec::Vec<Mat> = cp.unpack(&x);
    assert_eq!(p.eval_constraint(0, &zeros), Mat::zeros(7, 7));
}

#[test]
fn identity_coefficients_give_the_variable() {
    let mut p = Problem::new();
    let w = p.symmetric("W", 3);
    p.add_lmi("c", MatExpr::var(w), 0.0);
    let cp = p.compile().unwrap();
    let val = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
    let x = cp.pack(std::slice::from_ref(&val));
    assert!(linalg::max_abs(&(cp.constraint_value(0, &x) - &val)) < 1e-15);
}

#[test]
fn flat_inner_product_matches_trace_inner_product() {
    let mut p = Problem::new();
    let w = p.symmetric("W", 3);
    p.add_lmi("c", MatExpr::var(w), 0.0);
    let cp = p.compile().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = linalg::symmetrize(&random_mat(&mut rng, 3, 3));
    let b = linalg::symmetrize(&random_mat(&mut rng, 3, 3));
    let xa = cp.pack(std::slice::from_ref(&a));
    let xb = cp.pack(std::slice::from_ref(&b));
    assert!((xa.dot(&xb) - (a * b).trace()).abs() < 1e-14);
}

#[test]
fn trace_objective_coefficients() {
    let mut p = Problem::new();
    let w = p.symmetric("W", 2);
    let s = p.scalar("s");
    p.add_lmi("c", MatExpr::var(w) + MatExpr::scaled(s, Mat::identity(2, 2)), 0.0);
    p.minimize_trace(MatExpr::var(w), 2.0);
    p.minimize_trace(MatExpr::var(s), 1.0);
    let cp = p.compile().unwrap();
    let x = cp.pack(&[Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]), Mat::from_element(1, 1, 5.0)]);
    assert!((cp.linear_objective(&x) - 11.0).abs() < 1e-14);
}

#[test]
fn assembled_block_is_transpose_invariant() {
    let p = sample_problem(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let vals: alloc::vec::Vec<Mat> = p.vars().iter().map(|v| random_mat(&mut rng, v.rows, v.cols)).collect();
    let e = p.constraints()[0].expr.clone();
    let m = e.clone().evaluate(&vals);
    let mt = e.transpose().evaluate(&vals);
    assert!(linalg::max_abs(&(m - mt)) < 1e-14);
}

#[test]
fn dump_lists_upper_triangle_entries() {
    let mut p = Problem::new();
    let x = p.scalar("x");
    let m = MatExpr::constant(Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])) - MatExpr::scaled(x, Mat::identity(2, 2));
    p.add_lmi("psd", m, 0.0);
    p.minimize_trace(MatExpr::var(x), 1.0);
    let d = p.compile().unwrap().dump();
    let lines: alloc::vec::Vec<&str> = d.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines, ["1 0 1 0 1e0", "1 0 0 1 -1e0", "1 1 1 1 -1e0", "c 1 1e0"]);
}

#[test]
fn schur_examples() {
    let a = schur_check(&Mat::from_diagonal(&Vector::from_vec(alloc::vec![-1.0, -1.0])), 1).unwrap();
    assert!(a.agree() && a.full_nsd);
    let b = schur_check(&Mat::from_diagonal(&Vector::from_vec(alloc::vec![1.0, -1.0])), 1).unwrap();
    assert!(b.agree() && !b.full_nsd);
    let c = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
    assert_eq!(schur_check(&c, 1), Err(LmiError::SingularBlock));
}

#[test]
fn schur_agrees_on_random_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for sample in 0..1000 {
        let r = random_mat(&mut rng, 6, 6);
        let mut m = linalg::symmetrize(&r) * 2.0;
        let sign = if sample % 2 == 0 { -1.0 } else { 1.0 };
        let q = random_mat(&mut rng, 3, 3);
        let c = (&q * q.transpose() + Mat::identity(3, 3) * 0.1) * sign;
        m.view_mut((3, 3), (3, 3)).copy_from(&c);
        if sample % 4 == 0 {
            let shift = linalg::max_eig(&m) + 0.5;
            for i in 0..3 {
                m[(i, i)] -= shift;
            }
        }
        let res = schur_check(&m, 3).unwrap();
        assert!(res.agree(), "sample {sample}: {res:?}");
    }
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(seed in 0u64..500) {
        let cp = sample_problem(seed).compile().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let x = Vector::from_fn(cp.n, |_, _| rng.gen_range(-2.0..2.0));
        let back = cp.pack(&cp.unpack(&x));
        prop_assert!((back - x).amax() < 1e-15);
    }

    #[test]
    fn symbolic_and_affine_evaluation_agree(seed in 0u64..500) {
        let p = sample_problem(seed);
        let cp = p.compile().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = Vector::from_fn(cp.n, |_, _| rng.gen_range(-2.0..2.0));
        let vals = cp.unpack(&x);
        for j in 0..cp.constraints.len() {
            let a = cp.constraint_value(j, &x);
            let b = p.eval_constraint(j, &vals);
            prop_assert!(linalg::max_abs(&(&a - &b)) < 1e-12);
            prop_assert!(linalg::max_abs(&(&a - a.transpose())) <= 1e-12);
            prop_assert!(linalg::max_abs(&(&b - b.transpose())) <= 1e-12);
        }
    }
}
