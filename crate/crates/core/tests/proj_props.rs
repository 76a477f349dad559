mod common;

use common::*;
use fmo::proj::ls::{kkt_residual, reduce_ls, solve_box_trace_ls, solve_general_ls, BoxTraceLs, StandardLs};
use fmo::proj::spectral::{
    proj_sym_g, proj_sym_l, project_eigenvalues, project_spectral, update_case, SpectralProjection, UpdateCase,
};
use fmo::FmoError;
use fmo_oracle::random::{general_ls, spectral_bounds, standard_ls, symmetric};
use fmo_oracle::{frobenius_distance, jacobi_eigen, order_preserved, qp_reference, recompose, LsProblem, Mat};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn to_standard(p: &LsProblem) -> StandardLs {
    StandardLs {
        b: p.b.clone(),
        w: p.w.clone(),
        c_l: p.c_l,
        c_u: p.c_u,
    }
}

fn to_general(p: &LsProblem) -> BoxTraceLs {
    BoxTraceLs {
        a_diag: p.a.clone(),
        b: p.b.clone(),
        w: p.w.clone(),
        r_lb: p.r.clone(),
        c_l: p.c_l,
        c_u: p.c_u,
    }
}

fn to_dmatrix(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m.len(), |i, j| m[i][j])
}

fn from_dmatrix(m: &DMatrix<f64>) -> Mat {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

#[test]
fn standard_ls_matches_enumeration() {
    let mut g = rng(21);
    for _ in 0..2000 {
        let n = g.gen_range(1..=8);
        let p = standard_ls(&mut g, n);
        let reference = qp_reference(&p);
        match solve_box_trace_ls(&to_standard(&p)) {
            Ok(sol) => {
                let z_ref = reference.expect("oracle found the problem infeasible");
                for (a, b) in sol.z.iter().zip(&z_ref) {
                    assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{p:?}: {:?} vs {z_ref:?}", sol.z);
                }
                assert!(kkt_residual(&to_standard(&p), &sol) <= 1e-10);
                assert!(sol.lambda_l == 0.0 || sol.lambda_u == 0.0);
                let bound = (n * n + 14 * n + 1) as u64;
                assert!(sol.ops <= bound, "{} > {bound}", sol.ops);
            }
            Err(FmoError::InfeasibleLeastSquares(_)) => assert!(reference.is_none(), "{p:?}"),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn unit_weight_operation_bound() {
    let mut g = rng(22);
    for _ in 0..500 {
        let n = g.gen_range(1..=8);
        let mut p = standard_ls(&mut g, n);
        p.w = vec![1.0; n];
        if let Ok(sol) = solve_box_trace_ls(&to_standard(&p)) {
            assert!(sol.ops <= (n * n + 7 * n + 1) as u64);
        }
    }
}

#[test]
fn general_ls_matches_enumeration_objective() {
    let mut g = rng(23);
    for _ in 0..1000 {
        let n = g.gen_range(1..=6);
        let p = general_ls(&mut g, n);
        let reference = qp_reference(&p);
        match solve_general_ls(&to_general(&p)) {
            Ok(z) => {
                let z_ref = reference.expect("oracle found the problem infeasible");
                assert!(p.infeasibility(&z) <= 1e-10, "{p:?}: {z:?}");
                let (f, f_ref) = (p.objective(&z), p.objective(&z_ref));
                assert!(f <= f_ref + 1e-9 * (1.0 + f_ref), "{p:?}: {f} vs {f_ref}");
            }
            Err(FmoError::InfeasibleLeastSquares(_)) => assert!(reference.is_none(), "{p:?}"),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn negative_diagonal_case() {
    let p = LsProblem {
        a: vec![-2.0, 1.0],
        b: vec![1.0, 0.5],
        w: vec![1.0, 1.0],
        r: vec![0.0, 0.0],
        c_l: Some(1.0),
        c_u: Some(4.0),
    };
    let z = solve_general_ls(&to_general(&p)).unwrap();
    let z_ref = qp_reference(&p).unwrap();
    for (a, b) in z.iter().zip(&z_ref) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn standard_problem_is_unchanged() {
    let red = reduce_ls(&BoxTraceLs {
        a_diag: vec![1.0, 1.0],
        b: vec![0.7, -0.2],
        w: vec![1.0, 1.0],
        r_lb: vec![0.0, 0.0],
        c_l: Some(0.0),
        c_u: Some(3.0),
    })
    .unwrap();
    assert_eq!(red.standard.b, vec![0.7, -0.2]);
    assert_eq!(red.standard.w, vec![1.0, 1.0]);
    assert!(red.fixed().is_empty());
}

fn random_spectral(g: &mut rand_chacha::ChaCha8Rng) -> (Mat, f64, f64, f64) {
    let n = g.gen_range(2..=6);
    let u = symmetric(g, n, 3.0);
    let (c_l, c_u, r) = spectral_bounds(g, n, 3.0);
    (u, c_l, c_u, r)
}

#[test]
fn spectral_matches_reference() {
    let mut g = rng(24);
    for _ in 0..500 {
        let (u, c_l, c_u, r) = random_spectral(&mut g);
        let res = project_spectral(&SpectralProjection { u: to_dmatrix(&u), c_l, c_u, r }).unwrap();
        let (z_ref, lambda, omega) = fmo_oracle::spectral_kkt_reference(&u, c_l, c_u, r);
        assert!(frobenius_distance(&from_dmatrix(&res.z), &z_ref) <= 1e-9);
        assert!(order_preserved(&lambda, &omega, 1e-12));
        let again = project_spectral(&SpectralProjection { u: res.z.clone(), c_l, c_u, r }).unwrap();
        assert!((again.z - &res.z).norm() <= 1e-12 * (1.0 + res.z.norm()));
    }
}

#[test]
fn spectral_beats_feasible_samples() {
    let mut g = rng(25);
    for _ in 0..20 {
        let n = 5;
        let u = symmetric(&mut g, n, 2.0);
        let (c_l, c_u, r) = (1.0, 4.0, 0.1);
        let res = project_spectral(&SpectralProjection { u: to_dmatrix(&u), c_l, c_u, r }).unwrap();
        let best = frobenius_distance(&from_dmatrix(&res.z), &u);
        for _ in 0..2000 {
            let (_, q) = jacobi_eigen(&symmetric(&mut g, n, 1.0));
            let mut d: Vec<f64> = (0..n).map(|_| r + g.gen_range(0.0..1.0)).collect();
            let tr: f64 = d.iter().sum();
            let target = g.gen_range(c_l..c_u);
            let excess = tr - n as f64 * r;
            d.iter_mut().for_each(|v| *v = r + (*v - r) * (target - n as f64 * r) / excess);
            let sample = recompose(&q, &d);
            assert!(frobenius_distance(&sample, &u) >= best - 1e-12);
        }
    }
}

fn diag_s(g: &mut rand_chacha::ChaCha8Rng, lambda: &[f64]) -> Mat {
    let (_, q) = jacobi_eigen(&symmetric(g, lambda.len(), 1.0));
    recompose(&q, lambda)
}

#[test]
fn closed_form_updates_match_projection() {
    let mut g = rng(26);
    let mut counts = [0usize; 3];
    while counts[1] + counts[2] < 400 {
        let k = [2, 3, 6][g.gen_range(0..3)];
        let r = g.gen_range(0.0..0.5);
        let bt = g.gen_range(0.1..5.0);
        let rho_l = k as f64 * r + g.gen_range(0.0..3.0);
        let rho_u = rho_l + g.gen_range(0.0..3.0);
        let lambda: Vec<f64> = (0..k).map(|_| g.gen_range(-6.0..6.0)).collect();
        let case = update_case(&lambda, bt, rho_l, rho_u, r);
        let omega = match case {
            UpdateCase::Upper => {
                counts[1] += 1;
                proj_sym_l(&lambda, bt, rho_u, k, r).unwrap()
            }
            UpdateCase::Lower => {
                counts[2] += 1;
                proj_sym_g(&lambda, bt, rho_l, k, r).unwrap()
            }
            UpdateCase::Interior => {
                counts[0] += 1;
                continue;
            }
        };
        let shifted: Vec<f64> = lambda.iter().map(|l| r - l / bt).collect();
        let reference = project_eigenvalues(&shifted, rho_l, rho_u, r).unwrap();
        for (a, b) in omega.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-10, "{lambda:?} {bt} {rho_l} {rho_u} {r}: {omega:?} vs {reference:?}");
        }
        // matrix form: rI - S / bt with S = Q diag(lambda) Q^T
        let s = diag_s(&mut g, &lambda);
        let target: Mat = (0..k)
            .map(|i| (0..k).map(|j| if i == j { r } else { 0.0 } - s[i][j] / bt).collect())
            .collect();
        let proj = project_spectral(&SpectralProjection { u: to_dmatrix(&target), c_l: rho_l, c_u: rho_u, r }).unwrap();
        let blk = fmo::proj::spectral::update_block(&mat_block(&s), bt, rho_l, rho_u, r).unwrap();
        assert!(frobenius_distance(&block_mat(&blk), &from_dmatrix(&proj.z)) <= 1e-10 * (1.0 + proj.z.norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_is_firmly_anchored(seed in any::<u64>(), alpha in 0.01f64..1.0) {
        let mut g = rng(seed);
        let (u, c_l, c_u, r) = random_spectral(&mut g);
        let p = project_spectral(&SpectralProjection { u: to_dmatrix(&u), c_l, c_u, r }).unwrap();
        let mix = to_dmatrix(&u) * alpha + &p.z * (1.0 - alpha);
        let q = project_spectral(&SpectralProjection { u: mix, c_l, c_u, r }).unwrap();
        prop_assert!((q.z - &p.z).norm() <= 1e-9 * (1.0 + p.z.norm()));
    }

    #[test]
    fn descending_order_preserved(seed in any::<u64>()) {
        let mut g = rng(seed);
        let n = g.gen_range(2..=6);
        let mut lambda: Vec<f64> = (0..n).map(|_| g.gen_range(-4.0..4.0)).collect();
        lambda.sort_by(|a, b| b.total_cmp(a));
        let (c_l, c_u, r) = spectral_bounds(&mut g, n, 3.0);
        let omega = project_eigenvalues(&lambda, c_l, c_u, r).unwrap();
        prop_assert!(omega.windows(2).all(|w| w[0] >= w[1] - 1e-15));
        let tr: f64 = omega.iter().sum();
        prop_assert!(omega.iter().all(|&o| o >= r - 1e-9));
        if c_l.is_finite() { prop_assert!(tr >= c_l - 1e-9 * (1.0 + c_l.abs())); }
        if c_u.is_finite() { prop_assert!(tr <= c_u + 1e-9 * (1.0 + c_u.abs())); }
    }

    #[test]
    fn ls_kkt_residual_small(seed in any::<u64>()) {
        let mut g = rng(seed);
        let n = g.gen_range(1..=8);
        let p = to_standard(&standard_ls(&mut g, n));
        if let Ok(sol) = solve_box_trace_ls(&p) {
            prop_assert!(kkt_residual(&p, &sol) <= 1e-10);
        }
    }
}
