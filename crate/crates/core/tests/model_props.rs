mod common;

use common::*;
use fmo::diagnostics::lambda_min_btb;
use fmo::{apply_a, apply_a_with, feasible_e, quad_a, FlopCounter, MaterialState, Reduction, SymBlock};
use fmo_oracle::{dense_stiffness, jacobi_eigen, matvec};
use proptest::prelude::*;
use rand::Rng;

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().map(|v| v.abs()).fold(1e-300, f64::max);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

#[test]
fn apply_matches_dense_assembly() {
    let mut g = rng(1);
    for _ in 0..50 {
        let (m, k) = (g.gen_range(1..6), [2, 3, 6][g.gen_range(0..3)]);
        let n = g.gen_range(k..3 * k + 4);
        let nig = g.gen_range(1..5);
        let inst = random_instance(&mut g, m, k, n, 1, nig);
        let e = random_feasible_state(&mut g, &inst);
        let v: Vec<f64> = (0..n).map(|_| g.gen_range(-1.0..1.0)).collect();
        let a = dense_stiffness(n, &dense_ops(&inst), &state_mats(&e));
        let expect = matvec(&a, &v);
        let got = apply_a(&inst, &e, &v, &FlopCounter::new()).unwrap();
        assert!(rel_close(&got, &expect, 1e-12));
        let par = apply_a_with(&inst, &e, &v, &FlopCounter::new(), Reduction::Parallel).unwrap();
        assert!(rel_close(&par, &expect, 1e-12));
        let q = quad_a(&inst, &e, &v, &FlopCounter::new()).unwrap();
        let qe = fmo_oracle::dot(&expect, &v);
        assert!((q - qe).abs() <= 1e-12 * qe.abs().max(1.0));
    }
}

#[test]
fn quad_bounded_below_by_floor_times_btb() {
    let mut g = rng(2);
    for _ in 0..30 {
        let inst = random_instance(&mut g, 4, 3, 6, 1, 3);
        let (lmin, deficient) = lambda_min_btb(&inst);
        let e = random_feasible_state(&mut g, &inst);
        let v: Vec<f64> = (0..inst.n).map(|_| g.gen_range(-1.0..1.0)).collect();
        let q = quad_a(&inst, &e, &v, &FlopCounter::new()).unwrap();
        let vv = fmo_oracle::dot(&v, &v);
        if !deficient {
            assert!(q >= inst.r * lmin * vv * (1.0 - 1e-10));
        }
        assert!(q >= 0.0);
    }
}

#[test]
fn flop_count_matches_model() {
    let inst = cantilever(6, 3, 1, 1.0, 1.0, 0.0);
    let e = MaterialState::uniform(inst.m(), SymBlock::identity(3));
    let v = vec![0.5; inst.n];
    let f = FlopCounter::new();
    apply_a(&inst, &e, &v, &f).unwrap();
    let k = inst.k as f64;
    let model: f64 = inst
        .elements
        .iter()
        .flat_map(|el| &el.operators)
        .map(|op| 4.0 * k * op.cols.len() as f64 + 2.0 * k * k)
        .sum();
    let counted = f.sparse() as f64;
    assert!((counted - model).abs() <= 0.1 * model, "{counted} vs {model}");
    let dense = (inst.nig() * inst.m()) as f64 * (4.0 * k * inst.n as f64 + 2.0 * k * k);
    assert_eq!(f.dense_model() as f64, dense);
}

#[test]
fn random_interior_blocks_are_feasible() {
    let mut g = rng(3);
    let inst = random_instance(&mut g, 20, 3, 6, 1, 1);
    for _ in 0..20 {
        let e = random_feasible_state(&mut g, &inst);
        let rep = feasible_e(&inst, &e).unwrap();
        let by_oracle = e.blocks.iter().enumerate().all(|(i, b)| {
            let (vals, _) = jacobi_eigen(&block_mat(b));
            let tr: f64 = vals.iter().sum();
            vals[0] >= inst.r - 1e-9 && tr <= inst.rho_u[i] + 1e-9 && tr >= inst.rho_l[i] - 1e-9
        });
        assert_eq!(rep.feasible, by_oracle);
        assert!(rep.feasible);
    }
}

#[test]
fn mismatched_state_names_block() {
    let mut g = rng(4);
    let inst = random_instance(&mut g, 3, 3, 6, 1, 1);
    let mut e = random_feasible_state(&mut g, &inst);
    e.blocks[1] = SymBlock::identity(2);
    let err = feasible_e(&inst, &e).unwrap_err().to_string();
    assert!(err.contains("block 1"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn apply_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut g = rng(seed);
        let inst = random_instance(&mut g, 3, 3, 7, 1, 2);
        let e1 = random_feasible_state(&mut g, &inst);
        let e2 = random_feasible_state(&mut g, &inst);
        let u: Vec<f64> = (0..7).map(|_| g.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..7).map(|_| g.gen_range(-1.0..1.0)).collect();
        let f = FlopCounter::new();
        let au = apply_a(&inst, &e1, &u, &f).unwrap();
        let av = apply_a(&inst, &e1, &v, &f).unwrap();
        let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let lhs = apply_a(&inst, &e1, &comb, &f).unwrap();
        let rhs: Vec<f64> = au.iter().zip(&av).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(rel_close(&lhs, &rhs, 1e-12));

        let mut ec = e1.clone();
        ec.scale(a);
        ec.add_scaled(b, &e2);
        let lhs = apply_a(&inst, &ec, &u, &f).unwrap();
        let a2 = apply_a(&inst, &e2, &u, &f).unwrap();
        let rhs: Vec<f64> = au.iter().zip(&a2).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(rel_close(&lhs, &rhs, 1e-12));
    }
}
