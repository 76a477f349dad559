mod common;

use common::*;
use fmo::fem2d::reference_compliance;
use fmo::penalty::{penalty_grad_e, penalty_value, PenaltyState};
use fmo::saddle::subgradients;
use fmo::{DualState, FlopCounter, MaterialState, ProblemInstance, Reduction, SymBlock};
use fmo_oracle::fd_check;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_dual(g: &mut ChaCha8Rng, inst: &ProblemInstance) -> DualState {
    DualState {
        vectors: (0..inst.num_loads())
            .map(|_| (0..inst.n).map(|_| g.gen_range(-1.0..1.0)).collect())
            .collect(),
    }
}

fn packed(e: &MaterialState) -> Vec<f64> {
    e.blocks.iter().flat_map(|b| b.packed().to_vec()).collect()
}

fn unpack(k: usize, v: &[f64]) -> MaterialState {
    let p = k * (k + 1) / 2;
    MaterialState::new(v.chunks(p).map(|c| SymBlock::from_packed(k, c.to_vec()).unwrap()).collect())
}

/// Cap at a fraction of the compliance of a reference state, so every load is strictly violated.
fn violated_instance(g: &mut ChaCha8Rng) -> (ProblemInstance, MaterialState) {
    let mut inst = cantilever(3, 2, 2, 1.0, 2.0, 4.0);
    let e = random_feasible_state(g, &inst);
    let c = reference_compliance(&inst, &e, 1000).unwrap();
    inst.gamma = 0.5 * c.iter().cloned().fold(f64::INFINITY, f64::min);
    (inst, e)
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let mut g = rng(51);
    for _ in 0..20 {
        let (inst, e) = violated_instance(&mut g);
        let x = random_dual(&mut g, &inst);
        let st = PenaltyState::new(&inst, &e, 1000, None).unwrap();
        assert_eq!(st.violated.len(), 2);
        let grad = penalty_grad_e(&inst, &e, &x, 1000).unwrap();
        let d = MaterialState::new((0..inst.m()).map(|_| mat_block(&random_symmetric(&mut g, 3, 1.0))).collect());
        let f = |v: &[f64]| penalty_value(&inst, &unpack(3, v), &x, 1000).unwrap();
        let err = fd_check(&f, &packed(&e), &packed(&d), grad.frob_dot(&d));
        assert!(err <= 1e-5, "{err}");
        for b in &grad.blocks {
            assert!(fmo::penalty::max_asymmetry(b) <= 1e-12);
        }
    }
}

#[test]
fn dual_gradient_is_unchanged_by_penalty() {
    let mut g = rng(52);
    let (inst, e) = violated_instance(&mut g);
    let x = random_dual(&mut g, &inst);
    let gx = subgradients(&inst, &e, &x, &FlopCounter::new(), Reduction::Ordered).unwrap().g_x;
    let d = random_dual(&mut g, &inst);
    let n = inst.n;
    let analytic: f64 = gx.vectors.iter().zip(&d.vectors).map(|(a, b)| fmo_oracle::dot(a, b)).sum();
    let f = |v: &[f64]| {
        let xs = DualState {
            vectors: v.chunks(n).map(|c| c.to_vec()).collect(),
        };
        penalty_value(&inst, &e, &xs, 1000).unwrap()
    };
    let err = fd_check(&f, &x.vectors.concat(), &d.vectors.concat(), analytic);
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn penalty_term_is_convex_on_segments() {
    let mut g = rng(53);
    let (inst, _) = violated_instance(&mut g);
    let term = |e: &MaterialState| PenaltyState::new(&inst, e, 1000, None).unwrap().penalty_term(&inst);
    for _ in 0..100 {
        let a = random_feasible_state(&mut g, &inst);
        let b = random_feasible_state(&mut g, &inst);
        let mut mid = a.clone();
        mid.add_scaled(1.0, &b);
        mid.scale(0.5);
        assert!(term(&mid) <= 0.5 * (term(&a) + term(&b)) + 1e-9);
    }
}

#[test]
fn zero_weight_is_plain_lagrangian() {
    let mut g = rng(54);
    let (mut inst, e) = violated_instance(&mut g);
    inst.nu = 0.0;
    let x = random_dual(&mut g, &inst);
    let f = fmo::saddle::lagrangian_value(&inst, &e, &x, &FlopCounter::new()).unwrap();
    assert_eq!(penalty_value(&inst, &e, &x, 1000).unwrap(), f);
}
