#![allow(dead_code, clippy::needless_range_loop)]

use fmo::fem2d::{build_instance, Edge, LoadSpec, MeshSpec, NodeSelector};
use fmo::{Element, LocalOperator, MaterialState, ProblemInstance, SymBlock};
use fmo_oracle::{jacobi_eigen, recompose, DenseOp, Mat};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn dense_ops(inst: &ProblemInstance) -> Vec<DenseOp> {
    let k = inst.k;
    let mut out = Vec::new();
    for (i, el) in inst.elements.iter().enumerate() {
        for op in &el.operators {
            let mut rows = vec![vec![0.0; inst.n]; k];
            for (r, row) in rows.iter_mut().enumerate() {
                for (c, &col) in op.cols.iter().enumerate() {
                    row[col] = op.value(r, c);
                }
            }
            out.push(DenseOp { element: i, rows });
        }
    }
    out
}

pub fn block_mat(b: &SymBlock) -> Mat {
    let k = b.order();
    (0..k).map(|i| (0..k).map(|j| b.get(i, j)).collect()).collect()
}

pub fn mat_block(m: &Mat) -> SymBlock {
    let k = m.len();
    let mut b = SymBlock::zeros(k);
    for i in 0..k {
        for j in i..k {
            b.set(i, j, 0.5 * (m[i][j] + m[j][i]));
        }
    }
    b
}

pub fn state_mats(e: &MaterialState) -> Vec<Mat> {
    e.blocks.iter().map(block_mat).collect()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Mat {
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = rng.gen_range(-scale..scale);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Uniformly random eigenbasis with eigenvalues `r + gaps`, trace strictly
/// inside `(rho_l, rho_u)` and `lambda_min > r`.
pub fn random_feasible_block(rng: &mut ChaCha8Rng, k: usize, rho_l: f64, rho_u: f64, r: f64) -> SymBlock {
    let (_, q) = jacobi_eigen(&random_symmetric(rng, k, 1.0));
    let target = rng.gen_range(rho_l + 0.05 * (rho_u - rho_l)..rho_u - 0.05 * (rho_u - rho_l));
    let excess = target - k as f64 * r;
    let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= excess / total);
    let d: Vec<f64> = weights.iter().map(|w| r + w).collect();
    mat_block(&recompose(&q, &d))
}

pub fn random_feasible_state(rng: &mut ChaCha8Rng, inst: &ProblemInstance) -> MaterialState {
    MaterialState::new(
        (0..inst.m())
            .map(|i| random_feasible_block(rng, inst.k, inst.rho_l[i], inst.rho_u[i], inst.r))
            .collect(),
    )
}

/// Random instance whose operators each touch a random subset of columns.
pub fn random_instance(rng: &mut ChaCha8Rng, m: usize, k: usize, n: usize, loads: usize, nig: usize) -> ProblemInstance {
    let elements = (0..m)
        .map(|_| Element {
            operators: (0..nig)
                .map(|_| {
                    let width = rng.gen_range(1..=n.min(2 * k + 2));
                    let mut cols: Vec<usize> = (0..n).collect();
                    for i in 0..width {
                        let j = rng.gen_range(i..n);
                        cols.swap(i, j);
                    }
                    let mut cols = cols[..width].to_vec();
                    cols.sort_unstable();
                    let vals = (0..k * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    LocalOperator::new(k, cols, vals).unwrap()
                })
                .collect(),
        })
        .collect();
    let kr = k as f64 * 0.1;
    ProblemInstance {
        k,
        n,
        elements,
        loads: (0..loads).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        rho_l: vec![kr + 0.5; m],
        rho_u: vec![kr + 3.0; m],
        r: 0.1,
        gamma: 2.0,
        eta: 3.0,
        nu: 1.0,
    }
}

/// Cantilever with `loads` load cases (second case pushes the top-right corner sideways).
pub fn cantilever(nx: usize, ny: usize, loads: usize, gamma: f64, eta: f64, nu: f64) -> ProblemInstance {
    let mut spec = MeshSpec::cantilever(nx, ny, nx as f64, ny as f64);
    if loads > 1 {
        spec.loads.push(LoadSpec {
            nodes: NodeSelector::Node { ix: nx, iy: ny },
            force: [1.0, 0.0],
        });
    }
    assert_eq!(spec.fixed_edge, Edge::Left);
    build_instance(&spec, 0.3, 1.0, 0.01, gamma, eta, nu).unwrap()
}
