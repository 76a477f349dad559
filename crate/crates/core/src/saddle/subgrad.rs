//! Value and subgradients of
//! `F(E, x) = sum_i tr E_i + sum_j 2 (<f_j, x_j> - sqrt(gamma) <A(E) x_j, x_j>^{1/2})`.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{
    classify_quad, dot, quad_a_raw, DualState, FlopCounter, MaterialState, ProblemInstance,
    Reduction, SymBlock,
};

/// Relative threshold on `<A(E) x_j, x_j> / ||x_j||^2` for membership in `R`.
pub const R_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct Subgradients {
    pub g_e: MaterialState,
    pub g_x: DualState,
    /// `<A(E) x_j, x_j>` per load.
    pub quad: Vec<f64>,
    /// Membership of each load in `R`.
    pub in_r: Vec<bool>,
}

impl Subgradients {
    pub fn norm_e_sq(&self) -> f64 {
        self.g_e.frob_norm_sq()
    }

    pub fn norm_x_sq(&self) -> f64 {
        self.g_x.norm_sq()
    }
}

/// `<A(E) x_j, x_j>` for every load, checked against the corruption threshold.
pub fn quad_forms(
    instance: &ProblemInstance,
    e: &MaterialState,
    x: &DualState,
    flops: &FlopCounter,
) -> Result<Vec<f64>> {
    instance.check_material(e)?;
    instance.check_dual(x)?;
    x.vectors
        .iter()
        .map(|xj| classify_quad(instance, e, quad_a_raw(instance, e, xj, flops)))
        .collect()
}

pub fn in_r(quad: f64, x: &[f64]) -> bool {
    quad > R_THRESHOLD * dot(x, x)
}

/// `F(E, x)`.
pub fn lagrangian_value(
    instance: &ProblemInstance,
    e: &MaterialState,
    x: &DualState,
    flops: &FlopCounter,
) -> Result<f64> {
    let quad = quad_forms(instance, e, x, flops)?;
    let sg = instance.gamma.sqrt();
    let mut val = e.total_trace();
    for (j, xj) in x.vectors.iter().enumerate() {
        val += 2.0 * (dot(&instance.loads[j], xj) - sg * quad[j].max(0.0).sqrt());
    }
    Ok(val)
}

/// Per-element work of the fused loop for one load: accumulates
/// `coef * sum_l (B v)(B v)^T` into `q` and `B^T E B v` into `w`.
#[inline]
fn fused_element(
    k: usize,
    ops: &[crate::model::LocalOperator],
    block: &SymBlock,
    v: &[f64],
    coef: f64,
    q: &mut SymBlock,
    w: &mut [f64],
) {
    let mut bv = [0.0; 6];
    let mut p = [0.0; 6];
    for op in ops {
        op.apply_into(v, &mut bv[..k]);
        q.add_outer(coef, &bv[..k]);
        block.mul_vec_into(&bv[..k], &mut p[..k]);
        op.apply_transpose_add(&p[..k], w);
    }
}

fn fused_flops(instance: &ProblemInstance) -> (u64, u64) {
    let k = instance.k as u64;
    let n = instance.n as u64;
    let mut sparse = 0;
    let mut dense = 0;
    for el in &instance.elements {
        for op in &el.operators {
            sparse += 4 * k * op.width() as u64 + 3 * k * k + k;
            dense += 4 * k * n + 3 * k * k + k;
        }
    }
    (sparse, dense)
}

/// Both partial subgradients at `(E, x)` in one pass over the elements.
///
/// Loads outside `R` contribute nothing to `g_E` and get `g_x_j = 2 f_j`.
pub fn subgradients(
    instance: &ProblemInstance,
    e: &MaterialState,
    x: &DualState,
    flops: &FlopCounter,
    reduction: Reduction,
) -> Result<Subgradients> {
    let quad = quad_forms(instance, e, x, flops)?;
    let k = instance.k;
    let n = instance.n;
    let m = instance.m();
    let sg = instance.gamma.sqrt();
    let membership: Vec<bool> = quad
        .iter()
        .zip(&x.vectors)
        .map(|(&q, xj)| in_r(q, xj))
        .collect();

    let mut g_e = MaterialState::uniform(m, SymBlock::identity(k));
    let mut g_x = DualState::zeros(instance.num_loads(), n);
    let (fs, fd) = fused_flops(instance);
    for (j, xj) in x.vectors.iter().enumerate() {
        let gx = &mut g_x.vectors[j];
        for (g, f) in gx.iter_mut().zip(&instance.loads[j]) {
            *g = 2.0 * f;
        }
        if !membership[j] {
            log::debug!("load {j} outside R (quad = {:e}); using g_x = 2 f", quad[j]);
            continue;
        }
        let u = sg / quad[j].sqrt();
        let w = match reduction {
            Reduction::Ordered => {
                let mut w = vec![0.0; n];
                for ((el, block), g) in instance.elements.iter().zip(&e.blocks).zip(&mut g_e.blocks) {
                    fused_element(k, &el.operators, block, xj, -u, g, &mut w);
                }
                w
            }
            Reduction::Parallel => instance
                .elements
                .par_iter()
                .zip(e.blocks.par_iter())
                .zip(g_e.blocks.par_iter_mut())
                .fold(
                    || vec![0.0; n],
                    |mut w, ((el, block), g)| {
                        fused_element(k, &el.operators, block, xj, -u, g, &mut w);
                        w
                    },
                )
                .reduce(
                    || vec![0.0; n],
                    |mut a, b| {
                        for (p, q) in a.iter_mut().zip(&b) {
                            *p += q;
                        }
                        a
                    },
                ),
        };
        flops.add(fs, fd);
        for (g, wi) in gx.iter_mut().zip(&w) {
            *g -= 2.0 * u * wi;
        }
        flops.add_both(3 * n as u64);
    }
    Ok(Subgradients {
        g_e,
        g_x,
        quad,
        in_r: membership,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Element, LocalOperator};

    fn identity2() -> ProblemInstance {
        ProblemInstance {
            k: 2,
            n: 2,
            elements: vec![Element {
                operators: vec![LocalOperator::new(2, vec![0, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap()],
            }],
            loads: vec![vec![1.0, 0.0]],
            rho_l: vec![1.0],
            rho_u: vec![4.0],
            r: 0.5,
            gamma: 1.0,
            eta: 2.0,
            nu: 0.0,
        }
    }

    #[test]
    fn zero_dual_gives_identity_and_twice_load() {
        let inst = identity2();
        let e = MaterialState::uniform(1, SymBlock::identity(2));
        let x = DualState::zeros(1, 2);
        let g = subgradients(&inst, &e, &x, &FlopCounter::new(), Reduction::Ordered).unwrap();
        assert_eq!(g.g_e.blocks[0], SymBlock::identity(2));
        assert_eq!(g.g_x.vectors[0], vec![2.0, 0.0]);
        assert!(!g.in_r[0]);
    }

    #[test]
    fn hand_evaluated_identity_case() {
        let inst = identity2();
        let e = MaterialState::uniform(1, SymBlock::identity(2));
        let x = DualState {
            vectors: vec![vec![1.0, 0.0]],
        };
        let g = subgradients(&inst, &e, &x, &FlopCounter::new(), Reduction::Ordered).unwrap();
        assert_eq!(g.g_e.blocks[0], SymBlock::from_diagonal(&[0.0, 1.0]));
        assert_eq!(g.g_x.vectors[0], vec![0.0, 0.0]);
        // F = tr E + 2(<f,x> - sqrt(gamma) * 1) = 2 + 2(1 - 1)
        assert_eq!(lagrangian_value(&inst, &e, &x, &FlopCounter::new()).unwrap(), 2.0);
    }

    #[test]
    fn parallel_matches_ordered() {
        let inst = identity2();
        let e = MaterialState::uniform(1, SymBlock::from_diagonal(&[2.0, 1.0]));
        let x = DualState {
            vectors: vec![vec![0.3, -0.7]],
        };
        let f = FlopCounter::new();
        let a = subgradients(&inst, &e, &x, &f, Reduction::Ordered).unwrap();
        let b = subgradients(&inst, &e, &x, &f, Reduction::Parallel).unwrap();
        assert_eq!(a.g_e, b.g_e);
        for (p, q) in a.g_x.vectors[0].iter().zip(&b.g_x.vectors[0]) {
            assert!((p - q).abs() < 1e-15);
        }
    }
}
