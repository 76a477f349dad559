//! Penalized Lagrangian `p(E, x) = F(E, x) + nu sum_j ([c_j^{1/2} - gamma^{1/2}]_+)^2`
//! with `c_j = <A(E)^{-1} f_j, f_j>`, evaluated through a dense factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{FmoError, Result};
use crate::model::{dot, DualState, FlopCounter, MaterialState, ProblemInstance, SymBlock};
use crate::saddle::subgrad::lagrangian_value;

pub const DEFAULT_DENSE_THRESHOLD: usize = 4000;

/// Dense `A(E) = sum_i sum_l B_il^T E_i B_il`.
pub fn assemble_dense(instance: &ProblemInstance, e: &MaterialState) -> Result<DMatrix<f64>> {
    instance.check_material(e)?;
    let n = instance.n;
    let k = instance.k;
    let mut a = DMatrix::zeros(n, n);
    let mut eb = Vec::new();
    for (el, block) in instance.elements.iter().zip(&e.blocks) {
        for op in &el.operators {
            let nc = op.width();
            // eb = E_i B_il, k x nc row-major
            eb.clear();
            eb.resize(k * nc, 0.0);
            for r in 0..k {
                for s in 0..k {
                    let ers = block.get(r, s);
                    if ers == 0.0 {
                        continue;
                    }
                    for c in 0..nc {
                        eb[r * nc + c] += ers * op.vals[s * nc + c];
                    }
                }
            }
            for (ci, &c) in op.cols.iter().enumerate() {
                for (di, &d) in op.cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for r in 0..k {
                        acc += op.vals[r * nc + ci] * eb[r * nc + di];
                    }
                    a[(c, d)] += acc;
                }
            }
        }
    }
    Ok(a)
}

fn assembly_flops(instance: &ProblemInstance) -> u64 {
    let k = instance.k as u64;
    instance
        .elements
        .iter()
        .flat_map(|el| &el.operators)
        .map(|op| {
            let nc = op.width() as u64;
            2 * k * k * nc + 2 * k * nc * nc
        })
        .sum()
}

/// Cholesky factor of the dense stiffness matrix.
pub struct DenseStiffness {
    chol: Cholesky<f64, Dyn>,
    n: usize,
    flops: Option<u64>,
}

impl DenseStiffness {
    /// Assembles and factors `A(E)`. Refuses `N > threshold`.
    pub fn factor(
        instance: &ProblemInstance,
        e: &MaterialState,
        threshold: usize,
        flops: Option<&FlopCounter>,
    ) -> Result<Self> {
        let n = instance.n;
        if n > threshold {
            return Err(FmoError::DenseThreshold { n, threshold });
        }
        let a = assemble_dense(instance, e)?;
        let nn = n as u64;
        let cost = assembly_flops(instance) + nn * nn * nn / 3;
        if let Some(f) = flops {
            f.add_both(cost);
        }
        match Cholesky::new(a.clone()) {
            Some(chol) => Ok(DenseStiffness {
                chol,
                n,
                flops: flops.map(|_| 2 * nn * nn),
            }),
            None => {
                let lambda_min = SymmetricEigen::new(a)
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                Err(FmoError::SingularStiffness { lambda_min })
            }
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// `A(E)^{-1} f`.
    pub fn solve(&self, f: &[f64], flops: Option<&FlopCounter>) -> Vec<f64> {
        if let (Some(c), Some(cost)) = (flops, self.flops) {
            c.add_both(cost);
        }
        self.chol
            .solve(&DVector::from_column_slice(f))
            .as_slice()
            .to_vec()
    }

    /// `<A(E)^{-1} f_j, f_j>` per load.
    pub fn compliances(&self, instance: &ProblemInstance) -> Vec<f64> {
        instance
            .loads
            .iter()
            .map(|f| dot(&self.solve(f, None), f))
            .collect()
    }
}

/// Factorization, displacements `z_j = A(E)^{-1} f_j`, compliances and the
/// violated index set `W_E` at one material state.
pub struct PenaltyState {
    pub chol_cache: DenseStiffness,
    pub displacements: Vec<Vec<f64>>,
    pub compliances: Vec<f64>,
    pub violated: Vec<usize>,
}

impl PenaltyState {
    pub fn new(
        instance: &ProblemInstance,
        e: &MaterialState,
        threshold: usize,
        flops: Option<&FlopCounter>,
    ) -> Result<Self> {
        let chol = DenseStiffness::factor(instance, e, threshold, flops)?;
        let displacements: Vec<Vec<f64>> =
            instance.loads.iter().map(|f| chol.solve(f, flops)).collect();
        let compliances: Vec<f64> = displacements
            .iter()
            .zip(&instance.loads)
            .map(|(z, f)| dot(z, f))
            .collect();
        let violated = compliances
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > instance.gamma)
            .map(|(j, _)| j)
            .collect();
        Ok(PenaltyState {
            chol_cache: chol,
            displacements,
            compliances,
            violated,
        })
    }

    /// `nu sum_j ([c_j^{1/2} - gamma^{1/2}]_+)^2`.
    pub fn penalty_term(&self, instance: &ProblemInstance) -> f64 {
        let sg = instance.gamma.sqrt();
        instance.nu
            * self
                .compliances
                .iter()
                .map(|&c| (c.max(0.0).sqrt() - sg).max(0.0).powi(2))
                .sum::<f64>()
    }

    /// Adds the penalty part of the gradient to `g` in place.
    pub fn add_gradient(&self, instance: &ProblemInstance, g: &mut MaterialState, flops: Option<&FlopCounter>) {
        if instance.nu == 0.0 {
            return;
        }
        let k = instance.k;
        let sg = instance.gamma.sqrt();
        let mut bz = [0.0; 6];
        let mut count = 0u64;
        for &j in &self.violated {
            let c = self.compliances[j];
            let coef = instance.nu * (1.0 - sg / c.sqrt()).max(0.0);
            if coef == 0.0 {
                continue;
            }
            let z = &self.displacements[j];
            for (el, block) in instance.elements.iter().zip(&mut g.blocks) {
                for op in &el.operators {
                    op.apply_into(z, &mut bz[..k]);
                    block.add_outer(-coef, &bz[..k]);
                    count += 2 * (k * op.width()) as u64 + (k * k) as u64;
                }
            }
        }
        if let Some(f) = flops {
            f.add_both(count);
        }
    }
}

/// `p(E, x)`.
pub fn penalty_value(
    instance: &ProblemInstance,
    e: &MaterialState,
    x: &DualState,
    threshold: usize,
) -> Result<f64> {
    let flops = FlopCounter::new();
    let f = lagrangian_value(instance, e, x, &flops)?;
    if instance.nu == 0.0 {
        return Ok(f);
    }
    let st = PenaltyState::new(instance, e, threshold, None)?;
    Ok(f + st.penalty_term(instance))
}

/// `grad_E p(E, x)`: the subgradient of `F` in `E` plus the penalty part.
pub fn penalty_grad_e(
    instance: &ProblemInstance,
    e: &MaterialState,
    x: &DualState,
    threshold: usize,
) -> Result<MaterialState> {
    let flops = FlopCounter::new();
    let mut g = crate::saddle::subgrad::subgradients(instance, e, x, &flops, Default::default())?.g_e;
    if instance.nu != 0.0 {
        let st = PenaltyState::new(instance, e, threshold, None)?;
        st.add_gradient(instance, &mut g, None);
    }
    Ok(g)
}

/// Violation measures over loads.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Violation {
    /// `sum_j min(c_j - gamma, 0)`, exactly as printed for the experiments.
    pub literal: f64,
    /// `sum_j [c_j - gamma]_+`.
    pub positive: f64,
}

pub fn violation(compliances: &[f64], gamma: f64) -> Violation {
    Violation {
        literal: compliances.iter().map(|&c| (c - gamma).min(0.0)).sum(),
        positive: compliances.iter().map(|&c| (c - gamma).max(0.0)).sum(),
    }
}

/// Symmetric part check used by tests and assertions.
pub fn max_asymmetry(block: &SymBlock) -> f64 {
    let d = block.to_dense();
    (&d - d.transpose()).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Element, LocalOperator};

    /// One element, `B = I_2`, so `A(E) = E`.
    fn identity2(gamma: f64, nu: f64) -> ProblemInstance {
        ProblemInstance {
            k: 2,
            n: 2,
            elements: vec![Element {
                operators: vec![LocalOperator::new(2, vec![0, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap()],
            }],
            loads: vec![vec![2.0, 0.0]],
            rho_l: vec![1.0],
            rho_u: vec![8.0],
            r: 0.25,
            gamma,
            eta: 3.0,
            nu,
        }
    }

    #[test]
    fn hand_computed_penalty() {
        let inst = identity2(1.0, 3.0);
        let e = MaterialState::uniform(1, SymBlock::from_diagonal(&[2.0, 1.0]));
        let x = DualState {
            vectors: vec![vec![0.5, 0.0]],
        };
        // c = 4 / 2 = 2; penalty = 3 (sqrt 2 - 1)^2
        // F = 3 + 2 (1 - sqrt(2 * 0.25)) = 5 - sqrt 2
        let p = penalty_value(&inst, &e, &x, 10).unwrap();
        let expect = 5.0 - 2f64.sqrt() + 3.0 * (2f64.sqrt() - 1.0).powi(2);
        assert!((p - expect).abs() < 1e-13, "{p} vs {expect}");
    }

    #[test]
    fn no_violation_no_penalty() {
        let inst = identity2(100.0, 3.0);
        let e = MaterialState::uniform(1, SymBlock::from_diagonal(&[2.0, 1.0]));
        let x = DualState {
            vectors: vec![vec![0.5, 0.1]],
        };
        let f = lagrangian_value(&inst, &e, &x, &FlopCounter::new()).unwrap();
        assert_eq!(penalty_value(&inst, &e, &x, 10).unwrap(), f);
        let g = penalty_grad_e(&inst, &e, &x, 10).unwrap();
        let g0 = crate::saddle::subgrad::subgradients(&inst, &e, &x, &FlopCounter::new(), Default::default())
            .unwrap()
            .g_e;
        assert_eq!(g, g0);
    }

    #[test]
    fn threshold_refuses() {
        let inst = identity2(1.0, 1.0);
        let e = MaterialState::uniform(1, SymBlock::identity(2));
        assert!(matches!(
            DenseStiffness::factor(&inst, &e, 1, None),
            Err(FmoError::DenseThreshold { .. })
        ));
    }

    #[test]
    fn singular_names_lambda_min() {
        let inst = identity2(1.0, 1.0);
        let e = MaterialState::uniform(1, SymBlock::from_diagonal(&[1.0, 0.0]));
        match DenseStiffness::factor(&inst, &e, 10, None) {
            Err(FmoError::SingularStiffness { lambda_min }) => assert!(lambda_min.abs() < 1e-12),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn violation_signs() {
        let v = violation(&[0.5, 3.0], 1.0);
        assert_eq!(v.literal, -0.5);
        assert_eq!(v.positive, 2.0);
    }
}
