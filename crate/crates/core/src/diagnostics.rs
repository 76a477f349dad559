//! Computable gap estimates, the data-dependent bound constants, the
//! theoretical gap bounds of both schemes and approximation certificates.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FmoError, Result};
use crate::model::{dot, DualState, FlopSnapshot, MaterialState, ProblemInstance};
use crate::saddle::{DualAccumulators, Scheme};

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITERS: usize = 10_000;

/// Constants entering the gap bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub m: usize,
    pub k: usize,
    pub loads: usize,
    /// `||B||_2` of the stacked strain operator.
    pub b_norm: f64,
    /// Smallest nonzero eigenvalue of `B^T B` (dense, small `N` only).
    pub lambda_min_btb: Option<f64>,
    /// Whether `B^T B` has a zero eigenvalue.
    pub rank_deficient: Option<bool>,
    /// Stacked norm of all loads.
    pub f_norm: f64,
    pub l_e_sq: f64,
    pub l_x: f64,
    pub d_e: f64,
    pub d_x: f64,
    /// Largest upper trace bound (used where the bounds take a single value).
    pub rho_u: f64,
    pub r: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl BoundConstants {
    pub fn l_e(&self) -> f64 {
        self.l_e_sq.sqrt()
    }

    /// `tau D_E + (1 - tau) D_x`.
    pub fn d(&self, tau: f64) -> f64 {
        tau * self.d_e + (1.0 - tau) * self.d_x
    }

    /// Bound on the dual norm of the subgradient pair.
    pub fn lipschitz(&self, tau: f64) -> f64 {
        (self.l_e_sq / tau + self.l_x * self.l_x / (1.0 - tau)).sqrt()
    }
}

/// `B^T B v = sum_i sum_l B_il^T B_il v`.
pub fn apply_btb(instance: &ProblemInstance, v: &[f64]) -> Vec<f64> {
    let k = instance.k;
    let mut w = vec![0.0; instance.n];
    let mut bv = [0.0; 6];
    for el in &instance.elements {
        for op in &el.operators {
            op.apply_into(v, &mut bv[..k]);
            op.apply_transpose_add(&bv[..k], &mut w);
        }
    }
    w
}

/// `||B||_2` by power iteration on `B^T B`; converged when the Rayleigh
/// quotient changes by at most `tol` relative.
pub fn b_norm_power(instance: &ProblemInstance, tol: f64, max_iters: usize) -> Result<f64> {
    let n = instance.n;
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let nv = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|a| *a /= nv);
    let mut rho = 0.0;
    let mut change = f64::INFINITY;
    for _ in 0..max_iters {
        let w = apply_btb(instance, &v);
        let next = dot(&v, &w);
        let nw = dot(&w, &w).sqrt();
        if nw == 0.0 {
            return Ok(0.0);
        }
        change = (next - rho).abs() / next.abs().max(f64::MIN_POSITIVE);
        rho = next;
        v = w.into_iter().map(|a| a / nw).collect();
        if change <= tol {
            return Ok(rho.max(0.0).sqrt());
        }
    }
    Err(FmoError::PowerIteration {
        iterations: max_iters,
        residual: change,
    })
}

/// Dense `B^T B` (small `N` only).
pub fn dense_btb(instance: &ProblemInstance) -> DMatrix<f64> {
    let n = instance.n;
    let k = instance.k;
    let mut a = DMatrix::zeros(n, n);
    for el in &instance.elements {
        for op in &el.operators {
            let nc = op.width();
            for (ci, &c) in op.cols.iter().enumerate() {
                for (di, &d) in op.cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for r in 0..k {
                        acc += op.vals[r * nc + ci] * op.vals[r * nc + di];
                    }
                    a[(c, d)] += acc;
                }
            }
        }
    }
    a
}

/// Smallest nonzero eigenvalue of `B^T B` and whether a zero eigenvalue exists.
pub fn lambda_min_btb(instance: &ProblemInstance) -> (f64, bool) {
    let eig = SymmetricEigen::new(dense_btb(instance)).eigenvalues;
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let cut = 1e-12 * max.max(f64::MIN_POSITIVE);
    let min_nonzero = eig.iter().cloned().filter(|&l| l > cut).fold(f64::INFINITY, f64::min);
    let deficient = eig.iter().any(|&l| l <= cut);
    (min_nonzero, deficient)
}

/// All bound constants. `lambda_min(B^T B)` is computed only when `N <= dense_threshold`.
pub fn compute_constants(instance: &ProblemInstance, dense_threshold: usize) -> Result<BoundConstants> {
    instance.validate()?;
    let b_norm = b_norm_power(instance, POWER_TOL, POWER_MAX_ITERS)?;
    let (lambda_min_btb, rank_deficient) = if instance.n <= dense_threshold {
        let (l, d) = lambda_min_btb(instance);
        (Some(l), Some(d))
    } else {
        (None, None)
    };
    Ok(constants_from_norm(instance, b_norm, lambda_min_btb, rank_deficient))
}

pub fn constants_from_norm(
    instance: &ProblemInstance,
    b_norm: f64,
    lambda_min_btb: Option<f64>,
    rank_deficient: Option<bool>,
) -> BoundConstants {
    let m = instance.m();
    let k = instance.k;
    let l = instance.num_loads() as f64;
    let kr = k as f64 * instance.r;
    let rho_u = instance.max_rho_u();
    let f_norm = instance.load_norm();
    let (gamma, r, eta) = (instance.gamma, instance.r, instance.eta);
    let l_e_sq = (m * k) as f64 + l * l * (gamma / r) * b_norm * b_norm * eta * eta;
    let l_x = 2.0 * f_norm + 2.0 * (gamma * l * (rho_u - kr + r)).sqrt() * b_norm;
    let d_e = 0.5 * instance.rho_u.iter().map(|&u| (u - kr).powi(2)).sum::<f64>();
    let d_x = 0.5 * l * eta * eta;
    BoundConstants {
        m,
        k,
        loads: instance.num_loads(),
        b_norm,
        lambda_min_btb,
        rank_deficient,
        f_norm,
        l_e_sq,
        l_x,
        d_e,
        d_x,
        rho_u,
        r,
        gamma,
        eta,
    }
}

/// `(0.37 + sqrt(2t + 1)) / (t + 1)`.
pub fn prefactor(t: u64) -> f64 {
    let t = t as f64;
    (0.37 + (2.0 * t + 1.0).sqrt()) / (t + 1.0)
}

/// Reference saddle point for the first weighted bound.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceDistance {
    /// `d(E*, x*)`.
    pub d_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBound {
    pub value: f64,
    /// The `d(E*, x*)` branch of the weighted bound, when a reference was given.
    pub weighted_reference_branch: Option<f64>,
}

/// Right-hand sides of the gap theorems after `t + 1` steps (`t` starting at 0).
pub fn theoretical_gap_bound(
    c: &BoundConstants,
    t: u64,
    scheme: Scheme,
    reference: Option<ReferenceDistance>,
) -> TheoreticalBound {
    let m = c.m as f64;
    let k = c.k as f64;
    let l = c.loads as f64;
    let kr = k * c.r;
    let span = c.rho_u - kr;
    let b2 = c.b_norm * c.b_norm;
    let g_over_r = c.gamma / c.r;
    let root = (c.gamma * (span + c.r)).sqrt();
    match scheme {
        Scheme::Simple => {
            let bracket = ((m * k + g_over_r * l * l * b2 * c.eta * c.eta) * m).sqrt() * span
                + 2.0 * (c.f_norm + (l).sqrt() * root * c.b_norm) * l.sqrt() * c.eta;
            TheoreticalBound {
                value: prefactor(t) * bracket,
                weighted_reference_branch: None,
            }
        }
        Scheme::Weighted => {
            let bracket = (m * m * k + l * l * m * g_over_r * b2 * c.eta * c.eta).sqrt() * span
                + 2.0 * l.sqrt() * c.eta * c.f_norm
                + 2.0 * root * c.b_norm * l * c.eta;
            let b2_value = prefactor(t) * bracket;
            let branch = reference.map(|rd| {
                let bh = crate::saddle::BetaHat::at(t + 1);
                let inner = m * k
                    + 8.0 * (3.0 + 2f64.sqrt()) * g_over_r * l * b2 * rd.d_star
                    + 4.0 * (c.f_norm + (c.gamma * l * (span + c.r)).sqrt() * c.b_norm).powi(2);
                (4.0 * 2f64.sqrt() + 2.0) * bh * rd.d_star.sqrt() / (t as f64 + 1.0) * inner.sqrt()
            });
            TheoreticalBound {
                value: branch.map_or(b2_value, |b| b.min(b2_value)),
                weighted_reference_branch: branch,
            }
        }
    }
}

/// `(tau, sigma)` prescribed by the gap theorem of each scheme.
pub fn theorem_parameters(c: &BoundConstants, scheme: Scheme) -> (f64, f64) {
    let (le, lx, de, dx) = (c.l_e(), c.l_x, c.d_e, c.d_x);
    match scheme {
        Scheme::Simple => {
            let tau = 1.0 / (1.0 + lx / le * (de / dx).sqrt());
            let sigma = ((tau * le * le + (1.0 - tau) * lx * lx)
                / (2.0 * tau * de + 2.0 * (1.0 - tau) * dx))
                .sqrt();
            (tau, sigma)
        }
        Scheme::Weighted => {
            let tau = dx.sqrt() * le / (de.sqrt() * lx + dx.sqrt() * le);
            let sigma = 1.0 / (2.0 * tau * de + 2.0 * (1.0 - tau) * dx).sqrt();
            (tau, sigma)
        }
    }
}

/// `min <s, E>` over a block set with trace bounds `[rho_l, rho_u]` and floor `r`,
/// from `lambda_min(s)` and `tr s`.
pub fn block_min_linear(lambda_min: f64, trace: f64, k: usize, rho_l: f64, rho_u: f64, r: f64) -> f64 {
    let kr = k as f64 * r;
    if lambda_min > 0.0 {
        (rho_l - kr).max(0.0) * lambda_min + r * trace
    } else {
        (rho_u - kr) * lambda_min + r * trace
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub kappa: f64,
    pub upsilon: f64,
    pub total: f64,
}

/// `kappa_t + upsilon_t` from the accumulators, using the cached
/// `(lambda_min, trace)` of each `s^E_i`.
pub fn gap_estimate(acc: &DualAccumulators, instance: &ProblemInstance) -> Result<GapEstimate> {
    if acc.sum_alpha <= 0.0 {
        return Err(FmoError::NoIterates);
    }
    let mut min_lin = 0.0;
    for (i, &(lmin, tr)) in acc.s_e_spectrum.iter().enumerate() {
        min_lin += block_min_linear(lmin, tr, instance.k, instance.rho_l[i], instance.rho_u[i], instance.r);
    }
    Ok(finish_gap(acc, instance, min_lin))
}

/// As [`gap_estimate`] but recomputing every eigenvalue of `s^E`.
pub fn gap_estimate_direct(acc: &DualAccumulators, instance: &ProblemInstance) -> Result<GapEstimate> {
    if acc.sum_alpha <= 0.0 {
        return Err(FmoError::NoIterates);
    }
    let mut min_lin = 0.0;
    for (i, s) in acc.s_e.blocks.iter().enumerate() {
        min_lin += block_min_linear(s.lambda_min(), s.trace(), instance.k, instance.rho_l[i], instance.rho_u[i], instance.r);
    }
    Ok(finish_gap(acc, instance, min_lin))
}

fn finish_gap(acc: &DualAccumulators, instance: &ProblemInstance, min_lin: f64) -> GapEstimate {
    let kappa = (acc.sum_ge_dot_e - min_lin) / acc.sum_alpha;
    let s_norms: f64 = acc.s_x.vectors.iter().map(|s| dot(s, s).sqrt()).sum();
    let upsilon = (instance.eta * s_norms - acc.sum_gx_dot_x) / acc.sum_alpha;
    GapEstimate {
        kappa,
        upsilon,
        total: kappa + upsilon,
    }
}

/// Solution certificate and violation bound for an approximate saddle point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Every `||x_j|| < eta`: `E` solves the unbounded problem.
    pub exact_solution: bool,
    /// `sum_{j in W} (c_j^{1/2} - gamma^{1/2})`.
    pub violation_sum: f64,
    /// `(F* - m rho_l) / (2 r lambda_min eta)`, when `lambda_min(B^T B)` is known.
    pub violation_bound: Option<f64>,
    pub bound_holds: Option<bool>,
    pub f_star_upper: f64,
}

/// Evaluates the approximation lemma at `(E, x)` given exact compliances of `E`.
pub fn approximation_certificate(
    instance: &ProblemInstance,
    x: &DualState,
    compliances: &[f64],
    constants: &BoundConstants,
    f_star_upper: f64,
) -> Certificate {
    let exact_solution = x.vectors.iter().all(|v| dot(v, v).sqrt() < instance.eta);
    let sg = instance.gamma.sqrt();
    let violation_sum: f64 = compliances
        .iter()
        .filter(|&&c| c > instance.gamma)
        .map(|&c| c.sqrt() - sg)
        .sum();
    let violation_bound = constants.lambda_min_btb.map(|lm| {
        (f_star_upper - instance.total_rho_l()) / (2.0 * instance.r * lm * instance.eta)
    });
    Certificate {
        exact_solution,
        violation_sum,
        violation_bound,
        bound_holds: violation_bound.map(|b| violation_sum <= b),
        f_star_upper,
    }
}

/// Penalized variant of the violation bound: the denominator gains the
/// `nu`-dependent term `sqrt(nu / ((F* - m rho_l) |W|))`.
pub fn penalty_violation_bound(
    instance: &ProblemInstance,
    constants: &BoundConstants,
    f_star_upper: f64,
    violated: usize,
) -> Option<f64> {
    let lm = constants.lambda_min_btb?;
    let gap = f_star_upper - instance.total_rho_l();
    if violated == 0 || gap <= 0.0 {
        return Some(0.0);
    }
    let denom = (instance.nu / (gap * violated as f64)).sqrt() + 2.0 * instance.r * lm * instance.eta / gap;
    Some(1.0 / denom)
}

/// Flop summary over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub iterations: u64,
    pub total: FlopSnapshot,
    pub per_iteration_sparse: f64,
    pub per_iteration_dense_model: f64,
    /// `6 k L nig m N`, the leading term of the per-iteration model.
    pub model_leading_term: f64,
}

pub fn flop_report(instance: &ProblemInstance, total: FlopSnapshot, iterations: u64) -> FlopReport {
    let it = iterations.max(1) as f64;
    let (sparse, dense) = if iterations == 0 {
        (0.0, 0.0)
    } else {
        (total.sparse as f64 / it, total.dense_model as f64 / it)
    };
    FlopReport {
        iterations,
        total,
        per_iteration_sparse: sparse,
        per_iteration_dense_model: dense,
        model_leading_term: 6.0
            * instance.k as f64
            * instance.num_loads() as f64
            * instance.nig() as f64
            * instance.m() as f64
            * instance.n as f64,
    }
}

/// `d_E(E) = 1/2 sum ||E_i - r I||^2`.
pub fn prox_e(e: &MaterialState, r: f64) -> f64 {
    e.blocks
        .iter()
        .map(|b| {
            let mut c = b.clone();
            c.add_identity(-r);
            0.5 * c.frob_norm_sq()
        })
        .sum()
}
