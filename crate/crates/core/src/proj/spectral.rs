//! Projection of a symmetric matrix onto
//! `{Z : c_l <= tr Z <= c_u, lambda_min(Z) >= r}` and the two scan
//! algorithms used by the primal update.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{FmoError, Result};
use crate::model::SymBlock;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProjection {
    pub u: DMatrix<f64>,
    pub c_l: f64,
    pub c_u: f64,
    pub r: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub z: DMatrix<f64>,
    /// Eigenvalues of the symmetric part of `U`, ascending.
    pub lambda: Vec<f64>,
    /// Projected eigenvalues matching `lambda`.
    pub omega: Vec<f64>,
    pub q: DMatrix<f64>,
}

fn check_precondition(n: usize, c_l: f64, c_u: f64, r: f64) -> Result<()> {
    if c_l.is_nan() || c_u.is_nan() || !r.is_finite() {
        return Err(FmoError::ProjectionPrecondition(format!(
            "bounds must be numbers: c_l = {c_l}, c_u = {c_u}, r = {r}"
        )));
    }
    let nr = n as f64 * r;
    if c_u < nr.max(c_l) {
        return Err(FmoError::ProjectionPrecondition(format!(
            "c_u = {c_u} < max(n r = {nr}, c_l = {c_l})"
        )));
    }
    Ok(())
}

/// Projected eigenvalues for the vector problem
/// `min ||omega - lambda||  s.t.  omega >= r, c_l <= sum omega <= c_u`.
///
/// `lambda` may be in any order; the result follows the same order.
/// Infinite `c_l` / `c_u` are accepted.
pub fn project_eigenvalues(lambda: &[f64], c_l: f64, c_u: f64, r: f64) -> Result<Vec<f64>> {
    let n = lambda.len();
    check_precondition(n, c_l, c_u, r)?;
    let nf = n as f64;
    let base: f64 = lambda.iter().map(|&l| l.max(r)).sum();

    if base > c_u {
        // Shifted problem: omega' = [lambda' - theta]_+, sum omega' = c_u - n r.
        let c = c_u - nf * r;
        let mut pos: Vec<f64> = lambda.iter().map(|&l| l - r).filter(|&l| l > 0.0).collect();
        pos.sort_by(|a, b| b.total_cmp(a));
        let mut sum = 0.0;
        let mut theta = f64::INFINITY;
        for (q, &l) in pos.iter().enumerate() {
            let s = sum + l;
            if (q + 1) as f64 * l > s - c {
                sum = s;
                theta = (s - c) / (q + 1) as f64;
            } else {
                break;
            }
        }
        return Ok(lambda.iter().map(|&l| r + (l - r - theta).max(0.0)).collect());
    }

    if base < c_l {
        // omega' = [lambda' + theta]_+, sum omega' = c_l - n r.
        let c = c_l - nf * r;
        let shifted: Vec<f64> = lambda.iter().map(|&l| l - r).collect();
        let mut sum: f64 = shifted.iter().filter(|&&l| l > 0.0).sum();
        let mut q = shifted.iter().filter(|&&l| l > 0.0).count();
        let mut rest: Vec<f64> = shifted.iter().cloned().filter(|&l| l <= 0.0).collect();
        rest.sort_by(|a, b| b.total_cmp(a));
        for &l in &rest {
            if (q + 1) as f64 * l > sum + l - c {
                sum += l;
                q += 1;
            } else {
                break;
            }
        }
        let theta = (c - sum) / q as f64;
        return Ok(shifted.iter().map(|&l| r + (l + theta).max(0.0)).collect());
    }

    Ok(lambda.iter().map(|&l| l.max(r)).collect())
}

/// Projects `U` (its symmetric part `(U + U^T)/2`) onto the feasible set.
pub fn project_spectral(p: &SpectralProjection) -> Result<SpectralResult> {
    let n = p.u.nrows();
    if p.u.ncols() != n {
        return Err(crate::error::mismatch("square matrix", n, p.u.ncols()));
    }
    check_precondition(n, p.c_l, p.c_u, p.r)?;
    let sym = (&p.u + p.u.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let omega = project_eigenvalues(&lambda, p.c_l, p.c_u, p.r)?;
    let z = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&omega)) * q.transpose();
    let z = (&z + z.transpose()) * 0.5;
    Ok(SpectralResult { z, lambda, omega, q })
}

/// Which branch of the primal update applies to a dual block with eigenvalues `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateCase {
    /// Trace strictly inside the bounds after clipping.
    Interior,
    /// Upper trace bound active.
    Upper,
    /// Lower trace bound active.
    Lower,
}

/// Case selection on `sum_{lambda < 0} lambda` against `bt (k r - rho_u)` and `bt (k r - rho_l)`.
pub fn update_case(lambda: &[f64], bt: f64, rho_l: f64, rho_u: f64, r: f64) -> UpdateCase {
    let kr = lambda.len() as f64 * r;
    let neg: f64 = lambda.iter().filter(|&&l| l < 0.0).sum();
    if neg < bt * (kr - rho_u) {
        UpdateCase::Upper
    } else if neg > bt * (kr - rho_l) {
        UpdateCase::Lower
    } else {
        UpdateCase::Interior
    }
}

fn ascending(lambda: &[f64], keep: impl Fn(f64) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..lambda.len()).filter(|&i| keep(lambda[i])).collect();
    idx.sort_by(|&a, &b| lambda[a].total_cmp(&lambda[b]).then(a.cmp(&b)));
    idx
}

/// Eigenvalues of the primal block when the upper trace bound is active.
/// `lambda` are the eigenvalues of the dual sum `s^E_i`, `bt = beta * tau`.
pub fn proj_sym_l(lambda: &[f64], bt: f64, rho_u: f64, k: usize, r: f64) -> Result<Vec<f64>> {
    if lambda.len() != k {
        return Err(crate::error::mismatch("eigenvalue count", k, lambda.len()));
    }
    let kr = k as f64 * r;
    let neg_sum: f64 = lambda.iter().filter(|&&l| l < 0.0).sum();
    if !(neg_sum < bt * (kr - rho_u)) {
        return Err(FmoError::CaseCondition(format!(
            "upper-bound scan needs sum of negative eigenvalues {neg_sum} < {}",
            bt * (kr - rho_u)
        )));
    }
    let sigma = ascending(lambda, |l| l < 0.0);
    let p = sigma.len();
    let mut t = bt * (rho_u - kr) + lambda[sigma[0]];
    let mut q = 1;
    while q < p && (q as f64) * lambda[sigma[q]] < t {
        t += lambda[sigma[q]];
        q += 1;
    }
    let mut omega = vec![r; k];
    for &l in &sigma[..q] {
        omega[l] = r - lambda[l] / bt + t / (bt * q as f64);
    }
    Ok(omega)
}

/// Eigenvalues of the primal block when the lower trace bound is active.
pub fn proj_sym_g(lambda: &[f64], bt: f64, rho_l: f64, k: usize, r: f64) -> Result<Vec<f64>> {
    if lambda.len() != k {
        return Err(crate::error::mismatch("eigenvalue count", k, lambda.len()));
    }
    let kr = k as f64 * r;
    let neg_sum: f64 = lambda.iter().filter(|&&l| l < 0.0).sum();
    if !(neg_sum > bt * (kr - rho_l)) {
        return Err(FmoError::CaseCondition(format!(
            "lower-bound scan needs sum of negative eigenvalues {neg_sum} > {}",
            bt * (kr - rho_l)
        )));
    }
    let mut in_u = vec![false; k];
    let mut t = bt * (rho_l - kr);
    let mut q = 0usize;
    for (i, &l) in lambda.iter().enumerate() {
        if l <= 0.0 {
            in_u[i] = true;
            t += l;
            q += 1;
        }
    }
    for &l in &ascending(lambda, |l| l > 0.0) {
        if (q as f64) * lambda[l] < t {
            in_u[l] = true;
            t += lambda[l];
            q += 1;
        } else {
            break;
        }
    }
    Ok((0..k)
        .map(|l| {
            if in_u[l] {
                r - lambda[l] / bt + t / (bt * q as f64)
            } else {
                r
            }
        })
        .collect())
}

/// Eigenvalues of the minimizer of `<s, V> + (bt/2)||V - rI||^2` over the block set.
pub fn update_eigenvalues(
    lambda: &[f64],
    bt: f64,
    rho_l: f64,
    rho_u: f64,
    r: f64,
) -> Result<Vec<f64>> {
    let k = lambda.len();
    match update_case(lambda, bt, rho_l, rho_u, r) {
        UpdateCase::Upper => proj_sym_l(lambda, bt, rho_u, k, r),
        UpdateCase::Lower => proj_sym_g(lambda, bt, rho_l, k, r),
        UpdateCase::Interior => Ok(lambda
            .iter()
            .map(|&l| if l >= 0.0 { r } else { r - l / bt })
            .collect()),
    }
}

/// Primal block update from the dual sum `s`.
pub fn update_block(s: &SymBlock, bt: f64, rho_l: f64, rho_u: f64, r: f64) -> Result<SymBlock> {
    let (lambda, q) = s.eigen();
    let omega = update_eigenvalues(&lambda, bt, rho_l, rho_u, r)?;
    Ok(SymBlock::from_eigen(&q, &omega))
}

/// Projection of a block onto `[c_l, c_u]` trace bounds and eigenvalue floor `r`.
pub fn project_block(u: &SymBlock, c_l: f64, c_u: f64, r: f64) -> Result<SymBlock> {
    let (lambda, q) = u.eigen();
    let omega = project_eigenvalues(&lambda, c_l, c_u, r)?;
    Ok(SymBlock::from_eigen(&q, &omega))
}
