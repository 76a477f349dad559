//! Brute-force reference implementations used only by tests.
//!
//! Nothing here calls into the production crate: matrices are plain nested
//! vectors and every routine is a direct transcription of its definition.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn identity(n: usize) -> Mat {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn transpose(a: &Mat) -> Mat {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn matvec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn frobenius_distance(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        .sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues
/// in ascending order and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut a = a.clone();
    let mut v = identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-32 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&c| v[r][c]).collect()).collect();
    (values, vectors)
}

/// `Q diag(d) Q^T`.
pub fn recompose(q: &Mat, d: &[f64]) -> Mat {
    let n = q.len();
    let mut out = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..d.len()).map(|l| q[i][l] * d[l] * q[j][l]).sum();
        }
    }
    out
}

/// Gaussian elimination with partial pivoting. `None` when singular.
pub fn solve_linear(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Mat = a.iter().zip(b).map(|(r, &bi)| {
        let mut row = r.clone();
        row.push(bi);
        row
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for c in col..=n {
                    m[row][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    Some(x)
}

/// `min sum_i (a_i z_i - b_i)^2` s.t. `z >= r`, `c_l <= <w, z> <= c_u`.
#[derive(Debug, Clone)]
pub struct LsProblem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub w: Vec<f64>,
    pub r: Vec<f64>,
    pub c_l: Option<f64>,
    pub c_u: Option<f64>,
}

impl LsProblem {
    pub fn objective(&self, z: &[f64]) -> f64 {
        (0..z.len()).map(|i| (self.a[i] * z[i] - self.b[i]).powi(2)).sum()
    }

    /// Largest violation of the constraints, relative to `1 + |c|` for the trace rows.
    pub fn infeasibility(&self, z: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for i in 0..z.len() {
            v = v.max(self.r[i] - z[i]);
        }
        let wz = dot(&self.w, z);
        if let Some(l) = self.c_l {
            v = v.max((l - wz) / (1.0 + l.abs()));
        }
        if let Some(u) = self.c_u {
            v = v.max((wz - u) / (1.0 + u.abs()));
        }
        v
    }
}

/// Global minimizer by enumeration of the active bound set and the status of
/// the trace constraint (free, at `c_l`, at `c_u`). `None` when infeasible.
pub fn qp_reference(p: &LsProblem) -> Option<Vec<f64>> {
    let n = p.b.len();
    assert!(n <= 12, "enumeration oracle is for small n");
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |z: Vec<f64>| {
        if z.iter().any(|v| !v.is_finite()) || p.infeasibility(&z) > 1e-11 {
            return;
        }
        let f = p.objective(&z);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, z));
        }
    };
    for mask in 0u32..(1 << n) {
        let at_bound = |i: usize| mask & (1 << i) != 0;
        let free: Vec<usize> = (0..n).filter(|&i| !at_bound(i)).collect();
        let zero_a: Vec<usize> = free.iter().copied().filter(|&i| p.a[i] == 0.0).collect();
        let mut base = p.r.clone();
        // trace constraint inactive
        if zero_a.is_empty() {
            let mut z = base.clone();
            for &i in &free {
                z[i] = p.b[i] / p.a[i];
            }
            consider(z);
        }
        for c in [p.c_l, p.c_u].into_iter().flatten() {
            match zero_a.len() {
                0 => {
                    let mut num = -c;
                    let mut den = 0.0;
                    for i in 0..n {
                        if at_bound(i) {
                            num += p.w[i] * p.r[i];
                        } else {
                            num += p.w[i] * p.b[i] / p.a[i];
                            den += p.w[i] * p.w[i] / (2.0 * p.a[i] * p.a[i]);
                        }
                    }
                    let mu = if den == 0.0 {
                        if num.abs() > 1e-12 * (1.0 + c.abs()) {
                            continue;
                        }
                        0.0
                    } else {
                        num / den
                    };
                    let mut z = base.clone();
                    for &i in &free {
                        z[i] = p.b[i] / p.a[i] - mu * p.w[i] / (2.0 * p.a[i] * p.a[i]);
                    }
                    consider(z);
                }
                1 => {
                    // zero multiplier; the objective-free variable meets the constraint
                    let j = zero_a[0];
                    if p.w[j] == 0.0 {
                        continue;
                    }
                    for &i in &free {
                        if i != j {
                            base[i] = p.b[i] / p.a[i];
                        }
                    }
                    let rest: f64 = (0..n).filter(|&i| i != j).map(|i| p.w[i] * base[i]).sum();
                    let mut z = base.clone();
                    z[j] = (c - rest) / p.w[j];
                    consider(z);
                }
                _ => {}
            }
        }
    }
    best.map(|(_, z)| z)
}

/// Projection of a symmetric `U` onto `{Z : tr Z in [c_l, c_u], lambda_min(Z) >= r}`:
/// eigendecomposition of `(U + U^T)/2`, eigenvalue problem by [`qp_reference`],
/// recomposition. Also returns the eigenvalues and projected eigenvalues.
pub fn spectral_kkt_reference(u: &Mat, c_l: f64, c_u: f64, r: f64) -> (Mat, Vec<f64>, Vec<f64>) {
    let n = u.len();
    let sym: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (u[i][j] + u[j][i])).collect()).collect();
    let (lambda, q) = jacobi_eigen(&sym);
    let lp = LsProblem {
        a: vec![1.0; n],
        b: lambda.clone(),
        w: vec![1.0; n],
        r: vec![r; n],
        c_l: c_l.is_finite().then_some(c_l),
        c_u: c_u.is_finite().then_some(c_u),
    };
    let omega = qp_reference(&lp).expect("feasible projection");
    (recompose(&q, &omega), lambda, omega)
}

/// Whether `omega` is ordered like `lambda` (non-strictly).
pub fn order_preserved(lambda: &[f64], omega: &[f64], tol: f64) -> bool {
    (0..lambda.len()).all(|i| {
        (0..lambda.len()).all(|j| !(lambda[i] < lambda[j]) || omega[i] <= omega[j] + tol)
    })
}

/// Central difference `(f(p + h d) - f(p - h d)) / 2h`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, point: &[f64], direction: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = point.iter().zip(direction).map(|(p, d)| p + h * d).collect();
    let minus: Vec<f64> = point.iter().zip(direction).map(|(p, d)| p - h * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error between an analytic directional derivative and the central
/// difference with step `1e-6`.
pub fn fd_check(f: &dyn Fn(&[f64]) -> f64, point: &[f64], direction: &[f64], analytic: f64) -> f64 {
    let fd = central_difference(f, point, direction, 1e-6);
    (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-8)
}

/// Dense strain operator `B_il` (`k x N`) tagged with its element.
#[derive(Debug, Clone)]
pub struct DenseOp {
    pub element: usize,
    pub rows: Mat,
}

/// `sum B^T E_i B` assembled entry by entry.
pub fn dense_stiffness(n: usize, ops: &[DenseOp], blocks: &[Mat]) -> Mat {
    let mut a = zeros(n, n);
    for op in ops {
        let e = &blocks[op.element];
        let eb = matmul(e, &op.rows);
        let btebt = matmul(&transpose(&op.rows), &eb);
        for i in 0..n {
            for j in 0..n {
                a[i][j] += btebt[i][j];
            }
        }
    }
    a
}

/// `<A^{-1} f, f>` by Gaussian elimination.
pub fn compliance(a: &Mat, f: &[f64]) -> Option<f64> {
    solve_linear(a, f).map(|z| dot(&z, f))
}

/// `||B||_2` as the square root of the largest eigenvalue of `B^T B`.
pub fn spectral_norm(rows: &Mat) -> f64 {
    let btb = matmul(&transpose(rows), rows);
    let (vals, _) = jacobi_eigen(&btb);
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Parameters for [`straight_line_step`].
#[derive(Debug, Clone)]
pub struct StepParams {
    pub k: usize,
    pub n: usize,
    pub loads: Vec<Vec<f64>>,
    pub rho_l: Vec<f64>,
    pub rho_u: Vec<f64>,
    pub r: f64,
    pub gamma: f64,
    pub eta: f64,
    pub tau: f64,
    /// `beta_{t+1}`.
    pub beta: f64,
    /// Use `alpha = 1 / ||(g_E, g_x)||_*` instead of 1.
    pub weighted: bool,
}

/// State carried by [`straight_line_step`].
#[derive(Debug, Clone)]
pub struct StepState {
    pub e: Vec<Mat>,
    pub x: Vec<Vec<f64>>,
    pub s_e: Vec<Mat>,
    pub s_x: Vec<Vec<f64>>,
}

/// One dual averaging step written with dense matrices throughout.
pub fn straight_line_step(p: &StepParams, ops: &[DenseOp], st: &StepState) -> StepState {
    let k = p.k;
    let m = st.e.len();
    let a = dense_stiffness(p.n, ops, &st.e);
    let sg = p.gamma.sqrt();
    let mut g_e: Vec<Mat> = vec![identity(k); m];
    let mut g_x: Vec<Vec<f64>> = Vec::new();
    for (j, xj) in st.x.iter().enumerate() {
        let ax = matvec(&a, xj);
        let q = dot(&ax, xj);
        if q > 1e-14 * dot(xj, xj) {
            let u = sg / q.sqrt();
            for op in ops {
                let bx = matvec(&op.rows, xj);
                for r in 0..k {
                    for c in 0..k {
                        g_e[op.element][r][c] -= u * bx[r] * bx[c];
                    }
                }
            }
            g_x.push(p.loads[j].iter().zip(&ax).map(|(f, v)| 2.0 * f - 2.0 * u * v).collect());
        } else {
            g_x.push(p.loads[j].iter().map(|f| 2.0 * f).collect());
        }
    }
    let alpha = if p.weighted {
        let ne: f64 = g_e.iter().flatten().flatten().map(|v| v * v).sum();
        let nx: f64 = g_x.iter().flatten().map(|v| v * v).sum();
        1.0 / (ne / p.tau + nx / (1.0 - p.tau)).sqrt()
    } else {
        1.0
    };
    let s_e: Vec<Mat> = st
        .s_e
        .iter()
        .zip(&g_e)
        .map(|(s, g)| {
            s.iter()
                .zip(g)
                .map(|(sr, gr)| sr.iter().zip(gr).map(|(a, b)| a + alpha * b).collect())
                .collect()
        })
        .collect();
    let s_x: Vec<Vec<f64>> = st
        .s_x
        .iter()
        .zip(&g_x)
        .map(|(s, g)| s.iter().zip(g).map(|(a, b)| a - alpha * b).collect())
        .collect();
    let x = s_x
        .iter()
        .map(|s| {
            let ns = dot(s, s).sqrt();
            if ns == 0.0 {
                vec![0.0; s.len()]
            } else {
                let c = (p.eta / ns).min(1.0 / (p.beta * (1.0 - p.tau)));
                s.iter().map(|v| -c * v).collect()
            }
        })
        .collect();
    // E_i minimizes <s, E> + (beta tau / 2)||E - rI||^2 over the block set,
    // i.e. it is the projection of rI - s / (beta tau).
    let bt = p.beta * p.tau;
    let e = s_e
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let target: Mat = (0..k)
                .map(|a| {
                    (0..k)
                        .map(|b| if a == b { p.r } else { 0.0 } - s[a][b] / bt)
                        .collect()
                })
                .collect();
            spectral_kkt_reference(&target, p.rho_l[i], p.rho_u[i], p.r).0
        })
        .collect();
    StepState { e, x, s_e, s_x }
}


/// Random test problems.
pub mod random {
    use super::{LsProblem, Mat};
    use rand::Rng;

    fn pick<R: Rng>(rng: &mut R, choices: &[f64]) -> f64 {
        choices[rng.gen_range(0..choices.len())]
    }

    /// Values drawn from a coarse grid half of the time, so ties are common.
    fn tie_prone<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
        if rng.gen_bool(0.5) {
            pick(rng, &[-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0])
        } else {
            rng.gen_range(lo..hi)
        }
    }

    fn bounds<R: Rng>(rng: &mut R) -> (Option<f64>, Option<f64>) {
        let a = rng.gen_range(-5.0..5.0);
        let b = rng.gen_range(-5.0..5.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let u: f64 = rng.gen();
        if u < 0.15 {
            (Some(lo), Some(lo))
        } else if u < 0.3 {
            (None, Some(hi))
        } else if u < 0.45 {
            (Some(lo), None)
        } else if u < 0.5 {
            (None, None)
        } else {
            (Some(lo), Some(hi))
        }
    }

    /// Standard form: `a = 1`, `r = 0`, nonzero `w` of mixed sign.
    pub fn standard_ls<R: Rng>(rng: &mut R, n: usize) -> LsProblem {
        let w = (0..n)
            .map(|_| loop {
                let v = tie_prone(rng, -2.0, 2.0);
                if v != 0.0 {
                    break v;
                }
            })
            .collect();
        let (c_l, c_u) = bounds(rng);
        LsProblem {
            a: vec![1.0; n],
            b: (0..n).map(|_| tie_prone(rng, -3.0, 3.0)).collect(),
            w,
            r: vec![0.0; n],
            c_l,
            c_u,
        }
    }

    /// General form with zero and negative diagonal entries, zero weights and shifts.
    pub fn general_ls<R: Rng>(rng: &mut R, n: usize) -> LsProblem {
        let (c_l, c_u) = bounds(rng);
        LsProblem {
            a: (0..n).map(|_| pick(rng, &[0.0, 1.0, -1.0, 2.0, -2.0, 0.5])).collect(),
            b: (0..n).map(|_| tie_prone(rng, -3.0, 3.0)).collect(),
            w: (0..n).map(|_| tie_prone(rng, -2.0, 2.0)).collect(),
            r: (0..n).map(|_| pick(rng, &[0.0, 0.5, -1.0, 0.25])).collect(),
            c_l,
            c_u,
        }
    }

    pub fn symmetric<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Mat {
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-scale..scale);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    }

    /// Trace bounds and floor satisfying `c_u >= max(n r, c_l)`; infinite bounds allowed.
    pub fn spectral_bounds<R: Rng>(rng: &mut R, n: usize, scale: f64) -> (f64, f64, f64) {
        let r = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-0.5..1.0) };
        let nr = n as f64 * r;
        let c_u = if rng.gen_bool(0.1) {
            f64::INFINITY
        } else {
            nr + rng.gen_range(0.0..2.0 * scale * n as f64)
        };
        let c_l = if rng.gen_bool(0.1) {
            f64::NEG_INFINITY
        } else if rng.gen_bool(0.1) && c_u.is_finite() {
            c_u
        } else {
            let top = if c_u.is_finite() { c_u } else { nr + scale * n as f64 };
            rng.gen_range(nr - scale * n as f64..=top)
        };
        (c_l, c_u, r)
    }
}
