//! Nonnegative least squares with a two-sided linear constraint:
//!
//! ```text
//! min ||A z - b||^2   s.t.  c_l <= <w, z> <= c_u,  z >= r
//! ```
//!
//! with `A` diagonal. [`reduce_ls`] brings the problem to the standard form
//! `A = I, r = 0, w_i != 0`, which [`solve_box_trace_ls`] solves exactly by a
//! sorted ratio scan.

use std::cmp::Ordering;

use crate::error::{mismatch, FmoError, Result};

/// The general problem. `None` bounds are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxTraceLs {
    pub a_diag: Vec<f64>,
    pub b: Vec<f64>,
    pub w: Vec<f64>,
    pub r_lb: Vec<f64>,
    pub c_l: Option<f64>,
    pub c_u: Option<f64>,
}

/// `min ||z - b||^2  s.t.  c_l <= <w, z> <= c_u, z >= 0` with every `w_i != 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLs {
    pub b: Vec<f64>,
    pub w: Vec<f64>,
    pub c_l: Option<f64>,
    pub c_u: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub z: Vec<f64>,
    /// Multiplier of `c_l <= <w, z>`.
    pub lambda_l: f64,
    /// Multiplier of `<w, z> <= c_u`.
    pub lambda_u: f64,
    /// Arithmetic operations and comparisons performed.
    pub ops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Recover {
    /// Value fixed during reduction.
    Fixed(f64),
    /// `z = r + y / a` with `y` the standardized variable at `index`.
    Standard { index: usize, r: f64, a: f64 },
}

/// A standardized problem plus the map back to the original variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub standard: StandardLs,
    map: Vec<Recover>,
}

impl Reduction {
    /// Original variables from a solution `y` of the standardized problem.
    pub fn recover(&self, y: &[f64]) -> Vec<f64> {
        self.map
            .iter()
            .map(|m| match *m {
                Recover::Fixed(v) => v,
                Recover::Standard { index, r, a } => r + y[index] / a,
            })
            .collect()
    }

    /// Indices of the original variables fixed by the reduction.
    pub fn fixed(&self) -> Vec<usize> {
        self.map
            .iter()
            .enumerate()
            .filter(|(_, m)| matches!(m, Recover::Fixed(_)))
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_bounds(c_l: Option<f64>, c_u: Option<f64>) -> Result<()> {
    for c in [c_l, c_u].into_iter().flatten() {
        if !c.is_finite() {
            return Err(FmoError::InvalidInstance(
                "finite constraint bounds must be finite; use None for unbounded".into(),
            ));
        }
    }
    if let (Some(l), Some(u)) = (c_l, c_u) {
        if l > u {
            return Err(FmoError::InfeasibleLeastSquares(format!("c_l = {l} > c_u = {u}")));
        }
    }
    Ok(())
}

/// Standardizes a general problem.
pub fn reduce_ls(p: &BoxTraceLs) -> Result<Reduction> {
    let n = p.b.len();
    for (name, len) in [("a_diag", p.a_diag.len()), ("w", p.w.len()), ("r_lb", p.r_lb.len())] {
        if len != n {
            return Err(mismatch(format!("least-squares vector {name}"), n, len));
        }
    }
    check_bounds(p.c_l, p.c_u)?;

    // Variables absent from the objective.
    let mut z_free = vec![0.0; n];
    let mut s = 0.0;
    for i in 0..n {
        if p.a_diag[i] == 0.0 {
            z_free[i] = p.r_lb[i];
            s += p.w[i] * p.r_lb[i];
        } else {
            s += p.w[i] * (p.b[i] / p.a_diag[i]).max(p.r_lb[i]);
        }
    }
    let free = |pred: fn(f64) -> bool| (0..n).find(|&i| p.a_diag[i] == 0.0 && pred(p.w[i]));
    match (p.c_l, p.c_u) {
        (Some(cl), _) if s < cl => {
            if let Some(i) = free(|w| w > 0.0) {
                z_free[i] += (cl - s) / p.w[i];
            }
        }
        (_, Some(cu)) if s > cu => {
            if let Some(i) = free(|w| w < 0.0) {
                z_free[i] += (s - cu) / (-p.w[i]);
            }
        }
        _ => {}
    }

    let mut shift = 0.0;
    let mut map = Vec::with_capacity(n);
    let mut std_b = Vec::new();
    let mut std_w = Vec::new();
    for i in 0..n {
        let a = p.a_diag[i];
        if a == 0.0 {
            shift += p.w[i] * z_free[i];
            map.push(Recover::Fixed(z_free[i]));
            continue;
        }
        let (a, b) = if a < 0.0 { (-a, -p.b[i]) } else { (a, p.b[i]) };
        let r = p.r_lb[i];
        shift += p.w[i] * r;
        let bp = b - a * r;
        let wp = p.w[i] / a;
        if wp == 0.0 {
            map.push(Recover::Fixed(r + bp.max(0.0) / a));
        } else {
            map.push(Recover::Standard {
                index: std_b.len(),
                r,
                a,
            });
            std_b.push(bp);
            std_w.push(wp);
        }
    }
    Ok(Reduction {
        standard: StandardLs {
            b: std_b,
            w: std_w,
            c_l: p.c_l.map(|c| c - shift),
            c_u: p.c_u.map(|c| c - shift),
        },
        map,
    })
}

/// Reduces, solves and maps back.
pub fn solve_general_ls(p: &BoxTraceLs) -> Result<Vec<f64>> {
    let red = reduce_ls(p)?;
    let sol = solve_box_trace_ls(&red.standard)?;
    Ok(red.recover(&sol.z))
}

#[derive(Debug, Default)]
struct Counter(u64);

impl Counter {
    #[inline]
    fn add(&mut self, k: u64) {
        self.0 += k;
    }
}

fn sort_by_ratio(idx: &mut [usize], ratio: &[f64], descending: bool, ops: &mut Counter) {
    idx.sort_by(|&a, &b| {
        ops.add(1);
        let o = ratio[a].total_cmp(&ratio[b]);
        let o = if descending { o.reverse() } else { o };
        if o == Ordering::Equal {
            a.cmp(&b)
        } else {
            o
        }
    });
}

/// Bounds violated by at most this much at `z = 0` are treated as met.
const BOUND_TOL: f64 = 1e-12;

/// Solves the standardized problem.
///
/// Returns `InfeasibleLeastSquares` when no `z >= 0` meets the bounds.
pub fn solve_box_trace_ls(p: &StandardLs) -> Result<LsSolution> {
    let n = p.b.len();
    if p.w.len() != n {
        return Err(mismatch("least-squares weights", n, p.w.len()));
    }
    if let Some(i) = p.w.iter().position(|&w| w == 0.0 || !w.is_finite()) {
        return Err(FmoError::InvalidInstance(format!(
            "standardized weight w[{i}] = {} must be finite and nonzero",
            p.w[i]
        )));
    }
    check_bounds(p.c_l, p.c_u)?;
    let any_pos = p.w.iter().any(|&w| w > 0.0);
    let any_neg = p.w.iter().any(|&w| w < 0.0);
    // bounds within roundoff of the reachable side are snapped onto it
    let mut c_l = p.c_l;
    let mut c_u = p.c_u;
    if let Some(cl) = c_l {
        if !any_pos && cl > 0.0 {
            if cl > BOUND_TOL {
                return Err(FmoError::InfeasibleLeastSquares(format!(
                    "<w, z> <= 0 for all z >= 0 but c_l = {cl}"
                )));
            }
            c_l = Some(0.0);
            c_u = c_u.map(|cu| cu.max(0.0));
        }
    }
    if let Some(cu) = c_u {
        if !any_neg && cu < 0.0 {
            if cu < -BOUND_TOL {
                return Err(FmoError::InfeasibleLeastSquares(format!(
                    "<w, z> >= 0 for all z >= 0 but c_u = {cu}"
                )));
            }
            c_u = Some(0.0);
            c_l = c_l.map(|cl| cl.min(0.0));
        }
    }
    let snapped;
    let p = if c_l != p.c_l || c_u != p.c_u {
        snapped = StandardLs {
            b: p.b.clone(),
            w: p.w.clone(),
            c_l,
            c_u,
        };
        &snapped
    } else {
        p
    };

    let unit = p.w.iter().all(|&w| w == 1.0);
    let mut ops = Counter::default();
    let b = &p.b;
    let w = &p.w;

    // <w, [b]_+> and sign pattern
    let mut wb_plus = 0.0;
    let mut first = true;
    for i in 0..n {
        ops.add(1);
        if b[i] >= 0.0 {
            if !unit {
                ops.add(1);
            }
            if !first {
                ops.add(1);
            }
            first = false;
            wb_plus += w[i] * b[i];
        }
    }

    ops.add(1);
    let above = p.c_u.is_some_and(|cu| wb_plus > cu);
    let below = !above && {
        ops.add(1);
        p.c_l.is_some_and(|cl| wb_plus < cl)
    };
    if !above && !below {
        return Ok(LsSolution {
            z: b.iter().map(|&v| v.max(0.0)).collect(),
            lambda_l: 0.0,
            lambda_u: 0.0,
            ops: ops.0,
        });
    }

    // S1: w>0,b>=0  S2: w>0,b<0  S3: w<0,b>=0  S4: w<0,b<0
    let mut sets: [Vec<usize>; 4] = Default::default();
    for i in 0..n {
        if !unit {
            ops.add(1);
        }
        let k = match (w[i] > 0.0, b[i] >= 0.0) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        sets[k].push(i);
    }
    let [s1, s2, s3, s4] = sets;

    // (initial set, descending scan set, ascending scan set, bound)
    let (init, mut desc, mut asc, c) = if above {
        (s3, s1, s4, p.c_u.unwrap())
    } else {
        (s1, s2, s3, p.c_l.unwrap())
    };

    let mut ratio = vec![0.0; n];
    for &i in desc.iter().chain(asc.iter()) {
        if unit {
            ratio[i] = b[i];
        } else {
            ops.add(1);
            ratio[i] = b[i] / w[i];
        }
    }
    sort_by_ratio(&mut desc, &ratio, true, &mut ops);
    sort_by_ratio(&mut asc, &ratio, false, &mut ops);

    let mut in_s = vec![false; n];
    let mut t = -c;
    let mut v = 0.0;
    for &i in &init {
        in_s[i] = true;
        if unit {
            ops.add(1);
            t += b[i];
            v += 1.0;
        } else {
            ops.add(4);
            t += w[i] * b[i];
            v += w[i] * w[i];
        }
    }
    ops.add(1);

    let (mut j, mut l) = (0usize, 0usize);
    loop {
        let mut grew = false;
        while j < desc.len() {
            let i = desc[j];
            ops.add(2);
            if v * ratio[i] > t || (v == 0.0 && t == 0.0) {
                in_s[i] = true;
                if unit {
                    ops.add(1);
                    t += b[i];
                    v += 1.0;
                } else {
                    ops.add(4);
                    t += w[i] * b[i];
                    v += w[i] * w[i];
                }
                j += 1;
                grew = true;
            } else {
                break;
            }
        }
        while l < asc.len() {
            let i = asc[l];
            ops.add(2);
            if v * ratio[i] < t || (v == 0.0 && t == 0.0) {
                in_s[i] = true;
                if unit {
                    ops.add(1);
                    t += b[i];
                    v += 1.0;
                } else {
                    ops.add(4);
                    t += w[i] * b[i];
                    v += w[i] * w[i];
                }
                l += 1;
                grew = true;
            } else {
                break;
            }
        }
        if !grew || (j == desc.len() && l == asc.len()) {
            break;
        }
    }

    let mut z = vec![0.0; n];
    let mu = if v > 0.0 {
        ops.add(1);
        let mu = t / v;
        for i in 0..n {
            if in_s[i] {
                ops.add(if unit { 1 } else { 2 });
                z[i] = (b[i] - mu * w[i]).max(0.0);
            }
        }
        mu
    } else if above {
        // S empty: z = 0 sits on the upper bound and the multiplier only has
        // to dominate the positive ratios.
        s1_max_ratio(b, w).max(0.0)
    } else {
        s3_min_ratio(b, w).min(0.0)
    };

    let (lambda_l, lambda_u) = if above { (0.0, 2.0 * mu) } else { (-2.0 * mu, 0.0) };
    Ok(LsSolution {
        z,
        lambda_l,
        lambda_u,
        ops: ops.0,
    })
}

fn s1_max_ratio(b: &[f64], w: &[f64]) -> f64 {
    b.iter()
        .zip(w)
        .filter(|(&bi, &wi)| wi > 0.0 && bi >= 0.0)
        .map(|(bi, wi)| bi / wi)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn s3_min_ratio(b: &[f64], w: &[f64]) -> f64 {
    b.iter()
        .zip(w)
        .filter(|(&bi, &wi)| wi < 0.0 && bi >= 0.0)
        .map(|(bi, wi)| bi / wi)
        .fold(f64::INFINITY, f64::min)
}

/// Largest KKT violation of `(z, lambda_l, lambda_u)` for the standardized problem:
/// stationarity on the free variables, sign conditions on the active ones,
/// primal feasibility, dual sign and complementarity.
pub fn kkt_residual(p: &StandardLs, sol: &LsSolution) -> f64 {
    let (z, ll, lu) = (&sol.z, sol.lambda_l, sol.lambda_u);
    let mut res: f64 = 0.0;
    let mut wz = 0.0;
    for i in 0..z.len() {
        let g = 2.0 * (z[i] - p.b[i]) + (lu - ll) * p.w[i];
        res = res.max((-z[i]).max(0.0));
        if z[i] > 0.0 {
            res = res.max(g.abs());
        } else {
            res = res.max((-g).max(0.0));
        }
        wz += p.w[i] * z[i];
    }
    res = res.max((-ll).max(0.0)).max((-lu).max(0.0));
    match p.c_l {
        Some(cl) => {
            let scale = 1.0 + cl.abs();
            res = res.max(((cl - wz) / scale).max(0.0));
            res = res.max((ll * (wz - cl)).abs() / scale);
        }
        None => res = res.max(ll.abs()),
    }
    match p.c_u {
        Some(cu) => {
            let scale = 1.0 + cu.abs();
            res = res.max(((wz - cu) / scale).max(0.0));
            res = res.max((lu * (cu - wz)).abs() / scale);
        }
        None => res = res.max(lu.abs()),
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std(b: &[f64], w: &[f64], c_l: Option<f64>, c_u: Option<f64>) -> StandardLs {
        StandardLs {
            b: b.to_vec(),
            w: w.to_vec(),
            c_l,
            c_u,
        }
    }

    #[test]
    fn interior_returns_positive_part() {
        let p = std(&[0.5, 0.3], &[1.0, 1.0], Some(0.0), Some(2.0));
        let s = solve_box_trace_ls(&p).unwrap();
        assert_eq!(s.z, vec![0.5, 0.3]);
        assert_eq!((s.lambda_l, s.lambda_u), (0.0, 0.0));
    }

    #[test]
    fn equality_bound_hand_trace() {
        let p = std(&[2.0, 0.0], &[1.0, 1.0], Some(1.0), Some(1.0));
        let s = solve_box_trace_ls(&p).unwrap();
        assert_eq!(s.z, vec![1.0, 0.0]);
        assert_eq!(s.lambda_u, 2.0);
        assert!(kkt_residual(&p, &s) < 1e-14);
    }

    #[test]
    fn lower_bound_with_mixed_signs() {
        let p = std(&[-1.0, -1.0], &[1.0, -1.0], Some(3.0), None);
        let s = solve_box_trace_ls(&p).unwrap();
        // z1 - z2 >= 3 closest to (-1,-1): z = (3, 0)
        assert!((s.z[0] - 3.0).abs() < 1e-14 && s.z[1] == 0.0, "{s:?}");
        assert!(kkt_residual(&p, &s) < 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        let p = std(&[1.0], &[1.0], None, Some(-1.0));
        assert!(matches!(
            solve_box_trace_ls(&p),
            Err(FmoError::InfeasibleLeastSquares(_))
        ));
    }

    #[test]
    fn reduction_keeps_standard_input() {
        let p = BoxTraceLs {
            a_diag: vec![1.0, 1.0],
            b: vec![0.2, 0.7],
            w: vec![1.0, 1.0],
            r_lb: vec![0.0, 0.0],
            c_l: Some(0.0),
            c_u: Some(1.0),
        };
        let red = reduce_ls(&p).unwrap();
        assert_eq!(red.standard.b, p.b);
        assert_eq!(red.standard.w, p.w);
        assert_eq!(red.standard.c_l, Some(0.0));
        assert_eq!(red.standard.c_u, Some(1.0));
    }

    #[test]
    fn zero_diagonal_with_zero_weight_fixes_at_floor() {
        let p = BoxTraceLs {
            a_diag: vec![0.0, 1.0],
            b: vec![5.0, 2.0],
            w: vec![0.0, 1.0],
            r_lb: vec![1.0, 0.0],
            c_l: Some(0.0),
            c_u: Some(1.0),
        };
        let red = reduce_ls(&p).unwrap();
        assert_eq!(red.fixed(), vec![0]);
        assert_eq!(red.standard.b, vec![2.0]);
        let z = solve_general_ls(&p).unwrap();
        assert_eq!(z, vec![1.0, 1.0]);
    }

    #[test]
    fn unit_weight_operation_count() {
        let p = std(&[3.0, -1.0, 2.0, 0.5], &[1.0; 4], Some(0.0), Some(1.0));
        let s = solve_box_trace_ls(&p).unwrap();
        let n = 4u64;
        assert!(s.ops <= n * n + 7 * n + 1, "{}", s.ops);
        assert!((s.z.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
