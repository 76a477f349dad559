//! State containers, feasible-set membership and the matrix-free stiffness
//! operator `A(E) = sum_i sum_l B_il^T E_i B_il`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, FmoError, Result};

/// Tolerance used for every feasibility decision on material blocks.
pub const FEAS_TOL: f64 = 1e-9;

/// Quadratic forms in `[-QUAD_CLAMP, 0)` are treated as roundoff and clamped to zero.
pub const QUAD_CLAMP: f64 = 1e-12;

/// Negative quadratic forms below `-QUAD_CORRUPT` on a feasible state are an error.
pub const QUAD_CORRUPT: f64 = 1e-9;

/// Dense symmetric matrix of order `k`, stored as its packed upper triangle
/// (row-major: `(0,0), (0,1), .., (0,k-1), (1,1), ..`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymBlock {
    k: usize,
    packed: Vec<f64>,
}

#[inline]
fn packed_len(k: usize) -> usize {
    k * (k + 1) / 2
}

impl SymBlock {
    pub fn zeros(k: usize) -> Self {
        SymBlock {
            k,
            packed: vec![0.0; packed_len(k)],
        }
    }

    pub fn scaled_identity(k: usize, value: f64) -> Self {
        let mut b = SymBlock::zeros(k);
        for i in 0..k {
            b.set(i, i, value);
        }
        b
    }

    pub fn identity(k: usize) -> Self {
        SymBlock::scaled_identity(k, 1.0)
    }

    pub fn from_packed(k: usize, packed: Vec<f64>) -> Result<Self> {
        if packed.len() != packed_len(k) {
            return Err(mismatch("packed symmetric block", packed_len(k), packed.len()));
        }
        Ok(SymBlock { k, packed })
    }

    /// Builds a block from a square matrix using its symmetric part `(U + U^T)/2`.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(mismatch("square block", m.nrows(), m.ncols()));
        }
        let k = m.nrows();
        let mut b = SymBlock::zeros(k);
        for i in 0..k {
            for j in i..k {
                b.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        Ok(b)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut b = SymBlock::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            b.set(i, i, d);
        }
        b
    }

    /// `Q diag(omega) Q^T`.
    pub fn from_eigen(vectors: &DMatrix<f64>, omega: &[f64]) -> Self {
        let k = omega.len();
        let mut b = SymBlock::zeros(k);
        for i in 0..k {
            for j in i..k {
                let mut acc = 0.0;
                for (l, &w) in omega.iter().enumerate() {
                    acc += vectors[(i, l)] * w * vectors[(j, l)];
                }
                b.set(i, j, acc);
            }
        }
        b
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.k - i * i.saturating_sub(1) / 2 + (j - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[self.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let idx = self.index(i, j);
        self.packed[idx] = value;
    }

    pub fn trace(&self) -> f64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |i, j| self.get(i, j))
    }

    /// `out = self * v`.
    #[inline]
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        let k = self.k;
        for o in out.iter_mut().take(k) {
            *o = 0.0;
        }
        let mut idx = 0;
        for i in 0..k {
            let d = self.packed[idx];
            out[i] += d * v[i];
            idx += 1;
            for j in (i + 1)..k {
                let a = self.packed[idx];
                out[i] += a * v[j];
                out[j] += a * v[i];
                idx += 1;
            }
        }
    }

    /// `v^T self v`.
    #[inline]
    pub fn quad(&self, v: &[f64]) -> f64 {
        let k = self.k;
        let mut acc = 0.0;
        let mut idx = 0;
        for i in 0..k {
            acc += self.packed[idx] * v[i] * v[i];
            idx += 1;
            for j in (i + 1)..k {
                acc += 2.0 * self.packed[idx] * v[i] * v[j];
                idx += 1;
            }
        }
        acc
    }

    /// Frobenius inner product `tr(self * other)`.
    pub fn frob_dot(&self, other: &SymBlock) -> f64 {
        debug_assert_eq!(self.k, other.k);
        let mut acc = 0.0;
        let mut idx = 0;
        for i in 0..self.k {
            acc += self.packed[idx] * other.packed[idx];
            idx += 1;
            for _ in (i + 1)..self.k {
                acc += 2.0 * self.packed[idx] * other.packed[idx];
                idx += 1;
            }
        }
        acc
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.frob_dot(self)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &SymBlock) {
        for (a, b) in self.packed.iter_mut().zip(&other.packed) {
            *a += alpha * b;
        }
    }

    /// `self += alpha * v v^T`.
    #[inline]
    pub fn add_outer(&mut self, alpha: f64, v: &[f64]) {
        let mut idx = 0;
        for i in 0..self.k {
            let av = alpha * v[i];
            for j in i..self.k {
                self.packed[idx] += av * v[j];
                idx += 1;
            }
        }
    }

    pub fn add_identity(&mut self, alpha: f64) {
        for i in 0..self.k {
            let idx = self.index(i, i);
            self.packed[idx] += alpha;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.packed {
            *a *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|a| a.is_finite())
    }

    /// Symmetric eigendecomposition; eigenvalues in ascending order, eigenvectors as columns.
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.to_dense());
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(self.k, self.k, |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().0
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

/// The design variables: `m` symmetric `k x k` elasticity blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialState {
    pub blocks: Vec<SymBlock>,
}

impl MaterialState {
    pub fn new(blocks: Vec<SymBlock>) -> Self {
        MaterialState { blocks }
    }

    pub fn uniform(m: usize, block: SymBlock) -> Self {
        MaterialState {
            blocks: vec![block; m],
        }
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        MaterialState::uniform(m, SymBlock::zeros(k))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total cost `<I, E> = sum_i tr(E_i)`.
    pub fn total_trace(&self) -> f64 {
        self.blocks.iter().map(SymBlock::trace).sum()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.blocks.iter().map(SymBlock::frob_norm_sq).sum()
    }

    pub fn frob_dot(&self, other: &MaterialState) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.frob_dot(b))
            .sum()
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &MaterialState) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_scaled(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in &mut self.blocks {
            b.scale(alpha);
        }
    }
}

/// The scaled adjoint displacements `x_j`, one length-`N` vector per load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub vectors: Vec<Vec<f64>>,
}

impl DualState {
    pub fn zeros(loads: usize, n: usize) -> Self {
        DualState {
            vectors: vec![vec![0.0; n]; loads],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.vectors.iter().map(|v| dot(v, v)).sum()
    }
}

/// One strain operator `B_il`: a dense `k x cols.len()` block supported on the
/// listed global columns (sorted ascending). Values are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOperator {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl LocalOperator {
    pub fn new(k: usize, cols: Vec<usize>, vals: Vec<f64>) -> Result<Self> {
        if vals.len() != k * cols.len() {
            return Err(mismatch("local operator values", k * cols.len(), vals.len()));
        }
        if cols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FmoError::InvalidInstance(
                "local operator columns must be strictly increasing".into(),
            ));
        }
        Ok(LocalOperator { cols, vals })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        if self.cols.is_empty() {
            0
        } else {
            self.vals.len() / self.cols.len()
        }
    }

    /// `out = B v`, `out` has length `k`.
    #[inline]
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let nc = self.cols.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.vals[r * nc..(r + 1) * nc];
            let mut acc = 0.0;
            for (a, &c) in row.iter().zip(&self.cols) {
                acc += a * v[c];
            }
            *o = acc;
        }
    }

    /// `w += B^T p`.
    #[inline]
    pub fn apply_transpose_add(&self, p: &[f64], w: &mut [f64]) {
        let nc = self.cols.len();
        for (ci, &c) in self.cols.iter().enumerate() {
            let mut acc = 0.0;
            for (r, pr) in p.iter().enumerate() {
                acc += self.vals[r * nc + ci] * pr;
            }
            w[c] += acc;
        }
    }

    /// Entry `(row, local column index)`.
    #[inline]
    pub fn value(&self, row: usize, local_col: usize) -> f64 {
        self.vals[row * self.cols.len() + local_col]
    }
}

/// The `nig` strain operators of one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub operators: Vec<LocalOperator>,
}

/// A complete minimum-cost FMO problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    /// Block order (3 in 2D, 6 in 3D).
    pub k: usize,
    /// Number of free degrees of freedom.
    pub n: usize,
    pub elements: Vec<Element>,
    pub loads: Vec<Vec<f64>>,
    pub rho_l: Vec<f64>,
    pub rho_u: Vec<f64>,
    /// Eigenvalue floor.
    pub r: f64,
    /// Compliance cap.
    pub gamma: f64,
    /// Radius of the dual ball.
    pub eta: f64,
    /// Penalty weight; zero disables the penalty.
    pub nu: f64,
}

impl ProblemInstance {
    pub fn m(&self) -> usize {
        self.elements.len()
    }

    pub fn num_loads(&self) -> usize {
        self.loads.len()
    }

    /// Gauss points per element (taken from the first element).
    pub fn nig(&self) -> usize {
        self.elements.first().map_or(0, |e| e.operators.len())
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.k, 1..=6) {
            return Err(FmoError::InvalidInstance(format!(
                "block order k = {} unsupported",
                self.k
            )));
        }
        let m = self.m();
        if m == 0 {
            return Err(FmoError::InvalidInstance("no elements".into()));
        }
        if self.rho_l.len() != m {
            return Err(mismatch("rho_l", m, self.rho_l.len()));
        }
        if self.rho_u.len() != m {
            return Err(mismatch("rho_u", m, self.rho_u.len()));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(FmoError::InvalidInstance(format!("r = {} must be positive", self.r)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(FmoError::InvalidInstance(format!(
                "gamma = {} must be positive",
                self.gamma
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(FmoError::InvalidInstance(format!("eta = {} must be positive", self.eta)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(FmoError::InvalidInstance(format!("nu = {} must be >= 0", self.nu)));
        }
        let kr = self.k as f64 * self.r;
        for i in 0..m {
            let (lo, hi) = (self.rho_l[i], self.rho_u[i]);
            if !(lo.is_finite() && hi.is_finite() && kr <= lo && lo <= hi) {
                return Err(FmoError::InvalidInstance(format!(
                    "element {i}: need k*r <= rho_l <= rho_u, got k*r = {kr}, rho_l = {lo}, rho_u = {hi}"
                )));
            }
        }
        if self.loads.is_empty() {
            return Err(FmoError::InvalidInstance("no loads".into()));
        }
        for (j, f) in self.loads.iter().enumerate() {
            if f.len() != self.n {
                return Err(mismatch(format!("load {j}"), self.n, f.len()));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(FmoError::InvalidInstance(format!("load {j} has non-finite entries")));
            }
        }
        for (i, el) in self.elements.iter().enumerate() {
            if el.operators.is_empty() {
                return Err(FmoError::InvalidInstance(format!("element {i} has no operators")));
            }
            for (l, op) in el.operators.iter().enumerate() {
                if op.vals.len() != self.k * op.cols.len() {
                    return Err(mismatch(
                        format!("element {i} operator {l} values"),
                        self.k * op.cols.len(),
                        op.vals.len(),
                    ));
                }
                if op.cols.iter().any(|&c| c >= self.n) {
                    return Err(FmoError::InvalidInstance(format!(
                        "element {i} operator {l} references a column >= N = {}",
                        self.n
                    )));
                }
                if op.cols.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(FmoError::InvalidInstance(format!(
                        "element {i} operator {l} columns not strictly increasing"
                    )));
                }
                if op.vals.iter().any(|v| !v.is_finite()) {
                    return Err(FmoError::InvalidInstance(format!(
                        "element {i} operator {l} has non-finite entries"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that `e` has one block of order `k` per element.
    pub fn check_material(&self, e: &MaterialState) -> Result<()> {
        if e.blocks.len() != self.m() {
            return Err(mismatch("material block count", self.m(), e.blocks.len()));
        }
        for (i, b) in e.blocks.iter().enumerate() {
            if b.order() != self.k {
                return Err(mismatch(format!("order of material block {i}"), self.k, b.order()));
            }
        }
        Ok(())
    }

    pub fn check_vector(&self, v: &[f64], context: &str) -> Result<()> {
        if v.len() != self.n {
            return Err(mismatch(context, self.n, v.len()));
        }
        Ok(())
    }

    pub fn check_dual(&self, x: &DualState) -> Result<()> {
        if x.vectors.len() != self.num_loads() {
            return Err(mismatch("dual vector count", self.num_loads(), x.vectors.len()));
        }
        for (j, v) in x.vectors.iter().enumerate() {
            self.check_vector(v, &format!("dual vector {j}"))?;
        }
        Ok(())
    }

    /// Stacked Euclidean norm of all loads.
    pub fn load_norm(&self) -> f64 {
        self.loads.iter().map(|f| dot(f, f)).sum::<f64>().sqrt()
    }

    pub fn max_rho_u(&self) -> f64 {
        self.rho_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn total_rho_l(&self) -> f64 {
        self.rho_l.iter().sum()
    }

    pub fn total_rho_u(&self) -> f64 {
        self.rho_u.iter().sum()
    }
}

/// Floating point operation counter. `sparse` counts work on the stored
/// element-local support; `dense_model` counts the same operations as if every
/// `B_il` were a dense `k x N` matrix.
#[derive(Debug, Default)]
pub struct FlopCounter {
    sparse: AtomicU64,
    dense_model: AtomicU64,
}

impl FlopCounter {
    pub fn new() -> Self {
        FlopCounter::default()
    }

    #[inline]
    pub fn add(&self, sparse: u64, dense_model: u64) {
        self.sparse.fetch_add(sparse, Ordering::Relaxed);
        self.dense_model.fetch_add(dense_model, Ordering::Relaxed);
    }

    #[inline]
    pub fn add_both(&self, flops: u64) {
        self.add(flops, flops);
    }

    pub fn sparse(&self) -> u64 {
        self.sparse.load(Ordering::Relaxed)
    }

    pub fn dense_model(&self) -> u64 {
        self.dense_model.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> FlopSnapshot {
        FlopSnapshot {
            sparse: self.sparse(),
            dense_model: self.dense_model(),
        }
    }

    pub fn reset(&self) {
        self.sparse.store(0, Ordering::Relaxed);
        self.dense_model.store(0, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopSnapshot {
    pub sparse: u64,
    pub dense_model: u64,
}

impl std::ops::Sub for FlopSnapshot {
    type Output = FlopSnapshot;
    fn sub(self, rhs: FlopSnapshot) -> FlopSnapshot {
        FlopSnapshot {
            sparse: self.sparse - rhs.sparse,
            dense_model: self.dense_model - rhs.dense_model,
        }
    }
}

/// How per-element contributions to an `N`-vector are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reduction {
    /// Sequential element order; bit-reproducible.
    #[default]
    Ordered,
    /// Thread-parallel partial sums; summation order may vary between runs.
    Parallel,
}

/// Per-block feasibility diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockViolation {
    pub block: usize,
    pub trace: f64,
    pub lambda_min: f64,
    /// `tr(E_i) - rho_u` (positive when violated).
    pub trace_excess: f64,
    /// `rho_l - tr(E_i)` (positive when violated).
    pub trace_deficit: f64,
    /// `r - lambda_min(E_i)` (positive when violated).
    pub eigen_deficit: f64,
}

impl BlockViolation {
    pub fn worst(&self) -> f64 {
        self.trace_excess.max(self.trace_deficit).max(self.eigen_deficit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Violating blocks, worst first.
    pub violations: Vec<BlockViolation>,
}

/// Membership of `E` in the product of the sets `Q_k^(i)` (trace bounds and
/// eigenvalue floor), within [`FEAS_TOL`].
pub fn feasible_e(instance: &ProblemInstance, e: &MaterialState) -> Result<FeasibilityReport> {
    instance.check_material(e)?;
    let mut violations = Vec::new();
    for (i, block) in e.blocks.iter().enumerate() {
        let trace = block.trace();
        let lambda_min = block.lambda_min();
        let v = BlockViolation {
            block: i,
            trace,
            lambda_min,
            trace_excess: trace - instance.rho_u[i],
            trace_deficit: instance.rho_l[i] - trace,
            eigen_deficit: instance.r - lambda_min,
        };
        if v.worst() > FEAS_TOL {
            violations.push(v);
        }
    }
    violations.sort_by(|a, b| b.worst().total_cmp(&a.worst()).then(a.block.cmp(&b.block)));
    Ok(FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn element_apply(
    k: usize,
    el: &Element,
    block: &SymBlock,
    v: &[f64],
    w: &mut [f64],
    scratch: &mut [f64; 12],
) {
    let (bv, p) = scratch.split_at_mut(6);
    for op in &el.operators {
        op.apply_into(v, &mut bv[..k]);
        block.mul_vec_into(&bv[..k], &mut p[..k]);
        op.apply_transpose_add(&p[..k], w);
    }
}

fn apply_flops(instance: &ProblemInstance) -> (u64, u64) {
    let k = instance.k as u64;
    let n = instance.n as u64;
    let mut sparse = 0u64;
    let mut dense = 0u64;
    for el in &instance.elements {
        for op in &el.operators {
            sparse += 4 * k * op.width() as u64 + 2 * k * k;
            dense += 4 * k * n + 2 * k * k;
        }
    }
    (sparse, dense)
}

/// `A(E) v` without forming `A(E)`.
pub fn apply_a(
    instance: &ProblemInstance,
    e: &MaterialState,
    v: &[f64],
    flops: &FlopCounter,
) -> Result<Vec<f64>> {
    apply_a_with(instance, e, v, flops, Reduction::Ordered)
}

pub fn apply_a_with(
    instance: &ProblemInstance,
    e: &MaterialState,
    v: &[f64],
    flops: &FlopCounter,
    reduction: Reduction,
) -> Result<Vec<f64>> {
    instance.check_material(e)?;
    instance.check_vector(v, "apply_a input")?;
    let k = instance.k;
    let n = instance.n;
    let w = match reduction {
        Reduction::Ordered => {
            let mut w = vec![0.0; n];
            let mut scratch = [0.0; 12];
            for (el, block) in instance.elements.iter().zip(&e.blocks) {
                element_apply(k, el, block, v, &mut w, &mut scratch);
            }
            w
        }
        Reduction::Parallel => instance
            .elements
            .par_iter()
            .zip(e.blocks.par_iter())
            .fold(
                || (vec![0.0; n], [0.0; 12]),
                |(mut w, mut scratch), (el, block)| {
                    element_apply(k, el, block, v, &mut w, &mut scratch);
                    (w, scratch)
                },
            )
            .map(|(w, _)| w)
            .reduce(
                || vec![0.0; n],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    a
                },
            ),
    };
    let (sparse, dense) = apply_flops(instance);
    flops.add(sparse, dense);
    Ok(w)
}

/// `<A(E) v, v> = sum_i sum_l <E_i B_il v, B_il v>`.
///
/// Values in `[-1e-12, 0)` are clamped to zero. A value below `-1e-9` is an
/// error when `E` is feasible; for infeasible `E` the raw value is returned.
pub fn quad_a(
    instance: &ProblemInstance,
    e: &MaterialState,
    v: &[f64],
    flops: &FlopCounter,
) -> Result<f64> {
    instance.check_material(e)?;
    instance.check_vector(v, "quad_a input")?;
    let raw = quad_a_raw(instance, e, v, flops);
    classify_quad(instance, e, raw)
}

pub(crate) fn quad_a_raw(
    instance: &ProblemInstance,
    e: &MaterialState,
    v: &[f64],
    flops: &FlopCounter,
) -> f64 {
    let k = instance.k;
    let kk = k as u64;
    let mut bv = [0.0; 6];
    let mut acc = 0.0;
    let mut sparse = 0u64;
    for (el, block) in instance.elements.iter().zip(&e.blocks) {
        for op in &el.operators {
            op.apply_into(v, &mut bv[..k]);
            acc += block.quad(&bv[..k]);
            sparse += 2 * kk * op.width() as u64 + 2 * kk * kk + 2 * kk;
        }
    }
    let nig_total: u64 = instance.elements.iter().map(|e| e.operators.len() as u64).sum();
    let dense = nig_total * (2 * kk * instance.n as u64 + 2 * kk * kk + 2 * kk);
    flops.add(sparse, dense);
    acc
}

pub(crate) fn classify_quad(instance: &ProblemInstance, e: &MaterialState, raw: f64) -> Result<f64> {
    if raw >= 0.0 {
        return Ok(raw);
    }
    if raw >= -QUAD_CLAMP {
        return Ok(0.0);
    }
    if raw < -QUAD_CORRUPT && feasible_e(instance, e)?.feasible {
        return Err(FmoError::NegativeQuadratic { value: raw });
    }
    Ok(raw)
}
