//! Primal-dual subgradient (dual averaging) steps on `F(E, x)`.

pub mod schedule;
pub mod subgrad;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{gap_estimate, theoretical_gap_bound, BoundConstants, GapEstimate};
use crate::error::{FmoError, Result};
use crate::model::{dot, DualState, FlopCounter, MaterialState, ProblemInstance, Reduction, SymBlock};
use crate::penalty::{PenaltyState, DEFAULT_DENSE_THRESHOLD};
use crate::proj::spectral::update_eigenvalues;

pub use schedule::{
    dual_norm_sq, step_weight, test_step_budget, BetaHat, Scheme, SigmaController, SigmaPhase,
    StepSchedule,
};
pub use subgrad::{in_r, lagrangian_value, quad_forms, subgradients, Subgradients, R_THRESHOLD};

/// Dual sums and the running quantities needed for gap estimation and averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAccumulators {
    /// `sum_l alpha_l g_E^(l)`.
    pub s_e: MaterialState,
    /// `-sum_l alpha_l g_x^(l)`.
    pub s_x: DualState,
    pub sum_alpha: f64,
    pub sum_ge_dot_e: f64,
    pub sum_gx_dot_x: f64,
    /// `sum_l alpha_l E^(l)`.
    pub e_avg_accum: MaterialState,
    /// `sum_l alpha_l x^(l)`.
    pub x_avg_accum: DualState,
    /// `(lambda_min, trace)` of each `s^E_i`, refreshed by every E-update.
    pub s_e_spectrum: Vec<(f64, f64)>,
}

impl DualAccumulators {
    pub fn new(instance: &ProblemInstance) -> Self {
        let m = instance.m();
        let k = instance.k;
        let loads = instance.num_loads();
        DualAccumulators {
            s_e: MaterialState::zeros(m, k),
            s_x: DualState::zeros(loads, instance.n),
            sum_alpha: 0.0,
            sum_ge_dot_e: 0.0,
            sum_gx_dot_x: 0.0,
            e_avg_accum: MaterialState::zeros(m, k),
            x_avg_accum: DualState::zeros(loads, instance.n),
            s_e_spectrum: vec![(0.0, 0.0); m],
        }
    }
}

/// `Ê = (1 / sum alpha) sum alpha_l E^(l)`.
pub fn averaged_primal(acc: &DualAccumulators) -> Result<MaterialState> {
    if acc.sum_alpha <= 0.0 {
        return Err(FmoError::NoIterates);
    }
    let mut e = acc.e_avg_accum.clone();
    e.scale(1.0 / acc.sum_alpha);
    Ok(e)
}

/// `x̂ = (1 / sum alpha) sum alpha_l x^(l)`.
pub fn averaged_dual(acc: &DualAccumulators) -> Result<DualState> {
    if acc.sum_alpha <= 0.0 {
        return Err(FmoError::NoIterates);
    }
    let inv = 1.0 / acc.sum_alpha;
    Ok(DualState {
        vectors: acc
            .x_avg_accum
            .vectors
            .iter()
            .map(|v| v.iter().map(|a| a * inv).collect())
            .collect(),
    })
}

/// `E_0 = (rho_u / k) I` per block and `x_0` constant with `||x_0j|| = eta`.
pub fn starting_point(instance: &ProblemInstance) -> (MaterialState, DualState) {
    let k = instance.k;
    let e = MaterialState::new(
        instance
            .rho_u
            .iter()
            .map(|&u| SymBlock::scaled_identity(k, u / k as f64))
            .collect(),
    );
    let c = instance.eta / (instance.n as f64).sqrt();
    let x = DualState {
        vectors: vec![vec![c; instance.n]; instance.num_loads()],
    };
    (e, x)
}

/// `x_j = -min(eta / ||s_j||, 1 / (beta (1 - tau))) s_j`.
pub fn update_dual_vector(s: &[f64], beta: f64, tau: f64, eta: f64, out: &mut [f64]) {
    let ns = dot(s, s).sqrt();
    if ns == 0.0 {
        out.iter_mut().for_each(|a| *a = 0.0);
        return;
    }
    let c = (eta / ns).min(1.0 / (beta * (1.0 - tau)));
    for (o, si) in out.iter_mut().zip(s) {
        *o = -c * si;
    }
}

/// Gradient used for the `E` side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Subgradients of `F`.
    #[default]
    Plain,
    /// Gradient of the penalized Lagrangian (dense factorization per step).
    Penalty,
}

impl std::str::FromStr for Mode {
    type Err = FmoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Mode::Plain),
            "penalty" => Ok(Mode::Penalty),
            other => Err(FmoError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub mode: Mode,
    pub reduction: Reduction,
    /// Solve the per-block E-subproblems on the thread pool.
    pub parallel_blocks: bool,
    pub dense_threshold: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            mode: Mode::Plain,
            reduction: Reduction::Ordered,
            parallel_blocks: false,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub alpha: f64,
    /// `beta_{t+1}` used for the new iterate.
    pub beta: f64,
    pub norm_e_sq: f64,
    pub norm_x_sq: f64,
    /// Loads outside `R` at the old iterate.
    pub outside_r: usize,
}

fn block_flops(k: usize) -> u64 {
    let k = k as u64;
    // eigendecomposition and recomposition of one block
    12 * k * k * k
}

/// One dual averaging step from `(E^(t), x^(t))`. Updates `E`, `x`, the
/// accumulators and the schedule in place.
pub fn da_step(
    instance: &ProblemInstance,
    acc: &mut DualAccumulators,
    schedule: &mut StepSchedule,
    e: &mut MaterialState,
    x: &mut DualState,
    options: &StepOptions,
    flops: &FlopCounter,
) -> Result<StepInfo> {
    let mut g = subgradients(instance, e, x, flops, options.reduction)?;
    if options.mode == Mode::Penalty && instance.nu > 0.0 {
        let st = PenaltyState::new(instance, e, options.dense_threshold, Some(flops))?;
        st.add_gradient(instance, &mut g.g_e, Some(flops));
    }
    let norm_e_sq = g.norm_e_sq();
    let norm_x_sq = g.norm_x_sq();
    let alpha = step_weight(schedule.scheme, norm_e_sq, norm_x_sq, schedule.tau);

    acc.e_avg_accum.add_scaled(alpha, e);
    for (a, xj) in acc.x_avg_accum.vectors.iter_mut().zip(&x.vectors) {
        for (p, q) in a.iter_mut().zip(xj) {
            *p += alpha * q;
        }
    }
    acc.sum_alpha += alpha;
    acc.sum_ge_dot_e += alpha * g.g_e.frob_dot(e);
    let gx_dot_x: f64 = g.g_x.vectors.iter().zip(&x.vectors).map(|(a, b)| dot(a, b)).sum();
    acc.sum_gx_dot_x += alpha * gx_dot_x;

    acc.s_e.add_scaled(alpha, &g.g_e);
    for (s, gj) in acc.s_x.vectors.iter_mut().zip(&g.g_x.vectors) {
        for (p, q) in s.iter_mut().zip(gj) {
            *p -= alpha * q;
        }
    }

    let beta = schedule.advance();
    let tau = schedule.tau;
    for (xj, sj) in x.vectors.iter_mut().zip(&acc.s_x.vectors) {
        update_dual_vector(sj, beta, tau, instance.eta, xj);
    }

    let bt = beta * tau;
    let r = instance.r;
    let solve = |i: usize, s: &SymBlock| -> Result<(SymBlock, (f64, f64))> {
        let (lambda, q) = s.eigen();
        let omega = update_eigenvalues(&lambda, bt, instance.rho_l[i], instance.rho_u[i], r)?;
        Ok((SymBlock::from_eigen(&q, &omega), (lambda[0], s.trace())))
    };
    let updated: Vec<(SymBlock, (f64, f64))> = if options.parallel_blocks {
        acc.s_e.blocks.par_iter().enumerate().map(|(i, s)| solve(i, s)).collect::<Result<_>>()?
    } else {
        acc.s_e.blocks.iter().enumerate().map(|(i, s)| solve(i, s)).collect::<Result<_>>()?
    };
    for (i, (block, spec)) in updated.into_iter().enumerate() {
        e.blocks[i] = block;
        acc.s_e_spectrum[i] = spec;
    }

    let m = instance.m() as u64;
    let packed = (instance.k * (instance.k + 1) / 2) as u64;
    let nl = (instance.n * instance.num_loads()) as u64;
    flops.add_both(m * (block_flops(instance.k) + 6 * packed) + 8 * nl);

    Ok(StepInfo {
        alpha,
        beta,
        norm_e_sq,
        norm_x_sq,
        outside_r: g.in_r.iter().filter(|&&b| !b).count(),
    })
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub mode: Mode,
    pub tau: f64,
    pub sigma0: f64,
    /// Steps per autotune window; 0 disables autotuning.
    pub autotune_window: usize,
    pub reduction: Reduction,
    pub parallel_blocks: bool,
    pub dense_threshold: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::Simple,
            mode: Mode::Plain,
            tau: 0.5,
            sigma0: 1.0,
            autotune_window: 0,
            reduction: Reduction::Ordered,
            parallel_blocks: false,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
        }
    }
}

/// Per-step record. `t` counts completed steps; the gap refers to the
/// averages over `E^(0..t-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    /// `<I, E^(t)>` of the newest iterate.
    pub objective_current: f64,
    pub gap: GapEstimate,
    pub theoretical_bound: Option<f64>,
    /// `||(g_E, g_x)||_*`.
    pub grad_dual_norm: f64,
    pub outside_r: usize,
}

/// Dual averaging driver holding the iterate, accumulators and schedule.
pub struct Solver<'a> {
    pub instance: &'a ProblemInstance,
    pub config: SolverConfig,
    pub e: MaterialState,
    pub x: DualState,
    pub acc: DualAccumulators,
    pub schedule: StepSchedule,
    pub flops: FlopCounter,
    controller: Option<SigmaController>,
    constants: Option<BoundConstants>,
    options: StepOptions,
}

impl<'a> Solver<'a> {
    /// Starts from [`starting_point`].
    pub fn new(instance: &'a ProblemInstance, config: SolverConfig) -> Result<Self> {
        let (e, x) = starting_point(instance);
        Self::with_start(instance, config, e, x)
    }

    pub fn with_start(
        instance: &'a ProblemInstance,
        config: SolverConfig,
        e: MaterialState,
        x: DualState,
    ) -> Result<Self> {
        instance.validate()?;
        instance.check_material(&e)?;
        instance.check_dual(&x)?;
        if config.mode == Mode::Penalty && instance.n > config.dense_threshold {
            return Err(FmoError::DenseThreshold {
                n: instance.n,
                threshold: config.dense_threshold,
            });
        }
        let schedule = StepSchedule::new(config.scheme, config.tau, config.sigma0)?;
        let controller = match config.autotune_window {
            0 => None,
            w => Some(SigmaController::new(config.sigma0, w)?),
        };
        let options = StepOptions {
            mode: config.mode,
            reduction: config.reduction,
            parallel_blocks: config.parallel_blocks,
            dense_threshold: config.dense_threshold,
        };
        Ok(Solver {
            instance,
            acc: DualAccumulators::new(instance),
            config,
            e,
            x,
            schedule,
            flops: FlopCounter::new(),
            controller,
            constants: None,
            options,
        })
    }

    /// Enables theoretical bounds in records and the autotune step budget.
    pub fn with_constants(mut self, constants: BoundConstants) -> Self {
        if let Some(c) = self.controller.take() {
            let lip = match self.config.scheme {
                Scheme::Simple => constants.lipschitz(self.config.tau),
                Scheme::Weighted => 1.0,
            };
            self.controller = Some(c.with_budget(lip, constants.d(self.config.tau)));
        }
        self.constants = Some(constants);
        self
    }

    pub fn constants(&self) -> Option<&BoundConstants> {
        self.constants.as_ref()
    }

    pub fn controller(&self) -> Option<&SigmaController> {
        self.controller.as_ref()
    }

    pub fn iterations(&self) -> u64 {
        self.schedule.t()
    }

    pub fn step(&mut self) -> Result<IterationRecord> {
        let info = da_step(
            self.instance,
            &mut self.acc,
            &mut self.schedule,
            &mut self.e,
            &mut self.x,
            &self.options,
            &self.flops,
        )?;
        let t = self.schedule.t();
        let gap = gap_estimate(&self.acc, self.instance)?;
        let theoretical_bound = self
            .constants
            .as_ref()
            .map(|c| theoretical_gap_bound(c, t - 1, self.config.scheme, None).value);
        let sigma_used = self.schedule.sigma;
        if let Some(c) = self.controller.as_mut() {
            if let Some(s) = c.observe(gap.total) {
                self.schedule.sigma = s;
            }
            if let Some(b) = c.budget() {
                debug_assert!(c.test_steps() <= b);
            }
        }
        Ok(IterationRecord {
            t,
            alpha: info.alpha,
            beta: info.beta,
            sigma: sigma_used,
            objective_current: self.e.total_trace(),
            gap,
            theoretical_bound,
            grad_dual_norm: dual_norm_sq(info.norm_e_sq, info.norm_x_sq, self.config.tau).sqrt(),
            outside_r: info.outside_r,
        })
    }

    /// Runs `iters` steps, passing every record to `sink`.
    pub fn run<F>(&mut self, iters: u64, mut sink: F) -> Result<()>
    where
        F: FnMut(&Self, &IterationRecord) -> Result<()>,
    {
        for _ in 0..iters {
            let rec = self.step()?;
            sink(self, &rec)?;
        }
        Ok(())
    }

    pub fn averaged_primal(&self) -> Result<MaterialState> {
        averaged_primal(&self.acc)
    }

    pub fn averaged_dual(&self) -> Result<DualState> {
        averaged_dual(&self.acc)
    }
}
