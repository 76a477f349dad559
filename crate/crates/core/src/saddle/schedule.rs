//! Step weights, the `beta` sequence and the adaptive choice of `sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{FmoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// `alpha_t = 1`.
    #[default]
    Simple,
    /// `alpha_t = 1 / ||(g_E, g_x)||_*`.
    Weighted,
}

impl std::str::FromStr for Scheme {
    type Err = FmoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Scheme::Simple),
            "weighted" => Ok(Scheme::Weighted),
            other => Err(FmoError::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

/// `beta_hat_0 = beta_hat_1 = 1`, `beta_hat_{t+1} = beta_hat_t + 1 / beta_hat_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaHat {
    t: u64,
    value: f64,
}

impl Default for BetaHat {
    fn default() -> Self {
        BetaHat { t: 0, value: 1.0 }
    }
}

impl BetaHat {
    pub fn index(&self) -> u64 {
        self.t
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn advance(&mut self) -> f64 {
        if self.t >= 1 {
            self.value += 1.0 / self.value;
        }
        self.t += 1;
        self.value
    }

    /// `beta_hat_t` by running the recurrence.
    pub fn at(t: u64) -> f64 {
        let mut b = BetaHat::default();
        while b.t < t {
            b.advance();
        }
        b.value
    }
}

/// Dual-norm weight of a subgradient pair: `||g_E||^2 / tau + ||g_x||^2 / (1 - tau)`.
pub fn dual_norm_sq(norm_e_sq: f64, norm_x_sq: f64, tau: f64) -> f64 {
    norm_e_sq / tau + norm_x_sq / (1.0 - tau)
}

pub fn step_weight(scheme: Scheme, norm_e_sq: f64, norm_x_sq: f64, tau: f64) -> f64 {
    match scheme {
        Scheme::Simple => 1.0,
        Scheme::Weighted => 1.0 / dual_norm_sq(norm_e_sq, norm_x_sq, tau).sqrt(),
    }
}

/// Scheme, `tau`, `sigma` and the running `beta_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub scheme: Scheme,
    pub tau: f64,
    pub sigma: f64,
    beta_hat: BetaHat,
}

impl StepSchedule {
    pub fn new(scheme: Scheme, tau: f64, sigma: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(FmoError::InvalidConfig(format!("tau = {tau} must lie in (0, 1)")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(FmoError::InvalidConfig(format!("sigma = {sigma} must be positive")));
        }
        Ok(StepSchedule {
            scheme,
            tau,
            sigma,
            beta_hat: BetaHat::default(),
        })
    }

    /// Number of completed steps.
    pub fn t(&self) -> u64 {
        self.beta_hat.index()
    }

    pub fn beta_hat(&self) -> f64 {
        self.beta_hat.value()
    }

    /// Moves to `beta_{t+1} = sigma * beta_hat_{t+1}` and returns it.
    pub fn advance(&mut self) -> f64 {
        self.sigma * self.beta_hat.advance()
    }

    pub fn beta(&self) -> f64 {
        self.sigma * self.beta_hat.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaPhase {
    Growing,
    Frozen,
}

/// Doubles `sigma` once per window of `w` steps while the convergence rate
/// improves; on the first degradation halves it once and freezes.
///
/// The rate of a window is the relative decrease `(first - last) / first` of
/// the gap samples observed during that window.
#[derive(Debug, Clone)]
pub struct SigmaController {
    pub sigma0: f64,
    pub window: usize,
    sigma: f64,
    doublings: u32,
    phase: SigmaPhase,
    budget: Option<usize>,
    steps: usize,
    window_first: Option<f64>,
    window_last: f64,
    rates: Vec<f64>,
}

impl SigmaController {
    pub fn new(sigma0: f64, window: usize) -> Result<Self> {
        if window < 10 {
            return Err(FmoError::InvalidConfig(format!(
                "autotune window {window} must be at least 10"
            )));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(FmoError::InvalidConfig(format!("sigma0 = {sigma0} must be positive")));
        }
        Ok(SigmaController {
            sigma0,
            window,
            sigma: sigma0,
            doublings: 0,
            phase: SigmaPhase::Growing,
            budget: None,
            steps: 0,
            window_first: None,
            window_last: f64::NAN,
            rates: Vec::new(),
        })
    }

    /// Caps the number of test steps at `ceil(5/2 + log2(lip / (sigma0 sqrt(d)))) * w`.
    pub fn with_budget(mut self, lip: f64, d: f64) -> Self {
        self.budget = Some(test_step_budget(self.sigma0, self.window, lip, d));
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn phase(&self) -> SigmaPhase {
        self.phase
    }

    pub fn is_frozen(&self) -> bool {
        self.phase == SigmaPhase::Frozen
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn windows_consumed(&self) -> usize {
        self.rates.len()
    }

    pub fn test_steps(&self) -> usize {
        self.steps
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    /// Feeds the gap sample of one step. Returns the new `sigma` when it changes.
    pub fn observe(&mut self, gap: f64) -> Option<f64> {
        if self.is_frozen() {
            return None;
        }
        self.steps += 1;
        if self.window_first.is_none() {
            self.window_first = Some(gap);
        }
        self.window_last = gap;
        if !self.steps.is_multiple_of(self.window) {
            return None;
        }
        let first = self.window_first.take().unwrap();
        let rate = if first > 0.0 {
            (first - self.window_last) / first
        } else {
            0.0
        };
        self.rates.push(rate);
        let degraded = self.rates.len() >= 2 && rate < self.rates[self.rates.len() - 2];
        if degraded && self.doublings > 0 {
            self.doublings -= 1;
            self.sigma /= 2.0;
            self.phase = SigmaPhase::Frozen;
            log::info!("sigma frozen at {} after {} windows", self.sigma, self.rates.len());
            return Some(self.sigma);
        }
        if self.budget.is_some_and(|b| self.steps >= b) {
            self.phase = SigmaPhase::Frozen;
            log::info!("sigma test budget exhausted; frozen at {}", self.sigma);
            return None;
        }
        self.doublings += 1;
        self.sigma *= 2.0;
        Some(self.sigma)
    }
}

/// `ceil(5/2 + log2(lip / (sigma0 sqrt(d)))) * w`, at least one window.
pub fn test_step_budget(sigma0: f64, window: usize, lip: f64, d: f64) -> usize {
    let windows = (2.5 + (lip / (sigma0 * d.sqrt())).log2()).ceil();
    let windows = if windows.is_finite() { windows.max(1.0) } else { 1.0 };
    windows as usize * window
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_hat_start() {
        assert_eq!(BetaHat::at(0), 1.0);
        assert_eq!(BetaHat::at(1), 1.0);
        assert_eq!(BetaHat::at(2), 2.0);
        assert_eq!(BetaHat::at(3), 2.5);
    }

    #[test]
    fn weighted_step_normalizes() {
        let (ne, nx, tau) = (3.0, 5.0, 0.25);
        let a = step_weight(Scheme::Weighted, ne, nx, tau);
        assert!((a * dual_norm_sq(ne, nx, tau).sqrt() - 1.0).abs() < 1e-15);
        assert_eq!(step_weight(Scheme::Simple, ne, nx, tau), 1.0);
    }

    fn feed_window(c: &mut SigmaController, rate: f64) -> Option<f64> {
        let mut out = None;
        for s in 0..c.window {
            let gap = 1.0 - rate * s as f64 / (c.window - 1) as f64;
            if let Some(v) = c.observe(gap) {
                out = Some(v);
            }
        }
        out
    }

    #[test]
    fn three_improvements_then_degradation() {
        let mut c = SigmaController::new(1.0, 10).unwrap();
        for rate in [0.1, 0.2, 0.3] {
            feed_window(&mut c, rate);
            assert!(!c.is_frozen());
        }
        feed_window(&mut c, 0.25);
        assert!(c.is_frozen());
        assert_eq!(c.sigma(), 4.0);
        assert_eq!(c.windows_consumed(), 4);
    }

    #[test]
    fn immediate_degradation_keeps_sigma0() {
        let mut c = SigmaController::new(0.5, 10).unwrap();
        feed_window(&mut c, 0.3);
        feed_window(&mut c, 0.1);
        assert!(c.is_frozen());
        assert_eq!(c.sigma(), 0.5);
    }

    #[test]
    fn budget_forces_freeze() {
        let mut c = SigmaController::new(1.0, 10).unwrap().with_budget(1.0, 1.0);
        // ceil(2.5 + 0) = 3 windows
        assert_eq!(c.budget(), Some(30));
        for rate in [0.1, 0.2, 0.3, 0.4, 0.5] {
            feed_window(&mut c, rate);
        }
        assert!(c.is_frozen());
        assert!(c.test_steps() <= 30);
    }

    #[test]
    fn small_window_rejected() {
        assert!(SigmaController::new(1.0, 5).is_err());
    }
}
