//! Noise schedules.
//!
//! The `(alpha_t, sigma_t)` pair over continuous time `t in [0, T]` that
//! defines the forward perturbation `x_t = alpha_t * x + sigma_t * eps` and
//! everything downstream of it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// alpha = cos(pi t / 2T), sigma = sin(pi t / 2T); alpha^2 + sigma^2 = 1.
    VariancePreserving,
    /// alpha = 1, sigma = t.
    EdmStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    /// Terminal time.
    pub terminal: f64,
}

impl NoiseSchedule {
    pub fn variance_preserving() -> Self {
        Self {
            kind: ScheduleKind::VariancePreserving,
            terminal: 1.0,
        }
    }

    pub fn edm(terminal_sigma: f64) -> Self {
        Self {
            kind: ScheduleKind::EdmStyle,
            terminal: terminal_sigma,
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.terminal).contains(&t) {
            return Err(Error::Domain(format!(
                "t = {t} outside schedule domain [0, {}]",
                self.terminal
            )));
        }
        Ok(())
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VariancePreserving => (FRAC_PI_2 * t / self.terminal).cos(),
            ScheduleKind::EdmStyle => 1.0,
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VariancePreserving => (FRAC_PI_2 * t / self.terminal).sin(),
            ScheduleKind::EdmStyle => t,
        }
    }

    /// Inverse of `sigma`; exact per schedule kind.
    pub fn time_for_sigma(&self, sigma: f64) -> f64 {
        match self.kind {
            ScheduleKind::VariancePreserving => {
                self.terminal * sigma.clamp(0.0, 1.0).asin() / FRAC_PI_2
            }
            ScheduleKind::EdmStyle => sigma,
        }
    }

    /// Descending time grid with `n` steps, uniform in sigma, from `t_start`
    /// down to exactly 0. Returns `n + 1` times: `t_start, ..., 0`.
    pub fn sigma_uniform_times(&self, t_start: f64, n: usize) -> Vec<f64> {
        let sigma_start = self.sigma(t_start);
        (0..=n)
            .map(|i| {
                if i == n {
                    0.0
                } else if i == 0 {
                    t_start
                } else {
                    self.time_for_sigma(sigma_start * (n - i) as f64 / n as f64)
                }
            })
            .collect()
    }
}
