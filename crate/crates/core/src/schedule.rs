//! The shifting sequence that drives both diffusion directions.
//!
//! `betas[t-1]` holds the cumulative shift at step `t` and `alphas[t-1]` the
//! per-step increment `beta_t - beta_{t-1}` with `beta_0 = 0`. The interior
//! points follow the geometric growth law
//!
//! ```text
//! sqrt(beta_t) = sqrt(beta_1) * exp( 0.5 * ((t-1)/(N-1))^p * ln(beta_N / beta_1) )
//! ```
//!
//! which meets `sqrt(beta_1)` at `t = 1` and `sqrt(beta_N)` at `t = N`. The
//! endpoints themselves are stored verbatim.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_P: f64 = 0.3;
pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_BETA_N: f64 = 0.999;
pub const DEFAULT_TRAIN_STEPS: usize = 20;
pub const DEFAULT_SAMPLE_STEPS: usize = 4;

/// `beta_1 = (0.04 / gamma)^2`, so that the first-step noise level is 0.04.
pub fn default_beta_1(gamma: f64) -> f64 {
    (0.04 / gamma).powi(2)
}

/// Hyperparameters that fix a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n_steps: usize,
    pub p: f64,
    pub gamma: f64,
    pub beta_1: f64,
    pub beta_n: f64,
}

impl ScheduleParams {
    pub fn with_defaults(n_steps: usize) -> Self {
        ScheduleParams {
            n_steps,
            p: DEFAULT_P,
            gamma: DEFAULT_GAMMA,
            beta_1: default_beta_1(DEFAULT_GAMMA),
            beta_n: DEFAULT_BETA_N,
        }
    }

    pub fn with_steps(self, n_steps: usize) -> Self {
        ScheduleParams { n_steps, ..self }
    }

    pub fn build(&self) -> Result<Schedule> {
        build_schedule(self.n_steps, self.p, self.gamma, self.beta_1, self.beta_n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    n_steps: usize,
    p: f64,
    gamma: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
}

pub fn build_schedule(n_steps: usize, p: f64, gamma: f64, beta_1: f64, beta_n: f64) -> Result<Schedule> {
    if n_steps < 2 {
        return Err(Error::invalid(format!("n_steps must be >= 2, got {n_steps}")));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p must be positive, got {p}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    if !(beta_1 > 0.0 && beta_1 < beta_n && beta_n < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_1 < beta_n < 1, got beta_1={beta_1}, beta_n={beta_n}"
        )));
    }

    let log_ratio = (beta_n / beta_1).ln();
    let sqrt_b1 = beta_1.sqrt();
    let last = (n_steps - 1) as f64;
    let mut betas = Vec::with_capacity(n_steps);
    betas.push(beta_1);
    for t in 2..n_steps {
        let frac = ((t - 1) as f64 / last).powf(p);
        let root = sqrt_b1 * (0.5 * frac * log_ratio).exp();
        betas.push(root * root);
    }
    betas.push(beta_n);

    if let Some(i) = betas.windows(2).position(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "schedule not strictly increasing at step {}",
            i + 2
        )));
    }

    let alphas = std::iter::once(beta_1)
        .chain(betas.windows(2).map(|w| w[1] - w[0]))
        .collect();

    Ok(Schedule {
        n_steps,
        p,
        gamma,
        betas,
        alphas,
    })
}

impl Schedule {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            n_steps: self.n_steps,
            p: self.p,
            gamma: self.gamma,
            beta_1: self.betas[0],
            beta_n: self.betas[self.n_steps - 1],
        }
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.n_steps {
            return Err(Error::StepOutOfRange { t, n: self.n_steps });
        }
        Ok(())
    }

    /// Cumulative shift at step `t`, with `beta(0) = 0`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(if t == 0 { 0.0 } else { self.betas[t - 1] })
    }

    /// Increment at step `t >= 1`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        if t == 0 {
            return Err(Error::StepOutOfRange { t, n: self.n_steps });
        }
        Ok(self.alphas[t - 1])
    }

    /// Marginal standard deviation `gamma * sqrt(beta_t)`.
    pub fn noise_stddev(&self, t: usize) -> Result<f64> {
        Ok(self.gamma * self.beta(t)?.sqrt())
    }
}
