//! Temperature relaxation of the step indicator `1{x > 0}` and the annealing
//! schedules for the temperature and the KL weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A temperature in the open interval `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::Domain(format!("temperature must lie in (0, 1), got {tau}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `softplus(a) = log(1 + e^a)` without overflow.
pub fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `1 / (1 + exp(-x / tau) * (1 / tau - 1))`, so that `sigma_tau(0) = tau`.
pub fn sigma_tau(x: f64, tau: Temperature) -> f64 {
    let t = tau.get();
    let e = (-x / t).exp();
    if e.is_finite() {
        1.0 / (1.0 + e * (1.0 / t - 1.0))
    } else {
        log_sigma_tau(x, tau).exp()
    }
}

/// Logit offset `log((1 - tau) / tau)` shared by the stable forms.
fn offset(t: f64) -> f64 {
    ((1.0 - t) / t).ln()
}

/// `log sigma_tau(x)` computed as `-softplus(log((1 - tau) / tau) - x / tau)`;
/// finite for arbitrarily negative `x`.
pub fn log_sigma_tau(x: f64, tau: Temperature) -> f64 {
    let t = tau.get();
    -softplus(offset(t) - x / t)
}

/// `d/dx log sigma_tau(x) = (1 - sigma_tau(x)) / tau`.
pub fn log_sigma_tau_grad(x: f64, tau: Temperature) -> f64 {
    let t = tau.get();
    sigmoid(offset(t) - x / t) / t
}

/// The point where `sigma_tau` crosses one half: `tau * log(1 / tau - 1)`.
pub fn delta_half(tau: Temperature) -> f64 {
    let t = tau.get();
    t * (1.0 / t - 1.0).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Linear,
    LogLinear,
}

fn default_clamp() -> bool {
    true
}

/// Per-epoch annealing plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub mode: ScheduleMode,
    #[serde(default = "default_clamp")]
    pub clamp: bool,
}

impl Schedule {
    pub fn linear(start: f64, end: f64, start_epoch: usize, end_epoch: usize) -> Self {
        Self {
            start,
            end,
            start_epoch,
            end_epoch,
            mode: ScheduleMode::Linear,
            clamp: true,
        }
    }

    pub fn log_linear(start: f64, end: f64, start_epoch: usize, end_epoch: usize) -> Self {
        Self {
            mode: ScheduleMode::LogLinear,
            ..Self::linear(start, end, start_epoch, end_epoch)
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::linear(value, value, 0, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_epoch >= self.end_epoch {
            return Err(Error::Config(format!(
                "schedule start_epoch {} must precede end_epoch {}",
                self.start_epoch, self.end_epoch
            )));
        }
        if !(self.start.is_finite() && self.end.is_finite()) {
            return Err(Error::Config("schedule endpoints must be finite".into()));
        }
        if self.mode == ScheduleMode::LogLinear && (self.start <= 0.0 || self.end <= 0.0) {
            return Err(Error::Config(format!(
                "log-linear schedule needs positive endpoints, got {} and {}",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn value(&self, epoch: usize) -> Result<f64> {
        self.validate()?;
        if epoch <= self.start_epoch {
            return Ok(self.start);
        }
        if epoch >= self.end_epoch && self.clamp {
            return Ok(self.end);
        }
        let frac = (epoch - self.start_epoch) as f64 / (self.end_epoch - self.start_epoch) as f64;
        Ok(match self.mode {
            ScheduleMode::Linear => self.start + (self.end - self.start) * frac,
            ScheduleMode::LogLinear => {
                let (a, b) = (self.start.ln(), self.end.ln());
                (a + (b - a) * frac).exp()
            }
        })
    }
}
