//! Bounded-support proposal kernels.
//!
//! A proposal is a factorized location-scale family
//! `q(z | mu, sigma) = prod_i K((z_i - mu_i) / sigma_i) / sigma_i` where `K` is
//! one of the symmetric kernels below. All bounded kernels vanish outside
//! `[-1, 1]`, so the proposal support is `[mu - sigma, mu + sigma]`.
//!
//! The KL divergence of every kernel against `N(0, 1)` has the form
//! `mu^2 / 2 + c * sigma^2 - log(sigma) + const`, and against `U[-1, 1]` the
//! form `const - log(sigma)`.

use std::collections::VecDeque;
use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible bandwidth after squashing or softplus.
pub const SIGMA_FLOOR: f64 = 1e-6;

fn half_ln_2pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Uniform,
    Triangular,
    Epanechnikov,
    Quartic,
    Triweight,
    Tricube,
    Cosine,
    Gaussian,
}

impl Kernel {
    pub const ALL: [Kernel; 8] = [
        Kernel::Uniform,
        Kernel::Triangular,
        Kernel::Epanechnikov,
        Kernel::Quartic,
        Kernel::Triweight,
        Kernel::Tricube,
        Kernel::Cosine,
        Kernel::Gaussian,
    ];

    pub const BOUNDED: [Kernel; 7] = [
        Kernel::Uniform,
        Kernel::Triangular,
        Kernel::Epanechnikov,
        Kernel::Quartic,
        Kernel::Triweight,
        Kernel::Tricube,
        Kernel::Cosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Uniform => "uniform",
            Kernel::Triangular => "triangular",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Quartic => "quartic",
            Kernel::Triweight => "triweight",
            Kernel::Tricube => "tricube",
            Kernel::Cosine => "cosine",
            Kernel::Gaussian => "gaussian",
        }
    }

    pub fn is_bounded(self) -> bool {
        self != Kernel::Gaussian
    }

    /// Standardized density `K(eps)` (location 0, bandwidth 1).
    pub fn density(self, eps: f64) -> f64 {
        if self.is_bounded() && eps.abs() > 1.0 {
            return 0.0;
        }
        let a = eps.abs();
        let s = 1.0 - eps * eps;
        match self {
            Kernel::Uniform => 0.5,
            Kernel::Triangular => 1.0 - a,
            Kernel::Epanechnikov => 0.75 * s,
            Kernel::Quartic => 15.0 / 16.0 * s * s,
            Kernel::Triweight => 35.0 / 32.0 * s * s * s,
            Kernel::Tricube => {
                let t = 1.0 - a * a * a;
                70.0 / 81.0 * t * t * t
            }
            Kernel::Cosine => PI / 4.0 * (PI * eps / 2.0).cos(),
            Kernel::Gaussian => (-0.5 * eps * eps).exp() / (2.0 * PI).sqrt(),
        }
    }

    /// Peak value `K(0)`.
    pub fn peak(self) -> f64 {
        match self {
            Kernel::Uniform => 0.5,
            Kernel::Triangular => 1.0,
            Kernel::Epanechnikov => 0.75,
            Kernel::Quartic => 15.0 / 16.0,
            Kernel::Triweight => 35.0 / 32.0,
            Kernel::Tricube => 70.0 / 81.0,
            Kernel::Cosine => PI / 4.0,
            Kernel::Gaussian => 1.0 / (2.0 * PI).sqrt(),
        }
    }

    /// Coefficient `c` of `sigma^2` in the KL against `N(0, 1)`; half the
    /// kernel's variance.
    pub fn sigma_sq_coef(self) -> f64 {
        match self {
            Kernel::Uniform => 1.0 / 6.0,
            Kernel::Triangular => 1.0 / 12.0,
            Kernel::Epanechnikov => 1.0 / 10.0,
            Kernel::Quartic => 1.0 / 14.0,
            Kernel::Triweight => 1.0 / 18.0,
            Kernel::Tricube => 35.0 / 486.0,
            Kernel::Cosine => 0.5 - 4.0 / (PI * PI),
            Kernel::Gaussian => 0.5,
        }
    }

    fn std_normal_const(self) -> f64 {
        let h = half_ln_2pi();
        match self {
            Kernel::Uniform => h - LN_2,
            Kernel::Triangular => h - 0.5,
            Kernel::Epanechnikov => h - 5.0 / 3.0 + 3f64.ln(),
            Kernel::Quartic => h - 47.0 / 15.0 + 15f64.ln(),
            Kernel::Triweight => h - 319.0 / 70.0 + 70f64.ln(),
            Kernel::Tricube => {
                h + PI * 3f64.sqrt() / 2.0 - 1111.0 / 140.0 + (70.0 * 3f64.sqrt()).ln()
            }
            Kernel::Cosine => h - 1.0 + (PI / 2.0).ln(),
            Kernel::Gaussian => -0.5,
        }
    }

    fn uniform_const(self) -> Option<f64> {
        Some(match self {
            Kernel::Uniform => 0.0,
            Kernel::Triangular => -0.5 + LN_2,
            Kernel::Epanechnikov => -5.0 / 3.0 + 6f64.ln(),
            Kernel::Quartic => -47.0 / 15.0 + 30f64.ln(),
            Kernel::Triweight => -319.0 / 70.0 + 140f64.ln(),
            Kernel::Tricube => {
                -1111.0 / 140.0 + PI * 3f64.sqrt() / 2.0 + (140.0 * 3f64.sqrt()).ln()
            }
            Kernel::Cosine => -1.0 + PI.ln(),
            Kernel::Gaussian => return None,
        })
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown kernel `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// Per-dimension `N(0, 1)`.
    StdNormal,
    /// Per-dimension `U[-1, 1]`.
    UniformCube,
}

impl Prior {
    pub fn name(self) -> &'static str {
        match self {
            Prior::StdNormal => "std_normal",
            Prior::UniformCube => "uniform_cube",
        }
    }

    pub fn density(self, z: f64) -> f64 {
        match self {
            Prior::StdNormal => (-0.5 * z * z).exp() / (2.0 * PI).sqrt(),
            Prior::UniformCube => {
                if z.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    /// Joint density of a factorized point.
    pub fn joint_density(self, z: &[f64]) -> f64 {
        z.iter().map(|&v| self.density(v)).product()
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|_| match self {
                Prior::StdNormal => rng.sample(StandardNormal),
                Prior::UniformCube => rng.random_range(-1.0..=1.0),
            })
            .collect()
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Prior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std_normal" => Ok(Prior::StdNormal),
            "uniform_cube" => Ok(Prior::UniformCube),
            _ => Err(Error::Config(format!("unknown prior `{s}`"))),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("bandwidth must be positive, got {sigma}")))
    }
}

/// Closed-form `KL(q(. | mu, sigma) || N(0, 1))`.
pub fn kl_to_std_normal(kernel: Kernel, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(0.5 * mu * mu + kernel.sigma_sq_coef() * sigma * sigma - sigma.ln()
        + kernel.std_normal_const())
}

/// Closed-form `KL(q(. | mu, sigma) || U[-1, 1])`; the proposal support must
/// lie inside `[-1, 1]`.
pub fn kl_to_uniform(kernel: Kernel, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let c = kernel.uniform_const().ok_or_else(|| {
        Error::Unsupported("gaussian proposal has unbounded support under a uniform prior".into())
    })?;
    // Slack absorbs rounding in squash at saturation.
    const SLACK: f64 = 1e-12;
    if mu - sigma < -1.0 - SLACK || mu + sigma > 1.0 + SLACK {
        return Err(Error::Domain(format!(
            "support [{}, {}] exceeds [-1, 1]",
            mu - sigma,
            mu + sigma
        )));
    }
    Ok(c - sigma.ln())
}

pub fn kl(kernel: Kernel, prior: Prior, mu: f64, sigma: f64) -> Result<f64> {
    match prior {
        Prior::StdNormal => kl_to_std_normal(kernel, mu, sigma),
        Prior::UniformCube => kl_to_uniform(kernel, mu, sigma),
    }
}

/// Partial derivatives `(dKL/dmu, dKL/dsigma)` of the closed forms.
pub fn kl_grad(kernel: Kernel, prior: Prior, mu: f64, sigma: f64) -> Result<(f64, f64)> {
    // Validates the same preconditions as the value.
    kl(kernel, prior, mu, sigma)?;
    Ok(match prior {
        Prior::StdNormal => (mu, 2.0 * kernel.sigma_sq_coef() * sigma - 1.0 / sigma),
        Prior::UniformCube => (0.0, -1.0 / sigma),
    })
}

/// Per-dimension location and bandwidth of a factorized proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ProposalParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::Shape(format!(
                "mu has {} dims, sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        for &s in &sigma {
            check_sigma(s)?;
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Sum of per-dimension KL divergences.
    pub fn kl(&self, kernel: Kernel, prior: Prior) -> Result<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(&m, &s)| kl(kernel, prior, m, s))
            .sum()
    }

    /// Joint proposal density at `z`.
    pub fn density(&self, kernel: Kernel, z: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(z)
            .map(|((&m, &s), &v)| kernel.density((v - m) / s) / s)
            .product()
    }
}

/// `z = eps * sigma + mu`, per dimension.
pub fn reparameterize(params: &ProposalParams, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != params.dim() {
        return Err(Error::Shape(format!(
            "eps has {} dims, proposal has {}",
            eps.len(),
            params.dim()
        )));
    }
    Ok(eps
        .iter()
        .zip(params.mu.iter().zip(&params.sigma))
        .map(|(&e, (&m, &s))| e * s + m)
        .collect())
}

/// Maps raw `(mu, sigma)` to a proposal whose support lies inside `(-1, 1)`:
/// the support endpoints become `tanh(mu - sigma)` and `tanh(mu + sigma)`.
pub fn squash(mu: f64, sigma: f64) -> Result<(f64, f64)> {
    check_sigma(sigma)?;
    let hi = (mu + sigma).tanh();
    let lo = (mu - sigma).tanh();
    Ok(((hi + lo) / 2.0, (hi - lo) / 2.0))
}

/// Seeded rejection sampler for standardized kernel noise, with a bank of
/// surplus accepted draws carried between calls.
#[derive(Clone, Debug)]
pub struct SampleBuffer {
    kernel: Kernel,
    accepted: VecDeque<f64>,
    rng: ChaCha8Rng,
    proposed: u64,
    accepted_total: u64,
}

impl SampleBuffer {
    pub fn new(kernel: Kernel, seed: u64) -> Self {
        Self {
            kernel,
            accepted: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            proposed: 0,
            accepted_total: 0,
        }
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Number of banked draws.
    pub fn banked(&self) -> usize {
        self.accepted.len()
    }

    /// `(proposed, accepted)` counters of the rejection step.
    pub fn counts(&self) -> (u64, u64) {
        (self.proposed, self.accepted_total)
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted_total as f64 / self.proposed as f64
    }

    /// Draws `n` i.i.d. standardized samples.
    pub fn sample_eps(&mut self, n: usize) -> Vec<f64> {
        if self.kernel == Kernel::Gaussian {
            return (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
        }
        let peak = self.kernel.peak();
        while self.accepted.len() < n {
            let deficit = n - self.accepted.len();
            let batch = (deficit as f64 * 2.0 * peak).ceil() as usize;
            for _ in 0..batch {
                let eps: f64 = self.rng.random_range(-1.0..=1.0);
                let u: f64 = self.rng.random();
                self.proposed += 1;
                if u * peak < self.kernel.density(eps) {
                    self.accepted.push_back(eps);
                    self.accepted_total += 1;
                }
            }
        }
        self.accepted.drain(..n).collect()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
