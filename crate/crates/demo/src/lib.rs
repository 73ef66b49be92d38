//! WebAssembly bindings for a single-page demo: kernel density curves with
//! their KL divergence, the temperature sigmoid, and rejection-sampler
//! histograms.
//!
//! The computations live in [`compute`] so they can be tested natively; the
//! exported wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod compute {
    use ddvae::kernels::{kl, Kernel, Prior, SampleBuffer};
    use ddvae::relaxation::{sigma_tau, Temperature};

    fn grid(lo: f64, hi: f64, n: usize) -> Result<impl Iterator<Item = f64>, String> {
        if n < 2 || !(hi > lo) {
            return Err("need n >= 2 and hi > lo".into());
        }
        Ok((0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64))
    }

    pub fn kernel_names() -> Vec<String> {
        Kernel::ALL.iter().map(|k| k.name().to_string()).collect()
    }

    /// Density of `kernel` with location `mu` and bandwidth `sigma` at `n`
    /// evenly spaced points of `[lo, hi]`.
    pub fn density_curve(kernel: &str, mu: f64, sigma: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
        let k: Kernel = kernel.parse().map_err(|e| format!("{e}"))?;
        if !(sigma > 0.0) {
            return Err(format!("bandwidth must be positive, got {sigma}"));
        }
        Ok(grid(lo, hi, n)?.map(|z| k.density((z - mu) / sigma) / sigma).collect())
    }

    /// Closed-form one-dimensional KL divergence from the proposal to `prior`.
    pub fn kl_divergence(kernel: &str, prior: &str, mu: f64, sigma: f64) -> Result<f64, String> {
        let k: Kernel = kernel.parse().map_err(|e| format!("{e}"))?;
        let p: Prior = prior.parse().map_err(|e| format!("{e}"))?;
        kl(k, p, mu, sigma).map_err(|e| format!("{e}"))
    }

    /// The temperature sigmoid at `n` evenly spaced points of `[lo, hi]`.
    pub fn sigma_tau_curve(tau: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
        let t = Temperature::new(tau).map_err(|e| format!("{e}"))?;
        Ok(grid(lo, hi, n)?.map(|x| sigma_tau(x, t)).collect())
    }

    /// Bin counts of `n` standardized draws over `bins` equal cells of
    /// `[-1, 1]` (`[-4, 4]` for the Gaussian), then the acceptance rate.
    pub fn sample_histogram(kernel: &str, n: usize, bins: usize, seed: u64) -> Result<Vec<f64>, String> {
        let k: Kernel = kernel.parse().map_err(|e| format!("{e}"))?;
        if bins == 0 {
            return Err("need at least one bin".into());
        }
        let half = if k.is_bounded() { 1.0 } else { 4.0 };
        let mut buf = SampleBuffer::new(k, seed);
        let mut out = vec![0.0; bins + 1];
        for e in buf.sample_eps(n) {
            let cell = ((e + half) / (2.0 * half) * bins as f64).floor();
            if (0.0..bins as f64).contains(&cell) {
                out[cell as usize] += 1.0;
            }
        }
        out[bins] = buf.acceptance_rate();
        Ok(out)
    }
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn kernel_names() -> Vec<String> {
    compute::kernel_names()
}

#[wasm_bindgen]
pub fn density_curve(kernel: &str, mu: f64, sigma: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    js(compute::density_curve(kernel, mu, sigma, lo, hi, n))
}

#[wasm_bindgen]
pub fn kl_divergence(kernel: &str, prior: &str, mu: f64, sigma: f64) -> Result<f64, JsError> {
    js(compute::kl_divergence(kernel, prior, mu, sigma))
}

#[wasm_bindgen]
pub fn sigma_tau_curve(tau: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    js(compute::sigma_tau_curve(tau, lo, hi, n))
}

#[wasm_bindgen]
pub fn sample_histogram(kernel: &str, n: usize, bins: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    js(compute::sample_histogram(kernel, n, bins, seed))
}
