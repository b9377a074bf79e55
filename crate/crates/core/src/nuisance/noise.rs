use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::NuisanceValues;
use crate::error::{Error, Result};

/// Exact nuisance functions of a known data-generating process.
pub trait NuisanceTruth: Sync {
    fn pi(&self, x: &[f64]) -> f64;
    fn mu(&self, a: u8, x: &[f64]) -> f64;
    /// `max_x μ(a, x) − min_x μ(a, x)` over the covariate support.
    fn mu_range(&self, a: u8) -> f64;
}

/// Error decay exponents: nuisance error shrinks like `n^{-α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRates {
    pub alpha_pi: f64,
    pub alpha_mu: f64,
}

impl NoiseRates {
    pub fn new(alpha_pi: f64, alpha_mu: f64) -> Result<Self> {
        let rates = NoiseRates { alpha_pi, alpha_mu };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_pi", self.alpha_pi), ("alpha_mu", self.alpha_mu)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// `min(2α_π, α_π + α_μ)`, the exponent of the product-error remainder.
    pub fn product_rate(&self) -> f64 {
        (2.0 * self.alpha_pi).min(self.alpha_pi + self.alpha_mu)
    }
}

/// Where propensity noise is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScale {
    /// Add noise to `π` directly, then clip to `[1e-6, 1 − 1e-6]`.
    #[default]
    Probability,
    /// Add noise to `logit(π)` and map back with `expit`.
    Logit,
}

const NOISY_CLIP: f64 = 1e-6;

/// Perturb exact nuisances with noise whose mean and standard deviation are
/// both `n^{-α}` (scaled by the regression's range for `μ`).
///
/// One standard normal draw is consumed per row and function, in the order
/// `π, μ₀, μ₁`, so the output is a pure function of `(seed, covariates, rates)`.
pub fn synthesize_noisy_nuisances(
    truth: &dyn NuisanceTruth,
    covariates: &[f64],
    dim: usize,
    rates: NoiseRates,
    scale: NoiseScale,
    seed: u64,
) -> Result<NuisanceValues> {
    rates.validate()?;
    if dim == 0 || covariates.len() % dim != 0 {
        return Err(Error::Usage(format!(
            "covariate buffer of {} values is not a multiple of width {dim}",
            covariates.len()
        )));
    }
    let n = covariates.len() / dim;
    let nf = n as f64;
    let s_pi = nf.powf(-rates.alpha_pi);
    let s_mu = nf.powf(-rates.alpha_mu);
    let s0 = truth.mu_range(0) * s_mu;
    let s1 = truth.mu_range(1) * s_mu;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = NuisanceValues {
        pi: Vec::with_capacity(n),
        mu0: Vec::with_capacity(n),
        mu1: Vec::with_capacity(n),
    };
    for x in covariates.chunks(dim) {
        let e_pi: f64 = StandardNormal.sample(&mut rng);
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let noise = s_pi + s_pi * e_pi;
        let p = truth.pi(x);
        let pi_hat = match scale {
            NoiseScale::Probability => p + noise,
            NoiseScale::Logit => {
                let l = (p / (1.0 - p)).ln() + noise;
                1.0 / (1.0 + (-l).exp())
            }
        };
        out.pi.push(pi_hat.clamp(NOISY_CLIP, 1.0 - NOISY_CLIP));
        out.mu0.push(truth.mu(0, x) + s0 + s0 * e0);
        out.mu1.push(truth.mu(1, x) + s1 + s1 * e1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat;

    impl NuisanceTruth for Flat {
        fn pi(&self, x: &[f64]) -> f64 {
            0.3 + 0.1 * x[0].tanh()
        }
        fn mu(&self, a: u8, x: &[f64]) -> f64 {
            f64::from(a) + x[0]
        }
        fn mu_range(&self, _a: u8) -> f64 {
            2.0
        }
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect()
    }

    fn pi_rmse(n: usize, alpha: f64, seed: u64) -> f64 {
        let x = grid(n);
        let rates = NoiseRates::new(alpha, 0.5).unwrap();
        let v = synthesize_noisy_nuisances(&Flat, &x, 1, rates, NoiseScale::Probability, seed).unwrap();
        let mse = x.iter().zip(&v.pi).map(|(xi, p)| (p - Flat.pi(&[*xi])).powi(2)).sum::<f64>() / n as f64;
        mse.sqrt()
    }

    #[test]
    fn deterministic_given_seed() {
        let x = grid(500);
        let r = NoiseRates::new(0.3, 0.2).unwrap();
        let a = synthesize_noisy_nuisances(&Flat, &x, 1, r, NoiseScale::Probability, 4).unwrap();
        let b = synthesize_noisy_nuisances(&Flat, &x, 1, r, NoiseScale::Probability, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rates_outside_unit_interval_rejected() {
        assert!(NoiseRates::new(0.0, 0.5).is_err());
        assert!(NoiseRates::new(0.5, 1.5).is_err());
        assert!(NoiseRates::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn noise_scale_at_n_1000() {
        // Mean and sd are both n^{-α}; at n = 1000, α = 0.5 that is ~0.0316,
        // so the root mean squared error is about sqrt(2) · 0.0316.
        let r = pi_rmse(100_000, 0.5, 2);
        let expected = (2.0f64).sqrt() * 100_000f64.powf(-0.5);
        assert!((r / expected - 1.0).abs() < 0.02, "{r} vs {expected}");
        assert!((1000f64.powf(-0.5) - 0.0316).abs() < 1e-4);
    }

    #[test]
    fn error_vanishes_with_fast_rate() {
        let r = pi_rmse(100_000, 1.0, 3);
        assert!(r < 1e-4);
    }

    #[test]
    fn l2_error_log_log_slope() {
        for &alpha in &[0.25, 0.5] {
            let ns = [1_000usize, 10_000, 100_000];
            let pts: Vec<(f64, f64)> = ns
                .iter()
                .map(|&n| ((n as f64).ln(), pi_rmse(n, alpha, 17).ln()))
                .collect();
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
            let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
                / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
            assert!((slope + alpha).abs() < 0.05, "alpha {alpha}: slope {slope}");
        }
    }

    #[test]
    fn logit_scale_stays_inside() {
        let x = grid(1000);
        let r = NoiseRates::new(0.1, 0.1).unwrap();
        let v = synthesize_noisy_nuisances(&Flat, &x, 1, r, NoiseScale::Logit, 1).unwrap();
        assert!(v.pi.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
