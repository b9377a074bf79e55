//! Reference data-generating processes with exactly known nuisances.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceTruth;

/// Lower end of the covariate support.
pub const SUPPORT_LO: f64 = -4.0;
/// Upper end of the covariate support.
pub const SUPPORT_HI: f64 = 4.0;
/// Jump points of the control-arm regression.
pub const BREAKPOINTS: [f64; 5] = [-3.0, -2.0, 0.0, 2.0, 3.0];
/// Intervention pair of the contrast studied in the experiments.
pub const CONTRAST_UPPER: f64 = 5.0;
pub const CONTRAST_LOWER: f64 = 0.2;
/// Coefficients of the quadratic contrast curve `1 + 0.5x − 0.2x²`.
pub const CONTRAST_COEFFICIENTS: [f64; 3] = [1.0, 0.5, -0.2];

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn shifted(pi: f64, delta: f64) -> f64 {
    delta * pi / (delta * pi + 1.0 - pi)
}

/// Step-function control-arm regression; overlapping indicators accumulate.
pub fn mu0_step(x: f64) -> f64 {
    let ind = |c: bool| if c { 1.0 } else { 0.0 };
    2.0 * ind(x < -3.0) + 2.55 * ind(x > -2.0) - 2.0 * ind(x > 0.0) + 4.0 * ind(x > 2.0) - ind(x > 3.0)
}

/// Quadratic contrast curve `1 + 0.5x − 0.2x²`.
pub fn tau_cice(x: f64) -> f64 {
    let [b0, b1, b2] = CONTRAST_COEFFICIENTS;
    b0 + b1 * x + b2 * x * x
}

/// Which member of the reference family to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpVariant {
    /// Logistic propensity, step-function `μ₀`, quadratic contrast.
    #[default]
    Appendix,
    /// `π ≡ 0.4`, `μ₁ − μ₀ ≡ 2`: a homogeneous derivative effect.
    Null,
    /// `π ≡ 0.5`, `μ₀ ≡ 0`, `μ₁ = x`.
    Linear,
}

/// Scalar-covariate process on `X ~ Unif(−4, 4)` with `Y = μ_A(X) + N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AppendixDgp {
    pub variant: DgpVariant,
}

/// A simulated sample together with its covariate column.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub x: Vec<f64>,
}

impl AppendixDgp {
    pub fn new(variant: DgpVariant) -> Self {
        AppendixDgp { variant }
    }

    pub fn propensity(&self, x: f64) -> f64 {
        match self.variant {
            DgpVariant::Appendix => expit(x / 2.0),
            DgpVariant::Null => 0.4,
            DgpVariant::Linear => 0.5,
        }
    }

    pub fn mu0(&self, x: f64) -> f64 {
        match self.variant {
            DgpVariant::Appendix | DgpVariant::Null => mu0_step(x),
            DgpVariant::Linear => 0.0,
        }
    }

    /// Conditional average treatment effect `μ₁(x) − μ₀(x)`.
    pub fn tau_cate(&self, x: f64) -> f64 {
        match self.variant {
            DgpVariant::Appendix => {
                let p = self.propensity(x);
                tau_cice(x) / (shifted(p, CONTRAST_UPPER) - shifted(p, CONTRAST_LOWER))
            }
            DgpVariant::Null => 2.0,
            DgpVariant::Linear => x,
        }
    }

    pub fn mu1(&self, x: f64) -> f64 {
        self.mu0(x) + self.tau_cate(x)
    }

    /// Draw `n` observations; deterministic given `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Simulated> {
        if n < 2 {
            return Err(Error::Usage(format!("need at least two observations, got {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.random_range(SUPPORT_LO..SUPPORT_HI);
            let ai = u8::from(rng.random::<f64>() < self.propensity(xi));
            let eps: f64 = StandardNormal.sample(&mut rng);
            let mean = if ai == 1 { self.mu1(xi) } else { self.mu0(xi) };
            x.push(xi);
            a.push(ai);
            y.push(mean + eps);
        }
        let data = Dataset::new(vec!["x".into()], x.clone(), a, y)?;
        Ok(Simulated { data, x })
    }

    fn range_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        // Dense scan plus one-sided limits at every jump.
        const STEPS: usize = 800_000;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut visit = |v: f64| {
            lo = lo.min(v);
            hi = hi.max(v);
        };
        for i in 0..=STEPS {
            visit(f(SUPPORT_LO + (SUPPORT_HI - SUPPORT_LO) * i as f64 / STEPS as f64));
        }
        for b in BREAKPOINTS {
            visit(f(b - 1e-12));
            visit(f(b + 1e-12));
        }
        hi - lo
    }
}

impl NuisanceTruth for AppendixDgp {
    fn pi(&self, x: &[f64]) -> f64 {
        self.propensity(x[0])
    }

    fn mu(&self, a: u8, x: &[f64]) -> f64 {
        if a == 1 {
            self.mu1(x[0])
        } else {
            self.mu0(x[0])
        }
    }

    fn mu_range(&self, a: u8) -> f64 {
        static RANGES: [[OnceLock<f64>; 2]; 3] = [
            [OnceLock::new(), OnceLock::new()],
            [OnceLock::new(), OnceLock::new()],
            [OnceLock::new(), OnceLock::new()],
        ];
        let v = match self.variant {
            DgpVariant::Appendix => 0,
            DgpVariant::Null => 1,
            DgpVariant::Linear => 2,
        };
        *RANGES[v][usize::from(a == 1)].get_or_init(|| {
            if a == 1 {
                self.range_of(|x| self.mu1(x))
            } else {
                self.range_of(|x| self.mu0(x))
            }
        })
    }
}

/// Finite-support process: `X` takes value `xs[j]` with probability `probs[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDgp {
    pub xs: Vec<f64>,
    pub probs: Vec<f64>,
    pub pi: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub noise_sd: f64,
}

impl DiscreteDgp {
    pub fn new(xs: Vec<f64>, probs: Vec<f64>, pi: Vec<f64>, mu0: Vec<f64>, mu1: Vec<f64>, noise_sd: f64) -> Result<Self> {
        let dgp = DiscreteDgp {
            xs,
            probs,
            pi,
            mu0,
            mu1,
            noise_sd,
        };
        dgp.validate()?;
        Ok(dgp)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.xs.len();
        if k == 0 {
            return Err(Error::Usage("discrete process has empty support".into()));
        }
        if [self.probs.len(), self.pi.len(), self.mu0.len(), self.mu1.len()].iter().any(|&l| l != k) {
            return Err(Error::Usage("support arrays have different lengths".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if self.probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("support probabilities must be non-negative and sum to 1 (sum {total})")));
        }
        if self.pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Domain("propensities must lie strictly inside (0, 1)".into()));
        }
        for (i, x) in self.xs.iter().enumerate() {
            if self.xs[..i].contains(x) {
                return Err(Error::Domain(format!("support point {x} repeated")));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Domain("noise sd must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Random instance with `points` support points (deterministic in `rng`).
    pub fn random(rng: &mut impl Rng, points: usize) -> Result<Self> {
        if points == 0 {
            return Err(Error::Usage("discrete process has empty support".into()));
        }
        let xs: Vec<f64> = (0..points).map(|j| j as f64 + rng.random_range(0.0..0.5)).collect();
        let raw: Vec<f64> = (0..points).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
        // Absorb rounding so the probabilities sum to one exactly enough.
        let rest: f64 = probs[..points - 1].iter().sum();
        probs[points - 1] = 1.0 - rest;
        let pi = (0..points).map(|_| rng.random_range(0.05..0.95)).collect();
        let mu0 = (0..points).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mu1 = (0..points).map(|_| rng.random_range(-3.0..3.0)).collect();
        Self::new(xs, probs, pi, mu0, mu1, 1.0)
    }

    fn index_of(&self, x: f64) -> usize {
        self.xs
            .iter()
            .position(|&s| s == x)
            .unwrap_or_else(|| panic!("{x} is not a support point"))
    }

    /// Draw `n` observations by inverse-CDF sampling over the support.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let mut x = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let j = cdf.partition_point(|&c| c <= u).min(self.xs.len() - 1);
            let aj = u8::from(rng.random::<f64>() < self.pi[j]);
            let eps: f64 = StandardNormal.sample(&mut rng);
            x.push(self.xs[j]);
            a.push(aj);
            y.push(if aj == 1 { self.mu1[j] } else { self.mu0[j] } + self.noise_sd * eps);
        }
        Dataset::new(vec!["x".into()], x, a, y)
    }
}

impl NuisanceTruth for DiscreteDgp {
    fn pi(&self, x: &[f64]) -> f64 {
        self.pi[self.index_of(x[0])]
    }

    fn mu(&self, a: u8, x: &[f64]) -> f64 {
        let j = self.index_of(x[0]);
        if a == 1 {
            self.mu1[j]
        } else {
            self.mu0[j]
        }
    }

    fn mu_range(&self, a: u8) -> f64 {
        let m = if a == 1 { &self.mu1 } else { &self.mu0 };
        let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}
