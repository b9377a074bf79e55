//! Variance of the conditional incremental derivative effect (V-CIDE) and the
//! one-sided test for effect heterogeneity.
//!
//! With `τ = μ̂₁ − μ̂₀`, `ξ = ωφ̄ + φτ + ωτ` (the derivative-effect
//! pseudo-outcome) and `ξ₁` the pseudo-outcome for `E{τ_cide²}`, the
//! estimator is `ψ̂ = Pₙ(ξ₁) − Pₙ(ξ)²`. When conditioning on all covariates,
//! `ξ₁ = 2ωτ(ωφ̄ + φτ) + (ωτ)²`; when conditioning on a subset `V`,
//! `ξ₁ = τ̂(V)² + 2τ̂(V){ξ − τ̂(V)}` with `τ̂(V)` a fitted derivative-effect curve.
//!
//! Because `ψ̂` is degenerate when the V-CIDE is zero, the test uses a
//! conservative variance `σ̂₁² + c·σ̂₂²` built from the two components.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::effects::{eif_components, Delta, EffectKind};
use crate::error::{Error, Result};
use crate::idr::{predict_idr, IdrFit};
use crate::nuisance::NuisanceValues;
use crate::stats::{mean, normal_cdf, normal_quantile, sample_variance, Interval};

/// Fewest rows accepted by the estimators.
pub const MIN_ROWS: usize = 10;
/// Default multiplier on `σ̂₂²` in the conservative variance.
pub const DEFAULT_CONSERVATIVE_FACTOR: f64 = 4.0;

/// How the `Pₙ(ξ)²` term is linearised in the non-degenerate variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaRule {
    /// `Vₙ[ξ₁ − Pₙ(ξ)·ξ]`.
    #[default]
    Plain,
    /// `Vₙ[ξ₁ − 2Pₙ(ξ)·ξ]`, the delta-method linearisation of a square.
    DeltaMethod,
}

/// Tuning of the interval and test construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcideOptions {
    /// Test size; intervals are two-sided at level `1 − alpha`.
    pub alpha: f64,
    /// Multiplier `c` in `σ̂₁² + c·σ̂₂²`.
    pub conservative_factor: f64,
    /// Which `σ̂²` feeds the standard and max-rule intervals.
    pub sigma_rule: SigmaRule,
}

impl VcideOptions {
    pub fn new(alpha: f64) -> Self {
        VcideOptions {
            alpha,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.conservative_factor.is_finite() && self.conservative_factor >= 0.0) {
            return Err(Error::Domain(format!(
                "conservative factor must be non-negative, got {}",
                self.conservative_factor
            )));
        }
        Ok(())
    }
}

impl Default for VcideOptions {
    fn default() -> Self {
        VcideOptions {
            alpha: 0.05,
            conservative_factor: DEFAULT_CONSERVATIVE_FACTOR,
            sigma_rule: SigmaRule::Plain,
        }
    }
}

/// Outcome of the one-sided heterogeneity test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub reject: bool,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcideResult {
    pub delta: f64,
    pub n: usize,
    pub alpha: f64,
    /// `ψ̂`, reported untruncated.
    pub psi_hat: f64,
    /// `max(ψ̂, 0)`.
    pub psi_truncated: f64,
    /// `Pₙ(ξ₁)`, the estimate of `E{τ_cide²}`.
    pub mean_sq_term: f64,
    /// `Pₙ(ξ)`, the average derivative effect.
    pub mean_effect: f64,
    /// `Vₙ[ξ₁ − Pₙ(ξ)·ξ]`.
    pub sigma2_standard: f64,
    /// `Vₙ[ξ₁ − 2Pₙ(ξ)·ξ]`.
    pub sigma2_alt: f64,
    /// `Vₙ(ξ₁)`.
    pub sigma1_sq: f64,
    /// `Vₙ(Pₙ(ξ)·ξ)`.
    pub sigma2_sq: f64,
    pub conservative_factor: f64,
    pub sigma_rule: SigmaRule,
    pub ci_standard: Interval,
    pub ci_conservative: Interval,
    pub ci_max: Interval,
    pub test: TestOutcome,
}

impl VcideResult {
    /// `σ̂₁² + c·σ̂₂²` with the configured factor.
    pub fn conservative_variance(&self) -> f64 {
        self.sigma1_sq + self.conservative_factor * self.sigma2_sq
    }

    /// `σ̂₁² + σ̂₂²`, the unit-factor conservative variance.
    pub fn conservative_variance_unit(&self) -> f64 {
        self.sigma1_sq + self.sigma2_sq
    }

    /// The `σ̂²` selected by the sigma rule.
    pub fn sigma2(&self) -> f64 {
        match self.sigma_rule {
            SigmaRule::Plain => self.sigma2_standard,
            SigmaRule::DeltaMethod => self.sigma2_alt,
        }
    }
}

/// Per-row derivative-effect pseudo-outcomes `ξ` and plug-ins `ωτ`.
fn derivative_rows(a: &[u8], y: &[f64], nuis: &NuisanceValues, delta: Delta) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if a.len() != y.len() || a.len() != nuis.len() {
        return Err(Error::Usage(format!(
            "nuisance values ({} rows) not aligned with data ({} rows)",
            nuis.len(),
            a.len()
        )));
    }
    if a.len() < MIN_ROWS {
        return Err(Error::Usage(format!("need at least {MIN_ROWS} rows, got {}", a.len())));
    }
    nuis.validate()?;
    let n = a.len();
    let mut xi = Vec::with_capacity(n);
    let mut correction = Vec::with_capacity(n);
    let mut plug = Vec::with_capacity(n);
    for i in 0..n {
        let row = nuis.row(i);
        let c = eif_components(&Observation::new(&[], a[i], y[i]), &row, delta);
        let tau = row.contrast();
        let corr = c.omega_varphi + c.phi * tau;
        let p = c.omega * tau;
        correction.push(corr);
        plug.push(p);
        xi.push(corr + p);
    }
    Ok((xi, correction, plug))
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numerical(format!("{what} in row {i} is not finite"))),
        None => Ok(()),
    }
}

/// Assemble estimates, variances, intervals and test from row values.
pub fn vcide_from_rows(xi: &[f64], xi1: &[f64], delta: f64, options: &VcideOptions) -> Result<VcideResult> {
    options.validate()?;
    if xi.len() != xi1.len() || xi.len() < 2 {
        return Err(Error::Usage("row vectors must be aligned and hold at least two rows".into()));
    }
    check_finite(xi, "pseudo-outcome")?;
    check_finite(xi1, "squared-effect pseudo-outcome")?;
    let n = xi.len();
    let m = mean(xi);
    let m1 = mean(xi1);
    let psi = m1 - m * m;
    let lin = |c: f64| -> Vec<f64> { xi1.iter().zip(xi).map(|(a, b)| a - c * m * b).collect() };
    let sigma2_standard = sample_variance(&lin(1.0));
    let sigma2_alt = sample_variance(&lin(2.0));
    let sigma1_sq = sample_variance(xi1);
    let scaled: Vec<f64> = xi.iter().map(|b| m * b).collect();
    let sigma2_sq = sample_variance(&scaled);
    let level = 1.0 - options.alpha;
    let nf = n as f64;
    let sigma2 = match options.sigma_rule {
        SigmaRule::Plain => sigma2_standard,
        SigmaRule::DeltaMethod => sigma2_alt,
    };
    let cons = sigma1_sq + options.conservative_factor * sigma2_sq;
    let wald = |var: f64| {
        if options.alpha == 0.0 {
            Interval {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            }
        } else {
            Interval::wald(psi, (var / nf).sqrt(), level)
        }
    };
    let mut result = VcideResult {
        delta,
        n,
        alpha: options.alpha,
        psi_hat: psi,
        psi_truncated: psi.max(0.0),
        mean_sq_term: m1,
        mean_effect: m,
        sigma2_standard,
        sigma2_alt,
        sigma1_sq,
        sigma2_sq,
        conservative_factor: options.conservative_factor,
        sigma_rule: options.sigma_rule,
        ci_standard: wald(sigma2),
        ci_conservative: wald(cons),
        ci_max: wald(sigma2.max(cons)),
        test: TestOutcome {
            reject: false,
            p_value: 1.0,
        },
    };
    result.test = heterogeneity_test(&result, options.alpha)?;
    Ok(result)
}

/// V-CIDE when conditioning on all covariates.
pub fn estimate_vcide_full(data: &Dataset, nuis: &NuisanceValues, delta: f64, alpha: f64) -> Result<VcideResult> {
    estimate_vcide_full_with(data.treatment(), data.outcome(), nuis, delta, &VcideOptions::new(alpha))
}

/// [`estimate_vcide_full`] on bare columns with explicit options.
pub fn estimate_vcide_full_with(
    a: &[u8],
    y: &[f64],
    nuis: &NuisanceValues,
    delta: f64,
    options: &VcideOptions,
) -> Result<VcideResult> {
    let d = Delta::new(delta)?;
    let (xi, correction, plug) = derivative_rows(a, y, nuis, d)?;
    let xi1: Vec<f64> = correction
        .iter()
        .zip(&plug)
        .map(|(c, p)| 2.0 * p * c + p * p)
        .collect();
    vcide_from_rows(&xi, &xi1, delta, options)
}

/// V-CIDE when conditioning on a subset `V`, using a fitted derivative-effect
/// curve evaluated at each row's `V`.
pub fn estimate_vcide_subset(
    data: &Dataset,
    nuis: &NuisanceValues,
    idr: &IdrFit,
    v: &[f64],
    delta: f64,
    alpha: f64,
) -> Result<VcideResult> {
    match idr.effect {
        EffectKind::Cide { delta: d } if d.get() == delta => {}
        other => {
            return Err(Error::Usage(format!(
                "curve estimates {} rather than the derivative effect at delta = {delta}",
                other.name()
            )))
        }
    }
    if v.len() != data.len() {
        return Err(Error::Usage(format!(
            "{} conditioning values for {} rows",
            v.len(),
            data.len()
        )));
    }
    let tau_v = v
        .iter()
        .map(|&x| predict_idr(idr, x, 0.95).map(|p| p.estimate))
        .collect::<Result<Vec<_>>>()?;
    estimate_vcide_subset_with(data.treatment(), data.outcome(), nuis, &tau_v, delta, &VcideOptions::new(alpha))
}

/// Subset V-CIDE from per-row curve values `τ̂(V_i)`.
pub fn estimate_vcide_subset_with(
    a: &[u8],
    y: &[f64],
    nuis: &NuisanceValues,
    tau_v: &[f64],
    delta: f64,
    options: &VcideOptions,
) -> Result<VcideResult> {
    let d = Delta::new(delta)?;
    let (xi, _, _) = derivative_rows(a, y, nuis, d)?;
    if tau_v.len() != xi.len() {
        return Err(Error::Usage(format!("{} curve values for {} rows", tau_v.len(), xi.len())));
    }
    let xi1: Vec<f64> = tau_v
        .iter()
        .zip(&xi)
        .map(|(t, x)| t * t + 2.0 * t * (x - t))
        .collect();
    vcide_from_rows(&xi, &xi1, delta, options)
}

/// One-sided test of `H₀: V-CIDE = 0` using the conservative variance.
///
/// Rejects when `ψ̂ − z_{1−α}·sqrt(v/n) > 0`, `v = σ̂₁² + c·σ̂₂²`. When `v = 0`
/// the p-value is the Gaussian limit: 0 for `ψ̂ > 0`, otherwise 1.
pub fn heterogeneity_test(result: &VcideResult, alpha: f64) -> Result<TestOutcome> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let var = result.conservative_variance();
    let n = result.n as f64;
    if !(var > 0.0) {
        let positive = result.psi_hat > 0.0;
        return Ok(TestOutcome {
            reject: positive && alpha > 0.0,
            p_value: if positive { 0.0 } else { 1.0 },
        });
    }
    let se = (var / n).sqrt();
    let reject = result.psi_hat - normal_quantile(1.0 - alpha) * se > 0.0;
    Ok(TestOutcome {
        reject,
        p_value: 1.0 - normal_cdf(result.psi_hat / se),
    })
}
