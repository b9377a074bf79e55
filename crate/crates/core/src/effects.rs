//! Closed-form incremental-intervention mathematics.
//!
//! An incremental intervention multiplies every subject's odds of treatment
//! by `δ`, moving the propensity score `π` to `q(π; δ) = δπ / (δπ + 1 − π)`.
//! This module holds the shifted propensity, the identification plug-ins for
//! the conditional incremental effect (CIE), contrast (CICE) and derivative
//! (CIDE), and the un-centered efficient influence function values
//! ("pseudo-outcomes") used by every downstream learner.
//!
//! Throughout, `D = δπ + 1 − π`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceValues;

/// Smallest accepted intervention parameter.
pub const DELTA_MIN: f64 = 1e-6;
/// Largest accepted intervention parameter.
pub const DELTA_MAX: f64 = 1e6;

/// Odds multiplier of an incremental intervention, validated to
/// `[DELTA_MIN, DELTA_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Delta(f64);

impl Delta {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::Domain(format!(
                "intervention parameter must be positive and finite, got {value}"
            )));
        }
        if !(DELTA_MIN..=DELTA_MAX).contains(&value) {
            return Err(Error::Domain(format!(
                "intervention parameter {value} outside [{DELTA_MIN:e}, {DELTA_MAX:e}]"
            )));
        }
        Ok(Delta(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Delta {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Delta::new(value)
    }
}

impl From<Delta> for f64 {
    fn from(d: Delta) -> f64 {
        d.0
    }
}

/// Which incremental effect is targeted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EffectKind {
    /// Counterfactual mean under the `δ`-shifted propensity.
    Cie { delta: Delta },
    /// Difference of two CIEs, `δ_u` minus `δ_l`.
    Cice { upper: Delta, lower: Delta },
    /// Derivative of the CIE in the intervention parameter at `δ`.
    Cide { delta: Delta },
}

impl EffectKind {
    pub fn cie(delta: f64) -> Result<Self> {
        Ok(EffectKind::Cie {
            delta: Delta::new(delta)?,
        })
    }

    pub fn cide(delta: f64) -> Result<Self> {
        Ok(EffectKind::Cide {
            delta: Delta::new(delta)?,
        })
    }

    pub fn cice(upper: f64, lower: f64) -> Result<Self> {
        let kind = EffectKind::Cice {
            upper: Delta::new(upper)?,
            lower: Delta::new(lower)?,
        };
        kind.validate()?;
        Ok(kind)
    }

    /// Re-check invariants that the public enum fields cannot enforce.
    pub fn validate(&self) -> Result<()> {
        match *self {
            EffectKind::Cice { upper, lower } if upper == lower => Err(Error::Domain(format!(
                "contrast requires distinct parameters, got δ_u = δ_l = {}",
                upper.get()
            ))),
            EffectKind::Cie { delta } | EffectKind::Cide { delta } => {
                Delta::new(delta.get()).map(|_| ())
            }
            EffectKind::Cice { upper, lower } => {
                Delta::new(upper.get())?;
                Delta::new(lower.get()).map(|_| ())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EffectKind::Cie { .. } => "cie",
            EffectKind::Cice { .. } => "cice",
            EffectKind::Cide { .. } => "cide",
        }
    }

    /// Intervention parameter used to label output rows (`δ_u` for contrasts).
    pub fn primary_delta(&self) -> f64 {
        match *self {
            EffectKind::Cie { delta } | EffectKind::Cide { delta } => delta.get(),
            EffectKind::Cice { upper, .. } => upper.get(),
        }
    }
}

/// Nuisance function values at a single covariate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceRow {
    /// Propensity `π(x)`.
    pub pi: f64,
    /// Outcome regression `μ(0, x)`.
    pub mu0: f64,
    /// Outcome regression `μ(1, x)`.
    pub mu1: f64,
}

impl NuisanceRow {
    pub fn new(pi: f64, mu0: f64, mu1: f64) -> Self {
        NuisanceRow { pi, mu0, mu1 }
    }

    /// `μ(1, x) − μ(0, x)`.
    pub fn contrast(&self) -> f64 {
        self.mu1 - self.mu0
    }

    pub fn mu(&self, a: u8) -> f64 {
        if a == 1 {
            self.mu1
        } else {
            self.mu0
        }
    }

    fn check(&self) -> Result<()> {
        check_probability(self.pi)?;
        if !self.mu0.is_finite() || !self.mu1.is_finite() {
            return Err(Error::Domain("outcome regressions must be finite".into()));
        }
        Ok(())
    }
}

fn check_probability(pi: f64) -> Result<()> {
    if (0.0..=1.0).contains(&pi) {
        Ok(())
    } else {
        Err(Error::Domain(format!("propensity must lie in [0, 1], got {pi}")))
    }
}

#[inline]
fn denom(pi: f64, delta: f64) -> f64 {
    delta * pi + 1.0 - pi
}

#[inline]
pub(crate) fn shift_unchecked(pi: f64, delta: f64) -> f64 {
    delta * pi / denom(pi, delta)
}

#[inline]
pub(crate) fn omega_unchecked(pi: f64, delta: f64) -> f64 {
    let d = denom(pi, delta);
    pi * (1.0 - pi) / (d * d)
}

/// Shifted propensity `q(π; δ) = δπ / (δπ + 1 − π)`.
pub fn shift_propensity(pi: f64, delta: f64) -> Result<f64> {
    check_probability(pi)?;
    Ok(shift_unchecked(pi, Delta::new(delta)?.get()))
}

/// Derivative weight `ω(π; δ) = π(1 − π) / (δπ + 1 − π)²`, equal to
/// `∂q(π; t)/∂t` at `t = δ`.
pub fn weight_omega(pi: f64, delta: f64) -> Result<f64> {
    check_probability(pi)?;
    Ok(omega_unchecked(pi, Delta::new(delta)?.get()))
}

/// Building blocks of the derivative-effect influence function at one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EifComponents {
    /// `ω(X; δ)`.
    pub omega: f64,
    /// Inverse-probability weighted residual contrast `φ̄(Z)`.
    pub varphi: f64,
    /// Propensity-residual term `φ(Z; δ)`.
    pub phi: f64,
    /// `ω · φ̄`, evaluated without dividing by `π` or `1 − π`.
    pub omega_varphi: f64,
}

/// Evaluate `ω`, `φ̄`, `φ` and the product `ω·φ̄` at one row.
///
/// `ω·φ̄` is computed as `[A(1−π)(Y−μ₁) − (1−A)π(Y−μ₀)] / D²`, which is finite
/// at any `π ∈ [0, 1]`. `φ̄` itself divides by `π` or `1 − π` and is only
/// finite for propensities strictly inside the unit interval.
pub fn eif_components(obs: &Observation<'_>, nuis: &NuisanceRow, delta: Delta) -> EifComponents {
    let (pi, d) = (nuis.pi, delta.get());
    let dd = denom(pi, d);
    let dd2 = dd * dd;
    let treated = obs.a == 1;
    let varphi = if treated {
        (obs.y - nuis.mu1) / pi
    } else {
        -(obs.y - nuis.mu0) / (1.0 - pi)
    };
    let omega_varphi = if treated {
        (1.0 - pi) * (obs.y - nuis.mu1) / dd2
    } else {
        -pi * (obs.y - nuis.mu0) / dd2
    };
    let phi = (1.0 / dd2 - 2.0 * d * pi / (dd2 * dd)) * (f64::from(obs.a) - pi);
    EifComponents {
        omega: pi * (1.0 - pi) / dd2,
        varphi,
        phi,
        omega_varphi,
    }
}

/// Un-centered influence function value for the average derivative effect.
pub fn pseudo_outcome_cide(obs: &Observation<'_>, nuis: &NuisanceRow, delta: Delta) -> f64 {
    let c = eif_components(obs, nuis, delta);
    let tau = nuis.contrast();
    c.omega_varphi + c.phi * tau + c.omega * tau
}

/// Un-centered influence function value for the average incremental effect.
pub fn pseudo_outcome_cie(obs: &Observation<'_>, nuis: &NuisanceRow, delta: Delta) -> f64 {
    let (pi, d) = (nuis.pi, delta.get());
    let dd = denom(pi, d);
    let a = f64::from(obs.a);
    let plug = (d * pi * nuis.mu1 + (1.0 - pi) * nuis.mu0) / dd;
    let residual = (d * a + 1.0 - a) / dd * (obs.y - nuis.mu(obs.a));
    let shift = nuis.contrast() * d * (a - pi) / (dd * dd);
    plug + residual + shift
}

/// Pseudo-outcome for any effect kind.
pub fn pseudo_outcome(obs: &Observation<'_>, nuis: &NuisanceRow, effect: &EffectKind) -> Result<f64> {
    effect.validate()?;
    nuis.check()?;
    Ok(pseudo_outcome_unchecked(obs, nuis, effect))
}

#[inline]
pub(crate) fn pseudo_outcome_unchecked(
    obs: &Observation<'_>,
    nuis: &NuisanceRow,
    effect: &EffectKind,
) -> f64 {
    match *effect {
        EffectKind::Cie { delta } => pseudo_outcome_cie(obs, nuis, delta),
        EffectKind::Cide { delta } => pseudo_outcome_cide(obs, nuis, delta),
        EffectKind::Cice { upper, lower } => {
            pseudo_outcome_cie(obs, nuis, upper) - pseudo_outcome_cie(obs, nuis, lower)
        }
    }
}

/// Identification integrand at one covariate point: the conditional effect
/// given `X = x` expressed through the nuisance functions.
pub fn plugin_value(nuis: &NuisanceRow, effect: &EffectKind) -> Result<f64> {
    effect.validate()?;
    nuis.check()?;
    Ok(plugin_unchecked(nuis, effect))
}

#[inline]
pub(crate) fn plugin_unchecked(nuis: &NuisanceRow, effect: &EffectKind) -> f64 {
    let cie = |d: f64| (d * nuis.pi * nuis.mu1 + (1.0 - nuis.pi) * nuis.mu0) / denom(nuis.pi, d);
    match *effect {
        EffectKind::Cie { delta } => cie(delta.get()),
        EffectKind::Cide { delta } => omega_unchecked(nuis.pi, delta.get()) * nuis.contrast(),
        EffectKind::Cice { upper, lower } => cie(upper.get()) - cie(lower.get()),
    }
}

/// Per-row pseudo-outcomes and plug-in values for one effect.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomeTable {
    pub effect: EffectKind,
    /// Un-centered influence function values `ξ̂(Z)`.
    pub xi: Vec<f64>,
    /// Plug-in summands (identification integrand at the row's covariates).
    pub plugin: Vec<f64>,
}

impl PseudoOutcomeTable {
    pub fn build(data: &Dataset, nuis: &NuisanceValues, effect: &EffectKind) -> Result<Self> {
        Self::from_columns(data.treatment(), data.outcome(), nuis, effect)
    }

    /// Build from bare treatment and outcome columns.
    pub fn from_columns(
        a: &[u8],
        y: &[f64],
        nuis: &NuisanceValues,
        effect: &EffectKind,
    ) -> Result<Self> {
        effect.validate()?;
        if a.len() != y.len() || a.len() != nuis.len() {
            return Err(Error::Usage(format!(
                "nuisance values ({} rows) not aligned with data ({} rows)",
                nuis.len(),
                a.len()
            )));
        }
        nuis.validate()?;
        let mut xi = Vec::with_capacity(a.len());
        let mut plugin = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let row = nuis.row(i);
            let obs = Observation::new(&[], a[i], y[i]);
            xi.push(pseudo_outcome_unchecked(&obs, &row, effect));
            plugin.push(plugin_unchecked(&row, effect));
        }
        if let Some(i) = xi.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("pseudo-outcome in row {i} is not finite")));
        }
        Ok(PseudoOutcomeTable {
            effect: *effect,
            xi,
            plugin,
        })
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Sample mean of the pseudo-outcomes.
    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.xi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(v: f64) -> Delta {
        Delta::new(v).unwrap()
    }

    fn obs(a: u8, y: f64) -> Observation<'static> {
        Observation::new(&[], a, y)
    }

    #[test]
    fn shift_examples() {
        assert!((shift_propensity(0.25, 2.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((shift_propensity(0.5, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(shift_propensity(0.3, 1.0).unwrap(), 0.3);
        assert_eq!(shift_propensity(0.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn shift_rejects_bad_delta() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY, 1e-7, 2e6] {
            assert!(matches!(shift_propensity(0.5, bad), Err(Error::Domain(_))), "{bad}");
        }
        assert!(shift_propensity(1.5, 2.0).is_err());
    }

    #[test]
    fn omega_examples() {
        assert_eq!(weight_omega(0.5, 1.0).unwrap(), 0.25);
        assert_eq!(weight_omega(1.0, 3.0).unwrap(), 0.0);
        // 0.1875 / 1.5625 evaluated as exact rationals: 3/16 ÷ 25/16 = 3/25.
        assert!((weight_omega(0.25, 2.0).unwrap() - 3.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn eif_component_examples() {
        let n = NuisanceRow::new(0.5, 1.0, 2.0);
        let c = eif_components(&obs(1, 2.0), &n, d(1.0));
        assert_eq!((c.omega, c.varphi, c.phi), (0.25, 0.0, 0.0));

        let c = eif_components(&obs(1, 4.0), &n, d(1.0));
        assert_eq!(c.varphi, 4.0);
    }

    #[test]
    fn simplified_product_at_zero_residual() {
        let n = NuisanceRow::new(0.25, 1.0, 3.0);
        let c = eif_components(&obs(0, 1.0), &n, d(2.0));
        assert_eq!(c.omega_varphi, 0.0);
        // The simplified form never divides by π, so π = 0 stays finite.
        let edge = NuisanceRow::new(0.0, 1.0, 3.0);
        let c = eif_components(&obs(1, 7.0), &edge, d(2.0));
        assert!(c.omega_varphi.is_finite());
        assert_eq!(c.omega, 0.0);
    }

    #[test]
    fn cide_examples() {
        let n = NuisanceRow::new(0.5, 1.0, 2.0);
        assert_eq!(pseudo_outcome_cide(&obs(1, 2.0), &n, d(1.0)), 0.25);
        let flat = NuisanceRow::new(0.5, 1.5, 1.5);
        assert_eq!(pseudo_outcome_cide(&obs(1, 1.5), &flat, d(1.0)), 0.0);
        assert_eq!(pseudo_outcome_cide(&obs(0, 1.5), &flat, d(1.0)), 0.0);
    }

    #[test]
    fn cie_examples() {
        let n = NuisanceRow::new(0.5, 1.0, 3.0);
        assert_eq!(pseudo_outcome_cie(&obs(1, 3.0), &n, d(1.0)), 3.0);
        // δ = 1 and zero residual: plug-in plus a term proportional to (A − π).
        let n = NuisanceRow::new(0.3, 1.0, 2.0);
        let v1 = pseudo_outcome_cie(&obs(1, 2.0), &n, d(1.0));
        let v0 = pseudo_outcome_cie(&obs(0, 1.0), &n, d(1.0));
        let plug = 0.3 * 2.0 + 0.7 * 1.0;
        assert!((0.3 * v1 + 0.7 * v0 - plug).abs() < 1e-14);
    }

    #[test]
    fn plugin_examples() {
        let n = NuisanceRow::new(0.5, 0.0, 4.0);
        assert_eq!(plugin_value(&n, &EffectKind::cide(1.0).unwrap()).unwrap(), 1.0);
        let n = NuisanceRow::new(0.3, 1.0, 2.0);
        let v = plugin_value(&n, &EffectKind::cie(1.0).unwrap()).unwrap();
        assert!((v - 1.3).abs() < 1e-15);
        let n = NuisanceRow::new(0.25, 0.0, 1.0);
        let v = plugin_value(&n, &EffectKind::cie(2.0).unwrap()).unwrap();
        assert!((v - shift_propensity(0.25, 2.0).unwrap()).abs() < 1e-15);
        assert!((v - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cice_rejects_equal_parameters() {
        assert!(EffectKind::cice(2.0, 2.0).is_err());
        let forged = EffectKind::Cice {
            upper: d(2.0),
            lower: d(2.0),
        };
        let n = NuisanceRow::new(0.5, 0.0, 1.0);
        assert!(pseudo_outcome(&obs(1, 1.0), &n, &forged).is_err());
    }

    #[test]
    fn cice_continuity() {
        let n = NuisanceRow::new(0.4, 0.5, 2.0);
        let o = obs(1, 1.7);
        let mut last = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let k = EffectKind::cice(2.0, 2.0 - eps).unwrap();
            let v = pseudo_outcome(&o, &n, &k).unwrap().abs();
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn dispatch_matches_direct() {
        let n = NuisanceRow::new(0.5, 1.0, 2.0);
        let v = pseudo_outcome(&obs(1, 2.0), &n, &EffectKind::cide(1.0).unwrap()).unwrap();
        assert_eq!(v, pseudo_outcome_cide(&obs(1, 2.0), &n, d(1.0)));
    }

    #[test]
    fn table_requires_alignment() {
        let nuis = NuisanceValues::new(vec![0.5; 3], vec![0.0; 3], vec![1.0; 3]).unwrap();
        let err = PseudoOutcomeTable::from_columns(&[0, 1], &[1.0, 2.0], &nuis, &EffectKind::cide(1.0).unwrap());
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn odds_ratio_identity(pi in 1e-6f64..(1.0 - 1e-6), delta in 1e-3f64..1e3) {
            // 1 − q(π; δ) = q(1 − π; 1/δ); subtracting from 1 would cancel near q ≈ 1.
            let q = shift_propensity(pi, delta).unwrap();
            let q_bar = shift_propensity(1.0 - pi, 1.0 / delta).unwrap();
            let ratio = (q / q_bar) / (pi / (1.0 - pi));
            prop_assert!(((ratio - delta) / delta).abs() < 1e-12);
        }

        #[test]
        fn cide_is_derivative_of_cie(
            pi in 0.001f64..0.999, mu0 in -10f64..10.0, mu1 in -10f64..10.0, delta in 0.1f64..10.0,
        ) {
            let n = NuisanceRow::new(pi, mu0, mu1);
            let h = 1e-4;
            let up = plugin_value(&n, &EffectKind::cie(delta + h).unwrap()).unwrap();
            let lo = plugin_value(&n, &EffectKind::cie(delta - h).unwrap()).unwrap();
            let fd = (up - lo) / (2.0 * h);
            let exact = plugin_value(&n, &EffectKind::cide(delta).unwrap()).unwrap();
            prop_assert!((fd - exact).abs() / exact.abs().max(1.0) < 1e-6);
        }

        #[test]
        fn cide_sign_is_constant_in_delta(
            pi in 0.001f64..0.999, mu0 in -10f64..10.0, mu1 in -10f64..10.0,
            d1 in 1e-3f64..1e3, d2 in 1e-3f64..1e3,
        ) {
            let n = NuisanceRow::new(pi, mu0, mu1);
            let a = plugin_value(&n, &EffectKind::cide(d1).unwrap()).unwrap();
            let b = plugin_value(&n, &EffectKind::cide(d2).unwrap()).unwrap();
            prop_assert!(a * b >= 0.0);
            // Equivalently the CIE is monotone along δ.
            let c1 = plugin_value(&n, &EffectKind::cie(d1.min(d2)).unwrap()).unwrap();
            let c2 = plugin_value(&n, &EffectKind::cie(d1.max(d2)).unwrap()).unwrap();
            prop_assert!((c2 - c1) * (mu1 - mu0) >= -1e-12);
        }

        #[test]
        fn simplified_product_matches_direct(
            pi in 0.01f64..0.99, mu0 in -5f64..5.0, mu1 in -5f64..5.0,
            y in -10f64..10.0, a in 0u8..2, delta in 0.05f64..20.0,
        ) {
            let n = NuisanceRow::new(pi, mu0, mu1);
            let c = eif_components(&Observation::new(&[], a, y), &n, d(delta));
            let direct = c.omega * c.varphi;
            prop_assert!((direct - c.omega_varphi).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn omega_is_bounded(pi in 0f64..=1.0, delta in 1e-3f64..1e3) {
            let w = weight_omega(pi, delta).unwrap();
            prop_assert!(w >= 0.0);
            prop_assert!(w <= 0.25 * (1.0f64).max(1.0 / (delta * delta)) * (1.0 + 1e-12));
        }
    }
}
