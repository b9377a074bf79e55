//! Exact ground truth, computed without the estimator code path.
//!
//! The enumeration oracle sums over the finite support and over the
//! intervened treatment `Q ∈ {0, 1}`; the quadrature oracle integrates the
//! identification integrand of the continuous reference process. Both use
//! their own odds-scale parameterisation of the intervention:
//! with `r = π/(1 − π)`, `P(Q = 1) = δr/(1 + δr)` and `∂P(Q = 1)/∂δ = r/(1 + δr)²`.

use crate::effects::EffectKind;
use crate::error::{Error, Result};

use super::dgp::{AppendixDgp, DiscreteDgp, BREAKPOINTS, SUPPORT_HI, SUPPORT_LO};

/// Absolute tolerance of the adaptive quadrature.
pub const QUADRATURE_TOL: f64 = 1e-8;

fn treat_prob(pi: f64, delta: f64) -> f64 {
    let r = pi / (1.0 - pi);
    delta * r / (1.0 + delta * r)
}

fn treat_prob_slope(pi: f64, delta: f64) -> f64 {
    let r = pi / (1.0 - pi);
    r / ((1.0 + delta * r) * (1.0 + delta * r))
}

/// Counterfactual mean at one covariate value, enumerating `Q`.
fn counterfactual_mean(pi: f64, mu0: f64, mu1: f64, delta: f64) -> f64 {
    let p1 = treat_prob(pi, delta);
    [(1.0 - p1, mu0), (p1, mu1)].iter().map(|&(prob, mu)| prob * mu).sum()
}

/// True conditional effect at one covariate value.
pub fn conditional_effect(pi: f64, mu0: f64, mu1: f64, effect: &EffectKind) -> f64 {
    match *effect {
        EffectKind::Cie { delta } => counterfactual_mean(pi, mu0, mu1, delta.get()),
        EffectKind::Cice { upper, lower } => {
            counterfactual_mean(pi, mu0, mu1, upper.get()) - counterfactual_mean(pi, mu0, mu1, lower.get())
        }
        EffectKind::Cide { delta } => treat_prob_slope(pi, delta.get()) * (mu1 - mu0),
    }
}

/// Population average effect of a finite-support process by full enumeration.
pub fn enumeration_oracle(dgp: &DiscreteDgp, effect: &EffectKind) -> Result<f64> {
    dgp.validate()?;
    effect.validate()?;
    Ok((0..dgp.xs.len())
        .map(|j| dgp.probs[j] * conditional_effect(dgp.pi[j], dgp.mu0[j], dgp.mu1[j], effect))
        .sum())
}

/// Population variance of the conditional derivative effect of a
/// finite-support process.
pub fn enumeration_vcide(dgp: &DiscreteDgp, delta: f64) -> Result<f64> {
    let effect = EffectKind::cide(delta)?;
    dgp.validate()?;
    let vals: Vec<f64> = (0..dgp.xs.len())
        .map(|j| conditional_effect(dgp.pi[j], dgp.mu0[j], dgp.mu1[j], &effect))
        .collect();
    let m: f64 = vals.iter().zip(&dgp.probs).map(|(v, p)| v * p).sum();
    Ok(vals.iter().zip(&dgp.probs).map(|(v, p)| p * (v - m) * (v - m)).sum())
}

// Gauss–Kronrod 7/15 nodes and weights on [−1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7K15 panel: (Kronrod estimate, |Kronrod − Gauss|).
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        // Gauss nodes are the odd-indexed Kronrod nodes.
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]` to absolute
/// tolerance `tol`, bisecting the panel with the largest error estimate.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_PANELS: usize = 2000;
    let mut panels = vec![{
        let (v, e) = gk15(f, a, b);
        (a, b, v, e)
    }];
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= tol {
            return Ok(total);
        }
        if panels.len() >= MAX_PANELS || !total.is_finite() {
            return Err(Error::Numerical(format!(
                "quadrature did not reach tolerance {tol:e}: estimate {total}, error bound {err:e}"
            )));
        }
        let (i, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one panel");
        let (lo, hi, _, _) = panels.swap_remove(i);
        let mid = 0.5 * (lo + hi);
        for (l, h) in [(lo, mid), (mid, hi)] {
            let (v, e) = gk15(f, l, h);
            panels.push((l, h, v, e));
        }
    }
}

/// `E[f(X)]` for `X ~ Unif(−4, 4)`, split at the regression's jump points.
pub fn uniform_expectation(f: &dyn Fn(f64) -> f64) -> Result<f64> {
    let mut knots = vec![SUPPORT_LO];
    knots.extend(BREAKPOINTS);
    knots.push(SUPPORT_HI);
    let width = SUPPORT_HI - SUPPORT_LO;
    let per_piece = QUADRATURE_TOL * width / (knots.len() - 1) as f64;
    let mut total = 0.0;
    for w in knots.windows(2) {
        total += integrate(f, w[0], w[1], per_piece)?;
    }
    Ok(total / width)
}

/// True conditional effect of the continuous reference process at `x`.
pub fn appendix_conditional(dgp: &AppendixDgp, effect: &EffectKind, x: f64) -> f64 {
    conditional_effect(dgp.propensity(x), dgp.mu0(x), dgp.mu1(x), effect)
}

/// Population average effect of the continuous reference process.
pub fn quadrature_oracle(dgp: &AppendixDgp, effect: &EffectKind) -> Result<f64> {
    effect.validate()?;
    uniform_expectation(&|x| appendix_conditional(dgp, effect, x))
}

/// Population variance of the conditional derivative effect.
pub fn quadrature_vcide(dgp: &AppendixDgp, delta: f64) -> Result<f64> {
    let effect = EffectKind::cide(delta)?;
    let m = quadrature_oracle(dgp, &effect)?;
    uniform_expectation(&|x| {
        let d = appendix_conditional(dgp, &effect, x) - m;
        d * d
    })
}
