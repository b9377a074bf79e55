//! Projection learner: least-squares projection of a conditional effect onto
//! a linear-in-parameters working model `g(v; β) = βᵀ b(v)`.
//!
//! `β̂` solves the empirical moment condition `Pₙ[b(V)(ξ̂ − βᵀb(V))] = 0`,
//! whose root is the least-squares fit of the pseudo-outcomes on the basis.
//! Inference uses the sandwich covariance `M̂⁻¹ Ê(φφᵀ) M̂⁻ᵀ / n` with
//! `M̂ = −BᵀB/n` and `Ê(φφᵀ) = Σ b bᵀ r² / n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::effects::PseudoOutcomeTable;
use crate::error::{Error, Result};
use crate::stats::{check_level, Interval};

/// Reciprocal condition number below which the design is rejected.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// One basis function: a product of integer powers of conditioning
/// variables. The empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub factors: Vec<(usize, u32)>,
}

impl Term {
    fn eval(&self, v: &[f64]) -> f64 {
        self.factors
            .iter()
            .map(|&(j, p)| v[j].powi(p as i32))
            .product()
    }

    fn render(&self, variables: &[String]) -> String {
        if self.factors.is_empty() {
            return "1".into();
        }
        self.factors
            .iter()
            .map(|&(j, p)| {
                if p == 1 {
                    variables[j].clone()
                } else {
                    format!("{}^{p}", variables[j])
                }
            })
            .collect::<Vec<_>>()
            .join("*")
    }

    fn canonical(mut factors: Vec<(usize, u32)>) -> Self {
        factors.sort_unstable();
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(factors.len());
        for (j, p) in factors {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += p,
                _ => merged.push((j, p)),
            }
        }
        Term { factors: merged }
    }
}

/// Feature map `b(v)` of a working model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    variables: Vec<String>,
    terms: Vec<Term>,
}

impl Basis {
    /// Parse a formula such as `"1 + v1 + v1^2 + v2 + v1*v2"` over the named
    /// conditioning variables. The intercept must be written explicitly.
    pub fn parse(formula: &str, variables: &[String]) -> Result<Self> {
        let bad = |msg: String| Error::Usage(format!("basis formula '{formula}': {msg}"));
        let mut terms: Vec<Term> = Vec::new();
        for raw in formula.split('+') {
            let raw = raw.trim();
            if raw.is_empty() {
                return Err(bad("empty term".into()));
            }
            let term = if raw == "1" {
                Term { factors: vec![] }
            } else {
                let mut factors = Vec::new();
                for factor in raw.split('*') {
                    let factor = factor.trim();
                    let (name, power) = match factor.split_once('^') {
                        Some((name, p)) => {
                            let p: u32 = p
                                .trim()
                                .parse()
                                .map_err(|_| bad(format!("invalid power in '{factor}'")))?;
                            if p == 0 {
                                return Err(bad(format!("zero power in '{factor}'")));
                            }
                            (name.trim(), p)
                        }
                        None => (factor, 1),
                    };
                    let j = variables
                        .iter()
                        .position(|v| v == name)
                        .ok_or_else(|| bad(format!("unknown variable '{name}'")))?;
                    factors.push((j, power));
                }
                Term::canonical(factors)
            };
            if terms.contains(&term) {
                return Err(bad(format!("duplicate term '{raw}'")));
            }
            terms.push(term);
        }
        Ok(Basis {
            variables: variables.to_vec(),
            terms,
        })
    }

    /// `1 + v + v² + … + v^degree` in one variable.
    pub fn polynomial(variable: &str, degree: u32) -> Self {
        let terms = (0..=degree)
            .map(|p| Term {
                factors: if p == 0 { vec![] } else { vec![(0, p)] },
            })
            .collect();
        Basis {
            variables: vec![variable.to_string()],
            terms,
        }
    }

    /// Intercept-only model (the average effect).
    pub fn intercept() -> Self {
        Basis {
            variables: vec![],
            terms: vec![Term { factors: vec![] }],
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of conditioning variables the basis reads.
    pub fn width(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.render(&self.variables)).collect()
    }

    /// `b(v)` for one conditioning vector.
    pub fn eval(&self, v: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(v)).collect()
    }

    fn design(&self, v: &[f64], n: usize) -> DMatrix<f64> {
        let w = self.width();
        DMatrix::from_fn(n, self.len(), |i, j| self.terms[j].eval(&v[i * w..(i + 1) * w]))
    }
}

/// Small-sample adjustment of the sandwich meat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SandwichCorrection {
    /// Raw squared residuals.
    #[default]
    None,
    /// Scale by `n / (n − p)`.
    Hc1,
}

/// Fitted working model with sandwich covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFit {
    pub basis: Basis,
    pub beta: Vec<f64>,
    /// Covariance of `β̂` (already divided by `n`), row-major `p × p`.
    pub covariance: Vec<Vec<f64>>,
    pub n: usize,
    pub residual_rms: f64,
    /// Max-norm of the empirical moment condition at `β̂`.
    pub moment_residual_max: f64,
}

/// Point estimate, standard error and Wald interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub estimate: f64,
    pub se: f64,
    pub ci: Interval,
}

fn check_rows(v: &[f64], width: usize, n: usize) -> Result<()> {
    if v.len() != n * width {
        return Err(Error::Usage(format!(
            "conditioning covariates hold {} values, expected {n} rows x {width}",
            v.len()
        )));
    }
    Ok(())
}

/// Solve the empirical moment condition for `β̂` and its sandwich covariance.
pub fn fit_projection(pseudo: &PseudoOutcomeTable, v: &[f64], basis: &Basis) -> Result<ProjectionFit> {
    fit_projection_with(&pseudo.xi, v, basis, SandwichCorrection::None)
}

/// [`fit_projection`] on a bare response vector with a chosen correction.
pub fn fit_projection_with(
    xi: &[f64],
    v: &[f64],
    basis: &Basis,
    correction: SandwichCorrection,
) -> Result<ProjectionFit> {
    let n = xi.len();
    let p = basis.len();
    check_rows(v, basis.width(), n)?;
    if n <= p {
        return Err(Error::Usage(format!(
            "working model has {p} terms but only {n} observations"
        )));
    }
    let b = basis.design(v, n);
    let svd = b.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin, imin) = sv.iter().enumerate().fold(
        (0.0_f64, f64::INFINITY, 0),
        |(mx, mn, im), (i, &s)| (mx.max(s), if s < mn { s } else { mn }, if s < mn { i } else { im }),
    );
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(rcond >= RCOND_THRESHOLD) {
        let vt = svd.v_t.as_ref().expect("right singular vectors requested");
        let direction = vt.row(imin);
        let peak = direction.amax();
        let names = basis.names();
        let columns = (0..p)
            .filter(|&j| direction[j].abs() > 0.1 * peak)
            .map(|j| names[j].clone())
            .collect();
        return Err(Error::RankDeficient { rcond, columns });
    }
    let y = DVector::from_column_slice(xi);
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?;
    // (BᵀB)⁻¹ = V Σ⁻² Vᵀ
    let vt = svd.v_t.as_ref().expect("right singular vectors requested");
    let inv_sq = DMatrix::from_diagonal(&sv.map(|s| 1.0 / (s * s)));
    let bread = vt.transpose() * inv_sq * vt;
    let resid = &y - &b * &beta;
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let row = b.row(i);
        let r2 = resid[i] * resid[i];
        meat += row.transpose() * row * r2;
    }
    if correction == SandwichCorrection::Hc1 {
        meat *= n as f64 / (n - p) as f64;
    }
    let mut cov = &bread * meat * &bread;
    cov = (&cov + cov.transpose()) * 0.5;
    let moment = b.tr_mul(&resid) / n as f64;
    Ok(ProjectionFit {
        basis: basis.clone(),
        beta: beta.iter().copied().collect(),
        covariance: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
        n,
        residual_rms: (resid.norm_squared() / n as f64).sqrt(),
        moment_residual_max: moment.amax(),
    })
}

impl ProjectionFit {
    /// Standard error of coefficient `j`.
    pub fn coefficient_se(&self, j: usize) -> f64 {
        self.covariance[j][j].max(0.0).sqrt()
    }

    /// Wald interval for coefficient `j`.
    pub fn coefficient_ci(&self, j: usize, level: f64) -> Interval {
        Interval::wald(self.beta[j], self.coefficient_se(j), level)
    }
}

/// Evaluate `g(v; β̂)` with the delta-method standard error
/// `sqrt(b(v)ᵀ Cov b(v))`.
pub fn predict_projection(fit: &ProjectionFit, v: &[f64], level: f64) -> Result<Prediction> {
    check_level(level)?;
    check_rows(v, fit.basis.width(), 1)?;
    let b = fit.basis.eval(v);
    let estimate = b.iter().zip(&fit.beta).map(|(x, y)| x * y).sum();
    let mut var = 0.0;
    for (i, bi) in b.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            var += bi * fit.covariance[i][j] * bj;
        }
    }
    let se = var.max(0.0).sqrt();
    Ok(Prediction {
        estimate,
        se,
        ci: Interval::wald(estimate, se, level),
    })
}

/// Empirical moment condition `Pₙ[b(V)(ξ̂ − β̂ᵀb(V))]` at the fitted `β̂`.
pub fn moment_residual(fit: &ProjectionFit, pseudo: &PseudoOutcomeTable, v: &[f64]) -> Result<Vec<f64>> {
    let n = pseudo.len();
    let w = fit.basis.width();
    check_rows(v, w, n)?;
    let mut out = vec![0.0; fit.basis.len()];
    for i in 0..n {
        let b = fit.basis.eval(&v[i * w..(i + 1) * w]);
        let r = pseudo.xi[i] - b.iter().zip(&fit.beta).map(|(x, y)| x * y).sum::<f64>();
        for (o, bj) in out.iter_mut().zip(&b) {
            *o += bj * r;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(out)
}
