//! Nuisance functions: the propensity score `π(x)` and the arm-specific
//! outcome regressions `μ(0, x)`, `μ(1, x)`.
//!
//! Fitting goes through the [`Learner`] trait so external regressors can be
//! plugged in; three built-in learners are provided by [`RegressorSpec`].

mod learners;
mod noise;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubsetView};
use crate::effects::NuisanceRow;
use crate::error::{Error, Result};

pub use learners::{FittedRegressor, Learner};
pub use noise::{synthesize_noisy_nuisances, NoiseRates, NoiseScale, NuisanceTruth};

/// Default propensity clipping level.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Row-aligned nuisance predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    pub pi: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl NuisanceValues {
    pub fn new(pi: Vec<f64>, mu0: Vec<f64>, mu1: Vec<f64>) -> Result<Self> {
        if pi.len() != mu0.len() || pi.len() != mu1.len() {
            return Err(Error::Usage(format!(
                "nuisance columns differ in length ({}, {}, {})",
                pi.len(),
                mu0.len(),
                mu1.len()
            )));
        }
        let values = NuisanceValues { pi, mu0, mu1 };
        values.validate()?;
        Ok(values)
    }

    /// Nuisances from exact truth functions evaluated at each covariate row.
    pub fn from_truth(truth: &dyn NuisanceTruth, covariates: &[f64], dim: usize) -> Self {
        let rows = covariates.chunks(dim.max(1));
        let mut values = NuisanceValues {
            pi: Vec::with_capacity(rows.len()),
            mu0: Vec::with_capacity(rows.len()),
            mu1: Vec::with_capacity(rows.len()),
        };
        for x in rows {
            values.pi.push(truth.pi(x));
            values.mu0.push(truth.mu(0, x));
            values.mu1.push(truth.mu(1, x));
        }
        values
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn row(&self, i: usize) -> NuisanceRow {
        NuisanceRow::new(self.pi[i], self.mu0[i], self.mu1[i])
    }

    /// Propensities in `[0, 1]`, everything finite.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.pi.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain(format!(
                "propensity in row {i} is {} (outside [0, 1])",
                self.pi[i]
            )));
        }
        let bad = |v: &[f64]| v.iter().position(|m| !m.is_finite());
        if let Some(i) = bad(&self.mu0).or_else(|| bad(&self.mu1)) {
            return Err(Error::Domain(format!("outcome regression in row {i} is not finite")));
        }
        Ok(())
    }

    /// Largest `|μ̂₁ − μ̂₀|` over rows.
    pub fn max_contrast(&self) -> f64 {
        self.mu0
            .iter()
            .zip(&self.mu1)
            .map(|(a, b)| (b - a).abs())
            .fold(0.0, f64::max)
    }

    /// Check the bounded-contrast assumption `|μ̂₁ − μ̂₀| ≤ bound`.
    pub fn check_contrast_bound(&self, bound: f64) -> Result<()> {
        let worst = self.max_contrast();
        if worst <= bound {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "|μ̂₁ − μ̂₀| reaches {worst}, above the configured bound {bound}"
            )))
        }
    }
}

/// Clip a probability into `[epsilon, 1 − epsilon]`.
pub fn clip_probability(p: f64, epsilon: f64) -> f64 {
    p.clamp(epsilon, 1.0 - epsilon)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!("clip level must lie in (0, 0.5), got {epsilon}")))
    }
}

/// Response type a regressor is fitted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Binary,
    Continuous,
}

/// Built-in regression methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    /// Ridge-penalized GLM on a per-covariate polynomial basis (logistic link
    /// for binary responses, identity otherwise).
    PenalizedGlm { degree: usize, lambda: f64 },
    /// k-nearest-neighbour average, Euclidean distance, ties to lower index.
    Knn { k: usize },
    /// Gaussian-kernel Nadaraya–Watson average.
    NadarayaWatson { bandwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub family: Family,
    #[serde(flatten)]
    pub method: Method,
}

impl RegressorSpec {
    pub fn new(family: Family, method: Method) -> Result<Self> {
        let spec = RegressorSpec { family, method };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::PenalizedGlm { degree, lambda } => {
                if degree == 0 {
                    return Err(Error::Domain("polynomial degree must be at least 1".into()));
                }
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::Domain(format!("ridge penalty must be >= 0, got {lambda}")));
                }
            }
            Method::Knn { k } if k == 0 => {
                return Err(Error::Domain("k-NN needs k >= 1".into()));
            }
            Method::NadarayaWatson { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Learners for the three nuisance functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpecs {
    pub propensity: RegressorSpec,
    pub outcome0: RegressorSpec,
    pub outcome1: RegressorSpec,
}

impl NuisanceSpecs {
    /// Penalized GLMs of one polynomial degree for all three functions.
    pub fn glm(degree: usize, lambda: f64) -> Self {
        let method = Method::PenalizedGlm { degree, lambda };
        NuisanceSpecs {
            propensity: RegressorSpec { family: Family::Binary, method },
            outcome0: RegressorSpec { family: Family::Continuous, method },
            outcome1: RegressorSpec { family: Family::Continuous, method },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.propensity.validate()?;
        self.outcome0.validate()?;
        self.outcome1.validate()?;
        if self.propensity.family != Family::Binary {
            return Err(Error::Usage("propensity learner must use the binary family".into()));
        }
        Ok(())
    }
}

impl Default for NuisanceSpecs {
    fn default() -> Self {
        NuisanceSpecs::glm(2, 1e-3)
    }
}

/// Fitted propensity and arm-specific outcome regressions.
pub struct NuisanceModel {
    propensity: Box<dyn FittedRegressor>,
    outcome0: Box<dyn FittedRegressor>,
    outcome1: Box<dyn FittedRegressor>,
    epsilon: f64,
    dim: usize,
}

impl std::fmt::Debug for NuisanceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NuisanceModel")
            .field("epsilon", &self.epsilon)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl NuisanceModel {
    /// Assemble a model from externally fitted regressors.
    pub fn from_parts(
        propensity: Box<dyn FittedRegressor>,
        outcome0: Box<dyn FittedRegressor>,
        outcome1: Box<dyn FittedRegressor>,
        epsilon: f64,
        dim: usize,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(NuisanceModel {
            propensity,
            outcome0,
            outcome1,
            epsilon,
            dim,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Predict at a row-major covariate buffer of width [`dim`](Self::dim).
    pub fn predict(&self, covariates: &[f64], dim: usize) -> Result<NuisanceValues> {
        if dim != self.dim || (dim > 0 && covariates.len() % dim != 0) {
            return Err(Error::Usage(format!(
                "model was fitted on {} covariates, got {dim}",
                self.dim
            )));
        }
        let pi = self
            .propensity
            .predict(covariates)
            .into_iter()
            .map(|p| clip_probability(p, self.epsilon))
            .collect();
        let mu0 = self.outcome0.predict(covariates);
        let mu1 = self.outcome1.predict(covariates);
        NuisanceValues::new(pi, mu0, mu1)
    }
}

/// Fit the three nuisance regressions on `train`.
pub fn fit_nuisances(train: &Dataset, specs: &NuisanceSpecs, epsilon: f64) -> Result<NuisanceModel> {
    fit_on_view(&train.as_view(), specs, epsilon)
}

pub(crate) fn fit_on_view(
    train: &SubsetView,
    specs: &NuisanceSpecs,
    epsilon: f64,
) -> Result<NuisanceModel> {
    check_epsilon(epsilon)?;
    specs.validate()?;
    let dim = train.dim;
    let mut arms: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &a) in train.a.iter().enumerate() {
        arms[a as usize].push(i);
    }
    for (arm, label) in [(0, "control"), (1, "treated")] {
        if arms[arm].len() < 2 {
            return Err(Error::fit(format!(
                "{label} arm has {} rows; at least 2 are needed for the outcome regression",
                arms[arm].len()
            )));
        }
    }
    let a_as_f64: Vec<f64> = train.a.iter().map(|&a| f64::from(a)).collect();
    let propensity = specs.propensity.fit(&train.x, dim, &a_as_f64)?;
    let arm_fit = |arm: usize, spec: &RegressorSpec| {
        let mut x = Vec::with_capacity(arms[arm].len() * dim);
        let mut y = Vec::with_capacity(arms[arm].len());
        for &i in &arms[arm] {
            x.extend_from_slice(&train.x[i * dim..(i + 1) * dim]);
            y.push(train.y[i]);
        }
        spec.fit(&x, dim, &y)
    };
    let outcome0 = arm_fit(0, &specs.outcome0)?;
    let outcome1 = arm_fit(1, &specs.outcome1)?;
    Ok(NuisanceModel {
        propensity,
        outcome0,
        outcome1,
        epsilon,
        dim,
    })
}

/// Predict nuisances for every row of `data`.
pub fn predict_nuisances(model: &NuisanceModel, data: &Dataset) -> Result<NuisanceValues> {
    model.predict(data.covariates(), data.dim())
}
