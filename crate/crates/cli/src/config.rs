//! Serializable run configuration. Every result document embeds the
//! effective configuration so a run can be replayed exactly.

use std::path::PathBuf;

use incremental_effects::idr::SmootherSpec;
use incremental_effects::nuisance::{Family, Method, NoiseRates, NoiseScale, NuisanceSpecs, RegressorSpec};
use incremental_effects::simulation::{Experiment, ExperimentConfig};
use incremental_effects::vcide::SigmaRule;
use incremental_effects::EffectKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::Roles;

/// Cross-fitting settings shared by the estimation commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossfitConfig {
    pub folds: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub nuisances: NuisanceSpecs,
}

/// Which effect family, and at which intervention parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EffectSpec {
    Cie { deltas: Vec<f64> },
    Cide { deltas: Vec<f64> },
    Cice { upper: f64, lower: f64 },
}

impl EffectSpec {
    pub fn effects(&self) -> Result<Vec<EffectKind>> {
        let out = match self {
            EffectSpec::Cie { deltas } => deltas.iter().map(|&d| EffectKind::cie(d)).collect(),
            EffectSpec::Cide { deltas } => deltas.iter().map(|&d| EffectKind::cide(d)).collect(),
            EffectSpec::Cice { upper, lower } => EffectKind::cice(*upper, *lower).map(|e| vec![e]),
        }?;
        if out.is_empty() {
            return Err(CliError::Config("at least one intervention parameter is required".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "lowercase")]
pub enum LearnerConfig {
    /// Working-model formula over the conditioning columns.
    Projection { basis: String },
    /// Smoother evaluated on `grid_points` equispaced points over the range of
    /// `V` unless the spec carries an explicit grid.
    Idr { smoother: SmootherSpec, grid_points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub data: PathBuf,
    pub roles: Roles,
    pub effect: EffectSpec,
    pub learner: LearnerConfig,
    pub crossfit: CrossfitConfig,
    /// Confidence level of reported intervals.
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcideConfig {
    pub data: PathBuf,
    pub roles: Roles,
    pub deltas: Vec<f64>,
    pub crossfit: CrossfitConfig,
    /// Confidence level; the test size is `1 − level`.
    pub level: f64,
    pub conservative_factor: f64,
    pub sigma_rule: SigmaRule,
    /// Smoother for the derivative-effect curve when conditioning on a subset.
    pub smoother: SmootherSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckConfig {
    pub instances: usize,
    pub points: usize,
    pub deltas: Vec<f64>,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub data: PathBuf,
    pub roles: Roles,
    pub crossfit: CrossfitConfig,
    pub bins: usize,
    /// Covariate whose quantile groups split the histogram.
    pub by: Option<String>,
    pub groups: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpChoice {
    Appendix,
    Null,
    Linear,
}

impl std::str::FromStr for DgpChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appendix" => Ok(DgpChoice::Appendix),
            "null" => Ok(DgpChoice::Null),
            "linear" => Ok(DgpChoice::Linear),
            other => Err(CliError::Config(format!(
                "unknown process '{other}' (expected appendix, null or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub dgp: DgpChoice,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum CommandConfig {
    Fit(FitConfig),
    Vcide(VcideConfig),
    Simulate(ExperimentConfig),
    OracleCheck(OracleCheckConfig),
    Diagnose(DiagnoseConfig),
    Generate(GenerateConfig),
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            CommandConfig::Fit(_) => "fit",
            CommandConfig::Vcide(_) => "vcide",
            CommandConfig::Simulate(_) => "simulate",
            CommandConfig::OracleCheck(_) => "oracle-check",
            CommandConfig::Diagnose(_) => "diagnose",
            CommandConfig::Generate(_) => "generate",
        }
    }
}

/// Parse a nuisance learner: `glm[:DEGREE[:LAMBDA]]`, `knn:K` or `nw:BANDWIDTH`.
pub fn parse_learner(spec: &str, family: Family) -> Result<RegressorSpec> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let bad = || CliError::Config(format!("cannot parse learner '{spec}' (glm[:degree[:lambda]], knn:k, nw:h)"));
    let method = match parts.as_slice() {
        ["glm"] => Method::PenalizedGlm { degree: 2, lambda: 1e-3 },
        ["glm", d] => Method::PenalizedGlm {
            degree: d.parse().map_err(|_| bad())?,
            lambda: 1e-3,
        },
        ["glm", d, l] => Method::PenalizedGlm {
            degree: d.parse().map_err(|_| bad())?,
            lambda: l.parse().map_err(|_| bad())?,
        },
        ["knn", k] => Method::Knn {
            k: k.parse().map_err(|_| bad())?,
        },
        ["nw", h] => Method::NadarayaWatson {
            bandwidth: h.parse().map_err(|_| bad())?,
        },
        _ => return Err(bad()),
    };
    Ok(RegressorSpec::new(family, method)?)
}

/// Parse `"pi:mu,pi:mu,..."` into noise-rate cells.
pub fn parse_rates(spec: &str) -> Result<Vec<NoiseRates>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|cell| {
            let (p, m) = cell
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("rate cell '{cell}' must look like 0.5:0.5")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("'{s}' is not a number")))
            };
            Ok(NoiseRates::new(parse(p)?, parse(m)?)?)
        })
        .collect()
}

pub fn parse_noise_scale(s: &str) -> Result<NoiseScale> {
    match s {
        "probability" => Ok(NoiseScale::Probability),
        "logit" => Ok(NoiseScale::Logit),
        other => Err(CliError::Config(format!(
            "unknown noise scale '{other}' (expected probability or logit)"
        ))),
    }
}

pub fn parse_experiment(s: &str) -> Result<Experiment> {
    Ok(s.parse::<Experiment>()?)
}

pub fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("level must lie in (0, 1), got {level}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learner_strings() {
        let s = parse_learner("glm:3:0.5", Family::Binary).unwrap();
        assert_eq!(s.method, Method::PenalizedGlm { degree: 3, lambda: 0.5 });
        assert_eq!(parse_learner("knn:7", Family::Continuous).unwrap().method, Method::Knn { k: 7 });
        assert!(parse_learner("forest", Family::Continuous).is_err());
        assert!(parse_learner("knn:0", Family::Continuous).is_err());
    }

    #[test]
    fn rate_cells() {
        let r = parse_rates("0.5:0.5, 0.1:0.3").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[1].alpha_pi, r[1].alpha_mu), (0.1, 0.3));
        assert!(parse_rates("0.5").is_err());
        assert!(parse_rates("0:0.5").is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = CommandConfig::OracleCheck(OracleCheckConfig {
            instances: 5,
            points: 4,
            deltas: vec![0.5, 2.0],
            seed: 9,
            tolerance: 1e-10,
        });
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<CommandConfig>(&text).unwrap(), cfg);
    }
}
