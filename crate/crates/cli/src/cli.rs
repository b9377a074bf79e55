//! Argument parsing: clap definitions and their conversion into a
//! [`CommandConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use incremental_effects::idr::{Bandwidth, SmootherSpec, DEFAULT_GRID_POINTS};
use incremental_effects::nuisance::{Family, NuisanceSpecs, DEFAULT_EPSILON};
use incremental_effects::simulation::{Experiment, ExperimentConfig};
use incremental_effects::vcide::{SigmaRule, DEFAULT_CONSERVATIVE_FACTOR};

use crate::config::*;
use crate::error::{CliError, Result};
use crate::io::Roles;

#[derive(Debug, Parser)]
#[command(name = "ice", version, about = "Incremental causal effects under propensity-score interventions")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "ICE_THREADS")]
    pub threads: Option<usize>,
    /// Record a creation timestamp in result.json (breaks byte-for-byte reruns).
    #[arg(long, global = true)]
    pub stamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate conditional effects with the projection or smoothing learner.
    Fit(FitArgs),
    /// Estimate the variance of the derivative effect and test homogeneity.
    Vcide(VcideArgs),
    /// Run a Monte Carlo experiment on the synthetic processes.
    Simulate(SimulateArgs),
    /// Compare plug-in functionals with exact enumeration on random processes.
    OracleCheck(OracleCheckArgs),
    /// Histogram of cross-fitted propensities, flagging mass near 0 and 1.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic dataset with its true nuisance values.
    Generate(GenerateArgs),
    /// Re-run the configuration stored in a result.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub treatment: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',', required = true)]
    pub covariates: Vec<String>,
    /// Comma-separated conditioning columns (default: all covariates).
    #[arg(long, value_delimiter = ',')]
    pub condition_on: Vec<String>,
}

impl DataArgs {
    fn roles(&self) -> Roles {
        Roles {
            outcome: self.outcome.clone(),
            treatment: self.treatment.clone(),
            covariates: self.covariates.clone(),
            condition_on: if self.condition_on.is_empty() {
                self.covariates.clone()
            } else {
                self.condition_on.clone()
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct CrossfitArgs {
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Propensity clip level.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Propensity learner: glm[:degree[:lambda]], knn:k or nw:bandwidth.
    #[arg(long, default_value = "glm:2:0.001")]
    pub pi_learner: String,
    /// Outcome learner for both arms (same syntax).
    #[arg(long, default_value = "glm:2:0.001")]
    pub mu_learner: String,
}

impl CrossfitArgs {
    fn config(&self) -> Result<CrossfitConfig> {
        let mu = parse_learner(&self.mu_learner, Family::Continuous)?;
        let nuisances = NuisanceSpecs {
            propensity: parse_learner(&self.pi_learner, Family::Binary)?,
            outcome0: mu,
            outcome1: mu,
        };
        Ok(CrossfitConfig {
            folds: self.folds,
            seed: self.seed,
            epsilon: self.epsilon,
            nuisances,
        })
    }
}

#[derive(Debug, Args)]
pub struct SmootherArgs {
    /// Local-linear bandwidth: "auto" (cross-validated) or a positive number.
    #[arg(long, default_value = "auto")]
    pub bandwidth: String,
    /// Use a k-nearest-neighbour mean instead of local-linear smoothing.
    #[arg(long)]
    pub knn: Option<usize>,
}

impl SmootherArgs {
    fn spec(&self) -> Result<SmootherSpec> {
        Ok(match self.knn {
            Some(k) => SmootherSpec::knn_mean(k),
            None => SmootherSpec::local_linear(parse_bandwidth(&self.bandwidth)?),
        })
    }
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth> {
    if s == "auto" {
        return Ok(Bandwidth::Auto);
    }
    s.parse::<f64>()
        .ok()
        .filter(|h| h.is_finite() && *h > 0.0)
        .map(Bandwidth::Fixed)
        .ok_or_else(|| CliError::Config(format!("bandwidth must be 'auto' or a positive number, got '{s}'")))
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub crossfit: CrossfitArgs,
    #[arg(long, value_parser = ["cie", "cice", "cide"], default_value = "cie")]
    pub effect: String,
    /// Comma-separated intervention parameters (cie, cide).
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
    /// Lower parameter of the contrast (cice).
    #[arg(long)]
    pub delta_l: Option<f64>,
    /// Upper parameter of the contrast (cice).
    #[arg(long)]
    pub delta_u: Option<f64>,
    #[arg(long, value_parser = ["projection", "idr"], default_value = "projection")]
    pub learner: String,
    /// Working-model formula, e.g. "1 + x + x^2" (default: intercept plus linear terms).
    #[arg(long)]
    pub basis: Option<String>,
    #[command(flatten)]
    pub smoother: SmootherArgs,
    /// Evaluation points of the smoothed curve, spread over the range of the conditioning column.
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VcideArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub crossfit: CrossfitArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub delta: Vec<f64>,
    /// Confidence level; the test size is one minus this.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = DEFAULT_CONSERVATIVE_FACTOR)]
    pub conservative_factor: f64,
    #[arg(long, value_parser = ["plain", "delta-method"], default_value = "plain")]
    pub sigma_rule: String,
    #[command(flatten)]
    pub smoother: SmootherArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = ["coverage", "mse", "type1", "power"])]
    pub experiment: String,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where propensity noise is added: probability or logit.
    #[arg(long, default_value = "probability")]
    pub noise_scale: String,
    /// Rate cells "a_pi:a_mu,..." (default: the full 0.1..0.5 grid; none for type1/power).
    #[arg(long)]
    pub rates: Option<String>,
    /// Sample sizes for the power experiment.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    /// Intervention parameter of the derivative effect (type1/power).
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    /// Maximum support size of each random process (at most 10).
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,1,2,5")]
    pub delta: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub crossfit: CrossfitArgs,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Covariate whose quantile groups get separate histograms.
    #[arg(long)]
    pub by: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = ["appendix", "null", "linear"], default_value = "appendix")]
    pub dgp: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A result.json written by an earlier run.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// What `main` should do after parsing.
#[derive(Debug)]
pub enum Plan {
    Run { config: CommandConfig, out: PathBuf },
    Replay { from: PathBuf, out: PathBuf },
}

fn default_basis(names: &[String]) -> String {
    std::iter::once("1".to_string())
        .chain(names.iter().cloned())
        .collect::<Vec<_>>()
        .join(" + ")
}

impl Command {
    pub fn plan(&self) -> Result<Plan> {
        let (config, out) = match self {
            Command::Fit(a) => {
                let roles = a.data.roles();
                let effect = match a.effect.as_str() {
                    "cice" => {
                        if !a.delta.is_empty() {
                            return Err(CliError::Config("cice takes --delta-u and --delta-l, not --delta".into()));
                        }
                        match (a.delta_u, a.delta_l) {
                            (Some(upper), Some(lower)) => EffectSpec::Cice { upper, lower },
                            _ => return Err(CliError::Config("cice requires --delta-u and --delta-l".into())),
                        }
                    }
                    kind => {
                        if a.delta.is_empty() {
                            return Err(CliError::Config(format!("{kind} requires --delta")));
                        }
                        if a.delta_u.is_some() || a.delta_l.is_some() {
                            return Err(CliError::Config("--delta-u/--delta-l apply to cice only".into()));
                        }
                        if kind == "cie" {
                            EffectSpec::Cie { deltas: a.delta.clone() }
                        } else {
                            EffectSpec::Cide { deltas: a.delta.clone() }
                        }
                    }
                };
                let learner = match a.learner.as_str() {
                    "idr" => {
                        if a.basis.is_some() {
                            return Err(CliError::Config("--basis applies to the projection learner".into()));
                        }
                        LearnerConfig::Idr {
                            smoother: a.smoother.spec()?,
                            grid_points: a.grid_points,
                        }
                    }
                    _ => LearnerConfig::Projection {
                        basis: a.basis.clone().unwrap_or_else(|| default_basis(&roles.condition_on)),
                    },
                };
                let cfg = FitConfig {
                    data: a.data.data.clone(),
                    roles,
                    effect,
                    learner,
                    crossfit: a.crossfit.config()?,
                    level: a.level,
                };
                (CommandConfig::Fit(cfg), a.out.clone())
            }
            Command::Vcide(a) => {
                let cfg = VcideConfig {
                    data: a.data.data.clone(),
                    roles: a.data.roles(),
                    deltas: a.delta.clone(),
                    crossfit: a.crossfit.config()?,
                    level: a.level,
                    conservative_factor: a.conservative_factor,
                    sigma_rule: if a.sigma_rule == "delta-method" {
                        SigmaRule::DeltaMethod
                    } else {
                        SigmaRule::Plain
                    },
                    smoother: a.smoother.spec()?,
                };
                (CommandConfig::Vcide(cfg), a.out.clone())
            }
            Command::Simulate(a) => {
                let experiment = parse_experiment(&a.experiment)?;
                let mut cfg = match experiment {
                    Experiment::Coverage => ExperimentConfig::coverage(a.reps, a.seed),
                    Experiment::Mse => ExperimentConfig::mse(a.reps, a.seed),
                    Experiment::Type1 => ExperimentConfig::type1(a.reps, a.seed),
                    Experiment::Power => ExperimentConfig::power(a.reps, a.seed),
                };
                cfg.n = a.n;
                cfg.noise_scale = parse_noise_scale(&a.noise_scale)?;
                if let Some(r) = &a.rates {
                    cfg.rates = parse_rates(r)?;
                }
                if !a.sizes.is_empty() {
                    cfg.sizes = a.sizes.clone();
                }
                cfg.delta = a.delta;
                check_level(a.level)?;
                cfg.level = a.level;
                cfg.vcide.alpha = 1.0 - a.level;
                (CommandConfig::Simulate(cfg), a.out.clone())
            }
            Command::OracleCheck(a) => (
                CommandConfig::OracleCheck(OracleCheckConfig {
                    instances: a.instances,
                    points: a.points,
                    deltas: a.delta.clone(),
                    seed: a.seed,
                    tolerance: a.tolerance,
                }),
                a.out.clone(),
            ),
            Command::Diagnose(a) => (
                CommandConfig::Diagnose(DiagnoseConfig {
                    data: a.data.data.clone(),
                    roles: a.data.roles(),
                    crossfit: a.crossfit.config()?,
                    bins: a.bins,
                    by: a.by.clone(),
                    groups: a.groups,
                }),
                a.out.clone(),
            ),
            Command::Generate(a) => (
                CommandConfig::Generate(GenerateConfig {
                    dgp: a.dgp.parse()?,
                    n: a.n,
                    seed: a.seed,
                }),
                a.out.clone(),
            ),
            Command::Replay(a) => {
                return Ok(Plan::Replay {
                    from: a.from.clone(),
                    out: a.out.clone(),
                })
            }
        };
        Ok(Plan::Run { config, out })
    }
}
