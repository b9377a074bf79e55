//! Monte-Carlo experiments on the reference process.
//!
//! Every replicate derives its own seed from `(config.seed, replicate)`, so
//! results do not depend on how replicates are scheduled across threads.
//! Within a replicate all noise-rate cells share one simulated dataset
//! (common random numbers), which sharpens between-cell comparisons.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{EffectKind, PseudoOutcomeTable};
use crate::error::{Error, Result};
use crate::idr::{smooth_many, SmootherSpec};
use crate::nuisance::{synthesize_noisy_nuisances, NoiseRates, NoiseScale, NuisanceValues};
use crate::projection::{fit_projection, Basis};
use crate::stats::{mean, mix_seed, sample_variance};
use crate::vcide::{estimate_vcide_full_with, VcideOptions};

use super::dgp::{tau_cice, AppendixDgp, DgpVariant, CONTRAST_COEFFICIENTS, CONTRAST_LOWER, CONTRAST_UPPER, SUPPORT_HI, SUPPORT_LO};
use super::oracle::{quadrature_oracle, quadrature_vcide};

/// Default rate values on each axis of the noise grid.
pub const RATE_VALUES: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Coverage,
    Mse,
    Type1,
    Power,
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coverage" => Ok(Experiment::Coverage),
            "mse" => Ok(Experiment::Mse),
            "type1" => Ok(Experiment::Type1),
            "power" => Ok(Experiment::Power),
            other => Err(Error::Usage(format!(
                "unknown experiment '{other}' (expected coverage, mse, type1 or power)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n: usize,
    pub reps: usize,
    /// Noise-rate cells. For the rejection experiments an empty list means
    /// true nuisances.
    pub rates: Vec<NoiseRates>,
    /// Sample sizes for the power experiment.
    pub sizes: Vec<usize>,
    /// Intervention parameter of the derivative effect (rejection experiments).
    pub delta: f64,
    pub seed: u64,
    /// Confidence level of projection intervals.
    pub level: f64,
    pub vcide: VcideOptions,
    pub noise_scale: NoiseScale,
    /// Points of the equispaced evaluation grid on `[−4, 4]`.
    pub eval_points: usize,
    pub smoother: SmootherSpec,
}

/// Full Cartesian grid of `(α_π, α_μ)` over `values`, `α_π` varying fastest.
pub fn rate_grid(values: &[f64]) -> Result<Vec<NoiseRates>> {
    let mut out = Vec::with_capacity(values.len() * values.len());
    for &mu in values {
        for &pi in values {
            out.push(NoiseRates::new(pi, mu)?);
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    fn base(experiment: Experiment, reps: usize, seed: u64) -> Self {
        ExperimentConfig {
            experiment,
            n: 1000,
            reps,
            rates: rate_grid(&RATE_VALUES).expect("static grid is valid"),
            sizes: vec![500, 2000, 8000],
            delta: 1.0,
            seed,
            level: 0.95,
            vcide: VcideOptions::default(),
            noise_scale: NoiseScale::Probability,
            eval_points: 101,
            smoother: SmootherSpec::default(),
        }
    }

    pub fn coverage(reps: usize, seed: u64) -> Self {
        Self::base(Experiment::Coverage, reps, seed)
    }

    pub fn mse(reps: usize, seed: u64) -> Self {
        Self::base(Experiment::Mse, reps, seed)
    }

    pub fn type1(reps: usize, seed: u64) -> Self {
        ExperimentConfig {
            rates: vec![],
            ..Self::base(Experiment::Type1, reps, seed)
        }
    }

    pub fn power(reps: usize, seed: u64) -> Self {
        ExperimentConfig {
            rates: vec![],
            ..Self::base(Experiment::Power, reps, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::Usage("reps must be at least 1".into()));
        }
        let min_n = match self.experiment {
            Experiment::Power => self.sizes.iter().copied().min().unwrap_or(0),
            _ => self.n,
        };
        if min_n < 100 {
            return Err(Error::Usage(format!("sample size must be at least 100, got {min_n}")));
        }
        for r in &self.rates {
            r.validate()?;
        }
        if matches!(self.experiment, Experiment::Coverage | Experiment::Mse) && self.rates.is_empty() {
            return Err(Error::Usage("at least one noise-rate cell is required".into()));
        }
        if self.eval_points < 2 {
            return Err(Error::Usage("evaluation grid needs at least two points".into()));
        }
        crate::stats::check_level(self.level)?;
        self.smoother.validate()?;
        EffectKind::cide(self.delta)?;
        Ok(())
    }
}

/// Coverage of one working-model coefficient in one rate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub alpha_pi: f64,
    pub alpha_mu: f64,
    pub coefficient: String,
    pub truth: f64,
    pub coverage: f64,
    pub mc_se: f64,
    pub mean_estimate: f64,
    pub mean_se: f64,
    pub reps: usize,
}

/// Integrated MSE of the three curve estimators in one rate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCell {
    pub alpha_pi: f64,
    pub alpha_mu: f64,
    pub product_rate: f64,
    pub oracle: f64,
    pub oracle_se: f64,
    pub idr: f64,
    pub idr_se: f64,
    pub baseline: f64,
    pub baseline_se: f64,
    /// Mean of the paired differences `I-DR − oracle`.
    pub gap: f64,
    pub gap_se: f64,
    pub reps: usize,
}

/// Per-replicate integrated squared errors (cells in config order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReplicate {
    pub oracle: f64,
    pub idr: Vec<f64>,
    pub baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRun {
    pub cells: Vec<MseCell>,
    pub replicates: Vec<MseReplicate>,
}

/// Rejection rate of the heterogeneity test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCell {
    pub dgp: String,
    pub n: usize,
    /// `None` when true nuisances are used.
    pub alpha_pi: Option<f64>,
    pub alpha_mu: Option<f64>,
    pub delta: f64,
    pub truth: f64,
    pub rate: f64,
    pub mc_se: f64,
    pub mean_psi: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "table", content = "rows", rename_all = "lowercase")]
pub enum ExperimentTable {
    Coverage(Vec<CoverageCell>),
    Mse(MseRun),
    Rejection(Vec<RejectionCell>),
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentTable {
    /// Column names of the flat table.
    pub fn columns(&self) -> Vec<&'static str> {
        match self {
            ExperimentTable::Coverage(_) => vec![
                "alpha_pi", "alpha_mu", "coefficient", "truth", "coverage", "mc_se", "mean_estimate", "mean_se", "reps",
            ],
            ExperimentTable::Mse(_) => vec![
                "alpha_pi", "alpha_mu", "product_rate", "oracle", "oracle_se", "idr", "idr_se", "baseline", "baseline_se",
                "gap", "gap_se", "reps",
            ],
            ExperimentTable::Rejection(_) => vec![
                "dgp", "n", "alpha_pi", "alpha_mu", "delta", "truth", "rate", "mc_se", "mean_psi", "reps",
            ],
        }
    }

    /// Rows rendered with shortest round-trip decimal formatting.
    pub fn records(&self) -> Vec<Vec<String>> {
        match self {
            ExperimentTable::Coverage(rows) => rows
                .iter()
                .map(|c| {
                    vec![
                        c.alpha_pi.to_string(),
                        c.alpha_mu.to_string(),
                        c.coefficient.clone(),
                        c.truth.to_string(),
                        c.coverage.to_string(),
                        c.mc_se.to_string(),
                        c.mean_estimate.to_string(),
                        c.mean_se.to_string(),
                        c.reps.to_string(),
                    ]
                })
                .collect(),
            ExperimentTable::Mse(run) => run
                .cells
                .iter()
                .map(|c| {
                    [
                        c.alpha_pi, c.alpha_mu, c.product_rate, c.oracle, c.oracle_se, c.idr, c.idr_se, c.baseline,
                        c.baseline_se, c.gap, c.gap_se,
                    ]
                    .iter()
                    .map(f64::to_string)
                    .chain(std::iter::once(c.reps.to_string()))
                    .collect()
                })
                .collect(),
            ExperimentTable::Rejection(rows) => rows
                .iter()
                .map(|c| {
                    vec![
                        c.dgp.clone(),
                        c.n.to_string(),
                        fmt_opt(c.alpha_pi),
                        fmt_opt(c.alpha_mu),
                        c.delta.to_string(),
                        c.truth.to_string(),
                        c.rate.to_string(),
                        c.mc_se.to_string(),
                        c.mean_psi.to_string(),
                        c.reps.to_string(),
                    ]
                })
                .collect(),
        }
    }
}

/// Mean and its Monte-Carlo standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    (mean(values), (sample_variance(values) / n).sqrt())
}

/// Binomial rate and its standard error.
pub fn rate_and_se(hits: usize, reps: usize) -> (f64, f64) {
    let p = hits as f64 / reps as f64;
    (p, (p * (1.0 - p) / reps as f64).sqrt())
}

fn contrast() -> EffectKind {
    EffectKind::cice(CONTRAST_UPPER, CONTRAST_LOWER).expect("static contrast is valid")
}

fn noisy(dgp: &AppendixDgp, x: &[f64], rates: NoiseRates, scale: NoiseScale, seed: u64) -> Result<NuisanceValues> {
    synthesize_noisy_nuisances(dgp, x, 1, rates, scale, seed)
}

fn replicate_seeds(seed: u64, rep: usize) -> (u64, u64) {
    let r = mix_seed(seed, rep as u64);
    (mix_seed(r, 0), r)
}

fn cell_seed(rep_seed: u64, cell: usize) -> u64 {
    mix_seed(rep_seed, 1 + cell as u64)
}

/// Dispatch on `config.experiment`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentTable> {
    match config.experiment {
        Experiment::Coverage => run_coverage(config).map(ExperimentTable::Coverage),
        Experiment::Mse => run_mse(config).map(ExperimentTable::Mse),
        Experiment::Type1 | Experiment::Power => run_type1_power(config).map(ExperimentTable::Rejection),
    }
}

/// Projection-learner coverage of the quadratic contrast coefficients.
pub fn run_coverage(config: &ExperimentConfig) -> Result<Vec<CoverageCell>> {
    config.validate()?;
    let dgp = AppendixDgp::default();
    let effect = contrast();
    let basis = Basis::polynomial("x", 2);
    let cells = config.rates.len();
    // Per replicate and cell: (estimate, se, covered) for each coefficient.
    let per_rep: Vec<Vec<[(f64, f64, bool); 3]>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let (data_seed, rep_seed) = replicate_seeds(config.seed, rep);
            let sim = dgp.generate(config.n, data_seed)?;
            (0..cells)
                .map(|c| {
                    let nuis = noisy(&dgp, &sim.x, config.rates[c], config.noise_scale, cell_seed(rep_seed, c))?;
                    let table = PseudoOutcomeTable::build(&sim.data, &nuis, &effect)?;
                    let fit = fit_projection(&table, &sim.x, &basis)?;
                    Ok(std::array::from_fn(|j| {
                        let ci = fit.coefficient_ci(j, config.level);
                        (fit.beta[j], fit.coefficient_se(j), ci.contains(CONTRAST_COEFFICIENTS[j]))
                    }))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let names = basis.names();
    let mut out = Vec::with_capacity(cells * 3);
    for (c, rates) in config.rates.iter().enumerate() {
        for j in 0..3 {
            let hits = per_rep.iter().filter(|r| r[c][j].2).count();
            let (coverage, mc_se) = rate_and_se(hits, config.reps);
            out.push(CoverageCell {
                alpha_pi: rates.alpha_pi,
                alpha_mu: rates.alpha_mu,
                coefficient: names[j].clone(),
                truth: CONTRAST_COEFFICIENTS[j],
                coverage,
                mc_se,
                mean_estimate: mean(&per_rep.iter().map(|r| r[c][j].0).collect::<Vec<_>>()),
                mean_se: mean(&per_rep.iter().map(|r| r[c][j].1).collect::<Vec<_>>()),
                reps: config.reps,
            });
        }
    }
    Ok(out)
}

/// Integrated MSE of the oracle I-DR learner (true nuisances), the I-DR
/// learner (noisy nuisances) and the plug-in T-learner over the rate grid.
pub fn run_mse(config: &ExperimentConfig) -> Result<MseRun> {
    config.validate()?;
    let dgp = AppendixDgp::default();
    let effect = contrast();
    let step = (SUPPORT_HI - SUPPORT_LO) / (config.eval_points - 1) as f64;
    let grid: Vec<f64> = (0..config.eval_points).map(|i| SUPPORT_LO + step * i as f64).collect();
    let spec = config.smoother.clone().with_grid(grid);
    let cells = config.rates.len();
    let replicates: Vec<MseReplicate> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let (data_seed, rep_seed) = replicate_seeds(config.seed, rep);
            let sim = dgp.generate(config.n, data_seed)?;
            let truth = NuisanceValues::from_truth(&dgp, &sim.x, 1);
            let oracle = PseudoOutcomeTable::build(&sim.data, &truth, &effect)?;
            let mut responses: Vec<Vec<f64>> = vec![oracle.xi];
            for c in 0..cells {
                let nuis = noisy(&dgp, &sim.x, config.rates[c], config.noise_scale, cell_seed(rep_seed, c))?;
                let table = PseudoOutcomeTable::build(&sim.data, &nuis, &effect)?;
                responses.push(table.xi);
                responses.push(table.plugin);
            }
            let refs: Vec<&[f64]> = responses.iter().map(Vec::as_slice).collect();
            let fits = smooth_many(&vec![effect; refs.len()], &refs, &sim.x, &spec)?;
            let imse: Vec<f64> = fits.iter().map(|f| f.integrated_mse(tau_cice)).collect();
            Ok(MseReplicate {
                oracle: imse[0],
                idr: (0..cells).map(|c| imse[1 + 2 * c]).collect(),
                baseline: (0..cells).map(|c| imse[2 + 2 * c]).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let oracle: Vec<f64> = replicates.iter().map(|r| r.oracle).collect();
    let (oracle_mean, oracle_se) = mean_and_se(&oracle);
    let cells = config
        .rates
        .iter()
        .enumerate()
        .map(|(c, rates)| {
            let idr: Vec<f64> = replicates.iter().map(|r| r.idr[c]).collect();
            let base: Vec<f64> = replicates.iter().map(|r| r.baseline[c]).collect();
            let gap: Vec<f64> = idr.iter().zip(&oracle).map(|(a, b)| a - b).collect();
            let (idr_m, idr_se) = mean_and_se(&idr);
            let (base_m, base_se) = mean_and_se(&base);
            let (gap_m, gap_se) = mean_and_se(&gap);
            MseCell {
                alpha_pi: rates.alpha_pi,
                alpha_mu: rates.alpha_mu,
                product_rate: rates.product_rate(),
                oracle: oracle_mean,
                oracle_se,
                idr: idr_m,
                idr_se,
                baseline: base_m,
                baseline_se: base_se,
                gap: gap_m,
                gap_se,
                reps: config.reps,
            }
        })
        .collect();
    Ok(MseRun { cells, replicates })
}

/// Rejection rates of the heterogeneity test: on the homogeneous process
/// (`Type1`) or on the reference process across `sizes` (`Power`).
pub fn run_type1_power(config: &ExperimentConfig) -> Result<Vec<RejectionCell>> {
    config.validate()?;
    let (variant, label, sizes) = match config.experiment {
        Experiment::Type1 => (DgpVariant::Null, "null", vec![config.n]),
        Experiment::Power => (DgpVariant::Appendix, "appendix", config.sizes.clone()),
        other => return Err(Error::Usage(format!("{other:?} is not a rejection experiment"))),
    };
    let dgp = AppendixDgp::new(variant);
    let truth = quadrature_vcide(&dgp, config.delta)?;
    let cells: Vec<Option<NoiseRates>> = if config.rates.is_empty() {
        vec![None]
    } else {
        config.rates.iter().copied().map(Some).collect()
    };
    let mut out = Vec::new();
    for (s, &n) in sizes.iter().enumerate() {
        let seed = mix_seed(config.seed, 0x5EED_0000 + s as u64);
        let per_rep: Vec<Vec<(bool, f64)>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let (data_seed, rep_seed) = replicate_seeds(seed, rep);
                let sim = dgp.generate(n, data_seed)?;
                cells
                    .iter()
                    .enumerate()
                    .map(|(c, rates)| {
                        let nuis = match rates {
                            None => NuisanceValues::from_truth(&dgp, &sim.x, 1),
                            Some(r) => noisy(&dgp, &sim.x, *r, config.noise_scale, cell_seed(rep_seed, c))?,
                        };
                        let r = estimate_vcide_full_with(
                            sim.data.treatment(),
                            sim.data.outcome(),
                            &nuis,
                            config.delta,
                            &config.vcide,
                        )?;
                        Ok((r.test.reject, r.psi_hat))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (c, rates) in cells.iter().enumerate() {
            let hits = per_rep.iter().filter(|r| r[c].0).count();
            let (rate, mc_se) = rate_and_se(hits, config.reps);
            out.push(RejectionCell {
                dgp: label.into(),
                n,
                alpha_pi: rates.map(|r| r.alpha_pi),
                alpha_mu: rates.map(|r| r.alpha_mu),
                delta: config.delta,
                truth,
                rate,
                mc_se,
                mean_psi: mean(&per_rep.iter().map(|r| r[c].1).collect::<Vec<_>>()),
                reps: config.reps,
            });
        }
    }
    Ok(out)
}

/// Centering check of the pseudo-outcomes at true nuisances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringSummary {
    pub truth: f64,
    /// Mean over replicates of `Pₙ(ξ) − truth`.
    pub mean_centered: f64,
    /// Monte-Carlo standard error of `mean_centered`.
    pub se: f64,
    pub reps: usize,
}

/// Average the centered pseudo-outcome mean over replicates.
pub fn run_centering(dgp: &AppendixDgp, effect: &EffectKind, n: usize, reps: usize, seed: u64) -> Result<CenteringSummary> {
    if reps < 2 {
        return Err(Error::Usage("centering check needs at least two replicates".into()));
    }
    let truth = quadrature_oracle(dgp, effect)?;
    let centered: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let sim = dgp.generate(n, mix_seed(seed, rep as u64))?;
            let nuis = NuisanceValues::from_truth(dgp, &sim.x, 1);
            Ok(PseudoOutcomeTable::build(&sim.data, &nuis, effect)?.mean() - truth)
        })
        .collect::<Result<_>>()?;
    let (mean_centered, se) = mean_and_se(&centered);
    Ok(CenteringSummary {
        truth,
        mean_centered,
        se,
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mut c: ExperimentConfig) -> ExperimentConfig {
        c.n = 200;
        c.rates = vec![NoiseRates::new(0.5, 0.5).unwrap(), NoiseRates::new(0.1, 0.1).unwrap()];
        c
    }

    #[test]
    fn single_rep_rates_are_binary() {
        let cells = run_coverage(&small(ExperimentConfig::coverage(1, 4))).unwrap();
        assert_eq!(cells.len(), 6);
        assert!(cells.iter().all(|c| c.coverage == 0.0 || c.coverage == 1.0));
    }

    #[test]
    fn experiments_are_reproducible() {
        let cfg = small(ExperimentConfig::mse(2, 9));
        assert_eq!(run_mse(&cfg).unwrap(), run_mse(&cfg).unwrap());
        let cfg = small(ExperimentConfig::coverage(3, 9));
        assert_eq!(run_coverage(&cfg).unwrap(), run_coverage(&cfg).unwrap());
    }

    #[test]
    fn zero_alpha_never_rejects() {
        let mut cfg = ExperimentConfig::power(5, 1);
        cfg.sizes = vec![300];
        cfg.vcide.alpha = 0.0;
        let rows = run_type1_power(&cfg).unwrap();
        assert_eq!(rows[0].rate, 0.0);
        assert!(rows[0].truth > 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::coverage(0, 1);
        assert!(cfg.validate().is_err());
        cfg.reps = 1;
        cfg.n = 50;
        assert!(cfg.validate().is_err());
        cfg.n = 100;
        cfg.rates.clear();
        assert!(cfg.validate().is_err());
        assert!("nope".parse::<Experiment>().is_err());
    }

    #[test]
    fn table_shapes_match_columns() {
        let t = run_experiment(&small(ExperimentConfig::mse(1, 2))).unwrap();
        for r in t.records() {
            assert_eq!(r.len(), t.columns().len());
        }
        let mut cfg = ExperimentConfig::type1(2, 3);
        cfg.n = 150;
        let t = run_experiment(&cfg).unwrap();
        assert_eq!(t.records()[0].len(), t.columns().len());
    }
}
