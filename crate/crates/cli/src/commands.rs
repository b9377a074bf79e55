//! Command implementations. Each writes its payload files plus a
//! `result.json` document into the output directory.

use std::path::Path;

use incremental_effects::crossfit::{crossfit_nuisances, estimate_average_effect, make_folds};
use incremental_effects::effects::plugin_value;
use incremental_effects::idr::{default_grid, predict_idr, smooth_many};
use incremental_effects::projection::{fit_projection, Basis};
use incremental_effects::simulation::{
    enumeration_oracle, enumeration_vcide, run_experiment, AppendixDgp, DgpVariant, DiscreteDgp,
};
use incremental_effects::stats::Interval;
use incremental_effects::vcide::{estimate_vcide_full_with, estimate_vcide_subset_with, VcideOptions, VcideResult};
use incremental_effects::{EffectKind, NuisanceRow, NuisanceValues, PseudoOutcomeTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::*;
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, ingest_csv, write_csv, write_json, Ingested};

pub const RESULT_FILE: &str = "result.json";

/// Self-describing record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch; only recorded when stamping is requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    pub config: CommandConfig,
    /// Payload files, relative to the document.
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

/// Files written by a command and its JSON summary.
pub struct Payload {
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

/// Run `config`, writing all outputs into `out`.
pub fn execute(config: &CommandConfig, out: &Path, stamp: bool) -> Result<ResultDocument> {
    let payload = match config {
        CommandConfig::Fit(c) => run_fit(c, out)?,
        CommandConfig::Vcide(c) => run_vcide(c, out)?,
        CommandConfig::Simulate(c) => run_simulate(c, out)?,
        CommandConfig::OracleCheck(c) => run_oracle_check(c, out)?,
        CommandConfig::Diagnose(c) => run_diagnose(c, out)?,
        CommandConfig::Generate(c) => run_generate(c, out)?,
    };
    let created_unix = stamp.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let doc = ResultDocument {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created_unix,
        config: config.clone(),
        outputs: payload.outputs,
        summary: payload.summary,
    };
    write_json(&out.join(RESULT_FILE), &doc)?;
    // An oracle mismatch is still reported in the files before failing.
    if let CommandConfig::OracleCheck(_) = config {
        if doc.summary["failures"].as_u64().unwrap_or(0) > 0 {
            return Err(CliError::Numerical(format!(
                "oracle check failed: {} mismatch(es), see {}",
                doc.summary["failures"],
                out.join("oracle_check.csv").display()
            )));
        }
    }
    Ok(doc)
}

/// Re-run the configuration embedded in a result document.
pub fn replay(document: &Path, out: &Path, stamp: bool) -> Result<ResultDocument> {
    let text = std::fs::read_to_string(document).map_err(|e| CliError::io(document, e))?;
    let doc: ResultDocument = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: not a result document: {e}", document.display())))?;
    execute(&doc.config, out, stamp)
}

fn crossfit(ing: &Ingested, cfg: &CrossfitConfig) -> Result<NuisanceValues> {
    cfg.nuisances.validate()?;
    let plan = make_folds(ing.data.len(), cfg.folds, cfg.seed)?;
    Ok(crossfit_nuisances(&ing.data, &plan, &cfg.nuisances, cfg.epsilon)?)
}

fn effect_label(e: &EffectKind) -> (String, String) {
    match *e {
        EffectKind::Cice { upper, lower } => (fmt_f64(upper.get()), fmt_f64(lower.get())),
        _ => (fmt_f64(e.primary_delta()), String::new()),
    }
}

fn single_condition(roles: &crate::io::Roles, what: &str) -> Result<()> {
    if roles.condition_on.len() != 1 {
        return Err(CliError::Config(format!(
            "{what} needs exactly one conditioning column, got {}",
            roles.condition_on.len()
        )));
    }
    Ok(())
}

fn interval_cells(ci: &Interval) -> [String; 2] {
    [fmt_f64(ci.lower), fmt_f64(ci.upper)]
}

pub fn run_fit(cfg: &FitConfig, out: &Path) -> Result<Payload> {
    check_level(cfg.level)?;
    let effects = cfg.effect.effects()?;
    if let LearnerConfig::Idr { smoother, grid_points } = &cfg.learner {
        single_condition(&cfg.roles, "the smoothing learner")?;
        smoother.validate()?;
        if *grid_points < 2 {
            return Err(CliError::Config("the evaluation grid needs at least two points".into()));
        }
    }
    let ing = ingest_csv(&cfg.data, &cfg.roles)?;
    let nuis = crossfit(&ing, &cfg.crossfit)?;
    let tables = effects
        .iter()
        .map(|e| PseudoOutcomeTable::build(&ing.data, &nuis, e))
        .collect::<incremental_effects::Result<Vec<_>>>()?;
    let mut averages = Vec::with_capacity(tables.len());
    for t in &tables {
        let avg = estimate_average_effect(t, cfg.level)?;
        let (delta, delta_lower) = effect_label(&t.effect);
        averages.push(json!({
            "effect": t.effect.name(),
            "delta": delta,
            "delta_lower": delta_lower,
            "estimate": avg.estimate,
            "se": avg.se,
            "ci_lower": avg.ci.lower,
            "ci_upper": avg.ci.upper,
            "n": avg.n,
        }));
    }
    let mut rows = Vec::new();
    let (file, header, extra) = match &cfg.learner {
        LearnerConfig::Projection { basis } => {
            let basis = Basis::parse(basis, &cfg.roles.condition_on)?;
            let names = basis.names();
            let mut moment = Vec::new();
            for t in &tables {
                let fit = fit_projection(t, &ing.v, &basis)?;
                let (delta, delta_lower) = effect_label(&t.effect);
                for (j, name) in names.iter().enumerate() {
                    let ci = fit.coefficient_ci(j, cfg.level);
                    let [lo, hi] = interval_cells(&ci);
                    rows.push(vec![
                        delta.clone(),
                        delta_lower.clone(),
                        name.clone(),
                        fmt_f64(fit.beta[j]),
                        fmt_f64(fit.coefficient_se(j)),
                        lo,
                        hi,
                    ]);
                }
                moment.push(fit.moment_residual_max);
            }
            (
                "coefficients.csv",
                vec!["delta", "delta_lower", "term", "estimate", "se", "ci_lower", "ci_upper"],
                json!({ "moment_residual_max": moment }),
            )
        }
        LearnerConfig::Idr { smoother, grid_points } => {
            let mut spec = smoother.clone();
            if spec.grid.is_none() {
                spec.grid = Some(default_grid(&ing.v, *grid_points));
            }
            let responses: Vec<&[f64]> = tables.iter().map(|t| t.xi.as_slice()).collect();
            let fits = smooth_many(&effects, &responses, &ing.v, &spec)?;
            let mut bandwidths = Vec::new();
            for fit in &fits {
                let (delta, delta_lower) = effect_label(&fit.effect);
                for k in 0..fit.grid.len() {
                    let ci = Interval::wald(fit.estimate[k], fit.se[k], cfg.level);
                    let [lo, hi] = interval_cells(&ci);
                    rows.push(vec![
                        delta.clone(),
                        delta_lower.clone(),
                        fmt_f64(fit.grid[k]),
                        fmt_f64(fit.estimate[k]),
                        fmt_f64(fit.se[k]),
                        lo,
                        hi,
                    ]);
                }
                bandwidths.push(fit.bandwidth);
            }
            (
                "curves.csv",
                vec!["delta", "delta_lower", "v", "estimate", "se", "ci_lower", "ci_upper"],
                json!({ "bandwidths": bandwidths }),
            )
        }
    };
    write_csv(&out.join(file), &header, &rows)?;
    Ok(Payload {
        outputs: vec![file.into()],
        summary: json!({ "n": ing.data.len(), "average_effects": averages, "learner": extra }),
    })
}

pub fn run_vcide(cfg: &VcideConfig, out: &Path) -> Result<Payload> {
    check_level(cfg.level)?;
    if cfg.deltas.is_empty() {
        return Err(CliError::Config("at least one intervention parameter is required".into()));
    }
    let full = cfg.roles.conditions_on_all();
    if !full {
        single_condition(&cfg.roles, "conditioning on a covariate subset")?;
        cfg.smoother.validate()?;
    }
    let opts = VcideOptions {
        alpha: 1.0 - cfg.level,
        conservative_factor: cfg.conservative_factor,
        sigma_rule: cfg.sigma_rule,
    };
    let ing = ingest_csv(&cfg.data, &cfg.roles)?;
    let nuis = crossfit(&ing, &cfg.crossfit)?;
    let (a, y) = (ing.data.treatment(), ing.data.outcome());
    let results: Vec<VcideResult> = if full {
        cfg.deltas
            .iter()
            .map(|&d| estimate_vcide_full_with(a, y, &nuis, d, &opts))
            .collect::<incremental_effects::Result<_>>()?
    } else {
        let effects = cfg
            .deltas
            .iter()
            .map(|&d| EffectKind::cide(d))
            .collect::<incremental_effects::Result<Vec<_>>>()?;
        let tables = effects
            .iter()
            .map(|e| PseudoOutcomeTable::build(&ing.data, &nuis, e))
            .collect::<incremental_effects::Result<Vec<_>>>()?;
        let responses: Vec<&[f64]> = tables.iter().map(|t| t.xi.as_slice()).collect();
        let fits = smooth_many(&effects, &responses, &ing.v, &cfg.smoother)?;
        fits.iter()
            .zip(&cfg.deltas)
            .map(|(fit, &d)| {
                let tau_v = ing
                    .v
                    .iter()
                    .map(|&x| predict_idr(fit, x, cfg.level).map(|p| p.estimate))
                    .collect::<incremental_effects::Result<Vec<_>>>()?;
                estimate_vcide_subset_with(a, y, &nuis, &tau_v, d, &opts)
            })
            .collect::<incremental_effects::Result<_>>()?
    };
    let header = vec![
        "delta",
        "n",
        "psi_hat",
        "psi_truncated",
        "mean_effect",
        "sigma2_standard",
        "sigma2_alt",
        "sigma1_sq",
        "sigma2_sq",
        "conservative_variance",
        "ci_lower",
        "ci_upper",
        "conservative_ci_lower",
        "conservative_ci_upper",
        "max_ci_lower",
        "max_ci_upper",
        "reject",
        "p_value",
    ];
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let [l0, u0] = interval_cells(&r.ci_standard);
            let [l1, u1] = interval_cells(&r.ci_conservative);
            let [l2, u2] = interval_cells(&r.ci_max);
            vec![
                fmt_f64(r.delta),
                r.n.to_string(),
                fmt_f64(r.psi_hat),
                fmt_f64(r.psi_truncated),
                fmt_f64(r.mean_effect),
                fmt_f64(r.sigma2_standard),
                fmt_f64(r.sigma2_alt),
                fmt_f64(r.sigma1_sq),
                fmt_f64(r.sigma2_sq),
                fmt_f64(r.conservative_variance()),
                l0,
                u0,
                l1,
                u1,
                l2,
                u2,
                r.test.reject.to_string(),
                fmt_f64(r.test.p_value),
            ]
        })
        .collect();
    write_csv(&out.join("vcide.csv"), &header, &rows)?;
    Ok(Payload {
        outputs: vec!["vcide.csv".into()],
        summary: json!({
            "n": ing.data.len(),
            "mode": if full { "all-covariates" } else { "subset" },
            "rejections": results.iter().filter(|r| r.test.reject).count(),
        }),
    })
}

pub fn run_simulate(cfg: &incremental_effects::simulation::ExperimentConfig, out: &Path) -> Result<Payload> {
    cfg.validate()?;
    let table = run_experiment(cfg)?;
    let header = table.columns();
    let rows = table.records();
    write_csv(&out.join("table.csv"), &header, &rows)?;
    Ok(Payload {
        outputs: vec!["table.csv".into()],
        summary: json!({ "rows": rows.len() }),
    })
}

/// One oracle comparison line.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleLine {
    pub instance: usize,
    pub points: usize,
    pub target: String,
    pub plugin: f64,
    pub oracle: f64,
    pub pass: bool,
}

impl OracleLine {
    pub fn diff(&self) -> f64 {
        (self.plugin - self.oracle).abs()
    }
}

impl std::fmt::Display for OracleLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} instance {} ({} points) {}: |diff| = {:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.instance,
            self.points,
            self.target,
            self.diff()
        )
    }
}

/// Compare population plug-in values at the true nuisances against the
/// enumeration oracle on random finite-support processes.
pub fn oracle_lines(cfg: &OracleCheckConfig) -> Result<Vec<OracleLine>> {
    if cfg.instances == 0 || !(1..=10).contains(&cfg.points) {
        return Err(CliError::Config(
            "need at least one instance and between 1 and 10 support points".into(),
        ));
    }
    if cfg.deltas.is_empty() {
        return Err(CliError::Config("at least one intervention parameter is required".into()));
    }
    let mut effects = Vec::new();
    for &d in &cfg.deltas {
        effects.push(EffectKind::cie(d)?);
        effects.push(EffectKind::cide(d)?);
    }
    for (i, &u) in cfg.deltas.iter().enumerate() {
        for &l in &cfg.deltas[i + 1..] {
            if u != l {
                effects.push(EffectKind::cice(u, l)?);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lines = Vec::new();
    for instance in 0..cfg.instances {
        let points = rng.random_range(cfg.points.min(2)..=cfg.points);
        let dgp = DiscreteDgp::random(&mut rng, points)?;
        let rows: Vec<NuisanceRow> = (0..points)
            .map(|j| NuisanceRow::new(dgp.pi[j], dgp.mu0[j], dgp.mu1[j]))
            .collect();
        let average = |e: &EffectKind| -> Result<Vec<f64>> {
            Ok(rows.iter().map(|r| plugin_value(r, e)).collect::<incremental_effects::Result<_>>()?)
        };
        let mut push = |target: String, plugin: f64, oracle: f64| {
            lines.push(OracleLine {
                instance,
                points,
                target,
                plugin,
                oracle,
                pass: (plugin - oracle).abs() <= cfg.tolerance,
            })
        };
        for e in &effects {
            let vals = average(e)?;
            let plugin: f64 = vals.iter().zip(&dgp.probs).map(|(v, p)| v * p).sum();
            let (d, l) = effect_label(e);
            let target = if l.is_empty() {
                format!("{}({d})", e.name())
            } else {
                format!("{}({d}, {l})", e.name())
            };
            push(target, plugin, enumeration_oracle(&dgp, e)?);
        }
        for &d in &cfg.deltas {
            let vals = average(&EffectKind::cide(d)?)?;
            let m: f64 = vals.iter().zip(&dgp.probs).map(|(v, p)| v * p).sum();
            let var: f64 = vals.iter().zip(&dgp.probs).map(|(v, p)| p * (v - m) * (v - m)).sum();
            push(format!("vcide({})", fmt_f64(d)), var, enumeration_vcide(&dgp, d)?);
        }
    }
    Ok(lines)
}

pub fn run_oracle_check(cfg: &OracleCheckConfig, out: &Path) -> Result<Payload> {
    let lines = oracle_lines(cfg)?;
    for l in &lines {
        println!("{l}");
    }
    let rows: Vec<Vec<String>> = lines
        .iter()
        .map(|l| {
            vec![
                l.instance.to_string(),
                l.points.to_string(),
                l.target.clone(),
                fmt_f64(l.plugin),
                fmt_f64(l.oracle),
                fmt_f64(l.diff()),
                if l.pass { "PASS" } else { "FAIL" }.into(),
            ]
        })
        .collect();
    write_csv(
        &out.join("oracle_check.csv"),
        &["instance", "points", "target", "plugin", "oracle", "abs_diff", "status"],
        &rows,
    )?;
    let max_diff = lines.iter().map(OracleLine::diff).fold(0.0, f64::max);
    Ok(Payload {
        outputs: vec!["oracle_check.csv".into()],
        summary: json!({
            "comparisons": lines.len(),
            "failures": lines.iter().filter(|l| !l.pass).count(),
            "max_abs_diff": max_diff,
        }),
    })
}

/// Histogram of propensities on `bins` equal-width bins of `[0, 1]`.
pub fn histogram(pi: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &p in pi {
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Share of propensities below 0.05 and above 0.95.
pub fn tail_mass(pi: &[f64]) -> (f64, f64) {
    let n = pi.len().max(1) as f64;
    let lo = pi.iter().filter(|&&p| p < 0.05).count() as f64 / n;
    let hi = pi.iter().filter(|&&p| p > 0.95).count() as f64 / n;
    (lo, hi)
}

pub fn run_diagnose(cfg: &DiagnoseConfig, out: &Path) -> Result<Payload> {
    if cfg.bins == 0 {
        return Err(CliError::Config("bins must be at least 1".into()));
    }
    let by = match &cfg.by {
        Some(name) => Some(
            cfg.roles
                .covariates
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| CliError::Config(format!("grouping column '{name}' is not a covariate")))?,
        ),
        None => None,
    };
    if by.is_some() && cfg.groups == 0 {
        return Err(CliError::Config("groups must be at least 1".into()));
    }
    let ing = ingest_csv(&cfg.data, &cfg.roles)?;
    let nuis = crossfit(&ing, &cfg.crossfit)?;
    let mut groups: Vec<(String, Vec<f64>)> = vec![("all".into(), nuis.pi.clone())];
    if let Some(j) = by {
        let col = ing.data.column(j);
        let mut order: Vec<usize> = (0..col.len()).collect();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        let n = order.len();
        for g in 0..cfg.groups {
            let chunk = &order[g * n / cfg.groups..(g + 1) * n / cfg.groups];
            if chunk.is_empty() {
                continue;
            }
            let lo = col[chunk[0]];
            let hi = col[chunk[chunk.len() - 1]];
            let name = cfg.by.as_deref().unwrap_or_default();
            groups.push((
                format!("{name} in [{}, {}]", fmt_f64(lo), fmt_f64(hi)),
                chunk.iter().map(|&i| nuis.pi[i]).collect(),
            ));
        }
    }
    let mut rows = Vec::new();
    let mut flags = Vec::new();
    for (name, pi) in &groups {
        for (b, count) in histogram(pi, cfg.bins).into_iter().enumerate() {
            rows.push(vec![
                name.clone(),
                fmt_f64(b as f64 / cfg.bins as f64),
                fmt_f64((b + 1) as f64 / cfg.bins as f64),
                count.to_string(),
            ]);
        }
        let (lo, hi) = tail_mass(pi);
        if lo > 0.0 || hi > 0.0 {
            log::warn!("{name}: {:.1}% of propensities below 0.05, {:.1}% above 0.95", 100.0 * lo, 100.0 * hi);
        }
        flags.push(json!({ "group": name, "n": pi.len(), "below_0.05": lo, "above_0.95": hi, "flagged": lo > 0.0 || hi > 0.0 }));
    }
    write_csv(&out.join("positivity.csv"), &["group", "bin_lower", "bin_upper", "count"], &rows)?;
    Ok(Payload {
        outputs: vec!["positivity.csv".into()],
        summary: json!({ "groups": flags }),
    })
}

pub fn run_generate(cfg: &GenerateConfig, out: &Path) -> Result<Payload> {
    let variant = match cfg.dgp {
        DgpChoice::Appendix => DgpVariant::Appendix,
        DgpChoice::Null => DgpVariant::Null,
        DgpChoice::Linear => DgpVariant::Linear,
    };
    let dgp = AppendixDgp::new(variant);
    let sim = dgp.generate(cfg.n, cfg.seed)?;
    let rows: Vec<Vec<String>> = (0..cfg.n)
        .map(|i| {
            let x = sim.x[i];
            vec![
                fmt_f64(x),
                sim.data.treatment()[i].to_string(),
                fmt_f64(sim.data.outcome()[i]),
                fmt_f64(dgp.propensity(x)),
                fmt_f64(dgp.mu0(x)),
                fmt_f64(dgp.mu1(x)),
            ]
        })
        .collect();
    write_csv(&out.join("data.csv"), &["x", "a", "y", "pi", "mu0", "mu1"], &rows)?;
    Ok(Payload {
        outputs: vec!["data.csv".into()],
        summary: json!({ "n": cfg.n }),
    })
}
