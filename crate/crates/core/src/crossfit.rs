//! Sample splitting and k-fold cross-fitting.
//!
//! Every row's nuisance predictions come from a model trained with that
//! row's fold held out; the out-of-fold predictions are then assembled into
//! one table and the estimating equations are solved on the full sample.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::effects::{EffectKind, PseudoOutcomeTable};
use crate::error::{Error, Result};
use crate::nuisance::{fit_on_view, NuisanceSpecs, NuisanceValues};
use crate::stats::{check_level, mean, sample_variance, Interval};

/// Default number of folds.
pub const DEFAULT_FOLDS: usize = 2;

/// Assignment of rows to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Plan from explicit labels (e.g. a fold column in the input data).
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(Error::Usage("cross-fitting needs at least 2 folds".into()));
        }
        let mut counts = vec![0usize; k];
        for &f in labels {
            counts[f] += 1;
        }
        if let Some(f) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Usage(format!("fold {f} is empty")));
        }
        Ok(FoldPlan {
            k,
            assignment: labels.to_vec(),
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Row indices belonging to `fold`, ascending.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    /// Row indices outside `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Uniformly random balanced partition of `n` rows into `k` folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Usage(format!("need at least 2 folds, got {k}")));
    }
    if n < 2 * k {
        return Err(Error::Usage(format!(
            "{n} rows cannot be split into {k} folds (need at least {})",
            2 * k
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldPlan { k, assignment, seed })
}

/// Out-of-fold nuisance predictions for every row.
///
/// Folds are fitted independently (in parallel when a thread pool is
/// available) and merged in fold order. A fold whose training complement
/// lacks either treatment arm is an error naming that fold.
pub fn crossfit_nuisances(
    data: &Dataset,
    plan: &FoldPlan,
    specs: &NuisanceSpecs,
    epsilon: f64,
) -> Result<NuisanceValues> {
    if plan.len() != data.len() {
        return Err(Error::Usage(format!(
            "fold plan covers {} rows but data has {}",
            plan.len(),
            data.len()
        )));
    }
    let per_fold: Vec<Result<(Vec<usize>, NuisanceValues)>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let train = data.subset(&plan.complement(fold));
            let model = fit_on_view(&train, specs, epsilon).map_err(|e| e.in_fold(fold))?;
            let held_out = plan.members(fold);
            let test = data.subset(&held_out);
            let values = model.predict(&test.x, test.dim).map_err(|e| e.in_fold(fold))?;
            Ok((held_out, values))
        })
        .collect();
    let n = data.len();
    let mut out = NuisanceValues {
        pi: vec![0.0; n],
        mu0: vec![0.0; n],
        mu1: vec![0.0; n],
    };
    for result in per_fold {
        let (rows, values) = result?;
        for (j, &i) in rows.iter().enumerate() {
            out.pi[i] = values.pi[j];
            out.mu0[i] = values.mu0[j];
            out.mu1[i] = values.mu1[j];
        }
    }
    Ok(out)
}

/// Average effect with its influence-function standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageEffectEstimate {
    pub effect: EffectKind,
    pub estimate: f64,
    pub se: f64,
    pub ci: Interval,
    pub n: usize,
}

/// Sample mean of the pseudo-outcomes with a Wald interval at `level`.
pub fn estimate_average_effect(pseudo: &PseudoOutcomeTable, level: f64) -> Result<AverageEffectEstimate> {
    check_level(level)?;
    let n = pseudo.len();
    if n < 2 {
        return Err(Error::Usage(format!("need at least 2 pseudo-outcomes, got {n}")));
    }
    let estimate = mean(&pseudo.xi);
    let se = (sample_variance(&pseudo.xi) / n as f64).sqrt();
    Ok(AverageEffectEstimate {
        effect: pseudo.effect,
        estimate,
        se,
        ci: Interval::wald(estimate, se, level),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{Family, Method, RegressorSpec};

    #[test]
    fn balanced_folds() {
        let p = make_folds(10, 2, 1).unwrap();
        assert_eq!(p.fold_sizes(), vec![5, 5]);
        let mut s = make_folds(11, 2, 1).unwrap().fold_sizes();
        s.sort();
        assert_eq!(s, vec![5, 6]);
        let s = make_folds(103, 5, 9).unwrap().fold_sizes();
        assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
    }

    #[test]
    fn folds_are_deterministic() {
        assert_eq!(make_folds(50, 3, 42).unwrap(), make_folds(50, 3, 42).unwrap());
        assert_ne!(make_folds(50, 3, 42).unwrap(), make_folds(50, 3, 43).unwrap());
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(make_folds(5, 3, 0), Err(Error::Usage(_))));
        assert!(make_folds(6, 3, 0).is_ok());
    }

    #[test]
    fn constant_table_estimate() {
        let table = PseudoOutcomeTable {
            effect: EffectKind::cide(1.0).unwrap(),
            xi: vec![2.5; 10],
            plugin: vec![0.0; 10],
        };
        let est = estimate_average_effect(&table, 0.95).unwrap();
        assert_eq!((est.estimate, est.se, est.ci.lower, est.ci.upper), (2.5, 0.0, 2.5, 2.5));
    }

    #[test]
    fn estimate_is_order_invariant() {
        let xi: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 * 0.125).collect();
        let mut rev = xi.clone();
        rev.reverse();
        let e = EffectKind::cie(2.0).unwrap();
        let t1 = PseudoOutcomeTable { effect: e, xi, plugin: vec![0.0; 64] };
        let t2 = PseudoOutcomeTable { effect: e, xi: rev, plugin: vec![0.0; 64] };
        let a = estimate_average_effect(&t1, 0.9).unwrap();
        let b = estimate_average_effect(&t2, 0.9).unwrap();
        assert!((a.estimate - b.estimate).abs() < 1e-14);
        assert!((a.se - b.se).abs() < 1e-14);
    }

    fn knn_specs() -> NuisanceSpecs {
        let m = Method::Knn { k: 1 };
        NuisanceSpecs {
            propensity: RegressorSpec::new(Family::Binary, Method::Knn { k: 3 }).unwrap(),
            outcome0: RegressorSpec::new(Family::Continuous, m).unwrap(),
            outcome1: RegressorSpec::new(Family::Continuous, m).unwrap(),
        }
    }

    #[test]
    fn predictions_come_from_other_fold() {
        // Outcome equals the row index, so a 1-NN prediction identifies the
        // training row that produced it.
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = x.clone();
        let data = Dataset::new(vec!["x".into()], x, a, y).unwrap();
        let plan = make_folds(n, 2, 5).unwrap();
        let nuis = crossfit_nuisances(&data, &plan, &knn_specs(), 1e-3).unwrap();
        for i in 0..n {
            for source in [nuis.mu0[i], nuis.mu1[i]] {
                let j = source as usize;
                assert_ne!(plan.assignment[j], plan.assignment[i], "row {i} predicted from row {j}");
            }
        }
    }

    #[test]
    fn constant_outcome_constant_predictions() {
        let n = 30;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 3.0).collect();
        let a: Vec<u8> = (0..n).map(|i| ((i * 7) % 3 == 0) as u8).collect();
        let data = Dataset::new(vec!["x".into()], x, a, vec![4.2; n]).unwrap();
        let plan = make_folds(n, 3, 1).unwrap();
        let nuis = crossfit_nuisances(&data, &plan, &NuisanceSpecs::glm(2, 1.0), 1e-3).unwrap();
        assert!(nuis.mu0.iter().chain(&nuis.mu1).all(|m| (m - 4.2).abs() < 1e-10));
    }

    #[test]
    fn single_arm_fold_names_fold() {
        // Rows 0..5 treated only; with labels isolating the control rows in
        // fold 1, fold 1's training complement lacks controls.
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        let a = vec![1, 1, 1, 1, 0, 0, 0, 0];
        let data = Dataset::new(vec!["x".into()], x, a, vec![1.0; 8]).unwrap();
        let plan = FoldPlan::from_labels(&[0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        let err = crossfit_nuisances(&data, &plan, &NuisanceSpecs::glm(1, 1.0), 1e-3).unwrap_err();
        assert!(matches!(err, Error::Fit { fold: Some(_), .. }), "{err}");
    }
}
