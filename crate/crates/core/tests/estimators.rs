//! End-to-end checks of the learners against synthetic ground truth.

use incremental_effects::crossfit::{crossfit_nuisances, estimate_average_effect, make_folds};
use incremental_effects::idr::{baseline_tlearner, fit_idr, SmootherSpec};
use incremental_effects::nuisance::{synthesize_noisy_nuisances, NoiseRates, NoiseScale, NuisanceSpecs};
use incremental_effects::projection::{fit_projection, predict_projection, Basis};
use incremental_effects::simulation::dgp::{tau_cice, CONTRAST_COEFFICIENTS};
use incremental_effects::simulation::{
    enumeration_oracle, quadrature_oracle, quadrature_vcide, AppendixDgp, DgpVariant, DiscreteDgp,
};
use incremental_effects::stats::mix_seed;
use incremental_effects::vcide::{estimate_vcide_full, estimate_vcide_subset};
use incremental_effects::{EffectKind, NuisanceValues, PseudoOutcomeTable};
use rayon::prelude::*;

fn eval_grid() -> Vec<f64> {
    (0..101).map(|i| -4.0 + 0.08 * i as f64).collect()
}

#[test]
fn projection_recovers_quadratic_contrast() {
    let dgp = AppendixDgp::new(DgpVariant::Appendix);
    let sim = dgp.generate(100_000, 31).unwrap();
    let nuis = NuisanceValues::from_truth(&dgp, &sim.x, 1);
    let effect = EffectKind::cice(5.0, 0.2).unwrap();
    let table = PseudoOutcomeTable::build(&sim.data, &nuis, &effect).unwrap();
    let fit = fit_projection(&table, &sim.x, &Basis::polynomial("x", 2)).unwrap();
    for (j, truth) in CONTRAST_COEFFICIENTS.iter().enumerate() {
        let z = (fit.beta[j] - truth).abs() / fit.coefficient_se(j);
        assert!(z < 3.0, "coefficient {j}: {} vs {truth} ({z:.2} SE)", fit.beta[j]);
    }
    let at_zero = predict_projection(&fit, &[0.0], 0.95).unwrap();
    assert!((at_zero.estimate - 1.0).abs() < 3.0 * at_zero.se, "{at_zero:?}");
    assert_eq!(at_zero.estimate, fit.beta[0]);
}

#[test]
fn oracle_smoother_beats_noisy_baseline() {
    let dgp = AppendixDgp::new(DgpVariant::Appendix);
    let sim = dgp.generate(4000, 5).unwrap();
    let truth = NuisanceValues::from_truth(&dgp, &sim.x, 1);
    let effect = EffectKind::cice(5.0, 0.2).unwrap();
    let spec = SmootherSpec::default().with_grid(eval_grid());
    let oracle = fit_idr(&PseudoOutcomeTable::build(&sim.data, &truth, &effect).unwrap(), &sim.x, &spec).unwrap();
    // Outcome-regression error dominates: the plug-in inherits it directly,
    // while the corrected pseudo-outcome only sees it through a product.
    let rates = NoiseRates::new(0.5, 0.1).unwrap();
    let noisy = synthesize_noisy_nuisances(&dgp, &sim.x, 1, rates, NoiseScale::Probability, 6).unwrap();
    let idr = fit_idr(&PseudoOutcomeTable::build(&sim.data, &noisy, &effect).unwrap(), &sim.x, &spec).unwrap();
    let baseline = baseline_tlearner(&noisy, &effect, &sim.x, &spec).unwrap();
    let (o, i, b) = (
        oracle.integrated_mse(tau_cice),
        idr.integrated_mse(tau_cice),
        baseline.integrated_mse(tau_cice),
    );
    assert!(o < b && i < b, "oracle {o}, I-DR {i}, baseline {b}");
}

#[test]
fn true_nuisance_baseline_is_smoothed_truth() {
    let dgp = AppendixDgp::new(DgpVariant::Appendix);
    let sim = dgp.generate(2000, 8).unwrap();
    let truth = NuisanceValues::from_truth(&dgp, &sim.x, 1);
    let effect = EffectKind::cice(5.0, 0.2).unwrap();
    let spec = SmootherSpec::default().with_grid(eval_grid());
    let baseline = baseline_tlearner(&truth, &effect, &sim.x, &spec).unwrap();
    // The identification integrand is smooth, so smoothing it is nearly exact.
    assert!(baseline.integrated_mse(tau_cice) < 1e-2);
}

#[test]
fn subset_vcide_through_smoothed_curve() {
    let dgp = AppendixDgp::new(DgpVariant::Appendix);
    let sim = dgp.generate(4000, 12).unwrap();
    let nuis = NuisanceValues::from_truth(&dgp, &sim.x, 1);
    let effect = EffectKind::cide(1.0).unwrap();
    let table = PseudoOutcomeTable::build(&sim.data, &nuis, &effect).unwrap();
    let curve = fit_idr(&table, &sim.x, &SmootherSpec::default()).unwrap();
    let res = estimate_vcide_subset(&sim.data, &nuis, &curve, &sim.x, 1.0, 0.05).unwrap();
    let truth = quadrature_vcide(&dgp, 1.0).unwrap();
    let tol = 3.0 * (res.sigma2() / res.n as f64).sqrt();
    assert!((res.psi_hat - truth).abs() < tol, "{} vs {truth} (tol {tol})", res.psi_hat);
    assert!(res.test.reject);
}

#[test]
fn full_vcide_rejects_on_reference_process() {
    let dgp = AppendixDgp::new(DgpVariant::Appendix);
    let sim = dgp.generate(2000, 13).unwrap();
    let nuis = NuisanceValues::from_truth(&dgp, &sim.x, 1);
    let res = estimate_vcide_full(&sim.data, &nuis, 1.0, 0.05).unwrap();
    assert!(res.test.reject && res.test.p_value < 0.05);
    assert!(res.ci_conservative.contains_interval(&res.ci_standard));
}

#[test]
fn average_derivative_of_linear_contrast_is_zero() {
    let dgp = AppendixDgp::new(DgpVariant::Linear);
    let sim = dgp.generate(20_000, 3).unwrap();
    let nuis = NuisanceValues::from_truth(&dgp, &sim.x, 1);
    let table = PseudoOutcomeTable::build(&sim.data, &nuis, &EffectKind::cide(1.0).unwrap()).unwrap();
    let est = estimate_average_effect(&table, 0.95).unwrap();
    assert!(est.estimate.abs() < 0.02, "{est:?}");
}

#[test]
fn crossfit_estimate_on_two_point_process() {
    let dgp = DiscreteDgp::new(
        vec![0.0, 1.0],
        vec![0.4, 0.6],
        vec![0.3, 0.7],
        vec![1.0, -0.5],
        vec![2.0, 1.5],
        1.0,
    )
    .unwrap();
    let data = dgp.sample(5000, 21).unwrap();
    let plan = make_folds(data.len(), 2, 22).unwrap();
    // A degree-one model is saturated on two support points.
    let nuis = crossfit_nuisances(&data, &plan, &NuisanceSpecs::glm(1, 1e-8), 1e-3).unwrap();
    for effect in [
        EffectKind::cie(2.0).unwrap(),
        EffectKind::cide(0.5).unwrap(),
        EffectKind::cice(3.0, 0.5).unwrap(),
    ] {
        let est = estimate_average_effect(&PseudoOutcomeTable::build(&data, &nuis, &effect).unwrap(), 0.95).unwrap();
        let truth = enumeration_oracle(&dgp, &effect).unwrap();
        assert!(
            (est.estimate - truth).abs() < 3.0 * est.se,
            "{}: {} vs {truth} (se {})",
            effect.name(),
            est.estimate,
            est.se
        );
    }
}

#[test]
fn crossfit_interval_coverage() {
    // Correctly specified propensity model, misspecified (smooth) outcome
    // model for a step-function regression: the corrected estimator stays
    // root-n and its Wald interval should cover near the nominal rate.
    let dgp = AppendixDgp::new(DgpVariant::Appendix);
    let effect = EffectKind::cie(2.0).unwrap();
    let truth = quadrature_oracle(&dgp, &effect).unwrap();
    let reps = 1000;
    let hits: usize = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = mix_seed(77, rep as u64);
            let sim = dgp.generate(2000, seed).unwrap();
            let plan = make_folds(2000, 2, seed).unwrap();
            let nuis = crossfit_nuisances(&sim.data, &plan, &NuisanceSpecs::glm(2, 1e-3), 1e-3).unwrap();
            let table = PseudoOutcomeTable::build(&sim.data, &nuis, &effect).unwrap();
            usize::from(estimate_average_effect(&table, 0.95).unwrap().ci.contains(truth))
        })
        .sum();
    let coverage = hits as f64 / reps as f64;
    assert!((0.92..=0.975).contains(&coverage), "coverage {coverage}");
}
