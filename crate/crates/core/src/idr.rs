//! I-DR learner: nonparametric regression of pseudo-outcomes on a scalar
//! conditioning covariate with a linear smoother.
//!
//! The smoother is Gaussian-kernel local-linear regression (or a k-NN mean).
//! Both are linear in the response, so fitted curves are fixed weighted
//! averages `τ̂(v) = Σᵢ wᵢ(v) ξ̂ᵢ`. The bandwidth is chosen by exact
//! leave-one-out cross-validation, using the deletion identity
//! `ξⱼ − ŷ₍₋ⱼ₎ = (ξⱼ − ŷⱼ) / (1 − Lⱼⱼ)` valid for local polynomial fits.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::effects::{plugin_unchecked, EffectKind, PseudoOutcomeTable};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceValues;
use crate::stats::{check_level, Interval};

/// Number of candidate bandwidths tried by cross-validation.
pub const BANDWIDTH_CANDIDATES: usize = 20;
/// Number of points in the default evaluation grid.
pub const DEFAULT_GRID_POINTS: usize = 101;
/// Smallest sample the smoother accepts.
pub const MIN_ROWS: usize = 10;

/// Kernel bandwidth: fixed or chosen by leave-one-out cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SmootherKind {
    LocalLinear { bandwidth: Bandwidth },
    KnnMean { k: usize },
}

/// Second-stage smoother and the points at which the curve is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherSpec {
    pub kind: SmootherKind,
    /// Evaluation grid; `None` means equispaced points over the range of `v`.
    pub grid: Option<Vec<f64>>,
}

impl SmootherSpec {
    pub fn local_linear(bandwidth: Bandwidth) -> Self {
        SmootherSpec {
            kind: SmootherKind::LocalLinear { bandwidth },
            grid: None,
        }
    }

    pub fn knn_mean(k: usize) -> Self {
        SmootherSpec {
            kind: SmootherKind::KnnMean { k },
            grid: None,
        }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SmootherKind::LocalLinear {
                bandwidth: Bandwidth::Fixed(h),
            } if !(h.is_finite() && h > 0.0) => {
                return Err(Error::Domain(format!("bandwidth must be positive, got {h}")))
            }
            SmootherKind::KnnMean { k: 0 } => return Err(Error::Domain("k must be at least 1".into())),
            _ => {}
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return Err(Error::Usage("evaluation grid is empty".into()));
            }
            if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Usage(
                    "evaluation grid must be finite and strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

impl Default for SmootherSpec {
    fn default() -> Self {
        SmootherSpec::local_linear(Bandwidth::Auto)
    }
}

/// Smoothed conditional-effect curve on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdrFit {
    pub effect: EffectKind,
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    /// Bandwidth used (local-linear only).
    pub bandwidth: Option<f64>,
    /// Smoother weights `wᵢ(v)`, one row of length `n` per grid point.
    #[serde(skip)]
    pub weights: Vec<Vec<f64>>,
}

/// Curve value at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdrPrediction {
    pub estimate: f64,
    pub se: f64,
    pub ci: Interval,
    /// The query was outside the grid and clamped to its nearest end.
    pub extrapolated: bool,
}

fn check_inputs(response: &[f64], v: &[f64]) -> Result<()> {
    if response.len() != v.len() {
        return Err(Error::Usage(format!(
            "{} responses but {} conditioning values",
            response.len(),
            v.len()
        )));
    }
    if v.len() < MIN_ROWS {
        return Err(Error::Usage(format!(
            "smoothing needs at least {MIN_ROWS} rows, got {}",
            v.len()
        )));
    }
    if v.iter().chain(response).any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite value passed to smoother".into()));
    }
    let (lo, hi) = range(v);
    if lo == hi {
        return Err(Error::Data(
            "conditioning covariate is constant; there is no variation to smooth over".into(),
        ));
    }
    Ok(())
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Equispaced grid of `points` values spanning the range of `v`.
pub fn default_grid(v: &[f64], points: usize) -> Vec<f64> {
    let (lo, hi) = range(v);
    if points == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| if i == points - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Reference bandwidth `0.9 · min(sd, IQR/1.34) · n^{-1/5}`.
pub fn silverman_bandwidth(v: &[f64]) -> Result<f64> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Usage("bandwidth rule needs at least two values".into()));
    }
    let sd = crate::stats::sample_variance(v).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Data(
            "conditioning covariate is constant; there is no variation to smooth over".into(),
        ));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let pos = p * (n - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < n {
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        } else {
            sorted[i]
        }
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Geometric grid of candidate bandwidths over `[0.1, 10] ×` the reference rule.
pub fn bandwidth_candidates(v: &[f64]) -> Result<Vec<f64>> {
    let h0 = silverman_bandwidth(v)?;
    let (lo, hi) = ((0.1 * h0).ln(), (10.0 * h0).ln());
    let m = BANDWIDTH_CANDIDATES;
    Ok((0..m)
        .map(|i| (lo + (hi - lo) * i as f64 / (m - 1) as f64).exp())
        .collect())
}

/// Local-linear Gaussian-kernel weights at `v0`, written into `out`.
///
/// The kernel exponent is shifted by the nearest squared distance so at least
/// one weight is exactly 1 and the row cannot underflow to all zeros. When the
/// local design is numerically singular (one effective neighbour), the
/// local-constant weights are used instead.
fn local_linear_weights(v: &[f64], v0: f64, h: f64, out: &mut [f64]) {
    let scale = 0.5 / (h * h);
    let dmin = v.iter().map(|x| (x - v0).abs()).fold(f64::INFINITY, f64::min);
    let shift = dmin * dmin * scale;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (o, x) in out.iter_mut().zip(v) {
        let d = x - v0;
        let e = d * d * scale - shift;
        let k = if e > 700.0 { 0.0 } else { (-e).exp() };
        *o = k;
        s0 += k;
        s1 += k * d;
        s2 += k * d * d;
    }
    let det = s0 * s2 - s1 * s1;
    if det > 1e-10 * s0 * s2 {
        for (o, x) in out.iter_mut().zip(v) {
            *o *= (s2 - (x - v0) * s1) / det;
        }
    } else {
        for o in out.iter_mut() {
            *o /= s0;
        }
    }
}

/// k-NN mean weights at `v0`; ties broken by lower row index.
fn knn_weights(v: &[f64], v0: f64, k: usize, out: &mut [f64]) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    let key = |i: usize| ((v[i] - v0).abs(), i);
    order.select_nth_unstable_by(k - 1, |&a, &b| {
        let (da, ia) = key(a);
        let (db, ib) = key(b);
        da.total_cmp(&db).then(ia.cmp(&ib))
    });
    out.iter_mut().for_each(|o| *o = 0.0);
    for &i in &order[..k] {
        out[i] = 1.0 / k as f64;
    }
}

fn weight_row(spec: &SmootherKind, h: Option<f64>, v: &[f64], v0: f64) -> Vec<f64> {
    let mut w = vec![0.0; v.len()];
    match *spec {
        SmootherKind::LocalLinear { .. } => local_linear_weights(v, v0, h.expect("bandwidth resolved"), &mut w),
        SmootherKind::KnnMean { k } => knn_weights(v, v0, k, &mut w),
    }
    w
}

/// In-sample smoother matrix `S` (row `j` holds the weights at `V_j`).
fn hat_matrix(v: &[f64], h: f64) -> DMatrix<f64> {
    let n = v.len();
    let mut s = DMatrix::zeros(n, n);
    let mut row = vec![0.0; n];
    for j in 0..n {
        local_linear_weights(v, v[j], h, &mut row);
        for (i, w) in row.iter().enumerate() {
            s[(j, i)] = *w;
        }
    }
    s
}

/// Result of a leave-one-out scan for a batch of responses sharing `v`.
struct LooScan {
    /// Chosen bandwidth per response.
    bandwidths: Vec<f64>,
    /// In-sample residuals at the chosen bandwidth, per response.
    residuals: Vec<Vec<f64>>,
}

fn loo_scan(v: &[f64], responses: &[&[f64]]) -> Result<LooScan> {
    let n = v.len();
    let m = responses.len();
    let candidates = bandwidth_candidates(v)?;
    let y = DMatrix::from_fn(n, m, |i, r| responses[r][i]);
    let mut best: Vec<Option<(f64, f64, usize)>> = vec![None; m];
    let mut fitted_at: Vec<DMatrix<f64>> = Vec::with_capacity(candidates.len());
    for (c, &h) in candidates.iter().enumerate() {
        let s = hat_matrix(v, h);
        let fitted = &s * &y;
        for r in 0..m {
            let mut score = 0.0;
            for j in 0..n {
                let denom = 1.0 - s[(j, j)];
                if !(denom.abs() > 1e-10) {
                    score = f64::INFINITY;
                    break;
                }
                let e = (y[(j, r)] - fitted[(j, r)]) / denom;
                score += e * e;
            }
            if !score.is_finite() {
                continue;
            }
            // Ascending candidates: only a strictly better score replaces, so ties keep the smaller h.
            if best[r].map_or(true, |(s_best, _, _)| score < s_best) {
                best[r] = Some((score, h, c));
            }
        }
        fitted_at.push(fitted);
    }
    let mut bandwidths = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for (r, b) in best.into_iter().enumerate() {
        let (_, h, c) = b.ok_or_else(|| {
            Error::Numerical("no candidate bandwidth produced a finite cross-validation score".into())
        })?;
        bandwidths.push(h);
        residuals.push((0..n).map(|j| y[(j, r)] - fitted_at[c][(j, r)]).collect());
    }
    Ok(LooScan {
        bandwidths,
        residuals,
    })
}

/// Leave-one-out cross-validated bandwidth for each response vector.
/// Responses share `v`, so kernel evaluations are computed once per candidate.
pub fn select_bandwidths(v: &[f64], responses: &[&[f64]]) -> Result<Vec<f64>> {
    for r in responses {
        check_inputs(r, v)?;
    }
    Ok(loo_scan(v, responses)?.bandwidths)
}

fn in_sample_residuals(kind: &SmootherKind, h: Option<f64>, v: &[f64], response: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|j| {
            let w = weight_row(kind, h, v, v[j]);
            response[j] - w.iter().zip(response).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn assemble(
    effect: EffectKind,
    kind: &SmootherKind,
    h: Option<f64>,
    grid: Vec<f64>,
    v: &[f64],
    response: &[f64],
    residuals: &[f64],
) -> IdrFit {
    let mut estimate = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    let mut weights = Vec::with_capacity(grid.len());
    for &g in &grid {
        let w = weight_row(kind, h, v, g);
        estimate.push(w.iter().zip(response).map(|(a, b)| a * b).sum());
        se.push(w.iter().zip(residuals).map(|(a, r)| a * a * r * r).sum::<f64>().sqrt());
        weights.push(w);
    }
    IdrFit {
        effect,
        grid,
        estimate,
        se,
        bandwidth: h,
        weights,
    }
}

/// Smooth several response vectors that share the conditioning covariate.
/// Each response gets its own cross-validated bandwidth when `Auto`.
pub fn smooth_many(
    effects: &[EffectKind],
    responses: &[&[f64]],
    v: &[f64],
    spec: &SmootherSpec,
) -> Result<Vec<IdrFit>> {
    spec.validate()?;
    if effects.len() != responses.len() {
        return Err(Error::Usage("one effect label per response is required".into()));
    }
    for r in responses {
        check_inputs(r, v)?;
    }
    if let SmootherKind::KnnMean { k } = spec.kind {
        if k > v.len() {
            return Err(Error::Usage(format!("k = {k} exceeds the {} available rows", v.len())));
        }
    }
    let grid = spec.grid.clone().unwrap_or_else(|| default_grid(v, DEFAULT_GRID_POINTS));
    let (hs, residuals): (Vec<Option<f64>>, Vec<Vec<f64>>) = match spec.kind {
        SmootherKind::LocalLinear {
            bandwidth: Bandwidth::Auto,
        } => {
            let scan = loo_scan(v, responses)?;
            (scan.bandwidths.into_iter().map(Some).collect(), scan.residuals)
        }
        SmootherKind::LocalLinear {
            bandwidth: Bandwidth::Fixed(h),
        } => (
            vec![Some(h); responses.len()],
            responses.iter().map(|r| in_sample_residuals(&spec.kind, Some(h), v, r)).collect(),
        ),
        SmootherKind::KnnMean { .. } => (
            vec![None; responses.len()],
            responses.iter().map(|r| in_sample_residuals(&spec.kind, None, v, r)).collect(),
        ),
    };
    Ok((0..responses.len())
        .map(|r| assemble(effects[r], &spec.kind, hs[r], grid.clone(), v, responses[r], &residuals[r]))
        .collect())
}

/// Regress pseudo-outcomes on the scalar conditioning covariate.
pub fn fit_idr(pseudo: &PseudoOutcomeTable, v: &[f64], spec: &SmootherSpec) -> Result<IdrFit> {
    Ok(smooth_many(&[pseudo.effect], &[&pseudo.xi], v, spec)?.remove(0))
}

/// Plug-in comparator: smooth the identification integrand evaluated at the
/// fitted nuisances, without influence-function correction.
pub fn baseline_tlearner(
    nuis: &NuisanceValues,
    effect: &EffectKind,
    v: &[f64],
    spec: &SmootherSpec,
) -> Result<IdrFit> {
    effect.validate()?;
    nuis.validate()?;
    let plugin: Vec<f64> = (0..nuis.len()).map(|i| plugin_unchecked(&nuis.row(i), effect)).collect();
    Ok(smooth_many(&[*effect], &[&plugin], v, spec)?.remove(0))
}

/// Linear interpolation of the fitted curve and its standard error.
/// Queries outside the grid are clamped to the nearest end and flagged.
pub fn predict_idr(fit: &IdrFit, v: f64, level: f64) -> Result<IdrPrediction> {
    check_level(level)?;
    let g = &fit.grid;
    if g.is_empty() {
        return Err(Error::Usage("fit has an empty evaluation grid".into()));
    }
    if !v.is_finite() {
        return Err(Error::Domain(format!("query point must be finite, got {v}")));
    }
    let last = g.len() - 1;
    let (estimate, se, extrapolated) = if v <= g[0] || v >= g[last] {
        let i = if v <= g[0] { 0 } else { last };
        (fit.estimate[i], fit.se[i], v != g[i])
    } else {
        let hi = g.partition_point(|&x| x <= v);
        let lo = hi - 1;
        let t = (v - g[lo]) / (g[hi] - g[lo]);
        let lerp = |a: f64, b: f64| a + t * (b - a);
        (lerp(fit.estimate[lo], fit.estimate[hi]), lerp(fit.se[lo], fit.se[hi]), false)
    };
    if extrapolated {
        log::warn!("query {v} lies outside the fitted grid [{}, {}]; clamped", g[0], g[last]);
    }
    Ok(IdrPrediction {
        estimate,
        se,
        ci: Interval::wald(estimate, se, level),
        extrapolated,
    })
}

impl IdrFit {
    /// Mean squared error against a known curve, averaged over the grid.
    pub fn integrated_mse(&self, truth: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.estimate)
            .map(|(&g, &e)| (e - truth(g)).powi(2))
            .sum::<f64>()
            / self.grid.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spread(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 37) % n) as f64 / n as f64 * 8.0 - 4.0).collect()
    }

    fn effect() -> EffectKind {
        EffectKind::cide(1.0).unwrap()
    }

    fn smooth(y: &[f64], v: &[f64], spec: &SmootherSpec) -> IdrFit {
        smooth_many(&[effect()], &[y], v, spec).unwrap().remove(0)
    }

    #[test]
    fn constant_response_reproduced() {
        let v = spread(50);
        let y = vec![2.5; 50];
        for spec in [
            SmootherSpec::local_linear(Bandwidth::Auto),
            SmootherSpec::local_linear(Bandwidth::Fixed(0.05)),
            SmootherSpec::local_linear(Bandwidth::Fixed(30.0)),
            SmootherSpec::knn_mean(7),
        ] {
            let fit = smooth(&y, &v, &spec);
            assert!(fit.estimate.iter().all(|e| (e - 2.5).abs() < 1e-10));
            assert!(fit.se.iter().all(|s| s.abs() < 1e-10));
        }
    }

    #[test]
    fn affine_response_reproduced() {
        let v = spread(40);
        let y: Vec<f64> = v.iter().map(|x| 1.0 - 0.7 * x).collect();
        for h in [0.2, 1.0, 10.0] {
            let fit = smooth(&y, &v, &SmootherSpec::local_linear(Bandwidth::Fixed(h)));
            for (g, e) in fit.grid.iter().zip(&fit.estimate) {
                assert!((e - (1.0 - 0.7 * g)).abs() < 1e-9, "h={h} g={g} e={e}");
            }
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let v = spread(60);
        let y: Vec<f64> = v.iter().map(|x| x.sin()).collect();
        for spec in [SmootherSpec::default(), SmootherSpec::knn_mean(5)] {
            let fit = smooth(&y, &v, &spec);
            for row in &fit.weights {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn default_grid_spans_range() {
        let v = spread(30);
        let fit = smooth(&v.clone(), &v, &SmootherSpec::default());
        assert_eq!(fit.grid.len(), DEFAULT_GRID_POINTS);
        let (lo, hi) = range(&v);
        assert_eq!(fit.grid[0], lo);
        assert_eq!(fit.grid[100], hi);
    }

    #[test]
    fn loo_identity_matches_refit() {
        // Refit without row j and predict at V_j; compare with the deletion formula.
        let v = spread(25);
        let y: Vec<f64> = v.iter().enumerate().map(|(i, x)| x.cos() + (i % 3) as f64).collect();
        let h = 0.9;
        let s = hat_matrix(&v, h);
        for j in [0, 7, 24] {
            let fitted: f64 = (0..25).map(|i| s[(j, i)] * y[i]).sum();
            let formula = (y[j] - fitted) / (1.0 - s[(j, j)]);
            let v_minus: Vec<f64> = v.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, x)| *x).collect();
            let y_minus: Vec<f64> = y.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, x)| *x).collect();
            let mut w = vec![0.0; 24];
            local_linear_weights(&v_minus, v[j], h, &mut w);
            let refit: f64 = w.iter().zip(&y_minus).map(|(a, b)| a * b).sum();
            assert!((formula - (y[j] - refit)).abs() < 1e-9);
        }
    }

    #[test]
    fn bandwidth_selection_deterministic_and_bounded() {
        let v = spread(80);
        let y: Vec<f64> = v.iter().enumerate().map(|(i, x)| x * x + ((i * 7) % 5) as f64 * 0.2).collect();
        let a = select_bandwidths(&v, &[&y]).unwrap();
        let b = select_bandwidths(&v, &[&y]).unwrap();
        assert_eq!(a, b);
        let c = bandwidth_candidates(&v).unwrap();
        assert!(c.contains(&a[0]));
        assert!((c[19] / c[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn batched_selection_matches_single() {
        let v = spread(50);
        let y1: Vec<f64> = v.iter().map(|x| x.sin()).collect();
        let y2: Vec<f64> = v.iter().enumerate().map(|(i, x)| x + (i % 2) as f64).collect();
        let both = select_bandwidths(&v, &[&y1, &y2]).unwrap();
        assert_eq!(both[0], select_bandwidths(&v, &[&y1]).unwrap()[0]);
        assert_eq!(both[1], select_bandwidths(&v, &[&y2]).unwrap()[0]);
    }

    #[test]
    fn permutation_invariant() {
        let v = spread(40);
        let y: Vec<f64> = v.iter().map(|x| x.sin() * 2.0).collect();
        let mut idx: Vec<usize> = (0..40).collect();
        idx.reverse();
        idx.swap(3, 17);
        let vp: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let a = smooth(&y, &v, &SmootherSpec::default());
        let b = smooth(&yp, &vp, &SmootherSpec::default());
        assert_eq!(a.bandwidth, b.bandwidth);
        for (x, z) in a.estimate.iter().zip(&b.estimate) {
            assert!((x - z).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_covariate_rejected() {
        let v = vec![1.0; 20];
        let y = vec![0.0; 20];
        let r = smooth_many(&[effect()], &[&y], &v, &SmootherSpec::default());
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn too_few_rows_rejected() {
        let v = spread(5);
        let r = smooth_many(&[effect()], &[&v.clone()], &v, &SmootherSpec::default());
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn invalid_specs() {
        assert!(SmootherSpec::local_linear(Bandwidth::Fixed(0.0)).validate().is_err());
        assert!(SmootherSpec::knn_mean(0).validate().is_err());
        assert!(SmootherSpec::default().with_grid(vec![]).validate().is_err());
        assert!(SmootherSpec::default().with_grid(vec![1.0, 0.0]).validate().is_err());
    }

    #[test]
    fn interpolation_contract() {
        let fit = IdrFit {
            effect: effect(),
            grid: vec![0.0, 1.0, 2.0],
            estimate: vec![1.0, 3.0, 2.0],
            se: vec![0.1, 0.3, 0.2],
            bandwidth: None,
            weights: vec![],
        };
        let at = predict_idr(&fit, 1.0, 0.95).unwrap();
        assert_eq!((at.estimate, at.se), (3.0, 0.3));
        let mid = predict_idr(&fit, 0.5, 0.95).unwrap();
        assert!((mid.estimate - 2.0).abs() < 1e-15 && (mid.se - 0.2).abs() < 1e-15);
        let out = predict_idr(&fit, 5.0, 0.95).unwrap();
        assert!(out.extrapolated && out.estimate == 2.0);
        assert!(!predict_idr(&fit, 2.0, 0.95).unwrap().extrapolated);
        let empty = IdrFit { grid: vec![], estimate: vec![], se: vec![], ..fit };
        assert!(predict_idr(&empty, 0.0, 0.95).is_err());
    }

    #[test]
    fn constant_fit_predicts_degenerate_interval() {
        let v = spread(30);
        let fit = smooth(&vec![4.0; 30], &v, &SmootherSpec::default());
        for q in [-3.9, 0.0, 1.234] {
            let p = predict_idr(&fit, q, 0.95).unwrap();
            assert!((p.estimate - 4.0).abs() < 1e-10);
            assert!(p.ci.width() < 1e-9);
        }
    }

    #[test]
    fn knn_mean_of_all_rows_is_global_mean() {
        let v = spread(20);
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let fit = smooth(&y, &v, &SmootherSpec::knn_mean(20));
        assert!(fit.estimate.iter().all(|e| (e - 9.5).abs() < 1e-12));
    }

    #[test]
    fn far_grid_point_stays_finite() {
        let v = spread(30);
        let y: Vec<f64> = v.iter().map(|x| x * x).collect();
        let spec = SmootherSpec::local_linear(Bandwidth::Fixed(0.01)).with_grid(vec![-100.0, 0.0, 100.0]);
        let fit = smooth(&y, &v, &spec);
        assert!(fit.estimate.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn baseline_smooths_plugin() {
        let n = 40;
        let v = spread(n);
        let nuis = NuisanceValues::new(vec![0.5; n], vec![0.0; n], v.clone()).unwrap();
        let fit = baseline_tlearner(&nuis, &effect(), &v, &SmootherSpec::local_linear(Bandwidth::Fixed(1.0))).unwrap();
        // Plug-in is 0.25·v, which local-linear reproduces exactly.
        for (g, e) in fit.grid.iter().zip(&fit.estimate) {
            assert!((e - 0.25 * g).abs() < 1e-10);
        }
    }
}
