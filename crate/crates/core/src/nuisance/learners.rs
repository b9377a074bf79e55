use nalgebra::{DMatrix, DVector};

use super::{Family, Method, RegressorSpec};
use crate::error::{Error, Result};

/// Something that can fit a regression of `y` on row-major covariates.
pub trait Learner {
    fn fit(&self, x: &[f64], dim: usize, y: &[f64]) -> Result<Box<dyn FittedRegressor>>;
}

/// A fitted regression function. Implementations are immutable after
/// fitting and may be shared across threads.
pub trait FittedRegressor: Send + Sync {
    /// Predictions at a row-major covariate buffer of the training width.
    fn predict(&self, x: &[f64]) -> Vec<f64>;
}

impl Learner for RegressorSpec {
    fn fit(&self, x: &[f64], dim: usize, y: &[f64]) -> Result<Box<dyn FittedRegressor>> {
        self.validate()?;
        let n = y.len();
        if n == 0 || x.len() != n * dim {
            return Err(Error::fit(format!(
                "training buffer holds {} values for {n} rows of width {dim}",
                x.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::fit(format!("response in row {i} is not finite")));
        }
        match self.method {
            Method::PenalizedGlm { degree, lambda } => {
                let basis = PolyBasis::fit(x, dim, degree);
                let design = basis.design(x);
                let beta = match self.family {
                    Family::Continuous => ridge(&design, y, lambda)?,
                    Family::Binary => logistic(&design, y, lambda)?,
                };
                Ok(Box::new(GlmFit {
                    basis,
                    beta,
                    family: self.family,
                }))
            }
            Method::Knn { k } => {
                if k > n {
                    return Err(Error::fit(format!("k-NN with k = {k} but only {n} training rows")));
                }
                Ok(Box::new(KnnFit {
                    x: x.to_vec(),
                    y: y.to_vec(),
                    dim,
                    k,
                }))
            }
            Method::NadarayaWatson { bandwidth } => Ok(Box::new(KernelFit {
                x: x.to_vec(),
                y: y.to_vec(),
                dim,
                bandwidth,
            })),
        }
    }
}

/// Per-covariate powers `x_j^k`, `k = 1..=degree`, standardized with
/// training moments, plus an intercept.
struct PolyBasis {
    dim: usize,
    degree: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl PolyBasis {
    fn fit(x: &[f64], dim: usize, degree: usize) -> Self {
        let n = x.len() / dim.max(1);
        let p = dim * degree;
        let mut center = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for row in x.chunks(dim.max(1)) {
            for (c, v) in raw_features(row, degree).enumerate() {
                center[c] += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n as f64);
        for row in x.chunks(dim.max(1)) {
            for (c, v) in raw_features(row, degree).enumerate() {
                scale[c] += (v - center[c]).powi(2);
            }
        }
        for s in &mut scale {
            let sd = (*s / n as f64).sqrt();
            // Constant columns stay unscaled; the ridge term or the rank
            // check deals with them.
            *s = if sd > 0.0 { sd } else { 1.0 };
        }
        PolyBasis {
            dim,
            degree,
            center,
            scale,
        }
    }

    fn width(&self) -> usize {
        1 + self.dim * self.degree
    }

    fn design(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len() / self.dim.max(1);
        let mut m = DMatrix::zeros(n, self.width());
        for (i, row) in x.chunks(self.dim.max(1)).enumerate() {
            m[(i, 0)] = 1.0;
            for (c, v) in raw_features(row, self.degree).enumerate() {
                m[(i, c + 1)] = (v - self.center[c]) / self.scale[c];
            }
        }
        m
    }
}

fn raw_features(row: &[f64], degree: usize) -> impl Iterator<Item = f64> + '_ {
    row.iter()
        .flat_map(move |&v| (1..=degree).map(move |k| v.powi(k as i32)))
}

fn penalty(p: usize, lambda: f64) -> DMatrix<f64> {
    let mut m = DMatrix::identity(p, p) * lambda;
    m[(0, 0)] = 0.0;
    m
}

fn singular(lambda: f64) -> Error {
    if lambda == 0.0 {
        Error::fit("design is singular without a penalty; use a ridge penalty λ > 0")
    } else {
        Error::fit("penalized design is numerically singular")
    }
}

fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min / max < 1e-12 {
        return Err(singular(lambda));
    }
    h.cholesky().map(|c| c.solve(g)).ok_or_else(|| singular(lambda))
}

fn ridge(design: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<DVector<f64>> {
    let yv = DVector::from_column_slice(y);
    let h = design.tr_mul(design) + penalty(design.ncols(), lambda);
    solve_spd(h, &design.tr_mul(&yv), lambda)
}

fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn penalized_loglik(design: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, lambda: f64) -> f64 {
    let eta = design * beta;
    let ll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &t)| t * e - softplus(e))
        .sum();
    let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    ll - 0.5 * lambda * pen
}

/// Ridge-penalized logistic regression by damped Newton steps.
fn logistic(design: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<DVector<f64>> {
    let p = design.ncols();
    let mut beta = DVector::zeros(p);
    let pen = penalty(p, lambda);
    let mut current = penalized_loglik(design, y, &beta, lambda);
    for _ in 0..200 {
        let eta = design * &beta;
        let prob: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&prob).map(|(t, q)| t - q));
        let grad = design.tr_mul(&resid) - &pen * &beta;
        let mut weighted = design.clone();
        for (i, q) in prob.iter().enumerate() {
            let w = (q * (1.0 - q)).max(1e-12);
            weighted.row_mut(i).scale_mut(w);
        }
        let hess = design.tr_mul(&weighted) + &pen;
        let step = solve_spd(hess, &grad, lambda)?;
        let mut t = 1.0;
        loop {
            let candidate = &beta + &step * t;
            let value = penalized_loglik(design, y, &candidate, lambda);
            if value >= current - 1e-12 * current.abs() || t < 1e-8 {
                beta = candidate;
                current = value;
                break;
            }
            t *= 0.5;
        }
        let size = step.amax() * t;
        if size < 1e-10 * (1.0 + beta.amax()) {
            return Ok(beta);
        }
        if beta.amax() > 1e6 {
            break;
        }
    }
    Err(Error::fit(
        "logistic regression did not converge (perfect separation?); increase the ridge penalty",
    ))
}

struct GlmFit {
    basis: PolyBasis,
    beta: DVector<f64>,
    family: Family,
}

impl FittedRegressor for GlmFit {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let eta = self.basis.design(x) * &self.beta;
        match self.family {
            Family::Continuous => eta.iter().copied().collect(),
            Family::Binary => eta.iter().map(|&e| expit(e)).collect(),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

struct KnnFit {
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
    k: usize,
}

impl FittedRegressor for KnnFit {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim.max(1);
        let n = self.y.len();
        let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
        x.chunks(d)
            .map(|q| {
                scratch.clear();
                scratch.extend(
                    self.x
                        .chunks(d)
                        .enumerate()
                        .map(|(i, r)| (sq_dist(q, r), i)),
                );
                // (distance, index) is a total order, so equal distances
                // resolve to the lowest row index.
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if self.k < n {
                    scratch.select_nth_unstable_by(self.k - 1, cmp);
                }
                scratch[..self.k].sort_unstable_by(cmp);
                scratch[..self.k].iter().map(|&(_, i)| self.y[i]).sum::<f64>() / self.k as f64
            })
            .collect()
    }
}

struct KernelFit {
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
    bandwidth: f64,
}

impl FittedRegressor for KernelFit {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim.max(1);
        let scale = 2.0 * self.bandwidth * self.bandwidth;
        x.chunks(d)
            .map(|q| {
                let dists: Vec<f64> = self.x.chunks(d).map(|r| sq_dist(q, r)).collect();
                // Shift by the nearest distance so the weights never all underflow.
                let nearest = dists.iter().cloned().fold(f64::INFINITY, f64::min);
                let (mut num, mut den) = (0.0, 0.0);
                for (dist, y) in dists.iter().zip(&self.y) {
                    let w = (-(dist - nearest) / scale).exp();
                    num += w * y;
                    den += w;
                }
                num / den
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_ties_prefer_lower_index() {
        let spec = RegressorSpec::new(Family::Continuous, Method::Knn { k: 1 }).unwrap();
        // Query 0 is equidistant from rows 0 and 1.
        let fit = spec.fit(&[-1.0, 1.0, 5.0], 1, &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(fit.predict(&[0.0]), vec![10.0]);
    }

    #[test]
    fn nadaraya_watson_far_query_is_finite() {
        let spec = RegressorSpec::new(Family::Continuous, Method::NadarayaWatson { bandwidth: 0.01 }).unwrap();
        let fit = spec.fit(&[0.0, 1.0], 1, &[1.0, 3.0]).unwrap();
        let p = fit.predict(&[1000.0, 0.5]);
        assert_eq!(p[0], 3.0);
        assert!((p[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn knn_k_larger_than_sample() {
        let spec = RegressorSpec::new(Family::Continuous, Method::Knn { k: 5 }).unwrap();
        assert!(spec.fit(&[0.0, 1.0], 1, &[1.0, 3.0]).is_err());
    }
}
