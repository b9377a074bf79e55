//! Observed data: covariates, a binary treatment and an outcome per row.

use crate::error::{Error, Result};

/// A borrowed view of one row `Z = (X, A, Y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<'a> {
    pub x: &'a [f64],
    pub a: u8,
    pub y: f64,
}

impl<'a> Observation<'a> {
    pub fn new(x: &'a [f64], a: u8, y: f64) -> Self {
        Observation { x, a, y }
    }
}

/// Column-oriented sample of observations with optional fold labels.
///
/// Covariates are stored row-major (`n * dim` values).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    x: Vec<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
    folds: Option<Vec<usize>>,
}

impl Dataset {
    /// Build a dataset from a flat row-major covariate buffer.
    pub fn new(columns: Vec<String>, x: Vec<f64>, a: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let n = a.len();
        let dim = columns.len();
        if y.len() != n {
            return Err(Error::Data(format!(
                "treatment has {n} rows but outcome has {}",
                y.len()
            )));
        }
        if x.len() != n * dim {
            return Err(Error::Data(format!(
                "expected {} covariate values ({n} rows x {dim} columns), got {}",
                n * dim,
                x.len()
            )));
        }
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 observations, got {n}")));
        }
        if let Some(i) = a.iter().position(|&t| t > 1) {
            return Err(Error::Data(format!(
                "treatment must be 0 or 1; row {i} has {}",
                a[i]
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("outcome in row {i} is not finite")));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            let (i, j) = (k / dim.max(1), k % dim.max(1));
            return Err(Error::Data(format!(
                "covariate '{}' in row {i} is not finite",
                columns[j]
            )));
        }
        Ok(Dataset {
            columns,
            x,
            a,
            y,
            folds: None,
        })
    }

    /// Build a dataset from per-row covariate vectors.
    pub fn from_rows(
        columns: Vec<String>,
        rows: &[Vec<f64>],
        a: Vec<u8>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let dim = columns.len();
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Data(format!(
                "row {i} has {} covariates, expected {dim}",
                rows[i].len()
            )));
        }
        let x = rows.iter().flatten().copied().collect();
        Dataset::new(columns, x, a, y)
    }

    /// Attach fold labels; they must cover `0..k` for some `k >= 1`.
    pub fn with_folds(mut self, folds: Vec<usize>) -> Result<Self> {
        if folds.len() != self.len() {
            return Err(Error::Data(format!(
                "{} fold labels for {} rows",
                folds.len(),
                self.len()
            )));
        }
        let k = folds.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; k];
        for &f in &folds {
            seen[f] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "fold labels must cover 0..{k}; fold {missing} is empty"
            )));
        }
        self.folds = Some(folds);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Number of covariates `d`.
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Row-major covariate buffer.
    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.x[i * d..(i + 1) * d]
    }

    /// Copy of covariate column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let d = self.dim();
        (0..self.len()).map(|i| self.x[i * d + j]).collect()
    }

    pub fn treatment(&self) -> &[u8] {
        &self.a
    }

    pub fn outcome(&self) -> &[f64] {
        &self.y
    }

    pub fn folds(&self) -> Option<&[usize]> {
        self.folds.as_deref()
    }

    pub fn row(&self, i: usize) -> Observation<'_> {
        Observation {
            x: self.covariate_row(i),
            a: self.a[i],
            y: self.y[i],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = Observation<'_>> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Rows at `indices`, in that order. Fold labels are dropped.
    pub(crate) fn subset(&self, indices: &[usize]) -> SubsetView {
        let d = self.dim();
        let mut x = Vec::with_capacity(indices.len() * d);
        let mut a = Vec::with_capacity(indices.len());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.covariate_row(i));
            a.push(self.a[i]);
            y.push(self.y[i]);
        }
        SubsetView { dim: d, x, a, y }
    }

    pub(crate) fn as_view(&self) -> SubsetView {
        SubsetView {
            dim: self.dim(),
            x: self.x.clone(),
            a: self.a.clone(),
            y: self.y.clone(),
        }
    }
}

/// Owned row subset used internally for fitting; unlike [`Dataset`] it may
/// hold fewer than two rows.
#[derive(Debug, Clone)]
pub(crate) struct SubsetView {
    pub dim: usize,
    pub x: Vec<f64>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
}
