//! Observation containers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihoods::Likelihood;

/// Named columns of ground-truth values, aligned with the dataset rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Truth {
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Truth {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

/// Per-column affine map applied to raw inputs: x' = (x − shift) / scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and standard deviations of `x`; constant columns keep scale 1.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let (mut shift, mut scale) = (Vec::new(), Vec::new());
        for col in x.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            shift.push(mean);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { shift, scale }
    }

    pub fn identity(q: usize) -> Self {
        Self {
            shift: vec![0.0; q],
            scale: vec![1.0; q],
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.shift.len() {
            return Err(Error::Dimension(format!(
                "standardizer expects {} columns, got {}",
                self.shift.len(),
                x.ncols()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, d| (x[(i, d)] - self.shift[d]) / self.scale[d]))
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, d| x[(i, d)] * self.scale[d] + self.shift[d])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: Option<u64>,
    pub truth: Option<Truth>,
    /// Rows altered by a corruption generator.
    pub corrupted: Option<Vec<usize>>,
    /// Transform already applied to `x`, if inputs were standardized.
    pub input_transform: Option<Standardizer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// Censoring indicators (true ⇒ only a lower bound on the event time).
    pub censored: Option<Vec<bool>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, censored: Option<Vec<bool>>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Data(format!("{} input rows but {} targets", x.nrows(), y.len())));
        }
        if let Some(c) = &censored {
            if c.len() != y.len() {
                return Err(Error::Data(format!("{} censoring flags for {} targets", c.len(), y.len())));
            }
        }
        Ok(Self {
            x,
            y,
            censored,
            meta: DatasetMeta::default(),
        })
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.meta.name = name.to_string();
        self
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_censored(&self, i: usize) -> bool {
        self.censored.as_ref().is_some_and(|c| c[i])
    }

    /// Rows `indices`, in that order. Truth columns follow the rows.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut meta = self.meta.clone();
        meta.truth = self.meta.truth.as_ref().map(|t| Truth {
            columns: t
                .columns
                .iter()
                .map(|(n, v)| (n.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
        });
        meta.corrupted = None;
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            censored: self.censored.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            meta,
        }
    }

    /// Checks every row against the likelihood's data domain.
    pub fn validate_for(&self, likelihood: &impl Likelihood) -> Result<()> {
        if self.censored.is_some() && !likelihood.uses_censoring() {
            return Err(Error::Data(format!(
                "censoring indicators supplied for {}, which does not use them",
                likelihood.name()
            )));
        }
        for (i, &y) in self.y.iter().enumerate() {
            likelihood
                .check_datum(y, self.is_censored(i))
                .map_err(|reason| Error::Domain { index: i, reason })?;
        }
        Ok(())
    }
}
