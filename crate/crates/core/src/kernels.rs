//! Covariance functions.
//!
//! A [`KernelSpec`] is a small expression tree: ARD exponentiated-quadratic
//! and bias leaves, combined by [`KernelSpec::Sum`] whose children each see
//! only a subset of the input columns. Hyperparameters are flattened
//! depth-first into a single vector (`variance` before `lengthscales` for an
//! ARD leaf), which is the order used by [`KernelSpec::params`] and
//! [`KernelSpec::grad_hyper`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative jitter added to the diagonal before every Cholesky factorization.
pub const JITTER_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// σ² exp(−½ Σ_d (x_d − x′_d)² / ℓ_d²)
    ArdRbf { variance: f64, lengthscales: Vec<f64> },
    /// Constant covariance σ².
    Bias { variance: f64 },
    /// Σ_c k_c(x[dims_c], x′[dims_c]).
    Sum { children: Vec<SumChild> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumChild {
    pub kernel: KernelSpec,
    pub active_dims: Vec<usize>,
}

impl KernelSpec {
    pub fn ard_rbf(variance: f64, lengthscales: Vec<f64>) -> Self {
        KernelSpec::ArdRbf { variance, lengthscales }
    }

    pub fn bias(variance: f64) -> Self {
        KernelSpec::Bias { variance }
    }

    /// Sum of children, each restricted to the listed input columns.
    pub fn sum(children: Vec<(KernelSpec, Vec<usize>)>) -> Self {
        KernelSpec::Sum {
            children: children
                .into_iter()
                .map(|(kernel, active_dims)| SumChild { kernel, active_dims })
                .collect(),
        }
    }

    /// Checks hyperparameter positivity and that the kernel fits `q` input columns.
    pub fn validate(&self, q: usize) -> Result<()> {
        match self {
            KernelSpec::ArdRbf { variance, lengthscales } => {
                check_positive("variance", *variance)?;
                if lengthscales.len() != q {
                    return Err(Error::Dimension(format!(
                        "ard_rbf has {} lengthscales for {} input dimensions",
                        lengthscales.len(),
                        q
                    )));
                }
                for l in lengthscales {
                    check_positive("lengthscale", *l)?;
                }
                Ok(())
            }
            KernelSpec::Bias { variance } => check_positive("variance", *variance),
            KernelSpec::Sum { children } => {
                if children.is_empty() {
                    return Err(Error::Dimension("sum kernel with no children".into()));
                }
                for c in children {
                    if c.active_dims.is_empty() && !matches!(c.kernel, KernelSpec::Bias { .. }) {
                        return Err(Error::Dimension("sum child with empty active_dims".into()));
                    }
                    if let Some(&d) = c.active_dims.iter().find(|&&d| d >= q) {
                        return Err(Error::Dimension(format!(
                            "active dimension {d} out of range for {q} inputs"
                        )));
                    }
                    c.kernel.validate(c.active_dims.len())?;
                }
                Ok(())
            }
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            KernelSpec::ArdRbf { lengthscales, .. } => 1 + lengthscales.len(),
            KernelSpec::Bias { .. } => 1,
            KernelSpec::Sum { children } => children.iter().map(|c| c.kernel.n_params()).sum(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.push_params(&mut out);
        out
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::ArdRbf { variance, lengthscales } => {
                out.push(*variance);
                out.extend_from_slice(lengthscales);
            }
            KernelSpec::Bias { variance } => out.push(*variance),
            KernelSpec::Sum { children } => {
                for c in children {
                    c.kernel.push_params(out);
                }
            }
        }
    }

    /// Overwrites hyperparameters from a flat slice in [`params`](Self::params) order.
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "expected {} kernel parameters, got {}",
                self.n_params(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        self.pull_params(&mut it);
        Ok(())
    }

    fn pull_params(&mut self, it: &mut impl Iterator<Item = f64>) {
        match self {
            KernelSpec::ArdRbf { variance, lengthscales } => {
                *variance = it.next().unwrap();
                for l in lengthscales.iter_mut() {
                    *l = it.next().unwrap();
                }
            }
            KernelSpec::Bias { variance } => *variance = it.next().unwrap(),
            KernelSpec::Sum { children } => {
                for c in children.iter_mut() {
                    c.kernel.pull_params(it);
                }
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.push_names("", &mut out);
        out
    }

    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        match self {
            KernelSpec::ArdRbf { lengthscales, .. } => {
                out.push(format!("{prefix}rbf.variance"));
                for d in 0..lengthscales.len() {
                    out.push(format!("{prefix}rbf.lengthscale[{d}]"));
                }
            }
            KernelSpec::Bias { .. } => out.push(format!("{prefix}bias.variance")),
            KernelSpec::Sum { children } => {
                for (i, c) in children.iter().enumerate() {
                    c.kernel.push_names(&format!("{prefix}sum[{i}]."), out);
                }
            }
        }
    }

    /// Cross-covariance matrix between the rows of `a` and the rows of `b`.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(a, b)?;
        Ok(self.gram_unchecked(a, b))
    }

    fn gram_unchecked(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            KernelSpec::ArdRbf { variance, lengthscales } => {
                DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                    variance * (-0.5 * scaled_sq_dist(a, i, b, j, lengthscales)).exp()
                })
            }
            KernelSpec::Bias { variance } => DMatrix::from_element(a.nrows(), b.nrows(), *variance),
            KernelSpec::Sum { children } => {
                let mut k = DMatrix::zeros(a.nrows(), b.nrows());
                for c in children {
                    let (ac, bc) = (a.select_columns(&c.active_dims), b.select_columns(&c.active_dims));
                    k += c.kernel.gram_unchecked(&ac, &bc);
                }
                k
            }
        }
    }

    /// Diagonal of `gram(a, a)` without forming the matrix.
    pub fn gram_diag(&self, a: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_inputs(a, a)?;
        Ok(DVector::from_element(a.nrows(), self.diag_value()))
    }

    // Every shipped kernel is stationary, so k(x, x) is the same for all x.
    fn diag_value(&self) -> f64 {
        match self {
            KernelSpec::ArdRbf { variance, .. } | KernelSpec::Bias { variance } => *variance,
            KernelSpec::Sum { children } => children.iter().map(|c| c.kernel.diag_value()).sum(),
        }
    }

    /// ∂ gram(a, b) / ∂θ_k for every hyperparameter θ_k, in [`params`](Self::params) order.
    pub fn grad_hyper(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_inputs(a, b)?;
        let mut out = Vec::with_capacity(self.n_params());
        self.push_grad_hyper(a, b, &mut out);
        Ok(out)
    }

    fn push_grad_hyper(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, out: &mut Vec<DMatrix<f64>>) {
        match self {
            KernelSpec::ArdRbf { variance, lengthscales } => {
                let base = DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                    (-0.5 * scaled_sq_dist(a, i, b, j, lengthscales)).exp()
                });
                for (d, &l) in lengthscales.iter().enumerate() {
                    let l3 = l * l * l;
                    out.push(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                        let diff = a[(i, d)] - b[(j, d)];
                        variance * base[(i, j)] * diff * diff / l3
                    }));
                }
                out.insert(out.len() - lengthscales.len(), base);
            }
            KernelSpec::Bias { .. } => out.push(DMatrix::from_element(a.nrows(), b.nrows(), 1.0)),
            KernelSpec::Sum { children } => {
                for c in children {
                    let (ac, bc) = (a.select_columns(&c.active_dims), b.select_columns(&c.active_dims));
                    c.kernel.push_grad_hyper(&ac, &bc, out);
                }
            }
        }
    }

    /// ∂ gram_diag(a) / ∂θ_k, in [`params`](Self::params) order.
    pub fn grad_hyper_diag(&self, a: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        self.check_inputs(a, a)?;
        let mut flat = Vec::with_capacity(self.n_params());
        self.push_diag_grad(&mut flat);
        Ok(flat.into_iter().map(|g| DVector::from_element(a.nrows(), g)).collect())
    }

    fn push_diag_grad(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::ArdRbf { lengthscales, .. } => {
                out.push(1.0);
                out.extend(std::iter::repeat_n(0.0, lengthscales.len()));
            }
            KernelSpec::Bias { .. } => out.push(1.0),
            KernelSpec::Sum { children } => {
                for c in children {
                    c.kernel.push_diag_grad(out);
                }
            }
        }
    }

    /// Jacobian of `gram(a, b)` with respect to the rows of `b`.
    ///
    /// Entry `(i, j)` of the `d`-th matrix is ∂k(aᵢ, bⱼ)/∂b_{jd}; since entry
    /// `(i, j)` depends on no other row of `b`, these `q` matrices are the
    /// complete Jacobian.
    pub fn grad_inputs(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_inputs(a, b)?;
        Ok(self.grad_inputs_unchecked(a, b))
    }

    fn grad_inputs_unchecked(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let q = a.ncols();
        match self {
            KernelSpec::ArdRbf { variance, lengthscales } => {
                let k = DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                    variance * (-0.5 * scaled_sq_dist(a, i, b, j, lengthscales)).exp()
                });
                (0..q)
                    .map(|d| {
                        let l2 = lengthscales[d] * lengthscales[d];
                        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                            k[(i, j)] * (a[(i, d)] - b[(j, d)]) / l2
                        })
                    })
                    .collect()
            }
            KernelSpec::Bias { .. } => vec![DMatrix::zeros(a.nrows(), b.nrows()); q],
            KernelSpec::Sum { children } => {
                let mut out = vec![DMatrix::zeros(a.nrows(), b.nrows()); q];
                for c in children {
                    let (ac, bc) = (a.select_columns(&c.active_dims), b.select_columns(&c.active_dims));
                    let g = c.kernel.grad_inputs_unchecked(&ac, &bc);
                    for (local, &d) in c.active_dims.iter().enumerate() {
                        out[d] += &g[local];
                    }
                }
                out
            }
        }
    }

    fn check_inputs(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
        if a.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "input column counts differ: {} vs {}",
                a.ncols(),
                b.ncols()
            )));
        }
        self.validate(a.ncols())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, v, "must be strictly positive and finite"))
    }
}

fn scaled_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize, ls: &[f64]) -> f64 {
    ls.iter()
        .enumerate()
        .map(|(d, l)| {
            let r = (a[(i, d)] - b[(j, d)]) / l;
            r * r
        })
        .sum()
}

/// Jitter δ = 1e-6 · mean(diag K).
pub fn jitter_for(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows().max(1) as f64;
    JITTER_SCALE * k.diagonal().sum() / n
}
