//! Sparse variational machinery for a single latent function.
//!
//! The variational posterior lives in inducing-output space (unwhitened):
//! q(u) = N(μ_u, S) with S = L Lᵀ, prior p(u) = N(0, K_uu). Only the
//! marginal means and variances of q(f) at the data are ever formed.
//!
//! Gradients are written against three kernel-matrix adjoints (K_uu, K_uf
//! and diag K_ff) and then contracted with the kernel's hyperparameter and
//! input Jacobians in one place, [`LatentGP::contract`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{jitter_for, KernelSpec, JITTER_SCALE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGP {
    pub kernel: KernelSpec,
    /// Variational mean μ_u (length m).
    pub q_mu: DVector<f64>,
    /// Lower-triangular Cholesky factor of the variational covariance S.
    pub q_chol: DMatrix<f64>,
    /// Constant prior mean added to the latent.
    pub prior_mean: f64,
    /// A constant latent has no GP part: marginals are (prior_mean, 0) and
    /// its KL term vanishes. Used for homoscedastic baselines.
    #[serde(default)]
    pub constant: bool,
}

/// Marginal means and variances of q(f) at a set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMarginals {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

impl LatentMarginals {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Gradient of a scalar objective with respect to one latent's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrad {
    pub q_mu: DVector<f64>,
    /// Lower-triangular; entries above the diagonal are exactly zero.
    pub q_chol: DMatrix<f64>,
    /// With respect to natural-space hyperparameters, in `KernelSpec::params` order.
    pub kernel: Vec<f64>,
    pub z: DMatrix<f64>,
    pub prior_mean: f64,
}

impl LatentGrad {
    pub fn zeros(m: usize, q: usize, n_hyper: usize) -> Self {
        Self {
            q_mu: DVector::zeros(m),
            q_chol: DMatrix::zeros(m, m),
            kernel: vec![0.0; n_hyper],
            z: DMatrix::zeros(m, q),
            prior_mean: 0.0,
        }
    }

    /// self += a · other
    pub fn axpy(&mut self, a: f64, other: &LatentGrad) {
        self.q_mu.axpy(a, &other.q_mu, 1.0);
        self.q_chol += a * &other.q_chol;
        for (x, y) in self.kernel.iter_mut().zip(&other.kernel) {
            *x += a * y;
        }
        self.z += a * &other.z;
        self.prior_mean += a * other.prior_mean;
    }
}

/// Jittered K_uu and its Cholesky factor.
struct InducingPrior {
    kuu: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl InducingPrior {
    fn new(kernel: &KernelSpec, z: &DMatrix<f64>) -> Result<Self> {
        let mut kuu = kernel.gram(z, z)?;
        let delta = jitter_for(&kuu);
        for i in 0..kuu.nrows() {
            kuu[(i, i)] += delta;
        }
        let chol = Cholesky::new(kuu.clone()).ok_or_else(|| Error::Cholesky("K_uu + jitter".into()))?;
        Ok(Self { kuu, chol })
    }

    fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

impl LatentGP {
    /// A latent whose q(u) equals the prior: μ_u = 0, S = K_uu (+ jitter).
    pub fn at_prior(kernel: KernelSpec, z: &DMatrix<f64>, prior_mean: f64) -> Result<Self> {
        let prior = InducingPrior::new(&kernel, z)?;
        Ok(Self {
            kernel,
            q_mu: DVector::zeros(z.nrows()),
            q_chol: prior.chol.l(),
            prior_mean,
            constant: false,
        })
    }

    /// Latent with μ_u = 0 and S = scale · I.
    pub fn with_identity_covariance(kernel: KernelSpec, m: usize, scale: f64, prior_mean: f64) -> Self {
        Self {
            kernel,
            q_mu: DVector::zeros(m),
            q_chol: DMatrix::identity(m, m) * scale.sqrt(),
            prior_mean,
            constant: false,
        }
    }

    /// Latent fixed at a learnable constant value.
    pub fn constant(kernel: KernelSpec, m: usize, value: f64) -> Self {
        Self {
            constant: true,
            ..Self::with_identity_covariance(kernel, m, 1.0, value)
        }
    }

    pub fn num_inducing(&self) -> usize {
        self.q_mu.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.q_chol * self.q_chol.transpose()
    }

    pub fn validate(&self, z: &DMatrix<f64>) -> Result<()> {
        let m = z.nrows();
        if self.q_mu.len() != m || self.q_chol.nrows() != m || self.q_chol.ncols() != m {
            return Err(Error::Dimension(format!(
                "latent has μ_u of length {} and L_u of shape {}x{} for {} inducing points",
                self.q_mu.len(),
                self.q_chol.nrows(),
                self.q_chol.ncols(),
                m
            )));
        }
        for i in 0..m {
            if !(self.q_chol[(i, i)] > 0.0) {
                return Err(Error::invalid("L_u diagonal", self.q_chol[(i, i)], "must be positive"));
            }
            for j in (i + 1)..m {
                if self.q_chol[(i, j)] != 0.0 {
                    return Err(Error::Dimension("L_u is not lower triangular".into()));
                }
            }
        }
        self.kernel.validate(z.ncols())
    }

    /// q(f) marginals at the rows of `x`:
    /// m = K_fu K_uu⁻¹ μ_u + c, v = diag K_ff + diag(K_fu K_uu⁻¹ (S − K_uu) K_uu⁻¹ K_uf).
    ///
    /// Variances are floored at zero.
    pub fn marginals(&self, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<LatentMarginals> {
        let n = x.nrows();
        if self.constant {
            return Ok(LatentMarginals {
                mean: DVector::from_element(n, self.prior_mean),
                var: DVector::zeros(n),
            });
        }
        if n == 0 {
            return Ok(LatentMarginals {
                mean: DVector::zeros(0),
                var: DVector::zeros(0),
            });
        }
        let prior = InducingPrior::new(&self.kernel, z)?;
        let kuf = self.kernel.gram(z, x)?;
        let a = prior.chol.solve(&kuf);
        let mut mean = a.tr_mul(&self.q_mu);
        mean.add_scalar_mut(self.prior_mean);
        let lta = self.q_chol.tr_mul(&a);
        let kff = self.kernel.gram_diag(x)?;
        let var = DVector::from_fn(n, |i, _| {
            let v = kff[i] - kuf.column(i).dot(&a.column(i)) + lta.column(i).norm_squared();
            if v < -1e-8 {
                log::debug!("flooring marginal variance {v} at datum {i}");
            }
            v.max(0.0)
        });
        Ok(LatentMarginals { mean, var })
    }

    /// Marginals at test inputs; same computation as [`marginals`](Self::marginals).
    pub fn predict(&self, z: &DMatrix<f64>, x_star: &DMatrix<f64>) -> Result<LatentMarginals> {
        self.marginals(z, x_star)
    }

    /// KL(N(μ_u, S) ‖ N(0, K_uu)).
    pub fn kl_to_prior(&self, z: &DMatrix<f64>) -> Result<f64> {
        if self.constant {
            return Ok(0.0);
        }
        let m = z.nrows();
        let prior = InducingPrior::new(&self.kernel, z)?;
        let lk = prior.chol.l();
        let w = lk
            .solve_lower_triangular(&self.q_chol)
            .ok_or_else(|| Error::Cholesky("K_uu triangular solve".into()))?;
        let trace = w.norm_squared();
        let alpha = lk
            .solve_lower_triangular(&self.q_mu)
            .ok_or_else(|| Error::Cholesky("K_uu triangular solve".into()))?;
        let maha = alpha.norm_squared();
        let logdet_k: f64 = 2.0 * lk.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet_s: f64 = 2.0 * self.q_chol.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
        let kl = 0.5 * (trace + maha - m as f64 + logdet_k - logdet_s);
        Ok(kl.max(0.0))
    }

    /// Gradient of Σᵢ (a_mᵢ mᵢ + a_vᵢ vᵢ) for fixed adjoints `a_m`, `a_v`.
    pub fn marginal_grads(
        &self,
        z: &DMatrix<f64>,
        x: &DMatrix<f64>,
        a_m: &DVector<f64>,
        a_v: &DVector<f64>,
    ) -> Result<LatentGrad> {
        let (m, q) = (z.nrows(), z.ncols());
        let n = x.nrows();
        if a_m.len() != n || a_v.len() != n {
            return Err(Error::Dimension(format!(
                "adjoints of length {}/{} for {} inputs",
                a_m.len(),
                a_v.len(),
                n
            )));
        }
        let mut out = LatentGrad::zeros(m, q, self.kernel.n_params());
        out.prior_mean = a_m.sum();
        if self.constant || n == 0 {
            return Ok(out);
        }
        let prior = InducingPrior::new(&self.kernel, z)?;
        let kinv = prior.inverse();
        let kuf = self.kernel.gram(z, x)?;
        let a = prior.chol.solve(&kuf);
        let alpha = prior.chol.solve(&self.q_mu);
        let s = self.covariance();

        out.q_mu = &a * a_m;
        // A D Aᵀ
        let mut ad = a.clone();
        for (i, mut col) in ad.column_iter_mut().enumerate() {
            col *= a_v[i];
        }
        let qmat = &ad * a.transpose();
        out.q_chol = lower(&(2.0 * &qmat * &self.q_chol));

        let kinv_s = &kinv * &s;
        let mut g_p = &alpha * a_m.transpose();
        g_p += 2.0 * (&kinv_s * &ad - &ad);
        let mut g_k = -(&a * a_m) * alpha.transpose();
        g_k -= &kinv_s * &qmat;
        g_k -= &qmat * kinv_s.transpose();
        g_k += &qmat;

        let (g_kernel, g_z) = self.contract(z, Some((x, &g_p, a_v)), &g_k, &prior.kuu)?;
        out.kernel = g_kernel;
        out.z = g_z;
        Ok(out)
    }

    /// Gradient of [`kl_to_prior`](Self::kl_to_prior).
    pub fn kl_grads(&self, z: &DMatrix<f64>) -> Result<LatentGrad> {
        let (m, q) = (z.nrows(), z.ncols());
        let mut out = LatentGrad::zeros(m, q, self.kernel.n_params());
        if self.constant {
            return Ok(out);
        }
        let prior = InducingPrior::new(&self.kernel, z)?;
        let kinv = prior.inverse();
        let alpha = &kinv * &self.q_mu;
        out.q_mu = alpha.clone();
        let mut g_l = lower(&(&kinv * &self.q_chol));
        for i in 0..m {
            g_l[(i, i)] -= 1.0 / self.q_chol[(i, i)];
        }
        out.q_chol = g_l;
        let s = self.covariance();
        let g_k = 0.5 * (&kinv - &kinv * s * &kinv - &alpha * alpha.transpose());
        let (g_kernel, g_z) = self.contract(z, None, &g_k, &prior.kuu)?;
        out.kernel = g_kernel;
        out.z = g_z;
        Ok(out)
    }

    /// Pushes adjoints of K_uu (`g_k`), K_uf and diag K_ff onto the kernel
    /// hyperparameters and the inducing inputs. Contraction is Σ_ab G_ab dK_ab.
    fn contract(
        &self,
        z: &DMatrix<f64>,
        data: Option<(&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>)>,
        g_k: &DMatrix<f64>,
        kuu: &DMatrix<f64>,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (m, q) = (z.nrows(), z.ncols());
        debug_assert_eq!(kuu.nrows(), m);
        let g_k_trace = g_k.trace();

        let dkuu = self.kernel.grad_hyper(z, z)?;
        let mut g_kernel: Vec<f64> = dkuu
            .iter()
            .map(|dk| {
                // jitter is 1e-6 · mean diag K_uu, so it moves with θ too
                let d_jitter = JITTER_SCALE * dk.diagonal().sum() / m as f64;
                g_k.dot(dk) + d_jitter * g_k_trace
            })
            .collect();

        // K_uu depends on z_j through row j and column j. The diagonal
        // k(z, z) of a stationary kernel does not depend on z, so the
        // jitter contributes nothing here.
        let jz = self.kernel.grad_inputs(z, z)?;
        let g_k_sym = g_k + g_k.transpose();
        let mut g_z = DMatrix::from_fn(m, q, |j, d| g_k_sym.column(j).dot(&jz[d].column(j)));

        if let Some((x, g_p, a_v)) = data {
            let dkuf = self.kernel.grad_hyper(z, x)?;
            let dkff = self.kernel.grad_hyper_diag(x)?;
            for (t, g) in g_kernel.iter_mut().enumerate() {
                *g += g_p.dot(&dkuf[t]) + a_v.dot(&dkff[t]);
            }
            // ∂k(xᵢ, z_j)/∂z_jd, laid out n × m
            let jx = self.kernel.grad_inputs(x, z)?;
            for d in 0..q {
                for j in 0..m {
                    g_z[(j, d)] += g_p.row(j).transpose().dot(&jx[d].column(j));
                }
            }
        }
        Ok((g_kernel, g_z))
    }
}

fn lower(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.lower_triangle()
}
