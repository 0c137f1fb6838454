//! Data-driven starting points for a chained model.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::likelihoods::LikelihoodFamily;
use crate::model::ChainedModel;
use crate::quadrature::Integrator;
use crate::svgp::LatentGP;

/// Starting q(u) covariance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitCovariance {
    /// S = I, μ_u ~ N(0, 0.01).
    #[default]
    Identity,
    /// S = K_uu, μ_u = L_K ε with ε ~ N(0, 0.01). Keeps the starting marginals
    /// at prior scale when K_uu is badly conditioned (short lengthscales,
    /// dense inducing points).
    Prior,
}

#[derive(Debug, Clone)]
pub struct ModelInit {
    /// Inducing point count; clipped to n.
    pub m: usize,
    pub seed: u64,
    /// Kernels for (f, g); `None` uses [`default_kernel`] for both.
    pub kernels: Option<[KernelSpec; 2]>,
    /// Replace the g latent by a learnable constant.
    pub constant_g: bool,
    pub integrator: Integrator,
    pub covariance: InitCovariance,
}

impl Default for ModelInit {
    fn default() -> Self {
        Self {
            m: 100,
            seed: 0,
            kernels: None,
            constant_g: false,
            integrator: Integrator::default(),
            covariance: InitCovariance::Identity,
        }
    }
}

/// ARD RBF (unit variance, lengthscale = column std) plus a unit bias, over all columns.
pub fn default_kernel(x: &DMatrix<f64>) -> KernelSpec {
    let n = x.nrows().max(1) as f64;
    let ls = x
        .column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let all: Vec<usize> = (0..x.ncols()).collect();
    KernelSpec::sum(vec![(KernelSpec::ard_rbf(1.0, ls), all.clone()), (KernelSpec::bias(1.0), all)])
}

fn sq_dist(x: &DMatrix<f64>, i: usize, z: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|d| (x[(i, d)] - z[(j, d)]).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations. With m ≥ n the inputs
/// themselves are returned.
pub fn kmeans_inducing(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n == 0 || m == 0 {
        return Err(Error::invalid("inducing count", m as f64, "needs m ≥ 1 and data"));
    }
    if m >= n {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, x, centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut k = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    k = i;
                    break;
                }
                r -= d;
            }
            k
        } else {
            rng.random_range(0..n)
        };
        centers.push(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, x, pick));
        }
    }
    let mut z = x.select_rows(&centers);
    let mut assign = vec![0usize; n];
    for _ in 0..25 {
        let mut moved = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..m)
                .min_by(|&p, &q| sq_dist(x, i, &z, p).total_cmp(&sq_dist(x, i, &z, q)))
                .expect("m ≥ 1");
            moved |= best != *a;
            *a = best;
        }
        let mut sums = DMatrix::<f64>::zeros(m, x.ncols());
        let mut counts = vec![0usize; m];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for d in 0..x.ncols() {
                sums[(a, d)] += x[(i, d)];
            }
        }
        for (j, &c) in counts.iter().enumerate() {
            // empty clusters keep their previous centre
            if c > 0 {
                for d in 0..x.ncols() {
                    z[(j, d)] = sums[(j, d)] / c as f64;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(z)
}

fn mean_var(y: &[f64]) -> (f64, f64) {
    let n = y.len().max(1) as f64;
    let mean = y.iter().sum::<f64>() / n;
    (mean, y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

fn quantile(y: &[f64], p: f64) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Starting constant prior means (f, g) matched to simple moments of y.
pub fn prior_means(family: &LikelihoodFamily, y: &[f64]) -> (f64, f64) {
    if y.is_empty() {
        return (0.0, 0.0);
    }
    let (mean, var) = mean_var(y);
    let var = var.max(1e-6);
    match family {
        LikelihoodFamily::HetGaussian => (mean, var.ln()),
        LikelihoodFamily::HetStudentT { .. } => (quantile(y, 0.5), (0.5 * var).ln()),
        LikelihoodFamily::Beta => {
            let c = mean * (1.0 - mean) / var - 1.0;
            let c = if c > 0.0 { c } else { 2.0 };
            ((mean * c).ln(), ((1.0 - mean) * c).ln())
        }
        LikelihoodFamily::LogLogisticSurvival => {
            // ln y is logistic with scale 1/β, interquartile range 2 ln 3 / β
            let logs: Vec<f64> = y.iter().map(|v| v.ln()).collect();
            let iqr = quantile(&logs, 0.75) - quantile(&logs, 0.25);
            let beta = if iqr > 0.0 { 2.0 * 3f64.ln() / iqr } else { 1.0 };
            (quantile(&logs, 0.5), beta.ln())
        }
        LikelihoodFamily::AdditivePoisson => {
            let l = (0.5 * mean.max(1e-3)).ln();
            (l, l)
        }
        LikelihoodFamily::MultiplicativePoisson => (mean.max(1e-3).ln(), 0.0),
    }
}

/// Builds a model ready for fitting: Z by k-means, q(u) per
/// [`InitCovariance`], prior means from [`prior_means`].
pub fn init_model(data: &Dataset, family: LikelihoodFamily, init: &ModelInit) -> Result<ChainedModel> {
    if init.m == 0 {
        return Err(Error::invalid("m", 0.0, "must be at least 1"));
    }
    data.validate_for(&family)?;
    let z = kmeans_inducing(&data.x, init.m, init.seed)?;
    let m = z.nrows();
    let (c_f, c_g) = prior_means(&family, &data.y);
    let [k_f, k_g] = init
        .kernels
        .clone()
        .unwrap_or_else(|| [default_kernel(&data.x), default_kernel(&data.x)]);
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed.wrapping_add(0x9e37_79b9));
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut latent = |k: KernelSpec, c: f64| -> Result<LatentGP> {
        let mut l = match init.covariance {
            InitCovariance::Identity => LatentGP::with_identity_covariance(k, m, 1.0, c),
            InitCovariance::Prior => LatentGP::at_prior(k, &z, c)?,
        };
        let eps = nalgebra::DVector::from_fn(m, |_, _| noise.sample(&mut rng));
        l.q_mu = match init.covariance {
            InitCovariance::Identity => eps,
            InitCovariance::Prior => &l.q_chol * eps,
        };
        Ok(l)
    };
    let f = latent(k_f, c_f)?;
    let g = if init.constant_g {
        LatentGP::constant(k_g, m, c_g)
    } else {
        latent(k_g, c_g)?
    };
    ChainedModel::new(vec![f, g], z, family, init.integrator.clone())
}
