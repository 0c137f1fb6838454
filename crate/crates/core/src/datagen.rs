//! Deterministic synthetic datasets. Every generator is a pure function of
//! its arguments and seed.

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::likelihoods::BETA_EPS;

/// Number of targets overwritten by [`gen_corrupt_motorcycle`].
pub const CORRUPTED_COUNT: usize = 25;
/// Variance of the injected corruption noise.
pub const CORRUPTION_VARIANCE: f64 = 3.0;
/// Upper clamp applied to both Poisson latents before exponentiation.
pub const LATENT_CLAMP: f64 = 20.0;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// n evenly spaced points on [0, 1] (a single point sits at 0.5).
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Adds N(0, 3) noise to 25 distinct targets chosen uniformly at random.
///
/// With `standardize`, y is first shifted and scaled to zero mean and unit
/// variance, and the untouched rows equal the standardized base exactly.
/// The pre-corruption targets are kept as the `y_clean` truth column.
pub fn gen_corrupt_motorcycle(base: &Dataset, seed: u64, standardize: bool) -> Result<Dataset> {
    if base.input_dim() != 1 {
        return Err(Error::Data(format!(
            "corruption expects a 1-D regression dataset, got {} input columns",
            base.input_dim()
        )));
    }
    if base.len() < CORRUPTED_COUNT {
        return Err(Error::Data(format!(
            "corruption needs at least {CORRUPTED_COUNT} rows, got {}",
            base.len()
        )));
    }
    let mut y = base.y.clone();
    if standardize {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        y.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    let clean = y.clone();
    let mut r = rng(seed);
    let mut picked = rand::seq::index::sample(&mut r, y.len(), CORRUPTED_COUNT).into_vec();
    picked.sort_unstable();
    let noise = Normal::new(0.0, CORRUPTION_VARIANCE.sqrt()).expect("valid normal");
    for &i in &picked {
        // a zero draw would leave the row unchanged
        let mut e: f64 = noise.sample(&mut r);
        while e == 0.0 {
            e = noise.sample(&mut r);
        }
        y[i] += e;
    }
    let mut out = Dataset::new(base.x.clone(), y, None)?;
    out.meta.name = format!("{}_corrupt", if base.meta.name.is_empty() { "motorcycle" } else { &base.meta.name });
    out.meta.seed = Some(seed);
    out.meta.corrupted = Some(picked);
    out.meta.truth = Some(Truth {
        columns: vec![("y_clean".into(), clean)],
    });
    Ok(out)
}

/// Mean acceleration of the motorcycle stand-in at time t (ms).
pub fn motorcycle_mean(t: f64) -> f64 {
    let bump = |c: f64, w: f64| (-((t - c) / w).powi(2)).exp();
    -115.0 * bump(21.0, 4.0) + 50.0 * bump(31.0, 5.0) - 10.0 * bump(42.0, 6.0)
}

/// Noise standard deviation of the motorcycle stand-in at time t (ms).
pub fn motorcycle_sd(t: f64) -> f64 {
    2.0 + 35.0 * (-((t - 26.0) / 7.0).powi(2)).exp() + 8.0 / (1.0 + (-(t - 38.0) / 2.0).exp())
}

/// Synthetic substitute for the motorcycle benchmark: 133 sorted times on
/// [2.4, 57.6] ms, a flat-dip-rebound mean and strongly input-dependent noise
/// (quiet before impact, loud through it, moderate afterwards).
pub fn motorcycle_standin(seed: u64) -> Dataset {
    let n = 133;
    let mut r = rng(seed);
    let mut t: Vec<f64> = (0..n).map(|_| r.random_range(2.4..57.6)).collect();
    t.sort_by(f64::total_cmp);
    let y: Vec<f64> = t
        .iter()
        .map(|&ti| {
            let e: f64 = StandardNormal.sample(&mut r);
            motorcycle_mean(ti) + motorcycle_sd(ti) * e
        })
        .collect();
    let mut out = Dataset::new(DMatrix::from_column_slice(n, 1, &t), y, None).expect("consistent shapes");
    out.meta.name = "motorcycle_standin".into();
    out.meta.seed = Some(seed);
    out.meta.truth = Some(Truth {
        columns: vec![
            ("mean".into(), t.iter().map(|&v| motorcycle_mean(v)).collect()),
            ("sd".into(), t.iter().map(|&v| motorcycle_sd(v)).collect()),
        ],
    });
    out
}

/// Median time α(x) of the survival generator.
pub fn survival_alpha(x0: f64, x1: f64) -> f64 {
    (2.0 * (-30.0 * (x0 - 0.25).powi(2)).exp() + (std::f64::consts::PI * x1 * x1).sin() - 2.0).exp()
}

/// Shape β(x) of the survival generator.
pub fn survival_beta(x0: f64, x1: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    ((tau * x0).sin() + (tau * x1).cos()).exp()
}

/// Log-logistic failure times on x ~ U(0,1)², with a `censor_frac` share of
/// rows censored (δ = 1) at a time drawn uniformly on (0, t_true).
pub fn gen_survival_synthetic(n: usize, censor_frac: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", 0.0, "must be at least 1"));
    }
    if !(0.0..1.0).contains(&censor_frac) {
        return Err(Error::invalid("censor_frac", censor_frac, "must lie in [0, 1)"));
    }
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, 2, |_, _| r.random::<f64>());
    let alpha: Vec<f64> = (0..n).map(|i| survival_alpha(x[(i, 0)], x[(i, 1)])).collect();
    let beta: Vec<f64> = (0..n).map(|i| survival_beta(x[(i, 0)], x[(i, 1)])).collect();
    let t_true: Vec<f64> = (0..n)
        .map(|i| {
            let u: f64 = r.sample(Open01);
            alpha[i] * (u / (1.0 - u)).powf(1.0 / beta[i])
        })
        .collect();
    let n_censored = (censor_frac * n as f64).round() as usize;
    let mut censored = vec![false; n];
    for i in rand::seq::index::sample(&mut r, n, n_censored) {
        censored[i] = true;
    }
    let y: Vec<f64> = (0..n)
        .map(|i| {
            if censored[i] {
                let u: f64 = r.sample(Open01);
                u * t_true[i]
            } else {
                t_true[i]
            }
        })
        .collect();
    let mut out = Dataset::new(x, y, Some(censored))?;
    out.meta.name = "survival_synthetic".into();
    out.meta.seed = Some(seed);
    out.meta.truth = Some(Truth {
        columns: vec![
            ("alpha".into(), alpha),
            ("beta".into(), beta),
            ("t_true".into(), t_true),
        ],
    });
    Ok(out)
}

/// A function on [0, 1] given by values at evenly spaced anchors, linearly
/// interpolated (and held constant outside the grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.values.len();
        if k == 1 {
            return self.values[0];
        }
        let pos = (x.clamp(0.0, 1.0) * (k - 1) as f64).min((k - 1) as f64);
        let i = (pos.floor() as usize).min(k - 2);
        let w = pos - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    /// One draw from a GP with mean `mean` and RBF covariance
    /// (`variance`, `lengthscale`) at `anchors` points on [0, 1].
    pub fn sample_gp(mean: f64, variance: f64, lengthscale: f64, anchors: usize, seed: u64) -> Result<Self> {
        if anchors < 2 || !(variance > 0.0) || !(lengthscale > 0.0) {
            return Err(Error::invalid("gp sample", lengthscale, "needs ≥ 2 anchors and positive scales"));
        }
        let grid = unit_grid(anchors);
        let mut k = DMatrix::from_fn(anchors, anchors, |i, j| {
            variance * (-0.5 * ((grid[i] - grid[j]) / lengthscale).powi(2)).exp()
        });
        for i in 0..anchors {
            k[(i, i)] += 1e-8 * variance;
        }
        let l = k.cholesky().ok_or_else(|| Error::Cholesky("gp sample covariance".into()))?.l();
        let mut r = rng(seed);
        let e = DVector::from_fn(anchors, |_, _| StandardNormal.sample(&mut r));
        let v = l * e;
        Ok(Self {
            values: v.iter().map(|x| x + mean).collect(),
        })
    }
}

/// Default truth pair for the additive Poisson generator.
///
/// f: slow, mean 2, variance 0.5, lengthscale 0.3.
/// g: fast, mean 2, variance 0.5, lengthscale 0.05.
/// Both drawn on 400 anchors from seeds derived from `seed`. Equal levels
/// keep either component from being swamped by the other's counts.
pub fn default_poisson_truths(seed: u64) -> Result<(GridFunction, GridFunction)> {
    Ok((
        GridFunction::sample_gp(2.0, 0.5, 0.3, 400, seed)?,
        GridFunction::sample_gp(2.0, 0.5, 0.05, 400, seed.wrapping_add(1))?,
    ))
}

/// y ~ Poisson(e^f(x) + e^g(x)) on a uniform grid over [0, 1], with both
/// latents clamped at 20.
pub fn gen_additive_poisson(
    n: usize,
    f_truth: impl Fn(f64) -> f64,
    g_truth: impl Fn(f64) -> f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", 0.0, "must be at least 1"));
    }
    let x = unit_grid(n);
    let f: Vec<f64> = x.iter().map(|&v| f_truth(v).min(LATENT_CLAMP)).collect();
    let g: Vec<f64> = x.iter().map(|&v| g_truth(v).min(LATENT_CLAMP)).collect();
    if f.iter().chain(&g).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("Poisson truth function returned NaN".into()));
    }
    let lambda: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a.exp() + b.exp()).collect();
    let mut r = rng(seed);
    let y: Vec<f64> = lambda
        .iter()
        .map(|&l| {
            if l > 0.0 {
                Poisson::new(l).expect("positive finite rate").sample(&mut r)
            } else {
                0.0
            }
        })
        .collect();
    let mut out = Dataset::new(DMatrix::from_column_slice(n, 1, &x), y, None)?;
    out.meta.name = "additive_poisson".into();
    out.meta.seed = Some(seed);
    out.meta.truth = Some(Truth {
        columns: vec![("f".into(), f), ("g".into(), g), ("lambda".into(), lambda)],
    });
    Ok(out)
}

/// Default Beta truths: α(x) = exp(0.5 + sin 2πx), β(x) = exp(0.5 + cos 2πx).
pub fn default_beta_truths() -> (fn(f64) -> f64, fn(f64) -> f64) {
    fn a(x: f64) -> f64 {
        (0.5 + (2.0 * std::f64::consts::PI * x).sin()).exp()
    }
    fn b(x: f64) -> f64 {
        (0.5 + (2.0 * std::f64::consts::PI * x).cos()).exp()
    }
    (a, b)
}

/// y ~ Beta(α(x), β(x)) on a uniform grid over [0, 1], clamped to [ε, 1 − ε].
pub fn gen_beta_synthetic(
    n: usize,
    alpha_truth: impl Fn(f64) -> f64,
    beta_truth: impl Fn(f64) -> f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", 0.0, "must be at least 1"));
    }
    let x = unit_grid(n);
    let alpha: Vec<f64> = x.iter().map(|&v| alpha_truth(v)).collect();
    let beta: Vec<f64> = x.iter().map(|&v| beta_truth(v)).collect();
    let mut r = rng(seed);
    let mut y = Vec::with_capacity(n);
    for (a, b) in alpha.iter().zip(&beta) {
        let dist = Beta::new(*a, *b).map_err(|_| Error::invalid("beta truth", *a, "α and β must be positive"))?;
        let v: f64 = dist.sample(&mut r);
        y.push(v.clamp(BETA_EPS, 1.0 - BETA_EPS));
    }
    let mut out = Dataset::new(DMatrix::from_column_slice(n, 1, &x), y, None)?;
    out.meta.name = "beta_synthetic".into();
    out.meta.seed = Some(seed);
    out.meta.truth = Some(Truth {
        columns: vec![
            ("alpha".into(), alpha.clone()),
            ("beta".into(), beta.clone()),
            ("f".into(), alpha.iter().map(|v| v.ln()).collect()),
            ("g".into(), beta.iter().map(|v| v.ln()).collect()),
        ],
    });
    Ok(out)
}
