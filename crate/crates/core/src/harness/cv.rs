//! Restarts, cross-validation and held-out metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{fit, TraceRow};
use crate::harness::config::ExperimentConfig;
use crate::init::{init_model, ModelInit};
use crate::likelihoods::Likelihood;
use crate::model::ChainedModel;

/// Mixes `parts` into `base` (splitmix64 steps) so every fold and restart
/// owns an independent, reproducible seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Shuffled partition of 0..n into `folds` test sets of near-equal size,
/// each sorted.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Data(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, i) in order.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

/// Mean negative log predictive density per test point.
pub fn nlpd(model: &ChainedModel, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data("NLPD of an empty test set".into()));
    }
    let lp = model.log_predictive(test)?;
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Mean absolute error against the predictive median for survival data and
/// the predictive mean otherwise (the median also stands in when the mean
/// does not exist).
pub fn mae(model: &ChainedModel, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data("MAE of an empty test set".into()));
    }
    let use_median = model.likelihood.uses_censoring();
    let moments = if use_median { None } else { Some(model.predictive_moments(&test.x)?) };
    let mut total = 0.0;
    let mut medians = None;
    for i in 0..test.len() {
        let point = match moments.as_ref().and_then(|m| m[i].mean) {
            Some(mean) => mean,
            None => {
                let med = match &medians {
                    Some(m) => m,
                    None => medians.insert(model.predictive_quantiles(&test.x, &[0.5])?),
                };
                med[i][0]
            }
        };
        total += (test.y[i] - point).abs();
    }
    Ok(total / test.len() as f64)
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ChainedModel,
    pub trace: Vec<TraceRow>,
    /// Full-data bound on the training set after fitting.
    pub train_elbo: f64,
    pub restart: usize,
}

/// Fits `cfg.cv.restarts` independently initialized models and keeps the
/// one with the highest training bound (earliest restart on ties).
pub fn fit_restarts(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<FitOutcome> {
    let integrator = cfg.integrator()?;
    let outcomes: Vec<Result<FitOutcome>> = (0..cfg.cv.restarts)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<FitOutcome> {
                let init = ModelInit {
                    m: cfg.model.m,
                    seed: derive_seed(seed, &[r as u64, 0]),
                    kernels: cfg.kernels(),
                    constant_g: cfg.model.constant_g,
                    integrator: integrator.clone(),
                    covariance: cfg.model.init_covariance,
                };
                let mut model = init_model(train, cfg.likelihood.clone(), &init)?;
                let mut tc = cfg.train.clone();
                tc.seed = derive_seed(seed, &[r as u64, 1]);
                let trace = fit(&mut model, train, &tc)?;
                let train_elbo = model.full_elbo(train)?;
                Ok(FitOutcome {
                    model,
                    trace,
                    train_elbo,
                    restart: r,
                })
            };
            run().map_err(|e| e.labeled(format!("restart {r}")))
        })
        .collect();
    let mut best: Option<FitOutcome> = None;
    for o in outcomes {
        let o = o?;
        log::debug!("restart {} training elbo {}", o.restart, o.train_elbo);
        if best.as_ref().is_none_or(|b| o.train_elbo > b.train_elbo) {
            best = Some(o);
        }
    }
    best.ok_or_else(|| Error::Config("no restarts requested".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub restart: usize,
    pub train_elbo: f64,
    pub nlpd: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSummary {
    pub model: String,
    pub dataset: String,
    pub folds: Vec<FoldResult>,
    pub nlpd_mean: f64,
    /// Sample standard deviation across folds.
    pub nlpd_sd: f64,
    pub mae_mean: f64,
    pub mae_sd: f64,
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// k-fold cross-validation of the configured model on `data`.
pub fn run_cv(cfg: &ExperimentConfig, data: &Dataset) -> Result<CvSummary> {
    let parts = fold_partition(data.len(), cfg.cv.folds, derive_seed(cfg.seed, &[0xf01d]))?;
    let folds: Vec<Result<FoldResult>> = parts
        .par_iter()
        .enumerate()
        .map(|(k, test_idx)| {
            let run = || -> Result<FoldResult> {
                let mut in_test = vec![false; data.len()];
                test_idx.iter().for_each(|&i| in_test[i] = true);
                let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_test[i]).collect();
                let (train, test) = (data.subset(&train_idx), data.subset(test_idx));
                let out = fit_restarts(cfg, &train, derive_seed(cfg.seed, &[k as u64 + 1]))?;
                let fold = FoldResult {
                    fold: k,
                    n_train: train.len(),
                    n_test: test.len(),
                    restart: out.restart,
                    train_elbo: out.train_elbo,
                    nlpd: nlpd(&out.model, &test)?,
                    mae: mae(&out.model, &test)?,
                };
                log::info!("fold {k}: nlpd {:.4} mae {:.4}", fold.nlpd, fold.mae);
                Ok(fold)
            };
            run().map_err(|e| e.labeled(format!("fold {k}")))
        })
        .collect();
    let folds: Vec<FoldResult> = folds.into_iter().collect::<Result<_>>()?;
    let (nlpd_mean, nlpd_sd) = mean_sd(&folds.iter().map(|f| f.nlpd).collect::<Vec<_>>());
    let (mae_mean, mae_sd) = mean_sd(&folds.iter().map(|f| f.mae).collect::<Vec<_>>());
    Ok(CvSummary {
        model: cfg.label(),
        dataset: data.meta.name.clone(),
        folds,
        nlpd_mean,
        nlpd_sd,
        mae_mean,
        mae_sd,
    })
}
