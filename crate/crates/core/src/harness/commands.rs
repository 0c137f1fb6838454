//! One function per command-line subcommand. Each returns the files it wrote.

use std::path::PathBuf;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::datagen;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Generator};
use crate::harness::cv::{fit_restarts, mae, nlpd, run_cv, CvSummary};
use crate::harness::io::{self, Checkpoint, CsvSchema};
use crate::init::{init_model, ModelInit};
use crate::likelihoods::{Likelihood, LikelihoodFamily};
use crate::quadrature::{bias_study, StudyPosition};

fn num(v: f64) -> String {
    format!("{v}")
}

/// Loads or generates the configured dataset, without input standardization.
pub fn load_raw_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.data;
    let seed = d.seed.unwrap_or(cfg.seed);
    let schema = CsvSchema {
        x_columns: d.x_columns.clone(),
        y_column: d.y_column.clone(),
        delta_column: d.delta_column.clone(),
        standardize_inputs: false,
    };
    let data = match (&d.path, d.generator) {
        (Some(path), _) => io::ingest_csv(path, &cfg.likelihood, &schema)?,
        (None, Some(Generator::SurvivalSynthetic)) => {
            datagen::gen_survival_synthetic(d.n.unwrap_or(1000), d.censor_frac, seed)?
        }
        (None, Some(Generator::AdditivePoisson)) => {
            let (f, g) = datagen::default_poisson_truths(seed)?;
            datagen::gen_additive_poisson(d.n.unwrap_or(350), |x| f.eval(x), |x| g.eval(x), seed)?
        }
        (None, Some(Generator::BetaSynthetic)) => {
            let (a, b) = datagen::default_beta_truths();
            datagen::gen_beta_synthetic(d.n.unwrap_or(500), a, b, seed)?
        }
        (None, Some(Generator::MotorcycleStandin)) => datagen::motorcycle_standin(seed),
        (None, Some(Generator::CorruptMotorcycle)) => {
            let base = match &d.base {
                Some(p) => io::ingest_csv(p, &LikelihoodFamily::HetGaussian, &schema)?.with_name("motorcycle"),
                None => datagen::motorcycle_standin(seed),
            };
            datagen::gen_corrupt_motorcycle(&base, seed, d.standardize_y)?
        }
        (None, None) => return Err(Error::Config("data: no source given".into())),
    };
    data.validate_for(&cfg.likelihood)?;
    Ok(data)
}

/// [`load_raw_dataset`] followed by the configured input standardization.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let mut data = load_raw_dataset(cfg)?;
    if cfg.data.standardize_inputs {
        io::standardize_inputs(&mut data)?;
    }
    Ok(data)
}

fn out(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

/// Plot grid in original units: an even grid over the data range for 1-D
/// inputs, the training inputs otherwise.
pub fn plot_grid(data: &Dataset, points: usize) -> DMatrix<f64> {
    let raw = io::raw_inputs(data);
    if raw.ncols() != 1 || raw.nrows() == 0 {
        return raw;
    }
    let (lo, hi) = (raw.min(), raw.max());
    let g = datagen::unit_grid(points);
    DMatrix::from_iterator(g.len(), 1, g.into_iter().map(|t| lo + t * (hi - lo)))
}

/// Fits on the full dataset; writes checkpoint, trace, metrics and plot data.
pub fn run_fit(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg)?;
    let outcome = fit_restarts(cfg, &data, cfg.seed)?;
    let ck = out(cfg, "checkpoint.json");
    Checkpoint::new(&outcome.model, data.meta.input_transform.clone()).save(&ck)?;
    let trace = out(cfg, "trace.csv");
    io::write_trace_csv(&outcome.trace, &trace)?;
    let metrics = out(cfg, "metrics.csv");
    io::write_table(
        &metrics,
        &["model", "dataset", "n", "restart", "train_elbo", "train_nlpd", "train_mae"].map(String::from),
        [vec![
            cfg.label(),
            data.meta.name.clone(),
            data.len().to_string(),
            outcome.restart.to_string(),
            num(outcome.train_elbo),
            num(nlpd(&outcome.model, &data)?),
            num(mae(&outcome.model, &data)?),
        ]],
    )?;
    let plot = out(cfg, "plot.csv");
    io::emit_plot_data(
        &outcome.model,
        &plot_grid(&data, cfg.predict.grid_points),
        data.meta.input_transform.as_ref(),
        &plot,
    )?;
    Ok(vec![ck, trace, metrics, plot])
}

/// Applies a saved model to the configured dataset.
pub fn run_predict(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ck_path = cfg
        .predict
        .checkpoint
        .clone()
        .unwrap_or_else(|| out(cfg, "checkpoint.json"));
    let ck = Checkpoint::load(&ck_path)?;
    let model = ck.model()?;
    let mut data = load_raw_dataset(cfg)?;
    let raw_x = data.x.clone();
    if let Some(s) = &ck.input_transform {
        data.x = s.apply(&data.x)?;
    }
    data.validate_for(&model.likelihood)?;
    let pred = model.predict(&data.x)?;
    let quant = model.predictive_quantiles(&data.x, &[0.05, 0.5, 0.95])?;
    let moments = model.predictive_moments(&data.x)?;
    let logp = model.log_predictive(&data)?;

    let q = raw_x.ncols();
    let mut header: Vec<String> = (0..q).map(|d| format!("x{d}")).collect();
    header.extend(
        ["y", "m_f", "v_f", "m_g", "v_g", "mean", "q05", "q50", "q95", "log_pred"].map(String::from),
    );
    let rows = (0..data.len()).map(|i| {
        let p = &pred[i];
        let mut r: Vec<String> = raw_x.row(i).iter().map(|&v| num(v)).collect();
        r.push(num(data.y[i]));
        r.extend([p.m_f, p.v_f, p.m_g, p.v_g].map(num));
        r.push(moments[i].mean.map(num).unwrap_or_else(|| "nan".into()));
        r.extend(quant[i].iter().map(|&v| num(v)));
        r.push(num(logp[i]));
        r
    });
    let preds = out(cfg, "predictions.csv");
    io::write_table(&preds, &header, rows)?;
    let metrics = out(cfg, "metrics.csv");
    io::write_table(
        &metrics,
        &["model", "dataset", "n", "nlpd", "mae"].map(String::from),
        [vec![
            cfg.label(),
            data.meta.name.clone(),
            data.len().to_string(),
            num(nlpd(&model, &data)?),
            num(mae(&model, &data)?),
        ]],
    )?;
    Ok(vec![preds, metrics])
}

pub fn write_cv(summary: &CvSummary, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let metrics = out(cfg, "metrics.csv");
    io::write_table(
        &metrics,
        &["model", "dataset", "folds", "nlpd_mean", "nlpd_sd", "mae_mean", "mae_sd", "nlpd_convention"]
            .map(String::from),
        [vec![
            summary.model.clone(),
            summary.dataset.clone(),
            summary.folds.len().to_string(),
            num(summary.nlpd_mean),
            num(summary.nlpd_sd),
            num(summary.mae_mean),
            num(summary.mae_sd),
            "mean_per_point".into(),
        ]],
    )?;
    let folds = out(cfg, "folds.csv");
    io::write_table(
        &folds,
        &["fold", "n_train", "n_test", "restart", "train_elbo", "nlpd", "mae"].map(String::from),
        summary.folds.iter().map(|f| {
            vec![
                f.fold.to_string(),
                f.n_train.to_string(),
                f.n_test.to_string(),
                f.restart.to_string(),
                num(f.train_elbo),
                num(f.nlpd),
                num(f.mae),
            ]
        }),
    )?;
    Ok(vec![metrics, folds])
}

pub fn run_cv_command(cfg: &ExperimentConfig) -> Result<(CvSummary, Vec<PathBuf>)> {
    let data = load_dataset(cfg)?;
    let summary = run_cv(cfg, &data)?;
    let files = write_cv(&summary, cfg)?;
    Ok((summary, files))
}

/// Writes the configured dataset (original units) and, if synthetic, its truth.
pub fn run_datagen(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let data = load_raw_dataset(cfg)?;
    let path = out(cfg, "data.csv");
    io::write_dataset_csv(&data, &path)?;
    let mut files = vec![path];
    let truth = out(cfg, "truth.csv");
    if io::write_truth_csv(&data, &truth)? {
        files.push(truth);
    }
    Ok(files)
}

pub fn run_quadcheck(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let q = &cfg.quadcheck;
    let rows = bias_study(&StudyPosition::defaults(), &q.orders, &q.samples, q.reruns, q.nu, cfg.seed)?;
    let path = out(cfg, "quadcheck.csv");
    io::write_quadcheck_csv(&rows, &path)?;
    Ok(vec![path])
}

/// Finite-difference check of every parameter block on the leading rows of
/// the dataset. Returns the written file and whether every block passed.
pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, bool)> {
    let data = load_dataset(cfg)?;
    let g = &cfg.gradcheck;
    let n = g.n.min(data.len());
    let small = data.subset(&(0..n).collect::<Vec<_>>());
    let init = ModelInit {
        m: g.m,
        seed: cfg.seed,
        kernels: cfg.kernels(),
        constant_g: cfg.model.constant_g,
        integrator: cfg.integrator()?,
        covariance: cfg.model.init_covariance,
    };
    let model = init_model(&small, cfg.likelihood.clone(), &init)?;
    let batch: Vec<usize> = (0..n).collect();
    let checks = model.gradcheck(&small, &batch, g.step)?;
    let mut passed = true;
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            let err = c.max_rel_error(1e-3);
            let ok = err < g.tolerance;
            passed &= ok;
            vec![c.block.label(), c.analytic.len().to_string(), num(err), ok.to_string()]
        })
        .collect();
    let path = out(cfg, "gradcheck.csv");
    io::write_table(&path, &["block", "size", "max_rel_error", "pass"].map(String::from), rows)?;
    log::info!("gradient check of {}: {}", model.likelihood.name(), if passed { "pass" } else { "FAIL" });
    Ok((vec![path], passed))
}
