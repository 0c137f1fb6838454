//! CSV ingestion and every file the harness writes.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::fit::TraceRow;
use crate::likelihoods::{Likelihood, LikelihoodFamily};
use crate::model::ChainedModel;
use crate::quadrature::{Integrator, McRule, StudyRow};
use crate::svgp::LatentGP;

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    /// Input columns; `None` takes every column other than y and delta.
    pub x_columns: Option<Vec<String>>,
    pub y_column: String,
    pub delta_column: String,
    pub standardize_inputs: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            x_columns: None,
            y_column: "y".into(),
            delta_column: "delta".into(),
            standardize_inputs: true,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Reads a dataset for `family`. Row numbers in errors count data rows from 0.
pub fn ingest_csv(path: &Path, family: &LikelihoodFamily, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let y_col = find(&schema.y_column)
        .ok_or_else(|| Error::Data(format!("{}: missing column `{}`", path.display(), schema.y_column)))?;
    let delta_col = find(&schema.delta_column);
    if delta_col.is_some() && !family.uses_censoring() {
        return Err(Error::Data(format!(
            "{}: column `{}` is only accepted with a survival likelihood, not {}",
            path.display(),
            schema.delta_column,
            family.name()
        )));
    }
    let x_cols: Vec<usize> = match &schema.x_columns {
        Some(names) => names
            .iter()
            .map(|n| find(n).ok_or_else(|| Error::Data(format!("{}: missing column `{n}`", path.display()))))
            .collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&c| c != y_col && Some(c) != delta_col).collect(),
    };
    if x_cols.is_empty() {
        return Err(Error::Data(format!("{}: no input columns", path.display())));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut deltas = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(path, e))?;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Data(format!(
                    "{}: row {row}, column `{}`: cannot parse `{raw}` as a finite number",
                    path.display(),
                    header[c]
                ))
            })
        };
        for &c in &x_cols {
            xs.push(cell(c)?);
        }
        ys.push(cell(y_col)?);
        if let Some(c) = delta_col {
            let d = cell(c)?;
            if d != 0.0 && d != 1.0 {
                return Err(Error::Data(format!(
                    "{}: row {row}, column `{}`: censoring flag must be 0 or 1, got {d}",
                    path.display(),
                    header[c]
                )));
            }
            deltas.push(d == 1.0);
        }
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, x_cols.len(), &xs);
    let censored = if family.uses_censoring() {
        Some(if delta_col.is_some() { deltas } else { vec![false; n] })
    } else {
        None
    };
    let mut data = Dataset::new(x, ys, censored)?;
    data.meta.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data.validate_for(family)?;
    if schema.standardize_inputs {
        standardize_inputs(&mut data)?;
    }
    Ok(data)
}

/// Standardizes the inputs in place and records the transform.
pub fn standardize_inputs(data: &mut Dataset) -> Result<()> {
    let s = Standardizer::fit(&data.x);
    data.x = s.apply(&data.x)?;
    data.meta.input_transform = Some(s);
    Ok(())
}

/// Inputs in original units.
pub fn raw_inputs(data: &Dataset) -> DMatrix<f64> {
    match &data.meta.input_transform {
        Some(s) => s.invert(&data.x),
        None => data.x.clone(),
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes a header and rows of already-formatted cells.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn x_header(q: usize) -> Vec<String> {
    (0..q).map(|d| format!("x{d}")).collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Columns x0..x{q−1}, y and, for survival data, delta. Inputs are written
/// in original units.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let x = raw_inputs(data);
    let mut header = x_header(x.ncols());
    header.push("y".into());
    if data.censored.is_some() {
        header.push("delta".into());
    }
    let rows = (0..data.len()).map(|i| {
        let mut r: Vec<String> = x.row(i).iter().map(|&v| num(v)).collect();
        r.push(num(data.y[i]));
        if data.censored.is_some() {
            r.push(if data.is_censored(i) { "1" } else { "0" }.into());
        }
        r
    });
    write_table(path, &header, rows)
}

/// Inputs plus every truth column. Does nothing when the dataset has no truth.
pub fn write_truth_csv(data: &Dataset, path: &Path) -> Result<bool> {
    let Some(truth) = &data.meta.truth else {
        return Ok(false);
    };
    let x = raw_inputs(data);
    let mut header = x_header(x.ncols());
    header.extend(truth.columns.iter().map(|(n, _)| n.clone()));
    let rows = (0..data.len()).map(|i| {
        let mut r: Vec<String> = x.row(i).iter().map(|&v| num(v)).collect();
        r.extend(truth.columns.iter().map(|(_, v)| num(v[i])));
        r
    });
    write_table(path, &header, rows)?;
    Ok(true)
}

pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let header = ["iteration", "elbo", "phase"].map(String::from);
    write_table(
        path,
        &header,
        trace
            .iter()
            .map(|t| vec![t.iteration.to_string(), num(t.elbo), t.phase.to_string()]),
    )
}

pub fn write_quadcheck_csv(rows: &[StudyRow], path: &Path) -> Result<()> {
    let header = ["position_label", "method", "order_or_samples", "abs_error"].map(String::from);
    write_table(
        path,
        &header,
        rows.iter().map(|r| {
            vec![
                r.position.clone(),
                r.method.label().to_string(),
                r.order_or_samples.to_string(),
                num(r.abs_error()),
            ]
        }),
    )
}

/// Latent marginals and 5/50/95% predictive quantiles at every grid row.
/// `grid` is in original input units; `transform` maps it to model inputs.
pub fn emit_plot_data(
    model: &ChainedModel,
    grid: &DMatrix<f64>,
    transform: Option<&Standardizer>,
    path: &Path,
) -> Result<()> {
    let q = model.input_dim();
    if grid.ncols() != q && grid.nrows() > 0 {
        return Err(Error::Dimension(format!(
            "plot grid has {} columns, model expects {q}",
            grid.ncols()
        )));
    }
    let mut header = x_header(q);
    header.extend(["m_f", "v_f", "m_g", "v_g", "q05", "q50", "q95"].map(String::from));
    if grid.nrows() == 0 {
        return write_table(path, &header, std::iter::empty());
    }
    let x = match transform {
        Some(s) => s.apply(grid)?,
        None => grid.clone(),
    };
    let pred = model.predict(&x)?;
    let quant = model.predictive_quantiles(&x, &[0.05, 0.5, 0.95])?;
    let rows = (0..grid.nrows()).map(|i| {
        let p = &pred[i];
        let mut r: Vec<String> = grid.row(i).iter().map(|&v| num(v)).collect();
        r.extend([p.m_f, p.v_f, p.m_g, p.v_g].map(num));
        r.extend(quant[i].iter().map(|&v| num(v)));
        r
    });
    write_table(path, &header, rows)
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum IntegratorSpec {
    GaussHermite { order: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl IntegratorSpec {
    pub fn of(integrator: &Integrator) -> Self {
        match integrator {
            Integrator::GaussHermite { rule, .. } => IntegratorSpec::GaussHermite { order: rule.order() },
            Integrator::MonteCarlo(mc) => IntegratorSpec::MonteCarlo {
                samples: mc.samples,
                seed: mc.seed,
            },
        }
    }

    pub fn build(&self) -> Result<Integrator> {
        match *self {
            IntegratorSpec::GaussHermite { order } => Integrator::gauss_hermite(order),
            IntegratorSpec::MonteCarlo { samples, seed } => Ok(Integrator::monte_carlo(McRule::new(samples, seed)?)),
        }
    }
}

/// Everything needed to rebuild a fitted model, including the input
/// standardization used during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub likelihood: LikelihoodFamily,
    pub latents: Vec<LatentGP>,
    pub z: DMatrix<f64>,
    pub integrator: IntegratorSpec,
    pub input_transform: Option<Standardizer>,
}

impl Checkpoint {
    pub fn new(model: &ChainedModel, input_transform: Option<Standardizer>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            likelihood: model.likelihood.clone(),
            latents: model.latents.clone(),
            z: model.z.clone(),
            integrator: IntegratorSpec::of(&model.integrator),
            input_transform,
        }
    }

    pub fn model(&self) -> Result<ChainedModel> {
        ChainedModel::new(
            self.latents.clone(),
            self.z.clone(),
            self.likelihood.clone(),
            self.integrator.build()?,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
        let mut f = create(path)?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            other => {
                return Err(Error::Data(format!(
                    "{}: unsupported checkpoint version {other:?}",
                    path.display()
                )))
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}
