//! Dataset ingestion, fit configuration, and run records.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distributions::{DistError, LabeledSample, MixtureSpec};
use crate::mixture::{FitResult, InitMode, IterationTrace, VbConfig, VbError};
use crate::vb_mnig::{self, ComponentHyperM};
use crate::vb_unig::{self, ComponentHyper};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("row {row}, column {column:?}: {value:?} is not a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("no numeric columns selected")]
    EmptySelection,
    #[error("no data rows")]
    NoRows,
    #[error("invalid config: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Row-major numeric matrix with optional string labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub data: Vec<f64>,
    pub labels: Option<Vec<String>>,
    pub fingerprint: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.data.len() / self.d().max(1)
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.d()).copied()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Reads a headered CSV. Without `columns`, every column except
/// `label_column` is used. Row numbers in errors count data rows from 1.
pub fn ingest_csv(
    path: &Path,
    columns: Option<&[String]>,
    label_column: Option<&str>,
) -> Result<Dataset, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::MissingColumn(name.into()))
    };
    let label_idx = label_column.map(find).transpose()?;
    let selected: Vec<usize> = match columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
        None => (0..header.len())
            .filter(|&j| Some(j) != label_idx)
            .collect(),
    };
    if selected.is_empty() {
        return Err(IoError::EmptySelection);
    }
    let mut data = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        for &j in &selected {
            let cell = record.get(j).unwrap_or("");
            let value: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| IoError::NonNumeric {
                    row: row + 1,
                    column: header[j].clone(),
                    value: cell.into(),
                })?;
            data.push(value);
        }
        if let (Some(labels), Some(j)) = (labels.as_mut(), label_idx) {
            labels.push(record.get(j).unwrap_or("").to_string());
        }
    }
    if data.is_empty() {
        return Err(IoError::NoRows);
    }
    Ok(Dataset {
        columns: selected.iter().map(|&j| header[j].clone()).collect(),
        data,
        labels,
        fingerprint: sha256_hex(&bytes),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Unig,
    #[default]
    Mnig,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unig" => Ok(ModelKind::Unig),
            "mnig" => Ok(ModelKind::Mnig),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

/// Flat fit configuration; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelKind,
    pub g_init: usize,
    pub init_mode: InitMode,
    pub hyper_init: f64,
    pub prune_threshold: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub columns: Option<Vec<String>>,
    pub label_column: Option<String>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let vb = VbConfig::default();
        Self {
            model: ModelKind::default(),
            g_init: vb.g_init,
            init_mode: vb.init_mode,
            hyper_init: vb.hyper_init,
            prune_threshold: vb.prune_threshold,
            tol: vb.tol,
            max_iter: vb.max_iter,
            seed: vb.seed,
            columns: None,
            label_column: None,
        }
    }
}

impl FitConfig {
    pub fn vb(&self) -> VbConfig {
        VbConfig {
            g_init: self.g_init,
            init_mode: self.init_mode,
            hyper_init: self.hyper_init,
            prune_threshold: self.prune_threshold,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// A fitted model of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "fit", rename_all = "snake_case")]
pub enum FittedModel {
    Unig(FitResult<ComponentHyper>),
    Mnig(FitResult<ComponentHyperM>),
}

impl FittedModel {
    pub fn n_components(&self) -> usize {
        match self {
            FittedModel::Unig(r) => r.n_components(),
            FittedModel::Mnig(r) => r.n_components(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        match self {
            FittedModel::Unig(r) => &r.labels,
            FittedModel::Mnig(r) => &r.labels,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            FittedModel::Unig(r) => r.iterations,
            FittedModel::Mnig(r) => r.iterations,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            FittedModel::Unig(r) => r.converged,
            FittedModel::Mnig(r) => r.converged,
        }
    }

    pub fn trace(&self) -> &[IterationTrace] {
        match self {
            FittedModel::Unig(r) => &r.trace,
            FittedModel::Mnig(r) => &r.trace,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FittedModel::Unig(_) => 1,
            FittedModel::Mnig(r) => r.hypers.first().map_or(0, ComponentHyperM::dim),
        }
    }

    /// Plug-in mixture density at each row of `points` (row-major).
    pub fn density(&self, points: &[f64]) -> Result<Vec<f64>, VbError> {
        match self {
            FittedModel::Unig(r) => vb_unig::fitted_density(r, points),
            FittedModel::Mnig(r) => vb_mnig::fitted_density_m(r, points),
        }
    }
}

pub fn fit_dataset(config: &FitConfig, data: &Dataset) -> Result<FittedModel, VbError> {
    let vb = config.vb();
    match config.model {
        ModelKind::Unig => {
            if data.d() != 1 {
                return Err(VbError::Shape {
                    expected: 1,
                    found: data.d(),
                });
            }
            vb_unig::fit(&data.data, &vb).map(FittedModel::Unig)
        }
        ModelKind::Mnig => vb_mnig::fit_m(&data.data, data.d(), &vb).map(FittedModel::Mnig),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: String,
    pub sha256: String,
    pub n: usize,
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl DatasetInfo {
    pub fn describe(path: &Path, data: &Dataset) -> Self {
        let (min, max) = (0..data.d())
            .map(|j| {
                data.column(j)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .unzip();
        Self {
            path: path.display().to_string(),
            sha256: data.fingerprint.clone(),
            n: data.n(),
            columns: data.columns.clone(),
            min,
            max,
        }
    }
}

/// Wall-clock milliseconds per phase. Excluded from the payload hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub ingest_ms: f64,
    pub fit_ms: f64,
}

/// The deterministic part of a run: identical inputs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPayload {
    pub config: FitConfig,
    pub dataset: DatasetInfo,
    pub result: FittedModel,
}

impl RunPayload {
    pub fn sha256(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("payload serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub payload: RunPayload,
    pub payload_sha256: String,
    pub timings: Timings,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let json = serde_json::to_string_pretty(self).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, json + "\n").map_err(io_err(path))
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Fit(#[from] VbError),
}

/// Ingests `input` per `config` and fits it.
pub fn run_fit(config: &FitConfig, input: &Path) -> Result<(RunRecord, Dataset), RunError> {
    let start = Instant::now();
    let data = ingest_csv(
        input,
        config.columns.as_deref(),
        config.label_column.as_deref(),
    )?;
    let ingest_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let result = fit_dataset(config, &data)?;
    let fit_ms = start.elapsed().as_secs_f64() * 1e3;
    let payload = RunPayload {
        config: config.clone(),
        dataset: DatasetInfo::describe(input, &data),
        result,
    };
    let payload_sha256 = payload.sha256();
    Ok((
        RunRecord {
            payload,
            payload_sha256,
            timings: Timings { ingest_ms, fit_ms },
        },
        data,
    ))
}

pub fn write_labels_csv(path: &Path, header: &str, labels: &[usize]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record([header]).map_err(csv_err(path))?;
    for l in labels {
        w.write_record([l.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads one column of labels (the first unless `column` is given) as strings.
pub fn read_labels(path: &Path, column: Option<&str>) -> Result<Vec<String>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    let j = match column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::MissingColumn(name.into()))?,
        None => 0,
    };
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.get(j).unwrap_or("").to_string())
                .map_err(csv_err(path))
        })
        .collect()
}

/// Writes a simulated sample as CSV (`y1..yd,label`) with a JSON sidecar
/// `<path>.json` holding the mixture spec, n, and seed.
pub fn write_sample(
    path: &Path,
    sample: &LabeledSample,
    spec: &MixtureSpec,
    seed: u64,
) -> Result<(), IoError> {
    let d = sample.dim();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header: Vec<String> = (1..=d).map(|j| format!("y{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err(path))?;
    for (row, label) in sample.observations.iter().zip(&sample.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    let sidecar = sidecar_path(path);
    let meta = serde_json::json!({ "spec": spec, "n": sample.labels.len(), "seed": seed });
    let text = serde_json::to_string_pretty(&meta).map_err(|source| IoError::Json {
        path: sidecar.clone(),
        source,
    })?;
    fs::write(&sidecar, text + "\n").map_err(io_err(&sidecar))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn load_spec(path: &Path) -> Result<MixtureSpec, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let spec: MixtureSpec = serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    spec.validate()
        .map_err(|e: DistError| IoError::Config(e.to_string()))?;
    Ok(spec)
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_uses_defaults() {
        let cfg: FitConfig = serde_json::from_str(r#"{"model":"unig","g_init":5}"#).unwrap();
        assert_eq!(cfg.model, ModelKind::Unig);
        assert_eq!(cfg.g_init, 5);
        assert_eq!(cfg.hyper_init, 1e-8);
        assert_eq!(cfg.prune_threshold, 1.0);
        assert_eq!(cfg.tol, 1e-6);
        assert_eq!(cfg.max_iter, 500);
        assert!(serde_json::from_str::<FitConfig>(r#"{"gInit":5}"#).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(2.0, 5.0, 1), vec![2.0]);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
