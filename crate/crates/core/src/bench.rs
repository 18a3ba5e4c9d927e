//! Benchmark harness.
//!
//! A case generates one chronological scenario, trains the requested
//! surrogates on the leading hours and scores them against the nonlinear
//! power flow on the hours that follow. Results can be written to a case
//! directory with this layout:
//!
//! ```text
//! manifest.json          case settings and content hashes
//! feeder.txt             the feeder the case ran on
//! reports.csv            error metrics, byte-identical across reruns
//! timings.csv            wall-clock times, kept apart from the metrics
//! predictions/truth.csv  oracle voltage magnitudes on the test hours
//! predictions/<M>.csv    predictions of model M
//! plots/                 written by [`emit_plot_data`]
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{emit_feeder, load_feeder, Feeder, FeederError, Phase};
use crate::gp::{GpConfig, GpError, GpModel};
use crate::lindistflow::{ldf_voltage_mag, solve_ldf, LdfError};
use crate::metrics::{compute_errors, ErrorReport, MetricsError};
use crate::mlp::{train_mlp, MlpConfig, MlpError};
use crate::powerflow::NetLoadVector;
use crate::scalar::Scalar;
use crate::scenario::{
    self, generate_dataset, split_cases, Dataset, ScenarioConfig, ScenarioError, CASE_TRAIN_HOURS,
};

pub const CASE_FORMAT_VERSION: u32 = 1;

/// Note attached to LinDistFlow timings, which involve no fitting.
pub const LDF_TIMING_NOTE: &str = "train_seconds is the cumulative LinDistFlow solve time over the training hours";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown model `{0}` (expected LDF, DNN or GP)")]
    UnknownModel(String),
    #[error("unknown plot kind `{0}` (expected voltage-profile-snapshot, per-bus-mae or time-series-3phase)")]
    UnknownPlot(String),
    #[error("invalid case: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Artifact { path: String, message: String },
    #[error("LinDistFlow on row {row}: {source}")]
    Ldf {
        row: usize,
        #[source]
        source: LdfError,
    },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::UnknownModel(_) | BenchError::UnknownPlot(_) | BenchError::Config(_) => "invalid-argument",
            BenchError::Artifact { .. } => "artifact",
            BenchError::Ldf { .. } => "lindistflow",
            BenchError::Gp(_) => "gp",
            BenchError::Mlp(_) => "mlp",
            BenchError::Scenario(ScenarioError::PowerFlow { .. }) => "power-flow",
            BenchError::Scenario(_) => "scenario",
            BenchError::Metrics(_) => "metrics",
            BenchError::Feeder(_) => "feeder",
            BenchError::Io(_) | BenchError::Csv(_) | BenchError::Json(_) => "io",
        }
    }
}

fn artifact(path: &Path, message: impl Into<String>) -> BenchError {
    BenchError::Artifact {
        path: path.display().to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LDF")]
    Ldf,
    #[serde(rename = "DNN")]
    Dnn,
    #[serde(rename = "GP")]
    Gp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ldf, ModelKind::Dnn, ModelKind::Gp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ldf => "LDF",
            ModelKind::Dnn => "DNN",
            ModelKind::Gp => "GP",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| BenchError::UnknownModel(s.trim().to_string()))
    }
}

/// Parses a comma-separated model list, dropping repeats.
pub fn parse_models(list: &str) -> Result<Vec<ModelKind>, BenchError> {
    let mut out = Vec::new();
    for item in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m: ModelKind = item.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(BenchError::Config("no models requested".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig<T> {
    pub case_id: String,
    pub train_hours: usize,
    pub test_hours: usize,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    /// Scenario settings; `hours` and `seed` are overwritten by the case.
    pub scenario: ScenarioConfig,
    pub gp: GpConfig<T>,
    pub mlp: MlpConfig<T>,
}

impl<T: Scalar> CaseConfig<T> {
    /// One of the four standard cases (1, 7, 30 or 90 training days), tested on 144 hours.
    pub fn standard(case: usize, seed: u64) -> Result<Self, BenchError> {
        let train = case
            .checked_sub(1)
            .and_then(|i| CASE_TRAIN_HOURS.get(i))
            .ok_or_else(|| BenchError::Config(format!("case must be 1, 2, 3 or 4, got {case}")))?;
        Ok(Self::with_id(format!("case{case}"), *train, seed))
    }

    pub fn custom(train_hours: usize, seed: u64) -> Self {
        Self::with_id(format!("train{train_hours}"), train_hours, seed)
    }

    fn with_id(case_id: String, train_hours: usize, seed: u64) -> Self {
        CaseConfig {
            case_id,
            train_hours,
            test_hours: 144,
            models: ModelKind::ALL.to_vec(),
            seed,
            scenario: ScenarioConfig::new(0, seed),
            gp: GpConfig {
                seed,
                ..GpConfig::default()
            },
            mlp: MlpConfig {
                seed,
                ..MlpConfig::default()
            },
        }
    }

    fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            hours: self.train_hours + self.test_hours,
            seed: self.seed,
            ..self.scenario.clone()
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.train_hours == 0 || self.test_hours == 0 {
            return Err(BenchError::Config("train and test windows must be non-empty".into()));
        }
        if self.models.is_empty() {
            return Err(BenchError::Config("no models requested".into()));
        }
        if self.models.contains(&ModelKind::Gp) && self.train_hours < 2 {
            return Err(BenchError::Config("the GP needs at least 2 training hours".into()));
        }
        Ok(())
    }
}

/// Predictions and scores of one trained model.
#[derive(Clone, Debug)]
pub struct ModelRun<T> {
    pub model: ModelKind,
    pub predictions: Array2<T>,
    pub errors: ErrorReport,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub model: ModelKind,
    pub train_size: usize,
    pub test_size: usize,
    pub errors: ErrorReport,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub seed: u64,
    pub feeder_hash: String,
    pub train_hash: String,
    pub test_hash: String,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CaseOutcome<T> {
    pub config: CaseConfig<T>,
    pub feeder_hash: String,
    pub train: Dataset<T>,
    pub test: Dataset<T>,
    pub runs: Vec<ModelRun<T>>,
}

impl<T: Scalar> CaseOutcome<T> {
    pub fn run(&self, model: ModelKind) -> Option<&ModelRun<T>> {
        self.runs.iter().find(|r| r.model == model)
    }

    pub fn reports(&self) -> Vec<CaseReport> {
        let (train_hash, test_hash) = (self.train.content_hash(), self.test.content_hash());
        self.runs
            .iter()
            .map(|r| CaseReport {
                case_id: self.config.case_id.clone(),
                model: r.model,
                train_size: self.train.len(),
                test_size: self.test.len(),
                errors: r.errors.clone(),
                train_seconds: r.train_seconds,
                predict_seconds: r.predict_seconds,
                seed: self.config.seed,
                feeder_hash: self.feeder_hash.clone(),
                train_hash: train_hash.clone(),
                test_hash: test_hash.clone(),
                notes: r.notes.clone(),
            })
            .collect()
    }
}

/// LinDistFlow voltage magnitudes for every row of `inputs`.
pub fn ldf_predict<T: Scalar>(feeder: &Feeder<T>, inputs: ArrayView2<T>) -> Result<Array2<T>, BenchError> {
    let d = feeder.dim();
    if inputs.ncols() != 2 * d {
        return Err(BenchError::Config(format!(
            "inputs have {} columns, the feeder needs {}",
            inputs.ncols(),
            2 * d
        )));
    }
    let rows: Vec<Vec<T>> = (0..inputs.nrows())
        .into_par_iter()
        .map(|i| {
            let load = NetLoadVector::new(inputs.row(i).to_vec(), d).expect("checked width");
            solve_ldf(feeder, &load)
                .and_then(|sol| ldf_voltage_mag(&sol))
                .map_err(|source| BenchError::Ldf { row: i, source })
        })
        .collect::<Result<_, _>>()?;
    let mut out = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&ArrayView1::from(&r[..]));
    }
    Ok(out)
}

/// Trains and scores each model in turn on one train/test split.
pub fn run_models<T: Scalar>(
    feeder: &Feeder<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    models: &[ModelKind],
    gp: &GpConfig<T>,
    mlp: &MlpConfig<T>,
) -> Result<Vec<ModelRun<T>>, BenchError> {
    let mut runs = Vec::with_capacity(models.len());
    for &model in models {
        let mut notes = Vec::new();
        let t0 = Instant::now();
        let (predictions, train_seconds, predict_seconds) = match model {
            ModelKind::Ldf => {
                ldf_predict(feeder, train.inputs.view())?;
                let fit = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let p = ldf_predict(feeder, test.inputs.view())?;
                notes.push(LDF_TIMING_NOTE.to_string());
                (p, fit, t1.elapsed().as_secs_f64())
            }
            ModelKind::Dnn => {
                let net = train_mlp(train.inputs.view(), train.targets.view(), mlp)?;
                let fit = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                (net.predict(test.inputs.view())?, fit, t1.elapsed().as_secs_f64())
            }
            ModelKind::Gp => {
                let gp = GpModel::fit(train.inputs.view(), train.targets.view(), gp)?;
                let fit = t0.elapsed().as_secs_f64();
                notes.extend(gp.diagnostics().warnings.iter().cloned());
                let t1 = Instant::now();
                (gp.predict_mean(test.inputs.view())?, fit, t1.elapsed().as_secs_f64())
            }
        };
        let errors = compute_errors(predictions.view(), test.targets.view())?;
        log::info!(
            "{model}: mae {:.3e} max {:.3e} (train {train_seconds:.2}s, predict {predict_seconds:.3}s)",
            errors.mae,
            errors.max_abs_error
        );
        runs.push(ModelRun {
            model,
            predictions,
            errors,
            train_seconds,
            predict_seconds,
            notes,
        });
    }
    Ok(runs)
}

/// Generates the scenario for a case, splits it chronologically and runs every requested model.
pub fn run_case<T: Scalar>(feeder: &Feeder<T>, config: &CaseConfig<T>) -> Result<CaseOutcome<T>, BenchError> {
    config.validate()?;
    let data = generate_dataset(feeder, &config.scenario_config())?;
    let (train, test) = split_cases(&data, config.train_hours, config.test_hours)?;
    let runs = run_models(feeder, &train, &test, &config.models, &config.gp, &config.mlp)?;
    Ok(CaseOutcome {
        config: config.clone(),
        feeder_hash: feeder.content_hash(),
        train,
        test,
        runs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub format_version: u32,
    pub case_id: String,
    pub models: Vec<ModelKind>,
    pub train_hours: usize,
    pub test_hours: usize,
    pub seed: u64,
    pub feeder_hash: String,
    pub train_hash: String,
    pub test_hash: String,
    pub nodes: Vec<String>,
    /// Absolute hour index of every test row.
    pub test_hour_index: Vec<usize>,
    pub scenario: ScenarioConfig,
    pub gp: serde_json::Value,
    pub mlp: serde_json::Value,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn reports_csv(reports: &[CaseReport]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "case_id",
        "model",
        "train_size",
        "test_size",
        "mae",
        "mse",
        "rmse",
        "max_abs_error",
        "min_abs_error",
        "unit",
        "seed",
        "feeder_hash",
        "train_hash",
        "test_hash",
    ])?;
    for r in reports {
        w.write_record([
            r.case_id.clone(),
            r.model.to_string(),
            r.train_size.to_string(),
            r.test_size.to_string(),
            fmt_f64(r.errors.mae),
            fmt_f64(r.errors.mse),
            fmt_f64(r.errors.rmse()),
            fmt_f64(r.errors.max_abs_error),
            fmt_f64(r.errors.min_abs_error),
            r.errors.unit.clone(),
            r.seed.to_string(),
            r.feeder_hash.clone(),
            r.train_hash.clone(),
            r.test_hash.clone(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn timings_csv(reports: &[CaseReport]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case_id", "model", "train_seconds", "predict_seconds", "notes"])?;
    for r in reports {
        w.write_record([
            r.case_id.clone(),
            r.model.to_string(),
            format!("{:.6}", r.train_seconds),
            format!("{:.6}", r.predict_seconds),
            r.notes.join("; "),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), BenchError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes a case directory (see the module docs for the layout).
pub fn write_case<T: Scalar>(dir: impl AsRef<Path>, feeder: &Feeder<T>, outcome: &CaseOutcome<T>) -> Result<(), BenchError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("predictions"))?;
    fs::create_dir_all(dir.join("plots"))?;
    let reports = outcome.reports();
    let cfg = &outcome.config;
    let manifest = CaseManifest {
        format_version: CASE_FORMAT_VERSION,
        case_id: cfg.case_id.clone(),
        models: outcome.runs.iter().map(|r| r.model).collect(),
        train_hours: outcome.train.len(),
        test_hours: outcome.test.len(),
        seed: cfg.seed,
        feeder_hash: outcome.feeder_hash.clone(),
        train_hash: outcome.train.content_hash(),
        test_hash: outcome.test.content_hash(),
        nodes: outcome.test.nodes.clone(),
        test_hour_index: outcome.test.hours.clone(),
        scenario: outcome.test.config.clone(),
        gp: serde_json::to_value(&cfg.gp)?,
        mlp: serde_json::to_value(&cfg.mlp)?,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    fs::write(dir.join("feeder.txt"), emit_feeder(feeder))?;
    fs::write(dir.join("reports.csv"), reports_csv(&reports)?)?;
    fs::write(dir.join("timings.csv"), timings_csv(&reports)?)?;

    let header = scenario::target_header(&outcome.test.nodes);
    let hours = &outcome.test.hours;
    fs::write(
        dir.join("predictions").join("truth.csv"),
        scenario::matrix_csv(hours, &header, &outcome.test.targets),
    )?;
    for run in &outcome.runs {
        fs::write(
            dir.join("predictions").join(format!("{}.csv", run.model)),
            scenario::matrix_csv(hours, &header, &run.predictions),
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationConfig<T> {
    pub train_hours: usize,
    pub test_hours: usize,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub gp: GpConfig<T>,
}

impl<T: Scalar> GeneralizationConfig<T> {
    /// One day of training, six days of testing.
    pub fn new(seed: u64) -> Self {
        GeneralizationConfig {
            train_hours: 24,
            test_hours: 144,
            seed,
            scenario: ScenarioConfig::new(0, seed),
            gp: GpConfig {
                seed,
                ..GpConfig::default()
            },
        }
    }
}

/// Summary row over every hourly GP prediction of a generalization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationSummary {
    pub feeder_hash: String,
    pub buses: usize,
    pub phase_nodes: usize,
    pub train_hours: usize,
    pub test_hours: usize,
    pub seed: u64,
    pub avg_mae: f64,
    pub avg_mse: f64,
    pub max_error: f64,
    pub min_error: f64,
}

#[derive(Clone, Debug)]
pub struct GeneralizationOutcome<T> {
    pub summary: GeneralizationSummary,
    pub case: CaseOutcome<T>,
}

/// Trains the GP on a short window of a feeder and scores it on the following hours.
pub fn run_generalization<T: Scalar>(
    feeder: &Feeder<T>,
    config: &GeneralizationConfig<T>,
) -> Result<GeneralizationOutcome<T>, BenchError> {
    let case_cfg = CaseConfig {
        case_id: "generalization".into(),
        train_hours: config.train_hours,
        test_hours: config.test_hours,
        models: vec![ModelKind::Gp],
        seed: config.seed,
        scenario: config.scenario.clone(),
        gp: config.gp.clone(),
        mlp: MlpConfig::default(),
    };
    let case = run_case(feeder, &case_cfg)?;
    let e = &case.runs[0].errors;
    let summary = GeneralizationSummary {
        feeder_hash: case.feeder_hash.clone(),
        buses: feeder.buses().len(),
        phase_nodes: feeder.dim(),
        train_hours: case.train.len(),
        test_hours: case.test.len(),
        seed: config.seed,
        avg_mae: e.mae,
        avg_mse: e.mse,
        max_error: e.max_abs_error,
        min_error: e.min_abs_error,
    };
    Ok(GeneralizationOutcome { summary, case })
}

/// Writes the case directory plus `generalization.csv` holding the summary row.
pub fn write_generalization<T: Scalar>(
    dir: impl AsRef<Path>,
    feeder: &Feeder<T>,
    outcome: &GeneralizationOutcome<T>,
) -> Result<(), BenchError> {
    let dir = dir.as_ref();
    write_case(dir, feeder, &outcome.case)?;
    let s = &outcome.summary;
    let mut w = csv::Writer::from_path(dir.join("generalization.csv"))?;
    w.write_record([
        "feeder_hash",
        "buses",
        "phase_nodes",
        "train_hours",
        "test_hours",
        "seed",
        "avg_mae",
        "avg_mse",
        "max_error",
        "min_error",
    ])?;
    w.write_record([
        s.feeder_hash.clone(),
        s.buses.to_string(),
        s.phase_nodes.to_string(),
        s.train_hours.to_string(),
        s.test_hours.to_string(),
        s.seed.to_string(),
        fmt_f64(s.avg_mae),
        fmt_f64(s.avg_mse),
        fmt_f64(s.max_error),
        fmt_f64(s.min_error),
    ])?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    VoltageProfileSnapshot,
    PerBusMae,
    TimeSeries3Phase,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::VoltageProfileSnapshot, PlotKind::PerBusMae, PlotKind::TimeSeries3Phase];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::VoltageProfileSnapshot => "voltage-profile-snapshot",
            PlotKind::PerBusMae => "per-bus-mae",
            PlotKind::TimeSeries3Phase => "time-series-3phase",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| BenchError::UnknownPlot(s.trim().to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlotOptions {
    /// Absolute hour for the snapshot; defaults to the test hour with the lowest oracle voltage.
    pub hour: Option<usize>,
    /// Bus for the time series; defaults to the deepest three-phase bus.
    pub bus: Option<String>,
}

struct CaseArtifacts {
    manifest: CaseManifest,
    feeder: Feeder<f64>,
    truth: Array2<f64>,
    predictions: Vec<(ModelKind, Array2<f64>)>,
}

fn load_case(dir: &Path) -> Result<CaseArtifacts, BenchError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| artifact(&path, format!("cannot read manifest: {e}")))?;
    let manifest: CaseManifest = serde_json::from_str(&text)?;
    if manifest.format_version != CASE_FORMAT_VERSION {
        return Err(artifact(&path, format!("unsupported format version {}", manifest.format_version)));
    }
    let feeder_path = dir.join("feeder.txt");
    let feeder: Feeder<f64> = load_feeder(&fs::read_to_string(&feeder_path)?)?;
    if feeder.content_hash() != manifest.feeder_hash {
        return Err(artifact(&feeder_path, "feeder hash does not match the manifest"));
    }
    let header = scenario::target_header(&manifest.nodes);
    let read = |name: &str| -> Result<Array2<f64>, BenchError> {
        let p = dir.join("predictions").join(name);
        let (hours, m) = scenario::read_matrix(&p, &header)?;
        if hours != manifest.test_hour_index {
            return Err(artifact(&p, "hours do not match the manifest"));
        }
        Ok(m)
    };
    let truth = read("truth.csv")?;
    let predictions = manifest
        .models
        .iter()
        .map(|&m| Ok((m, read(&format!("{m}.csv"))?)))
        .collect::<Result<_, BenchError>>()?;
    Ok(CaseArtifacts {
        manifest,
        feeder,
        truth,
        predictions,
    })
}

/// `(bus id, phase label, depth, distance rank)` for each phase-node in flattened order.
fn node_positions(feeder: &Feeder<f64>) -> Vec<(String, char, usize, usize)> {
    let nodes = feeder.flat().nodes();
    let depth: Vec<usize> = nodes.iter().map(|&(b, _)| feeder.depth(b)).collect();
    let mut by_distance: Vec<usize> = (0..nodes.len()).collect();
    by_distance.sort_by_key(|&i| (depth[i], i));
    let mut rank = vec![0; nodes.len()];
    for (r, &i) in by_distance.iter().enumerate() {
        rank[i] = r;
    }
    nodes
        .iter()
        .enumerate()
        .map(|(i, &(b, p))| (feeder.buses()[b].id.clone(), p.label(), depth[i], rank[i]))
        .collect()
}

/// Writes `plots/<kind>.csv` for a case directory and returns its path.
///
/// All three kinds are wide tables with one column per model. `per-bus-mae`
/// has one row per phase-node; the snapshot adds an `oracle` column and the
/// time series has one row per hour and phase of the chosen bus.
pub fn emit_plot_data(dir: impl AsRef<Path>, kind: PlotKind, options: &PlotOptions) -> Result<PathBuf, BenchError> {
    let dir = dir.as_ref();
    let case = load_case(dir)?;
    let pos = node_positions(&case.feeder);
    let hours = &case.manifest.test_hour_index;
    let model_cols = case.predictions.iter().map(|(m, _)| m.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());

    match kind {
        PlotKind::PerBusMae => {
            let mut header: Vec<String> = ["bus", "phase", "depth", "order"].map(String::from).to_vec();
            header.extend(model_cols.map(|m| format!("{m}_mae")));
            w.write_record(&header)?;
            let maes: Vec<Vec<f64>> = case
                .predictions
                .iter()
                .map(|(_, p)| Ok(compute_errors(p.view(), case.truth.view())?.per_output_mae))
                .collect::<Result<_, BenchError>>()?;
            for (i, (bus, ph, depth, order)) in pos.iter().enumerate() {
                let mut rec = vec![bus.clone(), ph.to_string(), depth.to_string(), order.to_string()];
                rec.extend(maes.iter().map(|m| fmt_f64(m[i])));
                w.write_record(&rec)?;
            }
        }
        PlotKind::VoltageProfileSnapshot => {
            let row = match options.hour {
                Some(h) => hours
                    .iter()
                    .position(|&x| x == h)
                    .ok_or_else(|| BenchError::Config(format!("hour {h} is not a test hour of this case")))?,
                None => lowest_voltage_row(&case.truth),
            };
            let mut header: Vec<String> = ["hour", "bus", "phase", "depth", "order", "oracle"].map(String::from).to_vec();
            header.extend(model_cols);
            w.write_record(&header)?;
            let mut idx: Vec<usize> = (0..pos.len()).collect();
            idx.sort_by_key(|&i| pos[i].3);
            for i in idx {
                let (bus, ph, depth, order) = &pos[i];
                let mut rec = vec![
                    hours[row].to_string(),
                    bus.clone(),
                    ph.to_string(),
                    depth.to_string(),
                    order.to_string(),
                    fmt_f64(case.truth[[row, i]]),
                ];
                rec.extend(case.predictions.iter().map(|(_, p)| fmt_f64(p[[row, i]])));
                w.write_record(&rec)?;
            }
        }
        PlotKind::TimeSeries3Phase => {
            let bus = match &options.bus {
                Some(b) => {
                    if case.feeder.bus_index(b).is_none() {
                        return Err(BenchError::Config(format!("unknown bus `{b}`")));
                    }
                    b.clone()
                }
                None => deepest_three_phase_bus(&case.feeder),
            };
            let cols: Vec<usize> = (0..pos.len()).filter(|&i| pos[i].0 == bus).collect();
            if cols.is_empty() {
                return Err(BenchError::Config(format!("bus `{bus}` has no phase-nodes")));
            }
            let mut header: Vec<String> = ["hour", "bus", "phase", "oracle"].map(String::from).to_vec();
            header.extend(model_cols);
            w.write_record(&header)?;
            for (r, h) in hours.iter().enumerate() {
                for &i in &cols {
                    let mut rec = vec![h.to_string(), bus.clone(), pos[i].1.to_string(), fmt_f64(case.truth[[r, i]])];
                    rec.extend(case.predictions.iter().map(|(_, p)| fmt_f64(p[[r, i]])));
                    w.write_record(&rec)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    let out_dir = dir.join("plots");
    fs::create_dir_all(&out_dir)?;
    let out = out_dir.join(format!("{kind}.csv"));
    fs::write(&out, bytes)?;
    Ok(out)
}

fn lowest_voltage_row(truth: &Array2<f64>) -> usize {
    truth
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
        .0
}

fn deepest_three_phase_bus(feeder: &Feeder<f64>) -> String {
    let src = feeder.source_index();
    let full = |b: usize| Phase::ALL.iter().all(|&p| feeder.flat().position(b, p).is_some());
    let pick = |want_full: bool| {
        feeder
            .bfs_order()
            .iter()
            .copied()
            .filter(|&b| b != src && (!want_full || full(b)))
            .max_by_key(|&b| (feeder.depth(b), std::cmp::Reverse(b)))
    };
    let b = pick(true).or_else(|| pick(false)).unwrap_or(src);
    feeder.buses()[b].id.clone()
}
