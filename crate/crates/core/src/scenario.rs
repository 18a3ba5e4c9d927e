//! Quasi-static hourly datasets: loadshapes, load-multiplier variability,
//! synthetic irradiance, and the nonlinear power-flow solution for every hour.

use std::fs;
use std::io::Write as _;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::feeder::Feeder;
use crate::powerflow::{NetLoadVector, PfError, PowerFlowSolver, SolverOptions};
use crate::scalar::Scalar;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Training sizes of the four standard cases: 1, 7, 30 and 90 days.
pub const CASE_TRAIN_HOURS: [usize; 4] = [24, 168, 720, 2160];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("hour {hour}: power flow failed after {attempts} attempts: {source}")]
    PowerFlow {
        hour: usize,
        attempts: usize,
        #[source]
        source: PfError,
    },
    #[error("insufficient data: need {needed} rows, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("invalid scenario configuration: {0}")]
    Config(String),
    #[error("dataset file {file}: {message}")]
    Format { file: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadshapeClass {
    Residential,
    Commercial,
    Industrial,
}

impl LoadshapeClass {
    pub const ALL: [LoadshapeClass; 3] = [
        LoadshapeClass::Residential,
        LoadshapeClass::Commercial,
        LoadshapeClass::Industrial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LoadshapeClass::Residential => "residential",
            LoadshapeClass::Commercial => "commercial",
            LoadshapeClass::Industrial => "industrial",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loadshape {
    pub id: String,
    pub class: LoadshapeClass,
    /// One multiplier per hour of day; repeats every 24 hours.
    pub multipliers: Vec<f64>,
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    // circular distance so evening peaks wrap past midnight smoothly
    let mut d = (hour - centre).abs();
    d = d.min(24.0 - d);
    (-d * d / (2.0 * width * width)).exp()
}

impl Loadshape {
    /// Built-in archetype: evening-peaked residential, midday commercial, flat industrial.
    pub fn archetype(class: LoadshapeClass) -> Self {
        let raw: Vec<f64> = (0..24)
            .map(|h| {
                let h = h as f64;
                match class {
                    LoadshapeClass::Residential => 0.35 + 0.25 * bump(h, 7.5, 1.5) + 0.65 * bump(h, 19.0, 2.5),
                    LoadshapeClass::Commercial => 0.3 + 0.7 * bump(h, 13.0, 3.5),
                    LoadshapeClass::Industrial => 1.0,
                }
            })
            .collect();
        let peak = raw.iter().copied().fold(0.0, f64::max);
        Loadshape {
            id: class.name().to_string(),
            class,
            multipliers: raw.into_iter().map(|v| v / peak).collect(),
        }
    }

    pub fn at(&self, hour: usize) -> f64 {
        self.multipliers[hour % self.multipliers.len()]
    }
}

/// Hourly plane-of-array irradiance fraction and ambient temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrradianceProfile {
    pub irradiance: Vec<f64>,
    pub temperature: Vec<f64>,
}

/// Clear-sky half-sine between 06:00 and 18:00, scaled by a uniform cloud
/// factor in `[1 - cloud_noise, 1]` drawn independently for each hour.
pub fn synthetic_irradiance(hours: Range<usize>, seed: u64, cloud_noise: f64) -> IrradianceProfile {
    let cloud_noise = cloud_noise.clamp(0.0, 1.0);
    let mut irradiance = Vec::with_capacity(hours.len());
    let mut temperature = Vec::with_capacity(hours.len());
    for hour in hours {
        let mut rng = hour_rng(seed, hour, IRRADIANCE_STREAM);
        let h = (hour % 24) as f64;
        let clear = if h > 6.0 && h < 18.0 {
            (std::f64::consts::PI * (h - 6.0) / 12.0).sin()
        } else {
            0.0
        };
        let cloud = 1.0 - cloud_noise * rng.random::<f64>();
        irradiance.push((clear * cloud).clamp(0.0, 1.0));
        temperature.push(18.0 + 7.0 * (2.0 * std::f64::consts::PI * (h - 9.0) / 24.0).sin() + rng.random_range(-1.0..1.0));
    }
    IrradianceProfile {
        irradiance,
        temperature,
    }
}

const IRRADIANCE_STREAM: u64 = 15;
const ATTEMPT_STREAMS: u64 = 16;

fn hour_rng(seed: u64, hour: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(hour as u64 * ATTEMPT_STREAMS + stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierMode {
    /// One multiplier per hour scales every load.
    Global,
    /// Every load draws its own multiplier each hour.
    PerLoad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "class")]
pub enum LoadshapeAssignment {
    /// Use the loadshape named on each load; unknown names are assigned at random.
    FromFeeder,
    /// Assign every load a class uniformly at random.
    Random,
    /// Same class everywhere.
    All(LoadshapeClass),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub hours: usize,
    /// Index of the first generated hour; hour 0 is midnight.
    pub start_hour: usize,
    pub seed: u64,
    /// Log-space standard deviation of the lognormal load multiplier (median 1).
    pub variability: f64,
    pub multiplier_mode: MultiplierMode,
    pub cloud_noise: f64,
    /// Scales every load (not the DERs).
    pub load_scale: f64,
    pub loadshapes: LoadshapeAssignment,
    pub max_retries: usize,
}

impl ScenarioConfig {
    pub fn new(hours: usize, seed: u64) -> Self {
        ScenarioConfig {
            hours,
            start_hour: 0,
            seed,
            variability: 0.15,
            multiplier_mode: MultiplierMode::Global,
            cloud_noise: 0.3,
            load_scale: 1.0,
            loadshapes: LoadshapeAssignment::FromFeeder,
            max_retries: 5,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Config(m.into()));
        if self.hours == 0 {
            return bad("hours must be at least 1");
        }
        if !(self.variability >= 0.0 && self.variability.is_finite()) {
            return bad("variability must be a finite non-negative number");
        }
        if !(self.load_scale >= 0.0 && self.load_scale.is_finite()) {
            return bad("load scale must be a finite non-negative number");
        }
        if !(0.0..=1.0).contains(&self.cloud_noise) {
            return bad("cloud noise must lie in [0, 1]");
        }
        if self.max_retries >= ATTEMPT_STREAMS as usize - 1 {
            return bad("too many retries");
        }
        Ok(())
    }
}

/// Per-load loadshapes and the mapping from loads and DERs to phase-nodes.
pub struct ScenarioModel<'a, T> {
    feeder: &'a Feeder<T>,
    shapes: Vec<Loadshape>,
    /// `(flat index, loadshape index, kw, kvar)` per load.
    loads: Vec<(usize, usize, f64, f64)>,
    /// `(flat index, kw, kvar)` per DER phase at full output.
    ders: Vec<(usize, f64, f64)>,
    s_base: f64,
}

impl<'a, T: Scalar> ScenarioModel<'a, T> {
    pub fn new(feeder: &'a Feeder<T>, assignment: &LoadshapeAssignment, seed: u64) -> Self {
        let shapes: Vec<Loadshape> = LoadshapeClass::ALL.into_iter().map(Loadshape::archetype).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let flat = feeder.flat();
        let loads = feeder
            .loads()
            .iter()
            .map(|l| {
                let class = match assignment {
                    LoadshapeAssignment::All(c) => *c,
                    LoadshapeAssignment::FromFeeder => LoadshapeClass::from_name(&l.loadshape)
                        .unwrap_or_else(|| LoadshapeClass::ALL[rng.random_range(0..3)]),
                    LoadshapeAssignment::Random => LoadshapeClass::ALL[rng.random_range(0..3)],
                };
                let b = feeder.bus_index(&l.bus).expect("validated feeder");
                let idx = flat.position(b, l.phase).expect("validated feeder");
                let shape = LoadshapeClass::ALL.iter().position(|c| *c == class).unwrap();
                (idx, shape, l.base_kw.as_f64(), l.base_kvar.as_f64())
            })
            .collect();
        let mut ders = Vec::new();
        for d in feeder.ders() {
            let b = feeder.bus_index(&d.bus).expect("validated feeder");
            let share = 1.0 / d.phases.len() as f64;
            for ph in d.phases.iter() {
                let idx = flat.position(b, ph).expect("validated feeder");
                let kvar = d.q_setpoint_kvar.map_or(0.0, |q| q.as_f64());
                ders.push((idx, d.rated_kw.as_f64() * share, kvar * share));
            }
        }
        ScenarioModel {
            feeder,
            shapes,
            loads,
            ders,
            s_base: feeder.s_base_phase().as_f64(),
        }
    }

    pub fn loadshapes(&self) -> &[Loadshape] {
        &self.shapes
    }

    /// Loadshape class assigned to each feeder load, in feeder order.
    pub fn load_classes(&self) -> Vec<LoadshapeClass> {
        self.loads.iter().map(|l| self.shapes[l.1].class).collect()
    }

    /// Net load `S_L - S_DER` (p.u.) for one hour. `multipliers` holds either one
    /// value for every load or one value per load.
    pub fn net_load(&self, hour: usize, multipliers: &[f64], load_scale: f64, irradiance: f64) -> NetLoadVector<T> {
        let d = self.feeder.dim();
        let mut v = vec![0.0f64; 2 * d];
        for (k, &(idx, shape, kw, kvar)) in self.loads.iter().enumerate() {
            let m = if multipliers.len() == 1 { multipliers[0] } else { multipliers[k] };
            let f = self.shapes[shape].at(hour) * m * load_scale;
            v[idx] += kw * f / self.s_base;
            v[d + idx] += kvar * f / self.s_base;
        }
        for &(idx, kw, kvar) in &self.ders {
            v[idx] -= kw * irradiance / self.s_base;
            v[d + idx] -= kvar * irradiance / self.s_base;
        }
        NetLoadVector::new(v.into_iter().map(T::lit).collect(), d).expect("length 2D by construction")
    }

    fn draw_multipliers(&self, cfg: &ScenarioConfig, hour: usize, attempt: usize) -> Vec<f64> {
        if cfg.variability == 0.0 {
            return vec![1.0];
        }
        let mut rng = hour_rng(cfg.seed, hour, attempt as u64);
        let dist = LogNormal::new(0.0, cfg.variability).expect("validated variability");
        let count = match cfg.multiplier_mode {
            MultiplierMode::Global => 1,
            MultiplierMode::PerLoad => self.loads.len().max(1),
        };
        (0..count).map(|_| dist.sample(&mut rng)).collect()
    }
}

/// Generated input/target pairs, one row per hour in chronological order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    /// `n x 2D` net loads `[p; q]`, p.u.
    pub inputs: Array2<T>,
    /// `n x D` voltage magnitudes, p.u.
    pub targets: Array2<T>,
    /// `n x D` voltage angles, rad.
    pub angles: Array2<T>,
    /// Absolute hour index of each row.
    pub hours: Vec<usize>,
    /// Mean load multiplier drawn for each row.
    pub multipliers: Vec<f64>,
    pub irradiance: Vec<f64>,
    /// Phase-node labels `bus.phase` in flattened order.
    pub nodes: Vec<String>,
    pub feeder_hash: String,
    pub config: ScenarioConfig,
}

pub fn node_labels<T: Scalar>(feeder: &Feeder<T>) -> Vec<String> {
    feeder
        .flatten_index()
        .into_iter()
        .map(|(b, p)| format!("{b}.{}", p.label()))
        .collect()
}

/// Solves one hour, resampling its multipliers after a failed solve.
fn solve_hour<T: Scalar>(
    model: &ScenarioModel<'_, T>,
    solver: &PowerFlowSolver<'_, T>,
    cfg: &ScenarioConfig,
    opts: &SolverOptions<T>,
    hour: usize,
    irradiance: f64,
) -> Result<(NetLoadVector<T>, Vec<T>, Vec<T>, f64), ScenarioError> {
    let mut attempt = 0;
    loop {
        let mult = model.draw_multipliers(cfg, hour, attempt);
        let load = model.net_load(hour, &mult, cfg.load_scale, irradiance);
        match solver.solve(&load, opts) {
            Ok(sol) => {
                let mean = mult.iter().sum::<f64>() / mult.len() as f64;
                return Ok((load, sol.v_mag, sol.v_ang, mean));
            }
            Err(e) if attempt >= cfg.max_retries || cfg.variability == 0.0 => {
                return Err(ScenarioError::PowerFlow {
                    hour,
                    attempts: attempt + 1,
                    source: e,
                })
            }
            Err(e) => {
                log::debug!("hour {hour}: resampling after {e}");
                attempt += 1;
            }
        }
    }
}

pub fn generate_dataset<T: Scalar>(feeder: &Feeder<T>, cfg: &ScenarioConfig) -> Result<Dataset<T>, ScenarioError> {
    generate_dataset_with(feeder, cfg, &SolverOptions::default())
}

pub fn generate_dataset_with<T: Scalar>(
    feeder: &Feeder<T>,
    cfg: &ScenarioConfig,
    opts: &SolverOptions<T>,
) -> Result<Dataset<T>, ScenarioError> {
    cfg.validate()?;
    let model = ScenarioModel::new(feeder, &cfg.loadshapes, cfg.seed);
    let solver = PowerFlowSolver::new(feeder).map_err(|e| ScenarioError::PowerFlow {
        hour: cfg.start_hour,
        attempts: 0,
        source: e,
    })?;
    let hours: Vec<usize> = (cfg.start_hour..cfg.start_hour + cfg.hours).collect();
    let sun = synthetic_irradiance(cfg.start_hour..cfg.start_hour + cfg.hours, cfg.seed, cfg.cloud_noise);

    let rows: Vec<_> = hours
        .par_iter()
        .zip(sun.irradiance.par_iter())
        .map(|(&h, &irr)| solve_hour(&model, &solver, cfg, opts, h, irr))
        .collect::<Result<_, _>>()?;

    let (d, n) = (feeder.dim(), hours.len());
    let mut inputs = Array2::zeros((n, 2 * d));
    let mut targets = Array2::zeros((n, d));
    let mut angles = Array2::zeros((n, d));
    let mut multipliers = Vec::with_capacity(n);
    for (i, (load, vm, va, m)) in rows.into_iter().enumerate() {
        inputs.row_mut(i).assign(&ArrayView1::from(load.as_slice()));
        targets.row_mut(i).assign(&ArrayView1::from(&vm[..]));
        angles.row_mut(i).assign(&ArrayView1::from(&va[..]));
        multipliers.push(m);
    }
    Ok(Dataset {
        inputs,
        targets,
        angles,
        hours,
        multipliers,
        irradiance: sun.irradiance,
        nodes: node_labels(feeder),
        feeder_hash: feeder.content_hash(),
        config: cfg.clone(),
    })
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    /// Rows `range`, in order.
    pub fn slice(&self, range: Range<usize>) -> Result<Dataset<T>, ScenarioError> {
        if range.end > self.len() || range.start > range.end {
            return Err(ScenarioError::InsufficientData {
                needed: range.end,
                available: self.len(),
            });
        }
        let r = range.clone();
        Ok(Dataset {
            inputs: self.inputs.slice(s![r.clone(), ..]).to_owned(),
            targets: self.targets.slice(s![r.clone(), ..]).to_owned(),
            angles: self.angles.slice(s![r.clone(), ..]).to_owned(),
            hours: self.hours[range.clone()].to_vec(),
            multipliers: self.multipliers[range.clone()].to_vec(),
            irradiance: self.irradiance[range].to_vec(),
            nodes: self.nodes.clone(),
            feeder_hash: self.feeder_hash.clone(),
            config: self.config.clone(),
        })
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset<T>) -> Result<Dataset<T>, ScenarioError> {
        if self.nodes != other.nodes {
            return Err(ScenarioError::Config("datasets describe different feeders".into()));
        }
        let cat = |a: &Array2<T>, b: &Array2<T>| {
            ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("matching columns")
        };
        Ok(Dataset {
            inputs: cat(&self.inputs, &other.inputs),
            targets: cat(&self.targets, &other.targets),
            angles: cat(&self.angles, &other.angles),
            hours: self.hours.iter().chain(&other.hours).copied().collect(),
            multipliers: self.multipliers.iter().chain(&other.multipliers).copied().collect(),
            irradiance: self.irradiance.iter().chain(&other.irradiance).copied().collect(),
            nodes: self.nodes.clone(),
            feeder_hash: self.feeder_hash.clone(),
            config: self.config.clone(),
        })
    }

    /// SHA-256 over the input and target CSV text.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(matrix_csv(&self.hours, &input_header(&self.nodes), &self.inputs));
        h.update(matrix_csv(&self.hours, &target_header(&self.nodes), &self.targets));
        hex::encode(h.finalize())
    }
}

/// Chronological split: the first `train_hours` rows train, the next `test_hours` rows test.
pub fn split_cases<T: Scalar>(
    ds: &Dataset<T>,
    train_hours: usize,
    test_hours: usize,
) -> Result<(Dataset<T>, Dataset<T>), ScenarioError> {
    if train_hours == 0 || test_hours == 0 {
        return Err(ScenarioError::Config("train and test windows must be non-empty".into()));
    }
    let needed = train_hours + test_hours;
    if needed > ds.len() {
        return Err(ScenarioError::InsufficientData {
            needed,
            available: ds.len(),
        });
    }
    Ok((ds.slice(0..train_hours)?, ds.slice(train_hours..needed)?))
}

fn input_header(nodes: &[String]) -> Vec<String> {
    let mut h = vec!["hour".to_string()];
    h.extend(nodes.iter().map(|n| format!("p:{n}")));
    h.extend(nodes.iter().map(|n| format!("q:{n}")));
    h
}

pub(crate) fn target_header(nodes: &[String]) -> Vec<String> {
    let mut h = vec!["hour".to_string()];
    h.extend(nodes.iter().map(|n| format!("v:{n}")));
    h
}

fn angle_header(nodes: &[String]) -> Vec<String> {
    let mut h = vec!["hour".to_string()];
    h.extend(nodes.iter().map(|n| format!("theta:{n}")));
    h
}

pub(crate) fn matrix_csv<T: Scalar>(hours: &[usize], header: &[String], m: &Array2<T>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for (h, row) in hours.iter().zip(m.rows()) {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(h.to_string());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

pub(crate) fn read_matrix<T: Scalar>(path: &Path, header: &[String]) -> Result<(Vec<usize>, Array2<T>), ScenarioError> {
    let file = path.display().to_string();
    let fmt = |message: String| ScenarioError::Format {
        file: file.clone(),
        message,
    };
    let mut r = csv::Reader::from_path(path)?;
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(fmt("column header does not match the manifest".into()));
    }
    let cols = header.len() - 1;
    let mut hours = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        hours.push(rec[0].parse().map_err(|_| fmt(format!("row {row}: bad hour '{}'", &rec[0])))?);
        for c in 1..=cols {
            let v: T = rec[c]
                .parse()
                .map_err(|_| fmt(format!("row {row}, column {}: bad number '{}'", header[c], &rec[c])))?;
            values.push(v);
        }
    }
    let n = hours.len();
    Ok((hours, Array2::from_shape_vec((n, cols), values).expect("rectangular csv")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub feeder_hash: String,
    pub data_hash: String,
    pub rows: usize,
    pub nodes: Vec<String>,
    pub hours: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub irradiance: Vec<f64>,
    pub config: ScenarioConfig,
}

/// Writes `inputs.csv`, `targets.csv`, `angles.csv` and `manifest.json` into `dir`.
pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, dir: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("inputs.csv"), matrix_csv(&ds.hours, &input_header(&ds.nodes), &ds.inputs))?;
    fs::write(dir.join("targets.csv"), matrix_csv(&ds.hours, &target_header(&ds.nodes), &ds.targets))?;
    fs::write(dir.join("angles.csv"), matrix_csv(&ds.hours, &angle_header(&ds.nodes), &ds.angles))?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        feeder_hash: ds.feeder_hash.clone(),
        data_hash: ds.content_hash(),
        rows: ds.len(),
        nodes: ds.nodes.clone(),
        hours: ds.hours.clone(),
        multipliers: ds.multipliers.clone(),
        irradiance: ds.irradiance.clone(),
        config: ds.config.clone(),
    };
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(dir: impl AsRef<Path>) -> Result<Dataset<T>, ScenarioError> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(ScenarioError::Format {
            file: "manifest.json".into(),
            message: format!("unsupported format version {}", manifest.format_version),
        });
    }
    let (hours, inputs) = read_matrix(&dir.join("inputs.csv"), &input_header(&manifest.nodes))?;
    let (th, targets) = read_matrix(&dir.join("targets.csv"), &target_header(&manifest.nodes))?;
    let (ah, angles) = read_matrix(&dir.join("angles.csv"), &angle_header(&manifest.nodes))?;
    if hours != manifest.hours || th != hours || ah != hours {
        return Err(ScenarioError::Format {
            file: dir.display().to_string(),
            message: "hour columns disagree with the manifest".into(),
        });
    }
    let ds = Dataset {
        inputs,
        targets,
        angles,
        hours,
        multipliers: manifest.multipliers,
        irradiance: manifest.irradiance,
        nodes: manifest.nodes,
        feeder_hash: manifest.feeder_hash,
        config: manifest.config,
    };
    if ds.content_hash() != manifest.data_hash {
        return Err(ScenarioError::Format {
            file: dir.display().to_string(),
            message: "data hash does not match the manifest".into(),
        });
    }
    Ok(ds)
}
