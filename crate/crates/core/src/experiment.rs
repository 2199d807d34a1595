//! Experiment wiring: dataset preparation, single-approach runs and the
//! resumable approach x eta sweep.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{load_and_encode, shift_split, CsvOptions, DomainSplit, EncodingSpec};
use crate::density::{
    estimate_weights, fit_discriminator, DiscriminatorConfig, ImportanceWeights,
    DEFAULT_CLIP_CEILING,
};
use crate::error::{Error, Result};
use crate::losses::{FairnessSpec, LambdaScheme};
use crate::metrics::{aggregate, ExperimentResult};
use crate::synthetic;
use crate::trainer::{run_repeats, Approach, TrainConfig, TrainHistory};

pub const DATA_DIR_ENV: &str = "FAIRSHIFT_DATA_DIR";
pub const ADULT_SPEC: &str = include_str!("../specs/adult.json");
pub const MEPS_SPEC: &str = include_str!("../specs/meps.json");
pub const SYNTHETIC_ROWS: usize = 20_000;

pub const DEFAULT_ETAS: [f64; 11] = [
    1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0, 1e4, 1e5,
];
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Knobs that shape a prepared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareOptions {
    pub split_seed: u64,
    pub lambda_scheme: LambdaScheme,
    pub discriminator: DiscriminatorConfig,
    pub clip_ceiling: f64,
    pub synthetic_rows: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            split_seed: 0,
            lambda_scheme: LambdaScheme::PerColumn,
            discriminator: DiscriminatorConfig::default(),
            clip_ceiling: DEFAULT_CLIP_CEILING,
            synthetic_rows: SYNTHETIC_ROWS,
        }
    }
}

/// A split with its importance weights and fairness registry, shared by
/// every cell of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub name: String,
    pub split: DomainSplit,
    pub weights: ImportanceWeights,
    pub fairness: FairnessSpec,
}

pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Path of the CSV for a named dataset, if the name refers to a file-backed one.
pub fn dataset_file(name: &str) -> Option<PathBuf> {
    match name {
        "adult" | "meps" => Some(data_dir().join(format!("{name}.csv"))),
        _ => None,
    }
}

pub fn builtin_spec(name: &str) -> Result<EncodingSpec> {
    match name {
        "adult" => EncodingSpec::from_json(ADULT_SPEC),
        "meps" => EncodingSpec::from_json(MEPS_SPEC),
        "synthetic" => Ok(synthetic::encoding_spec()),
        other => Err(Error::InvalidArgument(format!("unknown dataset `{other}`"))),
    }
}

/// Importance weights from a discriminator trained on source vs validation
/// features.
pub fn fit_weights(split: &DomainSplit, options: &PrepareOptions) -> Result<ImportanceWeights> {
    let source = &split.source_train.features;
    let target = &split.target_validation.features;
    let model = fit_discriminator(source, target, &options.discriminator)?;
    estimate_weights(
        &model,
        source,
        source.rows(),
        target.rows(),
        options.clip_ceiling,
    )
}

pub fn prepare_split(name: &str, split: DomainSplit, options: &PrepareOptions) -> Result<PreparedDataset> {
    let weights = fit_weights(&split, options)?;
    let fairness =
        FairnessSpec::from_groups(&split.source_train.related_indices, options.lambda_scheme, 0.0)?;
    info!(
        "{name}: {} source, {} validation, {} test rows, {} features, {} related columns",
        split.source_train.len(),
        split.target_validation.len(),
        split.target_test.len(),
        split.source_train.dim(),
        fairness.related_columns.len()
    );
    Ok(PreparedDataset {
        name: name.to_string(),
        split,
        weights,
        fairness,
    })
}

/// Loads, encodes and splits a CSV under `spec`.
pub fn prepare_csv(
    name: &str,
    path: &Path,
    csv: CsvOptions,
    spec: &EncodingSpec,
    options: &PrepareOptions,
) -> Result<PreparedDataset> {
    let (table, dataset) = load_and_encode(path, csv, spec)?;
    let split = shift_split(&dataset, &table, spec, options.split_seed)?;
    prepare_split(name, split, options)
}

/// Prepares one of the named datasets: `adult`, `meps` or `synthetic`.
pub fn prepare_named(name: &str, options: &PrepareOptions) -> Result<PreparedDataset> {
    let spec = builtin_spec(name)?;
    match dataset_file(name) {
        Some(path) => prepare_csv(name, &path, CsvOptions::default(), &spec, options),
        None => {
            let table = synthetic::generate(options.synthetic_rows, options.split_seed)?;
            let dataset = crate::data::encode(&table, &spec)?;
            let split = shift_split(&dataset, &table, &spec, options.split_seed)?;
            prepare_split(name, split, options)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTrace {
    pub seed: u64,
    pub history: TrainHistory,
}

/// Runs one approach at one eta for every seed and aggregates test metrics.
pub fn run_approach(
    approach: Approach,
    prepared: &PreparedDataset,
    eta: f64,
    seeds: &[u64],
    base: &TrainConfig,
) -> Result<(ExperimentResult, Vec<SeedTrace>)> {
    let config = approach.configure(base, eta);
    let outcomes = run_repeats(
        &config,
        &prepared.split,
        &prepared.weights,
        &prepared.fairness,
        seeds,
    )?;
    let traces = outcomes
        .iter()
        .map(|o| SeedTrace {
            seed: o.metrics.seed,
            history: o.history.clone(),
        })
        .collect();
    let result = aggregate(
        approach.name(),
        config.eta,
        outcomes.into_iter().map(|o| o.metrics).collect(),
    )?;
    Ok((result, traces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub dataset: String,
    pub approaches: Vec<Approach>,
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub train: TrainConfig,
    pub prepare: PrepareOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dataset: "synthetic".into(),
            approaches: Approach::ALL.to_vec(),
            etas: DEFAULT_ETAS.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            output_dir: PathBuf::from("runs"),
            jobs: 1,
            train: TrainConfig::default(),
            prepare: PrepareOptions::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.approaches.is_empty() {
            return Err(Error::InvalidArgument("no approaches requested".into()));
        }
        if self.etas.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidArgument("etas must be positive".into()));
        }
        if self.etas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("etas must be strictly increasing".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("no seeds requested".into()));
        }
        self.train.validate()
    }

    /// (approach, eta) per cell; approaches without a fairness term get eta 0.
    pub fn cells(&self) -> Vec<(Approach, f64)> {
        let mut approaches = self.approaches.clone();
        approaches.sort();
        approaches.dedup();
        approaches
            .into_iter()
            .flat_map(|a| {
                let etas = if a.uses_fairness() {
                    self.etas.clone()
                } else {
                    vec![0.0]
                };
                etas.into_iter().map(move |e| (a, e))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFlag {
    None,
    /// Mean DP of exactly zero, typically a collapsed constant predictor.
    ZeroDp,
    Failed,
}

impl CellFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellFlag::None => "",
            CellFlag::ZeroDp => "zero_dp",
            CellFlag::Failed => "failed",
        }
    }
}

/// Contents of one `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub approach: Approach,
    pub eta: f64,
    pub seeds: Vec<u64>,
    pub flag: CellFlag,
    pub error: Option<String>,
    pub result: Option<ExperimentResult>,
    pub traces: Vec<SeedTrace>,
    pub train: TrainConfig,
}

impl CellRecord {
    pub fn is_complete(&self) -> bool {
        self.flag != CellFlag::Failed && self.result.is_some()
    }
}

pub fn eta_dir_name(eta: f64) -> String {
    format!("eta_{eta:e}")
}

pub fn cell_path(out: &Path, dataset: &str, approach: Approach, eta: f64) -> PathBuf {
    out.join(dataset)
        .join(approach.name())
        .join(eta_dir_name(eta))
        .join("result.json")
}

/// Writes via a temporary sibling and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| Error::InvalidArgument(format!("no parent for {}", path.display())))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_cell(path: &Path) -> Result<CellRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Trains and evaluates one cell, then records it at its canonical path.
pub fn run_cell(
    prepared: &PreparedDataset,
    approach: Approach,
    eta: f64,
    seeds: &[u64],
    train: &TrainConfig,
    out: &Path,
) -> Result<CellRecord> {
    let config = approach.configure(train, eta);
    let record = match run_approach(approach, prepared, eta, seeds, train) {
        Ok((result, traces)) => CellRecord {
            dataset: prepared.name.clone(),
            approach,
            eta: config.eta,
            seeds: seeds.to_vec(),
            flag: if result.mean_delta_dp == 0.0 {
                CellFlag::ZeroDp
            } else {
                CellFlag::None
            },
            error: None,
            result: Some(result),
            traces,
            train: config,
        },
        Err(e) => {
            warn!("{} {approach} eta={eta}: {e}", prepared.name);
            CellRecord {
                dataset: prepared.name.clone(),
                approach,
                eta: config.eta,
                seeds: seeds.to_vec(),
                flag: CellFlag::Failed,
                error: Some(e.to_string()),
                result: None,
                traces: Vec::new(),
                train: config,
            }
        }
    };
    let path = cell_path(out, &prepared.name, approach, record.eta);
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(record)
}

/// Runs every cell of the sweep, reusing completed `result.json` files.
/// Cells run on up to `config.jobs` worker threads.
pub fn run_sweep(config: &SweepConfig, prepared: &PreparedDataset) -> Result<Vec<CellRecord>> {
    config.validate()?;
    let cells = config.cells();
    let slots: Vec<Mutex<Option<Result<CellRecord>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let out = &config.output_dir;

    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(approach, eta)) = cells.get(i) else {
            break;
        };
        let path = cell_path(out, &prepared.name, approach, eta);
        let existing = read_cell(&path).ok().filter(|r| {
            r.is_complete() && r.seeds == config.seeds && r.train == approach.configure(&config.train, eta)
        });
        let outcome = match existing {
            Some(record) => {
                info!("skipping completed cell {}", path.display());
                Ok(record)
            }
            None => {
                info!("running {} {approach} eta={eta}", prepared.name);
                run_cell(prepared, approach, eta, &config.seeds, &config.train, out)
            }
        };
        *slots[i].lock().unwrap() = Some(outcome);
    };

    let jobs = config.jobs.clamp(1, cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(worker);
        }
    });

    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every cell visited"))
        .collect()
}

/// All `result.json` records under `<out>/<dataset>/`.
pub fn collect_cells(out: &Path, dataset: &str) -> Result<Vec<CellRecord>> {
    let root = out.join(dataset);
    let mut records = Vec::new();
    let approaches = match std::fs::read_dir(&root) {
        Ok(rd) => rd,
        Err(e) => return Err(Error::io(&root, e)),
    };
    for approach_dir in approaches {
        let approach_dir = approach_dir.map_err(|e| Error::io(&root, e))?.path();
        if !approach_dir.is_dir() {
            continue;
        }
        let cells = std::fs::read_dir(&approach_dir).map_err(|e| Error::io(&approach_dir, e))?;
        for cell in cells {
            let path = cell.map_err(|e| Error::io(&approach_dir, e))?.path().join("result.json");
            if path.is_file() {
                records.push(read_cell(&path)?);
            }
        }
    }
    records.sort_by(|a, b| (a.approach, a.eta).partial_cmp(&(b.approach, b.eta)).unwrap());
    Ok(records)
}
