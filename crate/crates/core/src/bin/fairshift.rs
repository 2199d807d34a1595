use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use fairshift::data::{CsvOptions, EncodingSpec};
use fairshift::experiment::{
    collect_cells, prepare_csv, prepare_named, run_cell, run_sweep, write_atomic, CellFlag,
    CellRecord, PreparedDataset, SweepConfig,
};
use fairshift::report::{emit_csv, emit_plot, Thresholds};
use fairshift::trainer::Approach;
use fairshift::{Error, Result};

#[derive(Parser)]
#[command(name = "fairshift", version, about = "Fair classification under covariate shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode and split a dataset, fit importance weights, save as JSON.
    Prepare {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one approach at one eta over the seeds and write its result.json.
    Train {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        approach: Approach,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        #[command(flatten)]
        run: RunArgs,
        /// Directory for per-seed epoch history CSVs.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run the approach x eta grid, skipping completed cells.
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_delimiter = ',')]
        approaches: Option<Vec<Approach>>,
        #[arg(long, value_delimiter = ',')]
        etas: Option<Vec<f64>>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Summarize finished cells as results.csv and tradeoff.svg.
    Report {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Also write one chart per fairness approach.
        #[arg(long)]
        per_approach: bool,
    },
    /// Export the source-domain importance weights as CSV.
    Weights {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// adult, meps, synthetic, or any name when --data and --spec are given.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, requires = "spec")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    no_header: bool,
    /// Output of `prepare`, used instead of re-encoding.
    #[arg(long, conflicts_with_all = ["data", "spec"])]
    prepared: Option<PathBuf>,
    /// Sweep config JSON; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(source: &SourceArgs) -> Result<SweepConfig> {
    let mut config = match &source.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text)?
        }
        None => SweepConfig::default(),
    };
    if let Some(name) = &source.dataset {
        config.dataset = name.clone();
    }
    Ok(config)
}

fn apply_run_args(config: &mut SweepConfig, run: &RunArgs) {
    if let Some(seeds) = &run.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(out) = &run.out {
        config.output_dir = out.clone();
    }
}

fn load_prepared(source: &SourceArgs, config: &SweepConfig) -> Result<PreparedDataset> {
    if let Some(path) = &source.prepared {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let mut prepared: PreparedDataset = serde_json::from_str(&text)?;
        if source.dataset.is_some() {
            prepared.name = config.dataset.clone();
        }
        return Ok(prepared);
    }
    match (&source.data, &source.spec) {
        (Some(data), Some(spec)) => {
            let spec = EncodingSpec::from_path(spec)?;
            let delimiter = u8::try_from(source.delimiter)
                .map_err(|_| Error::InvalidArgument("delimiter must be ASCII".into()))?;
            let csv = CsvOptions {
                delimiter,
                has_header: !source.no_header,
            };
            let name = match &source.dataset {
                Some(name) => name.clone(),
                None => data
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "custom".into()),
            };
            prepare_csv(&name, data, csv, &spec, &config.prepare)
        }
        _ => prepare_named(&config.dataset, &config.prepare),
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn summarize(records: &[CellRecord]) -> bool {
    let mut ok = true;
    for r in records {
        match &r.result {
            Some(res) => println!(
                "{:<16} eta={:<8} auc={:.4}±{:.4} dp={:.4}±{:.4} {}",
                r.approach.name(),
                r.eta,
                res.mean_auc,
                res.std_auc,
                res.mean_delta_dp,
                res.std_delta_dp,
                r.flag.as_str()
            ),
            None => println!(
                "{:<16} eta={:<8} failed: {}",
                r.approach.name(),
                r.eta,
                r.error.as_deref().unwrap_or("unknown error")
            ),
        }
        ok &= r.flag != CellFlag::Failed;
    }
    ok
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Prepare { source, out } => {
            let config = load_config(&source)?;
            let prepared = load_prepared(&source, &config)?;
            write_json(&prepared, &out)?;
            info!("wrote {}", out.display());
            Ok(true)
        }
        Command::Weights { source, out } => {
            let config = load_config(&source)?;
            let prepared = load_prepared(&source, &config)?;
            prepared.weights.write_csv(&out)?;
            info!("wrote {} weights to {}", prepared.weights.len(), out.display());
            Ok(true)
        }
        Command::Train {
            source,
            approach,
            eta,
            run,
            history,
        } => {
            let mut config = load_config(&source)?;
            apply_run_args(&mut config, &run);
            let prepared = load_prepared(&source, &config)?;
            let record = run_cell(
                &prepared,
                approach,
                eta,
                &config.seeds,
                &config.train,
                &config.output_dir,
            )?;
            if let Some(dir) = history {
                for trace in &record.traces {
                    let path = dir.join(format!("history_seed{}.csv", trace.seed));
                    write_atomic(&path, trace.history.to_csv().as_bytes())?;
                }
            }
            Ok(summarize(std::slice::from_ref(&record)))
        }
        Command::Sweep {
            source,
            approaches,
            etas,
            run,
            jobs,
        } => {
            let mut config = load_config(&source)?;
            apply_run_args(&mut config, &run);
            if let Some(a) = approaches {
                config.approaches = a;
            }
            if let Some(e) = etas {
                config.etas = e;
            }
            if let Some(j) = jobs {
                config.jobs = j;
            }
            config.validate()?;
            let prepared = load_prepared(&source, &config)?;
            config.dataset = prepared.name.clone();
            let records = run_sweep(&config, &prepared)?;
            Ok(summarize(&records))
        }
        Command::Report {
            dataset,
            out,
            per_approach,
        } => {
            let records = collect_cells(&out, &dataset)?;
            if records.is_empty() {
                return Err(Error::Empty(format!("no results under {}", out.join(&dataset).display())));
            }
            let root = out.join(&dataset);
            emit_csv(&records, root.join("results.csv"))?;
            let thresholds = Thresholds::from_records(&records);
            emit_plot(&records, thresholds, &dataset, root.join("tradeoff.svg"))?;
            if per_approach {
                for approach in [Approach::FairRelated, Approach::Hybrid] {
                    let subset: Vec<CellRecord> = records
                        .iter()
                        .filter(|r| r.approach == approach || !r.approach.uses_fairness())
                        .cloned()
                        .collect();
                    if subset.iter().any(|r| r.approach == approach) {
                        let title = format!("{dataset}: {}", approach.label());
                        let path = root.join(format!("tradeoff_{}.svg", approach.name()));
                        emit_plot(&subset, thresholds, &title, path)?;
                    }
                }
            }
            info!("wrote report to {}", root.display());
            Ok(summarize(&records))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
