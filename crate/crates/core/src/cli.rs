//! Command-line front end: `generate-field`, `run` and `bench`.
//!
//! Settings come from an optional TOML file whose keys mirror
//! [`ScenarioConfig`] (`steps`, `sensing.alpha`, `exact.regularization`, ...)
//! plus the `batch.*`, `output.*` and `export.*` tables below. Command-line
//! flags override file values, and the effective configuration is written to
//! `config.toml` in the output directory.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::eval::{run_batch, run_scenario, summarize, EstimatorKind, RunRecord, ScenarioConfig, Summary};
use crate::export;
use crate::field::{FieldModel, GroundTruth};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Fraction of runs that must complete for `bench` to succeed.
pub const MIN_COMPLETION: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "onm-field", version, about = "Field estimation from binary measurements with online Newton methods")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a ground-truth field and dump it on the evaluation grid.
    GenerateField(SharedArgs),
    /// Simulate one scenario and write its traces.
    Run(SharedArgs),
    /// Run a seeded batch of scenarios and summarize final MSE.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SharedArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_estimator)]
    pub estimator: Option<EstimatorKind>,
    /// Number of measurements per run.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Number of scenarios per estimator.
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// Also write per-step MSE for every run.
    #[arg(long)]
    pub per_step_mse: bool,
    /// Write zero run times so results files are reproducible.
    #[arg(long)]
    pub no_timing: bool,
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSettings {
    pub size: usize,
    pub workers: usize,
    pub estimators: Vec<EstimatorKind>,
}

impl Default for BatchSettings {
    fn default() -> Self {
        Self { size: 100, workers: 1, estimators: vec![EstimatorKind::Approx, EstimatorKind::Exact] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSettings {
    pub per_step_mse: bool,
    pub timing: bool,
}

impl Default for ExportSettings {
    fn default() -> Self {
        Self { per_step_mse: false, timing: true }
    }
}

/// Scenario settings plus the CLI-only tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliConfig {
    pub scenario: ScenarioConfig,
    pub batch: BatchSettings,
    pub output: OutputSettings,
    pub export: ExportSettings,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        fn take<T: for<'de> Deserialize<'de> + Default>(table: &mut toml::Table, key: &str) -> Result<T, CliError> {
            match table.remove(key) {
                Some(v) => v.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("[{key}] {e}"))),
                None => Ok(T::default()),
            }
        }
        let batch = take(&mut table, "batch")?;
        let output = take(&mut table, "output")?;
        let export = take(&mut table, "export")?;
        let scenario: ScenarioConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Ok(Self { scenario, batch, output, export })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        let ser = |e: toml::ser::Error| CliError::Config(e.to_string());
        let mut table = toml::Table::try_from(&self.scenario).map_err(ser)?;
        table.insert("batch".into(), toml::Value::try_from(&self.batch).map_err(ser)?);
        table.insert("output".into(), toml::Value::try_from(&self.output).map_err(ser)?);
        table.insert("export".into(), toml::Value::try_from(&self.export).map_err(ser)?);
        toml::to_string(&table).map_err(ser)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
            None => Ok(Self::default()),
        }
    }

    fn apply(&mut self, args: &SharedArgs) {
        if let Some(seed) = args.seed {
            self.scenario.seed = seed;
        }
        if let Some(out) = &args.out {
            self.output.dir = out.clone();
        }
        if let Some(kind) = args.estimator {
            self.scenario.estimator = kind;
            self.batch.estimators = vec![kind];
        }
        if let Some(steps) = args.steps {
            self.scenario.steps = steps;
        }
        if let Some(workers) = args.workers {
            self.batch.workers = workers;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.batch.size == 0 {
            return Err(CliError::Config("batch.size must be at least 1".into()));
        }
        if self.batch.workers == 0 {
            return Err(CliError::Config("batch.workers must be at least 1".into()));
        }
        if self.batch.estimators.is_empty() {
            return Err(CliError::Config("batch.estimators must not be empty".into()));
        }
        Ok(())
    }

    /// Resolves file values, then flags.
    pub fn resolve(args: &SharedArgs) -> Result<Self, CliError> {
        let mut cfg = Self::load(args.config.as_deref())?;
        cfg.apply(args);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn prepare_output(cfg: &CliConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let text = cfg.to_toml()?;
    write_file(&dir.join("config.toml"), |w| w.write_all(text.as_bytes()))?;
    Ok(dir)
}

fn write_field_dump(path: &Path, model: &FieldModel, truth: &GroundTruth, cfg: &CliConfig) -> Result<(), CliError> {
    let grid = cfg.scenario.grid().map_err(|e| CliError::Config(e.to_string()))?;
    write_file(path, |w| export::write_field(w, model, truth.noise_std(), truth.threshold(), &grid))
}

/// Writes `field.csv` for the seed's ground truth.
pub fn cmd_generate_field(cfg: &CliConfig) -> Result<PathBuf, CliError> {
    let dir = prepare_output(cfg)?;
    let (truth, _) = cfg.scenario.draw_scenario().map_err(|e| CliError::Config(e.to_string()))?;
    let path = dir.join("field.csv");
    write_field_dump(&path, truth.model(), &truth, cfg)?;
    Ok(path)
}

/// Runs one scenario and writes its artifacts. Returns the record even when
/// the run aborted; the caller maps that to an exit code.
pub fn cmd_run(cfg: &CliConfig) -> Result<RunRecord, CliError> {
    let dir = prepare_output(cfg)?;
    let record = run_scenario(&cfg.scenario, 0).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&dir.join("trace.csv"), |w| export::write_trace(w, &record))?;
    write_file(&dir.join("waypoints.csv"), |w| export::write_waypoints(w, &record))?;
    write_file(&dir.join("mse.csv"), |w| {
        export::write_mse_header(w)?;
        export::write_mse_rows(w, &record)
    })?;
    write_field_dump(&dir.join("truth_field.csv"), record.truth.model(), &record.truth, cfg)?;
    write_field_dump(&dir.join("estimated_field.csv"), &record.estimate, &record.truth, cfg)?;
    Ok(record)
}

pub struct BenchOutcome {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<(EstimatorKind, Summary)>,
}

impl BenchOutcome {
    pub fn all_complete_enough(&self) -> bool {
        self.summaries.iter().all(|(_, s)| s.completion_rate() >= MIN_COMPLETION)
    }
}

/// Runs `batch.size` scenarios per estimator with seeds `seed + i`.
pub fn cmd_bench(cfg: &CliConfig) -> Result<BenchOutcome, CliError> {
    let dir = prepare_output(cfg)?;
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &kind in &cfg.batch.estimators {
        let base = ScenarioConfig { estimator: kind, ..cfg.scenario.clone() };
        let batch = run_batch(&base, cfg.batch.size, cfg.batch.workers).map_err(|e| CliError::Config(e.to_string()))?;
        summaries.push((kind, summarize(&batch)));
        records.extend(batch);
    }
    write_file(&dir.join("results.csv"), |w| export::write_results(w, &records, cfg.export.timing))?;
    let rows: Vec<(String, Summary)> = summaries.iter().map(|(k, s)| (k.to_string(), s.clone())).collect();
    write_file(&dir.join("boxplot.csv"), |w| export::write_boxplot(w, &rows))?;
    if cfg.export.per_step_mse {
        write_file(&dir.join("per_step_mse.csv"), |w| {
            export::write_mse_header(w)?;
            for r in &records {
                export::write_mse_rows(w, r)?;
            }
            Ok(())
        })?;
    }
    Ok(BenchOutcome { records, summaries })
}

pub fn format_summary_table(summaries: &[(EstimatorKind, Summary)]) -> String {
    let mut s = format!(
        "{:<8} {:>11} {:>11} {:>11} {:>13} {:>9}\n",
        "method", "median MSE", "min MSE", "max MSE", "time/run (s)", "complete"
    );
    for (kind, sum) in summaries {
        s.push_str(&format!(
            "{:<8} {:>11.5} {:>11.5} {:>11.5} {:>13.3} {:>5}/{:<3}\n",
            kind.as_str(),
            sum.median,
            sum.min,
            sum.max,
            sum.mean_time_s,
            sum.completed,
            sum.runs
        ));
    }
    s
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::GenerateField(args) => {
            let cfg = CliConfig::resolve(&args)?;
            let path = cmd_generate_field(&cfg)?;
            println!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Run(args) => {
            let cfg = CliConfig::resolve(&args)?;
            let record = cmd_run(&cfg)?;
            println!(
                "{} estimator, seed {}: {} measurements, final MSE {:.6}, {:.3} s",
                record.estimator,
                record.seed,
                record.measurements(),
                record.final_mse,
                record.wall_time_s
            );
            match &record.aborted {
                Some(reason) => {
                    eprintln!("run aborted: {reason}");
                    Ok(EXIT_NUMERICAL)
                }
                None => Ok(EXIT_OK),
            }
        }
        Command::Bench(args) => {
            let mut cfg = CliConfig::load(args.shared.config.as_deref())?;
            cfg.apply(&args.shared);
            if let Some(n) = args.scenarios {
                cfg.batch.size = n;
            }
            if args.per_step_mse {
                cfg.export.per_step_mse = true;
            }
            if args.no_timing {
                cfg.export.timing = false;
            }
            cfg.validate()?;
            let outcome = cmd_bench(&cfg)?;
            print!("{}", format_summary_table(&outcome.summaries));
            if outcome.all_complete_enough() {
                Ok(EXIT_OK)
            } else {
                eprintln!("fewer than {:.0}% of runs completed", MIN_COMPLETION * 100.0);
                Ok(EXIT_NUMERICAL)
            }
        }
    }
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
