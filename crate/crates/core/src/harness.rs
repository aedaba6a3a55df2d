//! Seeded trial sweeps, result persistence and plot aggregates.
//!
//! The harness runs in `f64`. Every trial draws fresh channels from a seed
//! derived from `(master seed, sweep value, trial index)`, so records do not
//! depend on execution order or on the number of worker threads.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_channels, SystemConfig};
use crate::error::{Error, Result};
use crate::init::{initialize, InitMethod};
use crate::oracle::{evaluate_sinr, multistart_search};
use crate::psa::{run_psa, SolverOptions};
use crate::rng::derive_seed;
use crate::scalar::db_to_linear;
use crate::transform::{
    build_transformed_problem, default_model, reconstruct_beamformers, CovarianceModel,
};

const CHANNEL_LABEL: u64 = 1;
const INIT_LABEL: u64 = 2;
const SOLVER_LABEL: u64 = 3;
const ORACLE_LABEL: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NAntennas,
    /// Sets every group to the same number of users.
    UsersPerGroup,
}

impl SweepAxis {
    /// Accepts `N`/`n_antennas` and `K`/`users_per_group`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "N" | "n" | "n_antennas" => Ok(SweepAxis::NAntennas),
            "K" | "k" | "users_per_group" => Ok(SweepAxis::UsersPerGroup),
            _ => Err(Error::Usage(format!("unknown sweep axis {s:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::NAntennas => "n_antennas",
            SweepAxis::UsersPerGroup => "users_per_group",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub n_samples: usize,
    pub n_refine: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            n_samples: 100_000,
            n_refine: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub base_config: SystemConfig<f64>,
    /// Large-scale fading per user; all ones when absent. Only valid for
    /// sweeps that keep the user layout fixed.
    pub betas: Option<Vec<f64>>,
    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<usize>,
    pub n_trials: usize,
    pub master_seed: u64,
    pub solver: SolverOptions,
    pub init_method: InitMethod,
    /// Covariance builder; chosen from the SINR weights when absent.
    pub covariance: Option<CovarianceModel>,
    pub oracle: Option<OracleParams>,
    /// Worker threads for trial-level parallelism; sequential when `None`.
    pub jobs: Option<usize>,
}

impl ExperimentSpec {
    /// Experiment defaults: `G = 3`, `K = 10`, `N = 100`, `gamma = 10 dB`,
    /// `P / sigma^2 = 10 dB`, `sigma^2 = 1`.
    pub fn default_config() -> SystemConfig<f64> {
        SystemConfig::uniform(100, 3, 10, db_to_linear(10.0), db_to_linear(10.0), 1.0)
            .expect("default configuration is valid")
    }

    pub fn new(base_config: SystemConfig<f64>) -> Self {
        let n = base_config.n_antennas;
        ExperimentSpec {
            base_config,
            betas: None,
            sweep_axis: SweepAxis::NAntennas,
            sweep_values: vec![n],
            n_trials: 1,
            master_seed: 0,
            solver: SolverOptions::default(),
            init_method: InitMethod::Equal,
            covariance: None,
            oracle: None,
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base_config.validate()?;
        self.solver.validate()?;
        if self.sweep_values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.sweep_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sweep values must be strictly increasing".into(),
            ));
        }
        if self.sweep_values.contains(&0) {
            return Err(Error::Config("sweep values must be positive".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if let Some(o) = &self.oracle {
            if o.n_samples == 0 {
                return Err(Error::Config("oracle needs at least one sample".into()));
            }
        }
        if self.sweep_axis == SweepAxis::UsersPerGroup {
            if self.betas.is_some() {
                return Err(Error::Config(
                    "per-user betas cannot be combined with a sweep over users_per_group".into(),
                ));
            }
            if !self.base_config.weights_all_equal() {
                return Err(Error::Config(
                    "a sweep over users_per_group needs a common SINR weight".into(),
                ));
            }
        }
        if let Some(b) = &self.betas {
            if b.len() != self.base_config.total_users() {
                return Err(Error::Config(format!(
                    "expected {} betas, got {}",
                    self.base_config.total_users(),
                    b.len()
                )));
            }
        }
        Ok(())
    }

    /// System configuration at one sweep value.
    pub fn config_at(&self, value: usize) -> Result<SystemConfig<f64>> {
        let base = &self.base_config;
        match self.sweep_axis {
            SweepAxis::NAntennas => SystemConfig::new(
                value,
                base.users_per_group.clone(),
                base.power_budget,
                base.noise_var,
                base.sinr_weights.clone(),
            ),
            SweepAxis::UsersPerGroup => SystemConfig::uniform(
                base.n_antennas,
                base.n_groups(),
                value,
                base.sinr_weights[0],
                base.power_budget,
                base.noise_var,
            ),
        }
    }

    /// Seed of trial `trial` at sweep value `value`.
    pub fn trial_seed(&self, value: usize, trial: usize) -> u64 {
        derive_seed(self.master_seed, &[value as u64, trial as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub seed: u64,
    pub N: usize,
    pub G: usize,
    /// Users per group (the largest group when sizes differ).
    pub K: usize,
    pub min_sinr_db: f64,
    pub iterations: usize,
    pub stop_reason: String,
    pub wall_time_precompute_s: f64,
    pub wall_time_solve_s: f64,
    pub stationarity_final: f64,
    pub oracle_min_sinr_db: Option<f64>,
}

impl TrialRecord {
    /// Equality ignoring the wall-time fields.
    pub fn same_outcome(&self, other: &TrialRecord) -> bool {
        let strip = |r: &TrialRecord| TrialRecord {
            wall_time_precompute_s: 0.0,
            wall_time_solve_s: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub sweep_value: usize,
    pub trial_index: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    /// Ordered by sweep value, then trial index.
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
}

fn min_db(values: &[f64]) -> f64 {
    10.0 * values.iter().copied().fold(f64::INFINITY, f64::min).log10()
}

fn run_trial(spec: &ExperimentSpec, value: usize, trial: usize) -> Result<TrialRecord> {
    let seed = spec.trial_seed(value, trial);
    let config = spec.config_at(value)?;
    let betas = spec
        .betas
        .clone()
        .unwrap_or_else(|| vec![1.0; config.total_users()]);
    let channels = generate_channels(&config, &betas, derive_seed(seed, &[CHANNEL_LABEL]))?;

    let start = Instant::now();
    let model = spec.covariance.unwrap_or_else(|| default_model(&config));
    let problem = build_transformed_problem(&config, &channels, model)?;
    let init = match &spec.init_method {
        InitMethod::Random(s) => InitMethod::Random(derive_seed(seed, &[INIT_LABEL, *s])),
        m => m.clone(),
    };
    let x0 = initialize(&problem, &init)?;
    let setup = start.elapsed().as_secs_f64();

    let solver = SolverOptions {
        rng_seed: derive_seed(seed, &[SOLVER_LABEL, spec.solver.rng_seed]),
        ..spec.solver.clone()
    };
    let report = run_psa(&problem, &x0, &solver)?;
    let min_sinr_db = report.min_sinr_db();
    if !min_sinr_db.is_finite() {
        return Err(Error::Numeric(format!(
            "minimum SINR {} dB is not finite",
            min_sinr_db
        )));
    }

    let oracle_min_sinr_db = match &spec.oracle {
        None => None,
        Some(o) => {
            let found = multistart_search(
                &problem,
                o.n_samples,
                o.n_refine,
                derive_seed(seed, &[ORACLE_LABEL]),
                &solver,
            )?;
            let w = reconstruct_beamformers(&problem, &found.x_best)?;
            Some(min_db(&evaluate_sinr(&config, &w, &channels)?))
        }
    };

    Ok(TrialRecord {
        trial_index: trial,
        seed,
        N: config.n_antennas,
        G: config.n_groups(),
        K: config.users_per_group.iter().copied().max().unwrap_or(0),
        min_sinr_db,
        iterations: report.iterations_run,
        stop_reason: report.stop_reason.as_str().to_string(),
        wall_time_precompute_s: setup + report.wall_time_precompute,
        wall_time_solve_s: report.wall_time_solve,
        stationarity_final: report.stationarity_final,
        oracle_min_sinr_db,
    })
}

/// Runs every `(sweep value, trial)` pair. Failed trials are collected
/// separately and do not stop the run.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = spec
        .sweep_values
        .iter()
        .flat_map(|&v| (0..spec.n_trials).map(move |t| (v, t)))
        .collect();
    let run = |&(v, t): &(usize, usize)| (v, t, run_trial(spec, v, t));
    let results: Vec<_> = match spec.jobs {
        None | Some(1) => jobs.iter().map(run).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(|| jobs.par_iter().map(run).collect()),
    };
    let mut outcome = ExperimentOutcome::default();
    for (v, t, r) in results {
        match r {
            Ok(rec) => outcome.records.push(rec),
            Err(e) => outcome.failures.push(TrialFailure {
                sweep_value: v,
                trial_index: t,
                seed: spec.trial_seed(v, t),
                reason: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultFormat {
    Csv,
    Json,
}

impl ResultFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ResultFormat::Csv),
            "json" => Ok(ResultFormat::Json),
            _ => Err(Error::Usage(format!("unknown result format {s:?}"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 12] = [
    "trial",
    "seed",
    "N",
    "G",
    "K",
    "min_sinr_db",
    "iterations",
    "stop_reason",
    "wall_time_precompute_s",
    "wall_time_solve_s",
    "stationarity_final",
    "oracle_min_sinr_db",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::parse(path, e.to_string())
    }
}

/// Writes CSV to any sink; `path` only labels errors.
pub fn write_csv_to<W: std::io::Write>(
    records: &[TrialRecord],
    sink: W,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in records {
        // `{}` on f64 prints the shortest representation that parses back exactly.
        let row = [
            r.trial_index.to_string(),
            r.seed.to_string(),
            r.N.to_string(),
            r.G.to_string(),
            r.K.to_string(),
            r.min_sinr_db.to_string(),
            r.iterations.to_string(),
            r.stop_reason.clone(),
            r.wall_time_precompute_s.to_string(),
            r.wall_time_solve_s.to_string(),
            r.stationarity_final.to_string(),
            r.oracle_min_sinr_db
                .map(|v| v.to_string())
                .unwrap_or_default(),
        ];
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::parse(path, "unexpected CSV header"));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |col: &str| Error::parse(path, format!("row {}: bad {col}", line + 1));
        macro_rules! field {
            ($i:expr) => {
                row[$i].parse().map_err(|_| bad(CSV_COLUMNS[$i]))?
            };
        }
        out.push(TrialRecord {
            trial_index: field!(0),
            seed: field!(1),
            N: field!(2),
            G: field!(3),
            K: field!(4),
            min_sinr_db: field!(5),
            iterations: field!(6),
            stop_reason: row[7].to_string(),
            wall_time_precompute_s: field!(8),
            wall_time_solve_s: field!(9),
            stationarity_final: field!(10),
            oracle_min_sinr_db: if row[11].is_empty() {
                None
            } else {
                Some(field!(11))
            },
        });
    }
    Ok(out)
}

pub fn write_results(
    records: &[TrialRecord],
    path: impl AsRef<Path>,
    format: ResultFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        ResultFormat::Csv => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            write_csv_to(records, file, path)
        }
        ResultFormat::Json => {
            let text = serde_json::to_string_pretty(records)
                .map_err(|e| Error::parse(path, e.to_string()))?;
            fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_results(path: impl AsRef<Path>, format: ResultFormat) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    match format {
        ResultFormat::Csv => read_csv(path),
        ResultFormat::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
        }
    }
}

/// Aggregate over all trials sharing one `(N, G, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub n: usize,
    pub g: usize,
    pub k: usize,
    pub trials: usize,
    pub mean_min_sinr_db: f64,
    /// Sample standard deviation over `sqrt(trials)`; NaN for a single trial.
    pub stderr_min_sinr_db: f64,
    pub mean_precompute_s: f64,
    pub mean_solve_s: f64,
    pub mean_solve_per_iter_s: f64,
    pub mean_iterations: f64,
    pub mean_oracle_min_sinr_db: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Groups records by `(N, G, K)` in ascending order.
pub fn aggregate(records: &[TrialRecord]) -> Result<Vec<PlotRow>> {
    if records.is_empty() {
        return Err(Error::Usage("no records to aggregate".into()));
    }
    let mut keys: Vec<(usize, usize, usize)> = records.iter().map(|r| (r.N, r.G, r.K)).collect();
    keys.sort_unstable();
    keys.dedup();
    Ok(keys
        .into_iter()
        .map(|(n, g, k)| {
            let rs: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| (r.N, r.G, r.K) == (n, g, k))
                .collect();
            let m = rs.len();
            let mu = mean(rs.iter().map(|r| r.min_sinr_db));
            let stderr = if m > 1 {
                let var =
                    rs.iter().map(|r| (r.min_sinr_db - mu).powi(2)).sum::<f64>() / (m - 1) as f64;
                (var / m as f64).sqrt()
            } else {
                f64::NAN
            };
            let oracle: Vec<f64> = rs.iter().filter_map(|r| r.oracle_min_sinr_db).collect();
            PlotRow {
                n,
                g,
                k,
                trials: m,
                mean_min_sinr_db: mu,
                stderr_min_sinr_db: stderr,
                mean_precompute_s: mean(rs.iter().map(|r| r.wall_time_precompute_s)),
                mean_solve_s: mean(rs.iter().map(|r| r.wall_time_solve_s)),
                mean_solve_per_iter_s: mean(
                    rs.iter()
                        .map(|r| r.wall_time_solve_s / r.iterations.max(1) as f64),
                ),
                mean_iterations: mean(rs.iter().map(|r| r.iterations as f64)),
                mean_oracle_min_sinr_db: (!oracle.is_empty()).then(|| mean(oracle.iter().copied())),
            }
        })
        .collect())
}

/// Writes whitespace-separated aggregates, one row per `(N, G, K)`, after a
/// single header line.
pub fn emit_plot_data(records: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rows = aggregate(records)?;
    let mut out = Vec::new();
    let io = |e| Error::io(path, e);
    writeln!(
        out,
        "N G K trials mean_min_sinr_db stderr_min_sinr_db mean_precompute_s mean_solve_s \
         mean_solve_per_iter_s mean_iterations mean_oracle_min_sinr_db"
    )
    .map_err(io)?;
    for r in rows {
        let oracle = r
            .mean_oracle_min_sinr_db
            .map(|v| v.to_string())
            .unwrap_or_else(|| "nan".into());
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {}",
            r.n,
            r.g,
            r.k,
            r.trials,
            r.mean_min_sinr_db,
            r.stderr_min_sinr_db,
            r.mean_precompute_s,
            r.mean_solve_s,
            r.mean_solve_per_iter_s,
            r.mean_iterations,
            oracle
        )
        .map_err(io)?;
    }
    fs::write(path, out).map_err(io)
}
