//! Sweeps, policy-table caching, bound tables and CSV output.
//!
//! These are the operations behind the `table`, `bounds` and `simulate`
//! subcommands of the `replica-access` binary.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics::{self, in_stability_region, AsymptoticsError, KSelection};
use crate::engine::{run_replicated, EngineError, ReplicatedMetrics, SystemConfig};
use crate::numeric::splitmix64;
use crate::occupancy::{build_policy_table, default_n_max, OccupancyError, PolicyTable};
use crate::policies::Algorithm;

/// Overrides the policy-table cache directory.
pub const CACHE_DIR_ENV: &str = "REPLICA_ACCESS_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = "table-cache";
pub const RESULTS_CSV_VERSION: u32 = 1;
pub const BOUNDS_CSV_VERSION: u32 = 1;
/// Replica cap for the multi-replica bound when none is configured.
pub const DEFAULT_BOUND_K_MAX: u32 = 32;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} holds a different policy table; pass --force to overwrite it")]
    Refused { path: PathBuf },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
}

impl HarnessError {
    /// 2 for configuration problems, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Refused { .. } => 2,
            HarnessError::Engine(EngineError::Config(_)) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// The cache directory: `REPLICA_ACCESS_CACHE_DIR` if set, else `fallback`.
pub fn cache_dir(fallback: &Path) -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => fallback.to_path_buf(),
    }
}

pub fn table_file_name(n_channels: u32, erasure_prob: f64) -> String {
    format!("policy_M{n_channels}_g{erasure_prob}.json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Policy tables keyed by `(M, γ)`, backed by JSON files in one directory.
/// A file is reused only if its version, `M` and `γ` match and it covers
/// `default_n_max(M)` devices; otherwise it is rebuilt and replaced.
#[derive(Debug)]
pub struct TableCache {
    dir: PathBuf,
    tables: HashMap<(u32, u64), Arc<PolicyTable>>,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), tables: HashMap::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&mut self, n_channels: u32, erasure_prob: f64) -> Result<Arc<PolicyTable>> {
        let key = (n_channels, erasure_prob.to_bits());
        if let Some(t) = self.tables.get(&key) {
            return Ok(t.clone());
        }
        let path = self.dir.join(table_file_name(n_channels, erasure_prob));
        let n_max = default_n_max(n_channels);
        let cached = match fs::read_to_string(&path) {
            Ok(text) => match PolicyTable::from_json_for(&text, n_channels, erasure_prob) {
                Ok(t) if t.n_max() >= n_max => Some(t),
                Ok(_) => {
                    log::warn!("{} is too short, rebuilding", path.display());
                    None
                }
                Err(e) => {
                    log::warn!("{} is stale ({e}), rebuilding", path.display());
                    None
                }
            },
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(&path)(e)),
        };
        let table = match cached {
            Some(t) => {
                log::debug!("reusing {}", path.display());
                t
            }
            None => {
                let t = build_policy_table(n_channels, erasure_prob, n_max)?;
                write_atomic(&path, t.to_json().as_bytes())?;
                log::info!("wrote {}", path.display());
                t
            }
        };
        let table = Arc::new(table);
        self.tables.insert(key, table.clone());
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableArgs {
    pub n_channels: u32,
    pub erasure_prob: f64,
    /// Defaults to `default_n_max(M)`.
    pub n_max: Option<u32>,
    pub out: PathBuf,
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableOutcome {
    Written,
    Unchanged,
}

/// Builds a policy table and writes it to `args.out`. An identical existing
/// file is left alone; a different one is replaced only with `force`.
pub fn cmd_table(args: &TableArgs) -> Result<TableOutcome> {
    if args.n_channels == 0 {
        return Err(HarnessError::Config("M must be positive".into()));
    }
    if !(0.0..1.0).contains(&args.erasure_prob) {
        return Err(HarnessError::Config(format!("gamma {} must lie in [0, 1)", args.erasure_prob)));
    }
    let n_max = args.n_max.unwrap_or_else(|| default_n_max(args.n_channels));
    if n_max == 0 {
        return Err(HarnessError::Config("n_max must be positive".into()));
    }
    let json = build_policy_table(args.n_channels, args.erasure_prob, n_max)?.to_json();
    match fs::read(&args.out) {
        Ok(existing) if existing == json.as_bytes() => return Ok(TableOutcome::Unchanged),
        Ok(_) if !args.force => return Err(HarnessError::Refused { path: args.out.clone() }),
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(&args.out)(e)),
    }
    write_atomic(&args.out, json.as_bytes())?;
    Ok(TableOutcome::Written)
}

/// One row of the bounds CSV. Bound columns are empty outside the stability
/// region or when no replica count has a stationary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub gamma: f64,
    pub lambda: f64,
    pub in_region: bool,
    pub h1_eta_star: Option<f64>,
    pub hk_eta_star: Option<f64>,
    pub hk_k_star: Option<u32>,
    pub hk_max_eta_star: Option<f64>,
    pub hk_max_k_star: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsArgs {
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub k_max: u32,
}

/// `0.01, 0.02, ..., 0.36`, covering the stability region at `γ = 0`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=36).map(|i| f64::from(i) / 100.0).collect()
}

fn optional<T>(r: asymptotics::Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(AsymptoticsError::NoRoot { .. } | AsymptoticsError::AllInfeasible { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// One row per `(γ, λ)`, `γ` outermost.
pub fn cmd_bounds(args: &BoundsArgs) -> Result<Vec<BoundRow>> {
    if args.gammas.is_empty() || args.lambdas.is_empty() {
        return Err(HarnessError::Config("gamma and lambda lists must be non-empty".into()));
    }
    if args.k_max == 0 {
        return Err(HarnessError::Config("k_max must be positive".into()));
    }
    let mut rows = Vec::with_capacity(args.gammas.len() * args.lambdas.len());
    for &gamma in &args.gammas {
        if !(0.0..1.0).contains(&gamma) {
            return Err(HarnessError::Config(format!("gamma {gamma} must lie in [0, 1)")));
        }
        for &lambda in &args.lambdas {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(HarnessError::Config(format!("lambda {lambda} must be positive")));
            }
            let mut row = BoundRow {
                gamma,
                lambda,
                in_region: in_stability_region(lambda, gamma),
                h1_eta_star: None,
                hk_eta_star: None,
                hk_k_star: None,
                hk_max_eta_star: None,
                hk_max_k_star: None,
            };
            if row.in_region {
                row.h1_eta_star = optional(asymptotics::h1_limit(lambda, gamma))?.map(|r| r.eta_star);
                if let Some(r) = optional(asymptotics::hk_limit(lambda, gamma, args.k_max, KSelection::MinBacklog))? {
                    row.hk_eta_star = Some(r.eta_star);
                    row.hk_k_star = Some(r.k_star);
                }
                let largest = asymptotics::hk_limit(lambda, gamma, args.k_max, KSelection::MaxIntensity);
                if let Some(r) = optional(largest)? {
                    row.hk_max_eta_star = Some(r.eta_star);
                    row.hk_max_k_star = Some(r.k_star);
                }
            }
            rows.push(row);
        }
    }
    if !rows.iter().any(|r| r.in_region) {
        return Err(HarnessError::Config("no (gamma, lambda) pair lies inside the stability region".into()));
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(out: impl Write, comment: &str, rows: &[T]) -> Result<()> {
    let mut out = out;
    writeln!(out, "# {comment}").map_err(csv::Error::from)?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn bounds_comment() -> String {
    format!("replica-access bounds v{BOUNDS_CSV_VERSION}; backlog per channel as M grows")
}

pub fn write_bounds_csv(out: impl Write, rows: &[BoundRow]) -> Result<()> {
    write_csv(out, &bounds_comment(), rows)
}

/// A sweep: every combination of `m_grid`, `gamma_grid`, `lambda_grid` and
/// `algorithms`, each run `n_replications` times on top of `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Horizon, warm-up, base seed, replica cap and A1 weights. Its channel
    /// count, load, erasure probability and algorithm are replaced per point.
    pub base: SystemConfig,
    pub lambda_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub m_grid: Vec<u32>,
    pub algorithms: Vec<Algorithm>,
    pub n_replications: usize,
    pub output_path: PathBuf,
    pub table_cache_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => HarnessError::Config(format!("{}: not found", path.display())),
            _ => io_err(path)(e),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("lambda_grid", self.lambda_grid.is_empty()),
            ("gamma_grid", self.gamma_grid.is_empty()),
            ("m_grid", self.m_grid.is_empty()),
            ("algorithms", self.algorithms.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(HarnessError::Config(format!("{name} must not be empty")));
        }
        if self.n_replications == 0 {
            return Err(HarnessError::Config("n_replications must be at least 1".into()));
        }
        for p in self.points() {
            p.config.validate()?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut points = Vec::new();
        for &m in &self.m_grid {
            for &gamma in &self.gamma_grid {
                for &lambda in &self.lambda_grid {
                    let seed = point_seed(self.base.seed, m, lambda, gamma);
                    for &algorithm in &self.algorithms {
                        let mut config = self.base.clone();
                        config.n_channels = m;
                        config.load_per_channel = lambda;
                        config.erasure_prob = gamma;
                        config.algorithm = algorithm;
                        config.seed = seed;
                        points.push(SweepPoint { config });
                    }
                }
            }
        }
        points
    }
}

/// Seed of a sweep point, mixed from the base seed and the point's `M`, `λ`
/// and `γ` with SplitMix64. The algorithm is left out, so every controller at
/// a point sees the same arrival path; replication `r` then adds `r`.
pub fn point_seed(base_seed: u64, n_channels: u32, lambda: f64, gamma: f64) -> u64 {
    let mut h = splitmix64(base_seed);
    for word in [u64::from(n_channels), lambda.to_bits(), gamma.to_bits()] {
        h = splitmix64(h ^ word);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub config: SystemConfig,
}

/// One aggregated sweep point. `ci95` is the Student-t half-width of the mean
/// backlog over replications. Delay counts a success in the arrival slot as 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: Algorithm,
    #[serde(rename = "M")]
    pub n_channels: u32,
    pub lambda: f64,
    pub gamma: f64,
    pub seed: u64,
    pub slots: u64,
    pub mean_backlog_per_channel: f64,
    pub ci95: f64,
    pub mean_delay_slots: f64,
    pub throughput_per_channel: f64,
    pub mean_replicas: f64,
    pub bound_eta_star: Option<f64>,
    pub bound_k_star: Option<u32>,
}

/// The many-channel backlog limit matching `config`'s controller family, or
/// `None` outside the stability region.
pub fn matching_bound(config: &SystemConfig) -> Result<Option<(f64, u32)>> {
    let (lambda, gamma) = (config.load_per_channel, config.erasure_prob);
    if lambda <= 0.0 || !in_stability_region(lambda, gamma) {
        return Ok(None);
    }
    let r = match config.algorithm {
        Algorithm::H1 | Algorithm::A1 => optional(asymptotics::h1_limit(lambda, gamma))?,
        Algorithm::Hk | Algorithm::Ak | Algorithm::AkModified => {
            let k_max = config.k_max.unwrap_or(DEFAULT_BOUND_K_MAX).min(config.n_channels);
            optional(asymptotics::hk_limit(lambda, gamma, k_max, KSelection::MinBacklog))?
        }
    };
    Ok(r.map(|r| (r.eta_star, r.k_star)))
}

fn result_row(config: &SystemConfig, m: &ReplicatedMetrics) -> Result<ResultRow> {
    let bound = matching_bound(config)?;
    Ok(ResultRow {
        algorithm: config.algorithm,
        n_channels: config.n_channels,
        lambda: config.load_per_channel,
        gamma: config.erasure_prob,
        seed: config.seed,
        slots: config.horizon_slots - config.warmup(),
        mean_backlog_per_channel: m.mean_backlog_per_channel,
        ci95: m.ci95_backlog,
        mean_delay_slots: m.mean_delay_slots,
        throughput_per_channel: m.throughput_per_channel,
        mean_replicas: m.mean_replicas,
        bound_eta_star: bound.map(|b| b.0),
        bound_k_star: bound.map(|b| b.1),
    })
}

fn results_comment() -> String {
    format!("replica-access results v{RESULTS_CSV_VERSION}; delay in slots, counted inclusively")
}

pub fn write_results_csv(out: impl Write, rows: &[ResultRow]) -> Result<()> {
    write_csv(out, &results_comment(), rows)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateReport {
    pub rows: Vec<ResultRow>,
    pub csv_path: PathBuf,
    pub log_path: PathBuf,
}

/// Runs the sweep and writes the CSV to `out` (default `spec.output_path`) and
/// a one-line-per-point log next to it with the extension `.log`.
pub fn cmd_simulate(spec: &ExperimentSpec, out: Option<&Path>, workers: Option<usize>) -> Result<SimulateReport> {
    spec.validate()?;
    let points = spec.points();

    let mut cache = TableCache::new(cache_dir(&spec.table_cache_dir));
    let mut tables = Vec::with_capacity(points.len());
    for p in &points {
        let c = &p.config;
        tables.push(if c.algorithm.uses_table() { Some(cache.get(c.n_channels, c.erasure_prob)?) } else { None });
    }

    let one = |(p, table): (&SweepPoint, &Option<Arc<PolicyTable>>)| -> Result<(ResultRow, u64)> {
        let m = run_replicated(&p.config, table.clone(), spec.n_replications)?;
        let failures = m.runs.iter().map(|r| r.estimator_failures).sum();
        Ok((result_row(&p.config, &m)?, failures))
    };
    let results: Vec<(ResultRow, u64)> = run_points(workers, &points, &tables, one)?;

    let csv_path = out.map_or_else(|| spec.output_path.clone(), Path::to_path_buf);
    let log_path = csv_path.with_extension("log");
    let mut csv = Vec::new();
    let rows: Vec<ResultRow> = results.iter().map(|(r, _)| r.clone()).collect();
    write_results_csv(&mut csv, &rows)?;
    write_atomic(&csv_path, &csv)?;

    let mut log_text = String::new();
    for (r, failures) in &results {
        let line = format!(
            "algorithm={} M={} lambda={} gamma={} seed={} reps={} backlog={:.6} ci95={:.6} delay={:.4} throughput={:.5} replicas={:.3} bound={} estimator_failures={}",
            r.algorithm,
            r.n_channels,
            r.lambda,
            r.gamma,
            r.seed,
            spec.n_replications,
            r.mean_backlog_per_channel,
            r.ci95,
            r.mean_delay_slots,
            r.throughput_per_channel,
            r.mean_replicas,
            r.bound_eta_star.map_or_else(|| "-".to_string(), |b| format!("{b:.6}")),
            failures
        );
        log::info!("{line}");
        log_text.push_str(&line);
        log_text.push('\n');
    }
    write_atomic(&log_path, log_text.as_bytes())?;
    Ok(SimulateReport { rows, csv_path, log_path })
}

#[cfg(feature = "parallel")]
fn run_points<F, R>(
    workers: Option<usize>,
    points: &[SweepPoint],
    tables: &[Option<Arc<PolicyTable>>],
    one: F,
) -> Result<Vec<R>>
where
    F: Fn((&SweepPoint, &Option<Arc<PolicyTable>>)) -> Result<R> + Sync,
    R: Send,
{
    use rayon::prelude::*;
    let go = || points.par_iter().zip(tables.par_iter()).map(&one).collect::<Result<Vec<R>>>();
    match workers {
        Some(0) => Err(HarnessError::Config("workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(go),
        None => go(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_points<F, R>(
    workers: Option<usize>,
    points: &[SweepPoint],
    tables: &[Option<Arc<PolicyTable>>],
    one: F,
) -> Result<Vec<R>>
where
    F: Fn((&SweepPoint, &Option<Arc<PolicyTable>>)) -> Result<R>,
{
    if workers == Some(0) {
        return Err(HarnessError::Config("workers must be at least 1".into()));
    }
    points.iter().zip(tables).map(one).collect()
}
