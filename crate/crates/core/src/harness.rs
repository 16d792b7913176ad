//! Experiment harness behind the `bench` CLI.
//!
//! Configuration is a flat `key = value` text file; command-line flags are
//! applied on top as further key/value pairs. Runs produce one records CSV
//! per (estimator, dim, nu, seed) and a summary CSV. Output is fully
//! determined by the configuration: floats are written with 9 significant
//! digits and summaries are computed from those rounded values, so a summary
//! recomputed from a records file matches the summary file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::critic::CriticConfig;
use crate::estimators::{
    evaluate, oracle_score_batch, train_estimator, EstimatorError, EstimatorKind, RunRecord,
    ScoreBatch, TrainConfig, MIN_ORACLE_SAMPLES,
};
use crate::gaussian::{true_mi, GaussianTaskConfig};

/// Header of every records file.
pub const RECORDS_HEADER: &str =
    "step,estimator,dim,nu,estimate,joint_term,marg_term,true_mi,guard_triggered,seed";

/// Header of every summary file.
pub const SUMMARY_HEADER: &str =
    "estimator,dim,nu,seed,k,mean_estimate,var_estimate,var_marg_term,guard_rate,diverged";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Every recognized key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("estimator", "rje_b"),
    ("dim", "10"),
    ("nu", "0.5"),
    ("steps", "5000"),
    ("batch_size", "256"),
    ("seed", "0"),
    ("lr", "0.0005"),
    ("hidden", "100,100"),
    ("c", "2"),
    ("a", "4"),
    ("b", "1"),
    ("tau", "5"),
    ("detach_ratio", "true"),
    ("k", "1000"),
    ("out", "bench_out"),
    ("workers", "1"),
    ("nus", "0.3,0.5,0.7,0.8,0.9"),
    ("estimators", "mine,nwj,smile,rje_a,rje_b"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: GaussianTaskConfig,
    pub critic: CriticConfig,
    pub estimator: EstimatorKind,
    pub train: TrainConfig,
    /// Summary window: statistics over the last `k` steps.
    pub k: usize,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Sweep grid.
    pub sweep_nus: Vec<f64>,
    pub sweep_estimators: Vec<EstimatorKind>,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            HarnessError::Config(format!("line {}: expected `key = value`", i + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds a configuration from defaults, then the optional file contents,
/// then `overrides` in order. Unknown keys are rejected.
pub fn parse_config(
    file: Option<&str>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let mut map: BTreeMap<&str, String> =
        DEFAULTS.iter().map(|&(k, v)| (k, v.to_string())).collect();
    let file_pairs = match file {
        Some(text) => parse_key_values(text)?,
        None => Vec::new(),
    };
    for (key, value) in file_pairs.iter().chain(overrides) {
        let known = DEFAULTS
            .iter()
            .find(|(k, _)| *k == key.as_str())
            .map(|(k, _)| *k)
            .ok_or_else(|| HarnessError::Config(format!("unknown key `{key}`")))?;
        map.insert(known, value.clone());
    }
    build_config(&map)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<&str, String>, key: &str) -> Result<T> {
    let raw = &map[key];
    raw.parse()
        .map_err(|_| HarnessError::Config(format!("invalid value `{raw}` for `{key}`")))
}

fn get_list<T: std::str::FromStr>(map: &BTreeMap<&str, String>, key: &str) -> Result<Vec<T>> {
    map[key]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| HarnessError::Config(format!("invalid entry `{s}` in `{key}`")))
        })
        .collect()
}

fn estimator_from(name: &str, map: &BTreeMap<&str, String>) -> Result<EstimatorKind> {
    let kind = match name {
        "mine" => EstimatorKind::Mine,
        "nwj" => EstimatorKind::Nwj,
        "smile" => EstimatorKind::Smile {
            tau: get(map, "tau")?,
        },
        "rje_a" => EstimatorKind::RjeA {
            c: get(map, "c")?,
            detach_ratio: get(map, "detach_ratio")?,
        },
        "rje_b" => EstimatorKind::RjeB {
            a: get(map, "a")?,
            b: get(map, "b")?,
        },
        other => {
            return Err(HarnessError::Config(format!(
                "invalid estimator name `{other}` (expected mine, nwj, smile, rje_a or rje_b)"
            )))
        }
    };
    kind.validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(kind)
}

fn build_config(map: &BTreeMap<&str, String>) -> Result<ExperimentConfig> {
    let dim: usize = get(map, "dim")?;
    let nu: f64 = get(map, "nu")?;
    let seed: u64 = get(map, "seed")?;
    let task =
        GaussianTaskConfig::new(dim, nu, seed).map_err(|e| HarnessError::Config(e.to_string()))?;
    let critic = CriticConfig::new(2 * dim, get_list(map, "hidden")?)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let batch_size: usize = get(map, "batch_size")?;
    if batch_size < 2 {
        return Err(HarnessError::Config(format!(
            "batch_size must be at least 2, got {batch_size}"
        )));
    }
    let learning_rate: f64 = get(map, "lr")?;
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(HarnessError::Config(format!(
            "lr must be positive, got {learning_rate}"
        )));
    }
    let train = TrainConfig {
        batch_size,
        steps: get(map, "steps")?,
        learning_rate,
        seed,
    };
    let k: usize = get(map, "k")?;
    if k == 0 {
        return Err(HarnessError::Config("k must be positive".into()));
    }
    let workers: usize = get(map, "workers")?;
    if workers == 0 {
        return Err(HarnessError::Config("workers must be positive".into()));
    }
    let sweep_nus: Vec<f64> = get_list(map, "nus")?;
    if let Some(bad) = sweep_nus.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(HarnessError::Config(format!(
            "nus entry {bad} must lie in (0, 1)"
        )));
    }
    let sweep_estimators = get_list::<String>(map, "estimators")?
        .iter()
        .map(|name| estimator_from(name, map))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentConfig {
        task,
        critic,
        estimator: estimator_from(&map["estimator"], map)?,
        train,
        k,
        output_dir: PathBuf::from(&map["out"]),
        workers,
        sweep_nus,
        sweep_estimators,
    })
}

impl ExperimentConfig {
    /// Serializes back to the key-value format accepted by [`parse_config`].
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let hidden: Vec<String> = self
            .critic
            .hidden_widths
            .iter()
            .map(|w| w.to_string())
            .collect();
        let (c, detach, a, b, tau) = self.estimator_params();
        let nus: Vec<String> = self.sweep_nus.iter().map(|v| v.to_string()).collect();
        let names: Vec<&str> = self.sweep_estimators.iter().map(|e| e.name()).collect();
        let rows = [
            ("estimator", self.estimator.name().to_string()),
            ("dim", self.task.dim.to_string()),
            ("nu", self.task.nu.to_string()),
            ("steps", self.train.steps.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("seed", self.train.seed.to_string()),
            ("lr", self.train.learning_rate.to_string()),
            ("hidden", hidden.join(",")),
            ("c", c),
            ("a", a),
            ("b", b),
            ("tau", tau),
            ("detach_ratio", detach),
            ("k", self.k.to_string()),
            ("out", self.output_dir.display().to_string()),
            ("workers", self.workers.to_string()),
            ("nus", nus.join(",")),
            ("estimators", names.join(",")),
        ];
        for (key, value) in rows {
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }

    fn estimator_params(&self) -> (String, String, String, String, String) {
        let mut c = DEFAULTS[8].1.to_string();
        let mut a = DEFAULTS[9].1.to_string();
        let mut b = DEFAULTS[10].1.to_string();
        let mut tau = DEFAULTS[11].1.to_string();
        let mut detach = DEFAULTS[12].1.to_string();
        for kind in std::iter::once(&self.estimator).chain(&self.sweep_estimators) {
            match *kind {
                EstimatorKind::Smile { tau: t } => tau = t.to_string(),
                EstimatorKind::RjeA {
                    c: cc,
                    detach_ratio,
                } => {
                    c = cc.to_string();
                    detach = detach_ratio.to_string();
                }
                EstimatorKind::RjeB { a: aa, b: bb } => {
                    a = aa.to_string();
                    b = bb.to_string();
                }
                _ => {}
            }
        }
        (c, detach, a, b, tau)
    }

    /// Same configuration with a different estimator and correlation.
    pub fn with_cell(&self, estimator: EstimatorKind, nu: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.estimator = estimator;
        cfg.task = GaussianTaskConfig::new(cfg.task.dim, nu, cfg.task.seed)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// File name of this run's records.
    pub fn records_file_name(&self) -> String {
        format!(
            "records_{}_dim{}_nu{}_seed{}.csv",
            self.estimator.name(),
            self.task.dim,
            self.task.nu,
            self.train.seed
        )
    }
}

/// Summary statistics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub estimator: String,
    pub dim: usize,
    pub nu: f64,
    pub seed: u64,
    pub k: usize,
    pub mean_estimate_last_k: f64,
    pub var_estimate_last_k: f64,
    pub var_marg_term_last_k: f64,
    pub guard_rate: f64,
    pub diverged: bool,
}

/// `|estimate| > 10 * true_mi + 100`, or non-finite.
pub fn is_divergent(estimate: f64, mi: f64) -> bool {
    !estimate.is_finite() || estimate.abs() > 10.0 * mi + 100.0
}

/// Formats like C's `%.9g`: 9 significant digits, trailing zeros removed,
/// scientific notation outside `1e-4 <= |x| < 1e9`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Value as it will be read back from a CSV file.
fn rounded(x: f64) -> f64 {
    match format_float(x).as_str() {
        "NaN" => f64::NAN,
        s => s.parse().expect("formatted float parses"),
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Statistics over the last `min(k, len)` records. Divergence is judged on
/// every record; the guard rate covers the whole run.
pub fn summarize(records: &[RunRecord], k: usize, fallback: &ExperimentConfig) -> RunSummary {
    let window = &records[records.len().saturating_sub(k)..];
    let estimates: Vec<f64> = window.iter().map(|r| rounded(r.estimate)).collect();
    let margs: Vec<f64> = window.iter().map(|r| rounded(r.marg_term)).collect();
    let mean = if estimates.is_empty() {
        f64::NAN
    } else {
        estimates.iter().sum::<f64>() / estimates.len() as f64
    };
    let guards = records.iter().filter(|r| r.guard_triggered).count();
    let (estimator, dim, nu, seed) = match records.first() {
        Some(r) => (r.estimator.clone(), r.dim, rounded(r.nu), r.seed),
        None => (
            fallback.estimator.name().to_string(),
            fallback.task.dim,
            rounded(fallback.task.nu),
            fallback.train.seed,
        ),
    };
    RunSummary {
        estimator,
        dim,
        nu,
        seed,
        k: window.len(),
        mean_estimate_last_k: mean,
        var_estimate_last_k: sample_variance(&estimates),
        var_marg_term_last_k: sample_variance(&margs),
        guard_rate: if records.is_empty() {
            0.0
        } else {
            guards as f64 / records.len() as f64
        },
        diverged: records
            .iter()
            .any(|r| is_divergent(rounded(r.estimate), rounded(r.true_mi))),
    }
}

/// Trains one configuration and summarizes it. Writes nothing.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Vec<RunRecord>, RunSummary)> {
    let run = train_estimator(
        &config.task,
        &config.critic,
        &config.estimator,
        &config.train,
    )?;
    let summary = summarize(&run.records, config.k, config);
    Ok((run.records, summary))
}

/// Records as CSV text with LF line endings.
pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.estimator,
            r.dim,
            format_float(r.nu),
            format_float(r.estimate),
            format_float(r.joint_term),
            format_float(r.marg_term),
            format_float(r.true_mi),
            u8::from(r.guard_triggered),
            r.seed
        )
        .unwrap();
    }
    out
}

pub fn summaries_to_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.estimator,
            s.dim,
            format_float(s.nu),
            s.seed,
            s.k,
            format_float(s.mean_estimate_last_k),
            format_float(s.var_estimate_last_k),
            format_float(s.var_marg_term_last_k),
            format_float(s.guard_rate),
            u8::from(s.diverged)
        )
        .unwrap();
    }
    out
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| HarnessError::Config(format!("records line {line}: bad field `{field}`")))
}

/// Reads a records CSV produced by [`records_to_csv`].
pub fn records_from_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(RECORDS_HEADER) {
        return Err(HarnessError::Config(
            "records file has an unexpected header".into(),
        ));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(HarnessError::Config(format!(
                    "records line {}: expected 10 fields",
                    i + 2
                )));
            }
            let float = |s: &str| -> Result<f64> {
                match s {
                    "NaN" => Ok(f64::NAN),
                    s => parse_field(s, i + 2),
                }
            };
            Ok(RunRecord {
                step: parse_field(f[0], i + 2)?,
                estimator: f[1].to_string(),
                dim: parse_field(f[2], i + 2)?,
                nu: float(f[3])?,
                estimate: float(f[4])?,
                joint_term: float(f[5])?,
                marg_term: float(f[6])?,
                true_mi: float(f[7])?,
                guard_triggered: f[8] == "1",
                seed: parse_field(f[9], i + 2)?,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the records file and the summary file.
pub fn write_csv(
    records: &[RunRecord],
    summaries: &[RunSummary],
    records_path: &Path,
    summary_path: &Path,
) -> Result<()> {
    write_file(records_path, &records_to_csv(records))?;
    write_file(summary_path, &summaries_to_csv(summaries))
}

/// Output of a single `bench run`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records_path: PathBuf,
    pub summary_path: PathBuf,
    pub summary: RunSummary,
}

/// Runs one configuration and writes `records_*.csv` and `summary.csv` into
/// the configured output directory.
pub fn run_and_write(config: &ExperimentConfig) -> Result<RunOutput> {
    let (records, summary) = run_experiment(config)?;
    let records_path = config.output_dir.join(config.records_file_name());
    let summary_path = config.output_dir.join("summary.csv");
    write_csv(
        &records,
        std::slice::from_ref(&summary),
        &records_path,
        &summary_path,
    )?;
    Ok(RunOutput {
        records_path,
        summary_path,
        summary,
    })
}

/// Cells of the sweep grid in output order: nu-major, then estimator.
pub fn sweep_cells(config: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let mut cells = Vec::new();
    for &nu in &config.sweep_nus {
        for kind in &config.sweep_estimators {
            cells.push(config.with_cell(*kind, nu)?);
        }
    }
    Ok(cells)
}

/// Runs every sweep cell on `config.workers` threads. Each cell owns its
/// generator, critic and output file; the summary file is written once at the
/// end in grid order, so the output does not depend on the worker count.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let cells = sweep_cells(config)?;
    let workers = config.workers.min(cells.len()).max(1);
    let mut results: Vec<Option<Result<RunSummary>>> = (0..cells.len()).map(|_| None).collect();
    let run_cell = |cell: &ExperimentConfig| -> Result<RunSummary> {
        let (records, summary) = run_experiment(cell)?;
        write_file(
            &cell.output_dir.join(cell.records_file_name()),
            &records_to_csv(&records),
        )?;
        Ok(summary)
    };
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let cells = &cells;
                let run_cell = &run_cell;
                scope.spawn(move || {
                    (w..cells.len())
                        .step_by(workers)
                        .map(|i| (i, run_cell(&cells[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("sweep worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let summaries = results
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;
    write_file(
        &config.output_dir.join("summary.csv"),
        &summaries_to_csv(&summaries),
    )?;
    Ok(summaries)
}

/// One estimator evaluated at the oracle critic.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub estimator: String,
    pub shift: f64,
    pub estimate: f64,
    pub true_mi: f64,
}

/// Marginal-term variability at the oracle critic for one correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub nu: f64,
    pub true_mi: f64,
    /// Sample variance of `e^{T*}` under the product of marginals.
    pub nwj_summand_var: f64,
    /// Variance of each estimator's marginal term across batches.
    pub mine_marg_var: f64,
    pub nwj_marg_var: f64,
    pub rje_b_marg_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub dim: usize,
    pub nu: f64,
    pub n_samples: usize,
    pub rows: Vec<OracleRow>,
    pub variance: Vec<VarianceRow>,
}

/// Batch size used for the marginal-term variance probe.
pub const VARIANCE_BATCH: usize = 256;

/// Shifts scanned for the reverse Jensen estimators. Their value at
/// `T* + s` rises towards the true information as `s` decreases, so the
/// oracle row reports the best shift on this grid.
pub const RJE_ORACLE_SHIFTS: [f64; 31] = {
    let mut grid = [0.0; 31];
    let mut i = 0;
    while i < 31 {
        grid[i] = -(i as f64);
        i += 1;
    }
    grid
};

/// Evaluates every estimator at the oracle critic `log dP/dQ + shift` and
/// probes how the marginal-term variance grows with the mutual information
/// over `nus`. MINE and SMILE use shift 0, NWJ both its optimal shift 1 and
/// shift 0, the reverse Jensen estimators the best of [`RJE_ORACLE_SHIFTS`].
pub fn oracle_suite(
    task: &GaussianTaskConfig,
    n_samples: usize,
    kinds: &[EstimatorKind],
    nus: &[f64],
) -> Result<OracleReport> {
    if n_samples < MIN_ORACLE_SAMPLES {
        return Err(HarnessError::Config(format!(
            "oracle evaluation needs at least {MIN_ORACLE_SAMPLES} samples, got {n_samples}"
        )));
    }
    let mi = true_mi(task);
    let scores = oracle_score_batch(task, n_samples, 0.0, &mut task.rng())?;
    let mut rows = Vec::new();
    for kind in kinds {
        let shifts: &[f64] = match kind {
            EstimatorKind::Nwj => &[1.0, 0.0],
            EstimatorKind::RjeA { .. } | EstimatorKind::RjeB { .. } => &RJE_ORACLE_SHIFTS,
            _ => &[0.0],
        };
        let mut evaluated = Vec::with_capacity(shifts.len());
        for &shift in shifts {
            evaluated.push((shift, evaluate(kind, &scores.shifted(shift)?)?.value));
        }
        if matches!(
            kind,
            EstimatorKind::RjeA { .. } | EstimatorKind::RjeB { .. }
        ) {
            let best = evaluated
                .iter()
                .copied()
                .fold(
                    (0.0, f64::NEG_INFINITY),
                    |acc, x| if x.1 > acc.1 { x } else { acc },
                );
            evaluated = vec![best];
        }
        for (shift, estimate) in evaluated {
            rows.push(OracleRow {
                estimator: kind.name().to_string(),
                shift,
                estimate,
                true_mi: mi,
            });
        }
    }
    let rje_b = kinds
        .iter()
        .copied()
        .find(|k| matches!(k, EstimatorKind::RjeB { .. }))
        .unwrap_or(EstimatorKind::RjeB { a: 4.0, b: 1.0 });
    let mut variance = Vec::new();
    for &nu in nus {
        let cell = GaussianTaskConfig::new(task.dim, nu, task.seed)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let scores = oracle_score_batch(&cell, n_samples, 0.0, &mut cell.rng())?;
        let summands: Vec<f64> = scores.marg().iter().map(|s| s.exp()).collect();
        let mut mine = Vec::new();
        let mut nwj = Vec::new();
        let mut rje = Vec::new();
        for (j, m) in scores
            .joint()
            .chunks_exact(VARIANCE_BATCH)
            .zip(scores.marg().chunks_exact(VARIANCE_BATCH))
        {
            let b = ScoreBatch::new(j.to_vec(), m.to_vec())?;
            mine.push(evaluate(&EstimatorKind::Mine, &b)?.marg_term);
            nwj.push(evaluate(&EstimatorKind::Nwj, &b.shifted(1.0)?)?.marg_term);
            rje.push(evaluate(&rje_b, &b)?.marg_term);
        }
        variance.push(VarianceRow {
            nu,
            true_mi: true_mi(&cell),
            nwj_summand_var: sample_variance(&summands),
            mine_marg_var: sample_variance(&mine),
            nwj_marg_var: sample_variance(&nwj),
            rje_b_marg_var: sample_variance(&rje),
        });
    }
    Ok(OracleReport {
        dim: task.dim,
        nu: task.nu,
        n_samples,
        rows,
        variance,
    })
}

impl OracleReport {
    /// Two CSV blocks separated by a blank line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,shift,estimate,true_mi,error\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.estimator,
                format_float(r.shift),
                format_float(r.estimate),
                format_float(r.true_mi),
                format_float(r.estimate - r.true_mi)
            )
            .unwrap();
        }
        out.push_str("\nnu,true_mi,nwj_summand_var,mine_marg_var,nwj_marg_var,rje_b_marg_var\n");
        for v in &self.variance {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                format_float(v.nu),
                format_float(v.true_mi),
                format_float(v.nwj_summand_var),
                format_float(v.mine_marg_var),
                format_float(v.nwj_marg_var),
                format_float(v.rje_b_marg_var)
            )
            .unwrap();
        }
        out
    }
}
