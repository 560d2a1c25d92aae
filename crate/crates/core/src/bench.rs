//! Rejection and speedup metrics, and a harness that runs strategy
//! comparisons over batches of instances.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::dictionary::{gen_synthetic, lambda_max, Dictionary, TargetMode, TargetVector, DEFAULT_CHUNK_SIZE};
use crate::error::{Error, Result};
use crate::region::KeepMask;
use crate::sequence::{run_sequence, NoiseConfig, RunOptions, SequenceStrategy, StrategyKind};
use crate::solver::{solve_lasso, LassoProblem, SolverConfig};

pub const REPORT_VERSION: u32 = 1;

pub const DEFAULT_MEMORY_CAP_BYTES: usize = 512 * 1024 * 1024;

pub const DEFAULT_REPETITIONS: usize = 3;

/// Fraction of features rejected at the final step: `(p - kept_N) / p`.
pub fn rejection_percentage(masks: &[KeepMask], p: usize) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be at least 1".into()));
    }
    let last = masks
        .last()
        .ok_or_else(|| Error::InvalidParameter("no screening masks".into()))?;
    if last.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "final mask has {} entries, expected {p}",
            last.len()
        )));
    }
    Ok((p - last.kept_count()) as f64 / p as f64)
}

/// `baseline_seconds / sequence_seconds`.
pub fn speedup(baseline_seconds: f64, sequence_seconds: f64) -> Result<f64> {
    if !(baseline_seconds > 0.0) || !(sequence_seconds > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "timings must be positive, got {baseline_seconds} and {sequence_seconds}"
        )));
    }
    Ok(baseline_seconds / sequence_seconds)
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
/// The standard error of fewer than two values is reported as zero.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Synthetic {
        d: usize,
        p: usize,
        seed: u64,
        #[serde(default = "default_target")]
        target: TargetMode,
    },
    /// `count` synthetic instances with seeds `first_seed, first_seed + 1, ...`.
    Batch {
        d: usize,
        p: usize,
        first_seed: u64,
        count: usize,
        #[serde(default = "default_target")]
        target: TargetMode,
    },
    Files {
        dict: PathBuf,
        x: PathBuf,
        /// Stream the dictionary from disk instead of loading it.
        #[serde(default)]
        file_backed: bool,
    },
}

fn default_target() -> TargetMode {
    TargetMode::Random
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_memory_cap() -> usize {
    DEFAULT_MEMORY_CAP_BYTES
}

fn default_chunk_size() -> usize {
    DEFAULT_CHUNK_SIZE
}

fn default_noise_levels() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub instances: Vec<InstanceSpec>,
    /// Targets as fractions of `lambda_max`.
    pub lambda_ratios: Vec<f64>,
    pub strategies: Vec<SequenceStrategy>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Kept-column byte budget; cells above it are marked incomplete.
    #[serde(default = "default_memory_cap")]
    pub memory_cap_bytes: usize,
    /// Run cells concurrently; timing and speedup columns are left empty.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    /// Noise-to-signal ratios; 0 means a noiseless run.
    #[serde(default = "default_noise_levels")]
    pub noise_levels: Vec<f64>,
    #[serde(default)]
    pub noise_threshold: Option<f64>,
    #[serde(default)]
    pub noise_seed: u64,
}

impl BenchConfig {
    pub fn new(instances: Vec<InstanceSpec>, lambda_ratios: Vec<f64>, strategies: Vec<SequenceStrategy>) -> Self {
        BenchConfig {
            instances,
            lambda_ratios,
            strategies,
            repetitions: DEFAULT_REPETITIONS,
            memory_cap_bytes: DEFAULT_MEMORY_CAP_BYTES,
            parallel: false,
            solver: SolverConfig::default(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            noise_levels: default_noise_levels(),
            noise_threshold: None,
            noise_seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.instances.is_empty() || self.lambda_ratios.is_empty() || self.strategies.is_empty() {
            return bad("instances, lambda_ratios and strategies must be non-empty");
        }
        if self.lambda_ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad("lambda ratios must be positive");
        }
        if self.repetitions == 0 || self.chunk_size == 0 {
            return bad("repetitions and chunk_size must be at least 1");
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|v| !(*v >= 0.0)) {
            return bad("noise levels must be non-negative");
        }
        for s in &self.strategies {
            s.validate()?;
        }
        self.solver.validate()
    }

    fn expand_instances(&self) -> Vec<InstanceSpec> {
        let mut out = Vec::new();
        for spec in &self.instances {
            match spec {
                InstanceSpec::Batch {
                    d,
                    p,
                    first_seed,
                    count,
                    target,
                } => out.extend((0..*count as u64).map(|i| InstanceSpec::Synthetic {
                    d: *d,
                    p: *p,
                    seed: first_seed + i,
                    target: *target,
                })),
                other => out.push(other.clone()),
            }
        }
        out
    }
}

impl InstanceSpec {
    pub fn name(&self) -> String {
        match self {
            InstanceSpec::Synthetic { d, p, seed, target } => {
                let t = match target {
                    TargetMode::Random => "random",
                    TargetMode::InRange => "in-range",
                };
                format!("synthetic-{d}x{p}-{t}-seed{seed}")
            }
            InstanceSpec::Batch { d, p, first_seed, count, .. } => {
                format!("batch-{d}x{p}-seeds{first_seed}+{count}")
            }
            InstanceSpec::Files { dict, .. } => dict.display().to_string(),
        }
    }

    pub fn load(&self) -> Result<(Dictionary, TargetVector)> {
        match self {
            InstanceSpec::Synthetic { d, p, seed, target } => gen_synthetic(*d, *p, *seed, *target),
            InstanceSpec::Batch { .. } => Err(Error::InvalidParameter("batches must be expanded first".into())),
            InstanceSpec::Files { dict, x, file_backed } => {
                let d = if *file_backed {
                    Dictionary::open_dmat(dict)?
                } else {
                    Dictionary::load_dmat(dict)?
                };
                Ok((d, TargetVector::load_dvec(x)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRow {
    pub instance: String,
    pub strategy: String,
    pub kind: StrategyKind,
    pub lambda_ratio: f64,
    pub nsr: f64,
    pub completed: bool,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub rejection: Option<f64>,
    pub speedup: Option<f64>,
    /// Median unscreened solve time at `lambda_t`.
    pub baseline_seconds: Option<f64>,
    /// Median total time of the screened sequence.
    pub sequence_seconds: Option<f64>,
    pub false_rejections: Option<usize>,
    pub converged: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    pub strategy: String,
    pub lambda_ratio: f64,
    pub nsr: f64,
    pub rows: usize,
    pub completed: usize,
    pub completion: f64,
    pub mean_rejection: f64,
    pub stderr_rejection: f64,
    pub mean_n: f64,
    pub stderr_n: f64,
    pub mean_speedup: Option<f64>,
    pub stderr_speedup: Option<f64>,
    pub mean_false_rejections: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub report_version: u32,
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<Aggregate>,
}

impl BenchReport {
    pub fn from_json(text: &str) -> Result<Self> {
        let report: BenchReport = serde_json::from_str(text)?;
        if report.report_version != REPORT_VERSION {
            return Err(Error::Format(format!(
                "unsupported report_version {}",
                report.report_version
            )));
        }
        for row in &report.rows {
            if row.rejection.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
                return Err(Error::Integrity(format!("rejection out of range in {}", row.instance)));
            }
        }
        Ok(report)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "instance,strategy,lambda_ratio,nsr,completed,N,rejection,speedup,baseline_seconds,sequence_seconds,false_rejections\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.instance,
                r.strategy,
                r.lambda_ratio,
                r.nsr,
                r.completed,
                opt(r.n),
                opt(r.rejection),
                opt(r.speedup),
                opt(r.baseline_seconds),
                opt(r.sequence_seconds),
                opt(r.false_rejections),
            ));
        }
        out
    }

    /// Plot-ready series: `(file name, CSV text)` pairs for rejection and
    /// speedup against `lambda_t / lambda_max`, one line per strategy and
    /// noise level, plus rejection against noise level.
    pub fn series(&self) -> Vec<(String, String)> {
        let mut rejection = String::from("strategy,nsr,lambda_ratio,mean_rejection,stderr_rejection,completion\n");
        let mut speed = String::from("strategy,nsr,lambda_ratio,mean_speedup,stderr_speedup\n");
        let mut noise = String::from("strategy,lambda_ratio,nsr,mean_rejection,stderr_rejection\n");
        let mut aggs: Vec<&Aggregate> = self.aggregates.iter().collect();
        aggs.sort_by(|a, b| {
            (&a.strategy, a.nsr, a.lambda_ratio)
                .partial_cmp(&(&b.strategy, b.nsr, b.lambda_ratio))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for a in &aggs {
            rejection.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.strategy, a.nsr, a.lambda_ratio, a.mean_rejection, a.stderr_rejection, a.completion
            ));
            speed.push_str(&format!(
                "{},{},{},{},{}\n",
                a.strategy,
                a.nsr,
                a.lambda_ratio,
                opt(a.mean_speedup),
                opt(a.stderr_speedup)
            ));
        }
        aggs.sort_by(|a, b| {
            (&a.strategy, a.lambda_ratio, a.nsr)
                .partial_cmp(&(&b.strategy, b.lambda_ratio, b.nsr))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for a in &aggs {
            noise.push_str(&format!(
                "{},{},{},{},{}\n",
                a.strategy, a.lambda_ratio, a.nsr, a.mean_rejection, a.stderr_rejection
            ));
        }
        vec![
            ("rejection_vs_lambda.csv".into(), rejection),
            ("speedup_vs_lambda.csv".into(), speed),
            ("rejection_vs_noise.csv".into(), noise),
        ]
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

struct Cell {
    instance: usize,
    ratio: f64,
    strategy: usize,
    nsr: f64,
}

/// Runs every (instance, lambda ratio, strategy, noise level) cell and aggregates.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let instances = config.expand_instances();
    let mut cells = Vec::new();
    for instance in 0..instances.len() {
        for &ratio in &config.lambda_ratios {
            for strategy in 0..config.strategies.len() {
                for &nsr in &config.noise_levels {
                    cells.push(Cell {
                        instance,
                        ratio,
                        strategy,
                        nsr,
                    });
                }
            }
        }
    }

    let rows = if config.parallel {
        run_cells_parallel(config, &instances, &cells)?
    } else {
        run_cells_serial(config, &instances, &cells)?
    };
    let aggregates = aggregate(&rows);
    Ok(BenchReport {
        report_version: REPORT_VERSION,
        config: config.clone(),
        rows,
        aggregates,
    })
}

fn run_cells_serial(config: &BenchConfig, instances: &[InstanceSpec], cells: &[Cell]) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    let mut loaded: Option<(usize, Dictionary, TargetVector, f64)> = None;
    let mut baseline: Option<(usize, f64, Option<f64>)> = None;
    for cell in cells {
        if loaded.as_ref().is_none_or(|l| l.0 != cell.instance) {
            let (d, x) = instances[cell.instance].load()?;
            let lm = lambda_max(&d, &x)?.lambda_max;
            loaded = Some((cell.instance, d, x, lm));
        }
        let (_, dict, x, lm) = loaded.as_ref().unwrap();
        if baseline.is_none_or(|b| b.0 != cell.instance || b.1 != cell.ratio) {
            baseline = Some((cell.instance, cell.ratio, time_baseline(config, dict, x, cell.ratio * lm)?));
        }
        let base = baseline.unwrap().2;
        rows.push(run_cell(config, &instances[cell.instance], dict, x, *lm, cell, base, true)?);
    }
    Ok(rows)
}

#[cfg(feature = "parallel")]
fn run_cells_parallel(config: &BenchConfig, instances: &[InstanceSpec], cells: &[Cell]) -> Result<Vec<BenchRow>> {
    use rayon::prelude::*;
    cells
        .par_iter()
        .map(|cell| {
            let (d, x) = instances[cell.instance].load()?;
            let lm = lambda_max(&d, &x)?.lambda_max;
            run_cell(config, &instances[cell.instance], &d, &x, lm, cell, None, false)
        })
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_cells_parallel(config: &BenchConfig, instances: &[InstanceSpec], cells: &[Cell]) -> Result<Vec<BenchRow>> {
    run_cells_serial(config, instances, cells)
}

/// Median unscreened solve time, or `None` when the full dictionary exceeds the cap.
fn time_baseline(config: &BenchConfig, dict: &Dictionary, x: &TargetVector, lambda_t: f64) -> Result<Option<f64>> {
    let needed = dict.rows() * dict.cols() * std::mem::size_of::<f64>();
    if needed > config.memory_cap_bytes {
        return Ok(None);
    }
    let problem = LassoProblem::new(dict, x, lambda_t)?;
    let mut times = Vec::with_capacity(config.repetitions);
    for _ in 0..config.repetitions {
        let clock = Stopwatch::start();
        solve_lasso(&problem, None, &config.solver)?;
        times.push(clock.seconds());
    }
    Ok(Some(median(&times)))
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &BenchConfig,
    spec: &InstanceSpec,
    dict: &Dictionary,
    x: &TargetVector,
    lambda_max: f64,
    cell: &Cell,
    baseline_seconds: Option<f64>,
    timed: bool,
) -> Result<BenchRow> {
    let strategy = &config.strategies[cell.strategy];
    let noise = (cell.nsr > 0.0).then_some(NoiseConfig {
        nsr: cell.nsr,
        threshold: config.noise_threshold,
        seed: config.noise_seed,
    });
    let opts = RunOptions {
        solver: config.solver.clone(),
        noise,
        chunk_size: config.chunk_size,
        record_masks: false,
        memory_cap_bytes: Some(config.memory_cap_bytes),
    };
    let mut row = BenchRow {
        instance: spec.name(),
        strategy: strategy.label(),
        kind: strategy.kind,
        lambda_ratio: cell.ratio,
        nsr: cell.nsr,
        completed: false,
        n: None,
        rejection: None,
        speedup: None,
        baseline_seconds: if timed { baseline_seconds } else { None },
        sequence_seconds: None,
        false_rejections: None,
        converged: None,
        note: None,
    };
    let reps = if timed { config.repetitions } else { 1 };
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        match run_sequence(dict, x, cell.ratio * lambda_max, strategy, &opts) {
            Ok(trace) => {
                times.push(trace.total_seconds);
                last = Some(trace);
            }
            Err(Error::MemoryCap { needed, cap }) => {
                row.note = Some(format!("kept columns need {needed} bytes, cap is {cap}"));
                return Ok(row);
            }
            Err(e) => return Err(e),
        }
    }
    let trace = last.unwrap();
    row.completed = true;
    row.n = Some(trace.n);
    row.rejection = Some(trace.final_rejection());
    row.false_rejections = trace.false_rejections();
    row.converged = Some(trace.all_converged());
    if timed {
        let seq = median(&times);
        row.sequence_seconds = Some(seq);
        row.speedup = baseline_seconds.and_then(|b| speedup(b, seq).ok());
    }
    if baseline_seconds.is_none() && timed {
        row.note = Some("unscreened baseline exceeds the memory cap".into());
    }
    Ok(row)
}

fn aggregate(rows: &[BenchRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, f64, f64)> = Vec::new();
    for r in rows {
        let key = (r.strategy.clone(), r.lambda_ratio, r.nsr);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(strategy, lambda_ratio, nsr)| {
            let group: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.lambda_ratio == lambda_ratio && r.nsr == nsr)
                .collect();
            let done: Vec<&&BenchRow> = group.iter().filter(|r| r.completed).collect();
            let rej: Vec<f64> = done.iter().filter_map(|r| r.rejection).collect();
            let ns: Vec<f64> = done.iter().filter_map(|r| r.n.map(|n| n as f64)).collect();
            let sp: Vec<f64> = done.iter().filter_map(|r| r.speedup).collect();
            let fr: Vec<f64> = done.iter().filter_map(|r| r.false_rejections.map(|f| f as f64)).collect();
            let (mean_rejection, stderr_rejection) = mean_stderr(&rej);
            let (mean_n, stderr_n) = mean_stderr(&ns);
            let (mean_speedup, stderr_speedup) = if sp.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_stderr(&sp);
                (Some(m), Some(s))
            };
            Aggregate {
                strategy,
                lambda_ratio,
                nsr,
                rows: group.len(),
                completed: done.len(),
                completion: done.len() as f64 / group.len() as f64,
                mean_rejection,
                stderr_rejection,
                mean_n,
                stderr_n,
                mean_speedup,
                stderr_speedup,
                mean_false_rejections: (!fr.is_empty()).then(|| mean_stderr(&fr).0),
            }
        })
        .collect()
}
