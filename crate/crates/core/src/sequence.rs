//! Sequential screening along a decreasing regularization path ending at a
//! target `lambda_t`.
//!
//! Three ways of choosing the path are supported: the DASS feedback rule,
//! which picks each `lambda_k` so the next dome has diameter at most `R`; an
//! open-loop geometric grid; and a feedback-controlled DPP recursion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::dictionary::{
    lambda_max_from_correlations, Dictionary, LambdaMaxResult, TargetVector, DEFAULT_CHUNK_SIZE,
};
use crate::error::{Error, Result};
use crate::region::{
    build_initial_region, build_step_region, dpp_region, projected_energy, screen_chunked,
    strong_rule_screen, BuiltRegion, KeepMask, Region, DEGENERACY_TOL, UNIT_NORMAL_TOL,
};
use crate::solver::{residual_and_correlations, solve_lasso, LassoProblem, SolverConfig};
use crate::vecops::{norm, norm_inf, norm_l1, norm_sq};

pub const TRACE_VERSION: u32 = 1;

pub const DEFAULT_LAMBDA_1_FACTOR: f64 = 0.95;

/// Slack allowed on the per-step diameter contract.
pub const DIAMETER_SLACK: f64 = 1e-9;

/// Weights with magnitude above this count as support.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Quadratic forms below this fraction of `||x||^2` use `||x||^2` instead.
pub const QUAD_FLOOR_REL: f64 = 1e-12;

/// Gaps at or below this give a zero dual inexactness estimate.
pub const EXACT_GAP: f64 = 1e-12;

/// Default hard threshold after noise injection, relative to `max |w|`.
pub const DEFAULT_NOISE_THRESHOLD_REL: f64 = 1e-3;

// relative slack on |a_i^T theta| <= 1 before a discarded feature counts as
// a false rejection
const KKT_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Dass,
    Geometric,
    DppFeedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreeningRule {
    Dome,
    Dpp,
    Strong,
}

impl ScreeningRule {
    pub fn is_safe(self) -> bool {
        !matches!(self, ScreeningRule::Strong)
    }
}

fn default_lambda_1_factor() -> f64 {
    DEFAULT_LAMBDA_1_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceStrategy {
    pub kind: StrategyKind,
    /// Diameter budget for `dass` and `dpp_feedback`.
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Grid length for `geometric`.
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_lambda_1_factor")]
    pub lambda_1_factor: f64,
    /// Screening rule; only `geometric` may choose. Defaults to the rule
    /// implied by the kind (dome for `dass` and `geometric`, DPP for
    /// `dpp_feedback`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<ScreeningRule>,
}

impl SequenceStrategy {
    pub fn dass(r: f64) -> Self {
        SequenceStrategy {
            kind: StrategyKind::Dass,
            r: Some(r),
            n: None,
            lambda_1_factor: DEFAULT_LAMBDA_1_FACTOR,
            rule: None,
        }
    }

    pub fn geometric(n: usize, rule: ScreeningRule) -> Self {
        SequenceStrategy {
            kind: StrategyKind::Geometric,
            r: None,
            n: Some(n),
            lambda_1_factor: DEFAULT_LAMBDA_1_FACTOR,
            rule: Some(rule),
        }
    }

    pub fn dpp_feedback(r: f64) -> Self {
        SequenceStrategy {
            kind: StrategyKind::DppFeedback,
            r: Some(r),
            n: None,
            lambda_1_factor: DEFAULT_LAMBDA_1_FACTOR,
            rule: None,
        }
    }

    pub fn with_lambda_1_factor(mut self, factor: f64) -> Self {
        self.lambda_1_factor = factor;
        self
    }

    pub fn rule(&self) -> ScreeningRule {
        match (self.kind, self.rule) {
            (StrategyKind::Geometric, Some(rule)) => rule,
            (StrategyKind::DppFeedback, _) => ScreeningRule::Dpp,
            _ => ScreeningRule::Dome,
        }
    }

    /// Short label for reports, e.g. `dass(R=0.4)` or `geometric-dpp(N=21)`.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::Dass => format!("dass(R={})", self.r.unwrap_or(f64::NAN)),
            StrategyKind::DppFeedback => format!("dpp-feedback(R={})", self.r.unwrap_or(f64::NAN)),
            StrategyKind::Geometric => {
                let rule = match self.rule() {
                    ScreeningRule::Dome => "dome",
                    ScreeningRule::Dpp => "dpp",
                    ScreeningRule::Strong => "strong",
                };
                format!("geometric-{rule}(N={})", self.n.unwrap_or(0))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_1_factor > 0.0 && self.lambda_1_factor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda_1_factor must lie in (0, 1), got {}",
                self.lambda_1_factor
            )));
        }
        match self.kind {
            StrategyKind::Dass | StrategyKind::DppFeedback => {
                match self.r {
                    Some(r) if r > 0.0 && r.is_finite() => {}
                    Some(r) => {
                        return Err(Error::InvalidParameter(format!("R must be positive, got {r}")))
                    }
                    None => return Err(Error::InvalidParameter("R is required".into())),
                }
                if self.n.is_some() {
                    return Err(Error::InvalidParameter(
                        "N only applies to the geometric strategy".into(),
                    ));
                }
                let implied = if self.kind == StrategyKind::Dass {
                    ScreeningRule::Dome
                } else {
                    ScreeningRule::Dpp
                };
                if self.rule.is_some_and(|rule| rule != implied) {
                    return Err(Error::InvalidParameter(
                        "the screening rule is fixed for feedback strategies".into(),
                    ));
                }
            }
            StrategyKind::Geometric => {
                match self.n {
                    Some(n) if n >= 2 => {}
                    Some(n) => {
                        return Err(Error::InvalidParameter(format!("N must be at least 2, got {n}")))
                    }
                    None => return Err(Error::InvalidParameter("N is required".into())),
                }
                if self.r.is_some() {
                    return Err(Error::InvalidParameter(
                        "R does not apply to the geometric strategy".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Noise-to-signal power ratio.
    pub nsr: f64,
    /// Hard threshold applied after the noise; `None` means `1e-3 * max |w|`.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(nsr: f64, seed: u64) -> Self {
        NoiseConfig {
            nsr,
            threshold: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nsr >= 0.0) || !self.nsr.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "nsr must be finite and non-negative, got {}",
                self.nsr
            )));
        }
        if let Some(t) = self.threshold {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "noise threshold must be non-negative, got {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyWeights {
    pub w: Vec<f64>,
    /// Set when `w = 0` and `nsr > 0`, so no noise level is defined.
    pub undefined_ratio: bool,
}

/// Adds Gaussian noise with power `nsr * mean(w^2)` and then zeroes entries
/// below the threshold. Deterministic in `noise.seed`.
pub fn inject_noise(w: &[f64], noise: &NoiseConfig) -> Result<NoisyWeights> {
    inject_noise_stream(w, noise, 0)
}

fn inject_noise_stream(w: &[f64], noise: &NoiseConfig, stream: u64) -> Result<NoisyWeights> {
    noise.validate()?;
    if w.is_empty() {
        return Ok(NoisyWeights {
            w: Vec::new(),
            undefined_ratio: false,
        });
    }
    let power = norm_sq(w) / w.len() as f64;
    if noise.nsr > 0.0 && power == 0.0 {
        log::warn!("noise requested for an all-zero weight vector; left unchanged");
        return Ok(NoisyWeights {
            w: w.to_vec(),
            undefined_ratio: true,
        });
    }
    let mut out = w.to_vec();
    if noise.nsr > 0.0 {
        let sigma = (noise.nsr * power).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(stream);
        for v in &mut out {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    let threshold = noise
        .threshold
        .unwrap_or(DEFAULT_NOISE_THRESHOLD_REL * norm_inf(w));
    for v in &mut out {
        if v.abs() < threshold {
            *v = 0.0;
        }
    }
    Ok(NoisyWeights {
        w: out,
        undefined_ratio: false,
    })
}

/// DASS update: `1/lambda_k = 1/lambda_prev + (R/2) / sqrt(x^T (I - n n^T) x)`.
///
/// When the quadratic form is at most `1e-12 ||x||^2` it is replaced by `||x||^2`.
pub fn next_lambda_dass(lambda_prev: f64, x: &[f64], n_prev: &[f64], r: f64) -> Result<f64> {
    if n_prev.len() != x.len() {
        return Err(Error::DimensionMismatch("n_prev and x differ in length".into()));
    }
    if (norm(n_prev) - 1.0).abs() > UNIT_NORMAL_TOL {
        return Err(Error::InvalidParameter("n_prev must have unit norm".into()));
    }
    dass_step(lambda_prev, projected_energy(x, n_prev), norm_sq(x), r)
}

fn dass_step(lambda_prev: f64, quad: f64, x_norm_sq: f64, r: f64) -> Result<f64> {
    if !(lambda_prev > 0.0) || !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need lambda_prev > 0 and R > 0, got {lambda_prev} and {r}"
        )));
    }
    if !(x_norm_sq > 0.0) {
        return Err(Error::ZeroTarget);
    }
    let quad = if quad <= QUAD_FLOOR_REL * x_norm_sq {
        x_norm_sq
    } else {
        quad
    };
    Ok(1.0 / (1.0 / lambda_prev + 0.5 * r / quad.sqrt()))
}

/// Feedback-controlled DPP: `1/lambda_k = 1/lambda_prev + R / (2 ||x||)`, so
/// the DPP sphere of [`dpp_region`] has diameter exactly `R`. For unit-norm
/// targets the increment is `R/2`.
pub fn next_lambda_dpp_feedback(lambda_prev: f64, r: f64, x_norm: f64) -> Result<f64> {
    if !(lambda_prev > 0.0) || !(r > 0.0) || !(x_norm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need lambda_prev, R, ||x|| > 0, got {lambda_prev}, {r}, {x_norm}"
        )));
    }
    Ok(1.0 / (1.0 / lambda_prev + 0.5 * r / x_norm))
}

/// `[lambda_1, alpha lambda_1, ..., lambda_t]` with constant ratio `alpha`.
pub fn geometric_grid(lambda_1: f64, lambda_t: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("grid length must be at least 2, got {n}")));
    }
    if !(lambda_t > 0.0) || lambda_t >= lambda_1 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < lambda_t < lambda_1, got {lambda_t} and {lambda_1}"
        )));
    }
    let alpha = (lambda_t / lambda_1).powf(1.0 / (n - 1) as f64);
    let mut grid: Vec<f64> = (0..n).map(|i| lambda_1 * alpha.powi(i as i32)).collect();
    grid[n - 1] = lambda_t;
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Bound on the dual path norm.
    #[serde(rename = "C")]
    pub c: f64,
    /// Bound on the distance between computed and exact dual points.
    pub rho: f64,
}

impl BoundParams {
    pub fn new(c: f64, rho: f64) -> Result<Self> {
        if !(c > 0.0) || !(rho >= 0.0) {
            return Err(Error::InvalidParameter(format!("need C > 0 and rho >= 0, got {c}, {rho}")));
        }
        Ok(BoundParams { c, rho })
    }
}

/// `1 + ln(1/lambda_t) / ln(1 + R / (2 (C + rho)))`, or 1 when `lambda_t >= 1`.
pub fn n_upper_bound(lambda_t: f64, r: f64, params: &BoundParams) -> f64 {
    if lambda_t >= 1.0 {
        return 1.0;
    }
    1.0 + (1.0 / lambda_t).ln() / (0.5 * r / (params.c + params.rho)).ln_1p()
}

/// `1 + 2 (1/lambda_t - 1/lambda_1) / R`, the step bound for the
/// feedback-controlled DPP recursion with a unit-norm target.
pub fn dpp_feedback_upper_bound(lambda_1: f64, lambda_t: f64, r: f64) -> f64 {
    1.0 + 2.0 * (1.0 / lambda_t - 1.0 / lambda_1) / r
}

/// `C` as the largest recorded dual-point norm, `rho` from the largest
/// `sqrt(2 gap) / lambda` over steps.
pub fn estimate_dual_bound(trace: &SequenceTrace) -> Result<BoundParams> {
    if trace.steps.is_empty() {
        return Err(Error::InvalidParameter("trace has no steps".into()));
    }
    let c = trace.steps.iter().map(|s| s.theta_norm).fold(0.0, f64::max);
    let rho = trace
        .steps
        .iter()
        .map(|s| {
            if s.gap <= EXACT_GAP {
                0.0
            } else {
                (2.0 * s.gap).sqrt() / s.lambda
            }
        })
        .fold(0.0, f64::max);
    BoundParams::new(c, rho)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    /// One-based step index.
    pub step: usize,
    pub lambda: f64,
    pub kept_count: usize,
    /// Diameter of the screening region; absent for the Strong rule.
    pub region_diameter: Option<f64>,
    /// Region construction fell back to a plain sphere (or to keeping everything).
    pub degenerate: bool,
    /// Duality gap of the full problem at the recorded dual point.
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub theta_norm: f64,
    pub support_size: usize,
    /// Discarded features violating optimality at this step (Strong rule only).
    pub false_rejections: Option<usize>,
    /// Noise was requested but the weights were all zero.
    pub noise_skipped: bool,
    pub screen_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceTrace {
    pub trace_version: u32,
    pub strategy: SequenceStrategy,
    pub rows: usize,
    pub cols: usize,
    pub lambda_max: f64,
    pub lambda_t: f64,
    pub lambdas: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    pub steps: Vec<StepRecord>,
    /// One-based indices of steps flagged degenerate.
    pub degenerate_steps: Vec<usize>,
    pub w_final: Vec<f64>,
    pub noise: Option<NoiseConfig>,
    pub total_seconds: f64,
    /// Per-step keep masks; not serialized.
    #[serde(skip)]
    pub masks: Vec<KeepMask>,
}

impl SequenceTrace {
    pub fn final_kept_count(&self) -> usize {
        self.steps.last().map_or(self.cols, |s| s.kept_count)
    }

    /// `(p - kept_N) / p`.
    pub fn final_rejection(&self) -> f64 {
        (self.cols - self.final_kept_count()) as f64 / self.cols as f64
    }

    pub fn all_converged(&self) -> bool {
        self.steps.iter().all(|s| s.converged)
    }

    pub fn screen_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.screen_seconds).sum()
    }

    pub fn solve_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.solve_seconds).sum()
    }

    pub fn false_rejections(&self) -> Option<usize> {
        self.steps
            .iter()
            .map(|s| s.false_rejections)
            .try_fold(0usize, |acc, f| f.map(|f| acc + f))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a trace document.
    pub fn from_json(text: &str) -> Result<Self> {
        let trace: SequenceTrace = serde_json::from_str(text)?;
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Integrity(msg));
        if self.trace_version != TRACE_VERSION {
            return fail(format!("unsupported trace_version {}", self.trace_version));
        }
        self.strategy.validate()?;
        if self.lambdas.is_empty() || self.n != self.lambdas.len() || self.steps.len() != self.n {
            return fail(format!(
                "N = {}, {} lambdas, {} steps",
                self.n,
                self.lambdas.len(),
                self.steps.len()
            ));
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return fail("lambdas must be positive and finite".into());
        }
        if self.lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return fail("lambdas are not strictly decreasing".into());
        }
        if *self.lambdas.last().unwrap() != self.lambda_t {
            return fail("last lambda differs from lambda_t".into());
        }
        if self.w_final.len() != self.cols {
            return fail(format!(
                "w_final has length {}, expected {}",
                self.w_final.len(),
                self.cols
            ));
        }
        let budget = self.strategy.r.unwrap_or(f64::INFINITY) + DIAMETER_SLACK;
        let mut degenerate = Vec::new();
        for (i, s) in self.steps.iter().enumerate() {
            if s.step != i + 1 || s.lambda != self.lambdas[i] {
                return fail(format!("step record {} is out of order", i + 1));
            }
            if s.kept_count > self.cols || s.support_size > s.kept_count {
                return fail(format!("step {} has inconsistent counts", s.step));
            }
            if s.degenerate {
                degenerate.push(s.step);
            }
            let checked = self.strategy.kind != StrategyKind::Geometric && s.step >= 2 && !s.degenerate;
            if checked && s.region_diameter.is_some_and(|d| d > budget) {
                return fail(format!(
                    "step {} diameter {} exceeds R",
                    s.step,
                    s.region_diameter.unwrap()
                ));
            }
        }
        if degenerate != self.degenerate_steps {
            return fail("degenerate_steps disagrees with the step flags".into());
        }
        if !self.masks.is_empty() {
            if self.masks.len() != self.n {
                return fail("mask count differs from N".into());
            }
            for (m, s) in self.masks.iter().zip(&self.steps) {
                if m.len() != self.cols || m.kept_count() != s.kept_count {
                    return fail(format!("mask of step {} disagrees with its record", s.step));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub solver: SolverConfig,
    pub noise: Option<NoiseConfig>,
    pub chunk_size: usize,
    /// Keep every step's mask in [`SequenceTrace::masks`].
    pub record_masks: bool,
    /// Refuse reduced problems whose kept columns would exceed this many bytes.
    pub memory_cap_bytes: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            solver: SolverConfig::default(),
            noise: None,
            chunk_size: DEFAULT_CHUNK_SIZE,
            record_masks: true,
            memory_cap_bytes: None,
        }
    }
}

/// Indices with `|w_i| > SUPPORT_TOL`.
pub fn support_of(w: &[f64]) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter_map(|(i, v)| (v.abs() > SUPPORT_TOL).then_some(i))
        .collect()
}

struct Previous {
    lambda: f64,
    w: Vec<f64>,
    theta: Vec<f64>,
}

struct Screened {
    mask: KeepMask,
    diameter: Option<f64>,
    degenerate: bool,
}

impl Screened {
    fn from_region(dict: &Dictionary, built: BuiltRegion, chunk: usize) -> Result<Self> {
        Ok(Screened {
            mask: screen_chunked(dict, &built.region, chunk)?,
            diameter: Some(built.region.diameter()?),
            degenerate: built.degenerate,
        })
    }

    fn keep_all(p: usize) -> Self {
        Screened {
            mask: KeepMask::all(p),
            diameter: None,
            degenerate: true,
        }
    }
}

/// Runs screening and reduced solves along the sequence chosen by `strategy`.
///
/// Solver non-convergence does not abort the run; the step is recorded with
/// `converged = false`. An empty kept set at `lambda_k < lambda_max` under a
/// safe rule without noise is an [`Error::Integrity`] failure.
pub fn run_sequence(
    dict: &Dictionary,
    x: &TargetVector,
    lambda_t: f64,
    strategy: &SequenceStrategy,
    opts: &RunOptions,
) -> Result<SequenceTrace> {
    strategy.validate()?;
    opts.solver.validate()?;
    if let Some(noise) = &opts.noise {
        noise.validate()?;
    }
    if opts.chunk_size == 0 {
        return Err(Error::InvalidParameter("chunk_size must be at least 1".into()));
    }
    if !(lambda_t > 0.0) || !lambda_t.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda_t must be positive, got {lambda_t}")));
    }
    dict.check_rows(x.len())?;
    let x_norm = x.nonzero()?;
    let started = Stopwatch::start();
    let p = dict.cols();
    let lmr = lambda_max_from_correlations(&dict.transpose_mul(x)?);
    let rule = strategy.rule();

    let mut trace = SequenceTrace {
        trace_version: TRACE_VERSION,
        strategy: strategy.clone(),
        rows: dict.rows(),
        cols: p,
        lambda_max: lmr.lambda_max,
        lambda_t,
        lambdas: Vec::new(),
        n: 0,
        steps: Vec::new(),
        degenerate_steps: Vec::new(),
        w_final: vec![0.0; p],
        noise: opts.noise.clone(),
        total_seconds: 0.0,
        masks: Vec::new(),
    };

    if lambda_t >= lmr.lambda_max {
        // x / lambda_t is feasible and optimal; every feature screens out
        trace.lambdas.push(lambda_t);
        trace.steps.push(StepRecord {
            step: 1,
            lambda: lambda_t,
            kept_count: 0,
            region_diameter: None,
            degenerate: false,
            gap: 0.0,
            converged: true,
            iterations: 0,
            theta_norm: x_norm / lambda_t,
            support_size: 0,
            false_rejections: (rule == ScreeningRule::Strong).then_some(0),
            noise_skipped: false,
            screen_seconds: 0.0,
            solve_seconds: 0.0,
        });
        if opts.record_masks {
            trace.masks.push(KeepMask::none(p));
        }
        trace.n = 1;
        trace.total_seconds = started.seconds();
        return Ok(trace);
    }

    let lambda_1 = if lambda_t >= strategy.lambda_1_factor * lmr.lambda_max {
        lambda_t
    } else {
        strategy.lambda_1_factor * lmr.lambda_max
    };
    let grid = match (strategy.kind, lambda_1 > lambda_t) {
        (StrategyKind::Geometric, true) => geometric_grid(lambda_1, lambda_t, strategy.n.unwrap())?,
        _ => vec![lambda_1],
    };
    let r = strategy.r.unwrap_or(0.0);

    let mut prev: Option<Previous> = None;
    let mut lambda_k = lambda_1;
    loop {
        let k = trace.steps.len() + 1;
        let is_last = lambda_k == lambda_t;

        let screen_clock = Stopwatch::start();
        let screened = screen_step(dict, x, x_norm, &lmr, lambda_k, prev.as_ref(), rule, opts.chunk_size)?;
        let screen_seconds = screen_clock.seconds();

        let solve_clock = Stopwatch::start();
        let kept = screened.mask.kept_indices();
        let mut w = vec![0.0; p];
        let (mut converged, mut iterations) = (true, 0);
        if kept.is_empty() {
            if rule.is_safe() && opts.noise.is_none() {
                return Err(Error::Integrity(format!(
                    "step {k}: every feature was screened at lambda {lambda_k} < lambda_max {}",
                    lmr.lambda_max
                )));
            }
        } else {
            let needed = kept.len() * dict.rows() * std::mem::size_of::<f64>();
            if let Some(cap) = opts.memory_cap_bytes.filter(|&cap| needed > cap) {
                return Err(Error::MemoryCap { needed, cap });
            }
            let sub = dict.select_columns(&kept, opts.chunk_size)?;
            let warm: Vec<f64> = match &prev {
                Some(pr) => kept.iter().map(|&i| pr.w[i]).collect(),
                None => vec![0.0; kept.len()],
            };
            let problem = LassoProblem::new(&sub, x, lambda_k)?;
            let sol = solve_lasso(&problem, Some(&warm), &opts.solver)?;
            if !sol.converged {
                log::warn!("step {k}: solver stopped at gap {:e} without converging", sol.gap);
            }
            for (&i, v) in kept.iter().zip(&sol.w) {
                w[i] = *v;
            }
            converged = sol.converged;
            iterations = sol.iterations;
        }
        let support_size = support_of(&w).len();

        let mut noise_skipped = false;
        let w_used = match (&opts.noise, is_last) {
            (Some(noise), false) => {
                let noisy = inject_noise_stream(&w, noise, k as u64)?;
                noise_skipped = noisy.undefined_ratio;
                noisy.w
            }
            _ => w.clone(),
        };

        // dual point over the whole dictionary, so it is feasible for every feature
        let (residual, corr) = residual_and_correlations(dict, x, &w_used)?;
        let scale = lambda_k.max(norm_inf(&corr));
        let theta: Vec<f64> = residual.iter().map(|v| v / scale).collect();
        let primal = 0.5 * norm_sq(&residual) + lambda_k * norm_l1(&w_used);
        let dist_sq: f64 = x
            .iter()
            .zip(&theta)
            .map(|(xi, t)| (t - xi / lambda_k) * (t - xi / lambda_k))
            .sum();
        let dual = 0.5 * norm_sq(x) - 0.5 * lambda_k * lambda_k * dist_sq;
        let gap = (primal - dual).max(0.0);
        let false_rejections = (rule == ScreeningRule::Strong).then(|| {
            corr.iter()
                .zip(screened.mask.keep())
                .filter(|(c, &keep)| !keep && c.abs() > lambda_k * (1.0 + KKT_SLACK))
                .count()
        });
        let solve_seconds = solve_clock.seconds();

        trace.lambdas.push(lambda_k);
        trace.steps.push(StepRecord {
            step: k,
            lambda: lambda_k,
            kept_count: screened.mask.kept_count(),
            region_diameter: screened.diameter,
            degenerate: screened.degenerate,
            gap,
            converged,
            iterations,
            theta_norm: norm(&theta),
            support_size,
            false_rejections,
            noise_skipped,
            screen_seconds,
            solve_seconds,
        });
        if screened.degenerate {
            trace.degenerate_steps.push(k);
        }
        if opts.record_masks {
            trace.masks.push(screened.mask);
        }

        if is_last {
            trace.w_final = w;
            break;
        }

        let next = match strategy.kind {
            StrategyKind::Dass => {
                let v: Vec<f64> = x.iter().zip(&theta).map(|(xi, t)| xi / lambda_k - t).collect();
                let v_norm = norm(&v);
                let quad = if v_norm <= DEGENERACY_TOL {
                    0.0
                } else {
                    let n: Vec<f64> = v.iter().map(|e| e / v_norm).collect();
                    projected_energy(x, &n)
                };
                dass_step(lambda_k, quad, x_norm * x_norm, r)?
            }
            StrategyKind::Geometric => grid[k],
            StrategyKind::DppFeedback => next_lambda_dpp_feedback(lambda_k, r, x_norm)?,
        };
        prev = Some(Previous {
            lambda: lambda_k,
            w: w_used,
            theta,
        });
        lambda_k = if next <= lambda_t { lambda_t } else { next };
    }

    trace.n = trace.steps.len();
    trace.total_seconds = started.seconds();
    trace.validate()?;
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn screen_step(
    dict: &Dictionary,
    x: &TargetVector,
    x_norm: f64,
    lmr: &LambdaMaxResult,
    lambda_k: f64,
    prev: Option<&Previous>,
    rule: ScreeningRule,
    chunk: usize,
) -> Result<Screened> {
    let p = dict.cols();
    match (rule, prev) {
        (ScreeningRule::Dome, None) => {
            let a_star = dict.read_column(lmr.argmax_index)?;
            match build_initial_region(x, lambda_k, lmr, &a_star) {
                Ok(built) => Screened::from_region(dict, built, chunk),
                Err(Error::DegenerateRegion(_)) => Ok(Screened::keep_all(p)),
                Err(e) => Err(e),
            }
        }
        (ScreeningRule::Dome, Some(pr)) => match build_step_region(x, lambda_k, pr.lambda, &pr.theta) {
            Ok(built) => Screened::from_region(dict, built, chunk),
            Err(Error::CenterInsideRegion { margin }) => {
                log::warn!("dome center inside its half-space (margin {margin:e}); using the sphere");
                let q: Vec<f64> = x.iter().map(|v| v / lambda_k).collect();
                let radius = q
                    .iter()
                    .zip(&pr.theta)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let built = BuiltRegion {
                    region: Region::sphere(q, radius)?,
                    degenerate: true,
                };
                Screened::from_region(dict, built, chunk)
            }
            Err(Error::DegenerateRegion(_)) => Ok(Screened::keep_all(p)),
            Err(e) => Err(e),
        },
        (ScreeningRule::Dpp, _) => {
            let (theta_prev, lambda_prev) = match prev {
                Some(pr) => (pr.theta.clone(), pr.lambda),
                None => (x.iter().map(|v| v / lmr.lambda_max).collect(), lmr.lambda_max),
            };
            match dpp_region(&theta_prev, lambda_k, lambda_prev, x_norm) {
                Ok(region) => Screened::from_region(
                    dict,
                    BuiltRegion {
                        region,
                        degenerate: false,
                    },
                    chunk,
                ),
                Err(Error::DegenerateRegion(_)) => Ok(Screened::keep_all(p)),
                Err(e) => Err(e),
            }
        }
        (ScreeningRule::Strong, _) => {
            let mask = match prev {
                Some(pr) => strong_rule_screen(dict, x, lambda_k, pr.lambda, &pr.w)?,
                None => strong_rule_screen(dict, x, lambda_k, lmr.lambda_max, &vec![0.0; p])?,
            };
            Ok(Screened {
                mask,
                diameter: None,
                degenerate: false,
            })
        }
    }
}
