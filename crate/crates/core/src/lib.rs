//! Sequential safe screening for lasso problems at a fixed target
//! regularization, with a feedback rule that picks the intermediate
//! regularization values on the fly.

// non-negated comparisons would let NaN parameters through
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
mod clock;
pub mod dictionary;
pub mod error;
pub mod format;
pub mod region;
pub mod sequence;
pub mod solver;
mod vecops;

pub use dictionary::{
    gen_synthetic, lambda_max, normalize_columns, ColumnBlock, ColumnChunks, Dictionary,
    LambdaMaxResult, TargetMode, TargetVector,
};
pub use error::{Error, Result};
pub use solver::{
    dual_point, duality_gap, solve_lasso, Algorithm, LassoProblem, LassoSolution, SolverConfig,
};
pub use region::{
    build_initial_region, build_step_region, dpp_region, region_diameter, region_max, screen,
    screen_chunked, step_diameter, strong_rule_screen, BuiltRegion, Halfspace, KeepMask, Region,
};
pub use sequence::{
    estimate_dual_bound, geometric_grid, inject_noise, n_upper_bound, next_lambda_dass,
    next_lambda_dpp_feedback, run_sequence, BoundParams, NoiseConfig, RunOptions, ScreeningRule,
    SequenceStrategy, SequenceTrace, StepRecord, StrategyKind,
};
pub use bench::{
    mean_stderr, rejection_percentage, run_benchmark, speedup, BenchConfig, BenchReport, BenchRow,
    InstanceSpec,
};

/// Environment variable capping the worker threads used for screening.
pub const THREADS_ENV: &str = "SEQSCREEN_THREADS";

/// Sizes the global worker pool from `SEQSCREEN_THREADS` when it is set.
/// Returns the configured thread count, or `None` when the variable is absent.
#[cfg(feature = "parallel")]
pub fn init_threads_from_env() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // a pool that is already running keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(Some(threads))
}
