//! Lasso solver with a duality-gap stopping rule.
//!
//! Solves `min_w 1/2 ||x - D w||^2 + lambda ||w||_1` and returns, alongside
//! `w`, a dual-feasible point built from the residual.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::dictionary::{Dictionary, TargetVector};
use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, norm, norm_inf, norm_l1, norm_sq, soft_threshold};

/// Dual feasibility slack tolerated by [`duality_gap`].
pub const DUAL_FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    CoordinateDescent,
    /// ISTA with fixed step `1/L`, `L` the top eigenvalue of `D^T D`.
    ProximalGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Stop once `P(w) - D(theta) <= gap_tol * ||x||^2 / 2`.
    pub gap_tol: f64,
    pub max_iters: usize,
    pub algorithm: Algorithm,
    /// Keep the primal objective after every iteration (diagnostics and tests).
    pub record_objective: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gap_tol: 1e-8,
            max_iters: 100_000,
            algorithm: Algorithm::CoordinateDescent,
            record_objective: false,
        }
    }
}

impl SolverConfig {
    pub fn with_gap_tol(gap_tol: f64) -> Self {
        SolverConfig {
            gap_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gap_tol must be positive, got {}",
                self.gap_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub dictionary: &'a Dictionary,
    pub x: &'a TargetVector,
    pub lambda: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(dictionary: &'a Dictionary, x: &'a TargetVector, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        dictionary.check_rows(x.len())?;
        Ok(LassoProblem {
            dictionary,
            x,
            lambda,
        })
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dictionary.cols() {
            return Err(Error::DimensionMismatch(format!(
                "weight vector has length {}, dictionary has {} columns",
                w.len(),
                self.dictionary.cols()
            )));
        }
        Ok(())
    }

    /// `1/2 ||x - D w||^2 + lambda ||w||_1`
    pub fn primal_objective(&self, w: &[f64]) -> Result<f64> {
        self.check_weights(w)?;
        let dw = self.dictionary.mul(w)?;
        let r2: f64 = self.x.iter().zip(&dw).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(0.5 * r2 + self.lambda * norm_l1(w))
    }

    /// `1/2 ||x||^2 - lambda^2/2 ||theta - x/lambda||^2`
    pub fn dual_objective(&self, theta: &[f64]) -> Result<f64> {
        self.dictionary.check_rows(theta.len())?;
        Ok(dual_objective_raw(self.x, self.lambda, theta))
    }
}

fn dual_objective_raw(x: &[f64], lambda: f64, theta: &[f64]) -> f64 {
    let dist2: f64 = theta
        .iter()
        .zip(x)
        .map(|(t, xi)| {
            let e = t - xi / lambda;
            e * e
        })
        .sum();
    0.5 * norm_sq(x) - 0.5 * lambda * lambda * dist2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
    /// Absolute duality gap `P(w) - D(theta)`.
    pub gap: f64,
    pub iterations: usize,
    pub solve_seconds: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_history: Vec<f64>,
}

/// Residual `x - D w` and correlations `D^T (x - D w)`.
pub(crate) fn residual_and_correlations(
    dict: &Dictionary,
    x: &[f64],
    w: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dw = dict.mul(w)?;
    let residual: Vec<f64> = x.iter().zip(&dw).map(|(a, b)| a - b).collect();
    let corr = dict.transpose_mul(&residual)?;
    Ok((residual, corr))
}

/// Feasible dual point `(x - D w) / max(lambda, ||D^T (x - D w)||_inf)`.
///
/// Equals `(x - D w) / lambda` whenever that point is already feasible.
pub fn dual_point(problem: &LassoProblem<'_>, w: &[f64]) -> Result<Vec<f64>> {
    problem.check_weights(w)?;
    let (residual, corr) = residual_and_correlations(problem.dictionary, problem.x, w)?;
    let scale = problem.lambda.max(norm_inf(&corr));
    Ok(residual.into_iter().map(|v| v / scale).collect())
}

/// `P(w) - D(theta)` for a feasible `theta`.
pub fn duality_gap(problem: &LassoProblem<'_>, w: &[f64], theta: &[f64]) -> Result<f64> {
    problem.dictionary.check_rows(theta.len())?;
    let worst = norm_inf(&problem.dictionary.transpose_mul(theta)?);
    if worst > 1.0 + DUAL_FEASIBILITY_TOL {
        return Err(Error::InfeasibleDual(worst));
    }
    Ok(problem.primal_objective(w)? - problem.dual_objective(theta)?)
}

/// Gap of `w` given its residual and correlations; also returns the dual point.
fn gap_from_residual(
    x: &[f64],
    lambda: f64,
    w: &[f64],
    residual: &[f64],
    corr: &[f64],
) -> (f64, Vec<f64>) {
    let scale = lambda.max(norm_inf(corr));
    let theta: Vec<f64> = residual.iter().map(|v| v / scale).collect();
    let primal = 0.5 * norm_sq(residual) + lambda * norm_l1(w);
    (primal - dual_objective_raw(x, lambda, &theta), theta)
}

/// Solves the lasso to the configured relative duality gap.
///
/// A solve that hits `max_iters` still returns `Ok`, with `converged == false`
/// and the last iterate.
pub fn solve_lasso(
    problem: &LassoProblem<'_>,
    warm_start: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<LassoSolution> {
    config.validate()?;
    if let Some(w0) = warm_start {
        problem.check_weights(w0)?;
    }
    let started = Stopwatch::start();
    let dict: Cow<'_, Dictionary> = if problem.dictionary.is_file_backed() {
        Cow::Owned(problem.dictionary.to_memory()?)
    } else {
        Cow::Borrowed(problem.dictionary)
    };
    let data = dict.data().expect("in-memory dictionary");
    let rows = dict.rows();
    let w0 = warm_start.map_or_else(|| vec![0.0; dict.cols()], <[f64]>::to_vec);
    let tol = config.gap_tol * 0.5 * norm_sq(problem.x);

    let mut sol = match config.algorithm {
        Algorithm::CoordinateDescent => {
            coordinate_descent(data, rows, problem.x, problem.lambda, w0, tol, config)
        }
        Algorithm::ProximalGradient => {
            proximal_gradient(data, rows, problem.x, problem.lambda, w0, tol, config)
        }
    };
    sol.solve_seconds = started.seconds();
    Ok(sol)
}

fn residual_of(data: &[f64], rows: usize, x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut r = x.to_vec();
    for (a, &wj) in data.chunks_exact(rows).zip(w) {
        if wj != 0.0 {
            axpy(-wj, a, &mut r);
        }
    }
    r
}

fn correlations_of(data: &[f64], rows: usize, r: &[f64]) -> Vec<f64> {
    data.chunks_exact(rows).map(|a| dot(a, r)).collect()
}

fn coordinate_descent(
    data: &[f64],
    rows: usize,
    x: &[f64],
    lambda: f64,
    mut w: Vec<f64>,
    tol: f64,
    config: &SolverConfig,
) -> LassoSolution {
    let sq_norms: Vec<f64> = data.chunks_exact(rows).map(norm_sq).collect();
    let mut history = Vec::new();
    let mut epoch = 0;
    loop {
        // fresh residual each check keeps rounding drift out of the gap
        let check = epoch < 4 || epoch % 5 == 0 || epoch == config.max_iters;
        if check {
            let r = residual_of(data, rows, x, &w);
            let corr = correlations_of(data, rows, &r);
            let (mut gap, mut theta) = gap_from_residual(x, lambda, &w, &r, &corr);
            // also tried once the gap is small: an exact active-set solve is cheap
            {
                if let Some(candidate) = sign_fixed_polish(data, rows, x, lambda, &w) {
                    let rc = residual_of(data, rows, x, &candidate);
                    let cc = correlations_of(data, rows, &rc);
                    let (gc, tc) = gap_from_residual(x, lambda, &candidate, &rc, &cc);
                    if gc < gap {
                        (w, gap, theta) = (candidate, gc, tc);
                    }
                }
            }
            if gap <= tol || epoch == config.max_iters {
                return LassoSolution {
                    converged: gap <= tol,
                    w,
                    theta,
                    gap,
                    iterations: epoch,
                    solve_seconds: 0.0,
                    objective_history: history,
                };
            }
        }
        let mut r = residual_of(data, rows, x, &w);
        for (j, a) in data.chunks_exact(rows).enumerate() {
            let h = sq_norms[j];
            if h == 0.0 {
                continue;
            }
            let old = w[j];
            let new = soft_threshold(old + dot(a, &r) / h, lambda / h);
            if new != old {
                axpy(old - new, a, &mut r);
                w[j] = new;
            }
        }
        epoch += 1;
        if config.record_objective {
            history.push(0.5 * norm_sq(&r) + lambda * norm_l1(&w));
        }
    }
}

/// Solves `D_S^T D_S z = D_S^T x - lambda sign(w_S)` on the current support
/// `S`. With the right support and signs this is the exact lasso solution, so
/// coordinate descent only has to find the active set; the candidate is
/// dropped when any sign flips or the Gram matrix is singular.
fn sign_fixed_polish(data: &[f64], rows: usize, x: &[f64], lambda: f64, w: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
    if support.is_empty() || support.len() > rows {
        return None;
    }
    let col = |j: usize| &data[j * rows..(j + 1) * rows];
    let k = support.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(col(support[i]), col(support[j])));
    let rhs = DVector::from_fn(k, |i, _| dot(col(support[i]), x) - lambda * w[support[i]].signum());
    let z = gram.cholesky()?.solve(&rhs);
    let mut out = vec![0.0; w.len()];
    for (i, &j) in support.iter().enumerate() {
        if !(z[i] * w[j] > 0.0) {
            return None;
        }
        out[j] = z[i];
    }
    Some(out)
}

/// Largest eigenvalue of `D^T D` by power iteration.
pub(crate) fn top_eigenvalue(data: &[f64], rows: usize) -> f64 {
    let cols = data.len() / rows;
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let mut dv = vec![0.0; rows];
        for (a, &vj) in data.chunks_exact(rows).zip(&v) {
            axpy(vj, a, &mut dv);
        }
        let next = correlations_of(data, rows, &dv);
        // ||D^T D v|| for unit v
        let n = norm(&next);
        if n == 0.0 {
            return 0.0;
        }
        v = next.into_iter().map(|e| e / n).collect();
        if (n - estimate).abs() <= 1e-12 * n {
            return n;
        }
        estimate = n;
    }
    estimate
}

fn proximal_gradient(
    data: &[f64],
    rows: usize,
    x: &[f64],
    lambda: f64,
    mut w: Vec<f64>,
    tol: f64,
    config: &SolverConfig,
) -> LassoSolution {
    // power iteration approaches L from below; the margin keeps 1/L a valid step
    let lipschitz = top_eigenvalue(data, rows) * 1.01;
    let mut history = Vec::new();
    let mut iter = 0;
    loop {
        let r = residual_of(data, rows, x, &w);
        let corr = correlations_of(data, rows, &r);
        if config.record_objective && iter > 0 {
            history.push(0.5 * norm_sq(&r) + lambda * norm_l1(&w));
        }
        let (gap, theta) = gap_from_residual(x, lambda, &w, &r, &corr);
        if gap <= tol || iter == config.max_iters || lipschitz == 0.0 {
            return LassoSolution {
                converged: gap <= tol,
                w,
                theta,
                gap,
                iterations: iter,
                solve_seconds: 0.0,
                objective_history: history,
            };
        }
        for (wj, g) in w.iter_mut().zip(&corr) {
            *wj = soft_threshold(*wj + g / lipschitz, lambda / lipschitz);
        }
        iter += 1;
    }
}
