//! Browser bindings for the `www/` demo page. Every entry point returns a JSON
//! string; the `*_json` functions are the plain-Rust versions used by tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use seqscreen::{
    gen_synthetic, lambda_max, run_sequence, Region, RunOptions, ScreeningRule, SequenceStrategy,
    SequenceTrace, TargetMode,
};

/// Arc points per full turn when tracing a dome outline.
const OUTLINE_POINTS: usize = 240;

/// Largest instance the page will generate.
const MAX_CELLS: usize = 400 * 4000;

#[derive(Serialize)]
struct DomeView {
    /// Closed outline of the region, as `[x, y]` points.
    outline: Vec<[f64; 2]>,
    /// End points of the cut, absent when the plane misses the ball.
    chord: Option<[[f64; 2]; 2]>,
    diameter: f64,
    /// `max a^T theta` over the region.
    mu: f64,
    /// Feature `a` survives the two-sided test `max(mu(a), mu(-a)) >= 1`.
    kept: bool,
}

#[derive(Serialize)]
struct StepView {
    lambda_ratio: f64,
    kept: usize,
    diameter: Option<f64>,
}

#[derive(Serialize)]
struct RunView {
    label: String,
    cols: usize,
    n: usize,
    rejection: f64,
    /// Sum of kept columns over all steps; a machine-independent cost proxy.
    kept_total: usize,
    steps: Vec<StepView>,
}

#[derive(Serialize)]
struct CompareView {
    dass: RunView,
    geometric: RunView,
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn outline(q: [f64; 2], r: f64, n: [f64; 2], c: f64) -> (Vec<[f64; 2]>, Option<[[f64; 2]; 2]>) {
    let point = |phi: f64| [q[0] + r * phi.cos(), q[1] + r * phi.sin()];
    let depth = c - (n[0] * q[0] + n[1] * q[1]);
    if depth >= r {
        let step = std::f64::consts::TAU / OUTLINE_POINTS as f64;
        return ((0..OUTLINE_POINTS).map(|i| point(i as f64 * step)).collect(), None);
    }
    let foot = [q[0] + depth * n[0], q[1] + depth * n[1]];
    let half = (r * r - depth * depth).max(0.0).sqrt();
    let t = [-n[1], n[0]];
    let e1 = [foot[0] + half * t[0], foot[1] + half * t[1]];
    let e2 = [foot[0] - half * t[0], foot[1] - half * t[1]];
    let angle = |e: [f64; 2]| (e[1] - q[1]).atan2(e[0] - q[0]);
    let tau = std::f64::consts::TAU;
    let (a1, a2) = (angle(e1), angle(e2));
    // the kept arc passes through the point deepest inside the half-space
    let deep = (-n[1]).atan2(-n[0]);
    let span = (a2 - a1).rem_euclid(tau);
    let (start, sweep) = if (deep - a1).rem_euclid(tau) < span {
        (a1, span)
    } else {
        (a2, tau - span)
    };
    let count = ((sweep / tau) * OUTLINE_POINTS as f64).ceil().max(2.0) as usize;
    let pts = (0..=count)
        .map(|i| point(start + sweep * i as f64 / count as f64))
        .collect();
    (pts, Some([e1, e2]))
}

/// Geometry of a 2-D dome: ball `||theta - q|| <= r` cut by `n^T theta <= c`,
/// plus the screening value of the feature `a`.
#[allow(clippy::too_many_arguments)]
pub fn dome_json(qx: f64, qy: f64, r: f64, nx: f64, ny: f64, c: f64, ax: f64, ay: f64) -> Result<String, String> {
    let region = Region::dome(vec![qx, qy], r, vec![nx, ny], c).map_err(|e| e.to_string())?;
    let h = region.halfspace().expect("dome keeps its half-space");
    let n = [h.normal[0], h.normal[1]];
    let (outline, chord) = outline([qx, qy], r, n, h.offset);
    let a = [ax, ay];
    let mu = region.max_linear(&a);
    let mu_neg = region.max_linear(&[-ax, -ay]);
    to_json(&DomeView {
        outline,
        chord,
        diameter: region.diameter().map_err(|e| e.to_string())?,
        mu,
        kept: mu.max(mu_neg) >= 1.0,
    })
}

fn run_view(trace: &SequenceTrace, label: String) -> RunView {
    RunView {
        label,
        cols: trace.cols,
        n: trace.n,
        rejection: trace.final_rejection(),
        kept_total: trace.steps.iter().map(|s| s.kept_count).sum(),
        steps: trace
            .steps
            .iter()
            .map(|s| StepView {
                lambda_ratio: s.lambda / trace.lambda_max,
                kept: s.kept_count,
                diameter: s.region_diameter,
            })
            .collect(),
    }
}

fn synthetic_run(
    d: usize,
    p: usize,
    seed: u64,
    ratio: f64,
    strategy: &SequenceStrategy,
) -> Result<SequenceTrace, String> {
    if d.saturating_mul(p) > MAX_CELLS {
        return Err(format!("instance too large for the page: {d}x{p}"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(format!("lambda ratio must lie in (0, 1), got {ratio}"));
    }
    let (dict, x) = gen_synthetic(d, p, seed, TargetMode::Random).map_err(|e| e.to_string())?;
    let lm = lambda_max(&dict, &x).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        record_masks: false,
        ..RunOptions::default()
    };
    run_sequence(&dict, &x, ratio * lm.lambda_max, strategy, &opts).map_err(|e| e.to_string())
}

/// DASS on a synthetic `d x p` instance, down to `ratio * lambda_max`.
pub fn dass_json(d: usize, p: usize, seed: u64, ratio: f64, r: f64) -> Result<String, String> {
    let strategy = SequenceStrategy::dass(r);
    let trace = synthetic_run(d, p, seed, ratio, &strategy)?;
    to_json(&run_view(&trace, strategy.label()))
}

/// DASS against a geometric dome grid of the same length.
pub fn compare_json(d: usize, p: usize, seed: u64, ratio: f64, r: f64) -> Result<String, String> {
    let dass = SequenceStrategy::dass(r);
    let dass_trace = synthetic_run(d, p, seed, ratio, &dass)?;
    let geometric = SequenceStrategy::geometric(dass_trace.n.max(2), ScreeningRule::Dome);
    let geo_trace = synthetic_run(d, p, seed, ratio, &geometric)?;
    to_json(&CompareView {
        dass: run_view(&dass_trace, dass.label()),
        geometric: run_view(&geo_trace, geometric.label()),
    })
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn dome(qx: f64, qy: f64, r: f64, nx: f64, ny: f64, c: f64, ax: f64, ay: f64) -> Result<String, JsError> {
    dome_json(qx, qy, r, nx, ny, c, ax, ay).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn dass(d: usize, p: usize, seed: u32, ratio: f64, r: f64) -> Result<String, JsError> {
    dass_json(d, p, seed as u64, ratio, r).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare(d: usize, p: usize, seed: u32, ratio: f64, r: f64) -> Result<String, JsError> {
    compare_json(d, p, seed as u64, ratio, r).map_err(|e| JsError::new(&e))
}
