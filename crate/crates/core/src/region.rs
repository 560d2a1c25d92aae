//! Dual bounding regions and the screening tests built on them.
//!
//! A [`Region`] is a sphere `{theta : ||theta - q|| <= r}`, optionally cut by
//! one half-space `{theta : n^T theta <= c}` (a dome). Screening evaluates
//! `mu(a) = max_{theta in region} a^T theta` in closed form and discards a
//! feature when both `mu(a) < 1` and `mu(-a) < 1`.

use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, LambdaMaxResult, TargetVector, DEFAULT_CHUNK_SIZE};
use crate::error::{Error, Result};
use crate::solver::residual_and_correlations;
use crate::vecops::{dot, norm, norm_sq};

/// Radii and alignment norms at or below this are treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Rounding guard on the screening test: a feature is kept when
/// `mu >= 1 - SCREEN_MARGIN`. Features that were active at the previous step
/// sit exactly on the dome boundary, where the exact `mu` is 1 and the
/// computed one can land a few ulps below it.
pub const SCREEN_MARGIN: f64 = 1e-12;

/// Allowed deviation of a half-space normal from unit length.
pub const UNIT_NORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    /// Unit normal `n`.
    pub normal: Vec<f64>,
    /// Offset `c` in `n^T theta <= c`.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    center: Vec<f64>,
    radius: f64,
    halfspace: Option<Halfspace>,
}

impl Region {
    pub fn sphere(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::DegenerateRegion(format!(
                "sphere radius must be positive, got {radius:e}"
            )));
        }
        Ok(Region {
            center,
            radius,
            halfspace: None,
        })
    }

    /// Sphere cut by `n^T theta <= c`. A non-unit normal is rescaled together
    /// with the offset.
    pub fn dome(center: Vec<f64>, radius: f64, normal: Vec<f64>, offset: f64) -> Result<Self> {
        if normal.len() != center.len() {
            return Err(Error::DimensionMismatch(format!(
                "normal has length {}, center has {}",
                normal.len(),
                center.len()
            )));
        }
        let mut region = Region::sphere(center, radius)?;
        let nn = norm(&normal);
        if !(nn > 0.0) {
            return Err(Error::DegenerateRegion("half-space normal is zero".into()));
        }
        let (normal, offset) = if (nn - 1.0).abs() <= UNIT_NORMAL_TOL {
            (normal, offset)
        } else {
            (normal.iter().map(|v| v / nn).collect(), offset / nn)
        };
        if offset <= dot(&normal, &region.center) - radius {
            return Err(Error::EmptyInterior);
        }
        region.halfspace = Some(Halfspace { normal, offset });
        Ok(region)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn halfspace(&self) -> Option<&Halfspace> {
        self.halfspace.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Membership with absolute slack `tol` on both constraints.
    pub fn contains(&self, theta: &[f64], tol: f64) -> bool {
        let dist = norm(&theta.iter().zip(&self.center).map(|(a, b)| a - b).collect::<Vec<_>>());
        let in_sphere = dist <= self.radius + tol;
        let in_half = self
            .halfspace
            .as_ref()
            .is_none_or(|h| dot(&h.normal, theta) <= h.offset + tol);
        in_sphere && in_half
    }

    /// `(c - n^T q) / r`, clamped below at -1 for rounding on near-point domes.
    fn cap(&self) -> Option<(&[f64], f64)> {
        self.halfspace.as_ref().map(|h| {
            let delta = (h.offset - dot(&h.normal, &self.center)) / self.radius;
            (h.normal.as_slice(), delta.max(-1.0))
        })
    }

    /// Diameter of the region: `2 sqrt(r^2 - (n^T q - c)^2)` when the center
    /// is cut off by the half-space, `2 r` otherwise.
    pub fn diameter(&self) -> Result<f64> {
        match &self.halfspace {
            None => Ok(2.0 * self.radius),
            Some(h) => {
                let excess = dot(&h.normal, &self.center) - h.offset;
                if h.offset <= dot(&h.normal, &self.center) - self.radius {
                    return Err(Error::EmptyInterior);
                }
                if excess > 0.0 {
                    Ok(2.0 * (self.radius * self.radius - excess * excess).max(0.0).sqrt())
                } else {
                    Ok(2.0 * self.radius)
                }
            }
        }
    }

    /// `mu(a) = max_{theta in region} a^T theta`.
    pub fn max_linear(&self, a: &[f64]) -> f64 {
        self.max_linear_pair(a, self.cap()).0
    }

    /// `(mu(a), mu(-a))` sharing the dot products.
    fn max_linear_pair(&self, a: &[f64], cap: Option<(&[f64], f64)>) -> (f64, f64) {
        let aq = dot(a, &self.center);
        let a_norm = norm(a);
        let r = self.radius;
        match cap {
            None => (aq + r * a_norm, -aq + r * a_norm),
            Some((n, delta)) => {
                let t = dot(n, a);
                let perp = a
                    .iter()
                    .zip(n)
                    .map(|(ai, ni)| {
                        let e = ai - t * ni;
                        e * e
                    })
                    .sum::<f64>()
                    .sqrt();
                let side = (1.0 - delta * delta).max(0.0).sqrt();
                let one_side = |aq: f64, t: f64| {
                    if t <= delta * a_norm {
                        aq + r * a_norm
                    } else {
                        aq + r * (delta * t + side * perp)
                    }
                };
                (one_side(aq, t), one_side(-aq, -t))
            }
        }
    }
}

/// Free-function form of [`Region::diameter`].
pub fn region_diameter(region: &Region) -> Result<f64> {
    region.diameter()
}

/// Free-function form of [`Region::max_linear`].
pub fn region_max(region: &Region, a: &[f64]) -> Result<f64> {
    if a.len() != region.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature has length {}, region lives in dimension {}",
            a.len(),
            region.dim()
        )));
    }
    Ok(region.max_linear(a))
}

/// A constructed region plus whether construction fell back to the sphere alone.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltRegion {
    pub region: Region,
    pub degenerate: bool,
}

/// First-step region: the sphere centered at `x/lambda_1` through `x/lambda_max`,
/// cut by the constraint of the most correlated feature.
pub fn build_initial_region(
    x: &TargetVector,
    lambda_1: f64,
    lmr: &LambdaMaxResult,
    a_star: &[f64],
) -> Result<BuiltRegion> {
    if !(lambda_1 > 0.0) || lambda_1 >= lmr.lambda_max {
        return Err(Error::InvalidParameter(format!(
            "need 0 < lambda_1 < lambda_max = {}, got {lambda_1}",
            lmr.lambda_max
        )));
    }
    if a_star.len() != x.len() {
        return Err(Error::DimensionMismatch("a_star and x differ in length".into()));
    }
    let q: Vec<f64> = x.iter().map(|v| v / lambda_1).collect();
    let radius = x
        .iter()
        .map(|v| v / lambda_1 - v / lmr.lambda_max)
        .map(|e| e * e)
        .sum::<f64>()
        .sqrt();
    if radius < DEGENERACY_TOL {
        return Err(Error::DegenerateRegion(format!(
            "initial radius {radius:e}; lambda_1 too close to lambda_max"
        )));
    }
    let normal: Vec<f64> = a_star.iter().map(|v| lmr.sign * v).collect();
    match Region::dome(q.clone(), radius, normal, 1.0) {
        Ok(region) => Ok(BuiltRegion {
            region,
            degenerate: false,
        }),
        // x parallel to a_*: the dome shrinks to a point; keep the sphere
        Err(Error::EmptyInterior) => Ok(BuiltRegion {
            region: Region::sphere(q, radius)?,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

/// Step region from the previous dual point: sphere centered at `x/lambda_k`
/// through `theta_prev`, cut by the hyperplane through `theta_prev` with
/// normal along `x/lambda_prev - theta_prev`.
///
/// Returns the sphere alone, flagged degenerate, when `x/lambda_prev` and
/// `theta_prev` (nearly) coincide or the dome would collapse to a point.
/// Fails with [`Error::CenterInsideRegion`] if `n^T q <= c`, which an exact
/// `theta_prev` can never produce.
pub fn build_step_region(
    x: &TargetVector,
    lambda_k: f64,
    lambda_prev: f64,
    theta_prev: &[f64],
) -> Result<BuiltRegion> {
    if !(lambda_k > 0.0) || lambda_k >= lambda_prev {
        return Err(Error::InvalidParameter(format!(
            "need 0 < lambda_k < lambda_prev, got {lambda_k} and {lambda_prev}"
        )));
    }
    if theta_prev.len() != x.len() {
        return Err(Error::DimensionMismatch("theta_prev and x differ in length".into()));
    }
    let q: Vec<f64> = x.iter().map(|v| v / lambda_k).collect();
    let radius = q
        .iter()
        .zip(theta_prev)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if radius < DEGENERACY_TOL {
        return Err(Error::DegenerateRegion(format!("step radius {radius:e}")));
    }
    let v: Vec<f64> = x
        .iter()
        .zip(theta_prev)
        .map(|(xi, t)| xi / lambda_prev - t)
        .collect();
    let v_norm = norm(&v);
    if v_norm <= DEGENERACY_TOL {
        return Ok(BuiltRegion {
            region: Region::sphere(q, radius)?,
            degenerate: true,
        });
    }
    let normal: Vec<f64> = v.iter().map(|e| e / v_norm).collect();
    let offset = dot(&normal, theta_prev);
    let margin = dot(&normal, &q) - offset;
    if margin <= 0.0 {
        return Err(Error::CenterInsideRegion { margin });
    }
    if margin >= radius * (1.0 - DEGENERACY_TOL) {
        return Ok(BuiltRegion {
            region: Region::sphere(q, radius)?,
            degenerate: true,
        });
    }
    Ok(BuiltRegion {
        region: Region::dome(q, radius, normal, offset)?,
        degenerate: false,
    })
}

/// Closed-form diameter of the step region:
/// `2 (1/lambda_k - 1/lambda_prev) sqrt(x^T (I - n n^T) x)`.
pub fn step_diameter(x: &[f64], n_prev: &[f64], lambda_k: f64, lambda_prev: f64) -> f64 {
    2.0 * (1.0 / lambda_k - 1.0 / lambda_prev) * projected_energy(x, n_prev).sqrt()
}

/// `x^T (I - n n^T) x` for unit `n`, floored at zero.
pub(crate) fn projected_energy(x: &[f64], n: &[f64]) -> f64 {
    let t = dot(n, x);
    (norm_sq(x) - t * t).max(0.0)
}

/// Sphere around the previous dual point of radius
/// `||x|| (1/lambda_k - 1/lambda_prev)`; with a unit-norm target this is the
/// plain `1/lambda_k - 1/lambda_prev` ball.
pub fn dpp_region(
    theta_prev: &[f64],
    lambda_k: f64,
    lambda_prev: f64,
    x_norm: f64,
) -> Result<Region> {
    if !(lambda_k > 0.0) || lambda_k >= lambda_prev {
        return Err(Error::InvalidParameter(format!(
            "need 0 < lambda_k < lambda_prev, got {lambda_k} and {lambda_prev}"
        )));
    }
    let radius = x_norm * (1.0 / lambda_k - 1.0 / lambda_prev);
    if radius < DEGENERACY_TOL {
        return Err(Error::DegenerateRegion(format!("DPP radius {radius:e}")));
    }
    Region::sphere(theta_prev.to_vec(), radius)
}

/// Survival of each feature after a screening pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeepMask {
    keep: Vec<bool>,
    kept_count: usize,
}

impl KeepMask {
    pub fn new(keep: Vec<bool>) -> Self {
        let kept_count = keep.iter().filter(|&&k| k).count();
        KeepMask { keep, kept_count }
    }

    pub fn all(p: usize) -> Self {
        KeepMask {
            keep: vec![true; p],
            kept_count: p,
        }
    }

    pub fn none(p: usize) -> Self {
        KeepMask {
            keep: vec![false; p],
            kept_count: 0,
        }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub fn kept_count(&self) -> usize {
        self.kept_count
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn rejected_count(&self) -> usize {
        self.keep.len() - self.kept_count
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect()
    }
}

/// One-shot screening of every column against `region`, with the default chunk size.
pub fn screen(dict: &Dictionary, region: &Region) -> Result<KeepMask> {
    screen_chunked(dict, region, DEFAULT_CHUNK_SIZE)
}

/// Screens column blocks of width `chunk_size`; a feature survives when
/// `mu(a) >= 1` or `mu(-a) >= 1`, up to [`SCREEN_MARGIN`].
pub fn screen_chunked(dict: &Dictionary, region: &Region, chunk_size: usize) -> Result<KeepMask> {
    if region.dim() != dict.rows() {
        return Err(Error::DimensionMismatch(format!(
            "region dimension {} vs dictionary rows {}",
            region.dim(),
            dict.rows()
        )));
    }
    if chunk_size == 0 {
        return Err(Error::InvalidParameter("chunk_size must be at least 1".into()));
    }
    let cap = region.cap();
    let survives = |a: &[f64]| {
        let (plus, minus) = region.max_linear_pair(a, cap);
        plus >= 1.0 - SCREEN_MARGIN || minus >= 1.0 - SCREEN_MARGIN
    };
    let mut keep = vec![false; dict.cols()];
    match dict.data() {
        Some(data) => screen_in_memory(data, dict.rows(), chunk_size, &mut keep, &survives),
        None => {
            dict.for_each_chunk(chunk_size, |block| {
                for (j, a) in block.columns().enumerate() {
                    keep[block.start + j] = survives(a);
                }
                Ok(())
            })?;
        }
    }
    Ok(KeepMask::new(keep))
}

#[cfg(feature = "parallel")]
fn screen_in_memory<F>(data: &[f64], rows: usize, chunk_size: usize, keep: &mut [bool], survives: &F)
where
    F: Fn(&[f64]) -> bool + Sync,
{
    use rayon::prelude::*;
    keep.par_chunks_mut(chunk_size)
        .zip(data.par_chunks(chunk_size * rows))
        .for_each(|(out, block)| {
            for (k, a) in out.iter_mut().zip(block.chunks_exact(rows)) {
                *k = survives(a);
            }
        });
}

#[cfg(not(feature = "parallel"))]
fn screen_in_memory<F>(data: &[f64], rows: usize, chunk_size: usize, keep: &mut [bool], survives: &F)
where
    F: Fn(&[f64]) -> bool,
{
    for (out, block) in keep.chunks_mut(chunk_size).zip(data.chunks(chunk_size * rows)) {
        for (k, a) in out.iter_mut().zip(block.chunks_exact(rows)) {
            *k = survives(a);
        }
    }
}

/// Sequential Strong rule: discard `i` when `|a_i^T (x - D w_prev)| < 2 lambda_k - lambda_prev`.
/// Not safe; may discard features of the true support.
pub fn strong_rule_screen(
    dict: &Dictionary,
    x: &TargetVector,
    lambda_k: f64,
    lambda_prev: f64,
    w_prev: &[f64],
) -> Result<KeepMask> {
    if lambda_k >= lambda_prev {
        return Err(Error::InvalidParameter(format!(
            "need lambda_k < lambda_prev, got {lambda_k} and {lambda_prev}"
        )));
    }
    dict.check_rows(x.len())?;
    if w_prev.len() != dict.cols() {
        return Err(Error::DimensionMismatch(format!(
            "w_prev has length {}, dictionary has {} columns",
            w_prev.len(),
            dict.cols()
        )));
    }
    let threshold = 2.0 * lambda_k - lambda_prev;
    if threshold <= 0.0 {
        return Ok(KeepMask::all(dict.cols()));
    }
    let (_, corr) = residual_and_correlations(dict, x, w_prev)?;
    Ok(KeepMask::new(corr.iter().map(|c| c.abs() >= threshold).collect()))
}
