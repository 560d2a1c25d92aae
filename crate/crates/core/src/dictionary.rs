//! Dictionary storage, column streaming and the `lambda_max` computation.
//!
//! A [`Dictionary`] is a `d x p` column-major matrix held either in memory or
//! in a DMAT file. Every pass over the columns goes through
//! [`Dictionary::chunks`], which for file-backed storage reuses one buffer of
//! at most `d * chunk_size` values.

use std::fs::File;
use std::io::{Seek, SeekFrom};
use std::ops::{Deref, Range};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{self, DmatHeader, DMAT_HEADER_BYTES};
use crate::vecops::{axpy, dot, norm};

/// Tolerance on column norms for a dictionary flagged as normalized.
pub const NORMALIZED_TOL: f64 = 1e-9;

/// Column block size used when callers do not pick one.
pub const DEFAULT_CHUNK_SIZE: usize = 256;

#[derive(Debug, Clone)]
enum Storage {
    Memory(Vec<f64>),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct Dictionary {
    rows: usize,
    cols: usize,
    storage: Storage,
    column_norms: Option<Vec<f64>>,
    normalized: bool,
}

impl Dictionary {
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "dictionary must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} dictionary",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite entry in column {}",
                i / rows
            )));
        }
        Ok(Dictionary {
            rows,
            cols,
            storage: Storage::Memory(data),
            column_norms: None,
            normalized: false,
        })
    }

    /// Builds a dictionary from a list of equally long columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch("columns differ in length".into()));
        }
        Self::from_column_major(rows, columns.len(), columns.concat())
    }

    /// Opens a DMAT file without loading its payload.
    pub fn open_dmat(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header = format::read_dmat_header(&mut File::open(path)?)?;
        Ok(Dictionary {
            rows: header.rows,
            cols: header.cols,
            storage: Storage::File(path.to_path_buf()),
            column_norms: None,
            normalized: false,
        })
    }

    pub fn load_dmat(path: impl AsRef<Path>) -> Result<Self> {
        let (DmatHeader { rows, cols }, data) = format::read_dmat(path)?;
        Self::from_column_major(rows, cols, data)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (DmatHeader { rows, cols }, data) = format::read_csv_matrix(path)?;
        Self::from_column_major(rows, cols, data)
    }

    /// Writes the dictionary as DMAT, streaming columns for file-backed input.
    pub fn write_dmat(&self, path: impl AsRef<Path>) -> Result<()> {
        match &self.storage {
            Storage::Memory(data) => format::write_dmat(path, self.rows, self.cols, data),
            Storage::File(_) => self.to_memory()?.write_dmat(path),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_file_backed(&self) -> bool {
        matches!(self.storage, Storage::File(_))
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Column-major payload, for in-memory dictionaries only.
    pub fn data(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Memory(data) => Some(data),
            Storage::File(_) => None,
        }
    }

    /// Column `j`, for in-memory dictionaries only.
    pub fn column(&self, j: usize) -> Option<&[f64]> {
        if j >= self.cols {
            return None;
        }
        self.data().map(|d| &d[j * self.rows..(j + 1) * self.rows])
    }

    /// Reads a single column regardless of storage.
    pub fn read_column(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.cols {
            return Err(Error::InvalidParameter(format!(
                "column {j} out of range for {} columns",
                self.cols
            )));
        }
        match &self.storage {
            Storage::Memory(_) => Ok(self.column(j).unwrap().to_vec()),
            Storage::File(path) => {
                let mut file = File::open(path)?;
                file.seek(SeekFrom::Start(DMAT_HEADER_BYTES + (j * self.rows * 8) as u64))?;
                let mut col = vec![0.0; self.rows];
                format::read_f64_into(&mut file, &mut col)?;
                Ok(col)
            }
        }
    }

    /// Per-column l2 norms; computed once and cached.
    pub fn column_norms(&mut self) -> Result<&[f64]> {
        if self.column_norms.is_none() {
            let norms = self.compute_column_norms()?;
            self.column_norms = Some(norms);
        }
        Ok(self.column_norms.as_deref().unwrap())
    }

    fn compute_column_norms(&self) -> Result<Vec<f64>> {
        let mut norms = Vec::with_capacity(self.cols);
        self.for_each_chunk(DEFAULT_CHUNK_SIZE, |block| {
            norms.extend(block.columns().map(norm));
            Ok(())
        })?;
        Ok(norms)
    }

    /// Sets the normalized flag if every column norm is within tolerance of 1.
    pub fn check_normalized(&mut self) -> Result<bool> {
        let ok = self
            .column_norms()?
            .iter()
            .all(|n| (n - 1.0).abs() <= NORMALIZED_TOL);
        self.normalized = ok;
        Ok(ok)
    }

    /// Streams contiguous column blocks of width `chunk_size` (the last may be narrower).
    pub fn chunks(&self, chunk_size: usize) -> Result<ColumnChunks<'_>> {
        if chunk_size == 0 {
            return Err(Error::InvalidParameter("chunk_size must be at least 1".into()));
        }
        let reader = match &self.storage {
            Storage::Memory(_) => None,
            Storage::File(path) => {
                let mut file = File::open(path)?;
                file.seek(SeekFrom::Start(DMAT_HEADER_BYTES))?;
                Some(file)
            }
        };
        Ok(ColumnChunks {
            dict: self,
            chunk_size: chunk_size.min(self.cols),
            next: 0,
            reader,
            buf: Vec::new(),
        })
    }

    pub fn for_each_chunk<F>(&self, chunk_size: usize, mut f: F) -> Result<()>
    where
        F: FnMut(ColumnBlock<'_>) -> Result<()>,
    {
        let mut chunks = self.chunks(chunk_size)?;
        while let Some(block) = chunks.next_block() {
            f(block?)?;
        }
        Ok(())
    }

    /// Loads a file-backed dictionary into memory; clones an in-memory one.
    pub fn to_memory(&self) -> Result<Dictionary> {
        match &self.storage {
            Storage::Memory(_) => Ok(self.clone()),
            Storage::File(_) => {
                let mut data = Vec::with_capacity(self.rows * self.cols);
                self.for_each_chunk(DEFAULT_CHUNK_SIZE, |block| {
                    data.extend_from_slice(block.data());
                    Ok(())
                })?;
                let mut dict = Dictionary::from_column_major(self.rows, self.cols, data)?;
                dict.column_norms = self.column_norms.clone();
                dict.normalized = self.normalized;
                Ok(dict)
            }
        }
    }

    /// Gathers the listed columns (strictly increasing indices) into an in-memory dictionary.
    pub fn select_columns(&self, indices: &[usize], chunk_size: usize) -> Result<Dictionary> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "column indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= self.cols {
                return Err(Error::InvalidParameter(format!("column {last} out of range")));
            }
        }
        let mut data = Vec::with_capacity(indices.len() * self.rows);
        match &self.storage {
            Storage::Memory(_) => {
                for &j in indices {
                    data.extend_from_slice(self.column(j).unwrap());
                }
            }
            Storage::File(_) => {
                let mut pos = 0;
                self.for_each_chunk(chunk_size, |block| {
                    let end = block.start + block.width();
                    while pos < indices.len() && indices[pos] < end {
                        data.extend_from_slice(block.column(indices[pos] - block.start));
                        pos += 1;
                    }
                    Ok(())
                })?;
            }
        }
        if indices.is_empty() {
            // zero-column reduced problems are represented by the caller, not here
            return Err(Error::InvalidParameter("no columns selected".into()));
        }
        let mut dict = Dictionary::from_column_major(self.rows, indices.len(), data)?;
        dict.normalized = self.normalized;
        if let Some(norms) = &self.column_norms {
            dict.column_norms = Some(indices.iter().map(|&j| norms[j]).collect());
        }
        Ok(dict)
    }

    /// `D^T v`.
    pub fn transpose_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_rows(v.len())?;
        if let Some(data) = self.data() {
            let mut out = vec![0.0; self.cols];
            transpose_mul_into(data, self.rows, v, &mut out);
            return Ok(out);
        }
        let mut out = Vec::with_capacity(self.cols);
        self.for_each_chunk(DEFAULT_CHUNK_SIZE, |block| {
            out.extend(block.columns().map(|a| dot(a, v)));
            Ok(())
        })?;
        Ok(out)
    }

    /// `D w`, skipping zero weights.
    pub fn mul(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "weight vector has length {}, dictionary has {} columns",
                w.len(),
                self.cols
            )));
        }
        let mut out = vec![0.0; self.rows];
        self.for_each_chunk(DEFAULT_CHUNK_SIZE, |block| {
            for (j, a) in block.columns().enumerate() {
                let wj = w[block.start + j];
                if wj != 0.0 {
                    axpy(wj, a, &mut out);
                }
            }
            Ok(())
        })?;
        Ok(out)
    }

    pub(crate) fn check_rows(&self, len: usize) -> Result<()> {
        if len != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "vector has length {len}, dictionary has {} rows",
                self.rows
            )));
        }
        Ok(())
    }
}

#[cfg(feature = "parallel")]
fn transpose_mul_into(data: &[f64], rows: usize, v: &[f64], out: &mut [f64]) {
    use rayon::prelude::*;
    // below this size the fork/join overhead dominates
    if data.len() < 1 << 16 {
        for (o, a) in out.iter_mut().zip(data.chunks_exact(rows)) {
            *o = dot(a, v);
        }
    } else {
        out.par_iter_mut()
            .zip(data.par_chunks_exact(rows))
            .for_each(|(o, a)| *o = dot(a, v));
    }
}

#[cfg(not(feature = "parallel"))]
fn transpose_mul_into(data: &[f64], rows: usize, v: &[f64], out: &mut [f64]) {
    for (o, a) in out.iter_mut().zip(data.chunks_exact(rows)) {
        *o = dot(a, v);
    }
}

/// A contiguous block of columns `start..start + width`.
#[derive(Debug, Clone, Copy)]
pub struct ColumnBlock<'a> {
    pub start: usize,
    rows: usize,
    data: &'a [f64],
}

impl<'a> ColumnBlock<'a> {
    pub fn width(&self) -> usize {
        self.data.len() / self.rows
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn column(&self, j: usize) -> &'a [f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'a, f64> {
        self.data.chunks_exact(self.rows)
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }
}

/// Lending stream over column blocks; see [`Dictionary::chunks`].
pub struct ColumnChunks<'a> {
    dict: &'a Dictionary,
    chunk_size: usize,
    next: usize,
    reader: Option<File>,
    buf: Vec<f64>,
}

impl ColumnChunks<'_> {
    pub fn next_block(&mut self) -> Option<Result<ColumnBlock<'_>>> {
        let dict = self.dict;
        if self.next >= dict.cols {
            return None;
        }
        let start = self.next;
        let width = self.chunk_size.min(dict.cols - start);
        self.next += width;
        let rows = dict.rows;
        match &dict.storage {
            Storage::Memory(data) => Some(Ok(ColumnBlock {
                start,
                rows,
                data: &data[start * rows..(start + width) * rows],
            })),
            Storage::File(_) => {
                if self.buf.is_empty() {
                    self.buf = vec![0.0; self.chunk_size * rows];
                }
                let slot = &mut self.buf[..width * rows];
                let reader = self.reader.as_mut().expect("file-backed stream has a reader");
                if let Err(e) = format::read_f64_into(reader, slot) {
                    self.next = dict.cols;
                    return Some(Err(e));
                }
                if let Some(i) = slot.iter().position(|v| !v.is_finite()) {
                    self.next = dict.cols;
                    return Some(Err(Error::Format(format!(
                        "DMAT: non-finite value in column {}",
                        start + i / rows
                    ))));
                }
                Some(Ok(ColumnBlock { start, rows, data: slot }))
            }
        }
    }
}

/// Column index ranges of the blocks `chunks(chunk_size)` would yield.
pub fn chunk_ranges(cols: usize, chunk_size: usize) -> impl Iterator<Item = Range<usize>> {
    let step = chunk_size.max(1);
    (0..cols).step_by(step).map(move |s| s..(s + step).min(cols))
}

/// The data point `x` being represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetVector(Vec<f64>);

impl TargetVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("target vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("target vector has non-finite entries".into()));
        }
        Ok(TargetVector(values))
    }

    pub fn load_dvec(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(format::read_dvec(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(format::read_csv_vector(path)?)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn nonzero(&self) -> Result<f64> {
        let n = self.norm();
        if n > 0.0 {
            Ok(n)
        } else {
            Err(Error::ZeroTarget)
        }
    }
}

impl Deref for TargetVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaMaxResult {
    pub lambda_max: f64,
    /// Zero-based column index of the first maximizer.
    pub argmax_index: usize,
    /// Sign of `a_*^T x`, as `+1.0` or `-1.0`.
    pub sign: f64,
}

/// `lambda_max = max_i |a_i^T x|`, ties broken by the lowest index.
pub fn lambda_max(dict: &Dictionary, x: &TargetVector) -> Result<LambdaMaxResult> {
    dict.check_rows(x.len())?;
    x.nonzero()?;
    let corr = dict.transpose_mul(x)?;
    Ok(lambda_max_from_correlations(&corr))
}

pub(crate) fn lambda_max_from_correlations(corr: &[f64]) -> LambdaMaxResult {
    let mut best = LambdaMaxResult {
        lambda_max: -1.0,
        argmax_index: 0,
        sign: 1.0,
    };
    for (i, c) in corr.iter().enumerate() {
        if c.abs() > best.lambda_max {
            best = LambdaMaxResult {
                lambda_max: c.abs(),
                argmax_index: i,
                sign: if *c < 0.0 { -1.0 } else { 1.0 },
            };
        }
    }
    best
}

/// Scales every column to unit l2 norm. The result lives in memory.
pub fn normalize_columns(dict: &Dictionary) -> Result<Dictionary> {
    let mut out = dict.to_memory()?;
    let rows = out.rows;
    let mut norms = Vec::with_capacity(out.cols);
    if let Storage::Memory(data) = &mut out.storage {
        for (j, col) in data.chunks_exact_mut(rows).enumerate() {
            let n = norm(col);
            if n == 0.0 {
                return Err(Error::ZeroColumn { index: j });
            }
            col.iter_mut().for_each(|v| *v /= n);
            norms.push(norm(col));
        }
    }
    out.column_norms = Some(norms);
    out.normalized = true;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Standard normal, scaled to unit norm.
    Random,
    /// `D w0 / ||D w0||` for a sparse random `w0`; lies in the range of `D`.
    InRange,
}

/// Fraction of nonzeros in the `InRange` generating vector.
const IN_RANGE_SUPPORT_FRACTION: f64 = 0.1;

/// Seeded test instance: i.i.d. normal unit-norm columns plus a unit-norm target.
pub fn gen_synthetic(
    d: usize,
    p: usize,
    seed: u64,
    mode: TargetMode,
) -> Result<(Dictionary, TargetVector)> {
    if d == 0 || p == 0 {
        return Err(Error::InvalidParameter(format!("need d, p >= 1, got {d}x{p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..d * p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let dict = normalize_columns(&Dictionary::from_column_major(d, p, data)?)?;

    let mut x: Vec<f64> = match mode {
        TargetMode::Random => (0..d).map(|_| StandardNormal.sample(&mut rng)).collect(),
        TargetMode::InRange => {
            let support = ((IN_RANGE_SUPPORT_FRACTION * p as f64).round() as usize)
                .clamp(1, d.min(p));
            let mut w0 = vec![0.0; p];
            for j in sample(&mut rng, p, support).iter() {
                w0[j] = StandardNormal.sample(&mut rng);
            }
            dict.mul(&w0)?
        }
    };
    let n = norm(&x);
    if n == 0.0 {
        return Err(Error::ZeroTarget);
    }
    x.iter_mut().for_each(|v| *v /= n);
    Ok((dict, TargetVector::new(x)?))
}
