//! On-disk formats.
//!
//! `DMAT`: 8-byte magic `SSDMAT01`, `rows: u64 LE`, `cols: u64 LE`, then
//! `rows * cols` binary64 values, little-endian, column-major.
//!
//! `DVEC`: 8-byte magic `SSDVEC01`, `len: u64 LE`, then `len` binary64 values.
//!
//! A header-free, row-major CSV import is also provided for small hand-made
//! inputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DMAT_MAGIC: &[u8; 8] = b"SSDMAT01";
pub const DVEC_MAGIC: &[u8; 8] = b"SSDVEC01";
pub const DMAT_HEADER_BYTES: u64 = 24;
pub const DVEC_HEADER_BYTES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmatHeader {
    pub rows: usize,
    pub cols: usize,
}

impl DmatHeader {
    pub fn payload_bytes(&self) -> Option<u64> {
        (self.rows as u64)
            .checked_mul(self.cols as u64)
            .and_then(|n| n.checked_mul(8))
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn check_magic(r: &mut impl Read, magic: &[u8; 8], what: &str) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("{what}: file too short for header")))?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Reads and validates a DMAT header, including the total file size.
pub fn read_dmat_header(file: &mut File) -> Result<DmatHeader> {
    check_magic(file, DMAT_MAGIC, "DMAT")?;
    let rows = read_u64(file)?;
    let cols = read_u64(file)?;
    let header = DmatHeader {
        rows: usize::try_from(rows).map_err(|_| Error::Format("DMAT: row count overflows".into()))?,
        cols: usize::try_from(cols).map_err(|_| Error::Format("DMAT: column count overflows".into()))?,
    };
    if header.rows == 0 || header.cols == 0 {
        return Err(Error::Format(format!(
            "DMAT: empty matrix {}x{}",
            header.rows, header.cols
        )));
    }
    let payload = header
        .payload_bytes()
        .ok_or_else(|| Error::Format("DMAT: size overflows".into()))?;
    let actual = file.metadata()?.len();
    if actual != DMAT_HEADER_BYTES + payload {
        return Err(Error::Format(format!(
            "DMAT: file is {actual} bytes, header implies {}",
            DMAT_HEADER_BYTES + payload
        )));
    }
    Ok(header)
}

/// Fills `out` with little-endian binary64 values read from `r`.
pub(crate) fn read_f64_into(r: &mut impl Read, out: &mut [f64]) -> Result<()> {
    r.read_exact(bytemuck::cast_slice_mut(out))?;
    for v in out.iter_mut() {
        *v = f64::from_bits(u64::from_le(v.to_bits()));
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("{what}: non-finite value at offset {i}")));
    }
    Ok(())
}

/// Reads a whole DMAT file, returning the header and the column-major payload.
pub fn read_dmat(path: impl AsRef<Path>) -> Result<(DmatHeader, Vec<f64>)> {
    let mut file = File::open(path.as_ref())?;
    let header = read_dmat_header(&mut file)?;
    let mut data = vec![0.0; header.rows * header.cols];
    read_f64_into(&mut BufReader::new(file), &mut data)?;
    check_finite(&data, "DMAT")?;
    Ok((header, data))
}

pub fn write_dmat(path: impl AsRef<Path>, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "payload has {} values, expected {rows}x{cols}",
            data.len()
        )));
    }
    check_finite(data, "DMAT")?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(DMAT_MAGIC)?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dvec(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mut file = File::open(path.as_ref())?;
    check_magic(&mut file, DVEC_MAGIC, "DVEC")?;
    let len = read_u64(&mut file)?;
    let actual = file.metadata()?.len();
    let expected = len
        .checked_mul(8)
        .and_then(|b| b.checked_add(DVEC_HEADER_BYTES))
        .ok_or_else(|| Error::Format("DVEC: size overflows".into()))?;
    if actual != expected {
        return Err(Error::Format(format!(
            "DVEC: file is {actual} bytes, header implies {expected}"
        )));
    }
    let mut data = vec![0.0; len as usize];
    read_f64_into(&mut BufReader::new(file), &mut data)?;
    check_finite(&data, "DVEC")?;
    Ok(data)
}

pub fn write_dvec(path: impl AsRef<Path>, data: &[f64]) -> Result<()> {
    check_finite(data, "DVEC")?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(DVEC_MAGIC)?;
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                let field = field.trim();
                field.parse::<f64>().map_err(|_| {
                    Error::Format(format!("CSV line {}: cannot parse {field:?}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        check_finite(&row, "CSV")?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a header-free, row-major CSV matrix and returns it column-major.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<(DmatHeader, Vec<f64>)> {
    let rows = parse_csv_rows(path.as_ref())?;
    let d = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if d == 0 || p == 0 {
        return Err(Error::Format("CSV: empty matrix".into()));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != p) {
        return Err(Error::Format(format!(
            "CSV: row {} has {} fields, expected {p}",
            i + 1,
            rows[i].len()
        )));
    }
    let mut data = vec![0.0; d * p];
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            data[j * d + i] = *v;
        }
    }
    Ok((DmatHeader { rows: d, cols: p }, data))
}

/// Reads a CSV vector, either one value per line or a single row.
pub fn read_csv_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let rows = parse_csv_rows(path.as_ref())?;
    match rows.as_slice() {
        [] => Err(Error::Format("CSV: empty vector".into())),
        [single] => Ok(single.clone()),
        many if many.iter().all(|r| r.len() == 1) => Ok(many.iter().map(|r| r[0]).collect()),
        _ => Err(Error::Format(
            "CSV vector must be a single row or a single column".into(),
        )),
    }
}
