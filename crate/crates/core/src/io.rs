//! On-disk formats.
//!
//! # Images
//!
//! Binary PGM (`P5`) with `maxval` 255 or 65535. 16-bit samples are
//! big-endian. Pixel values map linearly between `[0, 1]` and
//! `0..=maxval`; values above 1 are clamped on write.
//!
//! # Matrices
//!
//! All integers little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"CTDXMAT\0"
//! 8       4     u32 version (1)
//! 12      4     u32 kind: 0 dense, 1 CSR
//! 16      8     u64 rows
//! 24      8     u64 cols
//! dense:
//! 32      8*r*c f64 entries, row-major
//! CSR:
//! 32      8     u64 nnz
//! 40      ...   u64 row_ptr[rows+1], u64 col_idx[nnz], f64 values[nnz]
//! ```
//!
//! Vectors are stored as dense `n x 1` matrices.
//!
//! # Metadata
//!
//! Each data file may carry a sidecar `<file>.meta` of `key=value` lines,
//! written in sorted key order. Blank lines and lines starting with `#`
//! are ignored on read.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::sparse::CsrMatrix;

pub const MATRIX_MAGIC: &[u8; 8] = b"CTDXMAT\0";
pub const MATRIX_VERSION: u32 = 1;
const KIND_DENSE: u32 = 0;
const KIND_CSR: u32 = 1;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Encodes an image as binary PGM.
pub fn encode_pgm(img: &GrayImage, depth: PgmDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let mut out = format!("P5\n{} {}\n{}\n", img.cols(), img.rows(), maxval).into_bytes();
    for v in img.to_row_major() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            PgmDepth::Eight => out.push(q as u8),
            PgmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<u32> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        text.parse()
            .map_err(|_| Error::Format("malformed PGM header".into()))
    }
}

/// Decodes a binary PGM into an image with values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return format_err("not a binary PGM (missing P5 magic)");
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number()? as usize;
    let height = h.number()? as usize;
    let maxval = h.number()?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return format_err(format!(
            "unsupported PGM dimensions {width}x{height} or maxval {maxval}"
        ));
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return format_err("malformed PGM header");
    }
    let data = &bytes[h.pos + 1..];
    let sample = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * sample;
    if data.len() < needed {
        return format_err(format!(
            "PGM raster truncated: {} of {needed} bytes",
            data.len()
        ));
    }
    let scale = maxval as f64;
    let values: Vec<f64> = (0..width * height)
        .map(|i| {
            let raw = if sample == 1 {
                data[i] as u32
            } else {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as u32
            };
            (raw.min(maxval)) as f64 / scale
        })
        .collect();
    GrayImage::from_row_major(height, width, &values)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, img: &GrayImage, depth: PgmDepth) -> Result<()> {
    fs::write(path, encode_pgm(img, depth))?;
    Ok(())
}

fn header(kind: u32, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(32);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return format_err("matrix file truncated");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, kind: u32) -> Result<(usize, usize)> {
        if self.take(8)? != MATRIX_MAGIC {
            return format_err("bad matrix magic");
        }
        let version = self.u32()?;
        if version != MATRIX_VERSION {
            return format_err(format!("unsupported matrix format version {version}"));
        }
        let found = self.u32()?;
        if found != kind {
            return format_err(format!("expected matrix kind {kind}, found {found}"));
        }
        Ok((self.usize()?, self.usize()?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return format_err("trailing bytes after matrix data");
        }
        Ok(())
    }

    fn count_fits(&self, count: usize, width: usize) -> Result<()> {
        match count.checked_mul(width) {
            Some(n) if n <= self.bytes.len() - self.pos => Ok(()),
            _ => format_err("matrix file truncated"),
        }
    }
}

pub fn encode_dense(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = header(KIND_DENSE, m.nrows(), m.ncols());
    out.reserve(8 * m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn decode_dense(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut rd = Reader { bytes, pos: 0 };
    let (rows, cols) = rd.header(KIND_DENSE)?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    rd.count_fits(count, 8)?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(rd.f64()?);
    }
    rd.finish()?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn encode_vector(v: &[f64]) -> Vec<u8> {
    let mut out = header(KIND_DENSE, v.len(), 1);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_vector(bytes: &[u8]) -> Result<Vec<f64>> {
    let m = decode_dense(bytes)?;
    if m.ncols() != 1 {
        return format_err(format!(
            "expected a column vector, found {} columns",
            m.ncols()
        ));
    }
    Ok(m.as_slice().to_vec())
}

pub fn encode_csr(a: &CsrMatrix) -> Vec<u8> {
    let mut out = header(KIND_CSR, a.rows(), a.cols());
    out.extend_from_slice(&(a.nnz() as u64).to_le_bytes());
    for &p in a.row_ptr() {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &j in a.col_idx() {
        out.extend_from_slice(&(j as u64).to_le_bytes());
    }
    for &v in a.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_csr(bytes: &[u8]) -> Result<CsrMatrix> {
    let mut rd = Reader { bytes, pos: 0 };
    let (rows, cols) = rd.header(KIND_CSR)?;
    let nnz = rd.usize()?;
    rd.count_fits(rows.saturating_add(1), 8)?;
    let row_ptr = (0..=rows).map(|_| rd.usize()).collect::<Result<Vec<_>>>()?;
    rd.count_fits(nnz, 16)?;
    let col_idx = (0..nnz).map(|_| rd.usize()).collect::<Result<Vec<_>>>()?;
    let values = (0..nnz).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
    rd.finish()?;
    CsrMatrix::from_raw(rows, cols, row_ptr, col_idx, values)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dense(path: &Path) -> Result<DMatrix<f64>> {
    decode_dense(&fs::read(path)?)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    decode_vector(&fs::read(path)?)
}

pub fn read_csr(path: &Path) -> Result<CsrMatrix> {
    decode_csr(&fs::read(path)?)
}

/// Sorted `key=value` metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: BTreeMap<String, String>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `key`; returns an error for keys or values that would not
    /// survive a round trip.
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        let value = value.to_string();
        if key.is_empty() || key.contains(['=', '\n', '\r', '#']) || key.trim() != key {
            return format_err(format!("invalid metadata key '{key}'"));
        }
        if value.contains(['\n', '\r']) {
            return format_err(format!("metadata value for '{key}' spans lines"));
        }
        self.entries.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses the value of `key`, failing if it is missing or malformed.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Format(format!("metadata key '{key}' missing")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata key '{key}' has bad value '{raw}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut meta = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return format_err(format!("line {}: expected key=value", n + 1));
            };
            meta.set(k.trim(), v.trim())?;
        }
        Ok(meta)
    }
}

/// `<path>.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".meta");
    PathBuf::from(name)
}

pub fn write_metadata(path: &Path, meta: &Metadata) -> Result<()> {
    fs::write(sidecar_path(path), meta.encode())?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    Metadata::decode(&fs::read_to_string(sidecar_path(path))?)
}
