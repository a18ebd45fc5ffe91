//! Reading and writing hashed artifacts with metadata sidecars.

use std::fs;
use std::path::Path;

use ctdict::io::{self, Metadata, PgmDepth};
use ctdict::{ConstraintSet, Dictionary, GrayImage};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Hash identifying a scan geometry.
pub fn geometry_sha256(size: usize, projections: usize, start: f64, end: f64) -> String {
    let canonical = format!(
        "parallel-beam;size={size};projections={projections};start={:016x};end={:016x}",
        start.to_bits(),
        end.to_bits()
    );
    sha256_hex(canonical.as_bytes())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Adds every effective config value under `config.`.
pub fn echo_config(meta: &mut Metadata, cfg: &ExperimentConfig) -> CliResult<()> {
    for (k, v) in cfg.echo() {
        meta.set(&format!("config.{k}"), v)?;
    }
    Ok(())
}

/// Writes `bytes` to `path` and the sidecar with `content_sha256` added.
pub fn write_artifact(path: &Path, bytes: &[u8], mut meta: Metadata) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    meta.set("content_sha256", sha256_hex(bytes))?;
    io::write_bytes(path, bytes).map_err(|e| io_err(path, e))?;
    io::write_metadata(path, &meta).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reads an artifact and its sidecar, checking the recorded content hash
/// and kind.
pub fn read_artifact(path: &Path, kind: &str) -> CliResult<(Vec<u8>, Metadata, String)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let meta = io::read_metadata(path).map_err(|e| io_err(path, e))?;
    let hash = sha256_hex(&bytes);
    match meta.get("content_sha256") {
        Some(h) if h == hash => {}
        Some(_) => {
            return Err(CliError::Consistency(format!(
                "{} does not match the hash recorded in its metadata",
                path.display()
            )))
        }
        None => {
            return Err(CliError::Consistency(format!(
                "{} metadata has no content hash",
                path.display()
            )))
        }
    }
    if meta.get("kind") != Some(kind) {
        return Err(CliError::Consistency(format!(
            "{} is not a {kind} artifact",
            path.display()
        )));
    }
    Ok((bytes, meta, hash))
}

pub struct LoadedDictionary {
    pub dictionary: Dictionary,
    pub meta: Metadata,
    pub sha256: String,
}

pub fn load_dictionary(path: &Path) -> CliResult<LoadedDictionary> {
    let (bytes, meta, sha256) = read_artifact(path, "dictionary")?;
    let atoms = io::decode_dense(&bytes)?;
    let pr: usize = meta.parse("patch_rows")?;
    let pc: usize = meta.parse("patch_cols")?;
    let constraint: ConstraintSet = meta.parse::<String>("constraint")?.parse()?;
    let dictionary = Dictionary::new(atoms, pr, pc, constraint)?;
    Ok(LoadedDictionary {
        dictionary,
        meta,
        sha256,
    })
}

pub struct LoadedSinogram {
    pub data: Vec<f64>,
    pub meta: Metadata,
    pub sha256: String,
    pub size: usize,
    pub projections: usize,
    pub angle_start: f64,
    pub angle_end: f64,
}

pub fn load_sinogram(path: &Path) -> CliResult<LoadedSinogram> {
    let (bytes, meta, sha256) = read_artifact(path, "sinogram")?;
    let data = io::decode_vector(&bytes)?;
    let size: usize = meta.parse("size")?;
    let projections: usize = meta.parse("projections")?;
    let angle_start: f64 = meta.parse("angle_start")?;
    let angle_end: f64 = meta.parse("angle_end")?;
    let recorded = meta
        .get("geometry_sha256")
        .ok_or_else(|| CliError::Consistency("sinogram metadata lacks geometry hash".into()))?;
    if recorded != geometry_sha256(size, projections, angle_start, angle_end) {
        return Err(CliError::Consistency(
            "sinogram geometry fields do not match its geometry hash".into(),
        ));
    }
    Ok(LoadedSinogram {
        data,
        meta,
        sha256,
        size,
        projections,
        angle_start,
        angle_end,
    })
}

/// Raw column-major image values, possibly negative.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn read_image(path: &Path) -> CliResult<GrayImage> {
    io::read_pgm(path).map_err(|e| io_err(path, e))
}

/// Reads a PGM or a dense matrix file (`rows x cols` image, row-major).
pub fn read_raw_image(path: &Path) -> CliResult<RawImage> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let img = read_image(path)?;
        return Ok(RawImage {
            rows: img.rows(),
            cols: img.cols(),
            data: img.into_vec(),
        });
    }
    let m = io::read_dense(path).map_err(|e| io_err(path, e))?;
    Ok(RawImage {
        rows: m.nrows(),
        cols: m.ncols(),
        data: m.as_slice().to_vec(),
    })
}

pub fn encode_raw_image(img: &RawImage) -> Vec<u8> {
    io::encode_dense(&nalgebra::DMatrix::from_column_slice(
        img.rows, img.cols, &img.data,
    ))
}

pub fn pgm_depth(bits: u8) -> PgmDepth {
    if bits == 8 {
        PgmDepth::Eight
    } else {
        PgmDepth::Sixteen
    }
}
