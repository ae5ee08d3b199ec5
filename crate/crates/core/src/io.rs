//! File formats.
//!
//! Volumes, projection stacks, and 2D slices are stored as raw little-endian
//! `f32` next to a JSON sidecar describing shape and meaning. Arrays are
//! written row-major with the **last** index fastest (`z` for volumes `[x,y,z]`,
//! `k` for stacks `[i,j,k]`, the column index for 2D slices). A path `foo`
//! means the pair `foo.raw` + `foo.json`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, DomainTag, ProjectionStack, UnitTag, Volume, VolumeGrid};

const LAYOUT: &str = "row-major, last index fastest";

#[derive(Debug, Serialize, Deserialize)]
struct VolumeSidecar {
    dims: [usize; 3],
    spacing_mm: f64,
    origin_mm: [f64; 3],
    unit: UnitTag,
    layout: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StackSidecar {
    domain_tag: DomainTag,
    geometry: ConeBeamGeometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<f64>,
    layout: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SliceSidecar {
    rows: usize,
    cols: usize,
    layout: String,
}

fn raw_path(base: &Path) -> PathBuf {
    base.with_extension("raw")
}

fn json_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

fn missing(path: &Path) -> Error {
    Error::MissingInput(path.display().to_string())
}

fn write_f32<'a>(path: &Path, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f32(path: &Path, expect_len: usize) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|_| missing(path))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != expect_len * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, expected {} ({} f32 values)",
            path.display(),
            bytes.len(),
            expect_len * 4,
            expect_len
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Serialize `value` as pretty JSON to `path` (atomic content, trailing newline).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|_| missing(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Write `volume` to `base.raw` + `base.json`.
pub fn write_volume(base: &Path, volume: &Volume) -> Result<()> {
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir)?;
    }
    write_f32(&raw_path(base), volume.data.iter())?;
    write_json(
        &json_path(base),
        &VolumeSidecar {
            dims: [volume.grid.nx, volume.grid.ny, volume.grid.nz],
            spacing_mm: volume.grid.spacing_mm,
            origin_mm: volume.grid.origin_mm,
            unit: volume.unit,
            layout: LAYOUT.into(),
        },
    )
}

pub fn read_volume(base: &Path) -> Result<Volume> {
    let side: VolumeSidecar = read_json(&json_path(base))?;
    let [nx, ny, nz] = side.dims;
    let grid = VolumeGrid::new(nx, ny, nz, side.spacing_mm, side.origin_mm)?;
    let flat = read_f32(&raw_path(base), nx * ny * nz)?;
    let data = Array3::from_shape_vec((nx, ny, nz), flat)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Volume::new(grid, side.unit, data)
}

/// Write `stack` to `base.raw` + `base.json`. `normalization` records the
/// dataset constant for [`DomainTag::Normalized`] stacks.
pub fn write_stack(base: &Path, stack: &ProjectionStack, normalization: Option<f64>) -> Result<()> {
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir)?;
    }
    write_f32(&raw_path(base), stack.data.iter())?;
    write_json(
        &json_path(base),
        &StackSidecar {
            domain_tag: stack.domain,
            geometry: stack.geometry.clone(),
            normalization,
            layout: LAYOUT.into(),
        },
    )
}

pub fn read_stack(base: &Path) -> Result<(ProjectionStack, Option<f64>)> {
    let side: StackSidecar = read_json(&json_path(base))?;
    let g = side.geometry;
    let dims = (g.n_cols, g.n_rows, g.n_angles());
    let flat = read_f32(&raw_path(base), dims.0 * dims.1 * dims.2)?;
    let data =
        Array3::from_shape_vec(dims, flat).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((ProjectionStack::new(g, side.domain_tag, data)?, side.normalization))
}

/// Write a 2D slice to `base.raw` + `base.json`.
pub fn write_slice(base: &Path, slice: &Array2<f64>) -> Result<()> {
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir)?;
    }
    write_f32(&raw_path(base), slice.iter())?;
    let (rows, cols) = slice.dim();
    write_json(&json_path(base), &SliceSidecar { rows, cols, layout: LAYOUT.into() })
}

pub fn read_slice(base: &Path) -> Result<Array2<f64>> {
    let side: SliceSidecar = read_json(&json_path(base))?;
    let flat = read_f32(&raw_path(base), side.rows * side.cols)?;
    Array2::from_shape_vec((side.rows, side.cols), flat)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Load every `*.json`-described slice in `dir` (sorted by file name) as a
/// score-model dataset.
pub fn load_slice_dir(dir: &Path) -> Result<Vec<Array2<f64>>> {
    if !dir.is_dir() {
        return Err(missing(dir));
    }
    let mut bases: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| p.with_extension(""))
        .collect();
    bases.sort();
    if bases.is_empty() {
        return Err(Error::MissingInput(format!("no slices in {}", dir.display())));
    }
    bases.iter().map(|b| read_slice(b)).collect()
}

/// Export a 2D array to an 8-bit grayscale PNG, linearly mapping
/// `[window.0, window.1]` to `[0, 255]` with clamping.
pub fn write_png(path: &Path, slice: &Array2<f64>, window: (f64, f64)) -> Result<()> {
    if !(window.1 > window.0) {
        return Err(Error::Config(format!("png window must have hi > lo, got {window:?}")));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let (rows, cols) = slice.dim();
    let scale = 255.0 / (window.1 - window.0);
    let mut img = image::GrayImage::new(cols as u32, rows as u32);
    for ((r, c), &v) in slice.indexed_iter() {
        let g = ((v - window.0) * scale).clamp(0.0, 255.0).round() as u8;
        img.put_pixel(c as u32, r as u32, image::Luma([g]));
    }
    img.save(path).map_err(|e| Error::Config(format!("png write failed: {e}")))?;
    Ok(())
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|_| missing(path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
