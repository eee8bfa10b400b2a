//! FG01 grid files and their `.meta.json` sidecars.
//!
//! Layout: magic `FG01`, `u32` LE width, `u32` LE height, then
//! `width * height` little-endian `f32` values in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, HuSlice, NormalizedSlice, PixelSpacing};
use crate::phantom::{LabelMap, TissueLabel};

pub const GRID_MAGIC: &[u8; 4] = b"FG01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Hu,
    Normalized,
    Mask,
    Labels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub pixel_spacing_mm: [f64; 2],
    pub kind: GridKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

pub fn encode_grid(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + values.len() * 4);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<RawGrid> {
    if bytes.len() < 12 || &bytes[..4] != GRID_MAGIC {
        return Err(Error::format(path, "missing FG01 magic"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != width * height * 4 {
        return Err(Error::format(
            path,
            format!("expected {} value bytes for {width}x{height}, found {}", width * height * 4, body.len()),
        ));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(RawGrid { width, height, values })
}

/// Sidecar path: `foo.fg01` becomes `foo.meta.json`.
pub fn meta_path(grid_path: &Path) -> PathBuf {
    grid_path.with_extension("meta.json")
}

pub fn write_grid(path: &Path, grid: &RawGrid, meta: &GridMeta) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, encode_grid(grid.width, grid.height, &grid.values)).map_err(|e| Error::io(path, e))?;
    let meta_file = meta_path(path);
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&meta_file, text + "\n").map_err(|e| Error::io(&meta_file, e))
}

pub fn read_grid(path: &Path) -> Result<(RawGrid, GridMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let grid = decode_grid(&bytes, path)?;
    let meta_file = meta_path(path);
    let text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: GridMeta = serde_json::from_str(&text).map_err(|e| Error::format(&meta_file, e.to_string()))?;
    Ok((grid, meta))
}

fn expect_kind(path: &Path, meta: &GridMeta, kind: GridKind) -> Result<()> {
    if meta.kind != kind {
        return Err(Error::format(path, format!("expected kind {kind:?}, found {:?}", meta.kind)));
    }
    Ok(())
}

fn spacing_of(meta: &GridMeta) -> Result<PixelSpacing> {
    PixelSpacing::new(meta.pixel_spacing_mm[0], meta.pixel_spacing_mm[1])
}

fn meta_for(spacing: PixelSpacing, kind: GridKind) -> GridMeta {
    GridMeta {
        pixel_spacing_mm: [spacing.sx, spacing.sy],
        kind,
    }
}

pub fn write_hu(path: &Path, slice: &HuSlice) -> Result<()> {
    let grid = RawGrid {
        width: slice.width(),
        height: slice.height(),
        values: slice.values().to_vec(),
    };
    write_grid(path, &grid, &meta_for(slice.spacing(), GridKind::Hu))
}

pub fn read_hu(path: &Path) -> Result<HuSlice> {
    let (g, meta) = read_grid(path)?;
    expect_kind(path, &meta, GridKind::Hu)?;
    HuSlice::new(g.width, g.height, g.values, spacing_of(&meta)?)
}

pub fn write_normalized(path: &Path, slice: &NormalizedSlice) -> Result<()> {
    let grid = RawGrid {
        width: slice.width(),
        height: slice.height(),
        values: slice.values().to_vec(),
    };
    write_grid(path, &grid, &meta_for(slice.spacing(), GridKind::Normalized))
}

pub fn read_normalized(path: &Path) -> Result<NormalizedSlice> {
    let (g, meta) = read_grid(path)?;
    expect_kind(path, &meta, GridKind::Normalized)?;
    NormalizedSlice::new(g.width, g.height, g.values, spacing_of(&meta)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &BinaryMask, spacing: PixelSpacing) -> Result<()> {
    let grid = RawGrid {
        width: mask.width(),
        height: mask.height(),
        values: mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    };
    write_grid(path, &grid, &meta_for(spacing, GridKind::Mask))
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (g, meta) = read_grid(path)?;
    expect_kind(path, &meta, GridKind::Mask)?;
    let mut bits = Vec::with_capacity(g.values.len());
    for v in g.values {
        match v {
            x if x == 0.0 => bits.push(false),
            x if x == 1.0 => bits.push(true),
            other => return Err(Error::format(path, format!("mask value {other} not in {{0, 1}}"))),
        }
    }
    BinaryMask::new(g.width, g.height, bits)
}

pub fn write_labels(path: &Path, labels: &LabelMap, spacing: PixelSpacing) -> Result<()> {
    let grid = RawGrid {
        width: labels.width(),
        height: labels.height(),
        values: labels.labels().iter().map(|&l| l as u8 as f32).collect(),
    };
    write_grid(path, &grid, &meta_for(spacing, GridKind::Labels))
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let (g, meta) = read_grid(path)?;
    expect_kind(path, &meta, GridKind::Labels)?;
    let mut labels = Vec::with_capacity(g.values.len());
    for v in g.values {
        let code = v as u8;
        if code as f32 != v {
            return Err(Error::format(path, format!("label value {v} is not a small integer")));
        }
        labels.push(TissueLabel::from_code(code).ok_or_else(|| Error::format(path, format!("unknown label {code}")))?);
    }
    LabelMap::new(g.width, g.height, labels)
}

/// Read a JSON-lines file into typed rows.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolve `rel` against the directory holding `manifest`.
pub fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}
