use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::channels::{ShapeChannels, CHANNEL_NAMES};
use super::grid::VoxelGrid;
use super::voxelize::OccupancyMask;
use crate::error::{Result, VolrigError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub resolution: usize,
    pub origin: [f64; 3],
    pub cell_size: f64,
    pub dtype: String,
    pub order: String,
    pub channels: Vec<DumpEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub name: String,
    pub file: String,
}

pub fn write_raw_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| VolrigError::io(path, e))
}

pub fn read_raw_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| VolrigError::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(VolrigError::Invalid(format!("{}: length not a multiple of 4", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes named volumes on `grid` as raw little-endian f32 files plus
/// `header.json`. Returns the written paths.
pub fn dump_volumes(dir: &Path, grid: &VoxelGrid, volumes: &[(&str, Vec<f32>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| VolrigError::io(dir, e))?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for (name, values) in volumes {
        if values.len() != grid.len() {
            return Err(VolrigError::Shape(format!("volume {name} has {} cells", values.len())));
        }
        let file = format!("{name}.raw");
        let path = dir.join(&file);
        write_raw_f32(&path, values)?;
        written.push(path);
        entries.push(DumpEntry {
            name: name.to_string(),
            file,
        });
    }
    let header = DumpHeader {
        resolution: grid.res,
        origin: grid.origin,
        cell_size: grid.cell_size,
        dtype: "f32le".into(),
        order: "x-fastest".into(),
        channels: entries,
    };
    let path = dir.join("header.json");
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&path, text + "\n").map_err(|e| VolrigError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// The five input channels plus the occupancy mask.
pub fn dump_channels(dir: &Path, channels: &ShapeChannels, mask: &OccupancyMask) -> Result<Vec<PathBuf>> {
    let mut volumes: Vec<(&str, Vec<f32>)> = CHANNEL_NAMES
        .iter()
        .enumerate()
        .map(|(c, name)| (*name, channels.channel(c)))
        .collect();
    volumes.push(("mask", mask.data.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()));
    dump_volumes(dir, &channels.grid, &volumes)
}

pub fn read_header(dir: &Path) -> Result<DumpHeader> {
    let path = dir.join("header.json");
    let text = fs::read_to_string(&path).map_err(|e| VolrigError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = VolrigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(VolrigError::Config(format!("unknown axis {s}"))),
        }
    }
}

/// Extracts the `res × res` slice perpendicular to `axis` at `index`, rows
/// running from high to low so that +y/+z points up in an image viewer.
pub fn cross_section(values: &[f32], res: usize, axis: Axis, index: usize) -> Vec<f32> {
    let at = |i: usize, j: usize, k: usize| values[i + res * (j + res * k)];
    let mut out = Vec::with_capacity(res * res);
    for row in (0..res).rev() {
        for col in 0..res {
            out.push(match axis {
                Axis::X => at(index, row, col),
                Axis::Y => at(col, index, row),
                Axis::Z => at(col, row, index),
            });
        }
    }
    out
}

/// Binary PGM (P5), linearly mapping `[min, max]` to `[0, 255]`.
pub fn write_pgm(path: &Path, pixels: &[f32], width: usize, height: usize) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let lo = pixels.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = pixels.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| VolrigError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| VolrigError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| VolrigError::io(path, e))
}
