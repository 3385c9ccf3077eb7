//! Raw volume files: a JSON header `<stem>.json` next to little-endian
//! `f32` data, x fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{Point3, VoxelGrid};
use crate::infer::ActivityImage;

/// `stem` with `suffix` appended verbatim (`out/run` + `.json`).
pub fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_f32_le<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f32_le<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::with_capacity(4 * n);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * n {
        return Err(Error::Format(format!(
            "expected {} bytes of f32 data, found {}",
            4 * n,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_raw_file(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_f32_le(&mut w, values)?;
    w.flush()?;
    Ok(())
}

pub fn read_raw_file(path: &Path, n: usize) -> Result<Vec<f64>> {
    read_f32_le(&mut BufReader::new(File::open(path)?), n)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageHeader {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    origin_mm: Point3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<Value>,
}

/// Writes `<stem>.json` and `<stem>.raw`. `config` is echoed into the
/// header when given.
pub fn save_image(stem: &Path, image: &ActivityImage, config: Option<&Value>) -> Result<()> {
    let header = ImageHeader {
        dims: image.grid.dims,
        voxel_size_mm: image.grid.voxel_size,
        origin_mm: image.grid.origin,
        config: config.cloned(),
    };
    write_json(&with_suffix(stem, ".json"), &header)?;
    write_raw_file(&with_suffix(stem, ".raw"), &image.values)
}

pub fn load_image(stem: &Path) -> Result<ActivityImage> {
    let header: ImageHeader = read_json(&with_suffix(stem, ".json"))?;
    let grid = VoxelGrid::new(header.dims, header.voxel_size_mm, header.origin_mm)?;
    let values = read_raw_file(&with_suffix(stem, ".raw"), grid.len())?;
    ActivityImage::new(grid, values)
}
