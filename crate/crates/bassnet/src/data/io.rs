//! On-disk formats: `.hsc` scenes and `.hsl` label rasters (one JSON
//! header line followed by little-endian payload), split manifests and
//! per-class population tables as CSV.

use crate::data::{ClassMap, HyperCube, SampleRef, SplitOutcome};
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::tensor::{Shape3, Volume};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    width: usize,
    height: usize,
    channels: usize,
    dtype: String,
    order: String,
}

#[derive(Serialize, Deserialize)]
struct LabelHeader {
    width: usize,
    height: usize,
    dtype: String,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::data(format!("cannot read {}: {}", path.display(), e)))
}

fn split_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize)> {
    match bytes.iter().position(|&b| b == b'\n') {
        Some(pos) => Ok((pos, pos + 1)),
        None => Err(Error::data(format!(
            "{}: missing header line",
            path.display()
        ))),
    }
}

/// Write the radiance volume of a cube as `.hsc` (header line plus f32
/// little-endian samples in `(y, x, c)` order).
pub fn write_scene(path: &Path, cube: &HyperCube) -> Result<()> {
    let header = SceneHeader {
        width: cube.width,
        height: cube.height,
        channels: cube.channels,
        dtype: "f32".to_string(),
        order: "y,x,c".to_string(),
    };
    let mut bytes = serde_json::to_string(&header)
        .map_err(|e| Error::data(format!("scene header: {}", e)))?
        .into_bytes();
    bytes.push(b'\n');
    bytes.reserve(cube.radiance.data().len() * 4);
    for &v in cube.radiance.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Read an `.hsc` scene. Returns `(width, height, channels, radiance)`.
pub fn read_scene(path: &Path) -> Result<(usize, usize, usize, Volume)> {
    let bytes = read_file(path)?;
    let (end, start) = split_header(path, &bytes)?;
    let header: SceneHeader = serde_json::from_slice(&bytes[..end])
        .map_err(|e| Error::data(format!("{}: bad scene header: {}", path.display(), e)))?;
    if header.dtype != "f32" {
        return Err(Error::data(format!(
            "{}: unsupported scene dtype {:?}",
            path.display(),
            header.dtype
        )));
    }
    if header.order != "y,x,c" {
        return Err(Error::data(format!(
            "{}: unsupported sample order {:?}",
            path.display(),
            header.order
        )));
    }
    let shape = Shape3::new(header.height, header.width, header.channels)
        .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
    let payload = &bytes[start..];
    let expected = shape.len() * 4;
    if payload.len() != expected {
        return Err(Error::data(format!(
            "{}: payload is {} bytes, header implies {}",
            path.display(),
            payload.len(),
            expected
        )));
    }
    let mut data = Vec::with_capacity(shape.len());
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::data(format!(
                "{}: non-finite radiance sample",
                path.display()
            )));
        }
        data.push(v);
    }
    let radiance =
        Volume::from_vec(shape, data).map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
    Ok((header.width, header.height, header.channels, radiance))
}

/// Write a label raster as `.hsl` (header line plus u16 little-endian
/// codes in row-major order, 0 meaning unlabeled).
pub fn write_labels(path: &Path, width: usize, height: usize, labels: &[u16]) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::data(format!(
            "label raster has {} entries, expected {}",
            labels.len(),
            width * height
        )));
    }
    let header = LabelHeader {
        width,
        height,
        dtype: "u16".to_string(),
    };
    let mut bytes = serde_json::to_string(&header)
        .map_err(|e| Error::data(format!("label header: {}", e)))?
        .into_bytes();
    bytes.push(b'\n');
    bytes.reserve(labels.len() * 2);
    for &code in labels {
        bytes.extend_from_slice(&code.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Read an `.hsl` raster. Returns `(width, height, labels)`.
pub fn read_labels(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = read_file(path)?;
    let (end, start) = split_header(path, &bytes)?;
    let header: LabelHeader = serde_json::from_slice(&bytes[..end])
        .map_err(|e| Error::data(format!("{}: bad label header: {}", path.display(), e)))?;
    if header.dtype != "u16" {
        return Err(Error::data(format!(
            "{}: unsupported label dtype {:?}",
            path.display(),
            header.dtype
        )));
    }
    let payload = &bytes[start..];
    let expected = header.width * header.height * 2;
    if payload.len() != expected {
        return Err(Error::data(format!(
            "{}: payload is {} bytes, header implies {}",
            path.display(),
            payload.len(),
            expected
        )));
    }
    let labels = payload
        .chunks_exact(2)
        .map(|chunk| u16::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    Ok((header.width, header.height, labels))
}

/// Load a scene and its label raster, checking that their dimensions
/// agree.
pub fn load_cube(scene_path: &Path, labels_path: &Path) -> Result<HyperCube> {
    let (width, height, _, radiance) = read_scene(scene_path)?;
    let (lw, lh, labels) = read_labels(labels_path)?;
    if (lw, lh) != (width, height) {
        return Err(Error::data(format!(
            "scene {} is {}x{} but labels {} are {}x{}",
            scene_path.display(),
            width,
            height,
            labels_path.display(),
            lw,
            lh
        )));
    }
    HyperCube::new(width, height, radiance, labels)
}

/// Render a split as CSV, train rows first, then val, then test.
pub fn manifest_csv(out: &SplitOutcome) -> String {
    let mut csv = String::from("x,y,label,split\n");
    for (name, refs) in [("train", &out.train), ("val", &out.val), ("test", &out.test)] {
        for s in refs {
            csv.push_str(&format!("{},{},{},{}\n", s.x, s.y, s.label, name));
        }
    }
    csv
}

pub fn write_manifest(path: &Path, out: &SplitOutcome) -> Result<()> {
    atomic_write(path, manifest_csv(out).as_bytes())
}

/// Parse a split manifest back into `(train, val, test)` lists.
pub fn read_manifest(path: &Path) -> Result<(Vec<SampleRef>, Vec<SampleRef>, Vec<SampleRef>)> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::data(format!("{}: manifest is not UTF-8", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "x,y,label,split")) => {}
        _ => {
            return Err(Error::data(format!(
                "{}: expected manifest header x,y,label,split",
                path.display()
            )))
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| {
            Error::data(format!(
                "{} line {}: {} in {:?}",
                path.display(),
                idx + 1,
                what,
                line
            ))
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let x = fields[0].parse().map_err(|_| bad("bad x"))?;
        let y = fields[1].parse().map_err(|_| bad("bad y"))?;
        let label = fields[2].parse().map_err(|_| bad("bad label"))?;
        let sample = SampleRef { x, y, label };
        match fields[3] {
            "train" => train.push(sample),
            "val" => val.push(sample),
            "test" => test.push(sample),
            _ => return Err(bad("unknown split")),
        }
    }
    if train.is_empty() {
        return Err(Error::data(format!(
            "{}: manifest holds no training samples",
            path.display()
        )));
    }
    Ok((train, val, test))
}

/// Per-class population table with split counts, as CSV.
pub fn class_table_csv(map: &ClassMap, out: &SplitOutcome) -> String {
    let count = |refs: &[SampleRef], index: usize| refs.iter().filter(|s| s.label == index).count();
    let mut csv = String::from("class,original_code,population,train,val,test\n");
    for entry in &map.classes {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            entry.index,
            entry.original_code,
            entry.population,
            count(&out.train, entry.index),
            count(&out.val, entry.index),
            count(&out.test, entry.index),
        ));
    }
    csv
}
