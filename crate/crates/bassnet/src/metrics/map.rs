//! Thematic maps: per-pixel class colors through a fixed palette,
//! written as binary PPM.

use crate::arch::{predict_logits, NetworkConfig, ParamStore};
use crate::data::{extract_patch, HyperCube};
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::train::argmax;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fixed 17-entry RGB palette; index 0 is the black used for
/// unlabeled pixels, indices 1..=16 are class colors.
pub const PALETTE: [[u8; 3]; 17] = [
    [0, 0, 0],
    [255, 225, 25],
    [0, 130, 200],
    [60, 180, 75],
    [230, 25, 75],
    [145, 30, 180],
    [70, 240, 240],
    [245, 130, 48],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [128, 128, 0],
];

/// Which pixels a prediction map covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapCoverage {
    /// Predict only pixels with a nonzero label; the rest render black.
    #[default]
    Labeled,
    /// Predict every pixel of the scene.
    Full,
}

/// Row-major class assignment per pixel; `None` renders black.
pub type ClassField = Vec<Option<usize>>;

/// Color a class field through the palette. Requires one palette entry
/// per class plus the black slot at index 0.
pub fn render_class_map(
    field: &ClassField,
    num_classes: usize,
    palette: &[[u8; 3]],
) -> Result<Vec<u8>> {
    if palette.len() < num_classes + 1 {
        return Err(Error::config(format!(
            "palette has {} entries, {} classes need {}",
            palette.len(),
            num_classes,
            num_classes + 1
        )));
    }
    let mut rgb = Vec::with_capacity(field.len() * 3);
    for slot in field {
        let color = match slot {
            None => palette[0],
            Some(c) if *c < num_classes => palette[c + 1],
            Some(c) => {
                return Err(Error::data(format!(
                    "class {} outside [0, {})",
                    c, num_classes
                )))
            }
        };
        rgb.extend_from_slice(&color);
    }
    Ok(rgb)
}

/// The label raster as a class field (code k maps to class k-1).
pub fn ground_truth_field(cube: &HyperCube) -> ClassField {
    cube.labels
        .iter()
        .map(|&code| if code == 0 { None } else { Some(code as usize - 1) })
        .collect()
}

/// Classify pixels of a normalized cube with eval-mode forward passes.
pub fn predict_field(
    cube: &HyperCube,
    cfg: &NetworkConfig,
    params: &ParamStore,
    coverage: MapCoverage,
) -> Result<ClassField> {
    if cube.channels != cfg.in_channels {
        return Err(Error::config(format!(
            "scene has {} channels, network expects {}",
            cube.channels, cfg.in_channels
        )));
    }
    let mut field = Vec::with_capacity(cube.width * cube.height);
    for y in 0..cube.height {
        for x in 0..cube.width {
            if coverage == MapCoverage::Labeled && cube.label_at(x, y) == 0 {
                field.push(None);
                continue;
            }
            let patch = extract_patch(cube, x, y, cfg.patch_size)?;
            let logits = predict_logits(cfg, params, &patch)?;
            field.push(Some(argmax(&logits)));
        }
    }
    Ok(field)
}

/// Predict and color a scene in one step. Returns the RGB buffer.
pub fn render_thematic_map(
    cube: &HyperCube,
    cfg: &NetworkConfig,
    params: &ParamStore,
    palette: &[[u8; 3]],
    coverage: MapCoverage,
) -> Result<Vec<u8>> {
    let field = predict_field(cube, cfg, params, coverage)?;
    render_class_map(&field, cfg.num_classes, palette)
}

/// Binary PPM (P6, 8-bit RGB).
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::data(format!(
            "rgb buffer has {} bytes, {}x{} needs {}",
            rgb.len(),
            width,
            height,
            width * height * 3
        )));
    }
    let mut bytes = format!("P6\n{} {}\n255\n", width, height).into_bytes();
    bytes.extend_from_slice(rgb);
    atomic_write(path, &bytes)
}
