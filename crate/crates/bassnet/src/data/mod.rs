//! Scene ingestion: hyperspectral cubes with label rasters, per-channel
//! normalization, class filtering, patch extraction with mirrored
//! borders, and seeded stratified splits.

pub mod io;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape3, Volume};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A scene: radiance volume in `(y, x, channel)` order plus a label
/// raster where code 0 means unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub radiance: Volume,
    pub labels: Vec<u16>,
}

impl HyperCube {
    pub fn new(width: usize, height: usize, radiance: Volume, labels: Vec<u16>) -> Result<HyperCube> {
        let shape = radiance.shape();
        if shape.a != height || shape.b != width {
            return Err(Error::data(format!(
                "radiance volume is {}, expected {}x{}xC",
                shape, height, width
            )));
        }
        if labels.len() != width * height {
            return Err(Error::data(format!(
                "label raster has {} entries, expected {}",
                labels.len(),
                width * height
            )));
        }
        if !radiance.is_finite() {
            return Err(Error::data("radiance contains non-finite values"));
        }
        Ok(HyperCube {
            width,
            height,
            channels: shape.c,
            radiance,
            labels,
        })
    }

    pub fn label_at(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Distinct nonzero label codes with their populations.
    pub fn class_populations(&self) -> BTreeMap<u16, usize> {
        let mut counts = BTreeMap::new();
        for &code in &self.labels {
            if code != 0 {
                *counts.entry(code).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Which denominator the per-channel normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(x - min) / max` with the maximum of the raw channel.
    #[default]
    Paper,
    /// Conventional `(x - min) / (max - min)`.
    Minmax,
}

/// Normalize every spectral channel to [0, 1] over all pixels.
///
/// A constant channel maps to zero in both modes. In `Paper` mode a
/// non-constant channel whose maximum is 0 has no valid scale and is
/// an error; negative radiance can push values above 1, which is
/// rejected with a pointer at the `Minmax` mode.
pub fn normalize_channels(cube: &HyperCube, mode: Normalization) -> Result<HyperCube> {
    let shape = cube.radiance.shape();
    let mut out = Volume::zeros(shape);
    for k in 0..cube.channels {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for y in 0..cube.height {
            for x in 0..cube.width {
                let v = cube.radiance.get(y, x, k);
                min = min.min(v);
                max = max.max(v);
            }
        }
        if min == max {
            continue; // constant channel: numerator vanishes everywhere
        }
        let denom = match mode {
            Normalization::Paper => max,
            Normalization::Minmax => max - min,
        };
        if denom == 0.0 {
            return Err(Error::data(format!(
                "channel {} has maximum 0 and cannot be scaled",
                k
            )));
        }
        for y in 0..cube.height {
            for x in 0..cube.width {
                let v = (cube.radiance.get(y, x, k) - min) / denom;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::data(format!(
                        "channel {} normalizes outside [0, 1] (value {}); \
                         negative radiance needs minmax normalization",
                        k, v
                    )));
                }
                out.set(y, x, k, v);
            }
        }
    }
    HyperCube::new(cube.width, cube.height, out, cube.labels.clone())
}

/// One retained class after filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    /// Class index in [0, C) used for labels and logits.
    pub index: usize,
    /// Raster code in the filtered cube (index + 1; 0 stays unlabeled).
    pub raster_code: u16,
    /// Code in the original raster.
    pub original_code: u16,
    pub population: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub classes: Vec<ClassEntry>,
}

impl ClassMap {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Keep the `k` most populous classes, relabel them to contiguous raster
/// codes 1..=k (ascending by original code), and clear everything else
/// to unlabeled. Population ties break toward the lower original code.
pub fn filter_top_classes(cube: &HyperCube, k: usize) -> Result<(HyperCube, ClassMap)> {
    let populations = cube.class_populations();
    if k == 0 {
        return Err(Error::data("cannot retain zero classes"));
    }
    if k > populations.len() {
        return Err(Error::data(format!(
            "cannot retain top {} classes, raster has only {} distinct ones",
            k,
            populations.len()
        )));
    }

    let mut ranked: Vec<(u16, usize)> = populations.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut retained: Vec<(u16, usize)> = ranked.into_iter().take(k).collect();
    retained.sort_by_key(|(code, _)| *code);

    let classes: Vec<ClassEntry> = retained
        .iter()
        .enumerate()
        .map(|(index, &(original_code, population))| ClassEntry {
            index,
            raster_code: (index + 1) as u16,
            original_code,
            population,
        })
        .collect();
    let remap: BTreeMap<u16, u16> = classes
        .iter()
        .map(|c| (c.original_code, c.raster_code))
        .collect();

    let labels: Vec<u16> = cube
        .labels
        .iter()
        .map(|code| remap.get(code).copied().unwrap_or(0))
        .collect();
    let filtered = HyperCube::new(cube.width, cube.height, cube.radiance.clone(), labels)?;
    Ok((filtered, ClassMap { classes }))
}

/// Mirror an index about the borders of `[0, n)` (reflection without
/// repeating the edge sample).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// The `p x p x N_c` neighborhood centered on pixel `(x, y)`, with
/// out-of-bounds coordinates mirrored about the image border.
pub fn extract_patch(cube: &HyperCube, x: usize, y: usize, p: usize) -> Result<Volume> {
    if p == 0 || p % 2 == 0 {
        return Err(Error::config(format!(
            "patch size must be odd and positive, got {}",
            p
        )));
    }
    if x >= cube.width || y >= cube.height {
        return Err(Error::data(format!(
            "pixel ({}, {}) outside {}x{} image",
            x, y, cube.width, cube.height
        )));
    }
    let half = (p / 2) as isize;
    let mut patch = Volume::zeros(Shape3::new(p, p, cube.channels)?);
    for dy in -half..=half {
        let sy = reflect(y as isize + dy, cube.height);
        for dx in -half..=half {
            let sx = reflect(x as isize + dx, cube.width);
            for k in 0..cube.channels {
                patch.set(
                    (dy + half) as usize,
                    (dx + half) as usize,
                    k,
                    cube.radiance.get(sy, sx, k),
                );
            }
        }
    }
    Ok(patch)
}

fn default_per_class_train() -> usize {
    200
}
fn default_val_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_per_class_train")]
    pub per_class_train: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction_of_train: f64,
    pub seed: u64,
    #[serde(default)]
    pub top_k_classes: Option<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.per_class_train == 0 {
            return Err(Error::config("per_class_train must be >= 1"));
        }
        if !(self.val_fraction_of_train > 0.0 && self.val_fraction_of_train < 1.0) {
            return Err(Error::config(format!(
                "val_fraction_of_train must be in (0, 1), got {}",
                self.val_fraction_of_train
            )));
        }
        if self.top_k_classes == Some(0) {
            return Err(Error::config("top_k_classes must be >= 1 when set"));
        }
        Ok(())
    }
}

/// A pixel assigned to a split: coordinates plus its class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub x: usize,
    pub y: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub train: Vec<SampleRef>,
    pub val: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
    pub class_map: ClassMap,
    pub warnings: Vec<String>,
}

/// Ceiling of `fraction * n` with a guard against binary round-up of
/// exact products.
fn ceil_fraction(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Stratified split. Per class: draw `per_class_train` pixels without
/// replacement from a generator derived from the split seed and the class
/// index, send the first ceil(val_fraction * per_class_train) of the
/// draw to validation and the rest to training; every other labeled
/// pixel of the class becomes test. The returned lists are sorted by
/// `(y, x)` within each split.
pub fn make_splits(cube: &HyperCube, spec: &SplitSpec) -> Result<SplitOutcome> {
    spec.validate()?;
    let distinct = cube.class_populations().len();
    if distinct == 0 {
        return Err(Error::data("label raster has no labeled pixels"));
    }
    let k = spec.top_k_classes.unwrap_or(distinct);
    let (filtered, class_map) = filter_top_classes(cube, k)?;

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();

    for entry in &class_map.classes {
        // scan order keeps the population list deterministic
        let mut coords: Vec<(usize, usize)> = Vec::with_capacity(entry.population);
        for y in 0..filtered.height {
            for x in 0..filtered.width {
                if filtered.label_at(x, y) == entry.raster_code {
                    coords.push((x, y));
                }
            }
        }
        if coords.len() < spec.per_class_train {
            return Err(Error::data(format!(
                "class {} (original code {}) has {} labeled pixels, fewer than per_class_train {}",
                entry.index,
                entry.original_code,
                coords.len(),
                spec.per_class_train
            )));
        }

        let mut rng = Rng::new(Rng::derive(spec.seed, entry.index as u64));
        rng.shuffle(&mut coords);
        let n_val = ceil_fraction(spec.val_fraction_of_train, spec.per_class_train)
            .min(spec.per_class_train);
        let to_ref = |&(x, y): &(usize, usize)| SampleRef {
            x,
            y,
            label: entry.index,
        };
        val.extend(coords[..n_val].iter().map(to_ref));
        train.extend(coords[n_val..spec.per_class_train].iter().map(to_ref));
        test.extend(coords[spec.per_class_train..].iter().map(to_ref));
        if coords.len() == spec.per_class_train {
            warnings.push(format!(
                "class {} (original code {}): no test samples remain",
                entry.index, entry.original_code
            ));
        }
        if n_val == spec.per_class_train {
            warnings.push(format!(
                "class {} (original code {}): no training samples remain after the validation draw",
                entry.index, entry.original_code
            ));
        }
    }

    for list in [&mut train, &mut val, &mut test] {
        list.sort_by_key(|s| (s.y, s.x));
    }
    Ok(SplitOutcome {
        train,
        val,
        test,
        class_map,
        warnings,
    })
}

/// Extract the patch for one split entry.
pub fn sample_patch(cube: &HyperCube, sample: &SampleRef, p: usize) -> Result<(Volume, usize)> {
    Ok((extract_patch(cube, sample.x, sample.y, p)?, sample.label))
}

/// Materialize a whole split as (patch, label) pairs.
pub fn materialize(cube: &HyperCube, refs: &[SampleRef], p: usize) -> Result<Vec<(Volume, usize)>> {
    refs.iter().map(|r| sample_patch(cube, r, p)).collect()
}
