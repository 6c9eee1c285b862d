//! Network assembly: declarative configuration of the three blocks, the
//! band split, static shape tracing, and the built-in presets.
//!
//! Block 1 applies a spectral feature selection (identity or a 1x1 spatial
//! convolution followed by ReLU) and splits the channels into `n_b` equal
//! adjacent bands. Block 2 runs one branch network per band; with
//! parameter sharing on, all branches alias a single physical parameter
//! set. Block 3 concatenates the branch outputs and classifies with
//! fully-connected layers.

mod net;
mod store;

pub use net::{backward, forward, predict_logits, ForwardTrace, NetGradients};
pub use store::{
    branch_layer_path, build_network, head_layer_path, param_paths, zero_network, GradStore,
    LayerParams, ParamStore, PHI_PATH,
};

use crate::error::{Error, Result};
use crate::layers::{conv_xy_forward, ConvParams, ConvXySpec};
use crate::tensor::{elementwise_max_zero, Shape3, Volume};
use serde::{Deserialize, Serialize};

/// Spectral feature selection applied by Block 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    Identity,
    Conv1x1 { out_channels: usize },
}

/// One layer of a Block 2 branch network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchLayer {
    ConvLambda { field: usize, out_channels: usize },
    Fc { width: usize },
}

impl std::fmt::Display for BranchLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BranchLayer::ConvLambda {
                field,
                out_channels,
            } => write!(f, "conv_lambda-{},{}", field, out_channels),
            BranchLayer::Fc { width } => write!(f, "fc-{}", width),
        }
    }
}

fn default_dropout() -> f64 {
    0.5
}

/// Declarative description of the whole network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Which of the four reference configurations this follows (1-4).
    pub configuration_id: u8,
    /// Spatial neighborhood size `p` (odd).
    pub patch_size: usize,
    /// Number of input spectral channels `N_c`.
    pub in_channels: usize,
    pub phi: Phi,
    /// Number of bands / parallel Block 2 branches.
    pub n_b: usize,
    /// Branch network, identical across bands.
    pub block2: Vec<BranchLayer>,
    /// Fully-connected widths of Block 3; the last equals `num_classes`.
    pub block3: Vec<usize>,
    pub num_classes: usize,
    /// Tie all Block 2 branches to one physical parameter set.
    pub parameter_sharing: bool,
    /// Dropout probability on the non-final Block 3 layers.
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

/// Shape of the value flowing through a branch: a volume until the first
/// fully-connected layer, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureShape {
    Volume(Shape3),
    Flat(usize),
}

impl FeatureShape {
    pub fn flat_len(&self) -> usize {
        match self {
            FeatureShape::Volume(s) => s.len(),
            FeatureShape::Flat(n) => *n,
        }
    }
}

impl std::fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureShape::Volume(s) => write!(f, "{}", s),
            FeatureShape::Flat(n) => write!(f, "flat-{}", n),
        }
    }
}

/// Static shape trace of a validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTrace {
    pub input: Shape3,
    /// Output of the Block 1 feature selection.
    pub phi_out: Shape3,
    /// Input of every Block 2 branch.
    pub band: Shape3,
    /// Shape after each Block 2 layer.
    pub branch: Vec<FeatureShape>,
    /// Flattened length of one branch output.
    pub branch_flat: usize,
    /// Length of the concatenated Block 3 input.
    pub concat: usize,
    /// Output widths of the Block 3 layers; the last is the logit count.
    pub block3: Vec<usize>,
}

impl NetworkConfig {
    /// Validate the configuration end to end and return its shape trace.
    /// Errors name the first offending layer.
    pub fn shape_trace(&self) -> Result<ShapeTrace> {
        if !(1..=4).contains(&self.configuration_id) {
            return Err(Error::config(format!(
                "configuration_id must be 1-4, got {}",
                self.configuration_id
            )));
        }
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(Error::config(format!(
                "patch_size must be odd and positive, got {}",
                self.patch_size
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::config("in_channels must be >= 1"));
        }
        if self.n_b == 0 {
            return Err(Error::config("n_b must be >= 1"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.block3.is_empty() {
            return Err(Error::config("block3 must contain at least one layer"));
        }
        if *self.block3.last().unwrap() != self.num_classes {
            return Err(Error::config(format!(
                "last block3 width {} must equal num_classes {}",
                self.block3.last().unwrap(),
                self.num_classes
            )));
        }

        let input = Shape3::new(self.patch_size, self.patch_size, self.in_channels)?;
        let phi_out = match self.phi {
            Phi::Identity => input,
            Phi::Conv1x1 { out_channels } => {
                if out_channels == 0 {
                    return Err(Error::config("block1 conv1x1 needs out_channels >= 1"));
                }
                Shape3::new(self.patch_size, self.patch_size, out_channels)?
            }
        };

        if phi_out.c % self.n_b != 0 {
            return Err(Error::config(format!(
                "band split: {} channels not divisible into {} equal bands",
                phi_out.c, self.n_b
            )));
        }
        let band = Shape3::new(phi_out.a, phi_out.b, phi_out.c / self.n_b)?;

        let mut branch = Vec::with_capacity(self.block2.len());
        let mut feature = FeatureShape::Volume(band);
        for (idx, layer) in self.block2.iter().enumerate() {
            feature = match (*layer, feature) {
                (
                    BranchLayer::ConvLambda {
                        field,
                        out_channels,
                    },
                    FeatureShape::Volume(shape),
                ) => {
                    if field == 0 || field > shape.c {
                        return Err(Error::config(format!(
                            "block2 layer {} ({}): spectral field {} does not fit input {}",
                            idx, layer, field, shape
                        )));
                    }
                    if out_channels == 0 {
                        return Err(Error::config(format!(
                            "block2 layer {} ({}): out_channels must be >= 1",
                            idx, layer
                        )));
                    }
                    FeatureShape::Volume(Shape3::new(out_channels, 1, shape.c - field + 1)?)
                }
                (BranchLayer::ConvLambda { .. }, FeatureShape::Flat(_)) => {
                    return Err(Error::config(format!(
                        "block2 layer {} ({}): convolution cannot follow a flattened layer",
                        idx, layer
                    )));
                }
                (BranchLayer::Fc { width }, prev) => {
                    if width == 0 {
                        return Err(Error::config(format!(
                            "block2 layer {} ({}): width must be >= 1",
                            idx, layer
                        )));
                    }
                    // an fc layer flattens a volume input implicitly
                    let _ = prev.flat_len();
                    FeatureShape::Flat(width)
                }
            };
            branch.push(feature);
        }

        let branch_flat = feature.flat_len();
        let concat = branch_flat
            .checked_mul(self.n_b)
            .ok_or_else(|| Error::config("concatenated feature length overflows"))?;

        for (idx, &width) in self.block3.iter().enumerate() {
            if width == 0 {
                return Err(Error::config(format!(
                    "block3 layer {} width must be >= 1",
                    idx
                )));
            }
        }

        Ok(ShapeTrace {
            input,
            phi_out,
            band,
            branch,
            branch_flat,
            concat,
            block3: self.block3.clone(),
        })
    }

    /// Total learnable parameter count, a pure function of the config.
    pub fn param_count(&self) -> Result<usize> {
        let trace = self.shape_trace()?;
        let mut count = 0usize;

        if let Phi::Conv1x1 { out_channels } = self.phi {
            // out_channels filters of 1 x 1 x in_channels, plus biases
            count += out_channels * self.in_channels + out_channels;
        }

        let mut branch_count = 0usize;
        let mut shape = FeatureShape::Volume(trace.band);
        for layer in &self.block2 {
            match (*layer, shape) {
                (
                    BranchLayer::ConvLambda {
                        field,
                        out_channels,
                    },
                    FeatureShape::Volume(s),
                ) => {
                    branch_count += out_channels * (s.a * s.b * field) + out_channels;
                    shape = FeatureShape::Volume(Shape3 {
                        a: out_channels,
                        b: 1,
                        c: s.c - field + 1,
                    });
                }
                (BranchLayer::Fc { width }, prev) => {
                    branch_count += width * prev.flat_len() + width;
                    shape = FeatureShape::Flat(width);
                }
                _ => unreachable!("validated by shape_trace"),
            }
        }
        count += if self.parameter_sharing {
            branch_count
        } else {
            branch_count * self.n_b
        };

        let mut in_dim = trace.concat;
        for &width in &self.block3 {
            count += width * in_dim + width;
            in_dim = width;
        }
        Ok(count)
    }
}

/// Split a volume into `n_b` non-overlapping adjacent bands of equal
/// bandwidth along the spectral axis. Concatenating the bands in order
/// reconstructs the input exactly.
pub fn band_split(v: &Volume, n_b: usize) -> Result<Vec<Volume>> {
    let c = v.shape().c;
    if n_b == 0 || c % n_b != 0 {
        return Err(Error::shape(format!(
            "cannot split {} channels into {} equal bands",
            c, n_b
        )));
    }
    let width = c / n_b;
    (0..n_b)
        .map(|i| v.slice_channels(i * width, (i + 1) * width))
        .collect()
}

/// Apply the Block 1 feature selection. `params` must be provided exactly
/// when `phi` is a 1x1 convolution; the convolution is followed by ReLU.
pub fn apply_phi(v: &Volume, phi: Phi, params: Option<&ConvParams>) -> Result<Volume> {
    match phi {
        Phi::Identity => {
            if params.is_some() {
                return Err(Error::config("identity phi takes no parameters"));
            }
            Ok(v.clone())
        }
        Phi::Conv1x1 { out_channels } => {
            let params =
                params.ok_or_else(|| Error::config("conv1x1 phi requires parameters"))?;
            let spec = ConvXySpec::new(1, out_channels, v.shape())?;
            let pre = conv_xy_forward(v, &spec, params)?;
            Ok(elementwise_max_zero(&pre))
        }
    }
}

/// The three benchmark scenes the presets target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    IndianPines,
    Salinas,
    UPavia,
}

/// Built-in preset: one of the four reference configurations specialized
/// to a dataset.
///
/// Configurations 1-2 use the identity feature selection where the channel
/// count permits it. U. Pavia has 103 channels, which cannot split into 5
/// equal bands, so its presets use the 1x1 convolution (100 output
/// channels) in every configuration.
pub fn preset(dataset: Dataset, configuration: u8, parameter_sharing: bool) -> Result<NetworkConfig> {
    if !(1..=4).contains(&configuration) {
        return Err(Error::config(format!(
            "configuration must be 1-4, got {}",
            configuration
        )));
    }

    let (in_channels, n_b, num_classes, conv1x1_out) = match dataset {
        Dataset::IndianPines => (220, 10, 9, 220),
        Dataset::Salinas => (224, 14, 16, 224),
        Dataset::UPavia => (103, 5, 9, 100),
    };

    let phi = if configuration >= 3 || dataset == Dataset::UPavia {
        Phi::Conv1x1 {
            out_channels: conv1x1_out,
        }
    } else {
        Phi::Identity
    };

    let block2 = match configuration {
        1 => vec![
            BranchLayer::Fc { width: 150 },
            BranchLayer::Fc { width: 100 },
        ],
        2 | 3 => vec![
            BranchLayer::ConvLambda {
                field: 3,
                out_channels: 20,
            },
            BranchLayer::ConvLambda {
                field: 3,
                out_channels: 20,
            },
            BranchLayer::Fc { width: 100 },
        ],
        4 => vec![
            BranchLayer::ConvLambda {
                field: 3,
                out_channels: 20,
            },
            BranchLayer::ConvLambda {
                field: 3,
                out_channels: 20,
            },
            BranchLayer::ConvLambda {
                field: 3,
                out_channels: 10,
            },
            BranchLayer::ConvLambda {
                field: 5,
                out_channels: 5,
            },
        ],
        _ => unreachable!(),
    };

    let block3 = match configuration {
        1 | 2 | 3 => vec![500, 100, num_classes],
        4 => vec![100, num_classes],
        _ => unreachable!(),
    };

    let cfg = NetworkConfig {
        configuration_id: configuration,
        patch_size: 3,
        in_channels,
        phi,
        n_b,
        block2,
        block3,
        num_classes,
        parameter_sharing,
        dropout_rate: 0.5,
    };
    cfg.shape_trace()?;
    Ok(cfg)
}
