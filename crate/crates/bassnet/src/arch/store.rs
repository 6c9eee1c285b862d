//! Parameter storage keyed by layer path.
//!
//! Paths are chosen so that lexicographic order equals the canonical
//! enumeration order used for flattening, checkpoints, and optimizer
//! state: `block1/phi`, then the Block 2 branches
//! (`block2/band000/layer00` ... or `block2/shared/layer00` ... under
//! parameter sharing), then `block3/layer00` onwards.

use super::{BranchLayer, FeatureShape, NetworkConfig, Phi};
use crate::error::{Error, Result};
use crate::layers::{ConvLambdaSpec, ConvParams, ConvXySpec, FcParams, FcSpec};
use crate::rng::{uniform_init, Rng};
use std::collections::BTreeMap;

pub const PHI_PATH: &str = "block1/phi";

pub fn branch_layer_path(cfg: &NetworkConfig, band: usize, layer: usize) -> String {
    if cfg.parameter_sharing {
        format!("block2/shared/layer{:02}", layer)
    } else {
        format!("block2/band{:03}/layer{:02}", band, layer)
    }
}

pub fn head_layer_path(layer: usize) -> String {
    format!("block3/layer{:02}", layer)
}

/// Canonical path list for a configuration. The checkpoint format and the
/// flat parameter vector both follow this order.
pub fn param_paths(cfg: &NetworkConfig) -> Result<Vec<String>> {
    cfg.shape_trace()?;
    let mut paths = Vec::new();
    if matches!(cfg.phi, Phi::Conv1x1 { .. }) {
        paths.push(PHI_PATH.to_string());
    }
    let bands = if cfg.parameter_sharing { 1 } else { cfg.n_b };
    for band in 0..bands {
        for layer in 0..cfg.block2.len() {
            paths.push(branch_layer_path(cfg, band, layer));
        }
    }
    for layer in 0..cfg.block3.len() {
        paths.push(head_layer_path(layer));
    }
    Ok(paths)
}

/// Parameters of a single layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv(ConvParams),
    Fc(FcParams),
}

impl LayerParams {
    pub fn param_count(&self) -> usize {
        match self {
            LayerParams::Conv(p) => p.param_count(),
            LayerParams::Fc(p) => p.param_count(),
        }
    }

    pub fn zeros_like(&self) -> LayerParams {
        match self {
            LayerParams::Conv(p) => {
                let filters = p
                    .filters
                    .iter()
                    .map(|f| crate::tensor::Volume::zeros(f.shape()))
                    .collect();
                LayerParams::Conv(ConvParams {
                    filters,
                    bias: vec![0.0; p.bias.len()],
                })
            }
            LayerParams::Fc(p) => LayerParams::Fc(FcParams {
                weights: vec![0.0; p.weights.len()],
                bias: vec![0.0; p.bias.len()],
            }),
        }
    }

    /// Tensor views in canonical order: filters then bias for a
    /// convolution, weights then bias for a fully-connected layer.
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        match self {
            LayerParams::Conv(p) => {
                let mut out: Vec<&[f64]> = p.filters.iter().map(|f| f.data()).collect();
                out.push(&p.bias);
                out
            }
            LayerParams::Fc(p) => vec![&p.weights, &p.bias],
        }
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerParams::Conv(p) => {
                let mut out: Vec<&mut [f64]> =
                    p.filters.iter_mut().map(|f| f.data_mut()).collect();
                out.push(&mut p.bias);
                out
            }
            LayerParams::Fc(p) => vec![&mut p.weights, &mut p.bias],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// All learnable parameters of a network, keyed by layer path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, LayerParams>,
}

/// Gradients share the exact shape of the parameters they belong to.
pub type GradStore = ParamStore;

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, path: &str, params: LayerParams) -> Result<()> {
        if self.entries.contains_key(path) {
            return Err(Error::config(format!("duplicate parameter path {}", path)));
        }
        self.entries.insert(path.to_string(), params);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&LayerParams> {
        self.entries
            .get(path)
            .ok_or_else(|| Error::config(format!("no parameters at path {}", path)))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut LayerParams> {
        self.entries
            .get_mut(path)
            .ok_or_else(|| Error::config(format!("no parameters at path {}", path)))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterate entries in canonical path order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &LayerParams)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(|p| p.param_count()).sum()
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|p| p.is_finite())
    }

    /// All parameters as one vector in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for params in self.entries.values() {
            for slice in params.slices() {
                out.extend_from_slice(slice);
            }
        }
        out
    }

    /// Overwrite every parameter from a flat vector in canonical order.
    pub fn assign_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat vector length {} does not match parameter count {}",
                data.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for params in self.entries.values_mut() {
            for slice in params.slices_mut() {
                slice.copy_from_slice(&data[offset..offset + slice.len()]);
                offset += slice.len();
            }
        }
        Ok(())
    }

    /// Accumulate same-shaped values (typically gradients) in place.
    pub fn accumulate(&mut self, other: &ParamStore) -> Result<()> {
        for (path, addend) in other.iter() {
            let target = self.get_mut(path)?;
            let mut targets = target.slices_mut();
            let sources = addend.slices();
            if targets.len() != sources.len() {
                return Err(Error::shape(format!("tensor count mismatch at {}", path)));
            }
            for (t, s) in targets.iter_mut().zip(sources.iter()) {
                if t.len() != s.len() {
                    return Err(Error::shape(format!("tensor length mismatch at {}", path)));
                }
                for (tv, sv) in t.iter_mut().zip(s.iter()) {
                    *tv += sv;
                }
            }
        }
        Ok(())
    }
}

pub(crate) enum BranchSpec {
    Conv(ConvLambdaSpec),
    Fc(FcSpec),
}

/// Layer specs of one Block 2 branch, in order.
pub(crate) fn branch_specs(cfg: &NetworkConfig) -> Result<Vec<BranchSpec>> {
    let trace = cfg.shape_trace()?;
    let mut specs = Vec::with_capacity(cfg.block2.len());
    let mut shape = FeatureShape::Volume(trace.band);
    for layer in &cfg.block2 {
        let spec = match (*layer, shape) {
            (
                BranchLayer::ConvLambda {
                    field,
                    out_channels,
                },
                FeatureShape::Volume(s),
            ) => {
                let spec = ConvLambdaSpec::new(field, out_channels, s)?;
                shape = FeatureShape::Volume(spec.out_shape());
                BranchSpec::Conv(spec)
            }
            (BranchLayer::Fc { width }, prev) => {
                let spec = FcSpec::new(prev.flat_len(), width)?;
                shape = FeatureShape::Flat(width);
                BranchSpec::Fc(spec)
            }
            _ => unreachable!("validated by shape_trace"),
        };
        specs.push(spec);
    }
    Ok(specs)
}

/// Fully-connected specs of Block 3, in order.
pub(crate) fn head_specs(cfg: &NetworkConfig) -> Result<Vec<FcSpec>> {
    let trace = cfg.shape_trace()?;
    let mut specs = Vec::with_capacity(cfg.block3.len());
    let mut in_dim = trace.concat;
    for &width in &cfg.block3 {
        specs.push(FcSpec::new(in_dim, width)?);
        in_dim = width;
    }
    Ok(specs)
}

pub(crate) fn phi_spec(cfg: &NetworkConfig) -> Result<Option<ConvXySpec>> {
    match cfg.phi {
        Phi::Identity => Ok(None),
        Phi::Conv1x1 { out_channels } => {
            let in_shape =
                crate::tensor::Shape3::new(cfg.patch_size, cfg.patch_size, cfg.in_channels)?;
            Ok(Some(ConvXySpec::new(1, out_channels, in_shape)?))
        }
    }
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn init_conv(filter_shape: crate::tensor::Shape3, out_channels: usize, rng: &mut Rng) -> Result<ConvParams> {
    let bound = glorot_bound(filter_shape.len(), out_channels);
    let filters = (0..out_channels)
        .map(|_| uniform_init(filter_shape, bound, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvParams {
        filters,
        bias: vec![0.0; out_channels],
    })
}

fn init_fc(spec: FcSpec, rng: &mut Rng) -> Result<FcParams> {
    let bound = glorot_bound(spec.in_dim, spec.out_dim);
    let weights = (0..spec.in_dim * spec.out_dim)
        .map(|_| rng.uniform(bound))
        .collect();
    Ok(FcParams {
        weights,
        bias: vec![0.0; spec.out_dim],
    })
}

/// All-zero parameter store with the exact layout of `build_network`,
/// used as the target when deserializing saved parameters.
pub fn zero_network(cfg: &NetworkConfig) -> Result<ParamStore> {
    let branch = branch_specs(cfg)?;
    let head = head_specs(cfg)?;
    let phi = phi_spec(cfg)?;

    let mut store = ParamStore::new();
    if let Some(spec) = phi {
        store.insert(
            PHI_PATH,
            LayerParams::Conv(ConvParams::zeros(spec.filter_shape(), spec.out_channels)),
        )?;
    }
    let bands = if cfg.parameter_sharing { 1 } else { cfg.n_b };
    for band in 0..bands {
        for (layer, spec) in branch.iter().enumerate() {
            let params = match spec {
                BranchSpec::Conv(s) => {
                    LayerParams::Conv(ConvParams::zeros(s.filter_shape(), s.out_channels))
                }
                BranchSpec::Fc(s) => LayerParams::Fc(FcParams::zeros(*s)),
            };
            store.insert(&branch_layer_path(cfg, band, layer), params)?;
        }
    }
    for (layer, spec) in head.iter().enumerate() {
        store.insert(&head_layer_path(layer), LayerParams::Fc(FcParams::zeros(*spec)))?;
    }
    Ok(store)
}

/// Build a freshly initialized parameter store for a configuration.
///
/// Weights draw from a uniform distribution with bound
/// sqrt(6 / (fan_in + fan_out)); biases start at zero. Draws happen in
/// canonical path order, so the result is a pure function of the
/// configuration and the generator state.
pub fn build_network(cfg: &NetworkConfig, rng: &mut Rng) -> Result<ParamStore> {
    let branch = branch_specs(cfg)?;
    let head = head_specs(cfg)?;
    let phi = phi_spec(cfg)?;

    let mut store = ParamStore::new();
    if let Some(spec) = phi {
        store.insert(
            PHI_PATH,
            LayerParams::Conv(init_conv(spec.filter_shape(), spec.out_channels, rng)?),
        )?;
    }
    let bands = if cfg.parameter_sharing { 1 } else { cfg.n_b };
    for band in 0..bands {
        for (layer, spec) in branch.iter().enumerate() {
            let params = match spec {
                BranchSpec::Conv(s) => {
                    LayerParams::Conv(init_conv(s.filter_shape(), s.out_channels, rng)?)
                }
                BranchSpec::Fc(s) => LayerParams::Fc(init_fc(*s, rng)?),
            };
            store.insert(&branch_layer_path(cfg, band, layer), params)?;
        }
    }
    for (layer, spec) in head.iter().enumerate() {
        store.insert(&head_layer_path(layer), LayerParams::Fc(init_fc(*spec, rng)?))?;
    }

    debug_assert_eq!(store.paths(), param_paths(cfg)?);
    Ok(store)
}
