//! Whole-network forward and backward passes.
//!
//! `forward` records everything the backward pass needs (layer inputs,
//! pre-activations, dropout masks) in a `ForwardTrace`; `backward` walks
//! the trace in reverse and accumulates gradients into a store shaped
//! exactly like the parameters. Under parameter sharing the branch
//! gradients of all bands land on the same path and therefore sum.

use super::store::{
    branch_layer_path, branch_specs, head_layer_path, head_specs, phi_spec, BranchSpec,
    GradStore, LayerParams, ParamStore, PHI_PATH,
};
use super::{band_split, NetworkConfig};
use crate::error::{Error, Result};
use crate::layers::{
    conv_lambda_backward, conv_xy_backward, conv_xy_forward, dropout_forward, fc_backward,
    fc_forward, relu_backward_vec, relu_backward_volume, relu_vec, ConvGrads, ConvParams,
    FcGrads, FcParams, Mode,
};
use crate::rng::Rng;
use crate::tensor::{elementwise_max_zero, Shape3, Volume};

enum Feature {
    Vol(Volume),
    Flat(Vec<f64>),
}

impl Feature {
    fn flatten(self) -> Vec<f64> {
        match self {
            Feature::Vol(v) => v.into_data(),
            Feature::Flat(x) => x,
        }
    }
}

enum StageTrace {
    Conv { input: Volume, pre: Volume },
    Fc { input: Vec<f64>, pre: Vec<f64> },
}

struct HeadTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    /// Dropout multipliers; absent on the final layer.
    mask: Option<Vec<f64>>,
}

/// Activation record of one forward pass.
pub struct ForwardTrace {
    mode: Mode,
    input: Volume,
    phi_pre: Option<Volume>,
    branch_stages: Vec<Vec<StageTrace>>,
    head: Vec<HeadTrace>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Smallest |pre-activation| across every ReLU-gated unit of the
    /// pass. A tiny value means the sample sits on or beside a kink of
    /// the loss surface, where one-sided finite differences and the
    /// subgradient convention legitimately disagree.
    pub fn min_relu_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        if let Some(pre) = &self.phi_pre {
            for v in pre.data() {
                margin = margin.min(v.abs());
            }
        }
        for stages in &self.branch_stages {
            for stage in stages {
                match stage {
                    StageTrace::Conv { pre, .. } => {
                        for v in pre.data() {
                            margin = margin.min(v.abs());
                        }
                    }
                    StageTrace::Fc { pre, .. } => {
                        for v in pre {
                            margin = margin.min(v.abs());
                        }
                    }
                }
            }
        }
        for (idx, rec) in self.head.iter().enumerate() {
            if idx + 1 < self.head.len() {
                for v in &rec.pre {
                    margin = margin.min(v.abs());
                }
            }
        }
        margin
    }
}

/// Backward-pass result: parameter gradients plus the input gradient.
pub struct NetGradients {
    pub store: GradStore,
    pub d_input: Volume,
}

fn conv_of<'a>(p: &'a LayerParams, path: &str) -> Result<&'a ConvParams> {
    match p {
        LayerParams::Conv(c) => Ok(c),
        LayerParams::Fc(_) => Err(Error::config(format!(
            "{} holds fully-connected parameters, expected a convolution",
            path
        ))),
    }
}

fn fc_of<'a>(p: &'a LayerParams, path: &str) -> Result<&'a FcParams> {
    match p {
        LayerParams::Fc(f) => Ok(f),
        LayerParams::Conv(_) => Err(Error::config(format!(
            "{} holds convolution parameters, expected fully-connected",
            path
        ))),
    }
}

/// Run the network on one patch. In train mode `rng` drives the dropout
/// masks; eval mode never consumes randomness.
pub fn forward(
    cfg: &NetworkConfig,
    params: &ParamStore,
    input: &Volume,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ForwardTrace> {
    let shapes = cfg.shape_trace()?;
    if input.shape() != shapes.input {
        return Err(Error::shape(format!(
            "network input must be {}, got {}",
            shapes.input,
            input.shape()
        )));
    }
    if !input.is_finite() {
        return Err(Error::numeric("network input contains non-finite values"));
    }
    let b_specs = branch_specs(cfg)?;
    let h_specs = head_specs(cfg)?;

    let (phi_pre, phi_out) = match phi_spec(cfg)? {
        None => (None, input.clone()),
        Some(spec) => {
            let p = conv_of(params.get(PHI_PATH)?, PHI_PATH)?;
            let pre = conv_xy_forward(input, &spec, p)?;
            let out = elementwise_max_zero(&pre);
            (Some(pre), out)
        }
    };
    let bands = band_split(&phi_out, cfg.n_b)?;

    let mut branch_stages = Vec::with_capacity(cfg.n_b);
    let mut concat = Vec::with_capacity(shapes.concat);
    for (band_idx, band) in bands.into_iter().enumerate() {
        let mut stages = Vec::with_capacity(b_specs.len());
        let mut feature = Feature::Vol(band);
        for (layer_idx, spec) in b_specs.iter().enumerate() {
            let path = branch_layer_path(cfg, band_idx, layer_idx);
            feature = match spec {
                BranchSpec::Conv(s) => {
                    let vol = match feature {
                        Feature::Vol(v) => v,
                        Feature::Flat(_) => unreachable!("validated by shape_trace"),
                    };
                    let p = conv_of(params.get(&path)?, &path)?;
                    let pre = crate::layers::conv_lambda_forward(&vol, s, p)?;
                    let out = elementwise_max_zero(&pre);
                    stages.push(StageTrace::Conv { input: vol, pre });
                    Feature::Vol(out)
                }
                BranchSpec::Fc(s) => {
                    let flat = feature.flatten();
                    let p = fc_of(params.get(&path)?, &path)?;
                    let pre = fc_forward(&flat, s, p)?;
                    let out = relu_vec(&pre);
                    stages.push(StageTrace::Fc { input: flat, pre });
                    Feature::Flat(out)
                }
            };
        }
        concat.extend(feature.flatten());
        branch_stages.push(stages);
    }

    let mut head = Vec::with_capacity(h_specs.len());
    let mut value = concat;
    let last = h_specs.len() - 1;
    for (layer_idx, spec) in h_specs.iter().enumerate() {
        let path = head_layer_path(layer_idx);
        let p = fc_of(params.get(&path)?, &path)?;
        let pre = fc_forward(&value, spec, p)?;
        if layer_idx == last {
            let logits = pre.clone();
            head.push(HeadTrace {
                input: value,
                pre,
                mask: None,
            });
            value = logits;
        } else {
            let activated = relu_vec(&pre);
            let (out, mask) = dropout_forward(&activated, cfg.dropout_rate, mode, rng)?;
            head.push(HeadTrace {
                input: value,
                pre,
                mask: Some(mask),
            });
            value = out;
        }
    }

    if !value.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("logits contain non-finite values"));
    }
    Ok(ForwardTrace {
        mode,
        input: input.clone(),
        phi_pre,
        branch_stages,
        head,
        logits: value,
    })
}

/// Eval-mode logits without keeping the trace around.
pub fn predict_logits(cfg: &NetworkConfig, params: &ParamStore, input: &Volume) -> Result<Vec<f64>> {
    let mut rng = Rng::new(0);
    Ok(forward(cfg, params, input, Mode::Eval, &mut rng)?.logits)
}

enum DFeature {
    Vol(Volume),
    Flat(Vec<f64>),
}

impl DFeature {
    fn into_volume(self, shape: Shape3) -> Result<Volume> {
        match self {
            DFeature::Vol(v) => {
                if v.shape() != shape {
                    return Err(Error::shape(format!(
                        "gradient shape {} does not match expected {}",
                        v.shape(),
                        shape
                    )));
                }
                Ok(v)
            }
            DFeature::Flat(x) => Volume::from_vec(shape, x),
        }
    }

    fn into_flat(self) -> Vec<f64> {
        match self {
            DFeature::Vol(v) => v.into_data(),
            DFeature::Flat(x) => x,
        }
    }
}

fn add_conv(target: &mut LayerParams, g: &ConvGrads, path: &str) -> Result<()> {
    match target {
        LayerParams::Conv(p) => {
            if p.filters.len() != g.d_filters.len() || p.bias.len() != g.d_bias.len() {
                return Err(Error::shape(format!("gradient shape mismatch at {}", path)));
            }
            for (t, s) in p.filters.iter_mut().zip(&g.d_filters) {
                if t.shape() != s.shape() {
                    return Err(Error::shape(format!("gradient shape mismatch at {}", path)));
                }
                for (tv, sv) in t.data_mut().iter_mut().zip(s.data()) {
                    *tv += sv;
                }
            }
            for (t, s) in p.bias.iter_mut().zip(&g.d_bias) {
                *t += s;
            }
            Ok(())
        }
        LayerParams::Fc(_) => Err(Error::config(format!(
            "{} expected convolution gradients",
            path
        ))),
    }
}

fn add_fc(target: &mut LayerParams, g: &FcGrads, path: &str) -> Result<()> {
    match target {
        LayerParams::Fc(p) => {
            if p.weights.len() != g.d_weights.len() || p.bias.len() != g.d_bias.len() {
                return Err(Error::shape(format!("gradient shape mismatch at {}", path)));
            }
            for (t, s) in p.weights.iter_mut().zip(&g.d_weights) {
                *t += s;
            }
            for (t, s) in p.bias.iter_mut().zip(&g.d_bias) {
                *t += s;
            }
            Ok(())
        }
        LayerParams::Conv(_) => Err(Error::config(format!(
            "{} expected fully-connected gradients",
            path
        ))),
    }
}

/// Backpropagate `d_logits` through a train-mode trace.
pub fn backward(
    cfg: &NetworkConfig,
    params: &ParamStore,
    trace: &ForwardTrace,
    d_logits: &[f64],
) -> Result<NetGradients> {
    if trace.mode != Mode::Train {
        return Err(Error::config(
            "backward requires a trace recorded in train mode",
        ));
    }
    let shapes = cfg.shape_trace()?;
    if trace.input.shape() != shapes.input
        || trace.logits.len() != cfg.num_classes
        || trace.branch_stages.len() != cfg.n_b
        || trace.head.len() != cfg.block3.len()
    {
        return Err(Error::config("trace does not match the configuration"));
    }
    if d_logits.len() != cfg.num_classes {
        return Err(Error::shape(format!(
            "logit gradient length {} does not match {} classes",
            d_logits.len(),
            cfg.num_classes
        )));
    }
    let b_specs = branch_specs(cfg)?;
    let h_specs = head_specs(cfg)?;
    let mut grads = params.zeros_like();

    let mut d = d_logits.to_vec();
    let last = trace.head.len() - 1;
    for layer_idx in (0..trace.head.len()).rev() {
        let rec = &trace.head[layer_idx];
        let d_pre = if layer_idx == last {
            d
        } else {
            let mask = rec
                .mask
                .as_ref()
                .ok_or_else(|| Error::config("trace is missing a dropout mask"))?;
            if mask.len() != d.len() {
                return Err(Error::shape("dropout mask length does not match gradient"));
            }
            let gated: Vec<f64> = d.iter().zip(mask).map(|(g, m)| g * m).collect();
            relu_backward_vec(&rec.pre, &gated)
        };
        let path = head_layer_path(layer_idx);
        let p = fc_of(params.get(&path)?, &path)?;
        let fg = fc_backward(&rec.input, &h_specs[layer_idx], p, &d_pre)?;
        add_fc(grads.get_mut(&path)?, &fg, &path)?;
        d = fg.d_input;
    }

    if d.len() != shapes.concat {
        return Err(Error::shape(format!(
            "concatenation gradient length {} does not match {}",
            d.len(),
            shapes.concat
        )));
    }
    let seg = shapes.branch_flat;
    let mut d_phi_out = Volume::zeros(shapes.phi_out);
    for band_idx in 0..cfg.n_b {
        let stages = &trace.branch_stages[band_idx];
        if stages.len() != b_specs.len() {
            return Err(Error::config("trace branch depth does not match"));
        }
        let mut d_cur = DFeature::Flat(d[band_idx * seg..(band_idx + 1) * seg].to_vec());
        for layer_idx in (0..stages.len()).rev() {
            let path = branch_layer_path(cfg, band_idx, layer_idx);
            match (&stages[layer_idx], &b_specs[layer_idx]) {
                (StageTrace::Conv { input, pre }, BranchSpec::Conv(s)) => {
                    let d_out = d_cur.into_volume(pre.shape())?;
                    let d_pre = relu_backward_volume(pre, &d_out);
                    let p = conv_of(params.get(&path)?, &path)?;
                    let cg = conv_lambda_backward(input, s, p, &d_pre)?;
                    add_conv(grads.get_mut(&path)?, &cg, &path)?;
                    d_cur = DFeature::Vol(cg.d_input);
                }
                (StageTrace::Fc { input, pre }, BranchSpec::Fc(s)) => {
                    let d_out = d_cur.into_flat();
                    let d_pre = relu_backward_vec(pre, &d_out);
                    let p = fc_of(params.get(&path)?, &path)?;
                    let fg = fc_backward(input, s, p, &d_pre)?;
                    add_fc(grads.get_mut(&path)?, &fg, &path)?;
                    d_cur = DFeature::Flat(fg.d_input);
                }
                _ => return Err(Error::config("trace layer kind does not match")),
            }
        }
        let d_band = d_cur.into_volume(shapes.band)?;
        let width = shapes.band.c;
        for i in 0..shapes.band.a {
            for j in 0..shapes.band.b {
                for k in 0..width {
                    d_phi_out.set(i, j, band_idx * width + k, d_band.get(i, j, k));
                }
            }
        }
    }

    let d_input = match phi_spec(cfg)? {
        None => d_phi_out,
        Some(spec) => {
            let pre = trace
                .phi_pre
                .as_ref()
                .ok_or_else(|| Error::config("trace is missing the phi pre-activation"))?;
            let d_pre = relu_backward_volume(pre, &d_phi_out);
            let p = conv_of(params.get(PHI_PATH)?, PHI_PATH)?;
            let cg = conv_xy_backward(&trace.input, &spec, p, &d_pre)?;
            add_conv(grads.get_mut(PHI_PATH)?, &cg, PHI_PATH)?;
            cg.d_input
        }
    };

    Ok(NetGradients {
        store: grads,
        d_input,
    })
}
