//! Finite-difference verification of the analytic gradients.
//!
//! The harness builds a reduced network (3x3x8 input, 2 bands, 2
//! classes) mirroring each of the four reference configurations, runs
//! one forward/backward with the real cross-entropy loss and dropout
//! active, and compares every parameter gradient plus the input gradient
//! against central differences. Each loss evaluation reseeds the dropout
//! generator so all evaluations see identical masks.

use crate::arch::{
    backward, build_network, forward, BranchLayer, NetworkConfig, ParamStore, Phi,
};
use crate::error::{Error, Result};
use crate::layers::{cross_entropy_loss, softmax, Mode};
use crate::rng::{uniform_init, Rng};
use crate::tensor::Volume;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Reduced version of one of the four reference configurations, small
/// enough for exhaustive finite differencing.
pub fn reduced_config(configuration: u8, parameter_sharing: bool) -> Result<NetworkConfig> {
    let (phi, block2, block3) = match configuration {
        1 => (
            Phi::Identity,
            vec![BranchLayer::Fc { width: 6 }, BranchLayer::Fc { width: 5 }],
            vec![8, 4, 2],
        ),
        2 => (
            Phi::Identity,
            vec![
                BranchLayer::ConvLambda {
                    field: 2,
                    out_channels: 4,
                },
                BranchLayer::ConvLambda {
                    field: 2,
                    out_channels: 4,
                },
                BranchLayer::Fc { width: 5 },
            ],
            vec![8, 4, 2],
        ),
        3 => (
            Phi::Conv1x1 { out_channels: 8 },
            vec![
                BranchLayer::ConvLambda {
                    field: 2,
                    out_channels: 4,
                },
                BranchLayer::ConvLambda {
                    field: 2,
                    out_channels: 4,
                },
                BranchLayer::Fc { width: 5 },
            ],
            vec![8, 4, 2],
        ),
        4 => (
            Phi::Conv1x1 { out_channels: 8 },
            vec![
                BranchLayer::ConvLambda {
                    field: 2,
                    out_channels: 4,
                },
                BranchLayer::ConvLambda {
                    field: 2,
                    out_channels: 3,
                },
                BranchLayer::ConvLambda {
                    field: 2,
                    out_channels: 2,
                },
            ],
            vec![6, 2],
        ),
        other => {
            return Err(Error::config(format!(
                "no reduced configuration {}, expected 1-4",
                other
            )))
        }
    };
    let cfg = NetworkConfig {
        configuration_id: configuration,
        patch_size: 3,
        in_channels: 8,
        phi,
        n_b: 2,
        block2,
        block3,
        num_classes: 2,
        parameter_sharing,
        dropout_rate: 0.5,
    };
    cfg.shape_trace()?;
    Ok(cfg)
}

/// Worst relative error observed for one layer path (or the input).
#[derive(Debug, Clone)]
pub struct LayerReport {
    pub path: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub configuration: u8,
    pub parameter_sharing: bool,
    pub layers: Vec<LayerReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        return 0.0;
    }
    (a - b).abs() / scale
}

/// Check one configuration. `perturb_path` is a test hook: when set, the
/// analytic gradient of that layer is corrupted before comparison, which
/// must make the check fail.
///
/// Samples whose ReLU pre-activations lie within `50 * step` of zero are
/// rejected and redrawn from a derived seed: at a kink the subgradient
/// and a finite difference disagree by construction, so such samples say
/// nothing about the correctness of the backward pass.
pub fn run_gradcheck_perturbed(
    cfg: &NetworkConfig,
    seed: u64,
    step: f64,
    tolerance: f64,
    perturb_path: Option<&str>,
) -> Result<GradCheckReport> {
    let shapes = cfg.shape_trace()?;
    let label = (cfg.configuration_id as usize + 1) % cfg.num_classes;
    let margin = 50.0 * step;

    let mut sample = None;
    for attempt in 0..32u64 {
        let base = if attempt == 0 {
            seed
        } else {
            Rng::derive(seed, 1000 + attempt)
        };
        let mut init_rng = Rng::new(Rng::derive(base, 1));
        let params = build_network(cfg, &mut init_rng)?;
        let mut input_rng = Rng::new(Rng::derive(base, 2));
        let input = uniform_init(shapes.input, 1.0, &mut input_rng)?;
        let dropout_seed = Rng::derive(base, 3);
        let mut rng = Rng::new(dropout_seed);
        let trace = forward(cfg, &params, &input, Mode::Train, &mut rng)?;
        if trace.min_relu_margin() > margin {
            sample = Some((params, input, dropout_seed, trace));
            break;
        }
    }
    let (params, input, dropout_seed, trace) = sample.ok_or_else(|| {
        Error::numeric("no differentiable sample found for the gradient check")
    })?;

    let loss = |p: &ParamStore, x: &Volume| -> Result<f64> {
        let mut rng = Rng::new(dropout_seed);
        let trace = forward(cfg, p, x, Mode::Train, &mut rng)?;
        let probs = softmax(&trace.logits);
        Ok(cross_entropy_loss(&[probs], &[label])?.0)
    };

    let probs = softmax(&trace.logits);
    let (_, d_logits) = cross_entropy_loss(&[probs], &[label])?;
    let grads = backward(cfg, &params, &trace, &d_logits[0])?;

    let flat = params.to_flat();
    let mut grad_flat = grads.store.to_flat();

    if let Some(victim) = perturb_path {
        let mut offset = 0;
        let mut found = false;
        for (path, lp) in params.iter() {
            let n = lp.param_count();
            if path == victim {
                for g in &mut grad_flat[offset..offset + n] {
                    *g += 0.5;
                }
                found = true;
            }
            offset += n;
        }
        if !found {
            return Err(Error::config(format!("no layer at path {}", victim)));
        }
    }

    let mut layers = Vec::new();
    let mut max_err = 0.0f64;
    let mut offset = 0;
    for (path, lp) in params.iter() {
        let n = lp.param_count();
        let mut layer_err = 0.0f64;
        for idx in offset..offset + n {
            let mut plus = flat.clone();
            plus[idx] += step;
            let mut minus = flat.clone();
            minus[idx] -= step;
            let mut p_plus = params.clone();
            p_plus.assign_flat(&plus)?;
            let mut p_minus = params.clone();
            p_minus.assign_flat(&minus)?;
            let fd = (loss(&p_plus, &input)? - loss(&p_minus, &input)?) / (2.0 * step);
            let an = grad_flat[idx];
            if fd.abs() < 1e-12 && an.abs() < 1e-12 {
                continue;
            }
            layer_err = layer_err.max(rel_err(an, fd));
        }
        max_err = max_err.max(layer_err);
        layers.push(LayerReport {
            path: path.to_string(),
            max_rel_err: layer_err,
            checked: n,
        });
        offset += n;
    }

    let mut input_err = 0.0f64;
    for idx in 0..input.data().len() {
        let mut plus = input.clone();
        plus.data_mut()[idx] += step;
        let mut minus = input.clone();
        minus.data_mut()[idx] -= step;
        let fd = (loss(&params, &plus)? - loss(&params, &minus)?) / (2.0 * step);
        let an = grads.d_input.data()[idx];
        if fd.abs() < 1e-12 && an.abs() < 1e-12 {
            continue;
        }
        input_err = input_err.max(rel_err(an, fd));
    }
    max_err = max_err.max(input_err);
    layers.push(LayerReport {
        path: "input".to_string(),
        max_rel_err: input_err,
        checked: input.data().len(),
    });

    Ok(GradCheckReport {
        configuration: cfg.configuration_id,
        parameter_sharing: cfg.parameter_sharing,
        layers,
        max_rel_err: max_err,
        tolerance,
        passed: max_err <= tolerance,
    })
}

pub fn run_gradcheck(
    cfg: &NetworkConfig,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    run_gradcheck_perturbed(cfg, seed, step, tolerance, None)
}

/// Check all four reduced configurations under both sharing settings.
pub fn run_all(seed: u64, step: f64, tolerance: f64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for configuration in 1..=4 {
        for ps in [false, true] {
            let cfg = reduced_config(configuration, ps)?;
            reports.push(run_gradcheck(&cfg, seed, step, tolerance)?);
        }
    }
    Ok(reports)
}
