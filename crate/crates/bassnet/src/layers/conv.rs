//! Spatial and spectral convolution layers.
//!
//! A spatial layer (`conv_xy-p,n`) slides `n` filters of extent `p x p`
//! over the two spatial axes; each filter spans the full spectral depth.
//! On an `A x B x C` input the output is `(A-p+1) x (B-p+1) x n`.
//!
//! A spectral layer (`conv_lambda-p,n`) slides `n` filters of spectral
//! extent `p` along the channel axis; each filter spans the full spatial
//! extent. On an `A x B x C` input the output is `n x 1 x (C-p+1)`.

use crate::error::{Error, Result};
use crate::tensor::{Shape3, Volume};

/// Geometry of a spatial convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvXySpec {
    /// Receptive field `p` (square).
    pub field: usize,
    /// Number of output spectral channels `n`.
    pub out_channels: usize,
    pub in_shape: Shape3,
}

impl ConvXySpec {
    pub fn new(field: usize, out_channels: usize, in_shape: Shape3) -> Result<Self> {
        if field == 0 || out_channels == 0 {
            return Err(Error::shape("conv_xy field and out_channels must be >= 1"));
        }
        if field > in_shape.a || field > in_shape.b {
            return Err(Error::shape(format!(
                "conv_xy field {} exceeds spatial extent of input {}",
                field, in_shape
            )));
        }
        Ok(ConvXySpec {
            field,
            out_channels,
            in_shape,
        })
    }

    /// Each filter spans `p x p` spatially and the full spectral depth.
    pub fn filter_shape(&self) -> Shape3 {
        Shape3 {
            a: self.field,
            b: self.field,
            c: self.in_shape.c,
        }
    }

    pub fn out_shape(&self) -> Shape3 {
        Shape3 {
            a: self.in_shape.a - self.field + 1,
            b: self.in_shape.b - self.field + 1,
            c: self.out_channels,
        }
    }
}

/// Geometry of a spectral convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLambdaSpec {
    /// Spectral receptive field `p`.
    pub field: usize,
    /// Number of output spatial channels `n`.
    pub out_channels: usize,
    pub in_shape: Shape3,
}

impl ConvLambdaSpec {
    pub fn new(field: usize, out_channels: usize, in_shape: Shape3) -> Result<Self> {
        if field == 0 || out_channels == 0 {
            return Err(Error::shape(
                "conv_lambda field and out_channels must be >= 1",
            ));
        }
        if field > in_shape.c {
            return Err(Error::shape(format!(
                "conv_lambda field {} exceeds spectral extent of input {}",
                field, in_shape
            )));
        }
        Ok(ConvLambdaSpec {
            field,
            out_channels,
            in_shape,
        })
    }

    /// Each filter spans the full spatial extent and `p` channels.
    pub fn filter_shape(&self) -> Shape3 {
        Shape3 {
            a: self.in_shape.a,
            b: self.in_shape.b,
            c: self.field,
        }
    }

    pub fn out_shape(&self) -> Shape3 {
        Shape3 {
            a: self.out_channels,
            b: 1,
            c: self.in_shape.c - self.field + 1,
        }
    }
}

/// Learnable state of either convolution kind: one filter volume per output
/// channel plus a bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub filters: Vec<Volume>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(filter_shape: Shape3, out_channels: usize) -> ConvParams {
        ConvParams {
            filters: (0..out_channels).map(|_| Volume::zeros(filter_shape)).collect(),
            bias: vec![0.0; out_channels],
        }
    }

    fn check(&self, filter_shape: Shape3, out_channels: usize) -> Result<()> {
        if self.filters.len() != out_channels || self.bias.len() != out_channels {
            return Err(Error::shape(format!(
                "expected {} filters/biases, got {}/{}",
                out_channels,
                self.filters.len(),
                self.bias.len()
            )));
        }
        for (k, f) in self.filters.iter().enumerate() {
            if f.shape() != filter_shape {
                return Err(Error::shape(format!(
                    "filter {} has shape {}, expected {}",
                    k,
                    f.shape(),
                    filter_shape
                )));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.filters.iter().map(|f| f.data().len()).sum::<usize>() + self.bias.len()
    }
}

/// Gradients of a convolution layer; shapes mirror the primals.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub d_input: Volume,
    pub d_filters: Vec<Volume>,
    pub d_bias: Vec<f64>,
}

pub fn conv_xy_forward(input: &Volume, spec: &ConvXySpec, params: &ConvParams) -> Result<Volume> {
    if input.shape() != spec.in_shape {
        return Err(Error::shape(format!(
            "conv_xy input shape {} does not match spec {}",
            input.shape(),
            spec.in_shape
        )));
    }
    params.check(spec.filter_shape(), spec.out_channels)?;

    let out_shape = spec.out_shape();
    let p = spec.field;
    let c_in = spec.in_shape.c;
    let mut out = Volume::zeros(out_shape);
    for x in 0..out_shape.a {
        for y in 0..out_shape.b {
            for (j, filter) in params.filters.iter().enumerate() {
                let mut acc = params.bias[j];
                for dx in 0..p {
                    for dy in 0..p {
                        for ch in 0..c_in {
                            acc += filter.get(dx, dy, ch) * input.get(x + dx, y + dy, ch);
                        }
                    }
                }
                out.set(x, y, j, acc);
            }
        }
    }
    Ok(out)
}

pub fn conv_xy_backward(
    input: &Volume,
    spec: &ConvXySpec,
    params: &ConvParams,
    d_output: &Volume,
) -> Result<ConvGrads> {
    if input.shape() != spec.in_shape {
        return Err(Error::shape(format!(
            "conv_xy input shape {} does not match spec {}",
            input.shape(),
            spec.in_shape
        )));
    }
    params.check(spec.filter_shape(), spec.out_channels)?;
    let out_shape = spec.out_shape();
    if d_output.shape() != out_shape {
        return Err(Error::shape(format!(
            "conv_xy cotangent shape {} does not match output shape {}",
            d_output.shape(),
            out_shape
        )));
    }

    let p = spec.field;
    let c_in = spec.in_shape.c;
    let mut d_input = Volume::zeros(spec.in_shape);
    let mut d_filters: Vec<Volume> = params
        .filters
        .iter()
        .map(|f| Volume::zeros(f.shape()))
        .collect();
    let mut d_bias = vec![0.0; spec.out_channels];

    for x in 0..out_shape.a {
        for y in 0..out_shape.b {
            for j in 0..spec.out_channels {
                let g = d_output.get(x, y, j);
                if g == 0.0 {
                    continue;
                }
                d_bias[j] += g;
                let filter = &params.filters[j];
                let d_filter = &mut d_filters[j];
                for dx in 0..p {
                    for dy in 0..p {
                        for ch in 0..c_in {
                            let xi = input.get(x + dx, y + dy, ch);
                            d_filter.set(dx, dy, ch, d_filter.get(dx, dy, ch) + g * xi);
                            d_input.set(
                                x + dx,
                                y + dy,
                                ch,
                                d_input.get(x + dx, y + dy, ch) + g * filter.get(dx, dy, ch),
                            );
                        }
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        d_input,
        d_filters,
        d_bias,
    })
}

pub fn conv_lambda_forward(
    input: &Volume,
    spec: &ConvLambdaSpec,
    params: &ConvParams,
) -> Result<Volume> {
    if input.shape() != spec.in_shape {
        return Err(Error::shape(format!(
            "conv_lambda input shape {} does not match spec {}",
            input.shape(),
            spec.in_shape
        )));
    }
    params.check(spec.filter_shape(), spec.out_channels)?;

    let out_shape = spec.out_shape();
    let (a, b, p) = (spec.in_shape.a, spec.in_shape.b, spec.field);
    let mut out = Volume::zeros(out_shape);
    for (j, filter) in params.filters.iter().enumerate() {
        for t in 0..out_shape.c {
            let mut acc = params.bias[j];
            for x in 0..a {
                for y in 0..b {
                    for dc in 0..p {
                        acc += filter.get(x, y, dc) * input.get(x, y, t + dc);
                    }
                }
            }
            out.set(j, 0, t, acc);
        }
    }
    Ok(out)
}

pub fn conv_lambda_backward(
    input: &Volume,
    spec: &ConvLambdaSpec,
    params: &ConvParams,
    d_output: &Volume,
) -> Result<ConvGrads> {
    if input.shape() != spec.in_shape {
        return Err(Error::shape(format!(
            "conv_lambda input shape {} does not match spec {}",
            input.shape(),
            spec.in_shape
        )));
    }
    params.check(spec.filter_shape(), spec.out_channels)?;
    let out_shape = spec.out_shape();
    if d_output.shape() != out_shape {
        return Err(Error::shape(format!(
            "conv_lambda cotangent shape {} does not match output shape {}",
            d_output.shape(),
            out_shape
        )));
    }

    let (a, b, p) = (spec.in_shape.a, spec.in_shape.b, spec.field);
    let mut d_input = Volume::zeros(spec.in_shape);
    let mut d_filters: Vec<Volume> = params
        .filters
        .iter()
        .map(|f| Volume::zeros(f.shape()))
        .collect();
    let mut d_bias = vec![0.0; spec.out_channels];

    for j in 0..spec.out_channels {
        let filter = &params.filters[j];
        let d_filter = &mut d_filters[j];
        for t in 0..out_shape.c {
            let g = d_output.get(j, 0, t);
            if g == 0.0 {
                continue;
            }
            d_bias[j] += g;
            for x in 0..a {
                for y in 0..b {
                    for dc in 0..p {
                        let xi = input.get(x, y, t + dc);
                        d_filter.set(x, y, dc, d_filter.get(x, y, dc) + g * xi);
                        d_input.set(
                            x,
                            y,
                            t + dc,
                            d_input.get(x, y, t + dc) + g * filter.get(x, y, dc),
                        );
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        d_input,
        d_filters,
        d_bias,
    })
}
