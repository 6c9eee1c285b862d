//! Fully-connected layer over flat vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcSpec {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl FcSpec {
    pub fn new(in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::shape("fc dimensions must be >= 1"));
        }
        Ok(FcSpec { in_dim, out_dim })
    }
}

/// Weight matrix is `out_dim x in_dim`, row-major; bias has length `out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FcParams {
    pub fn zeros(spec: FcSpec) -> FcParams {
        FcParams {
            weights: vec![0.0; spec.in_dim * spec.out_dim],
            bias: vec![0.0; spec.out_dim],
        }
    }

    fn check(&self, spec: FcSpec) -> Result<()> {
        if self.weights.len() != spec.in_dim * spec.out_dim || self.bias.len() != spec.out_dim {
            return Err(Error::shape(format!(
                "fc params have {} weights / {} biases, expected {} / {}",
                self.weights.len(),
                self.bias.len(),
                spec.in_dim * spec.out_dim,
                spec.out_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub d_input: Vec<f64>,
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

/// `out = W * input + bias`.
pub fn fc_forward(input: &[f64], spec: &FcSpec, params: &FcParams) -> Result<Vec<f64>> {
    if input.len() != spec.in_dim {
        return Err(Error::shape(format!(
            "fc input length {} does not match in_dim {}",
            input.len(),
            spec.in_dim
        )));
    }
    params.check(*spec)?;
    let mut out = params.bias.clone();
    for o in 0..spec.out_dim {
        let row = &params.weights[o * spec.in_dim..(o + 1) * spec.in_dim];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        out[o] += acc;
    }
    Ok(out)
}

pub fn fc_backward(
    input: &[f64],
    spec: &FcSpec,
    params: &FcParams,
    d_output: &[f64],
) -> Result<FcGrads> {
    if input.len() != spec.in_dim {
        return Err(Error::shape(format!(
            "fc input length {} does not match in_dim {}",
            input.len(),
            spec.in_dim
        )));
    }
    params.check(*spec)?;
    if d_output.len() != spec.out_dim {
        return Err(Error::shape(format!(
            "fc cotangent length {} does not match out_dim {}",
            d_output.len(),
            spec.out_dim
        )));
    }

    let mut d_input = vec![0.0; spec.in_dim];
    let mut d_weights = vec![0.0; spec.in_dim * spec.out_dim];
    for o in 0..spec.out_dim {
        let g = d_output[o];
        if g == 0.0 {
            continue;
        }
        let row = &params.weights[o * spec.in_dim..(o + 1) * spec.in_dim];
        let d_row = &mut d_weights[o * spec.in_dim..(o + 1) * spec.in_dim];
        for i in 0..spec.in_dim {
            d_row[i] += g * input[i];
            d_input[i] += g * row[i];
        }
    }

    Ok(FcGrads {
        d_input,
        d_weights,
        d_bias: d_output.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::testutil::rel_err;

    fn random_fc(spec: FcSpec, rng: &mut Rng) -> FcParams {
        FcParams {
            weights: (0..spec.in_dim * spec.out_dim)
                .map(|_| rng.uniform(1.0))
                .collect(),
            bias: (0..spec.out_dim).map(|_| rng.uniform(0.5)).collect(),
        }
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let spec = FcSpec::new(4, 4).unwrap();
        let mut params = FcParams::zeros(spec);
        for i in 0..4 {
            params.weights[i * 4 + i] = 1.0;
        }
        let input = vec![1.0, -2.0, 3.5, 0.0];
        assert_eq!(fc_forward(&input, &spec, &params).unwrap(), input);
    }

    #[test]
    fn output_length_600_to_100() {
        let spec = FcSpec::new(600, 100).unwrap();
        let params = FcParams::zeros(spec);
        let out = fc_forward(&vec![0.5; 600], &spec, &params).unwrap();
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn matches_naive_dot_product() {
        let mut rng = Rng::new(17);
        let spec = FcSpec::new(7, 5).unwrap();
        let params = random_fc(spec, &mut rng);
        let input: Vec<f64> = (0..7).map(|_| rng.uniform(2.0)).collect();
        let out = fc_forward(&input, &spec, &params).unwrap();
        for o in 0..5 {
            let mut want = params.bias[o];
            for i in 0..7 {
                want += params.weights[o * 7 + i] * input[i];
            }
            assert!(rel_err(out[o], want) < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_error() {
        let spec = FcSpec::new(4, 2).unwrap();
        let params = FcParams::zeros(spec);
        assert!(fc_forward(&[1.0; 3], &spec, &params).is_err());
    }

    #[test]
    fn backward_zero_cotangent() {
        let mut rng = Rng::new(23);
        let spec = FcSpec::new(6, 3).unwrap();
        let params = random_fc(spec, &mut rng);
        let input: Vec<f64> = (0..6).map(|_| rng.uniform(1.0)).collect();
        let grads = fc_backward(&input, &spec, &params, &[0.0; 3]).unwrap();
        assert!(grads.d_input.iter().all(|&x| x == 0.0));
        assert!(grads.d_weights.iter().all(|&x| x == 0.0));
        assert!(grads.d_bias.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weight_gradient_is_outer_product() {
        let mut rng = Rng::new(29);
        let spec = FcSpec::new(5, 4).unwrap();
        let params = random_fc(spec, &mut rng);
        let input: Vec<f64> = (0..5).map(|_| rng.uniform(1.0)).collect();
        let d_out: Vec<f64> = (0..4).map(|_| rng.uniform(1.0)).collect();
        let grads = fc_backward(&input, &spec, &params, &d_out).unwrap();
        for o in 0..4 {
            for i in 0..5 {
                assert!(rel_err(grads.d_weights[o * 5 + i], d_out[o] * input[i]) < 1e-12);
            }
        }
        assert_eq!(grads.d_bias, d_out);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(37);
        let spec = FcSpec::new(5, 3).unwrap();
        let params = random_fc(spec, &mut rng);
        let input: Vec<f64> = (0..5).map(|_| rng.uniform(1.0)).collect();
        let cot: Vec<f64> = (0..3).map(|_| rng.uniform(1.0)).collect();
        let h = 1e-5;

        let objective = |input: &[f64], params: &FcParams| -> f64 {
            fc_forward(input, &spec, params)
                .unwrap()
                .iter()
                .zip(&cot)
                .map(|(o, v)| o * v)
                .sum()
        };

        let grads = fc_backward(&input, &spec, &params, &cot).unwrap();

        for i in 0..5 {
            let mut plus = input.clone();
            plus[i] += h;
            let mut minus = input.clone();
            minus[i] -= h;
            let fd = (objective(&plus, &params) - objective(&minus, &params)) / (2.0 * h);
            assert!(rel_err(grads.d_input[i], fd) < 1e-6);
        }
        for w in 0..params.weights.len() {
            let mut plus = params.clone();
            plus.weights[w] += h;
            let mut minus = params.clone();
            minus.weights[w] -= h;
            let fd = (objective(&input, &plus) - objective(&input, &minus)) / (2.0 * h);
            assert!(rel_err(grads.d_weights[w], fd) < 1e-6);
        }
    }
}
