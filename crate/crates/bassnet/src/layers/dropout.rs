//! Inverted dropout: surviving elements are scaled by `1/(1-rate)` at train
//! time so that evaluation is a pure identity.

use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Returns the dropped-and-scaled output together with the applied mask.
/// The mask holds the multiplier per element (0 or `1/(1-rate)`), so the
/// backward pass is an element-wise product with it.
pub fn dropout_forward(
    input: &[f64],
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "dropout rate must be in [0, 1), got {}",
            rate
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.to_vec(), vec![1.0; input.len()]));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = input
        .iter()
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
        .collect();
    let out = input.iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_zero_is_identity_in_both_modes() {
        let input = vec![1.0, -2.0, 3.0];
        let mut rng = Rng::new(1);
        let (train_out, _) = dropout_forward(&input, 0.0, Mode::Train, &mut rng).unwrap();
        let (eval_out, _) = dropout_forward(&input, 0.0, Mode::Eval, &mut rng).unwrap();
        assert_eq!(train_out, input);
        assert_eq!(eval_out, input);
    }

    #[test]
    fn eval_mode_is_identity_at_half_rate() {
        let input = vec![0.5, 1.5, -0.5];
        let mut rng = Rng::new(2);
        let (out, mask) = dropout_forward(&input, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(out, input);
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn rate_one_is_rejected() {
        let mut rng = Rng::new(3);
        assert!(dropout_forward(&[1.0], 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout_forward(&[1.0], 1.5, Mode::Train, &mut rng).is_err());
        assert!(dropout_forward(&[1.0], -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn inverted_scaling_is_unbiased() {
        // 10^5 ones at rate 0.5: output mean stays 1.0 +- 0.02
        let input = vec![1.0; 100_000];
        let mut rng = Rng::new(4);
        let (out, _) = dropout_forward(&input, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {}", mean);
    }

    #[test]
    fn masks_reproducible_under_fixed_seed() {
        let input = vec![1.0; 64];
        let (_, m1) = dropout_forward(&input, 0.5, Mode::Train, &mut Rng::new(9)).unwrap();
        let (_, m2) = dropout_forward(&input, 0.5, Mode::Train, &mut Rng::new(9)).unwrap();
        assert_eq!(m1, m2);
    }
}
