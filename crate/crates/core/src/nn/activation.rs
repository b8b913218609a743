use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn check_slope(slope: f64) -> Result<()> {
    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::param(format!("leaky slope {slope} must lie in (0, 1)")));
    }
    Ok(())
}

pub(crate) fn check_drop_prob(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::param(format!("drop probability {p} must lie in [0, 1)")));
    }
    Ok(())
}

pub fn leaky_relu_forward<T: Scalar>(input: &Tensor<T>, slope: f64) -> Result<Tensor<T>> {
    check_slope(slope)?;
    let a = T::from_f64(slope);
    Ok(input.map(|v| if v > T::zero() { v } else { a * v }))
}

/// `input` is the forward pre-activation.
pub fn leaky_relu_backward<T: Scalar>(input: &Tensor<T>, slope: f64, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_slope(slope)?;
    let a = T::from_f64(slope);
    Tensor::map2(input, grad_out, |x, g| if x > T::zero() { g } else { a * g })
}

/// Inverted dropout. Returns the output and the multiplicative mask, whose
/// entries are exactly `0` or `1 / (1 - drop_prob)`; in eval mode the mask is
/// all ones and the output equals the input.
pub fn dropout_forward<T: Scalar>(
    input: &Tensor<T>,
    drop_prob: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_drop_prob(drop_prob)?;
    if mode == Mode::Eval || drop_prob == 0.0 {
        return Ok((input.clone(), input.map(|_| T::one())));
    }
    let keep = T::from_f64(1.0 / (1.0 - drop_prob));
    let data = (0..input.len()).map(|_| if rng.uniform() < drop_prob { T::zero() } else { keep }).collect();
    let mask = Tensor::from_vec(input.shape(), data)?;
    let out = input.mul(&mask)?;
    Ok((out, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.mul(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_definition() {
        let x = Tensor::<f32>::from_vec((1, 1, 1, 3), vec![2.0, -3.0, 0.0]).unwrap();
        let y = leaky_relu_forward(&x, 0.1).unwrap();
        assert_eq!(y.as_slice()[0], 2.0);
        assert!((y.as_slice()[1] - (-0.3)).abs() < 1e-7);
        assert_eq!(y.as_slice()[2], 0.0);
        assert!(matches!(leaky_relu_forward(&x, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(leaky_relu_forward(&x, 1.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_noop_cases() {
        let mut rng = Rng::new(1);
        let x: Tensor<f32> = rng.normal((1, 2, 4, 4), 0.0, 1.0).unwrap();
        let (y, m) = dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
        let (y, _) = dropout_forward(&x, 0.7, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(matches!(dropout_forward(&x, 1.0, Mode::Train, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_mask_values_and_mean() {
        let x = Tensor::<f32>::new((1, 1, 1, 100_000), 1.0).unwrap();
        let (y, m) = dropout_forward(&x, 0.5, Mode::Train, &mut Rng::new(77)).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = y.sum() / y.len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    }

    #[test]
    fn dropout_backward_uses_mask() {
        let mut rng = Rng::new(5);
        let x: Tensor<f64> = rng.normal((1, 1, 3, 3), 0.0, 1.0).unwrap();
        let (_, m) = dropout_forward(&x, 0.3, Mode::Train, &mut rng).unwrap();
        let g = Tensor::<f64>::new((1, 1, 3, 3), 1.0).unwrap();
        assert_eq!(dropout_backward(&m, &g).unwrap(), m);
    }
}
