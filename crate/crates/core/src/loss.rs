//! Training losses and evaluation metrics.
//!
//! Pixels live on a `[0, 1]` scale internally. [`paper_scale_mse`] reports
//! the same error in 0–255 units, which is the scale MSE thresholds such as
//! "below 7" refer to.

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Mode, Network};
use crate::tensor::{Rng, Scalar, Tensor};

/// `255^2`: converts `[0,1]`-scale MSE to 0–255 units.
pub const PAPER_SCALE: f64 = 65025.0;

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// A scalar loss and its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct LossValue<T: Scalar = f32> {
    pub value: f64,
    pub grad: Tensor<T>,
}

fn check_same<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {} and target {} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

fn sum_sq_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum()
}

fn scaled_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, k: f64) -> Tensor<T> {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| T::from_f64(k * (x.as_f64() - y.as_f64())))
        .collect();
    Tensor::from_raw(a.shape(), data)
}

/// Mean squared pixel error, `(1/n) sum (pred_i - target_i)^2`, with
/// gradient `(2/n)(pred_i - target_i)`.
pub fn mse_pixel<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossValue<T>> {
    check_same(pred, target)?;
    let n = pred.len() as f64;
    let value = sum_sq_diff(pred, target) / n;
    Ok(LossValue { value, grad: scaled_diff(pred, target, 2.0 / n) })
}

/// Layers whose outputs are compared by [`mse_encoding`]: every LeakyReLU
/// output, plus the final layer if it is not already one of them.
fn encoding_taps(encoder: &Network<impl Scalar>) -> Vec<usize> {
    let layers = encoder.spec().layers();
    let mut taps: Vec<usize> = layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::LeakyRelu { .. }))
        .map(|(i, _)| i)
        .collect();
    if let Some(last) = layers.len().checked_sub(1) {
        if taps.last() != Some(&last) {
            taps.push(last);
        }
    }
    taps
}

/// Encoder-space MSE: the squared difference between the encoder's
/// activations for `pred` and for `target`, averaged uniformly over every
/// activation element of every tapped layer. The gradient is propagated
/// back through the (frozen, eval-mode) encoder to `pred`.
///
/// An encoder with no layers is the identity, reducing this to [`mse_pixel`].
pub fn mse_encoding<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, encoder: &Network<T>) -> Result<LossValue<T>> {
    check_same(pred, target)?;
    if encoder.spec().input_channels() != pred.shape().c {
        return Err(Error::Shape(format!(
            "encoder expects {} channels, prediction has {}",
            encoder.spec().input_channels(),
            pred.shape().c
        )));
    }
    let taps = encoding_taps(encoder);
    if taps.is_empty() {
        return mse_pixel(pred, target);
    }
    let rng = Rng::new(0);
    let (_, trace, pred_acts) = encoder.forward_capture(pred, Mode::Eval, &rng, &taps)?;
    let (_, _, target_acts) = encoder.forward_capture(target, Mode::Eval, &rng, &taps)?;

    let count: usize = pred_acts.iter().map(Tensor::len).sum();
    let n = count as f64;
    let value = pred_acts.iter().zip(&target_acts).map(|(p, t)| sum_sq_diff(p, t)).sum::<f64>() / n;
    let injections: Vec<(usize, Tensor<T>)> = taps
        .iter()
        .zip(pred_acts.iter().zip(&target_acts))
        .map(|(&i, (p, t))| (i, scaled_diff(p, t, 2.0 / n)))
        .collect();
    let back = encoder.backward_injected(&trace, None, &injections)?;
    Ok(LossValue { value, grad: back.input })
}

/// MSE in 0–255 pixel units (`mse_pixel * 255^2`) for `[0,1]`-scale inputs.
pub fn paper_scale_mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_same(pred, target)?;
    Ok(to_paper_scale(sum_sq_diff(pred, target) / pred.len() as f64))
}

pub fn to_paper_scale(mse_internal: f64) -> f64 {
    mse_internal * PAPER_SCALE
}

/// `10 log10(1 / mse)` for a `[0,1]` peak, capped at 99 dB when `mse < 1e-10`.
pub fn psnr_from_mse(mse_internal: f64) -> f64 {
    if mse_internal < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse_internal).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_same(pred, target)?;
    Ok(psnr_from_mse(sum_sq_diff(pred, target) / pred.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn pair(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = Rng::new(seed);
        (
            rng.uniform_tensor((1, 3, 4, 4), 0.0, 1.0).unwrap(),
            rng.uniform_tensor((1, 3, 4, 4), 0.0, 1.0).unwrap(),
        )
    }

    #[test]
    fn mse_identity_and_constant() {
        let (a, _) = pair(1);
        let l = mse_pixel(&a, &a).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.as_slice().iter().all(|&g| g == 0.0));
        let p = Tensor::<f32>::new((1, 3, 2, 2), 2.0).unwrap();
        let t = Tensor::<f32>::zeros((1, 3, 2, 2)).unwrap();
        assert_eq!(mse_pixel(&p, &t).unwrap().value, 4.0);
        let bad = Tensor::<f32>::zeros((1, 3, 2, 3)).unwrap();
        assert!(matches!(mse_pixel(&p, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let (a, b) = pair(2);
        let mut acc = 0.0;
        for i in 0..a.len() {
            let d = a.as_slice()[i] - b.as_slice()[i];
            acc += d * d;
        }
        let oracle = acc / a.len() as f64;
        assert!((mse_pixel(&a, &b).unwrap().value - oracle).abs() < 1e-6);
    }

    #[test]
    fn paper_scale_and_psnr_values() {
        let a = Tensor::<f64>::zeros((1, 3, 4, 4)).unwrap();
        assert_eq!(paper_scale_mse(&a, &a).unwrap(), 0.0);
        let b = Tensor::<f64>::new((1, 3, 4, 4), 1.0 / 255.0).unwrap();
        assert!((paper_scale_mse(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((to_paper_scale(9.0734e-5) - 5.9).abs() <= 0.01);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((psnr_from_mse(1e-4) - 40.0).abs() < 1e-12);
        assert!((to_paper_scale(1e-4) - 6.5025).abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_scalar_recomputation() {
        let (a, b) = pair(3);
        let mut acc = 0.0;
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            acc += (x - y).powi(2);
        }
        let oracle = 10.0 * (a.len() as f64 / acc).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn encoding_with_empty_encoder_is_pixel_mse() {
        let (a, b) = pair(4);
        let enc = Network::<f64>::init(NetworkSpec::empty(3).unwrap(), &Rng::new(0)).unwrap();
        let e = mse_encoding(&a, &b, &enc).unwrap();
        let p = mse_pixel(&a, &b).unwrap();
        assert_eq!(e.value, p.value);
        assert_eq!(e.grad, p.grad);
    }

    #[test]
    fn encoding_zero_for_equal_inputs_and_channel_check() {
        let (a, _) = pair(5);
        let spec = NetworkSpec::new(3, vec![LayerSpec::conv(3, 4, 3), LayerSpec::LeakyRelu { slope: 0.2 }, LayerSpec::conv(4, 2, 1)]).unwrap();
        let enc = Network::<f64>::init(spec, &Rng::new(1)).unwrap();
        assert_eq!(mse_encoding(&a, &a, &enc).unwrap().value, 0.0);
        let wrong = Network::<f64>::init(NetworkSpec::empty(4).unwrap(), &Rng::new(0)).unwrap();
        assert!(matches!(mse_encoding(&a, &a, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn encoding_single_conv_matches_composition() {
        let (a, b) = pair(6);
        let spec = NetworkSpec::new(3, vec![LayerSpec::conv(3, 4, 3)]).unwrap();
        let enc = Network::<f64>::init(spec, &Rng::new(2)).unwrap();
        let oracle = {
            let ea = crate::nn::conv2d_forward(&a, &enc.convs()[0]).unwrap();
            let eb = crate::nn::conv2d_forward(&b, &enc.convs()[0]).unwrap();
            let mut acc = 0.0;
            for (x, y) in ea.as_slice().iter().zip(eb.as_slice()) {
                acc += (x - y).powi(2);
            }
            acc / ea.len() as f64
        };
        assert!((mse_encoding(&a, &b, &enc).unwrap().value - oracle).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_value_antisymmetric_grad(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a: Tensor<f32> = rng.uniform_tensor((1, 3, 3, 5), 0.0, 1.0).unwrap();
            let b: Tensor<f32> = rng.uniform_tensor((1, 3, 3, 5), 0.0, 1.0).unwrap();
            let ab = mse_pixel(&a, &b).unwrap();
            let ba = mse_pixel(&b, &a).unwrap();
            prop_assert_eq!(ab.value, ba.value);
            prop_assert_eq!(ab.grad.clone(), ba.grad.scale(-1.0));
            prop_assert!(ab.value >= 0.0);
            prop_assert_eq!(paper_scale_mse(&a, &b).unwrap(), 65025.0 * ab.value);
        }

        #[test]
        fn zero_iff_equal(seed in any::<u64>(), idx in 0usize..45, bump in 1e-3f32..0.5) {
            let mut rng = Rng::new(seed);
            let a: Tensor<f32> = rng.uniform_tensor((1, 3, 3, 5), 0.0, 1.0).unwrap();
            prop_assert_eq!(mse_pixel(&a, &a).unwrap().value, 0.0);
            let mut data = a.as_slice().to_vec();
            data[idx] += bump;
            let b = Tensor::from_vec(a.shape(), data).unwrap();
            prop_assert!(mse_pixel(&a, &b).unwrap().value > 0.0);
        }
    }
}
