//! Finite-difference verification of every analytic gradient.
//!
//! All checks run the production layer code instantiated in `f64` and
//! compare each gradient component against a central difference
//! `(L(x + h) - L(x - h)) / 2h`. Relative error is
//! `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.

use std::fmt;

use crate::error::Result;
use crate::loss::{mse_encoding, mse_pixel};
use crate::nn::{
    build_interpolator, conv2d_backward, conv2d_forward, dropout_backward, dropout_forward, leaky_relu_backward,
    leaky_relu_forward, ConvGrads, ConvLayer, LayerSpec, Mode, Network, NetworkSpec,
};
use crate::tensor::{Rng, Tensor};

/// Denominator floor for the relative error of near-zero components.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub step: f64,
    /// Random instances per layer kind.
    pub trials: usize,
    pub layer_tolerance: f64,
    pub network_tolerance: f64,
    /// Conv/embedding width of the end-to-end network check.
    pub network_embed_dim: usize,
    pub network_size: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 17,
            step: 1e-4,
            trials: 3,
            layer_tolerance: 1e-5,
            network_tolerance: 1e-4,
            network_embed_dim: 4,
            network_size: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub components: usize,
    /// Components not compared because the stencil crossed a kink.
    pub skipped: usize,
}

impl CheckResult {
    /// Also fails when more than a tenth of the components were skipped.
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance && self.components > 0 && self.skipped * 10 <= self.components + self.skipped
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} max rel err {:>10.3e}  (tol {:.0e}, {} components, {} skipped)  {}",
            self.name,
            self.max_rel_err,
            self.tolerance,
            self.components,
            self.skipped,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Running max over components; `eval(i, delta)` returns the objective with
/// component `i` shifted by `delta`.
struct Tally {
    max: f64,
    count: usize,
    skipped: usize,
}

impl Tally {
    fn new() -> Self {
        Tally { max: 0.0, count: 0, skipped: 0 }
    }

    /// Like `compare`, but `eval` also reports whether the piecewise-linear
    /// activation pattern matched the unperturbed one; components whose
    /// stencil straddles a kink are skipped and counted.
    fn compare_piecewise(
        &mut self,
        analytic: &[f64],
        h: f64,
        mut eval: impl FnMut(usize, f64) -> Result<(f64, bool)>,
    ) -> Result<()> {
        for (i, &a) in analytic.iter().enumerate() {
            let (up, up_ok) = eval(i, h)?;
            let (down, down_ok) = eval(i, -h)?;
            if !(up_ok && down_ok) {
                self.skipped += 1;
                continue;
            }
            self.max = self.max.max(rel_err(a, (up - down) / (2.0 * h)));
            self.count += 1;
        }
        Ok(())
    }

    fn compare(&mut self, analytic: &[f64], h: f64, mut eval: impl FnMut(usize, f64) -> Result<f64>) -> Result<()> {
        for (i, &a) in analytic.iter().enumerate() {
            let numeric = (eval(i, h)? - eval(i, -h)?) / (2.0 * h);
            self.max = self.max.max(rel_err(a, numeric));
            self.count += 1;
        }
        Ok(())
    }

    fn result(self, name: &str, tolerance: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            max_rel_err: self.max,
            tolerance,
            components: self.count,
            skipped: self.skipped,
        }
    }
}

fn shifted(t: &Tensor<f64>, i: usize, d: f64) -> Tensor<f64> {
    let mut v = t.as_slice().to_vec();
    v[i] += d;
    Tensor::from_raw(t.shape(), v)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn random_dims(rng: &mut Rng, lo: usize) -> (usize, usize) {
    (lo + rng.below((9 - lo) as u64) as usize, lo + rng.below((9 - lo) as u64) as usize)
}

/// Signature of a conv backward implementation under test.
pub type ConvBackwardFn<'a> = &'a dyn Fn(&Tensor<f64>, &ConvLayer<f64>, &Tensor<f64>) -> Result<(Tensor<f64>, ConvGrads<f64>)>;

/// Checks `backward` against finite differences of `L = <r, conv(x)>` for a
/// random projection `r`.
pub fn check_conv(cfg: &GradcheckConfig, kernel: usize, backward: ConvBackwardFn<'_>) -> Result<CheckResult> {
    let mut tally = Tally::new();
    let h = cfg.step;
    for trial in 0..cfg.trials {
        let mut rng = Rng::with_stream(cfg.seed, 100 + kernel as u64).split(trial as u64);
        let (hh, ww) = random_dims(&mut rng, 1);
        let n = 1 + rng.below(2) as usize;
        let c_in = 1 + rng.below(4) as usize;
        let c_out = 1 + rng.below(4) as usize;
        let x: Tensor<f64> = rng.normal((n, c_in, hh, ww), 0.0, 1.0)?;
        let mut layer = ConvLayer::he_init(c_in, c_out, (kernel, kernel), 0.1, &mut rng)?;
        for b in layer.bias_mut() {
            *b = rng.standard_normal();
        }
        let r: Tensor<f64> = rng.normal((n, c_out, hh, ww), 0.0, 1.0)?;
        let objective = |x: &Tensor<f64>, layer: &ConvLayer<f64>| conv2d_forward(x, layer).map(|y| dot(&y, &r));
        let (gx, gp) = backward(&x, &layer, &r)?;

        tally.compare(gx.as_slice(), h, |i, d| objective(&shifted(&x, i, d), &layer))?;
        tally.compare(gp.weights.as_slice(), h, |i, d| {
            let mut l = layer.clone();
            l.weights_mut()[i] += d;
            objective(&x, &l)
        })?;
        tally.compare(&gp.bias, h, |i, d| {
            let mut l = layer.clone();
            l.bias_mut()[i] += d;
            objective(&x, &l)
        })?;
    }
    Ok(tally.result(&format!("conv {kernel}x{kernel}"), cfg.layer_tolerance))
}

pub fn check_leaky_relu(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut tally = Tally::new();
    for trial in 0..cfg.trials {
        let mut rng = Rng::with_stream(cfg.seed, 200).split(trial as u64);
        let (hh, ww) = random_dims(&mut rng, 1);
        let slope = 0.05 + 0.4 * rng.uniform();
        // keep samples away from the kink so +-h never crosses zero
        let x = rng
            .normal::<f64>((1, 3, hh, ww), 0.0, 1.0)?
            .map(|v| if v.abs() < 1e-2 { v.signum() * 1e-2 + v } else { v });
        let r: Tensor<f64> = rng.normal((1, 3, hh, ww), 0.0, 1.0)?;
        let gx = leaky_relu_backward(&x, slope, &r)?;
        tally.compare(gx.as_slice(), cfg.step, |i, d| Ok(dot(&leaky_relu_forward(&shifted(&x, i, d), slope)?, &r)))?;
    }
    Ok(tally.result("leaky relu", cfg.layer_tolerance))
}

pub fn check_dropout(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut tally = Tally::new();
    for trial in 0..cfg.trials {
        let mut rng = Rng::with_stream(cfg.seed, 300).split(trial as u64);
        let (hh, ww) = random_dims(&mut rng, 1);
        let x: Tensor<f64> = rng.normal((2, 3, hh, ww), 0.0, 1.0)?;
        let mask_rng = rng.split(7);
        let (_, mask) = dropout_forward(&x, 0.3, Mode::Train, &mut mask_rng.clone())?;
        let r: Tensor<f64> = rng.normal(x.shape(), 0.0, 1.0)?;
        let gx = dropout_backward(&mask, &r)?;
        // replaying the same rng reproduces the mask, so the forward is x * mask
        tally.compare(gx.as_slice(), cfg.step, |i, d| {
            let (y, _) = dropout_forward(&shifted(&x, i, d), 0.3, Mode::Train, &mut mask_rng.clone())?;
            Ok(dot(&y, &r))
        })?;
    }
    Ok(tally.result("dropout (fixed mask)", cfg.layer_tolerance))
}

pub fn check_mse_pixel(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut tally = Tally::new();
    for trial in 0..cfg.trials {
        let mut rng = Rng::with_stream(cfg.seed, 400).split(trial as u64);
        let (hh, ww) = random_dims(&mut rng, 1);
        let p: Tensor<f64> = rng.uniform_tensor((1, 3, hh, ww), 0.0, 1.0)?;
        let t: Tensor<f64> = rng.uniform_tensor((1, 3, hh, ww), 0.0, 1.0)?;
        let g = mse_pixel(&p, &t)?.grad;
        tally.compare(g.as_slice(), cfg.step, |i, d| Ok(mse_pixel(&shifted(&p, i, d), &t)?.value))?;
    }
    Ok(tally.result("mse pixel", cfg.layer_tolerance))
}

/// A small fixed encoder: 3x3 conv, LeakyReLU, 1x1 conv.
pub fn sample_encoder(rng: &Rng) -> Result<Network<f64>> {
    let spec = NetworkSpec::new(
        3,
        vec![LayerSpec::conv(3, 4, 3), LayerSpec::LeakyRelu { slope: 0.1 }, LayerSpec::conv(4, 2, 1)],
    )?;
    let mut net = Network::init(spec, rng)?;
    let mut brng = rng.split(99);
    for conv in net.convs_mut() {
        for b in conv.bias_mut() {
            *b = 0.1 * brng.standard_normal();
        }
    }
    Ok(net)
}

pub fn check_mse_encoding(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut tally = Tally::new();
    for trial in 0..cfg.trials {
        let mut rng = Rng::with_stream(cfg.seed, 500).split(trial as u64);
        let (hh, ww) = random_dims(&mut rng, 2);
        let encoder = sample_encoder(&rng.split(1))?;
        let p: Tensor<f64> = rng.uniform_tensor((1, 3, hh, ww), 0.0, 1.0)?;
        let t: Tensor<f64> = rng.uniform_tensor((1, 3, hh, ww), 0.0, 1.0)?;
        let g = mse_encoding(&p, &t, &encoder)?.grad;
        tally.compare(g.as_slice(), cfg.step, |i, d| Ok(mse_encoding(&shifted(&p, i, d), &t, &encoder)?.value))?;
    }
    Ok(tally.result("mse encoding", cfg.layer_tolerance))
}

/// End-to-end: every parameter and input gradient of a seven-conv
/// interpolator under the pixel loss, dropout disabled. Components whose
/// perturbation flips any LeakyReLU pre-activation sign are skipped.
pub fn check_network(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let rng = Rng::with_stream(cfg.seed, 600);
    let spec = build_interpolator(6, cfg.network_embed_dim, 0.1, 0.0)?;
    let mut net = Network::<f64>::init(spec, &rng)?;
    let mut brng = rng.split(1000);
    for conv in net.convs_mut() {
        for b in conv.bias_mut() {
            *b = 0.05 * brng.standard_normal();
        }
    }
    let s = cfg.network_size;
    let mut drng = rng.split(2000);
    let x: Tensor<f64> = drng.uniform_tensor((1, 6, s, s), 0.0, 1.0)?;
    let target: Tensor<f64> = drng.uniform_tensor((1, 3, s, s), 0.0, 1.0)?;
    let (y, trace) = net.forward(&x, Mode::Train, &rng)?;
    let signs = trace.leaky_signs();
    let back = net.backward(&trace, &mse_pixel(&y, &target)?.grad)?;
    let loss = |net: &Network<f64>, x: &Tensor<f64>| -> Result<(f64, bool)> {
        let (y, t) = net.forward(x, Mode::Train, &rng)?;
        Ok((mse_pixel(&y, &target)?.value, t.leaky_signs() == signs))
    };

    let mut tally = Tally::new();
    tally.compare_piecewise(back.input.as_slice(), cfg.step, |i, d| loss(&net, &shifted(&x, i, d)))?;
    for (k, g) in back.params.iter().enumerate() {
        tally.compare_piecewise(g.weights.as_slice(), cfg.step, |i, d| {
            let mut n = net.clone();
            n.convs_mut()[k].weights_mut()[i] += d;
            loss(&n, &x)
        })?;
        tally.compare_piecewise(&g.bias, cfg.step, |i, d| {
            let mut n = net.clone();
            n.convs_mut()[k].bias_mut()[i] += d;
            loss(&n, &x)
        })?;
    }
    Ok(tally.result(&format!("network (7 conv, {s}x{s})"), cfg.network_tolerance))
}

/// With every weight and bias zero the output is zero, so the pixel-loss
/// gradient of the final bias is `-2/n * sum(target)` per channel: nonzero
/// whenever the target is.
pub fn check_zero_weight_bias_path(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let spec = build_interpolator(6, cfg.network_embed_dim, 0.1, 0.0)?;
    let mut net = Network::<f64>::init(spec, &Rng::new(cfg.seed))?;
    for conv in net.convs_mut() {
        let (w, b) = conv.params_mut();
        w.fill(0.0);
        b.fill(0.0);
    }
    let s = cfg.network_size;
    let mut rng = Rng::with_stream(cfg.seed, 700);
    let x: Tensor<f64> = rng.uniform_tensor((1, 6, s, s), 0.0, 1.0)?;
    let target: Tensor<f64> = rng.uniform_tensor((1, 3, s, s), 0.1, 1.0)?;
    let (y, trace) = net.forward(&x, Mode::Eval, &rng)?;
    let back = net.backward(&trace, &mse_pixel(&y, &target)?.grad)?;
    let last = back.params.last().expect("network has convs");
    let n = target.len() as f64;
    let mut worst: f64 = 0.0;
    let mut nonzero = true;
    for (c, &g) in last.bias.iter().enumerate() {
        let expected = -2.0 / n * target.as_slice()[c * s * s..(c + 1) * s * s].iter().sum::<f64>();
        nonzero &= g != 0.0;
        worst = worst.max(rel_err(g, expected));
    }
    Ok(CheckResult {
        name: "zero-weight bias path".into(),
        max_rel_err: if nonzero { worst } else { f64::INFINITY },
        tolerance: cfg.layer_tolerance,
        components: last.bias.len(),
        skipped: 0,
    })
}

/// Runs every check with the production backward passes.
pub fn run_all(cfg: &GradcheckConfig) -> Result<Vec<CheckResult>> {
    let conv_backward: ConvBackwardFn<'_> = &conv2d_backward;
    let mut out = Vec::new();
    for k in [1, 3, 5, 7] {
        out.push(check_conv(cfg, k, conv_backward)?);
    }
    out.push(check_leaky_relu(cfg)?);
    out.push(check_dropout(cfg)?);
    out.push(check_mse_pixel(cfg)?);
    out.push(check_mse_encoding(cfg)?);
    out.push(check_zero_weight_bias_path(cfg)?);
    out.push(check_network(cfg)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbed_conv_backward_fails() {
        let cfg = GradcheckConfig { trials: 1, ..Default::default() };
        let broken = |x: &Tensor<f64>, l: &ConvLayer<f64>, g: &Tensor<f64>| {
            let (gi, mut gp) = conv2d_backward(x, l, g)?;
            gp.bias[0] *= 1.01;
            Ok((gi, gp))
        };
        let r = check_conv(&cfg, 3, &broken).unwrap();
        assert!(!r.passed(), "{r}");
        let ok = check_conv(&cfg, 3, &conv2d_backward).unwrap();
        assert!(ok.passed(), "{ok}");
    }

    #[test]
    fn zero_weight_network_bias_gradient() {
        let r = check_zero_weight_bias_path(&GradcheckConfig::default()).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-15);
        assert!(rel_err(1e-12, 0.0) < 1e-5);
    }
}
