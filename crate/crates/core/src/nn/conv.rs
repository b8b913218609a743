//! Stride-1, zero "same"-padded 2-D convolution.
//!
//! Both passes lower each batch item to an im2col matrix of shape
//! `(c_in * k_h * k_w, h * w)` and run a single GEMM against the
//! `(c_out, c_in * k_h * k_w)` weight matrix. A 1x1 kernel skips the
//! lowering: the input plane stack already is the column matrix.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Scalar = f32> {
    weights: Tensor<T>,
    bias: Vec<T>,
}

/// Gradients of a loss with respect to one [`ConvLayer`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T: Scalar = f32> {
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    /// `weights` is `(c_out, c_in, k_h, k_w)` with odd kernel sides; `bias` has `c_out` entries.
    pub fn new(weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let s = weights.shape();
        if s.h.is_multiple_of(2) || s.w.is_multiple_of(2) {
            return Err(Error::shape(format!("kernel {}x{} must have odd sides", s.h, s.w)));
        }
        if bias.len() != s.n {
            return Err(Error::shape(format!("bias has {} entries, expected {}", bias.len(), s.n)));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("non-finite bias".into()));
        }
        Ok(ConvLayer { weights, bias })
    }

    pub fn zeros(c_in: usize, c_out: usize, kernel: (usize, usize)) -> Result<Self> {
        Self::new(Tensor::zeros((c_out, c_in, kernel.0, kernel.1))?, vec![T::zero(); c_out])
    }

    /// He-style initialization corrected for a leaky rectifier of the given
    /// slope: `N(0, 2 / (fan_in * (1 + slope^2)))`, zero bias.
    pub fn he_init(c_in: usize, c_out: usize, kernel: (usize, usize), slope: f64, rng: &mut Rng) -> Result<Self> {
        let fan_in = (c_in * kernel.0 * kernel.1) as f64;
        let std = (2.0 / (fan_in * (1.0 + slope * slope))).sqrt();
        let weights = rng.normal((c_out, c_in, kernel.0, kernel.1), 0.0, std)?;
        Self::new(weights, vec![T::zero(); c_out])
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape().c
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape().n
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape().h, self.weights.shape().w)
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        self.weights.as_mut_slice()
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Weights and bias, mutably, at the same time.
    pub fn params_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.weights.as_mut_slice(), &mut self.bias)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|b| U::from_f64(b.as_f64())).collect(),
        }
    }

    fn col_rows(&self) -> usize {
        let (kh, kw) = self.kernel();
        self.c_in() * kh * kw
    }
}

impl<T: Scalar> ConvGrads<T> {
    pub fn zeros_like(layer: &ConvLayer<T>) -> Self {
        ConvGrads {
            weights: Tensor::from_raw(layer.weights.shape(), vec![T::zero(); layer.weights.len()]),
            bias: vec![T::zero(); layer.bias.len()],
        }
    }
}

/// Lowers one `(c, h, w)` sample to columns. Out-of-image taps are zero.
fn im2col<T: Scalar>(src: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, col: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * w;
    for ci in 0..c {
        let chan = &src[ci * plane..(ci + 1) * plane];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = ((ci * kh + dy) * kw + dx) * plane;
                let dst = &mut col[row..row + plane];
                // valid output columns x satisfy 0 <= x + dx - pw < w
                let x0 = pw.saturating_sub(dx);
                let x1 = (w + pw).saturating_sub(dx).min(w);
                for y in 0..h {
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    let sy = y + dy;
                    if sy < ph || sy - ph >= h || x0 >= x1 {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let sy = sy - ph;
                    out_row[..x0].fill(T::zero());
                    out_row[x1..].fill(T::zero());
                    let sx0 = x0 + dx - pw;
                    out_row[x0..x1].copy_from_slice(&chan[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, dst: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * w;
    dst.fill(T::zero());
    for ci in 0..c {
        let chan = &mut dst[ci * plane..(ci + 1) * plane];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = ((ci * kh + dy) * kw + dx) * plane;
                let src = &col[row..row + plane];
                let x0 = pw.saturating_sub(dx);
                let x1 = (w + pw).saturating_sub(dx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < ph || sy - ph >= h {
                        continue;
                    }
                    let sy = sy - ph;
                    let sx0 = x0 + dx - pw;
                    let target = &mut chan[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (t, &g) in target.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *t = *t + g;
                    }
                }
            }
        }
    }
}

/// `out[n,o,y,x] = bias[o] + sum_{i,dy,dx} w[o,i,dy,dx] * in[n,i,y+dy-kh/2,x+dx-kw/2]`.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.c != layer.c_in() {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            layer.c_in(),
            s.c
        )));
    }
    let (kh, kw) = layer.kernel();
    let c_out = layer.c_out();
    let plane = s.plane();
    let k = layer.col_rows();
    let out_shape = s.with_c(c_out);
    let mut out = vec![T::zero(); out_shape.len()];
    let pointwise = kh == 1 && kw == 1;
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };

    for n in 0..s.n {
        let src = input.sample(n);
        let cols: &[T] = if pointwise {
            src
        } else {
            im2col(src, s.c, s.h, s.w, kh, kw, &mut col);
            &col
        };
        let dst = &mut out[n * c_out * plane..(n + 1) * c_out * plane];
        for (o, row) in dst.chunks_exact_mut(plane).enumerate() {
            row.fill(layer.bias[o]);
        }
        T::gemm(
            c_out,
            k,
            plane,
            T::one(),
            layer.weights.as_slice(),
            k as isize,
            1,
            cols,
            plane as isize,
            1,
            T::one(),
            dst,
            plane as isize,
            1,
        );
    }
    Ok(Tensor::from_raw(out_shape, out))
}

/// Exact gradients of [`conv2d_forward`] given the forward input and the
/// gradient flowing into its output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let s = input.shape();
    if s.c != layer.c_in() {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            layer.c_in(),
            s.c
        )));
    }
    let expected = s.with_c(layer.c_out());
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "output gradient shape {} does not match forward output {}",
            grad_out.shape(),
            expected
        )));
    }
    let (kh, kw) = layer.kernel();
    let c_out = layer.c_out();
    let plane = s.plane();
    let k = layer.col_rows();
    let pointwise = kh == 1 && kw == 1;

    let mut grads = ConvGrads::zeros_like(layer);
    let mut bias_acc = vec![0.0f64; c_out];
    let mut grad_in = vec![T::zero(); s.len()];
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };
    let mut grad_col = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };

    for n in 0..s.n {
        let gout = grad_out.sample(n);
        for (o, row) in gout.chunks_exact(plane).enumerate() {
            bias_acc[o] += row.iter().map(|v| v.as_f64()).sum::<f64>();
        }

        let src = input.sample(n);
        let cols: &[T] = if pointwise {
            src
        } else {
            im2col(src, s.c, s.h, s.w, kh, kw, &mut col);
            &col
        };
        // dW += dOut * cols^T
        T::gemm(
            c_out,
            plane,
            k,
            T::one(),
            gout,
            plane as isize,
            1,
            cols,
            1,
            plane as isize,
            T::one(),
            grads.weights.as_mut_slice(),
            k as isize,
            1,
        );

        // dCols = W^T * dOut
        let gin = &mut grad_in[n * s.sample_len()..(n + 1) * s.sample_len()];
        let target: &mut [T] = if pointwise { gin } else { &mut grad_col };
        T::gemm(
            k,
            c_out,
            plane,
            T::one(),
            layer.weights.as_slice(),
            1,
            k as isize,
            gout,
            plane as isize,
            1,
            T::zero(),
            target,
            plane as isize,
            1,
        );
        if !pointwise {
            let gin = &mut grad_in[n * s.sample_len()..(n + 1) * s.sample_len()];
            col2im(&grad_col, s.c, s.h, s.w, kh, kw, gin);
        }
    }
    grads.bias = bias_acc.into_iter().map(T::from_f64).collect();
    Ok((Tensor::from_raw(s, grad_in), grads))
}
