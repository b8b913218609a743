//! First-order update rules: Adam (default) and SGD with momentum.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{Network, NetworkGrads};
use crate::tensor::{read_u32, read_u64, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hyper {
    Adam { lr: f64, beta1: f64, beta2: f64, epsilon: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl Hyper {
    pub fn adam(lr: f64) -> Self {
        Hyper::Adam { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Hyper::Sgd { lr, momentum }
    }

    fn slots_per_param(&self) -> usize {
        match self {
            Hyper::Adam { .. } => 2,
            Hyper::Sgd { .. } => 1,
        }
    }
}

/// A mutable parameter together with its gradient.
pub struct Param<'a> {
    pub name: String,
    pub shape: Shape,
    pub values: &'a mut [f32],
    pub grad: &'a [f32],
}

/// Optimizer hyperparameters, step counter and per-parameter moment
/// tensors (`m`, `v` interleaved per parameter for Adam; velocity for SGD).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub hyper: Hyper,
    pub max_grad_norm: Option<f64>,
    t: u64,
    moments: Vec<Tensor<f32>>,
}

impl OptimState {
    pub fn new(hyper: Hyper) -> Self {
        OptimState { hyper, max_grad_norm: None, t: 0, moments: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &[Tensor<f32>] {
        &self.moments
    }

    pub fn step(&mut self, params: &mut [Param<'_>]) -> Result<()> {
        match self.hyper {
            Hyper::Adam { .. } => adam_step(params, self),
            Hyper::Sgd { .. } => sgd_momentum_step(params, self),
        }
    }

    /// Applies one update to every conv weight and bias of `net`.
    pub fn step_network(&mut self, net: &mut Network<f32>, grads: &NetworkGrads<f32>) -> Result<()> {
        if grads.len() != net.convs().len() {
            return Err(Error::Shape(format!(
                "{} gradient sets for {} conv layers",
                grads.len(),
                net.convs().len()
            )));
        }
        let mut params = Vec::with_capacity(2 * grads.len());
        for (i, (conv, g)) in net.convs_mut().iter_mut().zip(grads).enumerate() {
            let wshape = conv.weights().shape();
            let bshape = Shape::new(1, conv.c_out(), 1, 1);
            if g.weights.shape() != wshape || g.bias.len() != bshape.c {
                return Err(Error::Shape(format!("gradient shapes for conv {i} do not match parameters")));
            }
            let (w, b) = conv.params_mut();
            params.push(Param { name: format!("conv{i}.weight"), shape: wshape, values: w, grad: g.weights.as_slice() });
            params.push(Param { name: format!("conv{i}.bias"), shape: bshape, values: b, grad: &g.bias });
        }
        self.step(&mut params)
    }

    fn prepare(&mut self, params: &[Param<'_>]) -> Result<f32> {
        for p in params {
            if p.values.len() != p.shape.len() || p.grad.len() != p.shape.len() {
                return Err(Error::Shape(format!("parameter {} does not match its shape {}", p.name, p.shape)));
            }
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {} at index {i}", p.name)));
            }
        }
        let k = self.hyper.slots_per_param();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .flat_map(|p| std::iter::repeat_n(p.shape, k))
                .map(Tensor::zeros)
                .collect::<Result<_>>()?;
        }
        if self.moments.len() != k * params.len()
            || self.moments.iter().enumerate().any(|(i, m)| m.shape() != params[i / k].shape)
        {
            return Err(Error::State("optimizer moments do not mirror the parameter set".into()));
        }
        let scale = match self.max_grad_norm {
            Some(max) => {
                let norm = params
                    .iter()
                    .flat_map(|p| p.grad.iter())
                    .map(|&g| (g as f64) * (g as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    (max / norm) as f32
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        Ok(scale)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        match self.hyper {
            Hyper::Adam { lr, beta1, beta2, epsilon } => {
                w.write_all(&0u32.to_le_bytes())?;
                for v in [lr, beta1, beta2, epsilon] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Hyper::Sgd { lr, momentum } => {
                w.write_all(&1u32.to_le_bytes())?;
                for v in [lr, momentum] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.write_all(&self.max_grad_norm.unwrap_or(0.0).to_le_bytes())?;
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&(self.moments.len() as u32).to_le_bytes())?;
        for m in &self.moments {
            m.write_dump(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let f = |r: &mut R| read_u64(r).map(f64::from_bits);
        let hyper = match read_u32(r)? {
            0 => Hyper::Adam { lr: f(r)?, beta1: f(r)?, beta2: f(r)?, epsilon: f(r)? },
            1 => Hyper::Sgd { lr: f(r)?, momentum: f(r)? },
            other => return Err(Error::Format(format!("unknown optimizer tag {other}"))),
        };
        let clip = f(r)?;
        let t = read_u64(r)?;
        let count = read_u32(r)? as usize;
        let moments = (0..count).map(|_| Tensor::read_dump(r)).collect::<Result<_>>()?;
        Ok(OptimState { hyper, max_grad_norm: (clip > 0.0).then_some(clip), t, moments })
    }
}

/// Adam with bias correction. All gradients are validated before any
/// parameter changes.
pub fn adam_step(params: &mut [Param<'_>], state: &mut OptimState) -> Result<()> {
    let Hyper::Adam { lr, beta1, beta2, epsilon } = state.hyper else {
        return Err(Error::State("adam_step called on SGD state".into()));
    };
    let scale = state.prepare(params)?;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (beta1 as f32, beta2 as f32);
    for (p, mv) in params.iter_mut().zip(state.moments.chunks_exact_mut(2)) {
        let (m, v) = mv.split_at_mut(1);
        let (m, v) = (m[0].as_mut_slice(), v[0].as_mut_slice());
        for i in 0..p.values.len() {
            let g = p.grad[i] * scale;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] as f64 / c1;
            let v_hat = v[i] as f64 / c2;
            p.values[i] -= (lr * m_hat / (v_hat.sqrt() + epsilon)) as f32;
        }
    }
    Ok(())
}

/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_momentum_step(params: &mut [Param<'_>], state: &mut OptimState) -> Result<()> {
    let Hyper::Sgd { lr, momentum } = state.hyper else {
        return Err(Error::State("sgd_momentum_step called on Adam state".into()));
    };
    let scale = state.prepare(params)?;
    let (lr, mu) = (lr as f32, momentum as f32);
    for (p, vel) in params.iter_mut().zip(state.moments.iter_mut()) {
        let vel = vel.as_mut_slice();
        for ((v, x), g) in vel.iter_mut().zip(p.values.iter_mut()).zip(p.grad) {
            *v = mu * *v + g * scale;
            *x -= lr * *v;
        }
    }
    Ok(())
}
