use crate::error::{Error, Result};
use crate::nn::activation::{dropout_backward, dropout_forward, leaky_relu_backward, leaky_relu_forward, Mode};
use crate::nn::conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
use crate::nn::spec::{LayerSpec, NetworkSpec};
use crate::tensor::{Rng, Scalar, Shape, Tensor};

/// A [`NetworkSpec`] together with one [`ConvLayer`] per conv entry, in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    spec: NetworkSpec,
    convs: Vec<ConvLayer<T>>,
}

/// Per-conv parameter gradients, in layer order.
pub type NetworkGrads<T = f32> = Vec<ConvGrads<T>>;

#[derive(Clone, Debug)]
enum TraceEntry<T: Scalar> {
    Conv { input: Tensor<T> },
    Leaky { input: Tensor<T> },
    Dropout { mask: Tensor<T> },
}

/// Everything `backward` needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Scalar = f32> {
    entries: Vec<TraceEntry<T>>,
    input_shape: Shape,
    output_shape: Shape,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn output_shape(&self) -> Shape {
        self.output_shape
    }

    /// Dropout masks recorded during the pass, in layer order.
    pub fn dropout_masks(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().filter_map(|e| match e {
            TraceEntry::Dropout { mask } => Some(mask),
            _ => None,
        })
    }

    /// Sign of every LeakyReLU pre-activation, concatenated in layer order.
    pub fn leaky_signs(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for e in &self.entries {
            if let TraceEntry::Leaky { input } = e {
                out.extend(input.as_slice().iter().map(|&v| v > T::zero()));
            }
        }
        out
    }
}

/// Output, trace and captured layer outputs of a forward pass.
pub(crate) type Captured<T, Tr> = (Tensor<T>, Tr, Vec<Tensor<T>>);

pub struct Backward<T: Scalar = f32> {
    pub params: NetworkGrads<T>,
    pub input: Tensor<T>,
}

impl<T: Scalar> Network<T> {
    /// Fresh parameters: He initialization per conv (each conv draws from
    /// its own split of `rng`), zero bias.
    pub fn init(spec: NetworkSpec, rng: &Rng) -> Result<Self> {
        let slope = spec.leaky_slope();
        let convs = spec
            .layers()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match *l {
                LayerSpec::Conv { c_in, c_out, kernel } => {
                    Some(ConvLayer::he_init(c_in, c_out, kernel, slope, &mut rng.split(i as u64)))
                }
                _ => None,
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { spec, convs })
    }

    pub fn from_parts(spec: NetworkSpec, convs: Vec<ConvLayer<T>>) -> Result<Self> {
        let expected: Vec<_> = spec
            .layers()
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Conv { c_in, c_out, kernel } => Some((c_in, c_out, kernel)),
                _ => None,
            })
            .collect();
        if expected.len() != convs.len() {
            return Err(Error::shape(format!(
                "spec has {} conv layers, got {} parameter sets",
                expected.len(),
                convs.len()
            )));
        }
        for (i, (e, c)) in expected.iter().zip(&convs).enumerate() {
            if *e != (c.c_in(), c.c_out(), c.kernel()) {
                return Err(Error::shape(format!("conv {i}: parameters do not match spec {e:?}")));
            }
        }
        Ok(Network { spec, convs })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn convs(&self) -> &[ConvLayer<T>] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.convs
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvLayer::param_count).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network { spec: self.spec.clone(), convs: self.convs.iter().map(ConvLayer::cast).collect() }
    }

    /// Same parameters with a different spec of identical shape (e.g. dropout changed).
    pub fn with_spec(&self, spec: NetworkSpec) -> Result<Self> {
        Self::from_parts(spec, self.convs.clone())
    }

    /// Runs every layer. Dropout layer `i` draws its mask from `rng.split(i)`,
    /// so a given `rng` always reproduces the same masks.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode, rng: &Rng) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        let (out, trace, _) = self.run(input, mode, rng, true, &[])?;
        Ok((out, trace.expect("trace requested")))
    }

    /// Eval-mode forward without retaining a trace.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input, Mode::Eval, &Rng::new(0), false, &[])?.0)
    }

    /// Forward pass that also returns copies of the outputs of the layers at `capture`.
    pub(crate) fn forward_capture(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &Rng,
        capture: &[usize],
    ) -> Result<Captured<T, ForwardTrace<T>>> {
        let (out, trace, taps) = self.run(input, mode, rng, true, capture)?;
        Ok((out, trace.expect("trace requested"), taps))
    }

    fn run(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &Rng,
        keep_trace: bool,
        capture: &[usize],
    ) -> Result<Captured<T, Option<ForwardTrace<T>>>> {
        if input.shape().c != self.spec.input_channels() {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.spec.input_channels(),
                input.shape().c
            )));
        }
        let mut entries = Vec::with_capacity(if keep_trace { self.spec.layers().len() } else { 0 });
        let mut taps = Vec::with_capacity(capture.len());
        let mut x = input.clone();
        let mut convs = self.convs.iter();
        for (i, layer) in self.spec.layers().iter().enumerate() {
            let (y, entry) = match *layer {
                LayerSpec::Conv { .. } => {
                    let conv = convs.next().expect("conv count checked at construction");
                    let y = conv2d_forward(&x, conv)?;
                    (y, TraceEntry::Conv { input: x })
                }
                LayerSpec::LeakyRelu { slope } => (leaky_relu_forward(&x, slope)?, TraceEntry::Leaky { input: x }),
                LayerSpec::Dropout { prob } => {
                    let (y, mask) = dropout_forward(&x, prob, mode, &mut rng.split(i as u64))?;
                    (y, TraceEntry::Dropout { mask })
                }
            };
            if keep_trace {
                entries.push(entry);
            }
            if capture.contains(&i) {
                taps.push(y.clone());
            }
            x = y;
        }
        let trace = keep_trace.then(|| ForwardTrace { entries, input_shape: input.shape(), output_shape: x.shape() });
        Ok((x, trace, taps))
    }

    /// Chain rule through every layer in reverse. Returns parameter gradients
    /// in conv order and the gradient with respect to the network input.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_output: &Tensor<T>) -> Result<Backward<T>> {
        self.backward_injected(trace, Some(grad_output), &[])
    }

    /// Like [`Network::backward`], additionally adding `injections[k].1` to the
    /// gradient of layer `injections[k].0`'s output.
    pub(crate) fn backward_injected(
        &self,
        trace: &ForwardTrace<T>,
        grad_output: Option<&Tensor<T>>,
        injections: &[(usize, Tensor<T>)],
    ) -> Result<Backward<T>> {
        let layers = self.spec.layers();
        if trace.entries.len() != layers.len() {
            return Err(Error::State(format!(
                "trace has {} entries but network has {} layers",
                trace.entries.len(),
                layers.len()
            )));
        }
        let mut grad = match grad_output {
            Some(g) if g.shape() != trace.output_shape => {
                return Err(Error::shape(format!(
                    "output gradient {} does not match forward output {}",
                    g.shape(),
                    trace.output_shape
                )))
            }
            Some(g) => g.clone(),
            None => Tensor::zeros(trace.output_shape)?,
        };
        let mut params: Vec<Option<ConvGrads<T>>> = vec![None; self.convs.len()];
        let mut conv_idx = self.convs.len();

        for (i, (layer, entry)) in layers.iter().zip(&trace.entries).enumerate().rev() {
            for (_, extra) in injections.iter().filter(|(at, _)| *at == i) {
                grad = grad.add(extra)?;
            }
            grad = match (layer, entry) {
                (LayerSpec::Conv { .. }, TraceEntry::Conv { input }) => {
                    conv_idx -= 1;
                    let (gi, gp) = conv2d_backward(input, &self.convs[conv_idx], &grad)?;
                    params[conv_idx] = Some(gp);
                    gi
                }
                (LayerSpec::LeakyRelu { slope }, TraceEntry::Leaky { input }) => leaky_relu_backward(input, *slope, &grad)?,
                (LayerSpec::Dropout { .. }, TraceEntry::Dropout { mask }) => dropout_backward(mask, &grad)?,
                _ => return Err(Error::State(format!("trace entry {i} does not match layer kind"))),
            };
        }
        debug_assert_eq!(grad.shape(), trace.input_shape);
        Ok(Backward { params: params.into_iter().map(|p| p.expect("every conv visited")).collect(), input: grad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::build_interpolator;

    fn small_net(drop: f64) -> Network<f64> {
        let spec = build_interpolator(6, 3, 0.1, drop).unwrap();
        Network::init(spec, &Rng::new(10)).unwrap()
    }

    #[test]
    fn preserves_spatial_shape() {
        let net = Network::<f32>::init(crate::nn::default_interpolator(), &Rng::new(1)).unwrap();
        let x: Tensor<f32> = Rng::new(2).uniform_tensor((1, 6, 16, 16), 0.0, 1.0).unwrap();
        let (y, trace) = net.forward(&x, Mode::Train, &Rng::new(3)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 16, 16));
        assert_eq!(trace.len(), net.spec().layers().len());
    }

    #[test]
    fn eval_and_seeded_train_are_reproducible() {
        let net = small_net(0.3);
        let x: Tensor<f64> = Rng::new(2).uniform_tensor((2, 6, 8, 8), 0.0, 1.0).unwrap();
        let a = net.predict(&x).unwrap();
        let b = net.forward(&x, Mode::Eval, &Rng::new(99)).unwrap().0;
        assert_eq!(a, b);
        let r = Rng::new(5);
        let (t1, _) = net.forward(&x, Mode::Train, &r).unwrap();
        let (t2, _) = net.forward(&x, Mode::Train, &r).unwrap();
        assert_eq!(t1, t2);
        let (t3, _) = net.forward(&x, Mode::Train, &Rng::new(6)).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn zero_output_gradient() {
        let net = small_net(0.0);
        let x: Tensor<f64> = Rng::new(2).uniform_tensor((1, 6, 5, 5), 0.0, 1.0).unwrap();
        let (y, trace) = net.forward(&x, Mode::Train, &Rng::new(1)).unwrap();
        let back = net.backward(&trace, &Tensor::zeros(y.shape()).unwrap()).unwrap();
        assert_eq!(back.params.len(), 7);
        for g in &back.params {
            assert!(g.weights.as_slice().iter().all(|&v| v == 0.0));
            assert!(g.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_layer_matches_conv_backward() {
        let spec = NetworkSpec::new(2, vec![LayerSpec::conv(2, 3, 3)]).unwrap();
        let net = Network::<f64>::init(spec, &Rng::new(4)).unwrap();
        let mut rng = Rng::new(8);
        let x: Tensor<f64> = rng.normal((1, 2, 6, 5), 0.0, 1.0).unwrap();
        let g: Tensor<f64> = rng.normal((1, 3, 6, 5), 0.0, 1.0).unwrap();
        let (_, trace) = net.forward(&x, Mode::Train, &Rng::new(0)).unwrap();
        let back = net.backward(&trace, &g).unwrap();
        let (gi, gp) = conv2d_backward(&x, &net.convs()[0], &g).unwrap();
        assert_eq!(back.input, gi);
        assert_eq!(back.params[0], gp);
    }

    #[test]
    fn mismatched_trace_is_a_state_error() {
        let a = small_net(0.0);
        let other = Network::<f64>::init(NetworkSpec::new(6, vec![LayerSpec::conv(6, 3, 1)]).unwrap(), &Rng::new(1)).unwrap();
        let x: Tensor<f64> = Rng::new(2).uniform_tensor((1, 6, 4, 4), 0.0, 1.0).unwrap();
        let (y, trace) = other.forward(&x, Mode::Eval, &Rng::new(0)).unwrap();
        assert!(matches!(a.backward(&trace, &y), Err(Error::State(_))));
    }

    #[test]
    fn rejects_wrong_input_channels() {
        let net = small_net(0.0);
        let x = Tensor::<f64>::zeros((1, 3, 4, 4)).unwrap();
        assert!(matches!(net.predict(&x), Err(Error::Shape(_))));
    }
}
