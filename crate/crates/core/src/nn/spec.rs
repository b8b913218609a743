use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::activation::{check_drop_prob, check_slope};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv { c_in: usize, c_out: usize, kernel: (usize, usize) },
    LeakyRelu { slope: f64 },
    Dropout { prob: f64 },
}

impl LayerSpec {
    pub fn conv(c_in: usize, c_out: usize, k: usize) -> Self {
        LayerSpec::Conv { c_in, c_out, kernel: (k, k) }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }
}

/// Ordered layer list plus the number of input channels it consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    input_channels: usize,
    layers: Vec<LayerSpec>,
}

/// Channel schedule of the interpolator as multiples of `embed_dim`, with
/// kernel sizes. The last conv maps to RGB.
const INTERPOLATOR_BODY: [(usize, usize); 5] = [(1, 7), (2, 5), (2, 5), (4, 3), (4, 3)];

pub const DEFAULT_EMBED_DIM: usize = 32;
pub const DEFAULT_SLOPE: f64 = 0.1;
pub const DEFAULT_DROP_PROB: f64 = 0.1;
pub const FRAME_PAIR_CHANNELS: usize = 6;

/// Builds the seven-conv interpolator:
///
/// | layer | kernel | channels          | followed by         |
/// |-------|--------|-------------------|---------------------|
/// | 1     | 1x1    | in -> e           | LeakyReLU           |
/// | 2     | 7x7    | e -> e            | LeakyReLU + Dropout |
/// | 3     | 5x5    | e -> 2e           | LeakyReLU + Dropout |
/// | 4     | 5x5    | 2e -> 2e          | LeakyReLU + Dropout |
/// | 5     | 3x3    | 2e -> 4e          | LeakyReLU + Dropout |
/// | 6     | 3x3    | 4e -> 4e          | LeakyReLU + Dropout |
/// | 7     | 1x1    | 4e -> 3           | (linear output)     |
///
/// The first layer lifts every pixel into an `e`-dimensional embedding
/// before any spatial mixing happens.
pub fn build_interpolator(input_channels: usize, embed_dim: usize, slope: f64, drop_prob: f64) -> Result<NetworkSpec> {
    if embed_dim < 3 {
        return Err(Error::param(format!("embed_dim must be >= 3, got {embed_dim}")));
    }
    if input_channels == 0 {
        return Err(Error::param("input_channels must be >= 1"));
    }
    let mut layers = vec![LayerSpec::conv(input_channels, embed_dim, 1), LayerSpec::LeakyRelu { slope }];
    let mut c = embed_dim;
    for (mult, k) in INTERPOLATOR_BODY {
        let c_out = embed_dim * mult;
        layers.push(LayerSpec::conv(c, c_out, k));
        layers.push(LayerSpec::LeakyRelu { slope });
        layers.push(LayerSpec::Dropout { prob: drop_prob });
        c = c_out;
    }
    layers.push(LayerSpec::conv(c, 3, 1));
    let spec = NetworkSpec::new(input_channels, layers)?;
    spec.check_interpolator()?;
    Ok(spec)
}

pub fn default_interpolator() -> NetworkSpec {
    build_interpolator(FRAME_PAIR_CHANNELS, DEFAULT_EMBED_DIM, DEFAULT_SLOPE, DEFAULT_DROP_PROB)
        .expect("default schedule is valid")
}

const MANIFEST_HEADER: &str = "frameweave-network 1";

impl NetworkSpec {
    /// Validates layer parameters and that channel counts chain.
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_channels == 0 {
            return Err(Error::param("input_channels must be >= 1"));
        }
        let mut c = input_channels;
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { c_in, c_out, kernel } => {
                    if c_in != c {
                        return Err(Error::shape(format!(
                            "layer {i}: conv expects {c_in} channels but receives {c}"
                        )));
                    }
                    if c_out == 0 || kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
                        return Err(Error::param(format!(
                            "layer {i}: conv needs c_out >= 1 and odd kernel, got {c_out} / {kernel:?}"
                        )));
                    }
                    c = c_out;
                }
                LayerSpec::LeakyRelu { slope } => check_slope(slope)?,
                LayerSpec::Dropout { prob } => check_drop_prob(prob)?,
            }
        }
        Ok(NetworkSpec { input_channels, layers })
    }

    /// The identity network: no layers.
    pub fn empty(channels: usize) -> Result<Self> {
        Self::new(channels, Vec::new())
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Conv { c_out, .. } => Some(*c_out),
                _ => None,
            })
            .unwrap_or(self.input_channels)
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_conv()).count()
    }

    /// An interpolator must end in a conv producing RGB.
    pub fn check_interpolator(&self) -> Result<()> {
        match self.layers.iter().rev().find(|l| l.is_conv()) {
            Some(LayerSpec::Conv { c_out: 3, .. }) => Ok(()),
            _ => Err(Error::shape("network must end in a conv with 3 output channels")),
        }
    }

    /// Same architecture with every dropout probability replaced.
    pub fn with_drop_prob(&self, prob: f64) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Dropout { .. } => LayerSpec::Dropout { prob },
                other => other.clone(),
            })
            .collect();
        Self::new(self.input_channels, layers)
    }

    /// Slope of the first leaky layer, or 0 for purely linear networks.
    pub fn leaky_slope(&self) -> f64 {
        self.layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::LeakyRelu { slope } => Some(*slope),
                _ => None,
            })
            .unwrap_or(0.0)
    }

    /// Text manifest, one layer per line.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MANIFEST_HEADER}").unwrap();
        writeln!(out, "input_channels {}", self.input_channels).unwrap();
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { c_in, c_out, kernel } => {
                    writeln!(out, "conv {c_in} {c_out} {} {}", kernel.0, kernel.1).unwrap()
                }
                LayerSpec::LeakyRelu { slope } => writeln!(out, "leaky_relu {slope}").unwrap(),
                LayerSpec::Dropout { prob } => writeln!(out, "dropout {prob}").unwrap(),
            }
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format(format!("manifest line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
            _ => return Err(Error::Format("missing network manifest header".into())),
        }
        let (i, first) = lines.next().ok_or_else(|| Error::Format("manifest has no input_channels".into()))?;
        let input_channels = match first.split_whitespace().collect::<Vec<_>>()[..] {
            ["input_channels", c] => c.parse().map_err(|_| bad(i, "bad channel count"))?,
            _ => return Err(bad(i, "expected input_channels")),
        };
        let mut layers = Vec::new();
        for (i, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(i, "bad integer"));
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad(i, "bad number"));
            let layer = match parts[..] {
                ["conv", a, b, kh, kw] => LayerSpec::Conv { c_in: num(a)?, c_out: num(b)?, kernel: (num(kh)?, num(kw)?) },
                ["leaky_relu", s] => LayerSpec::LeakyRelu { slope: float(s)? },
                ["dropout", p] => LayerSpec::Dropout { prob: float(p)? },
                _ => return Err(bad(i, "unrecognized layer")),
            };
            layers.push(layer);
        }
        NetworkSpec::new(input_channels, layers).map_err(|e| Error::Format(e.to_string()))
    }
}
