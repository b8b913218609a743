//! Layers with analytic forward/backward passes and the interpolation network.

mod activation;
mod conv;
mod network;
mod spec;

pub use activation::{dropout_backward, dropout_forward, leaky_relu_backward, leaky_relu_forward, Mode};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
pub use network::{Backward, ForwardTrace, Network, NetworkGrads};
pub use spec::{
    build_interpolator, default_interpolator, LayerSpec, NetworkSpec, DEFAULT_DROP_PROB, DEFAULT_EMBED_DIM,
    DEFAULT_SLOPE, FRAME_PAIR_CHANNELS,
};
