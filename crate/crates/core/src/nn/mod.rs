//! Minimal differentiable-computation substrate.
//!
//! Layers implement [`Layer`]: a forward pass that returns a saved context in
//! train mode, and a backward pass that consumes it. There is no global tape;
//! composite modules chain their children's caches explicitly.

pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod layers;
mod params;
mod scalar;
pub mod spec;
mod tensor;

pub use attention::RelPosMhsa;
pub use conv::DepthwiseConv1d;
pub use layers::{
    sigmoid, softmax_rows, Activation, Ctx, Dropout, Glu, Layer, LayerNorm, Linear, Mode,
};
pub use params::{Gradients, ParamId, ParameterStore, Params};
pub use scalar::Scalar;
pub use spec::{AnyLayer, LayerSpec};
pub use tensor::{gemm_into, Tensor};
