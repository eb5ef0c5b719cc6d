//! Dense tensors, differentiable layers, reverse-mode gradients and RMSprop.

mod conv;
mod gemm;
mod graph;
mod ops;
mod optim;
mod tensor;

pub use conv::{conv2d, conv3d};
pub use graph::{Gradients, Graph, Var};
pub use ops::{
    activation, batch_norm, bilinear_upsample2x, channel_max, dense, resize_bilinear, Activation,
    BnMode,
};
pub use optim::{rmsprop_step, Grads, OptimConfig, Param, ParamSet};
pub use tensor::Tensor;
