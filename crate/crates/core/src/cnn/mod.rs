//! A small from-scratch convolutional network with per-step instrumentation.

pub mod data;
mod network;
pub mod ops;
pub mod spec;

pub use data::{Batch, Dataset, PixelNorm, Split, SyntheticSpec};
pub use network::{
    accuracy, ConvLayer, DenseLayer, Gradients, Layer, LayerGradient, Network, ParamId, ParamKind,
    Reduction, Sgd, StepRecord, INIT_SCALE,
};
pub use ops::relu;
pub use spec::{LayerSpec, NetworkSpec, ResolvedLayer, Shape};
