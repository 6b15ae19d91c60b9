//! Reverse-mode automatic differentiation over dense `f32`/`f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles and
//! replays them in exact reverse recording order in [`Graph::backward`].
//! The op set is the one a multi-branch dense classifier needs: convolution,
//! deformable convolution, bilinear upsampling, channel concatenation,
//! spatial cropping, ReLU and per-pixel softmax cross-entropy. Parameters live
//! in a [`ParamStore`] and are updated by [`sgd_step`] under a poly
//! learning-rate schedule.

mod error;
mod gemm;
mod graph;
mod ops;
mod scalar;

pub mod dump;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use gradcheck::finite_diff_check;
pub use graph::{Graph, Var};
pub use ops::loss::{softmax_channels, LabelMap};
pub use ops::upsample::resize_planes;
pub use optim::{poly_lr, sgd_step, OptimizerState, SgdConfig};
pub use params::{deformable_conv2d, pointwise_fc, Bound, ConvParams, DeformConvParams, ParamId, ParamStore};
pub use rng::StreamRng;
pub use scalar::{DType, Real};
pub use tensor::{tensor_new, InitSpec, Tensor};
