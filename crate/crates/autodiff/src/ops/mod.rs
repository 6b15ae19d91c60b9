//! Differentiable ops, each registered as a method on [`Graph`](crate::Graph).

pub(crate) mod conv;
pub(crate) mod deform;
pub(crate) mod elementwise;
pub mod loss;
pub(crate) mod shape;
pub(crate) mod upsample;
