//! CPU-only building blocks for self-ensemble semi-supervised training:
//! dense tensors, a reverse-mode tape, the fixed small CNN, the joint
//! cross-entropy + consistency loss, Adam, image augmentation, and the
//! evaluation metrics.
//!
//! The crate is `no_std` + `alloc`; everything that touches the filesystem
//! (datasets, checkpoints, the CLI) lives in the companion `selfens` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adam;
pub mod augment;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Scalar trait for everything numeric in this crate. Training runs in
/// `f32`; gradient checking switches the same code paths to `f64`.
pub trait Float: num_traits::Float + num_traits::FromPrimitive + core::fmt::Debug + 'static {}
impl Float for f32 {}
impl Float for f64 {}
