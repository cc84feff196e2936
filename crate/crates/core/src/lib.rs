//! Deterministic building blocks for training convolutional networks without
//! normalization layers.
//!
//! The crate is `no_std` + `alloc` when the default `std` feature is turned
//! off. All transcendental functions go through [`libm`] so results do not
//! depend on the platform's math library. Everything that touches files,
//! clocks or the network lives in the companion `msr-cli` crate.
//!
//! Layout:
//!
//! * [`tensor`] and [`rng`]: the dense `f64` tensor and the seeded generator.
//! * [`layers`]: forward/backward kernels (conv with `W = e^g * V`, relu,
//!   linear, global average pooling, softmax cross-entropy, multiplicative
//!   noise, batch normalization, residual blocks).
//! * [`msr`]: channel-wise zero-mean projection and initialization, the
//!   zero-mean gradient transform, unity magnitude anchoring and diagnostics.
//! * [`optim`]: SGD with momentum, the step schedule and the update pipelines.
//! * [`data`]: CIFAR-10 record parsing, normalization, augmentation, batching
//!   and a procedural dataset generator.
//! * [`network`] and [`arch`]: the sequential model container and the named
//!   architectures.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod arch;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod msr;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{Layer, Mode, Network, ParamRole};
pub use rng::{Prng, RandomSource};
pub use tensor::Tensor;
