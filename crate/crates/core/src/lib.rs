//! Two-stage Wasserstein autoencoder core.
//!
//! Everything here is pure computation over `alloc` collections: a small
//! reverse-mode autodiff tape, dense networks with Adam, the stage-I and
//! stage-II objectives, the interleaved training loop, synthetic datasets,
//! evaluation metrics and latent-space tooling. File formats, the CLI and
//! wall-clock timing live in the `swae` crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod data;
pub mod error;
pub mod latent;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod swae;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{OpKind, Tape, Var};
pub use swae::{Architecture, NetId, PriorFamily, PriorKind, ReconSource, SwaeModel};
pub use tensor::Tensor;
pub use train::{Checkpoint, TrainConfig, Trainer};
