//! Noiseless Joint PPGN-h on MNIST with Wasserstein critics attached to the
//! image space and to the encoder's fc1 code space.
//!
//! The crate covers the whole pipeline: IDX parsing ([`mnist_io`]), the four
//! fixed networks ([`netspec`]), reverse-mode and penalty gradients
//! ([`diffengine`]), the loss terms ([`losses`]), WGAN-GP training of the
//! six experiment variants ([`trainer`]), MALA-approx sampling
//! ([`sampler`]) and on-disk artifacts ([`artifacts`]).

pub mod artifacts;
pub mod diffengine;
pub mod error;
mod kernels;
pub mod losses;
pub mod mnist_io;
pub mod netspec;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
