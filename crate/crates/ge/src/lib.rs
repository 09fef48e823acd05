//! Generative-encoder toolkit.
//!
//! Pre-trains a GAN generator and a convolutional autoencoder
//! separately, then solves image inverse problems (compressed sensing,
//! denoising, deblurring, super-resolution, inpainting) by latent-space
//! optimization in the encoder's compressed domain.

pub mod autoenc;
pub mod began;
pub mod data;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod lasso;
pub mod nn;
pub mod optim;
pub mod solver;
pub mod tensor;

pub use error::{GeError, Result};
pub use tensor::{Gradients, Tape, Tensor};
