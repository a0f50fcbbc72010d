//! Desk-scale diffusion laboratory.
//!
//! Trains small epsilon-prediction denoisers (a two-layer MLP for 1D
//! signals, a wavelet-gated UNet for small images) on synthetic data, and
//! verifies their spectral behaviour: closed-form optimal linear denoising
//! filters against a least-squares oracle, frequency-evolution reports,
//! low/high-frequency error metrics, and spectrum-aware teacher-student
//! distillation.

pub mod analysis;
pub mod check;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod graph;
pub mod lab;
pub mod models;
pub mod optim;
pub mod spectral;
pub mod tensor;

pub use error::{Result, SdError};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
