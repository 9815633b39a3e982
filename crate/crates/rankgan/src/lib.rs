//! Desk-scale training engine for stage-wise maximum-margin ranking GANs.
//!
//! The crate provides, from the ground up:
//!
//! - [`autodiff`]: reverse-mode automatic differentiation with higher-order
//!   gradients (double backpropagation), the prerequisite for training
//!   through a gradient penalty.
//! - [`nn`]: small MLP generators, critics and variational encoders, plus the
//!   Adam optimizer and a binary checkpoint format.
//! - [`losses`]: the margin, ranking, gradient-penalty and clamping losses,
//!   together with GAN/WGAN/LSGAN baselines.
//! - [`stagewise`]: the stage-wise training engine — VAE warm start, per-stage
//!   cloning and freezing, margin computation, the 5:1 critic schedule.
//! - [`data`]: seedable synthetic datasets (1-d/2-d Gaussians, an 8-Gaussian
//!   ring, tiny procedural faces) with occlusion masks and 90-10 splits.
//! - [`completion`]: image completion by latent-space search with contextual
//!   and perceptual losses.
//! - [`metrics`]: empirical Wasserstein-1 (exact in 1-d, sliced above),
//!   PSNR, SSIM and critic score statistics.
//! - [`config`] / [`runner`]: a declarative, JSON-configured experiment
//!   runner emitting CSV logs and checkpoints.
//!
//! See the `examples/` directory for runnable entry points covering each
//! capability, and the `rankgan` binary for the command-line interface.

pub mod autodiff;
pub mod completion;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod runner;
pub mod stagewise;

pub use autodiff::{finite_difference_check, grad, GradOrder, Tensor, Var};
pub use error::{Error, Result};
