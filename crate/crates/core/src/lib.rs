//! Residual-shifting diffusion for MRI motion artifact correction.
//!
//! The forward process moves a clean image `x` towards its motion-corrupted
//! counterpart `y` along the residual `y - x` while adding Gaussian noise; a
//! learned denoiser inverts it in a handful of steps starting from `y`.
//!
//! Modules:
//!
//! * [`schedule`]: the shifting sequence `beta_t` and its increments.
//! * [`diffusion`]: forward kernels, reverse posterior, sampler.
//! * [`motionsim`] and [`fft`]: k-space rigid motion simulation.
//! * [`denoiser`]: the denoiser contract, an oracle and a small CNN.
//! * [`train`]: the training loop.
//! * [`metrics`]: PSNR, SSIM, NMSE, Pearson and corpus reports.
//! * [`imageio`]: NIfTI-1, PGM and raw slice files.
//! * [`phantom`] and [`experiment`]: synthetic data and the end-to-end run.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod image;
pub mod imageio;
pub mod metrics;
pub mod motionsim;
pub mod phantom;
pub mod rng;
pub mod schedule;
pub mod train;

pub use denoiser::{ConvDenoiser, Denoiser, DenoiserParams, LayerSpec, LossMode, OracleDenoiser};
pub use diffusion::DiffusionState;
pub use error::{Error, ErrorKind, Result};
pub use fft::KGrid;
pub use image::{Image, Spacing};
pub use imageio::Volume;
pub use metrics::EvalReport;
pub use motionsim::{MotionLevel, MotionSpec, PhaseAxis, SlabEvent};
pub use rng::Rng;
pub use schedule::{Schedule, ScheduleParams};
pub use train::{Pair, TrainConfig, TrainHistory};
