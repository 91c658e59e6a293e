//! The denoiser contract `f(x_t, y, noise_level) -> x_hat` and its
//! implementations.

mod checkpoint;
mod net;

pub use checkpoint::{read_checkpoint, read_meta, write_checkpoint, write_meta, CheckpointMeta, CHECKPOINT_MAGIC};
pub use net::{
    forward, loss_and_grad, noise_embedding, BatchItem, ConvDenoiser, ConvLayer, DenoiserParams, LayerSpec,
    Linear, LossAndGrad, LossMode,
};

use crate::error::Result;
use crate::image::Image;

/// Estimates the clean image from the current diffusion state `x_t`, the
/// corrupted image `y` and the marginal noise level `gamma * sqrt(beta_t)`.
///
/// Implementations must return an image of the input shape and may not
/// mutate hidden state.
pub trait Denoiser: Sync {
    fn denoise(&self, x_t: &Image, y: &Image, noise_level: f64) -> Result<Image>;
}

/// Returns the ground truth regardless of its inputs. Verification only.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    truth: Image,
}

impl OracleDenoiser {
    pub fn new(truth: Image) -> Self {
        OracleDenoiser { truth }
    }
}

impl Denoiser for OracleDenoiser {
    fn denoise(&self, x_t: &Image, y: &Image, _noise_level: f64) -> Result<Image> {
        self.truth.ensure_same_shape(x_t)?;
        self.truth.ensure_same_shape(y)?;
        Ok(self.truth.clone())
    }
}

pub fn oracle_denoiser(x_true: Image) -> OracleDenoiser {
    OracleDenoiser::new(x_true)
}
