//! Residual-shifting forward kernels, the closed-form reverse posterior and
//! the few-step sampler.
//!
//! The forward chain moves a clean image `x` towards the corrupted image `y`
//! by adding `alpha_t * (y - x)` plus Gaussian noise of variance
//! `gamma^2 * alpha_t` per step, so that after `t` steps
//! `x_t ~ N(x + beta_t (y - x), gamma^2 beta_t I)`.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::schedule::Schedule;

/// A diffused image together with the step that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x_t: Image,
    pub t: usize,
}

fn check_step(s: &Schedule, t: usize) -> Result<()> {
    if t == 0 || t > s.n_steps() {
        return Err(Error::StepOutOfRange { t, n: s.n_steps() });
    }
    Ok(())
}

/// `y - x`.
pub fn residual(x: &Image, y: &Image) -> Result<Image> {
    x.zip_map(y, |a, b| b - a)
}

fn add_scaled_noise(img: &mut Image, scale: f64, rng: &mut Rng) {
    for v in img.data_mut() {
        *v += scale * rng.standard_normal();
    }
}

/// One forward transition: `x_prev + alpha_t r + gamma sqrt(alpha_t) eps`.
pub fn forward_step(x_prev: &Image, r: &Image, s: &Schedule, t: usize, rng: &mut Rng) -> Result<Image> {
    check_step(s, t)?;
    let alpha = s.alpha(t)?;
    let mut out = x_prev.zip_map(r, |a, b| a + alpha * b)?;
    add_scaled_noise(&mut out, s.gamma() * alpha.sqrt(), rng);
    Ok(out)
}

/// Draw `x_t` directly from the marginal `N(x + beta_t (y - x), gamma^2 beta_t I)`.
pub fn forward_marginal(x: &Image, y: &Image, s: &Schedule, t: usize, rng: &mut Rng) -> Result<DiffusionState> {
    check_step(s, t)?;
    let beta = s.beta(t)?;
    let mut x_t = x.zip_map(y, |a, b| a + beta * (b - a))?;
    add_scaled_noise(&mut x_t, s.noise_stddev(t)?, rng);
    Ok(DiffusionState { x_t, t })
}

/// Mean and standard deviation of `q(x_{t-1} | x_t, x_hat)`.
///
/// The mean is `(beta_{t-1}/beta_t) x_t + (alpha_t/beta_t) x_hat` and the
/// standard deviation `gamma sqrt(beta_{t-1} alpha_t / beta_t)`; at `t = 1`
/// this collapses to `(x_hat, 0)`.
pub fn posterior_params(x_t: &Image, x_hat: &Image, s: &Schedule, t: usize) -> Result<(Image, f64)> {
    check_step(s, t)?;
    let beta_t = s.beta(t)?;
    let beta_prev = s.beta(t - 1)?;
    let alpha = s.alpha(t)?;
    let keep = beta_prev / beta_t;
    let take = alpha / beta_t;
    let mean = x_t.zip_map(x_hat, |a, b| keep * a + take * b)?;
    let stddev = s.gamma() * (beta_prev * alpha / beta_t).sqrt();
    Ok((mean, stddev))
}

/// One reverse step. No noise is drawn at `t = 1`.
pub fn reverse_step(
    x_t: &Image,
    y: &Image,
    f: &dyn Denoiser,
    s: &Schedule,
    t: usize,
    rng: &mut Rng,
) -> Result<Image> {
    check_step(s, t)?;
    x_t.ensure_same_shape(y)?;
    let x_hat = f.denoise(x_t, y, s.noise_stddev(t)?)?;
    x_t.ensure_same_shape(&x_hat)?;
    let (mut mean, stddev) = posterior_params(x_t, &x_hat, s, t)?;
    if t > 1 {
        add_scaled_noise(&mut mean, stddev, rng);
    }
    Ok(mean)
}

/// Full reverse chain from `x_N ~ N(y, gamma^2 beta_N I)` down to `x_0`.
///
/// Outputs are not clamped.
pub fn sample(y: &Image, f: &dyn Denoiser, s: &Schedule, rng: &mut Rng) -> Result<Image> {
    let n = s.n_steps();
    let mut x = y.clone();
    add_scaled_noise(&mut x, s.noise_stddev(n)?, rng);
    for t in (1..=n).rev() {
        x = reverse_step(&x, y, f, s, t, rng)?;
    }
    Ok(x)
}

/// Run [`sample`] on each image, image `i` drawing from `Rng::stream(seed, i)`.
///
/// Images are processed in parallel on the current rayon pool; the result
/// does not depend on the number of threads.
pub fn sample_batch(ys: &[&Image], f: &dyn Denoiser, s: &Schedule, seed: u64) -> Result<Vec<Image>> {
    use rayon::prelude::*;
    ys.par_iter()
        .enumerate()
        .map(|(i, y)| sample(y, f, s, &mut Rng::stream(seed, i as u64)))
        .collect()
}
