//! Centered, unitary 2D DFT.
//!
//! `fft2` computes `K = fftshift(DFT(img)) / sqrt(H W)` with the spatial
//! origin at pixel `(0, 0)`; after the shift the DC term sits at
//! `(H / 2, W / 2)` (integer division) and the row/column index `j` maps to
//! the signed frequency `j - H / 2` (resp. `j - W / 2`).

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::image::{Image, Spacing};

/// Complex k-space grid, row-major, DC-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct KGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
    pub spacing: Spacing,
}

impl KGrid {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "k-space data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite {
                what: "in k-space".into(),
            });
        }
        Ok(KGrid {
            height,
            width,
            data,
            spacing: Spacing::default(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.width + c]
    }

    /// Index of the DC sample.
    pub fn dc_index(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn fft_rows(data: &mut [Complex64], width: usize, planner: &mut FftPlanner<f64>, dir: FftDirection) {
    let fft = planner.plan_fft(width, dir);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(width) {
        fft.process_with_scratch(row, &mut scratch);
    }
}

fn transpose(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..h {
        for c in 0..w {
            out[c * h + r] = data[r * w + c];
        }
    }
    out
}

fn dft2(data: &mut Vec<Complex64>, h: usize, w: usize, dir: FftDirection) {
    let mut planner = FftPlanner::new();
    fft_rows(data, w, &mut planner, dir);
    let mut t = transpose(data, h, w);
    fft_rows(&mut t, h, &mut planner, dir);
    *data = transpose(&t, w, h);
    let norm = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|z| *z *= norm);
}

/// `shift[(i + n/2) % n] = x[i]` along both axes.
fn fftshift(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..h {
        let rr = (r + h / 2) % h;
        for c in 0..w {
            out[rr * w + (c + w / 2) % w] = data[r * w + c];
        }
    }
    out
}

fn ifftshift(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..h {
        let rr = (r + h / 2) % h;
        for c in 0..w {
            out[r * w + c] = data[rr * w + (c + w / 2) % w];
        }
    }
    out
}

pub fn fft2(img: &Image) -> Result<KGrid> {
    img.ensure_finite()?;
    let (h, w) = img.shape();
    let mut data: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft2(&mut data, h, w, FftDirection::Forward);
    Ok(KGrid {
        height: h,
        width: w,
        data: fftshift(&data, h, w),
        spacing: img.spacing,
    })
}

/// Inverse of [`fft2`] without discarding the imaginary part.
pub fn ifft2_complex(k: &KGrid) -> Result<Vec<Complex64>> {
    if k.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite {
            what: "in k-space".into(),
        });
    }
    let (h, w) = k.shape();
    let mut data = ifftshift(&k.data, h, w);
    dft2(&mut data, h, w, FftDirection::Inverse);
    Ok(data)
}

/// Real part of the inverse transform, plus the largest discarded imaginary magnitude.
pub fn ifft2(k: &KGrid) -> Result<(Image, f64)> {
    let data = ifft2_complex(k)?;
    let max_imag = data.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let img = Image::new(k.height, k.width, data.iter().map(|z| z.re).collect())?.with_spacing(k.spacing);
    Ok((img, max_imag))
}
