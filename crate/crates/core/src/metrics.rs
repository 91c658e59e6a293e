//! Image quality metrics: PSNR, SSIM, NMSE and Pearson correlation.
//!
//! SSIM uses the common defaults: an 11x11 Gaussian window with sigma 1.5,
//! `K1 = 0.01`, `K2 = 0.03`, evaluated over "valid" window positions only
//! and averaged. NMSE is `100 * ||x_hat - x||^2 / ||x||^2` (percent).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Reports replace an infinite PSNR (identical images) with this value.
pub const PSNR_CAP_DB: f64 = 99.0;

fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(data_range^2 / MSE)`; `+inf` when the images are identical.
pub fn psnr(x_hat: &Image, x: &Image, data_range: f64) -> Result<f64> {
    if data_range.is_nan() || data_range <= 0.0 {
        return Err(Error::invalid("data range must be positive"));
    }
    let m = mse(x_hat, x)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

pub fn ssim(x_hat: &Image, x: &Image, data_range: f64) -> Result<f64> {
    x_hat.ensure_same_shape(x)?;
    if data_range.is_nan() || data_range <= 0.0 {
        return Err(Error::invalid("data range must be positive"));
    }
    let (h, w) = x.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let (a, b) = (x_hat.data(), x.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - SSIM_WINDOW {
        for c0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, gi) in g.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    let wt = gi * gj;
                    let idx = (r0 + i) * w + c0 + j;
                    let (p, q) = (a[idx], b[idx]);
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn nmse(x_hat: &Image, x: &Image) -> Result<f64> {
    x_hat.ensure_same_shape(x)?;
    let norm: f64 = x.data().iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return Err(Error::invalid("NMSE reference image is all zeros"));
    }
    let err: f64 = x_hat.data().iter().zip(x.data()).map(|(p, q)| (p - q).powi(2)).sum();
    Ok(100.0 * err / norm)
}

pub fn pearson(x_hat: &Image, x: &Image) -> Result<f64> {
    x_hat.ensure_same_shape(x)?;
    let n = x.len() as f64;
    let ma = x_hat.data().iter().sum::<f64>() / n;
    let mb = x.data().iter().sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (p, q) in x_hat.data().iter().zip(x.data()) {
        let (da, db) = (p - ma, q - mb);
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("Pearson correlation of a constant image"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub nmse_percent: f64,
    pub pearson_r: f64,
}

impl ImageMetrics {
    pub fn compute(id: impl Into<String>, x_hat: &Image, x: &Image) -> Result<Self> {
        Ok(ImageMetrics {
            id: id.into(),
            psnr_db: psnr(x_hat, x, 1.0)?.min(PSNR_CAP_DB),
            ssim: ssim(x_hat, x, 1.0)?,
            nmse_percent: nmse(x_hat, x)?,
            pearson_r: pearson(x_hat, x)?,
        })
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub dataset: String,
    pub level: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr_db: Summary,
    pub ssim: Summary,
    pub nmse_percent: Summary,
    pub pearson_r: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: EvalMeta,
    pub count: usize,
    pub aggregate: Aggregate,
    pub images: Vec<ImageMetrics>,
}

impl EvalReport {
    pub fn from_records(images: Vec<ImageMetrics>, meta: EvalMeta) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("cannot summarize an empty corpus"));
        }
        let col = |f: fn(&ImageMetrics) -> f64| images.iter().map(f).collect::<Vec<_>>();
        let aggregate = Aggregate {
            psnr_db: Summary::of(&col(|m| m.psnr_db)),
            ssim: Summary::of(&col(|m| m.ssim)),
            nmse_percent: Summary::of(&col(|m| m.nmse_percent)),
            pearson_r: Summary::of(&col(|m| m.pearson_r)),
        };
        Ok(EvalReport {
            meta,
            count: images.len(),
            aggregate,
            images,
        })
    }

    /// Per-image rows followed by `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,psnr_db,ssim,nmse_percent,pearson_r\n");
        for m in &self.images {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.id, m.psnr_db, m.ssim, m.nmse_percent, m.pearson_r
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "mean,{},{},{},{}\n",
            a.psnr_db.mean, a.ssim.mean, a.nmse_percent.mean, a.pearson_r.mean
        ));
        out.push_str(&format!(
            "std,{},{},{},{}\n",
            a.psnr_db.std, a.ssim.std, a.nmse_percent.std, a.pearson_r.std
        ));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes CSV or JSON depending on the file extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => self.to_json()? + "\n",
            Some("csv") => self.to_csv(),
            _ => return Err(Error::invalid(format!("{}: report must end in .csv or .json", path.display()))),
        };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Per-image metrics and their mean and population std. `pairs` holds `(id, x_hat, x)`.
pub fn evaluate_corpus(pairs: &[(String, Image, Image)], meta: EvalMeta) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty corpus"));
    }
    let records = pairs
        .iter()
        .map(|(id, x_hat, x)| {
            ImageMetrics::compute(id.clone(), x_hat, x).map_err(|e| Error::InImage {
                id: id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_records(records, meta)
}
