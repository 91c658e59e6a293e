//! Rigid-motion artifact simulation in k-space.
//!
//! A motion event replaces a band ("slab") of phase-encode lines of the
//! clean image's k-space with the same lines taken from a rigidly moved copy
//! of the image. With `PhaseAxis::Rows` each k-space row is one phase-encode
//! line; with `PhaseAxis::Cols` each column is.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2, KGrid};
use crate::image::Image;
use crate::rng::Rng;

pub const ROTATION_LIMIT_DEG: f64 = 7.0;
pub const TRANSLATION_LIMIT_MM: f64 = 5.0;
pub const SLAB_WIDTH_RANGE: (usize, usize) = (3, 7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionLevel {
    Minor,
    Moderate,
    Heavy,
}

impl MotionLevel {
    pub const ALL: [MotionLevel; 3] = [MotionLevel::Minor, MotionLevel::Moderate, MotionLevel::Heavy];

    pub fn lines_to_perturb(self) -> usize {
        match self {
            MotionLevel::Minor => 7,
            MotionLevel::Moderate => 10,
            MotionLevel::Heavy => 15,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionLevel::Minor => "minor",
            MotionLevel::Moderate => "moderate",
            MotionLevel::Heavy => "heavy",
        }
    }
}

impl fmt::Display for MotionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minor" => Ok(MotionLevel::Minor),
            "moderate" => Ok(MotionLevel::Moderate),
            "heavy" => Ok(MotionLevel::Heavy),
            other => Err(Error::invalid(format!(
                "unknown motion level {other:?} (expected minor, moderate or heavy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseAxis {
    #[default]
    Rows,
    Cols,
}

impl FromStr for PhaseAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" | "0" => Ok(PhaseAxis::Rows),
            "cols" | "1" => Ok(PhaseAxis::Cols),
            other => Err(Error::invalid(format!("unknown phase axis {other:?} (expected rows or cols)"))),
        }
    }
}

impl fmt::Display for PhaseAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseAxis::Rows => "rows",
            PhaseAxis::Cols => "cols",
        })
    }
}

impl PhaseAxis {
    /// Number of phase-encode lines of a `height x width` grid.
    pub fn line_count(self, height: usize, width: usize) -> usize {
        match self {
            PhaseAxis::Rows => height,
            PhaseAxis::Cols => width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub level: MotionLevel,
    pub lines_to_perturb: usize,
    pub slab_width_range: (usize, usize),
    pub rot_limit_deg: f64,
    pub trans_limit_mm: f64,
    pub phase_axis: PhaseAxis,
}

impl MotionSpec {
    pub fn new(level: MotionLevel) -> Self {
        MotionSpec {
            level,
            lines_to_perturb: level.lines_to_perturb(),
            slab_width_range: SLAB_WIDTH_RANGE,
            rot_limit_deg: ROTATION_LIMIT_DEG,
            trans_limit_mm: TRANSLATION_LIMIT_MM,
            phase_axis: PhaseAxis::Rows,
        }
    }

    pub fn with_phase_axis(self, phase_axis: PhaseAxis) -> Self {
        MotionSpec { phase_axis, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.slab_width_range;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("bad slab width range {lo}..={hi}")));
        }
        if !(self.rot_limit_deg > 0.0 && self.trans_limit_mm > 0.0) {
            return Err(Error::invalid("motion limits must be positive"));
        }
        if self.lines_to_perturb != self.level.lines_to_perturb() {
            return Err(Error::invalid(format!(
                "{} motion perturbs {} lines, not {}",
                self.level,
                self.level.lines_to_perturb(),
                self.lines_to_perturb
            )));
        }
        Ok(())
    }
}

/// One motion event: a contiguous band of phase-encode lines and the rigid
/// pose of the object while those lines were acquired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabEvent {
    pub start_line: usize,
    pub width: usize,
    pub rotation_deg: f64,
    /// `(tx, ty)`: shift along columns and rows in millimetres.
    pub translation_mm: (f64, f64),
}

impl SlabEvent {
    pub fn lines(&self) -> std::ops::Range<usize> {
        self.start_line..self.start_line + self.width
    }
}

/// Rotate about the image center, bilinear, zero fill. Positive angles turn
/// the image counter-clockwise as displayed (row 0 at the top).
fn rotate(img: &Image, rotation_deg: f64) -> Image {
    let (h, w) = img.shape();
    let (dy, dx) = (img.spacing.dy, img.spacing.dx);
    let theta = rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let pixel = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img.get(r as usize, c as usize)
        }
    };
    let mut out = Image::from_fn(h, w, |r, c| {
        let x = (c as f64 - cx) * dx;
        let y = (cy - r as f64) * dy;
        let xs = cos * x + sin * y;
        let ys = -sin * x + cos * y;
        let cs = cx + xs / dx;
        let rs = cy - ys / dy;
        let (r0, c0) = (rs.floor(), cs.floor());
        let (fr, fc) = (rs - r0, cs - c0);
        let (r0, c0) = (r0 as isize, c0 as isize);
        (1.0 - fr) * (1.0 - fc) * pixel(r0, c0)
            + (1.0 - fr) * fc * pixel(r0, c0 + 1)
            + fr * (1.0 - fc) * pixel(r0 + 1, c0)
            + fr * fc * pixel(r0 + 1, c0 + 1)
    });
    out.spacing = img.spacing;
    out
}

/// Multiply by the linear phase ramp that shifts the image content by
/// `(sx, sy)` pixels along columns and rows (circularly).
fn translate_kspace(k: &mut KGrid, sx: f64, sy: f64) {
    let (h, w) = k.shape();
    let (dr, dc) = k.dc_index();
    let data = k.data_mut();
    for r in 0..h {
        let ky = r as f64 - dr as f64;
        for c in 0..w {
            let kx = c as f64 - dc as f64;
            let phase = -std::f64::consts::TAU * (kx * sx / w as f64 + ky * sy / h as f64);
            data[r * w + c] *= Complex64::from_polar(1.0, phase);
        }
    }
}

/// Rotation (bilinear, about the center) followed by an exact k-space
/// translation. Translations are given in millimetres and converted with
/// the image spacing.
pub fn apply_rigid(img: &Image, rotation_deg: f64, translation_mm: (f64, f64)) -> Result<Image> {
    img.ensure_finite()?;
    let rotated = if rotation_deg == 0.0 {
        img.clone()
    } else {
        rotate(img, rotation_deg)
    };
    let (tx, ty) = translation_mm;
    if tx == 0.0 && ty == 0.0 {
        return Ok(rotated);
    }
    let mut k = fft2(&rotated)?;
    translate_kspace(&mut k, tx / img.spacing.dx, ty / img.spacing.dy);
    Ok(ifft2(&k)?.0)
}

fn free_starts(occupied: &[bool], width: usize) -> Vec<usize> {
    (0..=occupied.len() - width)
        .filter(|&s| !occupied[s..s + width].iter().any(|&o| o))
        .collect()
}

fn longest_free_run(occupied: &[bool]) -> usize {
    occupied
        .split(|&o| o)
        .map(|run| run.len())
        .max()
        .unwrap_or(0)
}

/// Draw slab events covering exactly `spec.lines_to_perturb` of `n_lines`
/// phase-encode lines.
///
/// Per slab, in order: width `uniform_int(3, 7)` (truncated to the lines
/// still needed), start chosen uniformly among the positions that do not
/// overlap earlier slabs, rotation `U[-7, 7]` degrees, then `tx` and `ty`
/// each `U[-5, 5]` mm. When earlier slabs leave no gap wide enough for
/// the drawn width, the slab is narrowed to the longest free run instead.
pub fn draw_events(spec: &MotionSpec, n_lines: usize, rng: &mut Rng) -> Result<Vec<SlabEvent>> {
    spec.validate()?;
    let too_small = Error::ImageTooSmall {
        requested: spec.lines_to_perturb,
        available: n_lines,
    };
    if spec.lines_to_perturb > n_lines {
        return Err(too_small);
    }
    let (lo, hi) = spec.slab_width_range;
    let mut occupied = vec![false; n_lines];
    let mut remaining = spec.lines_to_perturb;
    let mut events = Vec::new();
    while remaining > 0 {
        let mut width = rng.uniform_int(lo, hi).min(remaining);
        let mut starts = free_starts(&occupied, width);
        if starts.is_empty() {
            width = longest_free_run(&occupied).min(remaining);
            if width == 0 {
                return Err(too_small);
            }
            starts = free_starts(&occupied, width);
        }
        let start_line = starts[rng.uniform_int(0, starts.len() - 1)];
        occupied[start_line..start_line + width].fill(true);
        let rotation_deg = rng.uniform(-spec.rot_limit_deg, spec.rot_limit_deg);
        let tx = rng.uniform(-spec.trans_limit_mm, spec.trans_limit_mm);
        let ty = rng.uniform(-spec.trans_limit_mm, spec.trans_limit_mm);
        events.push(SlabEvent {
            start_line,
            width,
            rotation_deg,
            translation_mm: (tx, ty),
        });
        remaining -= width;
    }
    Ok(events)
}

pub fn validate_events(events: &[SlabEvent], n_lines: usize) -> Result<()> {
    let mut occupied = vec![false; n_lines];
    for ev in events {
        if ev.width == 0 || ev.start_line + ev.width > n_lines {
            return Err(Error::LineOutOfRange {
                start: ev.start_line,
                end: ev.start_line + ev.width,
                lines: n_lines,
            });
        }
        for line in ev.lines() {
            if occupied[line] {
                return Err(Error::OverlappingEvents { line });
            }
            occupied[line] = true;
        }
    }
    Ok(())
}

/// k-space of the corrupted image: `fft2(img)` with each slab's lines taken
/// from `fft2(apply_rigid(img, event))`.
pub fn corrupt_kspace(img: &Image, events: &[SlabEvent], axis: PhaseAxis) -> Result<KGrid> {
    let (h, w) = img.shape();
    validate_events(events, axis.line_count(h, w))?;
    let mut k = fft2(img)?;
    for ev in events {
        let moved = fft2(&apply_rigid(img, ev.rotation_deg, ev.translation_mm)?)?;
        let src = moved.data();
        let dst = k.data_mut();
        for line in ev.lines() {
            match axis {
                PhaseAxis::Rows => dst[line * w..(line + 1) * w].copy_from_slice(&src[line * w..(line + 1) * w]),
                PhaseAxis::Cols => {
                    for r in 0..h {
                        dst[r * w + line] = src[r * w + line];
                    }
                }
            }
        }
    }
    Ok(k)
}

pub fn corrupt(img: &Image, events: &[SlabEvent], axis: PhaseAxis) -> Result<Image> {
    Ok(ifft2(&corrupt_kspace(img, events, axis)?)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub corrupted: Image,
    pub events: Vec<SlabEvent>,
}

/// Draw events for `spec`, corrupt `img`, and optionally add image-domain
/// Gaussian noise of standard deviation `noise_sigma` (drawn after the events).
pub fn simulate(img: &Image, spec: &MotionSpec, noise_sigma: f64, rng: &mut Rng) -> Result<Simulated> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let (h, w) = img.shape();
    let events = draw_events(spec, spec.phase_axis.line_count(h, w), rng)?;
    check_limits(&events, spec)?;
    let mut corrupted = corrupt(img, &events, spec.phase_axis)?;
    if noise_sigma > 0.0 {
        for v in corrupted.data_mut() {
            *v += noise_sigma * rng.standard_normal();
        }
    }
    Ok(Simulated { corrupted, events })
}

/// Rejects events whose pose exceeds the level's rotation or translation limits.
pub fn check_limits(events: &[SlabEvent], spec: &MotionSpec) -> Result<()> {
    for ev in events {
        let (tx, ty) = ev.translation_mm;
        if ev.rotation_deg.abs() > spec.rot_limit_deg
            || tx.abs() > spec.trans_limit_mm
            || ty.abs() > spec.trans_limit_mm
        {
            return Err(Error::invalid(format!(
                "event at line {} exceeds motion limits (rot {:.3} deg, shift ({tx:.3}, {ty:.3}) mm)",
                ev.start_line, ev.rotation_deg
            )));
        }
    }
    Ok(())
}
