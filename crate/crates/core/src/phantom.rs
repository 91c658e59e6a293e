//! Randomized Shepp–Logan-style ellipse phantoms.

use crate::image::Image;
use crate::rng::Rng;

/// `(intensity, semi-axis a, semi-axis b, x0, y0, angle_deg)` of the
/// modified Shepp–Logan head phantom on `[-1, 1]^2`.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    pub size: usize,
    /// Samples per pixel along each axis.
    pub supersample: usize,
    /// Relative jitter of axis lengths and intensities.
    pub jitter: f64,
    /// Extra random small ellipses (lesions) added inside the head.
    pub max_blobs: usize,
}

impl PhantomConfig {
    pub fn new(size: usize) -> Self {
        PhantomConfig {
            size,
            supersample: 2,
            jitter: 0.15,
            max_blobs: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn new(value: f64, a: f64, b: f64, x0: f64, y0: f64, angle_deg: f64) -> Self {
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        Ellipse {
            value,
            a,
            b,
            x0,
            y0,
            cos,
            sin,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn random_ellipses(cfg: &PhantomConfig, rng: &mut Rng) -> Vec<Ellipse> {
    let j = cfg.jitter;
    let scale = rng.uniform(0.8, 1.0);
    let (gs, gc) = rng.uniform(-15.0f64, 15.0).to_radians().sin_cos();
    let shift = (rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    let place = |x: f64, y: f64| {
        (
            scale * (x * gc - y * gs) + shift.0,
            scale * (x * gs + y * gc) + shift.1,
        )
    };
    let global_deg = gs.atan2(gc).to_degrees();

    let mut out = Vec::with_capacity(SHEPP_LOGAN.len() + cfg.max_blobs);
    for (k, &(value, a, b, x0, y0, deg)) in SHEPP_LOGAN.iter().enumerate() {
        // The outer skull pair keeps its shape so the head stays closed.
        let (va, vb, vv, dpos, ddeg) = if k < 2 {
            (1.0, 1.0, 1.0, 0.0, 0.0)
        } else {
            (
                rng.uniform(1.0 - j, 1.0 + j),
                rng.uniform(1.0 - j, 1.0 + j),
                rng.uniform(1.0 - j, 1.0 + j),
                0.03,
                10.0,
            )
        };
        let (cx, cy) = place(x0 + rng.uniform(-dpos, dpos), y0 + rng.uniform(-dpos, dpos));
        out.push(Ellipse::new(
            value * vv,
            scale * a * va,
            scale * b * vb,
            cx,
            cy,
            deg + global_deg + rng.uniform(-ddeg, ddeg),
        ));
    }
    let blobs = rng.uniform_int(0, cfg.max_blobs);
    for _ in 0..blobs {
        let r = rng.uniform(0.0, 0.45);
        let th = rng.uniform(0.0, std::f64::consts::TAU);
        let (cx, cy) = place(r * th.cos(), r * th.sin());
        out.push(Ellipse::new(
            rng.uniform(-0.15, 0.25),
            scale * rng.uniform(0.03, 0.12),
            scale * rng.uniform(0.03, 0.12),
            cx,
            cy,
            rng.uniform(0.0, 180.0),
        ));
    }
    out
}

/// One random phantom, normalized so its maximum is 1 and its minimum 0.
pub fn phantom(cfg: &PhantomConfig, rng: &mut Rng) -> Image {
    let ellipses = random_ellipses(cfg, rng);
    let n = cfg.size;
    let ss = cfg.supersample.max(1);
    let inv = 1.0 / (ss * ss) as f64;
    let mut img = Image::from_fn(n, n, |r, c| {
        let mut acc = 0.0;
        for sy in 0..ss {
            for sx in 0..ss {
                // Row 0 is the top of the image (y = +1).
                let x = -1.0 + 2.0 * (c as f64 + (sx as f64 + 0.5) / ss as f64) / n as f64;
                let y = 1.0 - 2.0 * (r as f64 + (sy as f64 + 0.5) / ss as f64) / n as f64;
                acc += ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.value).sum::<f64>();
            }
        }
        (acc * inv).max(0.0)
    });
    let max = img.data().iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in img.data_mut() {
            *v /= max;
        }
    }
    img
}

/// `count` phantoms; phantom `i` draws from `Rng::stream(seed, i)`.
pub fn phantom_set(cfg: &PhantomConfig, count: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| phantom(cfg, &mut Rng::stream(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_and_nonconstant() {
        for img in phantom_set(&PhantomConfig::new(32), 10, 3) {
            let max = img.data().iter().copied().fold(f64::MIN, f64::max);
            let min = img.data().iter().copied().fold(f64::MAX, f64::min);
            assert_eq!(max, 1.0);
            assert_eq!(min, 0.0);
            // Corners lie outside the head.
            assert_eq!(img.get(0, 0), 0.0);
            assert_eq!(img.get(31, 31), 0.0);
        }
    }

    #[test]
    fn seeded_and_varied() {
        let cfg = PhantomConfig::new(24);
        let a = phantom_set(&cfg, 3, 7);
        assert_eq!(a, phantom_set(&cfg, 3, 7));
        assert_ne!(a[0], a[1]);
    }
}
