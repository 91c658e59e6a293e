//! Seedable random streams.
//!
//! Every stochastic operation in the crate draws from [`Rng`], a SplitMix64
//! generator (Steele, Lea and Flood 2014) with the constants
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! out = z ^ (z >> 31)
//! ```
//!
//! Test vectors (seed 1234567): 6457827717110365317, 3203168211198807973,
//! 9817491932198370423, 4593380528125082431, 16408922859458223821.
//!
//! Derived draws:
//!
//! * `next_f64`: `(next_u64 >> 11) * 2^-53`, uniform on `[0, 1)`.
//! * `uniform_int(lo, hi)`: `lo + ((next_u64 as u128 * (hi - lo + 1)) >> 64)`.
//! * `standard_normal`: Box-Muller on `u1 = ((next_u64 >> 11) + 1) * 2^-53`
//!   and `u2 = next_f64()`, yielding `sqrt(-2 ln u1) cos(2 pi u2)` first and
//!   `sqrt(-2 ln u1) sin(2 pi u2)` on the following call.
//!
//! Independent streams are derived with [`Rng::stream`], and named pipeline
//! stages get their own seed from [`stage_seed`].

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed for a named pipeline stage: `mix64(seed ^ fnv1a64(stage))`.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    mix64(seed ^ fnv1a64(stage.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            spare_normal: None,
        }
    }

    /// Stream `id` of `seed`, seeded with `mix64(seed ^ mix64(id + GOLDEN))`.
    pub fn stream(seed: u64, id: u64) -> Self {
        Rng::new(mix64(seed ^ mix64(id.wrapping_add(GOLDEN))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in the closed range `lo..=hi`.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "empty range {lo}..={hi}");
        let span = (hi - lo) as u128 + 1;
        lo + ((self.next_u64() as u128 * span) >> 64) as usize
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }

    /// Fisher-Yates shuffle, drawing `uniform_int(0, i)` for `i = len-1 ..= 1`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_int(0, i);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_vectors() {
        let mut rng = Rng::new(1234567);
        let got: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        assert_eq!(
            got,
            [
                6457827717110365317,
                3203168211198807973,
                9817491932198370423,
                4593380528125082431,
                16408922859458223821
            ]
        );
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 16294208416658607535);
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn uniform_int_stays_in_range() {
        let mut rng = Rng::new(3);
        for _ in 0..10_000 {
            let v = rng.uniform_int(3, 7);
            assert!((3..=7).contains(&v));
        }
        assert_eq!(rng.uniform_int(5, 5), 5);
    }

    #[test]
    fn streams_differ() {
        let a = Rng::stream(42, 0).next_u64();
        let b = Rng::stream(42, 1).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, Rng::stream(42, 0).next_u64());
        assert_ne!(stage_seed(42, "train"), stage_seed(42, "simulate"));
    }
}
