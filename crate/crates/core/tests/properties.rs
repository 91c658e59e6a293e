use proptest::prelude::*;
use resmoco_core::denoiser::{forward, DenoiserParams, LayerSpec};
use resmoco_core::diffusion::{posterior_params, sample};
use resmoco_core::fft::{fft2, ifft2};
use resmoco_core::imageio::{read_raw_slice, write_raw_slice};
use resmoco_core::metrics::{nmse, psnr, ssim};
use resmoco_core::motionsim::{check_limits, corrupt_kspace, draw_events, validate_events};
use resmoco_core::schedule::build_schedule;
use resmoco_core::{Image, MotionLevel, MotionSpec, OracleDenoiser, PhaseAxis, Rng, ScheduleParams};

fn image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    Image::from_fn(h, w, |_, _| rng.uniform(0.0, 1.0))
}

fn level() -> impl Strategy<Value = MotionLevel> {
    prop_oneof![Just(MotionLevel::Minor), Just(MotionLevel::Moderate), Just(MotionLevel::Heavy)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_round_trip(h in 1usize..24, w in 1usize..24, seed in any::<u64>()) {
        let x = image(h, w, seed);
        let k = fft2(&x).unwrap();
        // Unitary transform: energy is preserved.
        let e: f64 = x.data().iter().map(|v| v * v).sum();
        prop_assert!((k.energy() - e).abs() <= 1e-9 * e.max(1.0));
        let (back, imag) = ifft2(&k).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
        prop_assert!(imag < 1e-12);
    }

    #[test]
    fn drawn_events_respect_the_protocol(lv in level(), seed in any::<u64>(), n_lines in 16usize..64) {
        let spec = MotionSpec::new(lv);
        let events = draw_events(&spec, n_lines, &mut Rng::new(seed)).unwrap();
        validate_events(&events, n_lines).unwrap();
        check_limits(&events, &spec).unwrap();
        prop_assert_eq!(events.iter().map(|e| e.width).sum::<usize>(), lv.lines_to_perturb());
        prop_assert!(events.iter().all(|e| e.width <= spec.slab_width_range.1));
    }

    #[test]
    fn corruption_only_touches_slab_lines(lv in level(), seed in any::<u64>(), cols in any::<bool>()) {
        let x = image(24, 20, seed);
        let axis = if cols { PhaseAxis::Cols } else { PhaseAxis::Rows };
        let spec = MotionSpec::new(lv).with_phase_axis(axis);
        let n_lines = axis.line_count(24, 20);
        let events = draw_events(&spec, n_lines, &mut Rng::new(seed ^ 1)).unwrap();
        let k0 = fft2(&x).unwrap();
        let k1 = corrupt_kspace(&x, &events, axis).unwrap();
        let mut touched = vec![false; n_lines];
        for ev in &events {
            for l in ev.lines() {
                touched[l] = true;
            }
        }
        for r in 0..24 {
            for c in 0..20 {
                let line = if cols { c } else { r };
                if !touched[line] {
                    prop_assert!((k0.get(r, c) - k1.get(r, c)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn posterior_collapses_to_estimate_at_first_step(n in 2usize..30, seed in any::<u64>()) {
        let s = ScheduleParams::with_defaults(n).build().unwrap();
        let x_t = image(5, 4, seed);
        let x_hat = image(5, 4, seed ^ 7);
        let (mean, std) = posterior_params(&x_t, &x_hat, &s, 1).unwrap();
        prop_assert_eq!(std, 0.0);
        prop_assert!(mean.max_abs_diff(&x_hat).unwrap() < 1e-15);
    }

    #[test]
    fn posterior_variance_is_nonnegative_and_bounded(
        n in 2usize..40,
        p in 0.1f64..3.0,
        gamma in 0.5f64..4.0,
    ) {
        let s = build_schedule(n, p, gamma, 1e-4, 0.999).unwrap();
        let z = Image::zeros(2, 2);
        for t in 1..=n {
            let (_, std) = posterior_params(&z, &z, &s, t).unwrap();
            prop_assert!(std >= 0.0);
            prop_assert!(std <= s.noise_stddev(t).unwrap() + 1e-15);
        }
    }

    #[test]
    fn oracle_sampling_is_exact_for_any_grid(n in 2usize..12, seed in any::<u64>()) {
        let x = image(6, 7, seed);
        let y = image(6, 7, seed ^ 3);
        let s = ScheduleParams::with_defaults(n).build().unwrap();
        let out = sample(&y, &OracleDenoiser::new(x.clone()), &s, &mut Rng::new(seed)).unwrap();
        prop_assert!(out.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn metric_identities(seed in any::<u64>(), k in 0.1f64..3.0) {
        let x = image(16, 16, seed).map(|v| v + 0.01);
        prop_assert!((ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        // nmse(kx, x) = 100 (k - 1)^2
        let scaled = nmse(&x.map(|v| k * v), &x).unwrap();
        prop_assert!((scaled - 100.0 * (k - 1.0).powi(2)).abs() < 1e-9 * (1.0 + scaled));
        let y = image(16, 16, seed ^ 5);
        prop_assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
        prop_assert!((ssim(&x, &y, 1.0).unwrap() - ssim(&y, &x, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn raw_slice_round_trip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.rslc");
        // Values representable in f32 survive exactly.
        let x = image(h, w, seed).map(|v| v as f32 as f64);
        write_raw_slice(&x, &path).unwrap();
        prop_assert_eq!(read_raw_slice(&path).unwrap(), x);
    }

    #[test]
    fn rng_uniform_stays_in_range(seed in any::<u64>(), lo in -10.0f64..10.0, width in 0.0f64..5.0) {
        let mut rng = Rng::new(seed);
        for _ in 0..100 {
            let v = rng.uniform(lo, lo + width);
            prop_assert!(v >= lo && v <= lo + width);
            let k = rng.uniform_int(3, 7);
            prop_assert!((3..=7).contains(&k));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn params_flatten_round_trip_and_identity_at_init(seed in any::<u64>(), sigma in 0.0f64..2.0) {
        let spec = LayerSpec::default();
        let p = DenoiserParams::init(spec, &mut Rng::new(seed)).unwrap();
        let flat = p.flatten();
        prop_assert_eq!(flat.len(), spec.param_count());
        prop_assert_eq!(DenoiserParams::unflatten(spec, &flat).unwrap(), p.clone());
        let x_t = image(9, 11, seed ^ 1);
        let y = image(9, 11, seed ^ 2);
        prop_assert_eq!(forward(&p, &x_t, &y, sigma).unwrap(), x_t);
    }
}
