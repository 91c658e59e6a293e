//! Denoiser training: per-item timestep draws, marginal diffusion, Adam
//! updates under a warmup + cosine learning-rate schedule.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{loss_and_grad, BatchItem, ConvDenoiser, DenoiserParams, LayerSpec, LossMode};
use crate::diffusion::{forward_marginal, sample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{nmse, psnr, ssim, SSIM_WINDOW};
use crate::rng::{stage_seed, Rng};
use crate::schedule::{ScheduleParams, DEFAULT_SAMPLE_STEPS, DEFAULT_TRAIN_STEPS};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// A clean image and its motion-corrupted counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub clean: Image,
    pub corrupted: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub loss_mode: LossMode,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Validate every this many epochs (0 disables).
    pub validate_every: usize,
    /// Reverse steps used for validation sampling.
    pub sample_steps: usize,
    pub layer_spec: LayerSpec,
}

impl Default for TrainConfig {
    /// Desk-scale settings for 32x32 phantoms on a single core.
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 8,
            lr_init: 1e-2,
            lr_min: 1e-3,
            warmup_steps: 200,
            seed: 0,
            schedule: ScheduleParams::with_defaults(DEFAULT_TRAIN_STEPS),
            loss_mode: LossMode::L1L2,
            checkpoint_every: 0,
            validate_every: 0,
            sample_steps: DEFAULT_SAMPLE_STEPS,
            layer_spec: LayerSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: 100 epochs, batch 32, lr 2e-4 decaying to 2e-5
    /// after a 5000-step warmup.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr_init: 2e-4,
            lr_min: 2e-5,
            warmup_steps: 5000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_init && self.lr_init.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 <= lr_min < lr_init, got lr_min={} lr_init={}",
                self.lr_min, self.lr_init
            )));
        }
        if self.sample_steps < 2 {
            return Err(Error::invalid("sample_steps must be at least 2"));
        }
        self.schedule.build()?;
        self.layer_spec.validate()
    }

    pub fn steps_per_epoch(&self, n_pairs: usize) -> usize {
        n_pairs.div_ceil(self.batch_size)
    }
}

/// Learning rate for update `step` (1-based; step 0 is the untrained state).
///
/// Linear ramp from 0 to `lr_init` over `warmup_steps`, then cosine decay to
/// `lr_min` at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig, total_steps: usize) -> Result<f64> {
    if total_steps <= cfg.warmup_steps {
        return Err(Error::invalid(format!(
            "total steps {total_steps} must exceed warmup steps {}",
            cfg.warmup_steps
        )));
    }
    if step > total_steps {
        return Err(Error::invalid(format!("step {step} beyond total steps {total_steps}")));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.lr_init * step as f64 / cfg.warmup_steps as f64);
    }
    let progress = (step - cfg.warmup_steps) as f64 / (total_steps - cfg.warmup_steps) as f64;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(cfg.lr_init * cos + cfg.lr_min * (1.0 - cos))
}

/// Uniform timestep in `1..=n`.
pub fn draw_timestep(rng: &mut Rng, n: usize) -> usize {
    rng.uniform_int(1, n)
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((w, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub l2: f64,
    pub l1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub psnr_db: f64,
    /// `None` when the images are smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub nmse_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: Option<Validation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,epoch,loss,l2,l1,lr\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.step, s.epoch, s.loss, s.l2, s.l1, s.lr);
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,val_psnr_db,val_ssim,val_nmse_percent\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let v = e.validation;
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                e.mean_loss,
                opt(v.map(|v| v.psnr_db)),
                opt(v.and_then(|v| v.ssim)),
                opt(v.map(|v| v.nmse_percent)),
            );
        }
        out
    }

    pub fn last_validation(&self) -> Option<Validation> {
        self.epochs.iter().rev().find_map(|e| e.validation)
    }
}

/// Sample each validation pair with the `sample_steps` schedule and average
/// PSNR, SSIM and NMSE against the clean images.
pub fn validate(params: &DenoiserParams, pairs: &[Pair], cfg: &TrainConfig) -> Result<Validation> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let s = cfg.schedule.with_steps(cfg.sample_steps).build()?;
    let net = ConvDenoiser::new(params.clone());
    let seed = stage_seed(cfg.seed, "validate");
    let with_ssim = pairs
        .iter()
        .all(|p| p.clean.height() >= SSIM_WINDOW && p.clean.width() >= SSIM_WINDOW);
    let scores = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let out = sample(&p.corrupted, &net, &s, &mut Rng::stream(seed, i as u64))?;
            let ss = if with_ssim { ssim(&out, &p.clean, 1.0)? } else { 0.0 };
            Ok((psnr(&out, &p.clean, 1.0)?, ss, nmse(&out, &p.clean)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(Validation {
        psnr_db: mean(|s| s.0),
        ssim: with_ssim.then(|| mean(|s| s.1)),
        nmse_percent: mean(|s| s.2),
    })
}

/// Called after every epoch with the epoch number (1-based), current
/// parameters and history so far.
pub type EpochHook<'a> = dyn FnMut(usize, &DenoiserParams, &TrainHistory) -> Result<()> + 'a;

pub fn train(data: &[Pair], validation: &[Pair], cfg: &TrainConfig) -> Result<(DenoiserParams, TrainHistory)> {
    train_with_hook(data, validation, cfg, &mut |_, _, _| Ok(()))
}

/// Initialize from `Rng::stream(seed, 0)` and train.
pub fn train_with_hook(
    data: &[Pair],
    validation: &[Pair],
    cfg: &TrainConfig,
    hook: &mut EpochHook,
) -> Result<(DenoiserParams, TrainHistory)> {
    cfg.validate()?;
    let params = DenoiserParams::init(cfg.layer_spec, &mut Rng::stream(cfg.seed, 0))?;
    train_from(params, data, validation, cfg, hook)
}

/// Train starting from `params`. Batches and diffusion noise come from
/// `Rng::stream(seed, 1)`.
pub fn train_from(
    mut params: DenoiserParams,
    data: &[Pair],
    validation: &[Pair],
    cfg: &TrainConfig,
    hook: &mut EpochHook,
) -> Result<(DenoiserParams, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if *params.spec() != cfg.layer_spec {
        return Err(Error::invalid("initial parameters do not match the configured layer spec"));
    }
    for p in data {
        p.clean.ensure_same_shape(&p.corrupted)?;
    }
    let schedule = cfg.schedule.build()?;
    let n_steps = schedule.n_steps();
    let per_epoch = cfg.steps_per_epoch(data.len());
    let total = cfg.epochs * per_epoch;
    lr_at(0, cfg, total)?;

    let mut rng = Rng::stream(cfg.seed, 1);
    let mut adam = Adam::new(params.len());
    let mut flat = params.flatten();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut states = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = draw_timestep(&mut rng, n_steps);
                let st = forward_marginal(&data[i].clean, &data[i].corrupted, &schedule, t, &mut rng)?;
                states.push((i, st.x_t, schedule.noise_stddev(t)?));
            }
            let batch: Vec<BatchItem> = states
                .iter()
                .map(|(i, x_t, sigma)| BatchItem {
                    x: &data[*i].clean,
                    y: &data[*i].corrupted,
                    x_t,
                    noise_level: *sigma,
                })
                .collect();
            let lg = match loss_and_grad(&params, &batch, cfg.loss_mode) {
                Ok(lg) => lg,
                Err(Error::NonFinite { .. } | Error::NonFiniteActivation { .. }) => {
                    return Err(Error::Diverged {
                        step,
                        loss: f64::NAN,
                        last_good: Box::new(params),
                    })
                }
                Err(e) => return Err(e),
            };
            let lr = lr_at(step, cfg, total)?;
            adam.step(&mut flat, &lg.grad, lr);
            if flat.iter().any(|w| !w.is_finite()) {
                return Err(Error::Diverged {
                    step,
                    loss: lg.loss,
                    last_good: Box::new(params),
                });
            }
            params.assign(&flat)?;
            loss_sum += lg.loss;
            history.steps.push(StepRecord {
                step,
                epoch,
                loss: lg.loss,
                l2: lg.l2,
                l1: lg.l1,
                lr,
            });
        }
        let validation = if cfg.validate_every > 0 && epoch % cfg.validate_every == 0 && !validation.is_empty() {
            let v = validate(&params, validation, cfg)?;
            log::info!(
                "epoch {epoch}: val psnr {:.3} dB, nmse {:.4}%",
                v.psnr_db,
                v.nmse_percent
            );
            Some(v)
        } else {
            None
        };
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / per_epoch as f64,
            validation,
        });
        log::debug!("epoch {epoch}: mean loss {:.6}", loss_sum / per_epoch as f64);
        hook(epoch, &params, &history)?;
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motionsim::{simulate, MotionLevel, MotionSpec};
    use crate::phantom::{phantom, PhantomConfig};

    fn toy_pairs(n: usize, size: usize, seed: u64) -> Vec<Pair> {
        let spec = MotionSpec::new(MotionLevel::Minor);
        (0..n)
            .map(|i| {
                let mut rng = Rng::stream(seed, i as u64);
                let clean = phantom(&PhantomConfig::new(size), &mut rng);
                let corrupted = simulate(&clean, &spec, 0.0, &mut rng).unwrap().corrupted;
                Pair {
                    id: format!("p{i}"),
                    clean,
                    corrupted,
                }
            })
            .collect()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            warmup_steps: 1,
            validate_every: 1,
            layer_spec: LayerSpec {
                hidden: 4,
                depth: 3,
                embed_dim: 4,
                ..LayerSpec::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_landmarks() {
        let cfg = TrainConfig::full_scale();
        let total = 20_000;
        assert_eq!(lr_at(0, &cfg, total).unwrap(), 0.0);
        assert_eq!(lr_at(5000, &cfg, total).unwrap(), 2e-4);
        assert!((lr_at(total, &cfg, total).unwrap() - 2e-5).abs() < 1e-18);
        let mid = 5000 + (total - 5000) / 2;
        assert!((lr_at(mid, &cfg, total).unwrap() - 1.1e-4).abs() < 1e-15);
        assert!(lr_at(10, &cfg, 5000).is_err());
        assert!(lr_at(total + 1, &cfg, total).is_err());
    }

    #[test]
    fn lr_is_continuous() {
        let cfg = TrainConfig {
            warmup_steps: 50,
            ..TrainConfig::default()
        };
        let total = 400;
        let bound = cfg.lr_init / cfg.warmup_steps as f64;
        let lrs: Vec<f64> = (0..=total).map(|s| lr_at(s, &cfg, total).unwrap()).collect();
        for w in lrs.windows(2) {
            assert!((w[1] - w[0]).abs() <= bound * (1.0 + 1e-12));
        }
        let no_warmup = TrainConfig {
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &no_warmup, 10).unwrap(), no_warmup.lr_init);
    }

    #[test]
    fn timestep_histogram_is_uniform() {
        let mut rng = Rng::new(99);
        let n = 20;
        let draws = 200_000;
        let mut counts = vec![0usize; n + 1];
        for _ in 0..draws {
            counts[draw_timestep(&mut rng, n)] += 1;
        }
        assert_eq!(counts[0], 0);
        let p = 1.0 / n as f64;
        let expect = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - expect).abs() < 3.0 * sd, "count {c} vs {expect}±{sd}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_pairs(4, 12, 5);
        let cfg = tiny_cfg();
        let (p1, h1) = train(&data, &data[..2], &cfg).unwrap();
        let (p2, h2) = train(&data, &data[..2], &cfg).unwrap();
        assert_eq!(p1.flatten(), p2.flatten());
        assert_eq!(h1, h2);
        assert_eq!(h1.steps.len(), 4);
        assert!(h1.steps.iter().zip(1..).all(|(s, i)| s.step == i));
        assert!(h1.last_validation().unwrap().ssim.is_some());
    }

    #[test]
    fn loss_decreases_on_toy_problem() {
        let data = toy_pairs(8, 12, 6);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            warmup_steps: 5,
            lr_init: 3e-3,
            ..tiny_cfg()
        };
        let (_, h) = train(&data, &[], &cfg).unwrap();
        let first = h.epochs[0].mean_loss;
        let last = h.epochs.last().unwrap().mean_loss;
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn hook_sees_every_epoch() {
        let data = toy_pairs(3, 8, 1);
        let mut seen = Vec::new();
        train_with_hook(&data, &[], &tiny_cfg(), &mut |e, _, h| {
            seen.push((e, h.epochs.len()));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(1, 1), (2, 2)]);
    }

    #[test]
    fn rejects_bad_config() {
        let data = toy_pairs(2, 8, 1);
        let bad = TrainConfig {
            lr_min: 1.0,
            ..tiny_cfg()
        };
        assert!(train(&data, &[], &bad).is_err());
        assert!(train(&[], &[], &tiny_cfg()).is_err());
        let short = TrainConfig {
            warmup_steps: 100,
            ..tiny_cfg()
        };
        assert!(train(&data, &[], &short).is_err());
    }

    #[test]
    fn divergence_returns_last_good() {
        let data = toy_pairs(2, 8, 1);
        let cfg = TrainConfig {
            lr_init: 1e300,
            lr_min: 0.0,
            warmup_steps: 0,
            epochs: 3,
            ..tiny_cfg()
        };
        match train(&data, &[], &cfg) {
            Err(Error::Diverged { last_good, step, .. }) => {
                assert!(step >= 1);
                assert!(last_good.flatten().iter().all(|w| w.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_json_roundtrip_and_partial() {
        let cfg = TrainConfig::full_scale();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), cfg);
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.batch_size, TrainConfig::default().batch_size);
    }
}
