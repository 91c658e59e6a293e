//! Desk-scale end-to-end experiment: phantoms, simulated motion at each
//! level, training, correction and evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{ConvDenoiser, DenoiserParams, LossMode};
use crate::diffusion::sample_batch;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{evaluate_corpus, EvalMeta, EvalReport, Summary};
use crate::motionsim::{simulate, MotionLevel, MotionSpec, PhaseAxis, SlabEvent};
use crate::phantom::{phantom_set, PhantomConfig};
use crate::rng::{stage_seed, Rng};
use crate::train::{lr_at, train_from, Pair, TrainConfig, TrainHistory};

/// Corrupt every image; image `i` draws its events from `Rng::stream(seed, i)`.
pub fn simulate_corpus(
    clean: &[Image],
    spec: &MotionSpec,
    noise_sigma: f64,
    seed: u64,
    id_prefix: &str,
) -> Result<(Vec<Pair>, Vec<Vec<SlabEvent>>)> {
    let sims = clean
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let sim = simulate(img, spec, noise_sigma, &mut Rng::stream(seed, i as u64))?;
            Ok((
                Pair {
                    id: format!("{id_prefix}{i:04}"),
                    clean: img.clone(),
                    corrupted: sim.corrupted,
                },
                sim.events,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sims.into_iter().unzip())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub image_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Levels mixed (round robin) into the training set.
    pub train_levels: Vec<MotionLevel>,
    /// Levels evaluated on the held-out set.
    pub eval_levels: Vec<MotionLevel>,
    pub phase_axis: PhaseAxis,
    pub noise_sigma: f64,
    /// Also train the other loss mode from the same initialization.
    pub ablation: bool,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            image_size: 32,
            n_train: 2000,
            n_test: 50,
            train_levels: MotionLevel::ALL.to_vec(),
            eval_levels: MotionLevel::ALL.to_vec(),
            phase_axis: PhaseAxis::Rows,
            noise_sigma: 0.0,
            ablation: false,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: MotionLevel,
    pub corrupted: EvalReport,
    pub corrected: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub loss_mode: LossMode,
    pub levels: Vec<LevelResult>,
    pub history: TrainHistory,
    /// Wall-clock training time; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// The configured loss mode first, then the ablation arm if requested.
    pub arms: Vec<ArmResult>,
}

fn metric_rows(r: &EvalReport) -> [(&'static str, Summary); 4] {
    [
        ("psnr_db", r.aggregate.psnr_db),
        ("ssim", r.aggregate.ssim),
        ("nmse_percent", r.aggregate.nmse_percent),
        ("pearson_r", r.aggregate.pearson_r),
    ]
}

impl ExperimentReport {
    pub fn primary(&self) -> &ArmResult {
        &self.arms[0]
    }

    pub fn arm(&self, mode: LossMode) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.loss_mode == mode)
    }

    /// Rows `metric x level`, columns corrupted and corrected (mean and std).
    pub fn table1_csv(&self) -> String {
        let mut out = String::from("metric,level,corrupted_mean,corrupted_std,corrected_mean,corrected_std\n");
        let levels = &self.primary().levels;
        for m in 0..4 {
            for lv in levels {
                let (name, a) = metric_rows(&lv.corrupted)[m];
                let (_, b) = metric_rows(&lv.corrected)[m];
                let _ = writeln!(out, "{name},{},{},{},{},{}", lv.level, a.mean, a.std, b.mean, b.std);
            }
        }
        out
    }

    /// Loss-mode comparison: one row per (level, loss mode).
    pub fn table2_csv(&self) -> String {
        let mut out = String::from(
            "level,loss,psnr_mean,psnr_std,ssim_mean,ssim_std,nmse_mean,nmse_std\n",
        );
        let Some(first) = self.arms.first() else { return out };
        for (i, lv) in first.levels.iter().enumerate() {
            for arm in &self.arms {
                let a = &arm.levels[i].corrected.aggregate;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    lv.level,
                    arm.loss_mode,
                    a.psnr_db.mean,
                    a.psnr_db.std,
                    a.ssim.mean,
                    a.ssim.std,
                    a.nmse_percent.mean,
                    a.nmse_percent.std
                );
            }
        }
        out
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Held-out pairs for one level; also used by the training mixture.
fn level_pairs(clean: &[Image], cfg: &ExperimentConfig, level: MotionLevel, tag: &str) -> Result<Vec<Pair>> {
    let spec = MotionSpec::new(level).with_phase_axis(cfg.phase_axis);
    let seed = stage_seed(cfg.seed, &format!("simulate-{tag}-{level}"));
    Ok(simulate_corpus(clean, &spec, cfg.noise_sigma, seed, &format!("{tag}-{level}-"))?.0)
}

fn training_pairs(cfg: &ExperimentConfig) -> Result<Vec<Pair>> {
    if cfg.train_levels.is_empty() {
        return Err(Error::invalid("no training levels"));
    }
    let clean = phantom_set(&PhantomConfig::new(cfg.image_size), cfg.n_train, stage_seed(cfg.seed, "phantoms-train"));
    let mut per_level = Vec::new();
    for &level in &cfg.train_levels {
        per_level.push(level_pairs(&clean, cfg, level, "train")?);
    }
    Ok((0..clean.len())
        .map(|i| per_level[i % per_level.len()][i].clone())
        .collect())
}

fn evaluate_arm(
    params: &DenoiserParams,
    test: &[(MotionLevel, Vec<Pair>)],
    cfg: &ExperimentConfig,
    mode: LossMode,
) -> Result<Vec<LevelResult>> {
    let net = ConvDenoiser::new(params.clone());
    let s = cfg.train.schedule.with_steps(cfg.train.sample_steps).build()?;
    let mut out = Vec::new();
    for (level, pairs) in test {
        let ys: Vec<&Image> = pairs.iter().map(|p| &p.corrupted).collect();
        let seed = stage_seed(cfg.seed, &format!("correct-{level}"));
        let corrected = stage("correct", sample_batch(&ys, &net, &s, seed))?;
        let meta = |method: &str| EvalMeta {
            dataset: format!("phantom{}", cfg.image_size),
            level: level.to_string(),
            method: method.to_string(),
        };
        let before: Vec<_> = pairs.iter().map(|p| (p.id.clone(), p.corrupted.clone(), p.clean.clone())).collect();
        let after: Vec<_> = pairs
            .iter()
            .zip(corrected)
            .map(|(p, c)| (p.id.clone(), c, p.clean.clone()))
            .collect();
        out.push(LevelResult {
            level: *level,
            corrupted: stage("evaluate", evaluate_corpus(&before, meta("corrupted")))?,
            corrected: stage("evaluate", evaluate_corpus(&after, meta(&format!("corrected-{mode}"))))?,
        });
    }
    Ok(out)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, None)
}

/// Run the experiment, skipping training when `pretrained` is given.
pub fn run_experiment_with(cfg: &ExperimentConfig, pretrained: Option<&DenoiserParams>) -> Result<ExperimentReport> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::invalid("n_train and n_test must be positive"));
    }
    let train_cfg = TrainConfig {
        seed: stage_seed(cfg.seed, "train"),
        ..cfg.train.clone()
    };
    stage("config", train_cfg.validate())?;
    let total_steps = train_cfg.epochs * train_cfg.steps_per_epoch(cfg.n_train);
    stage("config", lr_at(0, &train_cfg, total_steps))?;
    let data = stage("simulate", training_pairs(cfg))?;
    let test_clean = phantom_set(&PhantomConfig::new(cfg.image_size), cfg.n_test, stage_seed(cfg.seed, "phantoms-test"));
    let mut test = Vec::new();
    for &level in &cfg.eval_levels {
        test.push((level, stage("simulate", level_pairs(&test_clean, cfg, level, "test"))?));
    }

    let mut modes = vec![cfg.train.loss_mode];
    if cfg.ablation && pretrained.is_none() {
        modes.push(match cfg.train.loss_mode {
            LossMode::L1L2 => LossMode::L2,
            LossMode::L2 => LossMode::L1L2,
        });
    }
    let init = match pretrained {
        Some(p) => p.clone(),
        None => stage("init", DenoiserParams::init(train_cfg.layer_spec, &mut Rng::stream(train_cfg.seed, 0)))?,
    };
    let mut arms = Vec::new();
    for mode in modes {
        let started = Instant::now();
        let (params, history) = match pretrained {
            Some(p) => (p.clone(), TrainHistory::default()),
            None => {
                let arm_cfg = TrainConfig {
                    loss_mode: mode,
                    ..train_cfg.clone()
                };
                log::info!("training {mode} arm on {} pairs", data.len());
                stage("train", train_from(init.clone(), &data, &[], &arm_cfg, &mut |_, _, _| Ok(())))?
            }
        };
        let train_seconds = started.elapsed().as_secs_f64();
        let levels = evaluate_arm(&params, &test, cfg, mode)?;
        arms.push(ArmResult {
            loss_mode: mode,
            levels,
            history,
            train_seconds,
        });
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        arms,
    })
}
