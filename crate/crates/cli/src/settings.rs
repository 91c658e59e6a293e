//! Flags shared by every subcommand and their JSON config-file mirror.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use resmoco_core::schedule::{default_beta_1, DEFAULT_BETA_N, DEFAULT_GAMMA, DEFAULT_P, DEFAULT_TRAIN_STEPS};
use resmoco_core::{LossMode, MotionLevel, PhaseAxis, ScheduleParams};
use serde::Deserialize;

use crate::CliError;

/// Every flag. A config file holds the same keys (without the leading
/// dashes); flags given on the command line win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// Master seed; required by every stochastic subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Key-value JSON file with defaults for any of these flags.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Motion level: minor, moderate or heavy.
    #[arg(long, global = true)]
    pub level: Option<MotionLevel>,
    /// Reverse (sampling) steps, or the step count for schedule-dump.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Forward steps of the training schedule.
    #[arg(long, global = true)]
    pub train_steps: Option<usize>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    #[arg(long = "beta-1", global = true)]
    #[serde(rename = "beta-1")]
    pub beta_1: Option<f64>,
    #[arg(long = "beta-n", global = true)]
    #[serde(rename = "beta-n")]
    pub beta_n: Option<f64>,
    /// Worker threads (default 1).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output path (file or directory depending on the subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Input slices: a directory of .rslc/.pgm files or a NIfTI-1 volume.
    #[arg(long, global = true, alias = "data")]
    #[serde(alias = "data")]
    pub input: Option<PathBuf>,
    /// Directory of reference (motion-free) slices.
    #[arg(long = "ref", global = true, alias = "reference")]
    #[serde(rename = "ref", alias = "reference")]
    pub reference: Option<PathBuf>,
    /// Directory of predicted slices (evaluate).
    #[arg(long, global = true)]
    pub pred: Option<PathBuf>,
    /// Validation data directory (train).
    #[arg(long, global = true)]
    pub val: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Use the ground-truth oracle denoiser (requires --ref).
    #[arg(long, global = true)]
    #[serde(default)]
    pub oracle: bool,
    /// Loss: l2 or l1l2.
    #[arg(long, global = true)]
    pub loss: Option<LossMode>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr_init: Option<f64>,
    #[arg(long, global = true)]
    pub lr_min: Option<f64>,
    #[arg(long, global = true)]
    pub warmup_steps: Option<usize>,
    #[arg(long, global = true)]
    pub validate_every: Option<usize>,
    #[arg(long, global = true)]
    pub checkpoint_every: Option<usize>,
    /// Phase-encode axis: rows or cols.
    #[arg(long, global = true)]
    pub phase_axis: Option<PhaseAxis>,
    /// Standard deviation of additive Gaussian noise after corruption.
    #[arg(long, global = true)]
    pub noise_sigma: Option<f64>,
    /// JSON-lines file receiving the drawn slab events.
    #[arg(long, global = true)]
    pub events_out: Option<PathBuf>,
    /// Number of phantoms.
    #[arg(long, global = true)]
    pub count: Option<usize>,
    /// Phantom side length in pixels.
    #[arg(long, global = true)]
    pub size: Option<usize>,
    /// Also write the phantoms as a NIfTI-1 volume.
    #[arg(long, global = true)]
    pub nifti: Option<PathBuf>,
    /// Training history CSV (train).
    #[arg(long, global = true)]
    pub history: Option<PathBuf>,
    /// Train both loss modes from one initialization (experiment).
    #[arg(long, global = true)]
    #[serde(default)]
    pub ablation: bool,
    #[arg(long, global = true)]
    pub n_train: Option<usize>,
    #[arg(long, global = true)]
    pub n_test: Option<usize>,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),* $(,)?) => {
        $( $a.$f = $a.$f.take().or($b.$f.take()); )*
    };
}

impl Settings {
    /// Fill unset flags from the config file, if one was given.
    pub fn resolve(mut self) -> Result<Settings, CliError> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let mut file = read_config(&path)?;
        prefer!(self, file;
            seed, level, steps, train_steps, gamma, p, beta_1, beta_n, jobs, out, input, reference, pred,
            val, checkpoint, loss, batch_size, epochs, lr_init, lr_min, warmup_steps, validate_every,
            checkpoint_every, phase_axis, noise_sigma, events_out, count, size, nifti, history, n_train,
            n_test,
        );
        self.oracle |= file.oracle;
        self.ablation |= file.ablation;
        Ok(self)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::usage("--seed is required for this subcommand"))
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::usage("--out is required"))
    }

    pub fn required<'a>(&self, v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        v.as_deref().ok_or_else(|| CliError::usage(format!("--{flag} is required")))
    }

    /// Training-grid schedule parameters from the flags.
    pub fn schedule(&self) -> ScheduleParams {
        let gamma = self.gamma.unwrap_or(DEFAULT_GAMMA);
        ScheduleParams {
            n_steps: self.train_steps.unwrap_or(DEFAULT_TRAIN_STEPS),
            p: self.p.unwrap_or(DEFAULT_P),
            gamma,
            beta_1: self.beta_1.unwrap_or_else(|| default_beta_1(gamma)),
            beta_n: self.beta_n.unwrap_or(DEFAULT_BETA_N),
        }
    }

    /// True if any schedule hyperparameter was given explicitly.
    pub fn overrides_schedule(&self) -> bool {
        self.train_steps.is_some()
            || self.gamma.is_some()
            || self.p.is_some()
            || self.beta_1.is_some()
            || self.beta_n.is_some()
    }
}

fn read_config(path: &Path) -> Result<Settings, CliError> {
    let text = fs::read_to_string(path).map_err(|e| resmoco_core::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}
