use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use resmoco_core::denoiser::{read_checkpoint, read_meta, write_checkpoint, write_meta, CheckpointMeta};
use resmoco_core::diffusion::sample;
use resmoco_core::experiment::{run_experiment_with, ExperimentConfig};
use resmoco_core::imageio::{list_slices, normalize, read_nifti1, read_slice, slice_iter, write_nifti1, write_raw_slice};
use resmoco_core::metrics::{evaluate_corpus, EvalMeta};
use resmoco_core::motionsim::simulate as simulate_one;
use resmoco_core::phantom::{phantom_set, PhantomConfig};
use resmoco_core::rng::stage_seed;
use resmoco_core::schedule::DEFAULT_SAMPLE_STEPS;
use resmoco_core::train::train_with_hook;
use resmoco_core::{
    ConvDenoiser, Denoiser, Error, Image, MotionLevel, MotionSpec, OracleDenoiser, Pair, Rng, SlabEvent,
    TrainConfig, Volume,
};
use serde::Serialize;

use crate::settings::Settings;
use crate::CliError;

type Res<T = ()> = Result<T, CliError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| Error::io(path, e).into()
}

fn create_dir(path: &Path) -> Res {
    fs::create_dir_all(path).map_err(io(path))
}

fn write_text(path: &Path, text: &str) -> Res {
    fs::write(path, text).map_err(io(path))
}

/// `(id, image)` from a slice directory or the axial slices of a NIfTI-1 volume.
fn load_slices(path: &Path) -> Res<Vec<(String, Image)>> {
    if !path.exists() {
        return Err(Error::io(path, std::io::ErrorKind::NotFound.into()).into());
    }
    if path.is_dir() {
        return list_slices(path)?
            .into_iter()
            .map(|p| {
                let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                Ok((id, read_slice(&p)?))
            })
            .collect();
    }
    let volume = normalize(&read_nifti1(path)?)?;
    let slices = slice_iter(&volume, 2)?
        .enumerate()
        .map(|(z, img)| (format!("slice_{z:04}"), img))
        .collect();
    Ok(slices)
}

fn nonempty(slices: Vec<(String, Image)>, path: &Path) -> Res<Vec<(String, Image)>> {
    if slices.is_empty() {
        return Err(CliError::usage(format!("{}: no slices found", path.display())));
    }
    Ok(slices)
}

/// Matches `a` and `b` by id; every id must appear in both.
fn match_ids(a: Vec<(String, Image)>, b: Vec<(String, Image)>, what: &str) -> Res<Vec<(String, Image, Image)>> {
    let mut b: std::collections::BTreeMap<_, _> = b.into_iter().collect();
    let mut out = Vec::with_capacity(a.len());
    for (id, x) in a {
        let y = b
            .remove(&id)
            .ok_or_else(|| CliError::usage(format!("{id}: no matching {what} slice")))?;
        out.push((id, x, y));
    }
    if let Some(id) = b.keys().next() {
        return Err(CliError::usage(format!("{id}: {what} slice has no counterpart")));
    }
    Ok(out)
}

fn write_slices<'a>(dir: &Path, items: impl IntoIterator<Item = (&'a str, &'a Image)>) -> Res {
    create_dir(dir)?;
    for (id, img) in items {
        write_raw_slice(img, &dir.join(format!("{id}.rslc")))?;
    }
    Ok(())
}

pub fn phantoms(s: &Settings) -> Res {
    let seed = s.seed()?;
    let out = s.out()?;
    let count = s.count.unwrap_or(16);
    let size = s.size.unwrap_or(32);
    if count == 0 || size < 8 {
        return Err(CliError::usage("--count must be positive and --size at least 8"));
    }
    let images = phantom_set(&PhantomConfig::new(size), count, stage_seed(seed, "phantoms"));
    let ids: Vec<String> = (0..count).map(|i| format!("phantom_{i:04}")).collect();
    write_slices(out, ids.iter().map(String::as_str).zip(&images))?;
    if let Some(path) = &s.nifti {
        let mut data = Vec::with_capacity(size * size * count);
        for img in &images {
            data.extend(img.data().iter().map(|&v| v as f32));
        }
        write_nifti1(&Volume::new((size, size, count), (1.0, 1.0, 1.0), data)?, path)?;
    }
    println!("wrote {count} phantoms of {size}x{size} to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct EventLine<'a> {
    id: &'a str,
    level: MotionLevel,
    events: &'a [SlabEvent],
}

pub fn simulate(s: &Settings) -> Res {
    let seed = s.seed()?;
    let out = s.out()?;
    let input = s.required(&s.input, "input")?;
    let level = s.level.unwrap_or(MotionLevel::Moderate);
    let spec = MotionSpec::new(level).with_phase_axis(s.phase_axis.unwrap_or_default());
    let noise_sigma = s.noise_sigma.unwrap_or(0.0);
    let clean = nonempty(load_slices(input)?, input)?;

    let root = stage_seed(seed, "simulate");
    let sims = clean
        .par_iter()
        .enumerate()
        .map(|(i, (id, img))| {
            simulate_one(img, &spec, noise_sigma, &mut Rng::stream(root, i as u64)).map_err(|e| Error::InImage {
                id: id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    write_slices(&out.join("clean"), clean.iter().map(|(id, img)| (id.as_str(), img)))?;
    write_slices(&out.join("corrupt"), clean.iter().zip(&sims).map(|((id, _), sim)| (id.as_str(), &sim.corrupted)))?;
    if let Some(path) = &s.events_out {
        let mut text = String::new();
        for ((id, _), sim) in clean.iter().zip(&sims) {
            let line = EventLine {
                id,
                level,
                events: &sim.events,
            };
            text.push_str(&serde_json::to_string(&line).map_err(Error::from)?);
            text.push('\n');
        }
        write_text(path, &text)?;
    }
    println!("simulated {} {level} slices into {}", clean.len(), out.display());
    Ok(())
}

/// Training config from flags on top of the desk-scale defaults.
fn train_config(s: &Settings, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: s.epochs.unwrap_or(d.epochs),
        batch_size: s.batch_size.unwrap_or(d.batch_size),
        lr_init: s.lr_init.unwrap_or(d.lr_init),
        lr_min: s.lr_min.unwrap_or(d.lr_min),
        warmup_steps: s.warmup_steps.unwrap_or(d.warmup_steps),
        seed,
        schedule: s.schedule(),
        loss_mode: s.loss.unwrap_or(d.loss_mode),
        checkpoint_every: s.checkpoint_every.unwrap_or(d.checkpoint_every),
        validate_every: s.validate_every.unwrap_or(d.validate_every),
        sample_steps: s.steps.unwrap_or(d.sample_steps),
        layer_spec: d.layer_spec,
    }
}

/// Pairs from a directory holding `clean/` and `corrupt/`.
fn load_pairs(dir: &Path) -> Res<Vec<Pair>> {
    let clean = nonempty(load_slices(&dir.join("clean"))?, &dir.join("clean"))?;
    let corrupt = load_slices(&dir.join("corrupt"))?;
    Ok(match_ids(clean, corrupt, "corrupt")?
        .into_iter()
        .map(|(id, clean, corrupted)| Pair { id, clean, corrupted })
        .collect())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn save(params: &resmoco_core::DenoiserParams, meta: &CheckpointMeta, path: &Path) -> Res {
    write_checkpoint(params, path)?;
    write_meta(meta, path)?;
    Ok(())
}

pub fn train(s: &Settings) -> Res {
    let seed = s.seed()?;
    let out = s.out()?.to_path_buf();
    let data = load_pairs(s.required(&s.input, "input")?)?;
    let validation = match &s.val {
        Some(dir) => load_pairs(dir)?,
        None => Vec::new(),
    };
    let cfg = train_config(s, stage_seed(seed, "train"));
    let meta = |epoch: Option<usize>| CheckpointMeta {
        layer_spec: cfg.layer_spec,
        schedule: cfg.schedule,
        loss_mode: cfg.loss_mode,
        seed,
        train: Some(cfg.clone()),
        epoch,
    };
    let mut hook = |epoch: usize, params: &resmoco_core::DenoiserParams, _: &resmoco_core::TrainHistory| {
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            log::info!("epoch {epoch}: checkpoint {}", out.display());
            write_checkpoint(params, &out)?;
            write_meta(&meta(Some(epoch)), &out)?;
        }
        Ok(())
    };
    let started = Instant::now();
    let (params, history) = match train_with_hook(&data, &validation, &cfg, &mut hook) {
        Ok(r) => r,
        Err(Error::Diverged { step, loss, last_good }) => {
            let path = with_suffix(&out, ".last_good");
            save(&last_good, &meta(None), &path)?;
            eprintln!("last finite parameters saved to {}", path.display());
            return Err(Error::Diverged { step, loss, last_good }.into());
        }
        Err(e) => return Err(e.into()),
    };
    save(&params, &meta(Some(cfg.epochs)), &out)?;
    let history_path = s.history.clone().unwrap_or_else(|| with_suffix(&out, ".history.csv"));
    write_text(&history_path, &history.steps_csv())?;
    write_text(&with_suffix(&history_path, ".epochs.csv"), &history.epochs_csv())?;
    let last = history.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} pairs in {:.1}s, final mean loss {last:.6}; checkpoint {}",
        cfg.epochs,
        data.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BatchTiming {
    batch: usize,
    images: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct Timing {
    steps: usize,
    images: usize,
    total_seconds: f64,
    seconds_per_image: f64,
    seconds_per_step: f64,
    batches: Vec<BatchTiming>,
}

enum Model {
    Net(ConvDenoiser),
    Oracle(Vec<OracleDenoiser>),
}

impl Model {
    fn for_item(&self, i: usize) -> &dyn Denoiser {
        match self {
            Model::Net(net) => net,
            Model::Oracle(truths) => &truths[i],
        }
    }
}

/// Corrupted inputs: the `corrupt/` subdirectory when present.
fn corrupted_dir(input: &Path) -> PathBuf {
    let sub = input.join("corrupt");
    if sub.is_dir() {
        sub
    } else {
        input.to_path_buf()
    }
}

pub fn correct(s: &Settings) -> Res {
    let seed = s.seed()?;
    let out = s.out()?;
    let input = corrupted_dir(s.required(&s.input, "input")?);
    let steps = s.steps.unwrap_or(DEFAULT_SAMPLE_STEPS);
    let checkpoint = if s.oracle {
        None
    } else {
        let path = s.required(&s.checkpoint, "checkpoint")?;
        let params = read_checkpoint(path)?;
        let meta = read_meta(path)?;
        if meta.layer_spec != *params.spec() {
            return Err(CliError::usage(format!("{}: layer spec disagrees with its metadata", path.display())));
        }
        if s.overrides_schedule() && s.schedule() != meta.schedule {
            return Err(CliError::usage(format!(
                "schedule flags {:?} disagree with the checkpoint's training schedule {:?}",
                s.schedule(),
                meta.schedule
            )));
        }
        Some((params, meta))
    };
    let corrupted = nonempty(load_slices(&input)?, &input)?;

    let (model, params, ids, ys) = match checkpoint {
        Some((params, meta)) => {
            let (ids, ys) = corrupted.into_iter().unzip();
            (Model::Net(ConvDenoiser::new(params)), meta.schedule, ids, ys)
        }
        None => {
            let reference = load_slices(s.required(&s.reference, "ref")?)?;
            let mut ids = Vec::new();
            let mut ys = Vec::new();
            let mut truths = Vec::new();
            for (id, y, x) in match_ids(corrupted, reference, "reference")? {
                ids.push(id);
                ys.push(y);
                truths.push(OracleDenoiser::new(x));
            }
            (Model::Oracle(truths), s.schedule(), ids, ys)
        }
    };
    let schedule = params.with_steps(steps).build()?;
    let batch = s.batch_size.unwrap_or(8).max(1);
    let root = stage_seed(seed, "correct");

    let started = Instant::now();
    let mut corrected: Vec<Image> = Vec::with_capacity(ys.len());
    let mut batches = Vec::new();
    for (b, chunk) in (0..ys.len()).collect::<Vec<_>>().chunks(batch).enumerate() {
        let t0 = Instant::now();
        let part = chunk
            .par_iter()
            .map(|&i| {
                sample(&ys[i], model.for_item(i), &schedule, &mut Rng::stream(root, i as u64)).map_err(|e| {
                    Error::InImage {
                        id: ids[i].clone(),
                        source: Box::new(e),
                    }
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        corrected.extend(part);
        let seconds = t0.elapsed().as_secs_f64();
        log::info!("batch {b}: {} images in {seconds:.3}s", chunk.len());
        batches.push(BatchTiming {
            batch: b,
            images: chunk.len(),
            seconds,
        });
    }
    let total = started.elapsed().as_secs_f64();
    write_slices(out, ids.iter().map(String::as_str).zip(&corrected))?;

    let n = corrected.len();
    let timing = Timing {
        steps,
        images: n,
        total_seconds: total,
        seconds_per_image: total / n as f64,
        seconds_per_step: total / (n * steps) as f64,
        batches,
    };
    let json = serde_json::to_string_pretty(&timing).map_err(Error::from)?;
    write_text(&out.join("timing.json"), &(json + "\n"))?;
    println!(
        "corrected {n} slices with {steps} steps in {total:.3}s ({:.4}s per image, {:.5}s per step)",
        timing.seconds_per_image, timing.seconds_per_step
    );
    Ok(())
}

pub fn evaluate(s: &Settings) -> Res {
    let pred_dir = s.required(&s.pred, "pred")?;
    let ref_dir = s.required(&s.reference, "ref")?;
    let out = s.out()?;
    let pred = nonempty(load_slices(pred_dir)?, pred_dir)?;
    let reference = load_slices(ref_dir)?;
    let pairs = match_ids(pred, reference, "reference")?;
    let meta = EvalMeta {
        dataset: ref_dir.display().to_string(),
        level: s.level.map(|l| l.to_string()).unwrap_or_default(),
        method: pred_dir.display().to_string(),
    };
    let report = evaluate_corpus(&pairs, meta)?;
    report.write(out)?;
    let a = &report.aggregate;
    println!(
        "{} images: PSNR {} dB, SSIM {}, NMSE {} %, r {}",
        report.count, a.psnr_db, a.ssim, a.nmse_percent, a.pearson_r
    );
    Ok(())
}

pub fn schedule_dump(s: &Settings) -> Res {
    let mut params = s.schedule();
    if let Some(n) = s.steps {
        params = params.with_steps(n);
    }
    let schedule = params.build()?;
    let mut csv = String::from("t,beta,alpha,sigma\n");
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let _ = writeln!(w, "{:>4} {:>22} {:>22} {:>22}", "t", "beta", "alpha", "sigma");
    for t in 1..=schedule.n_steps() {
        let (beta, alpha, sigma) = (schedule.beta(t)?, schedule.alpha(t)?, schedule.noise_stddev(t)?);
        let _ = writeln!(w, "{t:>4} {beta:>22.15e} {alpha:>22.15e} {sigma:>22.15e}");
        csv.push_str(&format!("{t},{beta},{alpha},{sigma}\n"));
    }
    if let Some(path) = &s.out {
        write_text(path, &csv)?;
    }
    Ok(())
}

fn experiment_config(s: &Settings, base: ExperimentConfig) -> ExperimentConfig {
    let mut cfg = base;
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    if let Some(level) = s.level {
        cfg.train_levels = vec![level];
        cfg.eval_levels = vec![level];
    }
    cfg.image_size = s.size.unwrap_or(cfg.image_size);
    cfg.n_train = s.n_train.unwrap_or(cfg.n_train);
    cfg.n_test = s.n_test.unwrap_or(cfg.n_test);
    cfg.phase_axis = s.phase_axis.unwrap_or(cfg.phase_axis);
    cfg.noise_sigma = s.noise_sigma.unwrap_or(cfg.noise_sigma);
    cfg.ablation |= s.ablation;
    let t = &mut cfg.train;
    t.epochs = s.epochs.unwrap_or(t.epochs);
    t.batch_size = s.batch_size.unwrap_or(t.batch_size);
    t.lr_init = s.lr_init.unwrap_or(t.lr_init);
    t.lr_min = s.lr_min.unwrap_or(t.lr_min);
    t.warmup_steps = s.warmup_steps.unwrap_or(t.warmup_steps);
    t.loss_mode = s.loss.unwrap_or(t.loss_mode);
    t.sample_steps = s.steps.unwrap_or(t.sample_steps);
    if s.overrides_schedule() {
        t.schedule = s.schedule();
    }
    cfg
}

pub fn experiment(s: &Settings) -> Res {
    s.seed()?;
    let out = s.out()?;
    let cfg = experiment_config(s, ExperimentConfig::default());
    let pretrained = match &s.checkpoint {
        Some(path) => Some(read_checkpoint(path)?),
        None => None,
    };
    let started = Instant::now();
    let report = run_experiment_with(&cfg, pretrained.as_ref())?;
    create_dir(out)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write_text(&out.join("report.json"), &(json + "\n"))?;
    write_text(&out.join("table1.csv"), &report.table1_csv())?;
    write_text(&out.join("table2.csv"), &report.table2_csv())?;
    for arm in &report.arms {
        write_text(&out.join(format!("history_{}.csv", arm.loss_mode)), &arm.history.steps_csv())?;
    }
    for arm in &report.arms {
        for lv in &arm.levels {
            println!(
                "{:>5} {:>8}: PSNR {} -> {} dB, NMSE {} -> {} %",
                arm.loss_mode.to_string(),
                lv.level.to_string(),
                lv.corrupted.aggregate.psnr_db,
                lv.corrected.aggregate.psnr_db,
                lv.corrupted.aggregate.nmse_percent,
                lv.corrected.aggregate.nmse_percent
            );
        }
    }
    println!("experiment finished in {:.1}s; results in {}", started.elapsed().as_secs_f64(), out.display());
    Ok(())
}
