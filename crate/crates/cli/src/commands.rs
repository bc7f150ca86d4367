use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somo_core::metrics::{default_horizons, evaluate};
use somo_core::model::{History, MotionModel};
use somo_core::motion::{generate_synthetic_scene, load_scene, save_scene, save_scene_json, MultiPersonScene};
use somo_core::predictor::attention_csv;
use somo_core::training::{
    loss_log_csv, small_gradient_setup, split_indices, verify_gradients, Checkpoint, EpochRecord, Sample,
    Trainer,
};
use somo_core::SomoError;

use crate::config::CliConfig;

fn create_dir(dir: &Path) -> Result<(), SomoError> {
    fs::create_dir_all(dir).map_err(|e| SomoError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), SomoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| SomoError::io(path, e))
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a PathBuf, SomoError> {
    value
        .as_ref()
        .ok_or_else(|| SomoError::Config(format!("{what} not given (use {flag} or the config file)")))
}

pub fn generate(c: &CliConfig) -> anyhow::Result<()> {
    c.scene.validate()?;
    let out = c.out_dir();
    create_dir(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(0));
    for index in 0..c.gen.count {
        let scene = generate_synthetic_scene(&c.scene, rng.gen())?;
        let path = out.join(format!("scene_{index}.json"));
        save_scene_json(&scene, &path)?;
        log::debug!("wrote {}", path.display());
    }
    log::info!("wrote {} scenes to {}", c.gen.count, out.display());
    Ok(())
}

/// Scene files in `dir`, ordered by the number in their name and then by
/// name.
fn scene_files(dir: &Path) -> Result<Vec<PathBuf>, SomoError> {
    let entries = fs::read_dir(dir).map_err(|e| SomoError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| SomoError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if matches!(ext, "json" | "somo" | "bin") {
            files.push(path);
        }
    }
    let key = |p: &PathBuf| {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let digits: String = name.chars().filter(char::is_ascii_digit).collect();
        (digits.parse::<u64>().unwrap_or(u64::MAX), name)
    };
    files.sort_by_key(key);
    Ok(files)
}

pub fn train(c: &CliConfig) -> anyhow::Result<()> {
    let data_dir = required(&c.paths.data_dir, "training data directory", "--data")?;
    let out = c.out_dir();
    let checkpoint_dir = c.paths.checkpoint_dir.clone().unwrap_or_else(|| out.join("checkpoints"));
    let mut train_config = c.train.clone();
    if let Some(seed) = c.seed {
        train_config.seed = seed;
    }

    let (mut trainer, mut log) = match &c.paths.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.model_config != c.model {
                log::info!("using the model configuration stored in {}", path.display());
            }
            let trainer = ck.into_trainer(Some(train_config))?;
            let previous = read_loss_log(&out.join("loss_log.csv"), trainer.epoch);
            log::info!("resuming after epoch {}", trainer.epoch);
            (trainer, previous)
        }
        None => {
            let model = MotionModel::new(c.model.clone(), train_config.seed)?;
            (Trainer::new(model, train_config)?, Vec::new())
        }
    };

    let files = scene_files(data_dir)?;
    if files.is_empty() {
        return Err(SomoError::Input(format!("no scene files in {}", data_dir.display())).into());
    }
    let observed = trainer.model.config.observed_frames;
    let horizon = trainer.config.horizon;
    let mut samples = Vec::with_capacity(files.len());
    for f in &files {
        let scene = load_scene(f)?;
        let sample = Sample::from_scene(&scene, observed, horizon).with_context(|| format!("{}", f.display()))?;
        samples.push(sample);
    }
    let (train_idx, val_idx) = split_indices(samples.len(), trainer.config.val_fraction);
    let val: Vec<Sample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
    samples.truncate(train_idx.len());
    log::info!(
        "{} training and {} validation scenes, {} parameters",
        samples.len(),
        val.len(),
        trainer.model.params.num_scalars()
    );

    create_dir(&checkpoint_dir)?;
    let log_path = out.join("loss_log.csv");
    trainer.train(&samples, &val, |t: &Trainer, record: &EpochRecord| {
        let ck = Checkpoint::from_trainer(t);
        ck.save(&checkpoint_dir.join(format!("epoch_{:04}.ckpt", record.epoch)))?;
        ck.save(&checkpoint_dir.join("latest.ckpt"))?;
        log.push(*record);
        write_file(&log_path, &loss_log_csv(&log))
    })?;
    log::info!("loss log written to {}", log_path.display());
    Ok(())
}

/// Rows of an existing loss log up to and including `through_epoch`.
fn read_loss_log(path: &Path, through_epoch: usize) -> Vec<EpochRecord> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let mut f = line.split(',');
            let epoch = f.next()?.parse().ok()?;
            let train_loss = f.next()?.parse().ok()?;
            let val_loss = f.next().and_then(|v| v.parse().ok());
            Some(EpochRecord {
                epoch,
                train_loss,
                val_loss,
            })
        })
        .filter(|r| r.epoch <= through_epoch)
        .collect()
}

pub fn predict(c: &CliConfig) -> anyhow::Result<()> {
    let ck_path = required(&c.predict.checkpoint, "checkpoint", "--checkpoint")?;
    let scene_path = required(&c.predict.scene, "scene", "--scene")?;
    let model = Checkpoint::load(ck_path)?.model()?;
    let scene = load_scene(scene_path)?;
    let n = model.config.observed_frames;
    if scene.num_joints() != model.config.joints {
        return Err(SomoError::Validation(format!(
            "scene has {} joints per pose, checkpoint was trained with {}",
            scene.num_joints(),
            model.config.joints
        ))
        .into());
    }
    let start = c.predict.start.unwrap_or(scene.num_frames().saturating_sub(n));
    if start + n > scene.num_frames() {
        return Err(SomoError::Validation(format!(
            "observing frames {start}..{} needs a scene of at least that many frames, {} has {}",
            start + n,
            scene_path.display(),
            scene.num_frames()
        ))
        .into());
    }
    let observed = scene.slice_frames(start, start + n)?;
    let history = History::from_scene(&observed, n)?;
    let pred = model.predict_history(&history, c.predict.horizon)?;
    let result = MultiPersonScene::from_tensor(&pred.poses, scene.fps(), scene.ids().to_vec())?;
    let output = c.predict.output.clone().unwrap_or_else(|| c.out_dir().join("prediction.json"));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_scene(&result, &output)?;
    log::info!("wrote {} predicted frames to {}", c.predict.horizon, output.display());
    if let Some(path) = &c.predict.attention {
        let csv = attention_csv(&pred.attention, scene.ids(), model.encoded_windows())?;
        write_file(path, &csv)?;
        log::info!("wrote attention map to {}", path.display());
    }
    Ok(())
}

/// Reorders `truth` to follow the person ids of `pred` when both carry the
/// same set of ids.
fn align_persons(pred: &MultiPersonScene, truth: MultiPersonScene) -> Result<MultiPersonScene, SomoError> {
    if pred.num_persons() != truth.num_persons() || pred.num_joints() != truth.num_joints() {
        return Err(SomoError::Validation(format!(
            "prediction has {} persons × {} joints, truth has {} × {}",
            pred.num_persons(),
            pred.num_joints(),
            truth.num_persons(),
            truth.num_joints()
        )));
    }
    let order: Option<Vec<usize>> = pred
        .ids()
        .iter()
        .map(|id| truth.ids().iter().position(|t| t == id))
        .collect();
    match order {
        Some(order) => truth.permuted(&order),
        None => Ok(truth),
    }
}

pub fn eval(c: &CliConfig) -> anyhow::Result<()> {
    let pred_path = required(&c.eval.pred, "predicted scene", "--pred")?;
    let truth_path = required(&c.eval.truth, "truth scene", "--truth")?;
    let pred = load_scene(pred_path)?;
    let truth = load_scene(truth_path)?;
    let t = pred.num_frames();
    let offset = c.eval.truth_offset;
    if offset + t > truth.num_frames() {
        return Err(SomoError::Validation(format!(
            "truth frames {offset}..{} requested, {} has {}",
            offset + t,
            truth_path.display(),
            truth.num_frames()
        ))
        .into());
    }
    let truth = align_persons(&pred, truth.slice_frames(offset, offset + t)?)?;
    let horizons = c.eval.horizons.clone().unwrap_or_else(|| default_horizons(t, pred.fps()));
    let report = evaluate(&pred.to_tensor(), &truth.to_tensor(), pred.fps(), &horizons)?;
    print!("{}", report.to_table());
    let path = c.out_dir().join("metrics.json");
    write_file(&path, &report.to_json())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn gradcheck(c: &CliConfig) -> anyhow::Result<()> {
    let g = &c.gradcheck;
    let seed = c.seed.unwrap_or(0);
    let started = std::time::Instant::now();
    let (model, sample) = small_gradient_setup(seed)?;
    let report = verify_gradients(&model, &sample, g.per_group, g.eps, seed)?;
    println!("{:<22}{:>14}", "group", "max rel error");
    for (group, err) in &report.per_group {
        println!("{group:<22}{err:>14.3e}");
    }
    println!(
        "checked {} parameters in {:.1} s; max rel error {:.3e} (worst group: {})",
        report.samples.len(),
        started.elapsed().as_secs_f64(),
        report.max_error,
        report.worst_group
    );
    if let Some(out) = &c.out {
        let path = out.join("gradcheck.json");
        write_file(&path, &serde_json::to_string_pretty(&report)?)?;
    }
    if !report.passes(g.tolerance) {
        return Err(SomoError::Numerical(format!(
            "max relative error {:.3e} in group {} is not below {:e}",
            report.max_error, report.worst_group, g.tolerance
        ))
        .into());
    }
    Ok(())
}
