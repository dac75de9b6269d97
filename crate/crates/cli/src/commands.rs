//! The four commands: dataset generation, training, evaluation, and
//! single-sample segmentation.

use std::fs;
use std::path::Path;

use uadseg::data::{
    brain_mask, build_splits, load_split, read_uads, write_uads_f32, write_uads_u8,
    PhantomParams, Sample, SplitCounts,
};
use uadseg::metrics::{evaluate_with, EvalOptions};
use uadseg::pipeline::{segment_with, train};
use uadseg::{Model, ModelConfig, Tensor};

use crate::config::RunConfig;
use crate::png;
use crate::CliError;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Create `dir`; when `guard` is set, refuse to reuse a non-empty one
/// unless --force was given.
fn ensure_out_dir(dir: &Path, force: bool, guard: bool) -> Result<(), CliError> {
    if guard && dir.exists() && !force {
        let occupied = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
        if occupied {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (pass --force to write anyway)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))
}

fn require_dir(path: &Path, hint: &str) -> Result<(), CliError> {
    if !path.is_dir() {
        return Err(CliError::Usage(format!("{hint} {} does not exist", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path, hint: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{hint} {} does not exist", path.display())));
    }
    Ok(())
}

fn check_sample_size(set: &[Sample], side: usize, split: &str) -> Result<(), CliError> {
    if let Some(s) = set.first() {
        if s.image.shape() != [side, side, 1] {
            return Err(CliError::Usage(format!(
                "split {split} holds {:?} samples but the model expects [{side}, {side}, 1]; \
                 regenerate the dataset with the matching --preset",
                s.image.shape()
            )));
        }
    }
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    ensure_out_dir(&cfg.out, force, true)?;
    let params = PhantomParams::with_size(cfg.preset.image_size());
    let counts = SplitCounts {
        train: cfg.n_train,
        val: cfg.n_val,
        test_healthy: cfg.n_test_healthy,
        test_anomalous: cfg.n_test_anomalous,
    };
    build_splits(&cfg.out, &params, counts, cfg.seed).map_err(runtime)?;
    cfg.persist(&cfg.out, "gen-data")?;
    println!(
        "wrote {} samples ({}×{}) under {}",
        counts.train + counts.val + counts.test_healthy + counts.test_anomalous,
        params.size,
        params.size,
        cfg.out.display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let train_dir = cfg.dataset.join("train");
    let val_dir = cfg.dataset.join("val");
    require_dir(&train_dir, "dataset split")?;
    require_dir(&val_dir, "dataset split")?;
    ensure_out_dir(&cfg.out, force, true)?;

    let train_set = load_split(&train_dir).map_err(runtime)?;
    let val_set = load_split(&val_dir).map_err(runtime)?;
    let mut model = Model::new(ModelConfig::preset(cfg.arch, cfg.preset), cfg.seed)
        .map_err(runtime)?;
    check_sample_size(&train_set, model.config.image, "train")?;
    check_sample_size(&val_set, model.config.image, "val")?;

    let report = train(&mut model, &train_set, &val_set, &cfg.train_config())
        .map_err(runtime)?;

    let best_path = cfg.out.join("checkpoint.uadc");
    model.save(&best_path).map_err(runtime)?;
    for (slot, t) in model.store.tensors_mut().iter_mut().zip(&report.final_params) {
        *slot = t.clone();
    }
    model.save(&cfg.out.join("checkpoint_final.uadc")).map_err(runtime)?;
    fs::write(cfg.out.join("loss_history.csv"), report.history_csv())
        .map_err(|e| CliError::Runtime(format!("writing loss_history.csv: {e}")))?;
    cfg.persist(&cfg.out, "train")?;
    println!(
        "trained {} for {} epochs; best epoch {} (val MAE {:.6}); checkpoint at {}",
        cfg.arch.name(),
        cfg.epochs,
        report.best_epoch,
        report.best_val_mae,
        best_path.display()
    );
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    require_file(&cfg.checkpoint, "checkpoint")?;
    let anomalous_dir = cfg.dataset.join("test_anomalous");
    let healthy_dir = cfg.dataset.join("test_healthy");
    require_dir(&anomalous_dir, "dataset split")?;
    require_dir(&healthy_dir, "dataset split")?;
    ensure_out_dir(&cfg.out, force, false)?;

    let model = Model::load(&cfg.checkpoint).map_err(runtime)?;
    let anomalous = load_split(&anomalous_dir).map_err(runtime)?;
    let healthy = load_split(&healthy_dir).map_err(runtime)?;
    check_sample_size(&anomalous, model.config.image, "test_anomalous")?;
    check_sample_size(&healthy, model.config.image, "test_healthy")?;

    let opts = EvalOptions {
        percentile: cfg.percentile,
        n_thresholds: cfg.sweep,
        per_sample_sweep: cfg.per_sample_sweep,
    };
    let report = evaluate_with(&model, &anomalous, &healthy, &opts).map_err(runtime)?;
    fs::write(cfg.out.join("report.csv"), report.to_csv())
        .map_err(|e| CliError::Runtime(format!("writing report.csv: {e}")))?;
    fs::write(cfg.out.join("report.txt"), report.to_table())
        .map_err(|e| CliError::Runtime(format!("writing report.txt: {e}")))?;
    cfg.persist(&cfg.out, "eval")?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn segment_cmd(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    require_file(&cfg.checkpoint, "checkpoint")?;
    let image_path = cfg.input.join("image.uads");
    require_file(&image_path, "input image")?;
    ensure_out_dir(&cfg.out, force, false)?;

    let model = Model::load(&cfg.checkpoint).map_err(runtime)?;
    let side = model.config.image;
    let raw = read_uads(&image_path).map_err(runtime)?;
    let image = match raw.rank() {
        2 => {
            let (h, w) = (raw.shape()[0], raw.shape()[1]);
            raw.reshaped(vec![h, w, 1]).map_err(runtime)?
        }
        3 => raw,
        r => return Err(CliError::Usage(format!("input image has rank {r}, expected 2 or 3"))),
    };
    if image.shape() != [side, side, 1] {
        return Err(CliError::Usage(format!(
            "input image is {:?} but the checkpoint expects [{side}, {side}, 1]",
            image.shape()
        )));
    }

    // Inference masks are recomputed from the image, never read from disk.
    let flat = image.reshaped(vec![side, side]).map_err(runtime)?;
    let mask = brain_mask(&flat);
    let sample = Sample { image, mask, label: Tensor::zeros(vec![side, side]) };
    let seg = segment_with(&model, &sample, cfg.percentile).map_err(runtime)?;

    let shape = [side, side];
    write_uads_f32(&cfg.out.join("xhat.uads"), &shape, seg.reconstruction.data())
        .map_err(runtime)?;
    write_uads_f32(&cfg.out.join("residual.uads"), &shape, seg.residual.data())
        .map_err(runtime)?;
    let mask_u8: Vec<u8> = seg.mask.data().iter().map(|&v| (v > 0.0) as u8).collect();
    write_uads_u8(&cfg.out.join("mask.uads"), &shape, &mask_u8).map_err(runtime)?;

    png::save_unit(&cfg.out.join("input.png"), &flat)?;
    png::save_unit(&cfg.out.join("xhat.png"), &seg.reconstruction)?;
    png::save_centered(&cfg.out.join("residual.png"), &seg.residual)?;
    png::save_scaled(&cfg.out.join("filtered.png"), &seg.filtered)?;
    png::save_binary(&cfg.out.join("mask.png"), &seg.mask)?;
    cfg.persist(&cfg.out, "segment")?;
    println!(
        "segmented {} → {} ({} anomalous pixels)",
        image_path.display(),
        cfg.out.display(),
        mask_u8.iter().filter(|&&v| v == 1).count()
    );
    Ok(())
}
