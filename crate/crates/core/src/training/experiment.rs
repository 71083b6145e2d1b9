use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::trainer::Trainer;
use crate::config::{Preset, RunConfig};
use crate::data::pnm;
use crate::error::{Error, Result};
use crate::eval::{self, Branch, ConfusionMatrix};
use crate::losses::LossReport;

pub const METRICS_HEADER: &str = "iter,epoch,lr,sup_sr,sup_jr,con_sr,con_jr,kd,total,masked_fraction,miou_junior";
pub const SUMMARY_HEADER: &str = "variant,seed,final_miou_junior,final_miou_senior";

/// Result of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub variant: String,
    pub seed: u64,
    pub final_miou_junior: f64,
    pub final_miou_senior: Option<f64>,
    /// Junior IoU per class on the validation scenes.
    pub class_iou: Vec<Option<f64>>,
    /// `(epoch, junior mIoU)` at every evaluation.
    pub evaluations: Vec<(u64, f64)>,
    pub reports: Vec<LossReport>,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub preset: Preset,
    pub rows: Vec<RunOutcome>,
}

/// The runs a preset expands to, as `(variant name, config)` pairs.
pub fn preset_variants(config: &RunConfig) -> Vec<(String, RunConfig)> {
    let base = RunConfig { preset: Preset::None, ..config.clone() };
    let with = |name: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        (name.to_string(), c)
    };
    match config.preset {
        Preset::None => vec![("run".to_string(), base.clone())],
        Preset::Table5 => vec![
            with("sup", &|c| {
                c.lambda2 = 0.0;
                c.lambda3 = 0.0;
            }),
            with("sup+con", &|c| c.lambda3 = 0.0),
            with("sup+con+kd", &|_| {}),
        ],
        Preset::Table6 => vec![
            with("hetero", &|c| c.senior_width = 2 * c.junior_width),
            with("homo", &|c| c.senior_width = c.junior_width),
        ],
        Preset::Table7 => vec![
            with("senior2x", &|c| c.senior_width = 2 * c.junior_width),
            with("senior4x", &|c| c.senior_width = 4 * c.junior_width),
        ],
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn metrics_row(iter: usize, epoch: u64, lr: f64, report: Option<&LossReport>, miou: Option<f64>) -> String {
    let mut row = format!("{iter},{epoch},{lr}");
    match report {
        Some(r) => {
            for v in [r.sup_sr, r.sup_jr, r.con_sr, r.con_jr, r.kd, r.total, r.masked_fraction] {
                let _ = write!(row, ",{v}");
            }
        }
        None => row.push_str(",,,,,,,"),
    }
    row.push(',');
    if let Some(m) = miou {
        let _ = write!(row, "{m}");
    }
    row.push('\n');
    row
}

/// Trains one configuration into `dir`, writing `config.resolved`,
/// `metrics.csv`, `iou.csv`, `ckpt.final` and `preds/`.
///
/// `progress` receives one line per evaluation.
pub fn run_single(config: &RunConfig, dir: &Path, variant: &str, progress: &mut dyn FnMut(&str)) -> Result<RunOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("config.resolved"), config.to_toml())?;

    let mut trainer = Trainer::new(config)?;
    let total = trainer.total_iters();
    let per_epoch = trainer.iters_per_epoch();
    let mut csv = format!("{METRICS_HEADER}\n");
    let mut evaluations = Vec::new();
    let mut last_cm: Option<ConfusionMatrix> = None;

    let mut evaluate = |trainer: &Trainer, epoch: u64| -> Result<f64> {
        let cm = trainer.evaluate(Branch::Junior)?;
        let miou = cm.miou();
        progress(&format!("[{variant}] epoch {epoch} junior mIoU {miou:.4}"));
        evaluations.push((epoch, miou));
        last_cm = Some(cm);
        Ok(miou)
    };

    if total == 0 {
        let miou = evaluate(&trainer, 0)?;
        csv.push_str(&metrics_row(0, 0, trainer.current_lr(), None, Some(miou)));
    }
    while !trainer.is_done() {
        let lr = trainer.current_lr();
        let report = trainer.step()?;
        let iter = trainer.state().iter;
        let epoch = trainer.state().epoch;
        let epoch_end = iter % per_epoch == 0;
        let miou = if iter == total || (epoch_end && (epoch as usize).is_multiple_of(config.eval_every)) {
            Some(evaluate(&trainer, epoch)?)
        } else {
            None
        };
        csv.push_str(&metrics_row(iter, epoch, lr, Some(&report), miou));
    }
    write(&dir.join("metrics.csv"), &csv)?;

    let cm = last_cm.expect("at least one evaluation");
    write(&dir.join("iou.csv"), eval::iou_table_csv(&cm))?;
    let final_miou_senior = if config.eval_senior {
        Some(trainer.evaluate(Branch::Senior)?.miou())
    } else {
        None
    };
    trainer.save_checkpoint(dir.join("ckpt.final"))?;
    save_predictions(&trainer, &dir.join("preds"))?;

    Ok(RunOutcome {
        variant: variant.to_string(),
        seed: config.seed,
        final_miou_junior: cm.miou(),
        final_miou_senior,
        class_iou: cm.class_iou(),
        evaluations,
        reports: trainer.state().history.clone(),
        dir: dir.to_path_buf(),
    })
}

fn save_predictions(trainer: &Trainer, dir: &Path) -> Result<()> {
    let config = trainer.config();
    let count = config.save_preds.min(config.val_size);
    if count == 0 {
        return Ok(());
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let settings = config.eval_settings();
    let predict = |x: &crate::Tensor| trainer.model().forward_junior(x);
    for i in 0..count {
        let sample = trainer.dataset().val_sample(i);
        let logits = settings.predict(&predict, &sample.image)?;
        let labels = eval::argmax_labels(&logits)?;
        pnm::write(&dir.join(format!("val_{i:05}.pgm")), &pnm::encode_pgm(&labels)?)?;
    }
    Ok(())
}

/// Runs every variant of the configured preset under `out_dir`.
///
/// A preset writes one subdirectory per variant; a plain run writes
/// straight into `out_dir`. Either way `summary.csv` lists the final scores.
pub fn run_experiment(config: &RunConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentOutcome> {
    run_experiment_with(config, out_dir, &mut |_| {})
}

pub fn run_experiment_with(
    config: &RunConfig,
    out_dir: impl AsRef<Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(&out_dir.join("config.resolved"), config.to_toml())?;
    let mut rows = Vec::new();
    for (variant, c) in preset_variants(config) {
        let dir = if config.preset == Preset::None { out_dir.to_path_buf() } else { out_dir.join(&variant) };
        rows.push(run_single(&c, &dir, &variant, progress)?);
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for r in &rows {
        let senior = r.final_miou_senior.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(summary, "{},{},{},{}", r.variant, r.seed, r.final_miou_junior, senior);
    }
    write(&out_dir.join("summary.csv"), summary)?;
    Ok(ExperimentOutcome { preset: config.preset, rows })
}
