//! Command-line front end: `gen-data`, `train` and `eval`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{make_split, pnm, SceneDataset};
use crate::error::{Error, Result};
use crate::eval::{self, Blend, Branch, EvalSettings};
use crate::models::checkpoint;
use crate::models::{junior_from_records, DualModel};
use crate::numerics::Tensor;
use crate::training::run_experiment_with;

#[derive(Debug, Parser)]
#[command(name = "segkc", version, about = "Senior/junior co-training for semi-supervised segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset to PPM/PGM files plus a split manifest.
    GenData(GenDataArgs),
    /// Train a model pair (or a preset grid of them).
    Train(TrainArgs),
    /// Score a checkpoint on validation scenes.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "1/8")]
    pub ratio: String,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    /// Any other config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Run configuration (defaults to `config.resolved` next to the checkpoint).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BranchArg::Junior)]
    pub branch: BranchArg,
    /// Predict whole images instead of tiling.
    #[arg(long)]
    pub no_sliding: bool,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Number of validation scenes (defaults to the config's `val_size`).
    #[arg(long)]
    pub images: Option<usize>,
    /// Score training scenes `0..images` instead of validation scenes.
    #[arg(long)]
    pub train_split: bool,
    /// Where to write the per-class IoU table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BranchArg {
    Junior,
    Senior,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => evaluate(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let config = RunConfig {
        data_seed: a.seed,
        dataset_size: a.size,
        ratio: a.ratio.clone(),
        num_classes: a.classes,
        image_height: a.height,
        image_width: a.width,
        ..RunConfig::default()
    };
    config.scene_spec().validate()?;
    let manifest = make_split(a.size, &a.ratio, a.seed)?;
    let dataset = SceneDataset::new(config.scene_spec(), a.size)?;
    create_dir(&a.out)?;
    for id in 0..a.size {
        let s = dataset.sample(id);
        pnm::write(&a.out.join(format!("img_{id:05}.ppm")), &pnm::encode_ppm(&s.image)?)?;
        pnm::write(&a.out.join(format!("lbl_{id:05}.pgm")), &pnm::encode_pgm(&s.labels)?)?;
    }
    let path = a.out.join("manifest.txt");
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    println!("wrote {} scenes ({} labeled) to {}", a.size, manifest.labeled_ids.len(), a.out.display());
    Ok(())
}

pub fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut config = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.preset {
        config.preset = p.parse()?;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(v) = a.lambda1 {
        config.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        config.lambda2 = v;
    }
    if let Some(v) = a.lambda3 {
        config.lambda3 = v;
    }
    for kv in &a.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let config = train_config(a)?;
    let outcome = run_experiment_with(&config, &a.out, &mut |line| println!("{line}"))?;
    for row in &outcome.rows {
        println!("{}: final junior mIoU {:.4}", row.variant, row.final_miou_junior);
    }
    Ok(())
}

/// Loads the checkpoint, scores the chosen branch and returns the matrix.
pub fn eval_matrix(a: &EvalArgs) -> Result<eval::ConfusionMatrix> {
    let config_path = match &a.config {
        Some(p) => p.clone(),
        None => a.ckpt.with_file_name("config.resolved"),
    };
    let config = RunConfig::load(&config_path)?;
    let records = checkpoint::load(&a.ckpt)?;
    let dataset = SceneDataset::new(config.scene_spec(), config.dataset_size)?;
    let mut settings = config.eval_settings();
    if let Some(w) = a.window {
        settings.window = w;
        settings.stride = (w / 2).max(1);
    }
    if let Some(s) = a.stride {
        settings.stride = s;
    }
    if a.no_sliding {
        settings = EvalSettings { window: 0, stride: 1, blend: Blend::Logits, divisor: settings.divisor };
    }
    let count = a.images.unwrap_or(config.val_size);
    let train_split = a.train_split;
    let sample = |i: usize| {
        let s = if train_split { dataset.sample(i) } else { dataset.val_sample(i) };
        (s.image, s.labels)
    };
    let threads = eval::eval_threads();
    let k = config.num_classes;
    match Branch::from(a.branch) {
        Branch::Junior => {
            let junior = junior_from_records(&records)?;
            let predict = |x: &Tensor| junior.predict(x);
            eval::evaluate(&predict, &sample, count, k, &settings, threads)
        }
        Branch::Senior => {
            let model = DualModel::from_records(&records)?;
            let predict = |x: &Tensor| model.forward_senior(x);
            eval::evaluate(&predict, &sample, count, k, &settings, threads)
        }
    }
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Junior => Branch::Junior,
            BranchArg::Senior => Branch::Senior,
        }
    }
}

pub fn evaluate(a: &EvalArgs) -> Result<()> {
    let cm = eval_matrix(a)?;
    let table = eval::iou_table_csv(&cm);
    print!("{table}");
    if let Some(path) = &a.out {
        std::fs::write(path, &table).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
