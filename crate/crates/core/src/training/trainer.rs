use std::path::Path;

use super::optim::{poly_lr, AdamW, OptimConfig};
use crate::config::{KdTarget, RunConfig};
use crate::data::{BatchStream, Cursor, SceneDataset, SegBatch, SplitManifest, StreamState};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix};
use crate::losses::{
    consistency_loss, kd_loss, make_pseudo_labels, supervised_loss, total_loss, LossReport, LossTerms,
    LossWeights, Thresholds,
};
use crate::models::checkpoint::{self, Record};
use crate::models::{DualModel, ForwardOutput};
use crate::numerics::{Tape, Tensor};
use crate::IGNORE_INDEX;

/// Loss and optimizer settings for [`train_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub weights: LossWeights,
    pub thresholds: Thresholds,
    pub kd_target: KdTarget,
    pub kd_detach: bool,
    pub optim: OptimConfig,
}

impl StepSettings {
    fn needs_unlabeled(&self) -> bool {
        self.weights.lambda2 > 0.0 || (self.weights.lambda3 > 0.0 && self.kd_target != KdTarget::Labeled)
    }
}

/// Everything besides the weights that a resumed run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub iter: usize,
    pub epoch: u64,
    pub seed: u64,
    pub optimizer: AdamW,
    pub stream: StreamState,
    pub history: Vec<LossReport>,
}

impl TrainState {
    pub fn new(model: &DualModel, seed: u64) -> Self {
        let params: Vec<Tensor> = model.all_params().into_iter().cloned().collect();
        TrainState {
            iter: 0,
            epoch: 0,
            seed,
            optimizer: AdamW::new(&params),
            stream: StreamState::default(),
            history: Vec::new(),
        }
    }
}

/// One co-training iteration.
///
/// Both branches see the labeled batch (supervised terms) and the unlabeled
/// batch (cross pseudo-labels and distillation); the weighted total is
/// differentiated once and every parameter takes one AdamW step at the
/// current poly rate.
///
/// The unlabeled forward pass is skipped when neither the consistency nor
/// an unlabeled distillation term carries weight; the skipped terms read 0.
pub fn train_step(
    state: &mut TrainState,
    model: &mut DualModel,
    labeled: &SegBatch,
    unlabeled: &SegBatch,
    settings: &StepSettings,
) -> Result<LossReport> {
    let iter = state.iter;
    if iter >= settings.optim.total_iters {
        return Err(Error::Contract(format!(
            "train_step: iteration {iter} is past the schedule of {} iterations",
            settings.optim.total_iters
        )));
    }
    let lr = poly_lr(settings.optim.base_lr, iter, settings.optim.total_iters, settings.optim.poly_power)?;

    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let zero = tape.constant(Tensor::zeros(vec![]));

    let images = tape.constant(labeled.images.clone());
    let out_l = model.forward_dual(&mut tape, &params, images)?;
    let sup_sr = supervised_loss(&mut tape, out_l.senior_logits, &labeled.labels, IGNORE_INDEX)?;
    let sup_jr = supervised_loss(&mut tape, out_l.junior_logits, &labeled.labels, IGNORE_INDEX)?;

    let mut out_u: Option<ForwardOutput> = None;
    let (mut con_sr, mut con_jr, mut masked_fraction) = (zero, zero, 0.0);
    if settings.needs_unlabeled() {
        let images = tape.constant(unlabeled.images.clone());
        let out = model.forward_dual(&mut tape, &params, images)?;
        if settings.weights.lambda2 > 0.0 {
            let tau = settings.thresholds.conf_tau;
            let from_senior = make_pseudo_labels(tape.value(out.senior_logits), tau)?;
            let from_junior = make_pseudo_labels(tape.value(out.junior_logits), tau)?;
            con_jr = consistency_loss(&mut tape, out.junior_logits, &from_senior)?;
            con_sr = consistency_loss(&mut tape, out.senior_logits, &from_junior)?;
            masked_fraction = 0.5 * (from_senior.masked_fraction() + from_junior.masked_fraction());
        }
        out_u = Some(out);
    }

    let mut kd = zero;
    if settings.weights.lambda3 > 0.0 {
        let t = settings.thresholds.kd_temperature;
        let detach = settings.kd_detach;
        let kd_on = |tape: &mut Tape, out: &ForwardOutput| kd_loss(tape, out.senior_logits, out.junior_logits, t, detach);
        kd = match (settings.kd_target, &out_u) {
            (KdTarget::Labeled, _) => kd_on(&mut tape, &out_l)?,
            (KdTarget::Unlabeled, Some(u)) => kd_on(&mut tape, u)?,
            (KdTarget::Both, Some(u)) => {
                let a = kd_on(&mut tape, &out_l)?;
                let b = kd_on(&mut tape, u)?;
                let sum = tape.add(a, b)?;
                tape.scale(sum, 0.5)?
            }
            (_, None) => unreachable!("unlabeled pass runs whenever unlabeled KD is weighted"),
        };
    }

    let terms = LossTerms { sup_sr, sup_jr, con_sr, con_jr, kd };
    let total = total_loss(&mut tape, &terms, &settings.weights)?;
    let report = LossReport::from_tape(&tape, &terms, total, masked_fraction)?;
    if !report.is_finite() {
        return Err(Error::Divergence { iter, detail: format!("non-finite loss: {report:?}") });
    }

    let mut grads = tape.backward(total).map_err(|e| match e {
        Error::NonFinite(detail) => Error::Divergence { iter, detail },
        other => other,
    })?;
    let vars: Vec<_> = params.senior.iter().chain(&params.junior).chain(&params.fusion).copied().collect();
    let (mut tensors, groups) = model.params_with_groups_mut();
    let grads: Vec<Tensor> = vars
        .iter()
        .zip(&tensors)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    state.optimizer.step(&mut tensors, &groups, &grads, lr, &settings.optim, iter)?;
    state.iter += 1;
    state.history.push(report);
    Ok(report)
}

/// A training run bound to its dataset, batch stream and model.
pub struct Trainer {
    config: RunConfig,
    dataset: SceneDataset,
    manifest: SplitManifest,
    stream: BatchStream,
    model: DualModel,
    state: TrainState,
    settings: StepSettings,
    iters_per_epoch: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let dataset = SceneDataset::new(config.scene_spec(), config.dataset_size)?;
        let manifest = config.split()?;
        let stream = BatchStream::new(&manifest, config.seed, config.augment())?;
        let model = DualModel::new(config.dual_config(), config.seed)?;
        let iters_per_epoch = if config.iters_per_epoch > 0 {
            config.iters_per_epoch
        } else {
            stream.unlabeled_pool_len().div_ceil(config.batch_size)
        };
        let optim = OptimConfig {
            base_lr: config.base_lr,
            decoder_lr_multiplier: config.decoder_lr_multiplier,
            weight_decay: config.weight_decay,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            total_iters: (config.epochs * iters_per_epoch).max(1),
            poly_power: config.poly_power,
            grad_clip: (config.grad_clip > 0.0).then_some(config.grad_clip),
        };
        let settings = StepSettings {
            weights: config.loss_weights(),
            thresholds: config.thresholds(),
            kd_target: config.kd_target,
            kd_detach: config.kd_detach,
            optim,
        };
        let state = TrainState::new(&model, config.seed);
        Ok(Trainer {
            config: config.clone(),
            dataset,
            manifest,
            stream,
            model,
            state,
            settings,
            iters_per_epoch,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &DualModel {
        &self.model
    }

    pub fn into_model(self) -> DualModel {
        self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn settings(&self) -> &StepSettings {
        &self.settings
    }

    pub fn manifest(&self) -> &SplitManifest {
        &self.manifest
    }

    pub fn dataset(&self) -> &SceneDataset {
        &self.dataset
    }

    pub fn iters_per_epoch(&self) -> usize {
        self.iters_per_epoch
    }

    /// Scheduled iterations; `0` for an evaluation-only run.
    pub fn total_iters(&self) -> usize {
        self.config.epochs * self.iters_per_epoch
    }

    pub fn is_done(&self) -> bool {
        self.state.iter >= self.total_iters()
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        let o = &self.settings.optim;
        poly_lr(o.base_lr, self.state.iter.min(o.total_iters), o.total_iters, o.poly_power).unwrap_or(0.0)
    }

    /// Draws the next batch pair and trains on it.
    pub fn step(&mut self) -> Result<LossReport> {
        let (labeled, unlabeled) = self.stream.next_batch(&self.dataset, self.config.batch_size)?;
        let report = train_step(&mut self.state, &mut self.model, &labeled, &unlabeled, &self.settings)?;
        self.state.stream = self.stream.state();
        self.state.epoch = (self.state.iter / self.iters_per_epoch) as u64;
        Ok(report)
    }

    /// Scores one branch on the validation scenes.
    pub fn evaluate(&self, branch: eval::Branch) -> Result<ConfusionMatrix> {
        evaluate_model(&self.model, branch, &self.dataset, &self.config)
    }

    /// Model weights plus optimizer and stream state.
    pub fn checkpoint_records(&self) -> Vec<Record> {
        let mut records = self.model.to_records();
        let s = &self.state;
        let cursor = |c: &Cursor| [c.epoch as f64, c.pos as f64];
        let [le, lp] = cursor(&s.stream.labeled);
        let [ue, up] = cursor(&s.stream.unlabeled);
        records.push(Record::new(
            "train.state",
            vec![8],
            vec![
                s.iter as f64,
                s.epoch as f64,
                (s.seed >> 32) as f64,
                (s.seed & 0xffff_ffff) as f64,
                s.optimizer.t as f64,
                le,
                lp,
                s.stream.step as f64,
            ],
        ));
        records.push(Record::new("train.stream_unlabeled", vec![2], vec![ue, up]));
        for (i, (m, v)) in s.optimizer.m.iter().zip(&s.optimizer.v).enumerate() {
            records.push(Record::new(&format!("adam.m.{i}"), vec![m.len()], m.clone()));
            records.push(Record::new(&format!("adam.v.{i}"), vec![v.len()], v.clone()));
        }
        records
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.checkpoint_records())
    }

    /// Continues a run from a checkpoint written by [`Trainer::save_checkpoint`]
    /// under the same configuration.
    pub fn resume(config: &RunConfig, records: &[Record]) -> Result<Self> {
        let mut trainer = Trainer::new(config)?;
        let model = DualModel::from_records(records)?;
        if model.config() != trainer.model.config() {
            return Err(Error::Checkpoint {
                version: checkpoint::VERSION,
                detail: "checkpoint architecture differs from the configuration".into(),
            });
        }
        let find = |name: &str, len: usize| -> Result<&[f64]> {
            records
                .iter()
                .find(|r| r.name == name && r.values.len() == len)
                .map(|r| r.values.as_slice())
                .ok_or_else(|| Error::Checkpoint {
                    version: checkpoint::VERSION,
                    detail: format!("missing or malformed record {name}"),
                })
        };
        let st = find("train.state", 8)?;
        let un = find("train.stream_unlabeled", 2)?;
        let mut state = TrainState::new(&model, ((st[2] as u64) << 32) | st[3] as u64);
        state.iter = st[0] as usize;
        state.epoch = st[1] as u64;
        state.optimizer.t = st[4] as u64;
        state.stream = StreamState {
            labeled: Cursor { epoch: st[5] as u64, pos: st[6] as usize },
            unlabeled: Cursor { epoch: un[0] as u64, pos: un[1] as usize },
            step: st[7] as u64,
        };
        for i in 0..state.optimizer.m.len() {
            let n = state.optimizer.m[i].len();
            state.optimizer.m[i] = find(&format!("adam.m.{i}"), n)?.to_vec();
            state.optimizer.v[i] = find(&format!("adam.v.{i}"), n)?.to_vec();
        }
        trainer.stream.restore(state.stream);
        trainer.model = model;
        trainer.state = state;
        Ok(trainer)
    }
}

/// Confusion matrix of `branch` over the validation scenes of `config`.
pub fn evaluate_model(
    model: &DualModel,
    branch: eval::Branch,
    dataset: &SceneDataset,
    config: &RunConfig,
) -> Result<ConfusionMatrix> {
    let sample = |i: usize| {
        let s = dataset.val_sample(i);
        (s.image, s.labels)
    };
    let settings = config.eval_settings();
    let threads = eval::eval_threads();
    match branch {
        eval::Branch::Junior => {
            let predict = |x: &Tensor| model.forward_junior(x);
            eval::evaluate(&predict, &sample, config.val_size, config.num_classes, &settings, threads)
        }
        eval::Branch::Senior => {
            let predict = |x: &Tensor| model.forward_senior(x);
            eval::evaluate(&predict, &sample, config.val_size, config.num_classes, &settings, threads)
        }
    }
}
