//! Supervised, cross pseudo-supervision and distillation losses, and their
//! weighted aggregation.
//!
//! Logits are `[N,K,H,W]` tape values with the class axis at 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::numerics::{kernels, Tape, Tensor, Var};

const CLASS_AXIS: usize = 1;

/// Weights of the supervised, consistency and distillation terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pseudo-label confidence threshold and distillation temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub conf_tau: f64,
    pub kd_temperature: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { conf_tau: 0.95, kd_temperature: 2.0 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        // Values above 1 are allowed and suppress every pseudo-label.
        if !(self.conf_tau >= 0.0) || !self.conf_tau.is_finite() {
            return Err(Error::Config(format!("conf_tau must be finite and >= 0, got {}", self.conf_tau)));
        }
        if !(self.kd_temperature > 0.0) || !self.kd_temperature.is_finite() {
            return Err(Error::Config(format!(
                "kd_temperature must be positive, got {}",
                self.kd_temperature
            )));
        }
        Ok(())
    }
}

fn check_labels(logits: &Tensor, labels: &LabelMap) -> Result<usize> {
    let [n, k, h, w] = logits.dims4()?;
    if labels.shape() != [n, h, w] {
        return Err(Error::Shape(format!(
            "labels {:?} do not match logits {:?}",
            labels.shape(),
            logits.shape()
        )));
    }
    Ok(k)
}

/// Mean cross-entropy over every pixel whose label is not `ignore_index`.
///
/// Returns an exact zero (with zero gradient) when every pixel is ignored.
pub fn supervised_loss(tape: &mut Tape, logits: Var, labels: &LabelMap, ignore_index: u8) -> Result<Var> {
    let k = check_labels(tape.value(logits), labels)?;
    labels.validate(k, ignore_index)?;
    let [n, h, w] = labels.shape();
    let plane = h * w;
    let valid = labels.data().iter().filter(|&&l| l != ignore_index).count();
    if valid == 0 {
        return Ok(tape.constant(Tensor::zeros(Vec::new())));
    }
    // -1/valid at the labelled class of every counted pixel, zero elsewhere.
    let mut weights = vec![0.0; n * k * plane];
    let inv = -1.0 / valid as f64;
    for b in 0..n {
        for p in 0..plane {
            let l = labels.data()[b * plane + p];
            if l != ignore_index {
                weights[(b * k + l as usize) * plane + p] = inv;
            }
        }
    }
    let weights = tape.constant(Tensor::from_parts(vec![n, k, h, w], weights));
    let log_probs = tape.log_softmax_t(logits, CLASS_AXIS, 1.0)?;
    let picked = tape.mul(log_probs, weights)?;
    tape.sum(picked)
}

/// Hard pseudo-labels with their confidence mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub labels: LabelMap,
    pub mask: Vec<bool>,
}

impl PseudoLabels {
    /// Share of pixels whose pseudo-label was suppressed.
    pub fn masked_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| !m).count() as f64 / self.mask.len() as f64
    }

    /// Label map with suppressed pixels set to `ignore_index`.
    pub fn masked_labels(&self, ignore_index: u8) -> LabelMap {
        let mut out = self.labels.clone();
        for (l, &keep) in out.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *l = ignore_index;
            }
        }
        out
    }
}

/// Per-pixel argmax labels and a mask that keeps pixels whose top softmax
/// probability reaches `conf_tau`.
///
/// Takes plain values, so nothing flows back into the producing branch.
pub fn make_pseudo_labels(logits: &Tensor, conf_tau: f64) -> Result<PseudoLabels> {
    let [n, k, h, w] = logits.dims4()?;
    if k >= crate::IGNORE_INDEX as usize {
        return Err(Error::Shape(format!("{k} classes do not fit in a label map")));
    }
    let probs = kernels::softmax(logits, CLASS_AXIS, 1.0)?;
    let arg = logits.argmax(CLASS_AXIS)?;
    let plane = h * w;
    let mut labels = Vec::with_capacity(n * plane);
    let mut mask = Vec::with_capacity(n * plane);
    for b in 0..n {
        for p in 0..plane {
            let c = arg[b * plane + p];
            labels.push(c as u8);
            mask.push(probs.data()[(b * k + c) * plane + p] >= conf_tau);
        }
    }
    Ok(PseudoLabels { labels: LabelMap::new([n, h, w], labels)?, mask })
}

/// Cross-entropy of one branch against the other branch's pseudo-labels,
/// averaged over unmasked pixels. Zero when the mask is empty.
pub fn consistency_loss(tape: &mut Tape, logits: Var, pseudo: &PseudoLabels) -> Result<Var> {
    check_labels(tape.value(logits), &pseudo.labels)?;
    let ignore = crate::IGNORE_INDEX;
    supervised_loss(tape, logits, &pseudo.masked_labels(ignore), ignore)
}

/// `KL(softmax(senior/T) || softmax(junior/T))` averaged over pixels.
///
/// With `detach_senior` the senior acts as a fixed target. The value is
/// formed from log-probabilities and clamped at zero against rounding.
pub fn kd_loss(
    tape: &mut Tape,
    senior_logits: Var,
    junior_logits: Var,
    temperature: f64,
    detach_senior: bool,
) -> Result<Var> {
    tape.value(senior_logits).same_shape(tape.value(junior_logits), "kd_loss")?;
    let [n, _, h, w] = tape.value(junior_logits).dims4()?;
    let senior = if detach_senior { tape.stop_gradient(senior_logits) } else { senior_logits };
    let log_p = tape.log_softmax_t(senior, CLASS_AXIS, temperature)?;
    let log_q = tape.log_softmax_t(junior_logits, CLASS_AXIS, temperature)?;
    let p = tape.exp(log_p)?;
    let ratio = tape.sub(log_p, log_q)?;
    let terms = tape.mul(p, ratio)?;
    let total = tape.sum(terms)?;
    let mean = tape.scale(total, 1.0 / (n * h * w) as f64)?;
    tape.relu(mean)
}

/// The five loss terms of one step, as tape scalars.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub sup_sr: Var,
    pub sup_jr: Var,
    pub con_sr: Var,
    pub con_jr: Var,
    pub kd: Var,
}

/// `λ1·½(sup_sr + sup_jr) + λ2·½(con_sr + con_jr) + λ3·kd`.
pub fn total_loss(tape: &mut Tape, terms: &LossTerms, weights: &LossWeights) -> Result<Var> {
    let sup = tape.add(terms.sup_sr, terms.sup_jr)?;
    let sup = tape.scale(sup, 0.5 * weights.lambda1)?;
    let con = tape.add(terms.con_sr, terms.con_jr)?;
    let con = tape.scale(con, 0.5 * weights.lambda2)?;
    let kd = tape.scale(terms.kd, weights.lambda3)?;
    let total = tape.add(sup, con)?;
    tape.add(total, kd)
}

/// Scalar values of every loss term after a step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub sup_sr: f64,
    pub sup_jr: f64,
    pub con_sr: f64,
    pub con_jr: f64,
    pub kd: f64,
    pub total: f64,
    /// Share of unlabeled pixels whose pseudo-label was suppressed, averaged
    /// over both directions.
    pub masked_fraction: f64,
}

impl LossReport {
    pub fn from_tape(tape: &Tape, terms: &LossTerms, total: Var, masked_fraction: f64) -> Result<Self> {
        let get = |v: Var| tape.value(v).item();
        Ok(LossReport {
            sup_sr: get(terms.sup_sr)?,
            sup_jr: get(terms.sup_jr)?,
            con_sr: get(terms.con_sr)?,
            con_jr: get(terms.con_jr)?,
            kd: get(terms.kd)?,
            total: get(total)?,
            masked_fraction,
        })
    }

    pub fn is_finite(&self) -> bool {
        [self.sup_sr, self.sup_jr, self.con_sr, self.con_jr, self.kd, self.total, self.masked_fraction]
            .iter()
            .all(|v| v.is_finite())
    }
}
