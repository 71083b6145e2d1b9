use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamGroup;
use crate::numerics::Tensor;

/// `base_lr * (1 - iter/total_iters)^power`.
pub fn poly_lr(base_lr: f64, iter: usize, total_iters: usize, power: f64) -> Result<f64> {
    if total_iters == 0 {
        return Err(Error::Contract("poly_lr: total_iters must be >= 1".into()));
    }
    if iter > total_iters {
        return Err(Error::Contract(format!("poly_lr: iter {iter} exceeds total_iters {total_iters}")));
    }
    Ok(base_lr * (1.0 - iter as f64 / total_iters as f64).powf(power))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub decoder_lr_multiplier: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_iters: usize,
    pub poly_power: f64,
    /// Global gradient-norm limit.
    pub grad_clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            base_lr: 5e-6,
            decoder_lr_multiplier: 40.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_iters: 1,
            poly_power: 0.9,
            grad_clip: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if self.total_iters == 0 {
            return Err(Error::Config("total_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn group_lr(&self, lr: f64, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => lr,
            ParamGroup::Decoder => lr * self.decoder_lr_multiplier,
        }
    }
}

/// One AdamW update of a flat parameter slice, with decoupled weight decay.
///
/// `t` is the 1-based step count used for bias correction.
pub fn adamw_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, config: &OptimConfig) {
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let decay = 1.0 - lr * config.weight_decay;
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        w[i] = w[i] * decay - lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

/// First and second moments for a list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub(crate) t: u64,
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[Tensor]) -> Self {
        AdamW {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every parameter in place. `lr` is the encoder rate; decoder
    /// groups are scaled by the configured multiplier.
    ///
    /// A non-finite gradient aborts before any weight changes.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        groups: &[ParamGroup],
        grads: &[Tensor],
        lr: f64,
        config: &OptimConfig,
        iter: usize,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != groups.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let mut sq_norm = 0.0;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.same_shape(g, "adamw_step")?;
            if let Some(bad) = g.data().iter().find(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    iter,
                    detail: format!("gradient of parameter {i} contains {bad}"),
                });
            }
            sq_norm += g.data().iter().map(|x| x * x).sum::<f64>();
        }
        let scale = match config.grad_clip {
            Some(limit) if sq_norm.sqrt() > limit => limit / sq_norm.sqrt(),
            _ => 1.0,
        };
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            let lr = config.group_lr(lr, groups[i]);
            let g: Vec<f64>;
            let grad = if scale == 1.0 {
                grads[i].data()
            } else {
                g = grads[i].data().iter().map(|x| x * scale).collect();
                &g
            };
            adamw_update(p.data_mut(), grad, &mut self.m[i], &mut self.v[i], self.t, lr, config);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_ends() {
        assert_eq!(poly_lr(0.1, 0, 10, 0.9).unwrap(), 0.1);
        assert_eq!(poly_lr(0.1, 10, 10, 0.9).unwrap(), 0.0);
        assert!(matches!(poly_lr(0.1, 11, 10, 0.9), Err(Error::Contract(_))));
    }

    #[test]
    fn decoder_group_uses_multiplier() {
        let c = OptimConfig::default();
        assert_eq!(c.group_lr(1e-3, ParamGroup::Encoder), 1e-3);
        assert_eq!(c.group_lr(1e-3, ParamGroup::Decoder), 4e-2);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut w = Tensor::ones(vec![2]);
        let mut opt = AdamW::new(std::slice::from_ref(&w));
        let g = Tensor::from_parts(vec![2], vec![1.0, f64::NAN]);
        let err = opt
            .step(&mut [&mut w], &[ParamGroup::Encoder], &[g], 0.1, &OptimConfig::default(), 7)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { iter: 7, .. }));
        assert_eq!(w, Tensor::ones(vec![2]));
    }

    #[test]
    fn clipping_bounds_the_step() {
        let config = OptimConfig { grad_clip: Some(1.0), weight_decay: 0.0, ..OptimConfig::default() };
        let mut w = Tensor::zeros(vec![1]);
        let mut opt = AdamW::new(std::slice::from_ref(&w));
        let g = Tensor::full(vec![1], 100.0);
        opt.step(&mut [&mut w], &[ParamGroup::Encoder], &[g], 0.1, &config, 0).unwrap();
        // First Adam step moves by lr regardless of scale; clipping just rescales g.
        assert!((w.data()[0] + 0.1).abs() < 1e-6);
    }
}
