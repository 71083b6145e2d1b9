//! Central finite-difference checks for tape-built functions.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)`, worst input.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.value(root).item()
}

/// Compares the tape gradient of `f` at `inputs` with central differences
/// of step `h`. Every input is treated as trainable.
pub fn check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (which, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*var) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; inputs[which].numel()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[which].numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[i] -= h;
            numeric.push((eval(&f, &plus)? - eval(&f, &minus)?) / (2.0 * h));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let norm_a = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let denom = norm_a + norm_n;
        let rel = if denom > 0.0 { diff / denom } else { 0.0 };
        if !rel.is_finite() {
            return Err(Error::NonFinite("gradient check".into()));
        }
        max_rel = max_rel.max(rel);
        max_abs = max_abs.max(
            analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).abs())
                .fold(0.0, f64::max),
        );
    }
    Ok(GradCheck { max_rel_error: max_rel, max_abs_error: max_abs })
}
