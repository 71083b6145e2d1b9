//! Confidence-masked pseudo-labels and temperature distillation on a
//! hand-written pair of logit maps.
//!
//! cargo run --example pseudo_labels

use segkc::losses::{consistency_loss, kd_loss, make_pseudo_labels};
use segkc::{Tape, Tensor};

fn main() -> segkc::Result<()> {
    // two classes over a 1x3 strip: confident, unsure, confident the other way
    let senior = Tensor::new(vec![1, 2, 1, 3], vec![4.0, 0.2, -3.0, 0.0, 0.0, 0.0])?;
    let junior = Tensor::new(vec![1, 2, 1, 3], vec![1.0, -0.5, 0.5, 0.0, 0.3, 0.0])?;

    for tau in [0.0, 0.6, 0.95, 1.0] {
        let p = make_pseudo_labels(&senior, tau)?;
        println!("tau {tau:.2}: labels {:?}, masked {:.2}", p.masked_labels(255).data(), p.masked_fraction());
    }

    let mut tape = Tape::new();
    let s = tape.constant(senior.clone());
    let j = tape.param(junior);
    let pseudo = make_pseudo_labels(&senior, 0.6)?;
    let con = consistency_loss(&mut tape, j, &pseudo)?;
    println!("junior consistency loss {:.4}", tape.value(con).item()?);
    for t in [1.0, 2.0, 4.0] {
        let kd = kd_loss(&mut tape, s, j, t, true)?;
        println!("distillation at T={t}: {:.4}", tape.value(kd).item()?);
    }
    Ok(())
}
