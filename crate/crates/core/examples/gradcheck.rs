//! Differentiates a small conv + cross-entropy graph and compares the tape
//! gradient with central differences.
//!
//! cargo run --example gradcheck

use segkc::losses::supervised_loss;
use segkc::numerics::gradcheck::check;
use segkc::{LabelMap, Tensor, IGNORE_INDEX};

fn main() -> segkc::Result<()> {
    let image = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let labels = LabelMap::new([1, 4, 4], (0..16).map(|i| (i % 3) as u8).collect())?;
    let kernel = Tensor::new(vec![3, 1, 3, 3], (0..27).map(|i| (i as f64 * 0.11).cos() * 0.5).collect())?;
    let bias = Tensor::new(vec![3], vec![0.1, -0.2, 0.05])?;

    let result = check(
        |tape, v| {
            let x = tape.constant(image.clone());
            let y = tape.conv2d(x, v[0], 1, 1)?;
            let y = tape.bias_add(y, v[1])?;
            supervised_loss(tape, y, &labels, IGNORE_INDEX)
        },
        &[kernel, bias],
        1e-5,
    )?;
    println!("max relative error {:.3e}", result.max_rel_error);
    println!("max absolute error {:.3e}", result.max_abs_error);
    Ok(())
}
