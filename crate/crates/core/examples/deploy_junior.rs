//! Trains briefly, saves a checkpoint, strips the senior and connector
//! weights and checks the junior still predicts the same logits.
//!
//! cargo run --release --example deploy_junior

use segkc::config::RunConfig;
use segkc::models::{checkpoint, junior_from_records};
use segkc::training::Trainer;
use segkc::Tensor;

fn main() -> segkc::Result<()> {
    let config = RunConfig { image_height: 32, image_width: 32, epochs: 1, iters_per_epoch: 10, ..RunConfig::default() };
    let mut trainer = Trainer::new(&config)?;
    while !trainer.is_done() {
        trainer.step()?;
    }
    let dir = std::env::temp_dir().join("segkc-deploy");
    std::fs::create_dir_all(&dir).map_err(|e| segkc::Error::io(&dir, e))?;
    let path = dir.join("ckpt");
    trainer.save_checkpoint(&path)?;

    let records = checkpoint::load(&path)?;
    let total = records.len();
    let junior_only: Vec<_> =
        records.into_iter().filter(|r| !r.name.starts_with("senior.") && !r.name.starts_with("fusion.")).collect();
    println!("kept {} of {total} records", junior_only.len());

    let junior = junior_from_records(&junior_only)?;
    let image = Tensor::stack(&[trainer.dataset().val_sample(0).image])?;
    let a = trainer.model().forward_junior(&image)?;
    let b = junior.predict(&image)?;
    println!("junior parameters: {}", junior.parameter_count());
    println!("identical logits: {}", a == b);
    Ok(())
}
