//! Trains a senior/junior pair on a small synthetic split and prints the
//! loss terms as it goes.
//!
//! cargo run --release --example train

use segkc::config::RunConfig;
use segkc::eval::Branch;
use segkc::training::Trainer;

fn main() -> segkc::Result<()> {
    let config = RunConfig {
        image_height: 32,
        image_width: 32,
        dataset_size: 256,
        val_size: 32,
        epochs: 3,
        iters_per_epoch: 40,
        ..RunConfig::default()
    };
    let mut trainer = Trainer::new(&config)?;
    println!("{} iterations, {} per epoch", trainer.total_iters(), trainer.iters_per_epoch());
    while !trainer.is_done() {
        let lr = trainer.current_lr();
        let r = trainer.step()?;
        let iter = trainer.state().iter;
        if iter % 20 == 0 {
            println!(
                "iter {iter:4} lr {lr:.2e} sup {:.3}/{:.3} con {:.3}/{:.3} kd {:.4} masked {:.2}",
                r.sup_sr, r.sup_jr, r.con_sr, r.con_jr, r.kd, r.masked_fraction
            );
        }
    }
    for branch in [Branch::Junior, Branch::Senior] {
        println!("{branch:?} mIoU {:.4}", trainer.evaluate(branch)?.miou());
    }
    Ok(())
}
