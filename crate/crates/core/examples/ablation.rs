//! Runs a preset grid (component ablation by default) at a reduced budget
//! and prints the summary table.
//!
//! cargo run --release --example ablation -- table6 runs/ablation

use segkc::config::RunConfig;

fn main() -> segkc::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "table5".into());
    let out = args.next().unwrap_or_else(|| "runs/ablation".into());
    let mut config = RunConfig { epochs: 1, iters_per_epoch: 60, val_size: 64, ..RunConfig::default() };
    config.set("preset", &preset)?;
    let outcome = segkc::training::run_experiment_with(&config, &out, &mut |line| println!("{line}"))?;
    println!("{}", segkc::training::SUMMARY_HEADER);
    for r in outcome.rows {
        println!("{},{},{:.4},{:.4}", r.variant, r.seed, r.final_miou_junior, r.final_miou_senior.unwrap_or(f64::NAN));
    }
    Ok(())
}
