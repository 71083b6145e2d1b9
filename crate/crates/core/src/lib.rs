//! Semi-supervised semantic segmentation by co-training a heterogeneous
//! senior/junior network pair.
//!
//! The two branches supervise each other through confidence-thresholded
//! cross pseudo-labels. On top of that the pair exchanges knowledge in both
//! directions: junior features are fused into the senior encoder, and the
//! senior's temperature-softened predictions are distilled into the junior
//! through a KL term. Only the junior is needed at inference time.
//!
//! Everything runs on a small CPU tensor engine with reverse-mode
//! differentiation ([`numerics`]), so every loss can be checked against
//! finite differences.
//!
//! ```no_run
//! use segkc::config::RunConfig;
//! use segkc::training::run_experiment;
//!
//! let mut config = RunConfig::default();
//! config.epochs = 1;
//! let outcome = run_experiment(&config, "runs/demo").unwrap();
//! println!("junior mIoU {:.3}", outcome.rows[0].final_miou_junior);
//! ```

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod labels;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use labels::{LabelMap, IGNORE_INDEX};
pub use numerics::{Tape, Tensor, Var};
