//! Few-shot camera-calibrated low-light image dimming and enhancement.
//!
//! The pipeline has three stages, each covered by a runnable example:
//!
//! 1. **Calibrate a dimming model** from a handful of (light, dark) photo
//!    pairs: an exact retinex factorization splits each image into
//!    reflectance and illumination, per-lightness-bin ratio statistics model
//!    how illumination drops, and a small per-pixel mixture density network
//!    models how reflectance distorts in the dark.
//! 2. **Synthesize dark training data** by dimming any collection of
//!    well-lit images through the calibrated model, then train a
//!    lightness-conditioned residual UNet to undo the dimming.
//! 3. **Finetune on the real pairs** and enhance new dark photos at a
//!    caller-chosen target lightness.
//!
//! Start with the examples (each prints what it produced):
//!
//! ```text
//! cargo run --release --example end_to_end
//! cargo run --release --example synthetic_dataset
//! cargo run --release --example fit_dimming
//! cargo run --release --example dim_folder
//! cargo run --release --example train_brightener
//! cargo run --release --example finetune_brightener
//! cargo run --release --example enhance_image
//! cargo run --release --example evaluate_folder
//! cargo run --release --example inspect_mdn
//! ```
//!
//! The same capabilities are scriptable through the thin `dimma` binary
//! (`dimma fit-dim`, `dim`, `train`, `finetune`, `enhance`, `eval`,
//! `inspect-mdn`, `corpus`). Every entry point takes a master seed and is
//! bit-reproducible: rerunning a command with the same inputs and seed
//! writes identical files.

pub mod brightnet;
pub mod cli;
pub mod config;
pub mod dataingest;
pub mod dimmer;
pub mod error;
pub mod illumstats;
pub mod imagecore;
pub mod mdn;
pub mod metrics;
pub mod nn;
pub mod retinex;
pub mod seeding;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use imagecore::ImageTensor;
