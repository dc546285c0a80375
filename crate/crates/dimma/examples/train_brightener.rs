//! Trains the lightness-conditioned brightening network on synthetic
//! pairs: every batch slot takes a fresh random crop of a well-lit
//! corpus image and dims it through the calibrated model, so the network
//! never sees the same darkening twice. A short schedule on a reduced
//! architecture keeps the demo quick; `NetConfig::default()` and
//! `TrainConfig::unsupervised()` are the full-scale settings.

use std::path::PathBuf;

use dimma::brightnet::{NetConfig, UNet};
use dimma::illumstats::{fit_stats, DimConfig};
use dimma::mdn::{train_mdn, MdnConfig};
use dimma::synth::{synth_scene, SyntheticCamera};
use dimma::trainer::{train_unsupervised, LossConfig, TrainConfig, TrainSink};
use dimma::ImageTensor;

fn main() -> dimma::Result<()> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example-out/train_brightener");

    let camera = SyntheticCamera::default();
    let calib_pairs = camera.shoot_pairs(7, 6, 32, 32);
    let stats = fit_stats(&calib_pairs)?;
    let (mdn, _) = train_mdn(&calib_pairs, &MdnConfig { epochs: 100, ..MdnConfig::toy() })?;

    let corpus: Vec<ImageTensor> = (0..8).map(|i| synth_scene(300 + i, 32, 32)).collect();
    let val_pairs = camera.shoot_pairs(99, 2, 32, 32);

    let net = UNet::build(&NetConfig {
        base_channels: 8,
        embed_dim: 32,
        attention_heads: 1,
        seed: 1,
        ..NetConfig::default()
    })?;
    println!("network: {} parameters", net.param_count());

    let train_cfg = TrainConfig {
        crop_size: 24,
        batch_size: 2,
        learning_rate: 1e-3,
        max_iters: 40,
        val_interval: 10,
        early_stop_patience: 10,
        seed: 0,
    };
    let dim_cfg = DimConfig { seed: 5, ..DimConfig::default() };
    let mut sink = TrainSink::to_dir(&out, train_cfg.val_interval)?;
    let result = train_unsupervised(
        net,
        &corpus,
        &mdn,
        &stats,
        &dim_cfg,
        &train_cfg,
        &LossConfig::default(),
        &val_pairs,
        &mut sink,
    )?;

    let first = &result.history[0];
    let last = result.history.last().unwrap();
    println!("loss {:.4} (iter 1) -> {:.4} (iter {})", first.loss, last.loss, last.iter);
    if let Some(psnr) = result.best_val_psnr {
        println!("best validation psnr {psnr:.2} dB at iter {}", result.best_iter);
    }
    println!("history + checkpoints in {}", out.display());
    Ok(())
}
