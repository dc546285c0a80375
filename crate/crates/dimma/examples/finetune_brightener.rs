//! Finetunes a brightening network on real paired shots, the
//! supervision stage that adapts the synthetically trained weights to an
//! actual camera. The lightness-drop conditioning comes from each pair
//! itself, so the network learns the camera's true dimming scale. Here
//! the starting weights are fresh for brevity; chain it after
//! `train_brightener` by loading that run's checkpoint instead.

use std::path::PathBuf;

use dimma::brightnet::{enhance, NetConfig, UNet};
use dimma::imagecore::mean_lightness;
use dimma::metrics::psnr;
use dimma::synth::SyntheticCamera;
use dimma::trainer::{finetune, LossConfig, TrainConfig, TrainSink};

fn main() -> dimma::Result<()> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example-out/finetune_brightener");

    let camera = SyntheticCamera::default();
    let pairs = camera.shoot_pairs(7, 4, 32, 32);
    let val_pairs = camera.shoot_pairs(99, 2, 32, 32);

    let net = UNet::build(&NetConfig {
        base_channels: 8,
        embed_dim: 32,
        attention_heads: 1,
        seed: 1,
        ..NetConfig::default()
    })?;

    // Score one held-out pair before and after to show the adaptation.
    let (val_light, val_dark) = &val_pairs[0];
    let delta_m = mean_lightness(val_light) - mean_lightness(val_dark);
    let before = psnr(&enhance(&net, val_dark, delta_m)?.output, val_light)?;

    let train_cfg = TrainConfig {
        crop_size: 24,
        batch_size: 2,
        learning_rate: 1e-3,
        max_iters: 40,
        val_interval: 10,
        early_stop_patience: 10,
        seed: 0,
    };
    let mut sink = TrainSink::to_dir(&out, train_cfg.val_interval)?;
    let result = finetune(net, &pairs, &train_cfg, &LossConfig::default(), &val_pairs, &mut sink)?;

    let after = psnr(&enhance(&result.net, val_dark, delta_m)?.output, val_light)?;
    println!("finetuned on {} pairs for {} iters", pairs.len(), result.history.len());
    println!("held-out pair psnr {before:.2} dB -> {after:.2} dB");
    if let Some(psnr) = result.best_val_psnr {
        println!("best validation psnr {psnr:.2} dB at iter {}", result.best_iter);
    }
    println!("history + checkpoints in {}", out.display());
    Ok(())
}
