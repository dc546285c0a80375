//! The whole pipeline at desk scale, from a handful of paired shots to
//! scored enhancements of held-out dark images:
//!
//! 1. calibrate the dimming model (ratio statistics + reflectance
//!    mixture) on a few (light, dark) pairs,
//! 2. train the brightening network on synthetically dimmed crops of an
//!    unlabeled well-lit corpus,
//! 3. finetune on the real pairs,
//! 4. enhance held-out darks and compare against the raw input and a
//!    histogram-equalization baseline.
//!
//! Sizes and schedules are shrunk so the demo finishes in well under a
//! minute; the structure is exactly the full-scale recipe.

use std::path::PathBuf;

use dimma::brightnet::{enhance, NetConfig, UNet};
use dimma::illumstats::{fit_stats, DimConfig};
use dimma::imagecore::{hist_equalize, mean_lightness};
use dimma::mdn::{train_mdn, MdnConfig};
use dimma::metrics::{evaluate_pair, MetricReport};
use dimma::synth::{synth_scene, SyntheticCamera};
use dimma::trainer::{finetune, train_unsupervised, LossConfig, TrainConfig, TrainSink};
use dimma::ImageTensor;

fn main() -> dimma::Result<()> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/end_to_end");

    let camera = SyntheticCamera::default();
    let train_pairs = camera.shoot_pairs(7, 6, 32, 32);
    let held_out = camera.shoot_pairs(1234, 4, 48, 48);

    // Stage 1: calibrate the dimming model.
    let stats = fit_stats(&train_pairs)?;
    let (mdn, losses) = train_mdn(
        &train_pairs,
        &MdnConfig {
            components: 2,
            hidden_widths: vec![16, 16],
            epochs: 150,
            learning_rate: 0.01,
            seed: 11,
        },
    )?;
    println!("[1/4] dimming model calibrated, nll {:.4}", losses.last().unwrap());

    // Stage 2: train on synthetically dimmed crops of an unlabeled corpus.
    let corpus: Vec<ImageTensor> = (0..8).map(|i| synth_scene(300 + i, 32, 32)).collect();
    let net = UNet::build(&NetConfig {
        base_channels: 8,
        embed_dim: 32,
        attention_heads: 1,
        seed: 1,
        ..NetConfig::default()
    })?;
    let schedule = TrainConfig {
        crop_size: 24,
        batch_size: 2,
        learning_rate: 1e-3,
        max_iters: 60,
        val_interval: 20,
        early_stop_patience: 10,
        seed: 0,
    };
    let dim_cfg = DimConfig { seed: 5, ..DimConfig::default() };
    let mut sink = TrainSink::to_dir(out.join("train"), schedule.val_interval)?;
    let trained = train_unsupervised(
        net,
        &corpus,
        &mdn,
        &stats,
        &dim_cfg,
        &schedule,
        &LossConfig::default(),
        &train_pairs,
        &mut sink,
    )?;
    println!(
        "[2/4] unsupervised training done, loss {:.4} -> {:.4}",
        trained.history[0].loss,
        trained.history.last().unwrap().loss
    );

    // Stage 3: finetune on the real pairs.
    let ft_schedule = TrainConfig { max_iters: 40, ..schedule };
    let mut sink = TrainSink::to_dir(out.join("finetune"), ft_schedule.val_interval)?;
    let tuned = finetune(
        trained.net,
        &train_pairs,
        &ft_schedule,
        &LossConfig::default(),
        &train_pairs,
        &mut sink,
    )?;
    println!("[3/4] finetune done over {} iters", tuned.history.len());

    // Stage 4: enhance held-out darks and score against two baselines.
    let mut enhanced_rows = Vec::new();
    let mut raw_rows = Vec::new();
    let mut histeq_rows = Vec::new();
    for (i, (light, dark)) in held_out.iter().enumerate() {
        let name = format!("pair_{i}");
        let delta_m = mean_lightness(light) - mean_lightness(dark);
        let output = enhance(&tuned.net, dark, delta_m)?.output;
        enhanced_rows.push(evaluate_pair(&name, &output, light)?);
        raw_rows.push(evaluate_pair(&name, dark, light)?);
        histeq_rows.push(evaluate_pair(&name, &hist_equalize(dark), light)?);
    }
    println!("[4/4] scored {} held-out pairs:", held_out.len());
    for (label, rows) in [
        ("raw dark", raw_rows),
        ("histogram eq", histeq_rows),
        ("enhanced", enhanced_rows),
    ] {
        let report = MetricReport::from_rows(rows)?;
        println!(
            "  {label:13} psnr {:6.2} dB   ssim {:.4}   delta_e {:6.2}",
            report.mean.psnr, report.mean.ssim_gray, report.mean.delta_e
        );
    }
    println!("training artifacts in {}", out.display());
    Ok(())
}
