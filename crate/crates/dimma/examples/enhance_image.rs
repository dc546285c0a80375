//! Brightens one dark image at several target lightness lifts with a
//! single network. The lift is an inference-time input: the same
//! weights produce a family of enhancements, one per requested lift.
//! The short unsupervised training here (random gamma draws give varied
//! lightness drops) is just enough to make the conditioning measurable;
//! a real run loads a fully trained checkpoint, where outputs track the
//! requested lift closely.

use std::path::PathBuf;

use dimma::brightnet::{enhance, NetConfig, UNet};
use dimma::illumstats::{fit_stats, DimConfig};
use dimma::imagecore::{mean_lightness, save_image};
use dimma::mdn::{train_mdn, MdnConfig};
use dimma::synth::{synth_scene, SyntheticCamera};
use dimma::trainer::{train_unsupervised, LossConfig, TrainConfig, TrainSink};
use dimma::ImageTensor;

fn main() -> dimma::Result<()> {
    let out =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/enhance_image");
    std::fs::create_dir_all(&out).expect("create output directory");

    let camera = SyntheticCamera::default();
    let calib_pairs = camera.shoot_pairs(7, 6, 32, 32);
    let stats = fit_stats(&calib_pairs)?;
    let (mdn, _) = train_mdn(&calib_pairs, &MdnConfig { epochs: 100, ..MdnConfig::toy() })?;
    let corpus: Vec<ImageTensor> = (0..8).map(|i| synth_scene(300 + i, 32, 32)).collect();

    let net = UNet::build(&NetConfig {
        base_channels: 8,
        embed_dim: 32,
        attention_heads: 1,
        seed: 1,
        ..NetConfig::default()
    })?;
    let train_cfg = TrainConfig {
        crop_size: 24,
        batch_size: 2,
        learning_rate: 1e-3,
        max_iters: 50,
        val_interval: 25,
        early_stop_patience: 10,
        seed: 0,
    };
    let dim_cfg = DimConfig { seed: 5, ..DimConfig::default() };
    let result = train_unsupervised(
        net,
        &corpus,
        &mdn,
        &stats,
        &dim_cfg,
        &train_cfg,
        &LossConfig::default(),
        &[],
        &mut TrainSink::null(),
    )?;

    let (_, dark) = &camera.shoot_pairs(123, 1, 48, 48)[0];
    save_image(dark, out.join("input.png"))?;
    println!("input mean lightness {:.3}", mean_lightness(dark));

    let mut outputs = Vec::new();
    for target in [0.25, 0.4, 0.55] {
        let enhanced = enhance(&result.net, dark, target)?;
        let path = out.join(format!("enhanced_{:03}.png", (target * 100.0) as u32));
        save_image(&enhanced.output, &path)?;
        println!(
            "lift {target:+.2}: mean lightness {:.4} -> {}",
            mean_lightness(&enhanced.output),
            path.display(),
        );
        outputs.push(enhanced.output);
    }
    for pair in outputs.windows(2) {
        let diff = (pair[0].data() - pair[1].data()).mapv(f64::abs);
        println!(
            "consecutive lifts differ by {:.4} mean / {:.4} max per pixel",
            diff.mean().unwrap(),
            diff.iter().fold(0.0f64, |a, &b| a.max(b)),
        );
    }
    Ok(())
}
