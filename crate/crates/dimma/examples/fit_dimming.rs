//! Calibrates the two halves of the dimming model from a handful of
//! paired shots: per-lightness-bin illumination ratio statistics and a
//! mixture density network over reflectance distortion. Saves both
//! artifacts in the layout the `dimma dim` and `dimma train` commands
//! expect (`stats.txt` and `mdn.ckpt`).

use std::path::PathBuf;

use dimma::illumstats::{fit_stats, save_stats};
use dimma::mdn::{save_mdn, train_mdn, MdnConfig};
use dimma::synth::SyntheticCamera;

fn main() -> dimma::Result<()> {
    let out =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/fit_dimming");
    std::fs::create_dir_all(&out).expect("create output directory");

    let pairs = SyntheticCamera::default().shoot_pairs(7, 6, 32, 32);

    let stats = fit_stats(&pairs)?;
    save_stats(&stats, out.join("stats.txt"))?;
    let observed = stats.interpolated.iter().filter(|&&i| !i).count();
    println!("ratio statistics: {observed}/256 lightness bins observed directly");
    for bin in [40usize, 80, 120, 160] {
        println!(
            "  bin {bin:3}: ratio {:.3} +- {:.3} ({} samples{})",
            stats.mu[bin],
            stats.sigma[bin],
            stats.count[bin],
            if stats.interpolated[bin] { ", interpolated" } else { "" },
        );
    }

    let config = MdnConfig {
        components: 2,
        hidden_widths: vec![16, 16],
        epochs: 150,
        learning_rate: 0.01,
        seed: 11,
    };
    let (params, losses) = train_mdn(&pairs, &config)?;
    save_mdn(&params, out.join("mdn.ckpt"))?;
    println!(
        "mixture fit: nll {:.4} -> {:.4} over {} epochs",
        losses.first().unwrap(),
        losses.last().unwrap(),
        losses.len()
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
