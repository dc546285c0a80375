//! Darkens a folder of well-lit images through a calibrated dimming
//! model, the step that turns any image collection into synthetic
//! low-light training data. Each output gets a dark PNG, a sidecar with
//! its exact float reflectance and illumination, and a manifest line
//! recording the lightness drop, the gamma draw, and the seed.

use std::path::PathBuf;

use dimma::dimmer::dim_corpus;
use dimma::illumstats::{fit_stats, DimConfig};
use dimma::imagecore::save_image;
use dimma::mdn::{train_mdn, MdnConfig};
use dimma::synth::{synth_scene, SyntheticCamera};
use dimma::ImageTensor;

fn main() -> dimma::Result<()> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/dim_folder");
    let in_dir = out.join("input");
    std::fs::create_dir_all(&in_dir).expect("create input directory");

    // A handful of well-lit scenes standing in for any photo collection.
    let items: Vec<(PathBuf, ImageTensor)> = (0..6)
        .map(|i| {
            let img = synth_scene(900 + i, 40, 40);
            let path = in_dir.join(format!("scene_{i}.png"));
            save_image(&img, &path).map(|()| (path, img))
        })
        .collect::<dimma::Result<_>>()?;

    // Calibrate from synthetic pairs; a real run loads saved artifacts.
    let pairs = SyntheticCamera::default().shoot_pairs(7, 6, 32, 32);
    let stats = fit_stats(&pairs)?;
    let (mdn, _) = train_mdn(&pairs, &MdnConfig { epochs: 100, ..MdnConfig::toy() })?;

    let cfg = DimConfig { seed: 5, ..DimConfig::default() };
    let records = dim_corpus(&items, &mdn, &stats, &cfg, &out.join("dark"))?;

    println!("dimmed {} images into {}", records.len(), out.join("dark").display());
    println!("dark_file  lightness_drop  gamma");
    for rec in &records {
        println!(
            "{}  {:+.3}  {:.3}",
            rec.dark_path.file_name().unwrap().to_string_lossy(),
            rec.delta_m,
            rec.gamma,
        );
    }
    Ok(())
}
