//! Scores a folder of predicted images against ground truth with the
//! full metric set (PSNR, grayscale and per-channel SSIM, CIE Lab color
//! difference) and prints both report formats. The "predictions" here
//! are two classic no-learning baselines applied to dark shots, which
//! is also how enhancement results get contextualized: a trained
//! network has to beat both.

use std::path::PathBuf;

use dimma::imagecore::{hist_equalize, save_image};
use dimma::metrics::evaluate_dir;
use dimma::synth::SyntheticCamera;

fn main() -> dimma::Result<()> {
    let out =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/evaluate_folder");
    let gt_dir = out.join("gt");
    let raw_dir = out.join("raw");
    let histeq_dir = out.join("histeq");
    for dir in [&gt_dir, &raw_dir, &histeq_dir] {
        std::fs::create_dir_all(dir).expect("create output directory");
    }

    for (i, (light, dark)) in SyntheticCamera::default()
        .shoot_pairs(7, 5, 48, 48)
        .iter()
        .enumerate()
    {
        let name = format!("scene_{i:02}.png");
        save_image(light, gt_dir.join(&name))?;
        save_image(dark, raw_dir.join(&name))?;
        save_image(&hist_equalize(dark), histeq_dir.join(&name))?;
    }

    for (label, pred_dir) in [("raw dark", &raw_dir), ("histogram equalized", &histeq_dir)] {
        let (report, warnings) = evaluate_dir(pred_dir, &gt_dir)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        println!("== {label} vs ground truth ==");
        println!("{}", report.to_markdown());
    }

    let (report, _) = evaluate_dir(&histeq_dir, &gt_dir)?;
    std::fs::write(out.join("histeq.csv"), report.to_csv()).expect("write csv");
    println!("csv report in {}", out.join("histeq.csv").display());
    Ok(())
}
