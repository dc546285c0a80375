//! Plots what a trained reflectance mixture learned: the predicted
//! density of dark reflectance for one probe pixel, rendered as ASCII
//! per channel. The training camera shifts red reflectance up by 0.05
//! and green/blue down by 0.025, so the red density peak should sit
//! visibly to the right of the probe value while green and blue sit
//! slightly left.

use dimma::mdn::{mdn_pdf_curve, train_mdn, MdnConfig};
use dimma::synth::SyntheticCamera;

fn main() -> dimma::Result<()> {
    let camera = SyntheticCamera::default();
    let pairs = camera.shoot_pairs(7, 6, 32, 32);
    let config = MdnConfig {
        components: 2,
        hidden_widths: vec![16, 16],
        epochs: 200,
        learning_rate: 0.01,
        seed: 11,
    };
    let (params, losses) = train_mdn(&pairs, &config)?;
    println!("trained mixture, final nll {:.4}", losses.last().unwrap());

    // A mid-gray pixel observed under 60% illumination dropping to 18%.
    let probe = [1.0, 1.0, 1.0, 0.6, 0.18];
    println!("probe reflectance {:?}, illumination {} -> {}", &probe[..3], probe[3], probe[4]);

    for (channel, name) in ["red", "green", "blue"].iter().enumerate() {
        let base = probe[channel];
        let grid: Vec<f64> = (0..=60).map(|i| base - 0.15 + i as f64 * 0.005).collect();
        let curve = mdn_pdf_curve(&params, probe, channel, &grid)?;
        let (peak_value, peak_density) = curve
            .iter()
            .copied()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        println!("{name}: density peak at {peak_value:.3} (shift {:+.3})", peak_value - base);
        for (value, density) in curve.iter().step_by(5) {
            let bar = "#".repeat((40.0 * density / peak_density).round() as usize);
            let marker = if (value - base).abs() < 2.5e-3 { '|' } else { ' ' };
            println!("  {value:6.3} {marker} {bar}");
        }
    }
    Ok(())
}
