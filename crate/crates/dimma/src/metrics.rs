//! Full-reference image quality metrics and batch evaluation reports.
//!
//! Three metrics cover the usual axes of enhancement quality: PSNR for raw
//! fidelity, SSIM (on luma and per RGB channel) for structural agreement,
//! and mean CIE76 DeltaE for perceptual color distance. [`evaluate_dir`]
//! pairs two directories by filename and aggregates the per-image rows into
//! a [`MetricReport`] that renders as CSV or a Markdown table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::{load_image, ImageTensor};

/// PSNR reported for a zero-MSE pair; keeps aggregates finite.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Side length of the SSIM analysis window.
const SSIM_WINDOW: usize = 11;
/// Standard deviation of the SSIM Gaussian window.
const SSIM_SIGMA: f64 = 1.5;
/// SSIM stabilizers for a unit dynamic range.
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.data().dim() != b.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs disagree: {:?} vs {:?}",
            a.data().dim(),
            b.data().dim()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 1.0, capped at
/// [`PSNR_CAP_DB`] for identical inputs.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let mut sum_sq = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        let d = x - y;
        sum_sq += d * d;
    }
    let mse = sum_sq / a.data().len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps for the separable SSIM window.
fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, tap) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *tap = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *tap;
    }
    for tap in &mut k {
        *tap /= sum;
    }
    k
}

/// Valid-mode separable filtering with the SSIM window; output shrinks by
/// `SSIM_WINDOW - 1` in each dimension.
fn filter_valid(plane: &Array2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let wo = w - (SSIM_WINDOW - 1);
    let ho = h - (SSIM_WINDOW - 1);
    let mut rows = Array2::zeros((h, wo));
    for y in 0..h {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &tap) in k.iter().enumerate() {
                acc += tap * plane[[y, x + i]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((ho, wo));
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &tap) in k.iter().enumerate() {
                acc += tap * rows[[y + i, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Mean SSIM between two planes over all valid window positions.
fn ssim_plane(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let k = ssim_kernel();
    let mu_x = filter_valid(x, &k);
    let mu_y = filter_valid(y, &k);
    let e_xx = filter_valid(&(x * x), &k);
    let e_yy = filter_valid(&(y * y), &k);
    let e_xy = filter_valid(&(x * y), &k);
    let mut total = 0.0;
    for ((((&mx, &my), &xx), &yy), &xy) in mu_x
        .iter()
        .zip(mu_y.iter())
        .zip(e_xx.iter())
        .zip(e_yy.iter())
        .zip(e_xy.iter())
    {
        let var_x = xx - mx * mx;
        let var_y = yy - my * my;
        let cov = xy - mx * my;
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2);
        total += num / den;
    }
    total / mu_x.len() as f64
}

fn check_ssim_size(img: &ImageTensor) -> Result<()> {
    if img.height() < SSIM_WINDOW || img.width() < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Rec.601 luma plane of an image.
fn luma(img: &ImageTensor) -> Array2<f64> {
    let data = img.data();
    let (h, w, _) = data.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * data[[y, x, 0]] + 0.587 * data[[y, x, 1]] + 0.114 * data[[y, x, 2]]
    })
}

fn channel_plane(img: &ImageTensor, c: usize) -> Array2<f64> {
    let data = img.data();
    let (h, w, _) = data.dim();
    Array2::from_shape_fn((h, w), |(y, x)| data[[y, x, c]])
}

/// SSIM on the Rec.601 luma with an 11x11 Gaussian window (sigma 1.5).
pub fn ssim_gray(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    check_ssim_size(a)?;
    Ok(ssim_plane(&luma(a), &luma(b)))
}

/// Mean of the per-channel SSIM values over R, G, and B.
pub fn ssim_rgb(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    check_ssim_size(a)?;
    let mut total = 0.0;
    for c in 0..3 {
        total += ssim_plane(&channel_plane(a, c), &channel_plane(b, c));
    }
    Ok(total / 3.0)
}

/// Rows of the sRGB to XYZ matrix (D65, 2 degree observer).
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
];
/// D65 reference white in XYZ.
const WHITE_XYZ: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_linearize(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    let delta = 6.0 / 29.0;
    if t > delta * delta * delta {
        t.cbrt()
    } else {
        t / (3.0 * delta * delta) + 4.0 / 29.0
    }
}

/// Converts one sRGB triple in [0,1] to CIELAB under D65.
fn srgb_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    let lin = [srgb_linearize(r), srgb_linearize(g), srgb_linearize(b)];
    let mut f = [0.0; 3];
    for i in 0..3 {
        let coord = SRGB_TO_XYZ[i][0] * lin[0]
            + SRGB_TO_XYZ[i][1] * lin[1]
            + SRGB_TO_XYZ[i][2] * lin[2];
        f[i] = lab_f(coord / WHITE_XYZ[i]);
    }
    [
        116.0 * f[1] - 16.0,
        500.0 * (f[0] - f[1]),
        200.0 * (f[1] - f[2]),
    ]
}

/// Mean CIE76 color difference over pixels, in CIELAB under D65.
pub fn delta_e(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let (da, db) = (a.data(), b.data());
    let (h, w, _) = da.dim();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let la = srgb_to_lab(da[[y, x, 0]], da[[y, x, 1]], da[[y, x, 2]]);
            let lb = srgb_to_lab(db[[y, x, 0]], db[[y, x, 1]], db[[y, x, 2]]);
            let mut sq = 0.0;
            for i in 0..3 {
                let d = la[i] - lb[i];
                sq += d * d;
            }
            total += sq.sqrt();
        }
    }
    Ok(total / (h * w) as f64)
}

/// One evaluated image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub ssim_gray: f64,
    pub ssim_rgb: f64,
    pub delta_e: f64,
}

/// Mean or standard deviation across a report's rows, one value per metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub psnr: f64,
    pub ssim_gray: f64,
    pub ssim_rgb: f64,
    pub delta_e: f64,
}

/// Per-image metric rows plus their mean and sample standard deviation.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricReport {
    /// Builds a report from per-image rows, computing the aggregates.
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("metric report needs at least one row".into()));
        }
        let collect = |f: fn(&MetricRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let (psnr_m, psnr_s) = mean_and_std(&collect(|r| r.psnr));
        let (sg_m, sg_s) = mean_and_std(&collect(|r| r.ssim_gray));
        let (sr_m, sr_s) = mean_and_std(&collect(|r| r.ssim_rgb));
        let (de_m, de_s) = mean_and_std(&collect(|r| r.delta_e));
        Ok(MetricReport {
            rows,
            mean: MetricSummary {
                psnr: psnr_m,
                ssim_gray: sg_m,
                ssim_rgb: sr_m,
                delta_e: de_m,
            },
            std: MetricSummary {
                psnr: psnr_s,
                ssim_gray: sg_s,
                ssim_rgb: sr_s,
                delta_e: de_s,
            },
        })
    }

    /// Renders the report as CSV with `mean` and `std` summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr,ssim_gray,ssim_rgb,delta_e\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.name, r.psnr, r.ssim_gray, r.ssim_rgb, r.delta_e
            );
        }
        let _ = writeln!(
            out,
            "mean,{:.6},{:.6},{:.6},{:.6}",
            self.mean.psnr, self.mean.ssim_gray, self.mean.ssim_rgb, self.mean.delta_e
        );
        let _ = writeln!(
            out,
            "std,{:.6},{:.6},{:.6},{:.6}",
            self.std.psnr, self.std.ssim_gray, self.std.ssim_rgb, self.std.delta_e
        );
        out
    }

    /// Renders the report as a Markdown table ending in a `mean ± std` row.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| name | psnr | ssim_gray | ssim_rgb | delta_e |\n|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.name, r.psnr, r.ssim_gray, r.ssim_rgb, r.delta_e
            );
        }
        let _ = writeln!(
            out,
            "| mean ± std | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
            self.mean.psnr,
            self.std.psnr,
            self.mean.ssim_gray,
            self.std.ssim_gray,
            self.mean.ssim_rgb,
            self.std.ssim_rgb,
            self.mean.delta_e,
            self.std.delta_e
        );
        out
    }
}

/// Computes all four metrics for one prediction/ground-truth pair.
pub fn evaluate_pair(name: &str, pred: &ImageTensor, gt: &ImageTensor) -> Result<MetricRow> {
    Ok(MetricRow {
        name: name.to_string(),
        psnr: psnr(pred, gt)?,
        ssim_gray: ssim_gray(pred, gt)?,
        ssim_rgb: ssim_rgb(pred, gt)?,
        delta_e: delta_e(pred, gt)?,
    })
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Pairs two directories by filename and evaluates every matched pair.
///
/// Returns the report plus warnings naming files present in only one
/// directory. Pairs evaluate in parallel; row order follows filename order.
pub fn evaluate_dir(pred_dir: &Path, gt_dir: &Path) -> Result<(MetricReport, Vec<String>)> {
    let preds = list_images(pred_dir)?;
    let gts = list_images(gt_dir)?;
    let mut warnings = Vec::new();
    for name in preds.keys() {
        if !gts.contains_key(name) {
            warnings.push(format!("no ground truth for {name}; skipped"));
        }
    }
    for name in gts.keys() {
        if !preds.contains_key(name) {
            warnings.push(format!("no prediction for {name}; skipped"));
        }
    }
    let matched: Vec<(&String, &PathBuf)> = preds
        .iter()
        .filter(|(name, _)| gts.contains_key(*name))
        .collect();
    if matched.is_empty() {
        return Err(Error::NoPairsFound);
    }
    let rows = matched
        .par_iter()
        .map(|(name, pred_path)| {
            let pred = load_image(pred_path)?;
            let gt = load_image(&gts[*name])?;
            evaluate_pair(name, &pred, &gt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((MetricReport::from_rows(rows)?, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::save_image;
    use ndarray::Array3;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((h, w, 3), |_| rng.random::<f64>());
        ImageTensor::from_array(data).unwrap()
    }

    #[test]
    fn psnr_identity_cap_and_known_constants() {
        let a = random_image(9, 13, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let x = ImageTensor::constant(8, 8, 0.6).unwrap();
        let y = ImageTensor::constant(8, 8, 0.5).unwrap();
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
        let w = ImageTensor::constant(8, 8, 1.0).unwrap();
        let b = ImageTensor::constant(8, 8, 0.0).unwrap();
        assert!(psnr(&w, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_is_symmetric_and_checks_shapes() {
        let a = random_image(12, 14, 2);
        let b = random_image(12, 14, 3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = random_image(12, 15, 4);
        assert!(matches!(psnr(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn ssim_of_identical_images_is_exactly_one() {
        let a = random_image(16, 19, 5);
        assert_eq!(ssim_gray(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim_rgb(&a, &a).unwrap(), 1.0);
    }

    /// Direct sliding-window SSIM with explicit 11x11 weights; the
    /// independent oracle for the separable implementation.
    fn ssim_plane_naive(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let k = ssim_kernel();
        let (h, w) = x.dim();
        let mut total = 0.0;
        let mut count = 0usize;
        for cy in 0..h - (SSIM_WINDOW - 1) {
            for cx in 0..w - (SSIM_WINDOW - 1) {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wgt = k[i] * k[j];
                        let xv = x[[cy + i, cx + j]];
                        let yv = y[[cy + i, cx + j]];
                        mx += wgt * xv;
                        my += wgt * yv;
                        xx += wgt * xv * xv;
                        yy += wgt * yv * yv;
                        xy += wgt * xv * yv;
                    }
                }
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_window_oracle() {
        for seed in 0..4 {
            let a = random_image(20, 17, 100 + seed);
            let b = random_image(20, 17, 200 + seed);
            let fast = ssim_gray(&a, &b).unwrap();
            let naive = ssim_plane_naive(&luma(&a), &luma(&b));
            assert!(
                (fast - naive).abs() < 1e-9,
                "gray separable {fast} vs naive {naive}"
            );
            let fast_rgb = ssim_rgb(&a, &b).unwrap();
            let naive_rgb = (0..3)
                .map(|c| ssim_plane_naive(&channel_plane(&a, c), &channel_plane(&b, c)))
                .sum::<f64>()
                / 3.0;
            assert!((fast_rgb - naive_rgb).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_of_inverted_checkerboard_is_negative() {
        let data = Array3::from_shape_fn((16, 16, 3), |(y, x, _)| {
            if (y + x) % 2 == 0 {
                0.9
            } else {
                0.1
            }
        });
        let a = ImageTensor::from_array(data.clone()).unwrap();
        let b = ImageTensor::from_array(data.mapv(|v| 1.0 - v)).unwrap();
        assert!(ssim_gray(&a, &b).unwrap() < 0.0);
        assert!(ssim_rgb(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_images_below_the_window() {
        let a = random_image(10, 14, 6);
        let b = random_image(10, 14, 7);
        assert!(matches!(ssim_gray(&a, &b), Err(Error::TooSmall(_))));
        assert!(matches!(ssim_rgb(&a, &b), Err(Error::TooSmall(_))));
    }

    #[test]
    fn ssim_penalizes_translation() {
        let base = random_image(24, 24, 8);
        let shifted = Array3::from_shape_fn((24, 24, 3), |(y, x, c)| {
            base.data()[[y, (x + 3) % 24, c]]
        });
        let b = ImageTensor::from_array(shifted).unwrap();
        let s = ssim_gray(&base, &b).unwrap();
        assert!(s < 1.0 - 1e-3, "shifted SSIM {s} should be well below 1");
    }

    #[test]
    fn delta_e_anchors_and_symmetry() {
        let a = random_image(7, 9, 9);
        assert_eq!(delta_e(&a, &a).unwrap(), 0.0);
        let white = ImageTensor::constant(4, 4, 1.0).unwrap();
        let black = ImageTensor::constant(4, 4, 0.0).unwrap();
        assert!((delta_e(&white, &black).unwrap() - 100.0).abs() < 1e-6);
        let mut red = Array3::zeros((4, 4, 3));
        red.slice_mut(ndarray::s![.., .., 0]).fill(1.0);
        let mut blue = Array3::zeros((4, 4, 3));
        blue.slice_mut(ndarray::s![.., .., 2]).fill(1.0);
        let red = ImageTensor::from_array(red).unwrap();
        let blue = ImageTensor::from_array(blue).unwrap();
        // Reference value from an independent implementation of the same
        // sRGB D65 conversion chain.
        assert!((delta_e(&red, &blue).unwrap() - 176.332723758041).abs() < 1e-6);
        let b = random_image(7, 9, 10);
        assert_eq!(delta_e(&a, &b).unwrap(), delta_e(&b, &a).unwrap());
    }

    #[test]
    fn delta_e_zero_only_for_equal_images() {
        let a = random_image(6, 6, 11);
        let mut bumped = a.data().clone();
        bumped[[3, 2, 1]] = (bumped[[3, 2, 1]] + 0.2).min(1.0);
        let b = ImageTensor::from_array(bumped).unwrap();
        assert!(delta_e(&a, &b).unwrap() > 1e-4);
    }

    #[test]
    fn report_aggregates_match_direct_recomputation() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let rows: Vec<MetricRow> = (0..7)
            .map(|i| MetricRow {
                name: format!("img{i}"),
                psnr: rng.random::<f64>() * 40.0,
                ssim_gray: rng.random::<f64>(),
                ssim_rgb: rng.random::<f64>(),
                delta_e: rng.random::<f64>() * 30.0,
            })
            .collect();
        let report = MetricReport::from_rows(rows.clone()).unwrap();
        let psnrs: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
        let n = psnrs.len() as f64;
        let mean = psnrs.iter().sum::<f64>() / n;
        let std = (psnrs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((report.mean.psnr - mean).abs() < 1e-9);
        assert!((report.std.psnr - std).abs() < 1e-9);
        assert!(matches!(
            MetricReport::from_rows(Vec::new()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn single_row_report_has_zero_std() {
        let report = MetricReport::from_rows(vec![MetricRow {
            name: "only".into(),
            psnr: 31.0,
            ssim_gray: 0.9,
            ssim_rgb: 0.8,
            delta_e: 4.0,
        }])
        .unwrap();
        assert_eq!(report.std.psnr, 0.0);
        assert_eq!(report.mean.psnr, 31.0);
    }

    #[test]
    fn csv_and_markdown_have_the_documented_shape() {
        let report = MetricReport::from_rows(vec![
            MetricRow {
                name: "a.png".into(),
                psnr: 30.0,
                ssim_gray: 0.9,
                ssim_rgb: 0.85,
                delta_e: 5.0,
            },
            MetricRow {
                name: "b.png".into(),
                psnr: 32.0,
                ssim_gray: 0.95,
                ssim_rgb: 0.9,
                delta_e: 4.0,
            },
        ])
        .unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "name,psnr,ssim_gray,ssim_rgb,delta_e");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("mean,"));
        assert!(lines[4].starts_with("std,"));
        let md = report.to_markdown();
        assert!(md.starts_with("| name | psnr | ssim_gray | ssim_rgb | delta_e |"));
        assert!(md.contains("mean ± std"));
    }

    #[test]
    fn evaluate_dir_pairs_by_filename_and_warns_on_orphans() {
        let tmp = tempfile::tempdir().unwrap();
        let pred_dir = tmp.path().join("pred");
        let gt_dir = tmp.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        let shared1 = random_image(16, 16, 20);
        let shared2 = random_image(16, 16, 21);
        save_image(&shared1, pred_dir.join("b.png")).unwrap();
        save_image(&shared1, gt_dir.join("b.png")).unwrap();
        save_image(&shared2, pred_dir.join("c.png")).unwrap();
        save_image(&shared2, gt_dir.join("c.png")).unwrap();
        save_image(&shared1, pred_dir.join("orphan_pred.png")).unwrap();
        save_image(&shared2, gt_dir.join("orphan_gt.png")).unwrap();
        let (report, warnings) = evaluate_dir(&pred_dir, &gt_dir).unwrap();
        let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, vec!["b.png", "c.png"]);
        for row in &report.rows {
            assert_eq!(row.psnr, PSNR_CAP_DB);
            assert_eq!(row.ssim_gray, 1.0);
            assert_eq!(row.delta_e, 0.0);
        }
        assert_eq!(warnings.len(), 2);
        assert!(warnings.iter().any(|w| w.contains("orphan_pred.png")));
        assert!(warnings.iter().any(|w| w.contains("orphan_gt.png")));
    }

    #[test]
    fn evaluate_dir_with_no_overlap_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let pred_dir = tmp.path().join("pred");
        let gt_dir = tmp.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        save_image(&random_image(16, 16, 30), pred_dir.join("x.png")).unwrap();
        save_image(&random_image(16, 16, 31), gt_dir.join("y.png")).unwrap();
        assert!(matches!(
            evaluate_dir(&pred_dir, &gt_dir),
            Err(Error::NoPairsFound)
        ));
    }
}
