//! Full dimming pipeline: decompose a well-lit image, darken its
//! illumination with the fitted ratio statistics, distort its reflectance
//! with the mixture network, and recompose a synthetic dark image.
//!
//! [`dim_image`] is pure given an explicit random source; [`dim_corpus`]
//! materializes a folder of dark PNGs with per-image derived seeds so
//! reruns are byte-identical and images can be processed in parallel.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::illumstats::{sample_dim_field, DimConfig, DimMode, IlluminationStats};
use crate::imagecore::{mean_lightness, quantize8, save_image, ImageTensor};
use crate::mdn::{expected_reflectance, mdn_forward, sample_reflectance, MdnParams};
use crate::retinex::{decompose, DEFAULT_EPSILON};
use crate::seeding::{derive_seed, rng_from_seed};

/// One synthetic dark sample with its decomposition and bookkeeping.
#[derive(Debug, Clone)]
pub struct DimmedSample {
    pub dark: ImageTensor,
    /// Distorted reflectance before recomposition.
    pub dark_reflectance: Array3<f64>,
    /// Dimmed illumination before recomposition.
    pub dark_illumination: ndarray::Array2<f64>,
    /// Mean lightness drop: `mean_lightness(light) - mean_lightness(dark)`.
    pub delta_m: f64,
    /// The γ drawn for this sample.
    pub gamma_used: f64,
}

/// Dims one image. Draw order is fixed: γ first, then one normal per pixel
/// for the illumination field, then the per-element reflectance draws.
///
/// [`DimMode::Deterministic`] keeps the γ draw but collapses both sampling
/// stages: ratio temperature 0 and mixture-expectation reflectance.
pub fn dim_image(
    light: &ImageTensor,
    mdn: &MdnParams,
    stats: &IlluminationStats,
    cfg: &DimConfig,
    rng: &mut impl Rng,
) -> Result<DimmedSample> {
    cfg.validate()?;
    let pair = decompose(light, DEFAULT_EPSILON);
    let gamma = rng.random_range(cfg.gamma_min..=cfg.gamma_max);
    let alpha = match cfg.mode {
        DimMode::Stochastic => cfg.alpha,
        DimMode::Deterministic => 0.0,
    };
    let dark_illumination = sample_dim_field(
        &pair.illumination,
        stats,
        gamma,
        alpha,
        cfg.ratio_clamp_max,
        rng,
    )?;
    let field = mdn_forward(mdn, &pair.reflectance, &pair.illumination, &dark_illumination)?;
    let dark_reflectance = match cfg.mode {
        DimMode::Stochastic => sample_reflectance(&field, &pair.reflectance, cfg.alpha, rng),
        DimMode::Deterministic => expected_reflectance(&field, &pair.reflectance),
    };
    let (h, w, _) = dark_reflectance.dim();
    let mut product = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                product[[i, j, c]] = dark_reflectance[[i, j, c]] * dark_illumination[[i, j]];
            }
        }
    }
    let dark = ImageTensor::from_array_clamped(product)?;
    let delta_m = mean_lightness(&light) - mean_lightness(&dark);
    Ok(DimmedSample {
        dark,
        dark_reflectance,
        dark_illumination,
        delta_m,
        gamma_used: gamma,
    })
}

/// One manifest row of a dimmed corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub dark_path: PathBuf,
    pub light_path: PathBuf,
    /// Lightness drop recomputable from the stored 8-bit files.
    pub delta_m: f64,
    pub gamma: f64,
    /// The exact seed this image was dimmed with.
    pub seed: u64,
}

/// Mean lightness after projecting onto the 8-bit grid, which is what a
/// reader of the saved PNG will measure.
fn stored_lightness(img: &ImageTensor) -> f64 {
    let data = img.data();
    let sum: f64 = data.iter().map(|&v| f64::from(quantize8(v)) / 255.0).sum();
    sum / data.len() as f64
}

/// Dims every (light path, light image) item into `out_dir`: one dark PNG
/// and one sidecar per input plus a `manifest.txt` listing all records.
///
/// Image i is dimmed with seed `derive_seed(cfg.seed, "dim-corpus") ^ i`,
/// so items are independent and the run parallelizes without losing
/// determinism: the same master seed reproduces identical bytes.
pub fn dim_corpus(
    items: &[(PathBuf, ImageTensor)],
    mdn: &MdnParams,
    stats: &IlluminationStats,
    cfg: &DimConfig,
    out_dir: &Path,
) -> Result<Vec<CorpusRecord>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stems = unique_stems(items)?;
    let base_seed = derive_seed(cfg.seed, "dim-corpus");
    let records: Vec<CorpusRecord> = items
        .par_iter()
        .enumerate()
        .map(|(i, (light_path, light))| {
            let seed = base_seed ^ i as u64;
            let mut rng = rng_from_seed(seed);
            let sample = dim_image(light, mdn, stats, cfg, &mut rng)?;
            let dark_path = out_dir.join(format!("{}.png", stems[i]));
            save_image(&sample.dark, &dark_path)?;
            let delta_m = stored_lightness(light) - stored_lightness(&sample.dark);
            let record = CorpusRecord {
                dark_path,
                light_path: light_path.clone(),
                delta_m,
                gamma: sample.gamma_used,
                seed,
            };
            let sidecar = out_dir.join(format!("{}.txt", stems[i]));
            std::fs::write(&sidecar, sidecar_line(&record)).map_err(|e| Error::io(&sidecar, e))?;
            Ok(record)
        })
        .collect::<Result<_>>()?;

    let manifest_path = out_dir.join("manifest.txt");
    let mut manifest =
        std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for record in &records {
        manifest
            .write_all(manifest_line(record)?.as_bytes())
            .map_err(|e| Error::io(&manifest_path, e))?;
    }
    Ok(records)
}

/// Derives collision-free output stems from the light paths: the file stem,
/// with the item index appended on a repeat.
fn unique_stems(items: &[(PathBuf, ImageTensor)]) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut stems = Vec::with_capacity(items.len());
    for (i, (path, _)) in items.iter().enumerate() {
        let base = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .unwrap_or_else(|| format!("image{i}"));
        let stem = if seen.contains(&base) {
            format!("{base}_{i}")
        } else {
            base
        };
        if !seen.insert(stem.clone()) {
            return Err(Error::InvalidConfig(format!(
                "could not derive a unique output name for {}",
                path.display()
            )));
        }
        stems.push(stem);
    }
    Ok(stems)
}

fn sidecar_line(record: &CorpusRecord) -> String {
    format!(
        "delta_m={:.8e} gamma={:.8e} seed={}\n",
        record.delta_m, record.gamma, record.seed
    )
}

fn manifest_line(record: &CorpusRecord) -> Result<String> {
    for path in [&record.dark_path, &record.light_path] {
        let text = path.to_str().ok_or_else(|| {
            Error::InvalidConfig(format!("non-UTF-8 path {} in manifest", path.display()))
        })?;
        if text.chars().any(char::is_whitespace) {
            return Err(Error::InvalidConfig(format!(
                "path {text:?} contains whitespace and cannot be recorded in the manifest"
            )));
        }
    }
    Ok(format!(
        "{} {} {:.8e} {:.8e} {}\n",
        record.dark_path.display(),
        record.light_path.display(),
        record.delta_m,
        record.gamma,
        record.seed
    ))
}

/// Parses a `manifest.txt` written by [`dim_corpus`].
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<CorpusRecord>> {
    let err = |line: usize, details: String| Error::ParseError {
        path: origin.to_path_buf(),
        details: format!("line {line}: {details}"),
    };
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(idx + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let parse_f64 = |s: &str, name: &str| {
            s.parse::<f64>()
                .map_err(|e| err(idx + 1, format!("bad {name} {s:?}: {e}")))
        };
        records.push(CorpusRecord {
            dark_path: PathBuf::from(fields[0]),
            light_path: PathBuf::from(fields[1]),
            delta_m: parse_f64(fields[2], "delta_m")?,
            gamma: parse_f64(fields[3], "gamma")?,
            seed: fields[4]
                .parse::<u64>()
                .map_err(|e| err(idx + 1, format!("bad seed {:?}: {e}", fields[4])))?,
        });
    }
    Ok(records)
}
