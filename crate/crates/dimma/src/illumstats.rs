//! Per-lightness-bin illumination ratio statistics.
//!
//! Calibration measures, for every 8-bit lightness level k, how strongly a
//! camera dims pixels of that lightness: the ratios `l_dark / l_light` of all
//! pixel pairs whose light-side lightness quantizes to k are pooled across
//! the calibration pairs into a mean μ_k and standard deviation σ_k. Sparse
//! bins (fewer than two observations) are filled by linear interpolation
//! between the nearest observed bins. Dimming then draws a fresh ratio per
//! pixel from N(γ·μ_k, α·σ_k²).

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::imagecore::{quantize8, ImageTensor};
use crate::retinex::DEFAULT_EPSILON;

/// Number of lightness bins (8-bit levels).
pub const BINS: usize = 256;

/// Lower clamp for sampled ratios; keeps dimmed illumination positive.
pub const RATIO_CLAMP_MIN: f64 = 1e-4;

/// Ratio statistics for each 8-bit lightness bin.
#[derive(Debug, Clone)]
pub struct IlluminationStats {
    /// Mean ratio per bin, filled for every k after fitting.
    pub mu: [f64; BINS],
    /// Ratio standard deviation per bin (Bessel-corrected), ≥ 0.
    pub sigma: [f64; BINS],
    /// Observations that landed in each bin.
    pub count: [u64; BINS],
    /// True where mu/sigma were interpolated rather than measured.
    pub interpolated: [bool; BINS],
}

impl IlluminationStats {
    /// Whether every bin carries a usable (positive, finite) mean.
    pub fn is_filled(&self) -> bool {
        self.mu.iter().all(|&m| m.is_finite() && m > 0.0)
            && self.sigma.iter().all(|&s| s.is_finite() && s >= 0.0)
    }
}

/// How the dimmer draws reflectance and illumination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimMode {
    /// Sample ratios and reflectance from the fitted distributions.
    Stochastic,
    /// Collapse all sampling: temperature 0 and mixture-expectation
    /// reflectance. Used by the deterministic-dimming ablation.
    Deterministic,
}

/// Dimming configuration: γ range, temperature, clamps, seed.
#[derive(Debug, Clone)]
pub struct DimConfig {
    /// Lower bound of the uniform γ draw.
    pub gamma_min: f64,
    /// Upper bound of the uniform γ draw.
    pub gamma_max: f64,
    /// Temperature in [0,1]; scales sampling variance, 0 is deterministic.
    pub alpha: f64,
    /// Upper clamp for sampled ratios (γ > 1 can push them past 1).
    pub ratio_clamp_max: f64,
    pub seed: u64,
    pub mode: DimMode,
}

impl Default for DimConfig {
    fn default() -> Self {
        DimConfig {
            gamma_min: 0.3,
            gamma_max: 2.0,
            alpha: 0.7,
            ratio_clamp_max: 1.5,
            seed: 0,
            mode: DimMode::Stochastic,
        }
    }
}

impl DimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_min > 0.0 && self.gamma_min <= self.gamma_max) {
            return Err(Error::InvalidConfig(format!(
                "gamma range must satisfy 0 < min ≤ max, got [{}, {}]",
                self.gamma_min, self.gamma_max
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        if self.ratio_clamp_max < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "ratio_clamp_max must be ≥ 1, got {}",
                self.ratio_clamp_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Default)]
struct BinAccum {
    n: u64,
    sum: f64,
    sumsq: f64,
}

/// Fits per-bin ratio statistics from aligned (light, dark) pairs.
///
/// Lightness on both sides is the per-pixel channel mean stabilized as
/// `max(mean, ε)` so ratios are finite and, away from black, exact. Pixels
/// whose stabilized light-side lightness falls below 2ε carry no usable
/// signal and are discarded.
pub fn fit_stats(pairs: &[(ImageTensor, ImageTensor)]) -> Result<IlluminationStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("fit_stats needs at least one pair".into()));
    }
    let eps = DEFAULT_EPSILON;
    let mut bins = [BinAccum::default(); BINS];
    for (idx, (light, dark)) in pairs.iter().enumerate() {
        if light.data().dim() != dark.data().dim() {
            return Err(Error::ShapeMismatch(format!(
                "pair {idx}: light {:?} vs dark {:?}",
                light.data().dim(),
                dark.data().dim()
            )));
        }
        let ml = light.channel_mean();
        let md = dark.channel_mean();
        for (l_raw, d_raw) in ml.iter().zip(md.iter()) {
            let l = l_raw.max(eps);
            if l < 2.0 * eps {
                continue;
            }
            let ld = d_raw.max(eps);
            let ratio = ld / l;
            let k = quantize8(l) as usize;
            let bin = &mut bins[k];
            bin.n += 1;
            bin.sum += ratio;
            bin.sumsq += ratio * ratio;
        }
    }

    let mut stats = IlluminationStats {
        mu: [f64::NAN; BINS],
        sigma: [f64::NAN; BINS],
        count: [0; BINS],
        interpolated: [false; BINS],
    };
    let mut observed = Vec::new();
    for k in 0..BINS {
        stats.count[k] = bins[k].n;
        if bins[k].n >= 2 {
            let n = bins[k].n as f64;
            let mean = bins[k].sum / n;
            let var = ((bins[k].sumsq - bins[k].sum * bins[k].sum / n) / (n - 1.0)).max(0.0);
            stats.mu[k] = mean;
            stats.sigma[k] = var.sqrt();
            observed.push(k);
        }
    }
    if observed.is_empty() {
        return Err(Error::NoObservedBins);
    }
    fill_sparse_bins(&mut stats, &observed);
    Ok(stats)
}

/// Fills bins with fewer than two observations: linear interpolation between
/// the nearest observed bins, constant extrapolation outside them.
fn fill_sparse_bins(stats: &mut IlluminationStats, observed: &[usize]) {
    let first = observed[0];
    let last = *observed.last().expect("observed is nonempty");
    let mut next_obs = observed.iter().copied().peekable();
    let mut prev = first;
    for k in 0..BINS {
        if next_obs.peek() == Some(&k) {
            prev = k;
            next_obs.next();
            continue;
        }
        stats.interpolated[k] = true;
        if k < first {
            stats.mu[k] = stats.mu[first];
            stats.sigma[k] = stats.sigma[first];
        } else if k > last {
            stats.mu[k] = stats.mu[last];
            stats.sigma[k] = stats.sigma[last];
        } else {
            let next = *next_obs.peek().expect("k < last implies a next observed bin");
            let t = (k - prev) as f64 / (next - prev) as f64;
            stats.mu[k] = stats.mu[prev] + (stats.mu[next] - stats.mu[prev]) * t;
            stats.sigma[k] = stats.sigma[prev] + (stats.sigma[next] - stats.sigma[prev]) * t;
        }
    }
}

/// Samples a dimmed illumination field.
///
/// Per pixel: bin the input lightness, draw `φ = γ·μ_k + √α·σ_k·z` with
/// `z ~ N(0,1)`, clamp φ into `[RATIO_CLAMP_MIN, ratio_clamp_max]`, and
/// return `min(φ·L, 1)`. A normal variate is consumed for every pixel even
/// at α = 0, so the output there is bitwise identical for every seed.
pub fn sample_dim_field(
    l_field: &Array2<f64>,
    stats: &IlluminationStats,
    gamma: f64,
    alpha: f64,
    ratio_clamp_max: f64,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    if !stats.is_filled() {
        return Err(Error::UnfittedStats);
    }
    debug_assert!(gamma > 0.0);
    debug_assert!((0.0..=1.0).contains(&alpha));
    let sqrt_alpha = alpha.sqrt();
    let mut out = l_field.clone();
    for v in out.iter_mut() {
        let l = *v;
        let k = quantize8(l.clamp(0.0, 1.0)) as usize;
        let z: f64 = rng.sample(StandardNormal);
        let phi = (gamma * stats.mu[k] + sqrt_alpha * stats.sigma[k] * z)
            .clamp(RATIO_CLAMP_MIN, ratio_clamp_max);
        *v = (phi * l).min(1.0);
    }
    Ok(out)
}

/// Renders stats in the versioned text format (9 significant digits).
pub fn write_stats(stats: &IlluminationStats) -> String {
    let mut out = String::with_capacity(BINS * 40);
    out.push_str("dimma-stats v1\n");
    for k in 0..BINS {
        writeln!(
            out,
            "{k} {:.8e} {:.8e} {} {}",
            stats.mu[k],
            stats.sigma[k],
            stats.count[k],
            u8::from(stats.interpolated[k]),
        )
        .expect("string writes are infallible");
    }
    out
}

/// Parses the text format produced by [`write_stats`].
pub fn parse_stats(text: &str, origin: &Path) -> Result<IlluminationStats> {
    let err = |details: String| Error::ParseError {
        path: origin.to_path_buf(),
        details,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some("dimma-stats v1") => {}
        other => return Err(err(format!("bad header {other:?}"))),
    }
    let mut stats = IlluminationStats {
        mu: [f64::NAN; BINS],
        sigma: [f64::NAN; BINS],
        count: [0; BINS],
        interpolated: [false; BINS],
    };
    for k in 0..BINS {
        let line = lines
            .next()
            .ok_or_else(|| err(format!("missing row for bin {k}")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("bin {k}: expected 5 fields, got {}", fields.len())));
        }
        let parse_f = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("bin {k}: bad {what} `{s}`")))
        };
        if fields[0] != k.to_string() {
            return Err(err(format!("expected bin {k}, got `{}`", fields[0])));
        }
        stats.mu[k] = parse_f(fields[1], "mu")?;
        stats.sigma[k] = parse_f(fields[2], "sigma")?;
        stats.count[k] = fields[3]
            .parse()
            .map_err(|_| err(format!("bin {k}: bad count `{}`", fields[3])))?;
        stats.interpolated[k] = match fields[4] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("bin {k}: bad flag `{other}`"))),
        };
        if stats.sigma[k] < 0.0 {
            return Err(err(format!("bin {k}: negative sigma")));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(err("trailing content after bin 255".into()));
    }
    Ok(stats)
}

/// Writes stats to a file.
pub fn save_stats(stats: &IlluminationStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_stats(stats)).map_err(|e| Error::io(path, e))
}

/// Reads stats from a file.
pub fn load_stats(path: impl AsRef<Path>) -> Result<IlluminationStats> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stats(&text, path)
}
