//! Lightness-conditioned brightening network: configuration, the scalar
//! conditioning embedding, 10-channel input assembly, padded inference,
//! and checkpoint serialization.
//!
//! The network consumes `[dark(3) | equalized(3) | reflectance/3(3) |
//! illumination(1)]` and a target lightness increase Δm, and emits a
//! strictly positive residual through a sigmoid, so enhancement can only
//! brighten.

mod unet;

use std::path::Path;

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::imagecore::{hist_equalize, mirror_index, ImageTensor};
use crate::retinex::{decompose, DEFAULT_EPSILON};

pub use unet::{UNet, UNetCache};

/// Architecture hyperparameters. The checkpoint header echoes these, so a
/// saved network rebuilds with an identical parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Channel count at full resolution; doubles at each of 3 downsamples.
    pub base_channels: usize,
    /// Width of the conditioning embedding and its MLP.
    pub embed_dim: usize,
    /// Requested bottleneck attention heads at full width; scaled down
    /// proportionally for narrower nets (see [`Self::effective_heads`]).
    pub attention_heads: usize,
    /// Bottleneck self-attention on/off.
    pub attention: bool,
    /// Group normalization on/off (off yields a purely convolutional net).
    pub normalization: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 64,
            embed_dim: 256,
            attention_heads: 64,
            attention: true,
            normalization: true,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// Desk-scale preset: 16 base channels, narrower embedding.
    pub fn toy() -> Self {
        NetConfig {
            base_channels: 16,
            embed_dim: 64,
            ..Self::default()
        }
    }

    /// Heads actually used at the bottleneck: the request scaled by
    /// `base_channels/64` so head width stays constant as the net narrows,
    /// never below 1.
    pub fn effective_heads(&self) -> usize {
        (self.attention_heads * self.base_channels / 64).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base_channels.is_power_of_two() || self.base_channels < 4 {
            return Err(Error::InvalidConfig(format!(
                "base_channels must be a power of two ≥ 4, got {}",
                self.base_channels
            )));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "embed_dim must be even and ≥ 2, got {}",
                self.embed_dim
            )));
        }
        if self.attention_heads == 0 {
            return Err(Error::InvalidConfig("attention_heads must be ≥ 1".into()));
        }
        if self.attention {
            let bottom = 8 * self.base_channels;
            let heads = self.effective_heads();
            if bottom % heads != 0 {
                return Err(Error::InvalidConfig(format!(
                    "effective head count {heads} does not divide the bottleneck width {bottom}"
                )));
            }
        }
        Ok(())
    }
}

/// Raw sinusoidal features of Δm: `[sin(Δm·ω_i) | cos(Δm·ω_i)]` with
/// `ω_i = 1000·10000^(−2i/embed_dim)`. The scale maps Δm ∈ [−1,1] onto the
/// frequency range the geometric ladder covers.
pub fn sinusoid_features(delta_m: f64, embed_dim: usize) -> Array2<f64> {
    let half = embed_dim / 2;
    let mut out = Array2::zeros((1, embed_dim));
    for i in 0..half {
        let omega = 1000.0 * 10000f64.powf(-2.0 * i as f64 / embed_dim as f64);
        out[[0, i]] = (delta_m * omega).sin();
        out[[0, half + i]] = (delta_m * omega).cos();
    }
    out
}

/// The conditioning vector the residual blocks receive: the sinusoidal
/// features pushed through the network's two-layer embedding MLP.
pub fn embed_lightness(net: &UNet, delta_m: f64) -> Array1<f64> {
    net.embedding_vector(delta_m)
}

/// Stacks the 10-channel network input from a dark image:
/// `[dark(3) | hist_equalize(dark)(3) | reflectance/3(3) | illumination(1)]`,
/// channel-first. Reflectance is divided by 3 (its maximum) so every
/// channel lives in [0,1].
pub fn assemble_input(dark: &ImageTensor) -> Array3<f64> {
    let (h, w, _) = dark.data().dim();
    let eq = hist_equalize(dark);
    let pair = decompose(dark, DEFAULT_EPSILON);
    let mut out = Array3::zeros((10, h, w));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                out[[c, i, j]] = dark.data()[[i, j, c]];
                out[[3 + c, i, j]] = eq.data()[[i, j, c]];
                out[[6 + c, i, j]] = pair.reflectance[[i, j, c]] / 3.0;
            }
            out[[9, i, j]] = pair.illumination[[i, j]];
        }
    }
    out
}

/// Reflect-pads a channel-first field on the right and bottom up to the
/// next multiple of `multiple`.
pub(crate) fn pad_field_to_multiple(field: &Array3<f64>, multiple: usize) -> Array3<f64> {
    let (c, h, w) = field.dim();
    let hp = h.div_ceil(multiple) * multiple;
    let wp = w.div_ceil(multiple) * multiple;
    if hp == h && wp == w {
        return field.clone();
    }
    Array3::from_shape_fn((c, hp, wp), |(ch, i, j)| {
        field[[ch, mirror_index(i, h), mirror_index(j, w)]]
    })
}

/// Brightened image plus the raw residual the network emitted.
#[derive(Debug, Clone)]
pub struct EnhanceResult {
    pub output: ImageTensor,
    /// Sigmoid residual in `(0,1)`, `H×W×3`.
    pub residual: Array3<f64>,
}

/// Brightens a dark image toward a target lightness increase Δm ∈ [−1,1].
///
/// The input is padded to multiples of 8 (reflection on the right and
/// bottom), run through the network, and cropped back; the output is
/// `clamp(dark + residual, 0, 1)`, elementwise ≥ the input.
pub fn enhance(net: &UNet, dark: &ImageTensor, delta_m: f64) -> Result<EnhanceResult> {
    if !(-1.0..=1.0).contains(&delta_m) {
        return Err(Error::RangeError(format!(
            "delta_m must lie in [-1, 1], got {delta_m}"
        )));
    }
    let input = assemble_input(dark);
    let padded = pad_field_to_multiple(&input, 8);
    let (residual_field, _) = net.forward(&padded, delta_m, false);
    let h = dark.height();
    let w = dark.width();
    let mut residual = Array3::zeros((h, w, 3));
    let mut out = dark.data().clone();
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                residual[[i, j, c]] = residual_field[[c, i, j]];
                out[[i, j, c]] += residual[[i, j, c]];
            }
        }
    }
    let output = ImageTensor::from_array_clamped(out)?;
    Ok(EnhanceResult { output, residual })
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic `DIMMA-UNET\0`, u32 version, u32 base_channels,
// u32 embed_dim, u32 requested heads, u32 effective heads, u8 attention,
// u8 normalization, u64 seed, then every parameter tensor as little-endian
// f32 in construction order (see README for the tensor-by-tensor layout).
// ---------------------------------------------------------------------------

const UNET_MAGIC: &[u8; 11] = b"DIMMA-UNET\0";
const UNET_VERSION: u32 = 1;

/// Serializes the network to the binary checkpoint format.
pub fn unet_to_bytes(net: &UNet) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(UNET_MAGIC);
    out.extend_from_slice(&UNET_VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.base_channels as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.embed_dim as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.attention_heads as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.effective_heads() as u32).to_le_bytes());
    out.push(cfg.attention as u8);
    out.push(cfg.normalization as u8);
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    for tensor in net.tensors() {
        for &v in tensor.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint produced by [`unet_to_bytes`].
pub fn unet_from_bytes(bytes: &[u8], origin: &Path) -> Result<UNet> {
    let err = |details: &str| Error::InvalidCheckpoint {
        path: origin.to_path_buf(),
        details: details.into(),
    };
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(err("truncated"));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(11)? != UNET_MAGIC {
        return Err(err("bad magic"));
    }
    let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    if read_u32(take(4)?) != UNET_VERSION {
        return Err(err("unsupported version"));
    }
    let base_channels = read_u32(take(4)?) as usize;
    let embed_dim = read_u32(take(4)?) as usize;
    let attention_heads = read_u32(take(4)?) as usize;
    let effective = read_u32(take(4)?) as usize;
    let flag = |b: &[u8]| match b[0] {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(err(&format!("bad flag byte {other}"))),
    };
    let attention = flag(take(1)?)?;
    let normalization = flag(take(1)?)?;
    let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let config = NetConfig {
        base_channels,
        embed_dim,
        attention_heads,
        attention,
        normalization,
        seed,
    };
    if config.effective_heads() != effective {
        return Err(err("effective head count does not match the configuration"));
    }
    let mut net = UNet::build(&config)?;
    let expected: usize = net.tensors().iter().map(|t| t.len()).sum();
    if cur.len() != expected * 4 {
        return Err(err("weight blob length mismatch"));
    }
    for (param, _) in net.param_pairs() {
        let mut param = param;
        for v in param.iter_mut() {
            let raw = f32::from_le_bytes(cur[..4].try_into().expect("4 bytes"));
            cur = &cur[4..];
            *v = f64::from(raw);
        }
    }
    Ok(net)
}

pub fn save_unet(net: &UNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, unet_to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_unet(path: impl AsRef<Path>) -> Result<UNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    unet_from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::mean_lightness;
    use crate::seeding::rng_from_seed;
    use ndarray::Array3;
    use rand::Rng;

    /// Smallest legal config; attention and normalization configurable.
    fn tiny(attention: bool, normalization: bool, seed: u64) -> NetConfig {
        NetConfig {
            base_channels: 4,
            embed_dim: 8,
            attention_heads: 64,
            attention,
            normalization,
            seed,
        }
    }

    fn random_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = rng_from_seed(seed);
        ImageTensor::from_array(Array3::from_shape_fn((h, w, 3), |_| {
            rng.random_range(0.0..=1.0)
        }))
        .unwrap()
    }

    #[test]
    fn sinusoid_at_zero_is_zeros_then_ones() {
        let raw = sinusoid_features(0.0, 12);
        for i in 0..6 {
            assert_eq!(raw[[0, i]], 0.0);
            assert_eq!(raw[[0, 6 + i]], 1.0);
        }
        assert_eq!(sinusoid_features(0.37, 12), sinusoid_features(0.37, 12));
    }

    #[test]
    fn sinusoid_separates_a_lightness_grid() {
        let dim = 16;
        let grid: Vec<Array2<f64>> = (0..=100)
            .map(|k| sinusoid_features(k as f64 / 100.0, dim))
            .collect();
        let mut min_dist = f64::INFINITY;
        for a in 0..grid.len() {
            for b in a + 1..grid.len() {
                let d: f64 = (&grid[a] - &grid[b]).mapv(|v| v * v).sum().sqrt();
                min_dist = min_dist.min(d);
            }
        }
        assert!(min_dist > 0.0, "min pairwise distance {min_dist}");
    }

    #[test]
    fn assembled_channels_match_their_sources() {
        let gray = ImageTensor::constant(5, 4, 0.5).unwrap();
        let input = assemble_input(&gray);
        assert_eq!(input.dim(), (10, 5, 4));
        let eq = hist_equalize(&gray);
        for i in 0..5 {
            for j in 0..4 {
                for c in 0..3 {
                    assert_eq!(input[[c, i, j]], 0.5);
                    assert_eq!(input[[3 + c, i, j]], eq.data()[[i, j, c]]);
                    let refl = 0.5 / (0.5 + DEFAULT_EPSILON) / 3.0;
                    assert!((input[[6 + c, i, j]] - refl).abs() < 1e-12);
                }
                assert!((input[[9, i, j]] - (0.5 + DEFAULT_EPSILON)).abs() < 1e-15);
            }
        }
        let black = ImageTensor::constant(3, 3, 0.0).unwrap();
        let input = assemble_input(&black);
        for c in 0..9 {
            assert!(input.slice(ndarray::s![c, .., ..]).iter().all(|&v| v == 0.0));
        }
        assert!(input
            .slice(ndarray::s![9, .., ..])
            .iter()
            .all(|&v| v == DEFAULT_EPSILON));
    }

    #[test]
    fn build_is_deterministic_and_width_orders_size() {
        let a = UNet::build(&tiny(true, true, 7)).unwrap();
        let b = UNet::build(&tiny(true, true, 7)).unwrap();
        assert_eq!(unet_to_bytes(&a), unet_to_bytes(&b));
        let c = UNet::build(&tiny(true, true, 8)).unwrap();
        assert_ne!(unet_to_bytes(&a), unet_to_bytes(&c));

        let toy = UNet::build(&NetConfig::toy()).unwrap();
        let full = UNet::build(&NetConfig::default()).unwrap();
        assert!(toy.param_count() < full.param_count());
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let bad_base = NetConfig {
            base_channels: 12,
            ..NetConfig::toy()
        };
        assert!(bad_base.validate().is_err());
        let odd_embed = NetConfig {
            embed_dim: 15,
            ..NetConfig::toy()
        };
        assert!(odd_embed.validate().is_err());
        let bad_heads = NetConfig {
            attention_heads: 100,
            base_channels: 64,
            ..NetConfig::default()
        };
        assert!(bad_heads.validate().is_err());
    }

    #[test]
    fn forward_emits_unit_interval_residuals() {
        let net = UNet::build(&tiny(true, true, 1)).unwrap();
        let img = random_image(2, 16, 16);
        let (residual, cache) = net.forward(&assemble_input(&img), 0.4, false);
        assert!(cache.is_none());
        assert_eq!(residual.dim(), (3, 16, 16));
        assert!(residual.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn enhance_preserves_shape_and_brightens() {
        let net = UNet::build(&tiny(true, true, 3)).unwrap();
        let img = random_image(4, 57, 43);
        let result = enhance(&net, &img, 0.3).unwrap();
        assert_eq!(result.output.data().dim(), (57, 43, 3));
        assert_eq!(result.residual.dim(), (57, 43, 3));
        for (out, inp) in result.output.data().iter().zip(img.data().iter()) {
            assert!(out >= inp);
        }
        // Strict mean increase whenever the input has headroom.
        assert!(mean_lightness(&result.output) > mean_lightness(&img));
        // Out-of-range conditioning is rejected.
        assert!(enhance(&net, &img, 1.5).is_err());
    }

    #[test]
    fn zeroed_final_layer_adds_exactly_half() {
        let mut net = UNet::build(&tiny(true, true, 5)).unwrap();
        net.zero_final_layer();
        let img = random_image(6, 11, 9);
        let result = enhance(&net, &img, 0.2).unwrap();
        for (r, (out, inp)) in result
            .residual
            .iter()
            .zip(result.output.data().iter().zip(img.data().iter()))
        {
            assert_eq!(*r, 0.5);
            assert_eq!(*out, (inp + 0.5).min(1.0));
        }
    }

    #[test]
    fn conditioning_changes_the_output() {
        let net = UNet::build(&tiny(true, true, 9)).unwrap();
        let img = random_image(10, 16, 16);
        let a = enhance(&net, &img, 0.1).unwrap();
        let b = enhance(&net, &img, 0.9).unwrap();
        let max_diff = a
            .residual
            .iter()
            .zip(b.residual.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-9, "max residual difference {max_diff}");
    }

    #[test]
    fn padding_roundtrip_is_exact_for_histogram_stable_images() {
        // Two-valued images keep their equalization map under reflection
        // padding (the map sends the low level to 0 and the high to 1
        // regardless of counts), so a crop and its mirror extension feed
        // the network bitwise-identical fields. With attention and
        // normalization off the net is purely convolutional, and the
        // padded run must reproduce the unpadded run exactly.
        let net = UNet::build(&tiny(false, false, 11)).unwrap();
        let (h, w) = (43, 45);
        let mut rng = rng_from_seed(12);
        let crop = ImageTensor::from_array(Array3::from_shape_fn((h, w, 3), |_| {
            if rng.random::<f64>() < 0.5 {
                51.0 / 255.0
            } else {
                153.0 / 255.0
            }
        }))
        .unwrap();
        let full = ImageTensor::from_array(Array3::from_shape_fn((48, 48, 3), |(i, j, c)| {
            crop.data()[[mirror_index(i, h), mirror_index(j, w), c]]
        }))
        .unwrap();
        let from_crop = enhance(&net, &crop, 0.25).unwrap();
        let from_full = enhance(&net, &full, 0.25).unwrap();
        for i in 0..h {
            for j in 0..w {
                for c in 0..3 {
                    assert_eq!(
                        from_crop.output.data()[[i, j, c]],
                        from_full.output.data()[[i, j, c]],
                        "mismatch at ({i},{j},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_inference_bitwise() {
        let net = UNet::build(&tiny(true, true, 13)).unwrap();
        let bytes = unet_to_bytes(&net);
        let back = unet_from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(bytes, unet_to_bytes(&back));
        let img = random_image(14, 13, 21);
        let a = enhance(&net, &img, 0.5).unwrap();
        let b = enhance(&back, &img, 0.5).unwrap();
        assert_eq!(a.output.data(), b.output.data());
        assert_eq!(a.residual, b.residual);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let net = UNet::build(&tiny(false, true, 15)).unwrap();
        let good = unet_to_bytes(&net);
        let mut bad_magic = good.clone();
        bad_magic[0] = b'Y';
        assert!(unet_from_bytes(&bad_magic, Path::new("mem")).is_err());
        assert!(unet_from_bytes(&good[..good.len() - 1], Path::new("mem")).is_err());
        let mut bad_flag = good.clone();
        bad_flag[27] = 7;
        assert!(unet_from_bytes(&bad_flag, Path::new("mem")).is_err());
    }
}
