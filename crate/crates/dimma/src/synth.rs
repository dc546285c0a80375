//! Procedural test scenes and a synthetic camera with a known dimming rule.
//!
//! [`synth_scene`] renders smooth, colorful images whose lightness varies
//! enough to populate many statistics bins. [`SyntheticCamera`] degrades
//! them by a fixed, fully known rule, so a pipeline fitted on its output can
//! be judged against ground truth instead of against another model.

use ndarray::Array3;
use rand::prelude::*;
use rand_distr::StandardNormal;

use crate::imagecore::ImageTensor;
use crate::mdn::REFLECTANCE_MAX;
use crate::retinex::{decompose, DEFAULT_EPSILON};
use crate::seeding::rng_from_seed;

/// Renders a deterministic procedural scene: a two-corner color gradient
/// with a handful of soft colored blobs, values kept inside [0.05, 0.98].
pub fn synth_scene(seed: u64, height: usize, width: usize) -> ImageTensor {
    assert!(height > 0 && width > 0, "scene dimensions must be positive");
    let mut rng = rng_from_seed(seed);
    let corner_a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let corner_b: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    struct Blob {
        cy: f64,
        cx: f64,
        radius: f64,
        color: [f64; 3],
        amplitude: f64,
    }
    let blobs: Vec<Blob> = (0..5)
        .map(|_| Blob {
            cy: rng.random_range(0.0..1.0),
            cx: rng.random_range(0.0..1.0),
            radius: rng.random_range(0.1..0.4),
            color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            amplitude: rng.random_range(0.2..0.6),
        })
        .collect();
    let data = Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
        let fy = y as f64 / height as f64;
        let fx = x as f64 / width as f64;
        let t = 0.5 * (fy + fx);
        let mut v = corner_a[c] * (1.0 - t) + corner_b[c] * t;
        for blob in &blobs {
            let d2 = (fy - blob.cy).powi(2) + (fx - blob.cx).powi(2);
            let w = (-d2 / (2.0 * blob.radius * blob.radius)).exp();
            v += blob.amplitude * w * (blob.color[c] - v);
        }
        v.clamp(0.05, 0.98)
    });
    ImageTensor::from_array(data).expect("clamped scene values are in range")
}

/// A camera with a fully known degradation rule: illumination is scaled by
/// `ratio`, the red reflectance channel is shifted by `red_bias` (with the
/// green and blue channels each compensating by half so the channel mean is
/// preserved), and every reflectance channel receives Gaussian noise of
/// standard deviation `noise_sigma`.
///
/// The mean-preserving form matters: the decomposition normalizes each
/// pixel's channel mean away, so an uncompensated offset would be partially
/// absorbed and no pipeline could read the full bias back out of the dark
/// images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCamera {
    /// Illumination ratio between dark and light.
    pub ratio: f64,
    /// Additive red-channel reflectance shift.
    pub red_bias: f64,
    /// Reflectance noise; keep positive so likelihood fits stay bounded.
    pub noise_sigma: f64,
}

impl Default for SyntheticCamera {
    fn default() -> Self {
        SyntheticCamera {
            ratio: 0.3,
            red_bias: 0.05,
            noise_sigma: 0.02,
        }
    }
}

impl SyntheticCamera {
    /// Produces the dark exposure of `light` under the camera's rule.
    pub fn shoot(&self, light: &ImageTensor, rng: &mut impl Rng) -> ImageTensor {
        let pair = decompose(light, DEFAULT_EPSILON);
        let (h, w, _) = light.data().dim();
        let mut dark = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                let l_dark = self.ratio * pair.illumination[[y, x]];
                for c in 0..3 {
                    let shift = match c {
                        0 => self.red_bias,
                        _ => -self.red_bias / 2.0,
                    };
                    let mut r = pair.reflectance[[y, x, c]] + shift;
                    if self.noise_sigma > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        r += self.noise_sigma * z;
                    }
                    dark[[y, x, c]] = r.clamp(0.0, REFLECTANCE_MAX) * l_dark;
                }
            }
        }
        ImageTensor::from_array_clamped(dark).expect("camera output has valid shape")
    }

    /// Generates `count` procedural (light, dark) pairs of the given size,
    /// deterministically from `seed`.
    pub fn shoot_pairs(
        &self,
        seed: u64,
        count: usize,
        height: usize,
        width: usize,
    ) -> Vec<(ImageTensor, ImageTensor)> {
        let mut rng = rng_from_seed(seed);
        (0..count)
            .map(|i| {
                let light = synth_scene(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), height, width);
                let dark = self.shoot(&light, &mut rng);
                (light, dark)
            })
            .collect()
    }
}
