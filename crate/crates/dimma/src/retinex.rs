//! Closed-form retinex decomposition and recomposition.
//!
//! An image factors as `I = R ⊙ L` where the illumination `L` is the
//! per-pixel channel mean (plus a stabilizer ε so division is total) and the
//! reflectance `R` is the image divided elementwise by `L`. Choosing the
//! channel mean makes recomposition an exact algebraic inverse, so the
//! roundtrip is lossless to floating-point precision.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::imagecore::ImageTensor;

/// Stabilizer added to the illumination denominator by default.
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Reflectance and illumination factors of one image.
///
/// `reflectance` is H×W×3 and nonnegative (elements reach 3 when one channel
/// carries all the energy); `illumination` is H×W and strictly positive.
#[derive(Debug, Clone)]
pub struct RetinexPair {
    pub reflectance: Array3<f64>,
    pub illumination: Array2<f64>,
}

/// Factors `img` into reflectance and illumination.
///
/// `illumination = channel_mean(img) + epsilon`, `reflectance = img ⊘
/// illumination`. The additive ε keeps black pixels decomposable; their
/// reflectance is 0 and recomposes exactly.
pub fn decompose(img: &ImageTensor, epsilon: f64) -> RetinexPair {
    debug_assert!(epsilon > 0.0, "epsilon must be positive");
    let (h, w, _) = img.data().dim();
    let mut illumination = img.channel_mean();
    illumination.mapv_inplace(|l| l + epsilon);
    let mut reflectance = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let l = illumination[[i, j]];
            for c in 0..3 {
                reflectance[[i, j, c]] = img.data()[[i, j, c]] / l;
            }
        }
    }
    RetinexPair {
        reflectance,
        illumination,
    }
}

/// Multiplies reflectance and illumination back into an image.
///
/// The raw product is clamped to `[0,1]`; for pairs produced by
/// [`decompose`] the product never exceeds the source image, so the clamp is
/// inert and the roundtrip is exact.
pub fn recompose(pair: &RetinexPair) -> Result<ImageTensor> {
    let (h, w, c) = pair.reflectance.dim();
    if pair.illumination.dim() != (h, w) || c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "reflectance {h}×{w}×{c} vs illumination {:?}",
            pair.illumination.dim()
        )));
    }
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let l = pair.illumination[[i, j]];
            for ch in 0..3 {
                out[[i, j, ch]] = pair.reflectance[[i, j, ch]] * l;
            }
        }
    }
    ImageTensor::from_array_clamped(out)
}
