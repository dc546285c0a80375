//! Image representation, file I/O, histogram equalization, and lightness
//! utilities shared by the whole pipeline.
//!
//! The universal currency is [`ImageTensor`]: an H×W×3 array of `f64` sRGB
//! values in `[0,1]`. Files on disk are 8-bit PNG (read/write) or JPEG
//! (read-only); quantization to and from the 8-bit grid uses round-half-up so
//! that image I/O and the lightness binning in `illumstats` agree bit-exactly.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// An H×W×3 sRGB image with every element in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps an existing array, validating shape and range.
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image tensor must be H×W×3 with H,W ≥ 1, got {h}×{w}×{c}"
            )));
        }
        for &v in &data {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::RangeError(format!(
                    "pixel value {v} outside [0,1]"
                )));
            }
        }
        Ok(Self { data })
    }

    /// Wraps an array after clamping every element into `[0,1]`.
    ///
    /// Used where upstream math can overshoot by design (recomposition,
    /// residual addition). Non-finite values are an error, not clamped.
    pub fn from_array_clamped(mut data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image tensor must be H×W×3 with H,W ≥ 1, got {h}×{w}×{c}"
            )));
        }
        for v in &mut data {
            if !v.is_finite() {
                return Err(Error::RangeError(format!("non-finite pixel value {v}")));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { data })
    }

    /// Constant image of the given size and gray value.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::from_array(Array3::from_elem((height, width, 3), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Per-pixel channel mean as an H×W field.
    pub fn channel_mean(&self) -> Array2<f64> {
        let (h, w, _) = self.data.dim();
        Array2::from_shape_fn((h, w), |(i, j)| {
            (self.data[[i, j, 0]] + self.data[[i, j, 1]] + self.data[[i, j, 2]]) / 3.0
        })
    }
}

/// Quantizes a unit-range value to the 8-bit grid with round-half-up.
pub fn quantize8(v: f64) -> u8 {
    let scaled = (v * 255.0).round();
    scaled.clamp(0.0, 255.0) as u8
}

/// Maps an out-of-range index back inside `0..n` by reflection without
/// repeating the edge sample (…, n−2, n−1, n−2, …), degenerating to 0 for
/// single-element axes. Indices inside the range pass through unchanged.
pub(crate) fn mirror_index(t: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = t % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Loads an 8-bit PNG or JPEG as an [`ImageTensor`] (alpha stripped).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected PNG or JPEG, got {other:?}",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb: RgbImage = match decoded {
        DynamicImage::ImageRgb8(img) => img,
        DynamicImage::ImageRgba8(img) => DynamicImage::ImageRgba8(img).to_rgb8(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected 8-bit RGB(A), got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    tensor_from_rgb8(&rgb)
}

/// Converts a decoded 8-bit RGB buffer into an [`ImageTensor`].
pub(crate) fn tensor_from_rgb8(rgb: &RgbImage) -> Result<ImageTensor> {
    let (w, h) = rgb.dimensions();
    let mut data = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, pixel) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[[y as usize, x as usize, c]] = f64::from(pixel.0[c]) / 255.0;
        }
    }
    ImageTensor::from_array(data)
}

/// Saves an [`ImageTensor`] as an 8-bit PNG.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, _) = img.data.dim();
    let mut out = RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = [
                quantize8(img.data[[i, j, 0]]),
                quantize8(img.data[[i, j, 1]]),
                quantize8(img.data[[i, j, 2]]),
            ];
            out.put_pixel(j as u32, i as u32, image::Rgb(px));
        }
    }
    out.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                source: other,
            },
        })
}

/// Classical per-channel histogram equalization on the 8-bit quantization.
///
/// Each channel is remapped through `(cdf(v) − cdf_min) / (N − cdf_min)`
/// where `cdf_min` is the cdf value of the lowest occupied bin. A channel
/// whose pixels all share one bin maps to zero.
pub fn hist_equalize(img: &ImageTensor) -> ImageTensor {
    let (h, w, _) = img.data.dim();
    let n = (h * w) as u64;
    let mut out = Array3::zeros((h, w, 3));
    for c in 0..3 {
        let mut hist = [0u64; 256];
        for i in 0..h {
            for j in 0..w {
                hist[quantize8(img.data[[i, j, c]]) as usize] += 1;
            }
        }
        let mut cdf = [0u64; 256];
        let mut acc = 0u64;
        for k in 0..256 {
            acc += hist[k];
            cdf[k] = acc;
        }
        let cdf_min = hist
            .iter()
            .position(|&count| count > 0)
            .map(|k| cdf[k])
            .unwrap_or(0);
        let denom = n - cdf_min;
        let mut lut = [0.0f64; 256];
        if denom > 0 {
            for k in 0..256 {
                lut[k] = (cdf[k].saturating_sub(cdf_min)) as f64 / denom as f64;
            }
        }
        for i in 0..h {
            for j in 0..w {
                out[[i, j, c]] = lut[quantize8(img.data[[i, j, c]]) as usize];
            }
        }
    }
    ImageTensor { data: out }
}

/// Spatial mean of the per-pixel channel mean.
pub fn mean_lightness(img: &ImageTensor) -> f64 {
    img.data.mean().expect("image tensors are never empty")
}
