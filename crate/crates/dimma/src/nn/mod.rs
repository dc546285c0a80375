//! Minimal neural-network toolkit: dense and convolution layers, group
//! normalization, self-attention, Adam, and the cosine learning-rate
//! schedule.
//!
//! Everything computes in `f64`, but parameters live on the `f32` grid
//! (initialization and every optimizer step round them), so serializing
//! checkpoints as 32-bit floats is lossless and save/load/infer is
//! bit-identical to inference before saving.
//!
//! Layers own their parameters *and* their gradient accumulators. A backward
//! pass adds into the accumulators; [`Adam::step`] consumes and clears them.
//! Gradient layouts are exercised by finite-difference checks in each
//! submodule's tests.

mod attention;
mod conv;
mod dense;
mod norm;
mod optim;

pub use attention::{Attention, AttnCache};
pub use conv::{upsample2, upsample2_backward, Conv2d};
pub use dense::Dense;
pub use norm::{GnCache, GroupNorm, Norm, NormCache};
pub use optim::{cosine_lr, Adam, ParamPair};

use ndarray::ArrayViewMutD;
use rand::Rng;
use rand_distr::StandardNormal;

/// Rounds to the nearest `f32`-representable value.
#[inline]
pub fn snap_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of SiLU at `x`.
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Fills a tensor with N(0, std²) draws snapped to the `f32` grid.
pub fn fill_normal(mut view: ArrayViewMutD<'_, f64>, std: f64, rng: &mut impl Rng) {
    for v in view.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = snap_f32(std * z);
    }
}

/// He initialization scale for a layer with the given fan-in.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Finite-difference harness shared by the layer tests. Tests wrap the
    //! layer under test in a `RefCell` so the accessor closures and the loss
    //! closure can share it.

    /// Central finite difference over one flat tensor, compared against the
    /// analytic gradient with a mixed absolute/relative tolerance.
    pub fn check_grad(
        analytic: &[f64],
        read: &dyn Fn(usize) -> f64,
        write: &dyn Fn(usize, f64),
        loss: &dyn Fn() -> f64,
        h: f64,
        label: &str,
    ) {
        for (idx, &a) in analytic.iter().enumerate() {
            let orig = read(idx);
            write(idx, orig + h);
            let up = loss();
            write(idx, orig - h);
            let down = loss();
            write(idx, orig);
            let numeric = (up - down) / (2.0 * h);
            let tol = 1e-7 + 1e-4 * a.abs().max(numeric.abs());
            assert!(
                (a - numeric).abs() <= tol,
                "{label}[{idx}]: analytic {a} vs numeric {numeric}"
            );
        }
    }
}
