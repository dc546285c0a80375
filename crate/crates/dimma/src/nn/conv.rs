//! 2-D convolution via im2col plus matrix multiply, and nearest-neighbor
//! upsampling. Activations are channels-first `(C, H, W)`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{fill_normal, he_std};

/// Zero-padded 2-D convolution.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `(c_out, c_in, k, k)`.
    pub w: Array4<f64>,
    pub b: Array1<f64>,
    pub gw: Array4<f64>,
    pub gb: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-initialized kernel, zero bias.
    pub fn new(
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layer = Conv2d {
            w: Array4::zeros((c_out, c_in, k, k)),
            b: Array1::zeros(c_out),
            gw: Array4::zeros((c_out, c_in, k, k)),
            gb: Array1::zeros(c_out),
            stride,
            pad,
        };
        fill_normal(layer.w.view_mut().into_dyn(), he_std(c_in * k * k), rng);
        layer
    }

    fn dims(&self) -> (usize, usize, usize) {
        let (c_out, c_in, k, _) = self.w.dim();
        (c_out, c_in, k)
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (_, _, k) = self.dims();
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (c_in_x, h, w) = x.dim();
        let (c_out, c_in, k) = self.dims();
        assert_eq!(c_in_x, c_in, "conv input channels");
        let (ho, wo) = self.out_size(h, w);
        let cols = im2col(x, k, self.stride, self.pad, ho, wo);
        let wmat = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("kernel is contiguous");
        let mut out = wmat.dot(&cols);
        for (mut row, &bias) in out.axis_iter_mut(Axis(0)).zip(self.b.iter()) {
            row += bias;
        }
        out.into_shape_with_order((c_out, ho, wo))
            .expect("gemm output is contiguous")
    }

    /// Accumulates kernel/bias gradients and returns the input gradient.
    /// Recomputes im2col from `x`, so only the layer input needs caching.
    pub fn backward(&mut self, x: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
        let (_, h, w) = x.dim();
        let (c_out, c_in, k) = self.dims();
        let (ho, wo) = self.out_size(h, w);
        assert_eq!(gy.dim(), (c_out, ho, wo), "conv output gradient shape");
        let cols = im2col(x, k, self.stride, self.pad, ho, wo);
        let gy_std = gy.as_standard_layout();
        let gy_mat = gy_std
            .view()
            .into_shape_with_order((c_out, ho * wo))
            .expect("standard layout");
        {
            let mut gw_mat = self
                .gw
                .view_mut()
                .into_shape_with_order((c_out, c_in * k * k))
                .expect("kernel is contiguous");
            gw_mat += &gy_mat.dot(&cols.t());
        }
        self.gb += &gy_mat.sum_axis(Axis(1));
        let wmat = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("kernel is contiguous");
        let gcols = wmat.t().dot(&gy_mat);
        col2im(&gcols, c_in, h, w, k, self.stride, self.pad, ho, wo)
    }

    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        vec![self.w.view().into_dyn(), self.b.view().into_dyn()]
    }

    pub fn grads_mut(&mut self) -> Vec<(ArrayViewMutD<'_, f64>, ArrayViewMutD<'_, f64>)> {
        vec![
            (self.w.view_mut().into_dyn(), self.gw.view_mut().into_dyn()),
            (self.b.view_mut().into_dyn(), self.gb.view_mut().into_dyn()),
        ]
    }
}

fn im2col(x: &Array3<f64>, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Array2<f64> {
    let (c_in, h, w) = x.dim();
    let mut cols = Array2::zeros((c_in * k * k, ho * wo));
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * wo + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &Array2<f64>,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array3<f64> {
    let mut out = Array3::zeros((c_in, h, w));
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[[ci, iy as usize, ix as usize]] += cols[[row, oy * wo + ox]];
                    }
                }
            }
        }
    }
    out
}

/// Nearest-neighbor 2× upsampling.
pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                let v = x[[ci, i, j]];
                out[[ci, 2 * i, 2 * j]] = v;
                out[[ci, 2 * i, 2 * j + 1]] = v;
                out[[ci, 2 * i + 1, 2 * j]] = v;
                out[[ci, 2 * i + 1, 2 * j + 1]] = v;
            }
        }
    }
    out
}

/// Gradient of [`upsample2`]: sums each 2×2 output block.
pub fn upsample2_backward(gy: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[[ci, i, j]] = gy[[ci, 2 * i, 2 * j]]
                    + gy[[ci, 2 * i, 2 * j + 1]]
                    + gy[[ci, 2 * i + 1, 2 * j]]
                    + gy[[ci, 2 * i + 1, 2 * j + 1]];
            }
        }
    }
    out
}
