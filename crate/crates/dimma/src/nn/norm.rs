//! Group normalization over channels-first feature maps.

use ndarray::{s, Array1, Array3, ArrayViewD, ArrayViewMutD};

/// Per-group statistics cached by the forward pass.
#[derive(Debug, Clone)]
pub struct GnCache {
    pub mean: Array1<f64>,
    pub inv_std: Array1<f64>,
}

/// Group normalization with per-channel affine parameters.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub ggamma: Array1<f64>,
    pub gbeta: Array1<f64>,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    /// Unit gain, zero shift; `groups = min(32, channels)`.
    pub fn new(channels: usize) -> Self {
        let groups = channels.min(32);
        assert_eq!(channels % groups, 0, "channels must divide into groups");
        GroupNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            ggamma: Array1::zeros(channels),
            gbeta: Array1::zeros(channels),
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, GnCache) {
        let (c, h, w) = x.dim();
        let cpg = c / self.groups;
        let n = (cpg * h * w) as f64;
        let mut mean = Array1::zeros(self.groups);
        let mut inv_std = Array1::zeros(self.groups);
        let mut y = Array3::zeros((c, h, w));
        for g in 0..self.groups {
            let slab = x.slice(s![g * cpg..(g + 1) * cpg, .., ..]);
            let m = slab.sum() / n;
            let var = slab.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let istd = 1.0 / (var + self.eps).sqrt();
            mean[g] = m;
            inv_std[g] = istd;
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let gamma = self.gamma[ch];
                let beta = self.beta[ch];
                for i in 0..h {
                    for j in 0..w {
                        y[[ch, i, j]] = gamma * (x[[ch, i, j]] - m) * istd + beta;
                    }
                }
            }
        }
        (y, GnCache { mean, inv_std })
    }

    /// Accumulates affine gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array3<f64>, gy: &Array3<f64>, cache: &GnCache) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let cpg = c / self.groups;
        let n = (cpg * h * w) as f64;
        let mut gx = Array3::zeros((c, h, w));
        for g in 0..self.groups {
            let m = cache.mean[g];
            let istd = cache.inv_std[g];
            // Accumulate the two reduction terms of the normalization grad.
            let mut sum_ghat = 0.0;
            let mut sum_ghat_xhat = 0.0;
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let gamma = self.gamma[ch];
                for i in 0..h {
                    for j in 0..w {
                        let xhat = (x[[ch, i, j]] - m) * istd;
                        let ghat = gy[[ch, i, j]] * gamma;
                        sum_ghat += ghat;
                        sum_ghat_xhat += ghat * xhat;
                        self.ggamma[ch] += gy[[ch, i, j]] * xhat;
                        self.gbeta[ch] += gy[[ch, i, j]];
                    }
                }
            }
            let mean_ghat = sum_ghat / n;
            let mean_ghat_xhat = sum_ghat_xhat / n;
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let gamma = self.gamma[ch];
                for i in 0..h {
                    for j in 0..w {
                        let xhat = (x[[ch, i, j]] - m) * istd;
                        let ghat = gy[[ch, i, j]] * gamma;
                        gx[[ch, i, j]] = istd * (ghat - mean_ghat - xhat * mean_ghat_xhat);
                    }
                }
            }
        }
        gx
    }
}

/// Normalization site that can be disabled by config.
#[derive(Debug, Clone)]
pub enum Norm {
    Group(GroupNorm),
    Identity,
}

/// Cache for a [`Norm`] site; empty when the site is an identity.
pub type NormCache = Option<GnCache>;

impl Norm {
    pub fn new(channels: usize, enabled: bool) -> Self {
        if enabled {
            Norm::Group(GroupNorm::new(channels))
        } else {
            Norm::Identity
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, NormCache) {
        match self {
            Norm::Group(gn) => {
                let (y, cache) = gn.forward(x);
                (y, Some(cache))
            }
            Norm::Identity => (x.clone(), None),
        }
    }

    pub fn backward(&mut self, x: &Array3<f64>, gy: &Array3<f64>, cache: &NormCache) -> Array3<f64> {
        match self {
            Norm::Group(gn) => gn.backward(x, gy, cache.as_ref().expect("group norm cache")),
            Norm::Identity => gy.clone(),
        }
    }

    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        match self {
            Norm::Group(gn) => vec![gn.gamma.view().into_dyn(), gn.beta.view().into_dyn()],
            Norm::Identity => vec![],
        }
    }

    pub fn grads_mut(&mut self) -> Vec<(ArrayViewMutD<'_, f64>, ArrayViewMutD<'_, f64>)> {
        match self {
            Norm::Group(gn) => vec![
                (
                    gn.gamma.view_mut().into_dyn(),
                    gn.ggamma.view_mut().into_dyn(),
                ),
                (gn.beta.view_mut().into_dyn(), gn.gbeta.view_mut().into_dyn()),
            ],
            Norm::Identity => vec![],
        }
    }
}
