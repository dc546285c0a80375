//! Multi-head self-attention over spatial positions, with pre-normalization
//! and a residual connection. Tokens are pixels; channels are features.

use ndarray::{s, Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::norm::{Norm, NormCache};
use super::{fill_normal, he_std};

/// Intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct AttnCache {
    norm: NormCache,
    xn: Array3<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax matrices, one `(N, N)` per head, rows are queries.
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
}

/// `y = x + Wo·concat_heads(softmax(QᵀK/√d)·V) (+ pre-norm inside)`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub norm: Norm,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub bo: Array1<f64>,
    pub gwq: Array2<f64>,
    pub gwk: Array2<f64>,
    pub gwv: Array2<f64>,
    pub gwo: Array2<f64>,
    pub gbq: Array1<f64>,
    pub gbk: Array1<f64>,
    pub gbv: Array1<f64>,
    pub gbo: Array1<f64>,
    pub heads: usize,
}

impl Attention {
    pub fn new(channels: usize, heads: usize, normalization: bool, rng: &mut impl Rng) -> Self {
        assert!(heads >= 1 && channels % heads == 0, "heads must divide channels");
        let mk_w = |rng: &mut _| {
            let mut w = Array2::zeros((channels, channels));
            fill_normal(w.view_mut().into_dyn(), he_std(channels), rng);
            w
        };
        Attention {
            norm: Norm::new(channels, normalization),
            wq: mk_w(rng),
            wk: mk_w(rng),
            wv: mk_w(rng),
            wo: mk_w(rng),
            bq: Array1::zeros(channels),
            bk: Array1::zeros(channels),
            bv: Array1::zeros(channels),
            bo: Array1::zeros(channels),
            gwq: Array2::zeros((channels, channels)),
            gwk: Array2::zeros((channels, channels)),
            gwv: Array2::zeros((channels, channels)),
            gwo: Array2::zeros((channels, channels)),
            gbq: Array1::zeros(channels),
            gbk: Array1::zeros(channels),
            gbv: Array1::zeros(channels),
            gbo: Array1::zeros(channels),
            heads,
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, AttnCache) {
        let (c, h, w) = x.dim();
        let n = h * w;
        let d = c / self.heads;
        let scale = 1.0 / (d as f64).sqrt();

        let (xn, norm_cache) = self.norm.forward(x);
        let xmat = to_tokens(&xn);
        let q = project(&self.wq, &self.bq, &xmat);
        let k = project(&self.wk, &self.bk, &xmat);
        let v = project(&self.wv, &self.bv, &xmat);

        let mut o = Array2::zeros((c, n));
        let mut probs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let rows = head * d..(head + 1) * d;
            let qh = q.slice(s![rows.clone(), ..]);
            let kh = k.slice(s![rows.clone(), ..]);
            let vh = v.slice(s![rows.clone(), ..]);
            let mut scores = qh.t().dot(&kh);
            scores *= scale;
            softmax_rows(&mut scores);
            let oh = vh.dot(&scores.t());
            o.slice_mut(s![rows, ..]).assign(&oh);
            probs.push(scores);
        }
        let y = project(&self.wo, &self.bo, &o);
        let mut out = x.clone();
        add_tokens(&mut out, &y);
        (
            out,
            AttnCache {
                norm: norm_cache,
                xn,
                q,
                k,
                v,
                probs,
                o,
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array3<f64>, gy: &Array3<f64>, cache: &AttnCache) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let n = h * w;
        let d = c / self.heads;
        let scale = 1.0 / (d as f64).sqrt();

        let gy_mat = to_tokens(gy);
        // Output projection.
        self.gwo += &gy_mat.dot(&cache.o.t());
        self.gbo += &gy_mat.sum_axis(Axis(1));
        let go = self.wo.t().dot(&gy_mat);

        let mut gq = Array2::zeros((c, n));
        let mut gk = Array2::zeros((c, n));
        let mut gv = Array2::zeros((c, n));
        for head in 0..self.heads {
            let rows = head * d..(head + 1) * d;
            let p = &cache.probs[head];
            let qh = cache.q.slice(s![rows.clone(), ..]);
            let kh = cache.k.slice(s![rows.clone(), ..]);
            let vh = cache.v.slice(s![rows.clone(), ..]);
            let goh = go.slice(s![rows.clone(), ..]);

            let gvh = goh.dot(p);
            let gp = goh.t().dot(&vh.view());
            // Softmax backward per query row.
            let mut gs = gp.clone();
            for (mut gs_row, p_row) in gs.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                let dot = gs_row
                    .iter()
                    .zip(p_row.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                for (g, &pv) in gs_row.iter_mut().zip(p_row.iter()) {
                    *g = pv * (*g - dot);
                }
            }
            gs *= scale;
            gq.slice_mut(s![rows.clone(), ..]).assign(&kh.dot(&gs.t()));
            gk.slice_mut(s![rows.clone(), ..]).assign(&qh.dot(&gs));
            gv.slice_mut(s![rows, ..]).assign(&gvh);
        }

        let xmat = to_tokens(&cache.xn);
        self.gwq += &gq.dot(&xmat.t());
        self.gbq += &gq.sum_axis(Axis(1));
        self.gwk += &gk.dot(&xmat.t());
        self.gbk += &gk.sum_axis(Axis(1));
        self.gwv += &gv.dot(&xmat.t());
        self.gbv += &gv.sum_axis(Axis(1));

        let gxn_mat = self.wq.t().dot(&gq) + self.wk.t().dot(&gk) + self.wv.t().dot(&gv);
        let mut gxn = Array3::zeros((c, h, w));
        add_tokens(&mut gxn, &gxn_mat);
        let mut gx = self.norm.backward(x, &gxn, &cache.norm);
        gx += gy; // residual path
        gx
    }

    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = self.norm.tensors();
        out.extend([
            self.wq.view().into_dyn(),
            self.bq.view().into_dyn(),
            self.wk.view().into_dyn(),
            self.bk.view().into_dyn(),
            self.wv.view().into_dyn(),
            self.bv.view().into_dyn(),
            self.wo.view().into_dyn(),
            self.bo.view().into_dyn(),
        ]);
        out
    }

    pub fn grads_mut(&mut self) -> Vec<(ArrayViewMutD<'_, f64>, ArrayViewMutD<'_, f64>)> {
        let mut out = self.norm.grads_mut();
        out.extend([
            (self.wq.view_mut().into_dyn(), self.gwq.view_mut().into_dyn()),
            (self.bq.view_mut().into_dyn(), self.gbq.view_mut().into_dyn()),
            (self.wk.view_mut().into_dyn(), self.gwk.view_mut().into_dyn()),
            (self.bk.view_mut().into_dyn(), self.gbk.view_mut().into_dyn()),
            (self.wv.view_mut().into_dyn(), self.gwv.view_mut().into_dyn()),
            (self.bv.view_mut().into_dyn(), self.gbv.view_mut().into_dyn()),
            (self.wo.view_mut().into_dyn(), self.gwo.view_mut().into_dyn()),
            (self.bo.view_mut().into_dyn(), self.gbo.view_mut().into_dyn()),
        ]);
        out
    }
}

fn to_tokens(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    x.as_standard_layout()
        .view()
        .into_shape_with_order((c, h * w))
        .expect("standard layout")
        .to_owned()
}

fn add_tokens(x: &mut Array3<f64>, tokens: &Array2<f64>) {
    let (c, h, w) = x.dim();
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                x[[ci, i, j]] += tokens[[ci, i * w + j]];
            }
        }
    }
}

fn project(w: &Array2<f64>, b: &Array1<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut y = w.dot(x);
    for (mut row, &bias) in y.axis_iter_mut(Axis(0)).zip(b.iter()) {
        row += bias;
    }
    y
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}
