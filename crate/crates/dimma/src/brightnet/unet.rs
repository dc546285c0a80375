//! The conditioned UNet itself: residual blocks with per-block embedding
//! injection, three downsampling and three upsampling levels around an
//! attention bottleneck, and a sigmoid residual head.
//!
//! Tensors are channel-first `(C, H, W)`. Forward takes spatial dims that
//! are multiples of 8; `enhance` in the parent module handles padding.

use ndarray::{s, Array1, Array2, Array3, ArrayViewD};
use rand::Rng;

use crate::nn::{
    sigmoid, silu, silu_grad, upsample2, upsample2_backward, Attention, AttnCache, Conv2d, Dense,
    Norm, NormCache, ParamPair,
};

use super::{sinusoid_features, NetConfig};

/// Residual block `x + conv(act(norm(conv(act(norm(x)))) + emb))` with a
/// 1×1 projection on the skip when the channel count changes.
///
/// The projected embedding is added per channel *after* the second
/// normalization: added before it, the bias would sit in the normalized
/// directions and per-channel groups would cancel it exactly, severing the
/// conditioning path.
#[derive(Debug, Clone)]
struct ResBlock {
    norm1: Norm,
    conv1: Conv2d,
    emb_proj: Dense,
    norm2: Norm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

struct RbCache {
    x: Array3<f64>,
    /// norm1 output, the pre-activation of the first SiLU.
    y1: Array3<f64>,
    a1: Array3<f64>,
    /// conv1 output, the second normalization's input.
    c1: Array3<f64>,
    /// norm2 output plus the injected bias, the second SiLU's
    /// pre-activation.
    pre2: Array3<f64>,
    a2: Array3<f64>,
    n1: NormCache,
    n2: NormCache,
}

impl ResBlock {
    fn new(
        c_in: usize,
        c_out: usize,
        embed_dim: usize,
        normalization: bool,
        rng: &mut impl Rng,
    ) -> Self {
        ResBlock {
            norm1: Norm::new(c_in, normalization),
            conv1: Conv2d::new(c_out, c_in, 3, 1, 1, rng),
            emb_proj: Dense::new(c_out, embed_dim, rng),
            norm2: Norm::new(c_out, normalization),
            conv2: Conv2d::new(c_out, c_out, 3, 1, 1, rng),
            skip: (c_in != c_out).then(|| Conv2d::new(c_out, c_in, 1, 1, 0, rng)),
        }
    }

    fn forward(
        &self,
        x: &Array3<f64>,
        emb_act: &Array2<f64>,
        record: bool,
    ) -> (Array3<f64>, Option<RbCache>) {
        let (y1, n1) = self.norm1.forward(x);
        let a1 = y1.mapv(silu);
        let c1 = self.conv1.forward(&a1);
        let (mut pre2, n2) = self.norm2.forward(&c1);
        let bias = self.emb_proj.forward(emb_act);
        for (c, mut plane) in pre2.outer_iter_mut().enumerate() {
            plane += bias[[0, c]];
        }
        let a2 = pre2.mapv(silu);
        let c2 = self.conv2.forward(&a2);
        let out = match &self.skip {
            Some(proj) => c2 + proj.forward(x),
            None => c2 + x,
        };
        let cache = record.then(|| RbCache {
            x: x.clone(),
            y1,
            a1,
            c1,
            pre2,
            a2,
            n1,
            n2,
        });
        (out, cache)
    }

    /// Accumulates parameter grads, adds this block's embedding-path grad
    /// into `g_emb_act` (`emb_act` feeds every block, so contributions
    /// sum), and returns the input grad.
    fn backward_with_emb(
        &mut self,
        cache: &RbCache,
        g_out: &Array3<f64>,
        g_emb_act: &mut Array2<f64>,
        emb_act: &Array2<f64>,
    ) -> Array3<f64> {
        let g_a2 = self.conv2.backward(&cache.a2, g_out);
        let mut g_pre2 = g_a2;
        g_pre2.zip_mut_with(&cache.pre2, |g, &pre| *g *= silu_grad(pre));
        let mut g_bias = Array2::zeros((1, g_pre2.dim().0));
        for (c, plane) in g_pre2.outer_iter().enumerate() {
            g_bias[[0, c]] = plane.sum();
        }
        *g_emb_act += &self.emb_proj.backward(emb_act, &g_bias);
        let g_c1 = self.norm2.backward(&cache.c1, &g_pre2, &cache.n2);
        let g_a1 = self.conv1.backward(&cache.a1, &g_c1);
        let mut g_y1 = g_a1;
        g_y1.zip_mut_with(&cache.y1, |g, &pre| *g *= silu_grad(pre));
        let mut g_x = self.norm1.backward(&cache.x, &g_y1, &cache.n1);
        match &mut self.skip {
            Some(proj) => g_x += &proj.backward(&cache.x, g_out),
            None => g_x += g_out,
        }
        g_x
    }

    fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = self.norm1.tensors();
        out.extend(self.conv1.tensors());
        out.extend(self.emb_proj.tensors());
        out.extend(self.norm2.tensors());
        out.extend(self.conv2.tensors());
        if let Some(proj) = &self.skip {
            out.extend(proj.tensors());
        }
        out
    }

    fn grads_mut(&mut self) -> Vec<ParamPair<'_>> {
        let mut out = self.norm1.grads_mut();
        out.extend(self.conv1.grads_mut());
        out.extend(self.emb_proj.grads_mut());
        out.extend(self.norm2.grads_mut());
        out.extend(self.conv2.grads_mut());
        if let Some(proj) = &mut self.skip {
            out.extend(proj.grads_mut());
        }
        out
    }
}

#[derive(Debug, Clone)]
struct DownLevel {
    rb1: ResBlock,
    rb2: ResBlock,
    down: Conv2d,
}

struct DownCache {
    rb1: RbCache,
    rb2: RbCache,
    /// rb2 output: the skip tensor and the strided conv's input.
    skip: Array3<f64>,
}

#[derive(Debug, Clone)]
struct UpLevel {
    upconv: Conv2d,
    rb1: ResBlock,
    rb2: ResBlock,
}

struct UpCache {
    /// Nearest-upsampled tensor, the 3×3 upconv's input.
    upsampled: Array3<f64>,
    rb1: RbCache,
    rb2: RbCache,
}

/// All intermediate state one training forward needs for backward.
pub struct UNetCache {
    raw: Array2<f64>,
    e1: Array2<f64>,
    e1a: Array2<f64>,
    emb_vec: Array2<f64>,
    emb_act: Array2<f64>,
    input: Array3<f64>,
    downs: Vec<DownCache>,
    mid1: RbCache,
    attn_in: Option<Array3<f64>>,
    attn: Option<AttnCache>,
    mid2: RbCache,
    ups: Vec<UpCache>,
    out_in: Array3<f64>,
    out_y: Array3<f64>,
    out_a: Array3<f64>,
    out_n: NormCache,
    logits: Array3<f64>,
}

/// The lightness-conditioned residual UNet.
#[derive(Debug, Clone)]
pub struct UNet {
    config: NetConfig,
    emb_l1: Dense,
    emb_l2: Dense,
    conv_in: Conv2d,
    downs: Vec<DownLevel>,
    mid1: ResBlock,
    attn: Option<Attention>,
    mid2: ResBlock,
    ups: Vec<UpLevel>,
    out_norm: Norm,
    out_conv: Conv2d,
}

impl UNet {
    /// Builds the network deterministically from `config.seed`.
    pub fn build(config: &NetConfig) -> crate::error::Result<Self> {
        config.validate()?;
        let mut rng = crate::seeding::rng_from_seed(config.seed);
        let rng = &mut rng;
        let c = config.base_channels;
        let e = config.embed_dim;
        let nm = config.normalization;
        let emb_l1 = Dense::new(e, e, rng);
        let emb_l2 = Dense::new(e, e, rng);
        let conv_in = Conv2d::new(c, 10, 3, 1, 1, rng);
        let mut downs = Vec::new();
        for level in 0..3 {
            let ch = c << level;
            downs.push(DownLevel {
                rb1: ResBlock::new(ch, ch, e, nm, rng),
                rb2: ResBlock::new(ch, ch, e, nm, rng),
                down: Conv2d::new(ch * 2, ch, 3, 2, 1, rng),
            });
        }
        let bottom = c * 8;
        let mid1 = ResBlock::new(bottom, bottom, e, nm, rng);
        let attn = config
            .attention
            .then(|| Attention::new(bottom, config.effective_heads(), nm, rng));
        let mid2 = ResBlock::new(bottom, bottom, e, nm, rng);
        let mut ups = Vec::new();
        for level in 0..3 {
            // Processing order is lowest resolution first.
            let ch = c << (2 - level);
            ups.push(UpLevel {
                upconv: Conv2d::new(ch, ch * 2, 3, 1, 1, rng),
                rb1: ResBlock::new(ch * 2, ch, e, nm, rng),
                rb2: ResBlock::new(ch, ch, e, nm, rng),
            });
        }
        let out_norm = Norm::new(c, nm);
        let out_conv = Conv2d::new(3, c, 3, 1, 1, rng);
        Ok(UNet {
            config: config.clone(),
            emb_l1,
            emb_l2,
            conv_in,
            downs,
            mid1,
            attn,
            mid2,
            ups,
            out_norm,
            out_conv,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// The post-MLP conditioning vector for a given Δm.
    pub fn embedding_vector(&self, delta_m: f64) -> Array1<f64> {
        let raw = sinusoid_features(delta_m, self.config.embed_dim);
        let e1a = self.emb_l1.forward(&raw).mapv(silu);
        let emb = self.emb_l2.forward(&e1a);
        emb.row(0).to_owned()
    }

    /// Zeroes the final projection so an untrained net emits the constant
    /// residual sigmoid(0) = 0.5, a useful warm-start and test anchor.
    pub fn zero_final_layer(&mut self) {
        self.out_conv.w.fill(0.0);
        self.out_conv.b.fill(0.0);
    }

    /// Runs the net on a 10-channel field whose spatial dims are multiples
    /// of 8, returning the sigmoid residual and, when `record`, the cache
    /// that [`Self::backward`] consumes.
    pub fn forward(
        &self,
        input: &Array3<f64>,
        delta_m: f64,
        record: bool,
    ) -> (Array3<f64>, Option<UNetCache>) {
        let (ci, h, w) = input.dim();
        assert_eq!(ci, 10, "expected a 10-channel input field");
        assert!(
            h % 8 == 0 && w % 8 == 0 && h > 0 && w > 0,
            "spatial dims must be positive multiples of 8, got {h}×{w}"
        );
        let raw = sinusoid_features(delta_m, self.config.embed_dim);
        let e1 = self.emb_l1.forward(&raw);
        let e1a = e1.mapv(silu);
        let emb_vec = self.emb_l2.forward(&e1a);
        let emb_act = emb_vec.mapv(silu);

        let mut x = self.conv_in.forward(input);
        let mut down_caches = Vec::new();
        let mut skips = Vec::new();
        for level in &self.downs {
            let (a, c1) = level.rb1.forward(&x, &emb_act, record);
            let (b, c2) = level.rb2.forward(&a, &emb_act, record);
            x = level.down.forward(&b);
            if record {
                down_caches.push(DownCache {
                    rb1: c1.expect("recording"),
                    rb2: c2.expect("recording"),
                    skip: b.clone(),
                });
            }
            skips.push(b);
        }
        let (m1, m1c) = self.mid1.forward(&x, &emb_act, record);
        let (attn_out, attn_in, attn_cache) = match &self.attn {
            Some(attn) => {
                let (out, cache) = attn.forward(&m1);
                (out, record.then(|| m1.clone()), Some(cache))
            }
            None => (m1, None, None),
        };
        let (m2, m2c) = self.mid2.forward(&attn_out, &emb_act, record);

        let mut x = m2;
        let mut up_caches = Vec::new();
        for (level, up) in self.ups.iter().enumerate() {
            let upsampled = upsample2(&x);
            let projected = up.upconv.forward(&upsampled);
            let skip = &skips[2 - level];
            let mut concat =
                Array3::zeros((projected.dim().0 + skip.dim().0, skip.dim().1, skip.dim().2));
            concat
                .slice_mut(s![..projected.dim().0, .., ..])
                .assign(&projected);
            concat
                .slice_mut(s![projected.dim().0.., .., ..])
                .assign(skip);
            let (a, c1) = up.rb1.forward(&concat, &emb_act, record);
            let (b, c2) = up.rb2.forward(&a, &emb_act, record);
            x = b;
            if record {
                up_caches.push(UpCache {
                    upsampled,
                    rb1: c1.expect("recording"),
                    rb2: c2.expect("recording"),
                });
            }
        }
        let out_in = x;
        let (out_y, out_n) = self.out_norm.forward(&out_in);
        let out_a = out_y.mapv(silu);
        let logits = self.out_conv.forward(&out_a);
        let residual = logits.mapv(sigmoid);
        let cache = record.then(|| UNetCache {
            raw,
            e1,
            e1a,
            emb_vec,
            emb_act,
            input: input.clone(),
            downs: down_caches,
            mid1: m1c.expect("recording"),
            attn_in,
            attn: attn_cache,
            mid2: m2c.expect("recording"),
            ups: up_caches,
            out_in,
            out_y,
            out_a,
            out_n,
            logits,
        });
        (residual, cache)
    }

    /// Accumulates parameter gradients for `d loss / d residual`.
    pub fn backward(&mut self, cache: &UNetCache, g_residual: &Array3<f64>) {
        let mut g_logits = g_residual.clone();
        g_logits.zip_mut_with(&cache.logits, |g, &z| {
            let s = sigmoid(z);
            *g *= s * (1.0 - s);
        });
        let g_out_a = self.out_conv.backward(&cache.out_a, &g_logits);
        let mut g_out_y = g_out_a;
        g_out_y.zip_mut_with(&cache.out_y, |g, &pre| *g *= silu_grad(pre));
        let mut g = self.out_norm.backward(&cache.out_in, &g_out_y, &cache.out_n);

        let mut g_emb_act = Array2::zeros(cache.emb_act.raw_dim());
        let mut skip_grads: [Option<Array3<f64>>; 3] = [None, None, None];
        for (level, up) in self.ups.iter_mut().enumerate().rev() {
            let uc = &cache.ups[level];
            let g_a = up
                .rb2
                .backward_with_emb(&uc.rb2, &g, &mut g_emb_act, &cache.emb_act);
            let g_concat = up
                .rb1
                .backward_with_emb(&uc.rb1, &g_a, &mut g_emb_act, &cache.emb_act);
            let c_proj = uc.upsampled.dim().0 / 2;
            let g_projected = g_concat.slice(s![..c_proj, .., ..]).to_owned();
            skip_grads[2 - level] = Some(g_concat.slice(s![c_proj.., .., ..]).to_owned());
            let g_upsampled = up.upconv.backward(&uc.upsampled, &g_projected);
            g = upsample2_backward(&g_upsampled);
        }

        g = self
            .mid2
            .backward_with_emb(&cache.mid2, &g, &mut g_emb_act, &cache.emb_act);
        if let (Some(attn), Some(attn_in), Some(attn_cache)) =
            (self.attn.as_mut(), cache.attn_in.as_ref(), cache.attn.as_ref())
        {
            g = attn.backward(attn_in, &g, attn_cache);
        }
        g = self
            .mid1
            .backward_with_emb(&cache.mid1, &g, &mut g_emb_act, &cache.emb_act);

        for (level_idx, level) in self.downs.iter_mut().enumerate().rev() {
            let dc = &cache.downs[level_idx];
            let mut g_skip = level.down.backward(&dc.skip, &g);
            if let Some(extra) = skip_grads[level_idx].take() {
                g_skip += &extra;
            }
            let g_a = level
                .rb2
                .backward_with_emb(&dc.rb2, &g_skip, &mut g_emb_act, &cache.emb_act);
            g = level
                .rb1
                .backward_with_emb(&dc.rb1, &g_a, &mut g_emb_act, &cache.emb_act);
        }
        let _ = self.conv_in.backward(&cache.input, &g);

        let mut g_emb_vec = g_emb_act;
        g_emb_vec.zip_mut_with(&cache.emb_vec, |g, &pre| *g *= silu_grad(pre));
        let mut g_e1 = self.emb_l2.backward(&cache.e1a, &g_emb_vec);
        g_e1.zip_mut_with(&cache.e1, |g, &pre| *g *= silu_grad(pre));
        let _ = self.emb_l1.backward(&cache.raw, &g_e1);
    }

    /// All parameter tensors in construction (= serialization) order.
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = Vec::new();
        out.extend(self.emb_l1.tensors());
        out.extend(self.emb_l2.tensors());
        out.extend(self.conv_in.tensors());
        for level in &self.downs {
            out.extend(level.rb1.tensors());
            out.extend(level.rb2.tensors());
            out.extend(level.down.tensors());
        }
        out.extend(self.mid1.tensors());
        if let Some(attn) = &self.attn {
            out.extend(attn.tensors());
        }
        out.extend(self.mid2.tensors());
        for up in &self.ups {
            out.extend(up.upconv.tensors());
            out.extend(up.rb1.tensors());
            out.extend(up.rb2.tensors());
        }
        out.extend(self.out_norm.tensors());
        out.extend(self.out_conv.tensors());
        out
    }

    /// Parameter/gradient pairs in the same order as [`Self::tensors`].
    pub fn param_pairs(&mut self) -> Vec<ParamPair<'_>> {
        let mut out = Vec::new();
        out.extend(self.emb_l1.grads_mut());
        out.extend(self.emb_l2.grads_mut());
        out.extend(self.conv_in.grads_mut());
        for level in &mut self.downs {
            out.extend(level.rb1.grads_mut());
            out.extend(level.rb2.grads_mut());
            out.extend(level.down.grads_mut());
        }
        out.extend(self.mid1.grads_mut());
        if let Some(attn) = &mut self.attn {
            out.extend(attn.grads_mut());
        }
        out.extend(self.mid2.grads_mut());
        for up in &mut self.ups {
            out.extend(up.upconv.grads_mut());
            out.extend(up.rb1.grads_mut());
            out.extend(up.rb2.grads_mut());
        }
        out.extend(self.out_norm.grads_mut());
        out.extend(self.out_conv.grads_mut());
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, mut g) in self.param_pairs() {
            g.fill(0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use ndarray::Array3;
    use rand::Rng;

    fn tiny_config(attention: bool, normalization: bool) -> NetConfig {
        NetConfig {
            base_channels: 4,
            embed_dim: 8,
            attention_heads: 64,
            attention,
            normalization,
            seed: 42,
        }
    }

    fn random_field(seed: u64, h: usize, w: usize) -> Array3<f64> {
        let mut rng = rng_from_seed(seed);
        Array3::from_shape_fn((10, h, w), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn forward_handles_the_minimum_spatial_size() {
        let net = UNet::build(&tiny_config(true, true)).unwrap();
        let (residual, _) = net.forward(&random_field(1, 8, 8), 0.1, false);
        assert_eq!(residual.dim(), (3, 8, 8));
    }

    #[test]
    fn recorded_and_unrecorded_forwards_agree() {
        let net = UNet::build(&tiny_config(true, true)).unwrap();
        let x = random_field(2, 16, 8);
        let (a, cache) = net.forward(&x, 0.3, true);
        let (b, _) = net.forward(&x, 0.3, false);
        assert!(cache.is_some());
        assert_eq!(a, b);
    }

    /// Central-difference check of every layer's analytic gradient through
    /// the full network, on a deterministic subsample of elements per
    /// tensor. The loss is a fixed random weighting of the residual.
    fn check_unet_gradients(config: &NetConfig, samples_per_tensor: usize) {
        use std::cell::RefCell;
        let net = UNet::build(config).unwrap();
        let x = random_field(3, 16, 16);
        let mut wrng = rng_from_seed(99);
        let weights = Array3::from_shape_fn((3, 16, 16), |_| wrng.random_range(-1.0..1.0));
        let delta_m = 0.35;

        let cell = RefCell::new(net);
        let loss = |cell: &RefCell<UNet>| -> f64 {
            let net = cell.borrow();
            let (residual, _) = net.forward(&x, delta_m, false);
            (&residual * &weights).sum()
        };
        let analytic: Vec<Vec<f64>> = {
            let mut net = cell.borrow_mut();
            net.zero_grads();
            let (_, cache) = net.forward(&x, delta_m, true);
            net.backward(cache.as_ref().unwrap(), &weights);
            net.param_pairs()
                .iter()
                .map(|(_, g)| g.iter().copied().collect())
                .collect()
        };
        let n_tensors = analytic.len();
        let mut checked = 0usize;
        for ti in 0..n_tensors {
            let len = analytic[ti].len();
            let stride = (len / samples_per_tensor).max(1);
            for ei in (0..len).step_by(stride) {
                let orig = {
                    let mut net = cell.borrow_mut();
                    let pairs = net.param_pairs();
                    pairs[ti].0.as_slice_memory_order().unwrap()[ei]
                };
                let h = 1e-4;
                let set = |val: f64| {
                    let mut net = cell.borrow_mut();
                    let mut pairs = net.param_pairs();
                    pairs[ti].0.as_slice_memory_order_mut().unwrap()[ei] = val;
                };
                set(orig + h);
                let up = loss(&cell);
                set(orig - h);
                let down = loss(&cell);
                set(orig);
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[ti][ei];
                let denom = a.abs().max(numeric.abs()).max(1e-5);
                assert!(
                    (a - numeric).abs() / denom < 2e-3,
                    "tensor {ti}[{ei}]: analytic {a} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
        assert!(checked > 3 * n_tensors, "too few elements checked: {checked}");
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        check_unet_gradients(&tiny_config(true, true), 4);
    }

    #[test]
    fn analytic_gradients_match_without_attention_or_norm() {
        check_unet_gradients(&tiny_config(false, false), 3);
    }
}
