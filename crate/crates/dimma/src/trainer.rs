//! Losses and the two optimization stages of the brightening network.
//!
//! [`train_unsupervised`] loops over an unlabeled corpus, dimming a fresh
//! random crop of each batch slot every iteration so the network never sees
//! the same degradation twice. [`finetune`] runs the identical loop over a
//! handful of real light/dark pairs. Both anneal the learning rate with a
//! cosine schedule, validate on held-out pairs at a fixed cadence, keep the
//! best-validation parameters, and stop early once validation stalls.
//!
//! Batch work parallelizes across crops: each worker clones the network,
//! accumulates its own gradients, and the results merge in slot order, so a
//! run is byte-reproducible regardless of thread count.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array3, ArrayD};
use rand::prelude::*;
use rayon::prelude::*;

use crate::brightnet::{assemble_input, enhance, save_unet, UNet};
use crate::dimmer::dim_image;
use crate::error::{Error, Result};
use crate::illumstats::{DimConfig, IlluminationStats};
use crate::imagecore::{mean_lightness, mirror_index, ImageTensor};
use crate::mdn::MdnParams;
use crate::metrics::psnr;
use crate::nn::{cosine_lr, Adam};
use crate::seeding::{derive_seed, rng_from_seed};

/// A frozen feature map for the perceptual loss term.
///
/// Implementations must be deterministic and stateless across calls.
/// `backward` is the vector-Jacobian product: given d loss / d features it
/// returns d loss / d image, so gradients can flow through the extractor
/// without it ever being trained itself.
pub trait FeatureExtractor: Send + Sync {
    /// Maps an (H,W,3) image to a feature tensor of any fixed shape.
    fn features(&self, image: &Array3<f64>) -> Array3<f64>;

    /// Pulls a feature-space gradient back to image space.
    fn backward(&self, image: &Array3<f64>, g_features: &Array3<f64>) -> Array3<f64>;
}

/// Weights of the training loss: mean squared error plus an optional
/// feature-space (perceptual) term.
#[derive(Clone)]
pub struct LossConfig {
    /// Weight of the perceptual term.
    pub lambda: f64,
    /// Frozen extractor, or `None` to train on MSE alone.
    pub extractor: Option<Arc<dyn FeatureExtractor>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            extractor: None,
        }
    }
}

impl fmt::Debug for LossConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossConfig")
            .field("lambda", &self.lambda)
            .field("extractor", &self.extractor.is_some())
            .finish()
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be a nonnegative finite number, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Hyperparameters shared by both training stages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Side length of square training crops; a positive multiple of 8.
    pub crop_size: usize,
    /// Crops per optimization step.
    pub batch_size: usize,
    /// Peak Adam learning rate, cosine-annealed to zero over `max_iters`.
    pub learning_rate: f64,
    /// Total optimization steps (upper bound when early stopping fires).
    pub max_iters: usize,
    /// Validate every this many iterations.
    pub val_interval: usize,
    /// Stop after this many consecutive non-improving validations.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for the unsupervised stage.
    pub fn unsupervised() -> Self {
        TrainConfig {
            crop_size: 256,
            batch_size: 4,
            learning_rate: 1e-5,
            max_iters: 5000,
            val_interval: 100,
            early_stop_patience: 10,
            seed: 0,
        }
    }

    /// Defaults for the few-shot finetuning stage.
    pub fn finetune() -> Self {
        TrainConfig {
            max_iters: 2000,
            ..Self::unsupervised()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.crop_size % 8 != 0 {
            return Err(Error::InvalidConfig(format!(
                "crop_size must be a positive multiple of 8, got {}",
                self.crop_size
            )));
        }
        if self.batch_size == 0 || self.max_iters == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and max_iters must be positive".into(),
            ));
        }
        if self.val_interval == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidConfig(
                "val_interval and early_stop_patience must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Batch loss decomposition: MSE plus `lambda` times the feature-space MSE.
///
/// Both slices hold (H,W,3) arrays; entry `i` of `pred` is compared against
/// entry `i` of `target`. Means reduce over every element of every image.
pub fn loss_total(
    pred: &[Array3<f64>],
    target: &[Array3<f64>],
    cfg: &LossConfig,
) -> Result<(f64, f64, f64)> {
    cfg.validate()?;
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch sizes disagree: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.dim() != t.dim() {
            return Err(Error::ShapeMismatch(format!(
                "prediction {:?} vs target {:?}",
                p.dim(),
                t.dim()
            )));
        }
        for (&a, &b) in p.iter().zip(t.iter()) {
            let d = a - b;
            sum_sq += d * d;
        }
        count += p.len();
    }
    let mse = sum_sq / count as f64;
    let perceptual = match &cfg.extractor {
        None => 0.0,
        Some(ext) => {
            let mut fsum = 0.0;
            let mut fcount = 0usize;
            for (p, t) in pred.iter().zip(target) {
                let fp = ext.features(p);
                let ft = ext.features(t);
                debug_assert_eq!(fp.dim(), ft.dim(), "extractor output shape must be fixed");
                for (&a, &b) in fp.iter().zip(ft.iter()) {
                    let d = a - b;
                    fsum += d * d;
                }
                fcount += fp.len();
            }
            fsum / fcount as f64
        }
    };
    Ok((mse + cfg.lambda * perceptual, mse, perceptual))
}

/// One optimization step's record; `Display` renders the history-log line
/// `iter loss mse perc lr` with the validation PSNR appended when present.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub iter: usize,
    pub loss: f64,
    pub mse: f64,
    pub perceptual: f64,
    pub lr: f64,
    pub val_psnr: Option<f64>,
}

impl fmt::Display for HistoryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:.8e} {:.8e} {:.8e} {:.8e}",
            self.iter, self.loss, self.mse, self.perceptual, self.lr
        )?;
        if let Some(v) = self.val_psnr {
            write!(f, " {v:.8e}")?;
        }
        Ok(())
    }
}

/// Receives training artifacts: a streaming `history.txt`, periodic
/// `ckpt_NNNNNN.ckpt` files, and the final `best.ckpt`.
#[derive(Debug)]
pub struct TrainSink {
    out_dir: Option<PathBuf>,
    checkpoint_interval: usize,
    history: Option<BufWriter<File>>,
}

impl TrainSink {
    /// Keeps nothing on disk; the in-memory history is still returned.
    pub fn null() -> Self {
        TrainSink {
            out_dir: None,
            checkpoint_interval: 0,
            history: None,
        }
    }

    /// Writes artifacts under `dir`, checkpointing every
    /// `checkpoint_interval` iterations (0 disables periodic checkpoints).
    pub fn to_dir(dir: impl AsRef<Path>, checkpoint_interval: usize) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let history_path = dir.join("history.txt");
        let file = File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
        Ok(TrainSink {
            out_dir: Some(dir),
            checkpoint_interval,
            history: Some(BufWriter::new(file)),
        })
    }

    /// Writes a `# `-prefixed header line into the history log. History
    /// readers must skip lines starting with `#`.
    pub fn comment(&mut self, text: &str) -> Result<()> {
        if let Some(history) = &mut self.history {
            let dir = self.out_dir.as_ref().expect("history implies out_dir");
            writeln!(history, "# {text}").map_err(|e| Error::io(dir.join("history.txt"), e))?;
        }
        Ok(())
    }

    fn record(&mut self, entry: &HistoryEntry, net: &UNet) -> Result<()> {
        if let Some(history) = &mut self.history {
            let dir = self.out_dir.as_ref().expect("history implies out_dir");
            writeln!(history, "{entry}").map_err(|e| Error::io(dir.join("history.txt"), e))?;
        }
        if self.checkpoint_interval > 0 && entry.iter % self.checkpoint_interval == 0 {
            if let Some(dir) = &self.out_dir {
                save_unet(net, dir.join(format!("ckpt_{:06}.ckpt", entry.iter)))?;
            }
        }
        Ok(())
    }

    fn finish(&mut self, best: &UNet) -> Result<()> {
        if let Some(history) = &mut self.history {
            let dir = self.out_dir.as_ref().expect("history implies out_dir");
            history
                .flush()
                .map_err(|e| Error::io(dir.join("history.txt"), e))?;
        }
        if let Some(dir) = &self.out_dir {
            save_unet(best, dir.join("best.ckpt"))?;
        }
        Ok(())
    }
}

/// Outcome of a training stage.
#[derive(Debug)]
pub struct TrainResult {
    /// Parameters with the best validation PSNR; the final parameters when
    /// no validation pairs were supplied.
    pub net: UNet,
    /// One entry per executed iteration.
    pub history: Vec<HistoryEntry>,
    /// Iteration whose validation produced `net`; 0 means the input
    /// parameters were never beaten.
    pub best_iter: usize,
    /// Best observed validation PSNR, `None` without validation pairs.
    pub best_val_psnr: Option<f64>,
}

/// Where the dark half of each training sample comes from.
pub(crate) enum DimSource<'a> {
    /// Dim a light crop freshly every iteration.
    Synthetic {
        corpus: &'a [ImageTensor],
        mdn: &'a MdnParams,
        stats: &'a IlluminationStats,
        dim_cfg: &'a DimConfig,
    },
    /// Use real (light, dark) pairs.
    Paired {
        pairs: &'a [(ImageTensor, ImageTensor)],
    },
}

impl DimSource<'_> {
    fn len(&self) -> usize {
        match self {
            DimSource::Synthetic { corpus, .. } => corpus.len(),
            DimSource::Paired { pairs } => pairs.len(),
        }
    }

    /// Light-image dimensions of item `index`.
    fn dims(&self, index: usize) -> (usize, usize) {
        match self {
            DimSource::Synthetic { corpus, .. } => {
                (corpus[index].height(), corpus[index].width())
            }
            DimSource::Paired { pairs } => (pairs[index].0.height(), pairs[index].0.width()),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DimSource::Synthetic { corpus, dim_cfg, .. } => {
                if corpus.is_empty() {
                    return Err(Error::EmptyDataset(
                        "unsupervised training corpus has no images".into(),
                    ));
                }
                dim_cfg.validate()
            }
            DimSource::Paired { pairs } => {
                if pairs.is_empty() {
                    return Err(Error::EmptyInput(
                        "finetuning needs at least one light/dark pair".into(),
                    ));
                }
                for (i, (light, dark)) in pairs.iter().enumerate() {
                    if light.data().dim() != dark.data().dim() {
                        return Err(Error::ShapeMismatch(format!(
                            "pair {i}: light {:?} vs dark {:?}",
                            light.data().dim(),
                            dark.data().dim()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// One slot of a planned batch; all randomness is drawn up front on the
/// main loop's stream so sample preparation can run in parallel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SlotPlan {
    index: usize,
    y0: usize,
    x0: usize,
    flip: bool,
    dim_seed: u64,
}

/// A crop ready for the network.
pub(crate) struct PreparedSample {
    pub light: ImageTensor,
    pub dark: ImageTensor,
    pub delta_m: f64,
    pub field: Array3<f64>,
}

/// Mirror-pads an image up to at least `min_h` x `min_w`.
fn pad_image_to_min(img: &ImageTensor, min_h: usize, min_w: usize) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    if h >= min_h && w >= min_w {
        return img.clone();
    }
    let (oh, ow) = (h.max(min_h), w.max(min_w));
    let data = img.data();
    let padded = Array3::from_shape_fn((oh, ow, 3), |(y, x, c)| {
        data[[mirror_index(y, h), mirror_index(x, w), c]]
    });
    ImageTensor::from_array(padded).expect("mirrored pixels stay in range")
}

fn crop_and_flip(img: &ImageTensor, plan: &SlotPlan, crop: usize) -> ImageTensor {
    let padded = pad_image_to_min(img, crop, crop);
    let window = padded
        .data()
        .slice(s![plan.y0..plan.y0 + crop, plan.x0..plan.x0 + crop, ..]);
    let data = if plan.flip {
        window.slice(s![.., ..;-1, ..]).to_owned()
    } else {
        window.to_owned()
    };
    ImageTensor::from_array(data).expect("crop of a valid image stays valid")
}

/// Draws the per-slot randomness for one batch from the loop's stream.
pub(crate) fn plan_slots(
    rng: &mut impl Rng,
    source: &DimSource<'_>,
    cfg: &TrainConfig,
) -> Vec<SlotPlan> {
    (0..cfg.batch_size)
        .map(|_| {
            let index = rng.random_range(0..source.len());
            let (h, w) = source.dims(index);
            let (ph, pw) = (h.max(cfg.crop_size), w.max(cfg.crop_size));
            SlotPlan {
                index,
                y0: rng.random_range(0..=ph - cfg.crop_size),
                x0: rng.random_range(0..=pw - cfg.crop_size),
                flip: rng.random::<bool>(),
                dim_seed: rng.random::<u64>(),
            }
        })
        .collect()
}

/// Materializes planned slots into network-ready samples, in parallel.
pub(crate) fn assemble_batch(
    source: &DimSource<'_>,
    plans: &[SlotPlan],
    crop: usize,
) -> Result<Vec<PreparedSample>> {
    plans
        .par_iter()
        .map(|plan| {
            let (light, dark, delta_m) = match source {
                DimSource::Synthetic {
                    corpus,
                    mdn,
                    stats,
                    dim_cfg,
                } => {
                    let light = crop_and_flip(&corpus[plan.index], plan, crop);
                    let mut rng = rng_from_seed(plan.dim_seed);
                    let sample = dim_image(&light, mdn, stats, dim_cfg, &mut rng)?;
                    let delta_m = sample.delta_m;
                    (light, sample.dark, delta_m)
                }
                DimSource::Paired { pairs } => {
                    let (light_full, dark_full) = &pairs[plan.index];
                    let light = crop_and_flip(light_full, plan, crop);
                    let dark = crop_and_flip(dark_full, plan, crop);
                    let delta_m = mean_lightness(&light) - mean_lightness(&dark);
                    (light, dark, delta_m)
                }
            };
            debug_assert!(
                (delta_m - (mean_lightness(&light) - mean_lightness(&dark))).abs() <= 1e-6,
                "lightness-drop conditioning drifted from the crop statistics"
            );
            let field = assemble_input(&dark);
            Ok(PreparedSample {
                light,
                dark,
                delta_m,
                field,
            })
        })
        .collect()
}

fn snapshot_params(net: &UNet) -> Vec<ArrayD<f64>> {
    net.tensors().iter().map(|t| t.to_owned()).collect()
}

fn restore_params(net: &mut UNet, snapshot: &[ArrayD<f64>]) {
    for ((mut w, _), saved) in net.param_pairs().into_iter().zip(snapshot) {
        w.assign(saved);
    }
}

/// Forward/backward over a prepared batch without touching the optimizer.
///
/// Returns `(loss, mse, perceptual, grads)` where `grads` follows the
/// network's tensor order. Each sample runs on its own clone of the net;
/// gradients merge in slot order, keeping the result thread-count
/// independent.
pub(crate) fn batch_loss_and_grads(
    net: &UNet,
    samples: &[PreparedSample],
    loss_cfg: &LossConfig,
) -> Result<(f64, f64, f64, Vec<ArrayD<f64>>)> {
    let batch = samples.len();
    assert!(batch > 0, "batch must not be empty");
    let per_sample: Vec<(f64, f64, Vec<ArrayD<f64>>)> = samples
        .par_iter()
        .map(|sample| {
            let mut local = net.clone();
            local.zero_grads();
            let (residual, cache) = local.forward(&sample.field, sample.delta_m, true);
            let cache = cache.expect("recording forward");
            let (h, w, _) = sample.light.data().dim();
            let dark = sample.dark.data();
            let light = sample.light.data();
            let mut pred = Array3::zeros((h, w, 3));
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        pred[[y, x, c]] = dark[[y, x, c]] + residual[[c, y, x]];
                    }
                }
            }
            let elems = (batch * pred.len()) as f64;
            let mut sum_sq = 0.0;
            let mut g_pred = Array3::zeros((h, w, 3));
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let d = pred[[y, x, c]] - light[[y, x, c]];
                        sum_sq += d * d;
                        g_pred[[y, x, c]] = 2.0 * d / elems;
                    }
                }
            }
            let mut perc_sum = 0.0;
            if let Some(ext) = &loss_cfg.extractor {
                let fp = ext.features(&pred);
                let ft = ext.features(light);
                let f_elems = (batch * fp.len()) as f64;
                let mut g_feat = fp.clone();
                for (g, &t) in g_feat.iter_mut().zip(ft.iter()) {
                    let d = *g - t;
                    perc_sum += d * d / f_elems;
                    *g = loss_cfg.lambda * 2.0 * d / f_elems;
                }
                g_pred += &ext.backward(&pred, &g_feat);
            }
            let mut g_residual = Array3::zeros((3, h, w));
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        g_residual[[c, y, x]] = g_pred[[y, x, c]];
                    }
                }
            }
            local.backward(&cache, &g_residual);
            let grads = local
                .param_pairs()
                .into_iter()
                .map(|(_, g)| g.to_owned())
                .collect();
            (sum_sq / elems, perc_sum, grads)
        })
        .collect();

    let mut mse = 0.0;
    let mut perceptual = 0.0;
    let mut merged: Option<Vec<ArrayD<f64>>> = None;
    for (m, p, grads) in per_sample {
        mse += m;
        perceptual += p;
        match &mut merged {
            None => merged = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    *a += g;
                }
            }
        }
    }
    let loss = mse + loss_cfg.lambda * perceptual;
    Ok((loss, mse, perceptual, merged.expect("nonempty batch")))
}

/// Mean PSNR of the net's enhancements over validation pairs.
fn validate_psnr(net: &UNet, val_pairs: &[(ImageTensor, ImageTensor)]) -> Result<f64> {
    let scores = val_pairs
        .par_iter()
        .map(|(light, dark)| {
            let delta_m = mean_lightness(light) - mean_lightness(dark);
            let enhanced = enhance(net, dark, delta_m)?;
            psnr(&enhanced.output, light)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn run_training(
    mut net: UNet,
    source: DimSource<'_>,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    val_pairs: &[(ImageTensor, ImageTensor)],
    sink: &mut TrainSink,
    role: &str,
) -> Result<TrainResult> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    source.validate()?;
    for (i, (light, dark)) in val_pairs.iter().enumerate() {
        if light.data().dim() != dark.data().dim() {
            return Err(Error::ShapeMismatch(format!(
                "validation pair {i}: light {:?} vs dark {:?}",
                light.data().dim(),
                dark.data().dim()
            )));
        }
    }
    let mut rng = rng_from_seed(derive_seed(train_cfg.seed, role));
    let mut adam = Adam::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut best_snapshot = snapshot_params(&net);
    let mut best_iter = 0usize;
    let mut best_val = if val_pairs.is_empty() {
        None
    } else {
        Some(validate_psnr(&net, val_pairs)?)
    };
    let mut stale_rounds = 0usize;

    for iter in 1..=train_cfg.max_iters {
        let lr = cosine_lr(train_cfg.learning_rate, iter - 1, train_cfg.max_iters);
        let plans = plan_slots(&mut rng, &source, train_cfg);
        let samples = assemble_batch(&source, &plans, train_cfg.crop_size)?;
        let (loss, mse, perceptual, grads) = batch_loss_and_grads(&net, &samples, loss_cfg)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter, value: loss });
        }
        net.zero_grads();
        for ((_, mut g), merged) in net.param_pairs().into_iter().zip(&grads) {
            g.assign(merged);
        }
        adam.step(net.param_pairs(), lr);

        let val_due = !val_pairs.is_empty()
            && (iter % train_cfg.val_interval == 0 || iter == train_cfg.max_iters);
        let mut val_psnr = None;
        if val_due {
            let v = validate_psnr(&net, val_pairs)?;
            val_psnr = Some(v);
            if best_val.is_none_or(|b| v > b) {
                best_val = Some(v);
                best_snapshot = snapshot_params(&net);
                best_iter = iter;
                stale_rounds = 0;
            } else {
                stale_rounds += 1;
            }
        }
        let entry = HistoryEntry {
            iter,
            loss,
            mse,
            perceptual,
            lr,
            val_psnr,
        };
        sink.record(&entry, &net)?;
        history.push(entry);
        if val_due && stale_rounds >= train_cfg.early_stop_patience {
            break;
        }
    }

    if val_pairs.is_empty() {
        best_snapshot = snapshot_params(&net);
        best_iter = history.last().map_or(0, |e| e.iter);
    }
    restore_params(&mut net, &best_snapshot);
    sink.finish(&net)?;
    Ok(TrainResult {
        net,
        history,
        best_iter,
        best_val_psnr: best_val,
    })
}

/// Trains on an unlabeled corpus, dimming a fresh random crop for every
/// batch slot of every iteration. `val_pairs` holds held-out (light, dark)
/// pairs; pass an empty slice to skip validation and keep the final
/// parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_unsupervised(
    net: UNet,
    corpus: &[ImageTensor],
    mdn: &MdnParams,
    stats: &IlluminationStats,
    dim_cfg: &DimConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    val_pairs: &[(ImageTensor, ImageTensor)],
    sink: &mut TrainSink,
) -> Result<TrainResult> {
    run_training(
        net,
        DimSource::Synthetic {
            corpus,
            mdn,
            stats,
            dim_cfg,
        },
        train_cfg,
        loss_cfg,
        val_pairs,
        sink,
        "train-unsupervised",
    )
}

/// Finetunes on real (light, dark) pairs with the same loop, computing the
/// lightness-drop conditioning from each actual pair.
pub fn finetune(
    net: UNet,
    pairs: &[(ImageTensor, ImageTensor)],
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    val_pairs: &[(ImageTensor, ImageTensor)],
    sink: &mut TrainSink,
) -> Result<TrainResult> {
    run_training(
        net,
        DimSource::Paired { pairs },
        train_cfg,
        loss_cfg,
        val_pairs,
        sink,
        "train-finetune",
    )
}
