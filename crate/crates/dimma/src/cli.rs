//! Command-line front end.
//!
//! The `dimma` binary is a thin shim over [`run`]; all logic lives here so
//! integration tests and other binaries can drive it. Subcommands mirror
//! the pipeline stages: `fit-dim` calibrates the dimming model from paired
//! photos, `dim` darkens a folder, `corpus` scans image collections into a
//! manifest, `train` fits the brightening network on synthetic pairs,
//! `finetune` adapts it on real pairs, `enhance` brightens new images,
//! `eval` scores predictions, and `inspect-mdn` exports density curves.
//!
//! Exit codes: 0 on success, 1 for runtime failures (bad data, I/O), 2 for
//! command-line usage errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::brightnet::{enhance, load_unet, save_unet, NetConfig, UNet};
use crate::config::{load_run_config, Preset, RunConfig};
use crate::dataingest::{
    build_corpus, corpus_manifest, load_corpus_images, load_paired, parse_corpus_manifest,
    read_subset_manifest, select_subset, CorpusFilter,
};
use crate::dimmer::dim_corpus;
use crate::error::{Error, Result};
use crate::illumstats::{fit_stats, load_stats, save_stats, DimConfig, DimMode};
use crate::imagecore::{load_image, save_image, ImageTensor};
use crate::mdn::{load_mdn, mdn_pdf_curve, save_mdn, train_mdn, MdnConfig};
use crate::metrics::evaluate_dir;
use crate::seeding::derive_seed;
use crate::trainer::{
    finetune, train_unsupervised, LossConfig, TrainConfig, TrainResult, TrainSink,
};

/// Few-shot low-light dimming and enhancement pipeline.
#[derive(Debug, Parser)]
#[command(name = "dimma", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate the dimming model (ratio statistics + reflectance MDN)
    /// from paired light/dark photos.
    FitDim(FitDimArgs),
    /// Darken a folder of well-lit images through a calibrated model.
    Dim(DimArgs),
    /// Scan image folders into a deterministic corpus manifest.
    Corpus(CorpusArgs),
    /// Train the brightening network on synthetically dimmed images.
    Train(TrainArgs),
    /// Finetune a brightening network on real paired photos.
    Finetune(FinetuneArgs),
    /// Brighten dark images to a target mean-lightness lift.
    Enhance(EnhanceArgs),
    /// Score enhanced images against ground truth.
    Eval(EvalArgs),
    /// Export density curves from a trained reflectance MDN.
    InspectMdn(InspectMdnArgs),
}

/// Flags shared by every training-style command.
#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML file with optional overrides for any pipeline stage.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; wins over the config file. Defaults to 0.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<(RunConfig, u64)> {
        let cfg = match &self.config {
            Some(path) => load_run_config(path)?,
            None => RunConfig::default(),
        };
        let seed = self.seed.or(cfg.seed).unwrap_or(0);
        Ok((cfg, seed))
    }
}

#[derive(Debug, Args)]
struct FitDimArgs {
    /// Dataset root containing high/ and low/ subdirectories.
    #[arg(long)]
    pairs: PathBuf,
    /// Optional manifest listing which filenames to use (one per line).
    #[arg(long)]
    subset: Option<PathBuf>,
    /// Output directory for stats.txt and mdn.ckpt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct DimArgs {
    /// Folder of well-lit images to darken.
    #[arg(long)]
    input: PathBuf,
    /// Directory holding stats.txt and mdn.ckpt from fit-dim.
    #[arg(long)]
    dim: PathBuf,
    /// Output directory for darkened images, sidecars, and manifest.txt.
    #[arg(long)]
    out: PathBuf,
    /// Fix γ to one value (sets both ends of the γ range).
    #[arg(long)]
    gamma: Option<f64>,
    /// Sampling temperature in [0,1]; 0 collapses to the deterministic mode.
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Image folders to scan (repeatable).
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Minimum accepted width and height of the source image.
    #[arg(long, default_value_t = 1)]
    min_size: usize,
    /// Downscale factor applied before any crop (e.g. 0.5 halves each side).
    #[arg(long)]
    resize_factor: Option<f64>,
    /// Center-crop to SIZExSIZE after resizing.
    #[arg(long)]
    center_crop: Option<usize>,
    /// Drop images whose border is nearly white (scanned documents).
    #[arg(long)]
    reject_white: bool,
    /// Write the manifest here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus manifest produced by `dimma corpus`.
    #[arg(long)]
    corpus: PathBuf,
    /// Directory holding stats.txt and mdn.ckpt from fit-dim.
    #[arg(long)]
    dim: PathBuf,
    /// Dataset root with high/ and low/ for validation.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for checkpoints and history.txt.
    #[arg(long)]
    out: PathBuf,
    /// Architecture and schedule preset.
    #[arg(long, value_parser = ["toy", "full"], default_value = "full")]
    preset: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Dataset root with high/ and low/ subdirectories of real pairs.
    #[arg(long)]
    pairs: PathBuf,
    /// Optional manifest listing which filenames to use.
    #[arg(long)]
    subset: Option<PathBuf>,
    /// Checkpoint to start from; omitted, a fresh network is trained on
    /// the pairs alone.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Dataset root with high/ and low/ for validation.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for checkpoints and history.txt.
    #[arg(long)]
    out: PathBuf,
    /// Architecture and schedule preset (used when --ckpt is omitted).
    #[arg(long, value_parser = ["toy", "full"], default_value = "full")]
    preset: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    /// A dark image file, or a folder of them.
    #[arg(long)]
    input: PathBuf,
    /// Trained brightening network checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Output directory for enhanced images.
    #[arg(long)]
    out: PathBuf,
    /// Target mean-lightness lift in [-1, 1].
    #[arg(long)]
    lightness: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Folder of predicted (enhanced) images.
    #[arg(long)]
    pred: PathBuf,
    /// Folder of ground-truth images with matching filenames.
    #[arg(long)]
    gt: PathBuf,
    /// Write the CSV report here (a .md twin is written alongside).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectMdnArgs {
    /// Trained reflectance MDN checkpoint.
    #[arg(long)]
    mdn: PathBuf,
    /// Conditioning point "r,g,b,light,dark" (reflectance and the two
    /// illumination levels).
    #[arg(long)]
    probe: String,
    /// Write the density CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` and runs the selected command, returning the process
/// exit code. The iterator must include the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return 1;
    }
    let result = match cli.command {
        Command::FitDim(args) => cmd_fit_dim(args),
        Command::Dim(args) => cmd_dim(args),
        Command::Corpus(args) => cmd_corpus(args),
        Command::Train(args) => cmd_train(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Enhance(args) => cmd_enhance(args),
        Command::Eval(args) => cmd_eval(args),
        Command::InspectMdn(args) => cmd_inspect_mdn(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Honors `DIMMA_NUM_WORKERS` for the global worker pool. Results are
/// identical at any worker count; the knob only controls parallelism.
fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var("DIMMA_NUM_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw.parse().map_err(|_| {
        Error::InvalidConfig(format!("DIMMA_NUM_WORKERS must be a positive integer, got {raw:?}"))
    })?;
    if n == 0 {
        return Err(Error::InvalidConfig(
            "DIMMA_NUM_WORKERS must be a positive integer, got 0".into(),
        ));
    }
    // Ignore the error from a pool that is already configured (tests may
    // call run() repeatedly in one process).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Loads a paired dataset and applies an optional subset manifest.
fn load_pairs_subset(
    root: &Path,
    subset: Option<&Path>,
) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    let (mut dataset, warnings) = load_paired(root)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if let Some(manifest) = subset {
        let names = read_subset_manifest(manifest)?;
        dataset = select_subset(&dataset, &names)?;
    }
    if dataset.pairs.is_empty() {
        return Err(Error::EmptyDataset(root.display().to_string()));
    }
    dataset
        .pairs
        .iter()
        .map(|(light, dark)| Ok((load_image(light)?, load_image(dark)?)))
        .collect()
}

fn cmd_fit_dim(args: FitDimArgs) -> Result<()> {
    let (cfg, seed) = args.common.load()?;
    let pairs = load_pairs_subset(&args.pairs, args.subset.as_deref())?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let stats = fit_stats(&pairs)?;
    save_stats(&stats, &args.out.join("stats.txt"))?;

    let mut mdn_cfg = cfg.mdn.apply(MdnConfig::default());
    mdn_cfg.seed = derive_seed(seed, "mdn-fit");
    let (params, losses) = train_mdn(&pairs, &mdn_cfg)?;
    save_mdn(&params, &args.out.join("mdn.ckpt"))?;

    let final_nll = losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "fit {} pairs: stats + {}-component mixture, final nll {final_nll:.6}",
        pairs.len(),
        mdn_cfg.components,
    );
    Ok(())
}

/// Collects the image files directly inside `dir`, sorted by name.
fn image_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg") => {
                files.push(path)
            }
            _ => eprintln!("warning: skipping non-image file {}", path.display()),
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_dim(args: DimArgs) -> Result<()> {
    let (cfg, seed) = args.common.load()?;
    let stats = load_stats(&args.dim.join("stats.txt"))?;
    let mdn = load_mdn(&args.dim.join("mdn.ckpt"))?;

    let mut dim_cfg = cfg.dim.apply(DimConfig::default())?;
    if let Some(gamma) = args.gamma {
        dim_cfg.gamma_min = gamma;
        dim_cfg.gamma_max = gamma;
    }
    if let Some(alpha) = args.alpha {
        dim_cfg.alpha = alpha;
        if alpha == 0.0 {
            dim_cfg.mode = DimMode::Deterministic;
        }
    }
    dim_cfg.seed = derive_seed(seed, "dim");
    dim_cfg.validate()?;

    let files = image_files_in(&args.input)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(args.input.display().to_string()));
    }
    let items: Vec<(PathBuf, ImageTensor)> = files
        .iter()
        .map(|p| Ok((p.clone(), load_image(p)?)))
        .collect::<Result<_>>()?;

    let records = dim_corpus(&items, &mdn, &stats, &dim_cfg, &args.out)?;
    println!("dimmed {} images into {}", records.len(), args.out.display());
    Ok(())
}

/// Creates the directory a report file is about to be written into.
fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn cmd_corpus(args: CorpusArgs) -> Result<()> {
    let filter = CorpusFilter {
        min_width: args.min_size,
        min_height: args.min_size,
        resize_factor: args.resize_factor,
        center_crop: args.center_crop.map(|s| (s, s)),
        reject_white_background: args.reject_white,
        ..CorpusFilter::default()
    };
    filter.validate()?;
    let roots: Vec<(PathBuf, CorpusFilter)> = args
        .input
        .iter()
        .map(|p| (p.clone(), filter.clone()))
        .collect();
    let entries = build_corpus(&roots)?;
    if entries.is_empty() {
        return Err(Error::NoPairsFound);
    }
    let manifest = corpus_manifest(&entries)?;
    match &args.out {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, &manifest).map_err(|e| Error::io(path, e))?;
            println!("wrote {} corpus entries to {}", entries.len(), path.display());
        }
        None => print!("{manifest}"),
    }
    Ok(())
}

/// Builds the network and schedule for a preset name, then folds in the
/// config file. Flags handled by callers win over both.
fn preset_configs(
    preset: &str,
    cfg: &RunConfig,
    finetune_stage: bool,
) -> Result<(NetConfig, TrainConfig)> {
    let preset: Preset = preset.parse()?;
    let net = cfg.net.apply(preset.net());
    let (section, base) = if finetune_stage {
        (&cfg.finetune, preset.finetune())
    } else {
        (&cfg.train, preset.train())
    };
    Ok((net, section.apply(base)))
}

fn load_val_pairs(root: Option<&Path>) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    match root {
        Some(root) => load_pairs_subset(root, None),
        None => Ok(Vec::new()),
    }
}

fn report_training(result: &TrainResult, out: &Path) {
    let final_loss = result.history.last().map_or(f64::NAN, |h| h.loss);
    match result.best_val_psnr {
        Some(psnr) => println!(
            "trained {} iters, final loss {final_loss:.6}, best val psnr {psnr:.3} dB at iter {}; checkpoints in {}",
            result.history.len(),
            result.best_iter,
            out.display(),
        ),
        None => println!(
            "trained {} iters, final loss {final_loss:.6}; checkpoints in {}",
            result.history.len(),
            out.display(),
        ),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (cfg, seed) = args.common.load()?;
    let (net_cfg, train_cfg) = preset_configs(&args.preset, &cfg, false)?;
    let loss_cfg = cfg.loss.apply(LossConfig::default())?;

    let stats = load_stats(&args.dim.join("stats.txt"))?;
    let mdn = load_mdn(&args.dim.join("mdn.ckpt"))?;
    let mut dim_cfg = cfg.dim.apply(DimConfig::default())?;
    dim_cfg.seed = derive_seed(seed, "dim");

    let manifest_text =
        fs::read_to_string(&args.corpus).map_err(|e| Error::io(&args.corpus, e))?;
    let entries = parse_corpus_manifest(&manifest_text, &args.corpus)?;
    let corpus = load_corpus_images(&entries)?;
    let val_pairs = load_val_pairs(args.val.as_deref())?;

    let mut net_cfg = net_cfg;
    net_cfg.seed = derive_seed(seed, "net-init");
    let mut train_cfg = train_cfg;
    train_cfg.seed = seed;
    let net = UNet::build(&net_cfg)?;

    let mut sink = TrainSink::to_dir(&args.out, train_cfg.val_interval)?;
    sink.comment(&format!("stage=train corpus={} seed={seed}", corpus.len()))?;
    let result = train_unsupervised(
        net, &corpus, &mdn, &stats, &dim_cfg, &train_cfg, &loss_cfg, &val_pairs, &mut sink,
    )?;
    save_unet(&result.net, &args.out.join("final.ckpt"))?;
    report_training(&result, &args.out);
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> Result<()> {
    let (cfg, seed) = args.common.load()?;
    let (net_cfg, train_cfg) = preset_configs(&args.preset, &cfg, true)?;
    let loss_cfg = cfg.loss.apply(LossConfig::default())?;

    let pairs = load_pairs_subset(&args.pairs, args.subset.as_deref())?;
    let val_pairs = load_val_pairs(args.val.as_deref())?;

    let net = match &args.ckpt {
        Some(path) => load_unet(path)?,
        None => {
            let mut net_cfg = net_cfg;
            net_cfg.seed = derive_seed(seed, "net-init");
            UNet::build(&net_cfg)?
        }
    };
    let mut train_cfg = train_cfg;
    train_cfg.seed = seed;

    let mut sink = TrainSink::to_dir(&args.out, train_cfg.val_interval)?;
    let start = match &args.ckpt {
        Some(path) => format!("ckpt={}", path.display()),
        None => "ckpt=fresh".to_string(),
    };
    sink.comment(&format!("stage=finetune pairs={} {start} seed={seed}", pairs.len()))?;
    let result = finetune(net, &pairs, &train_cfg, &loss_cfg, &val_pairs, &mut sink)?;
    save_unet(&result.net, &args.out.join("final.ckpt"))?;
    report_training(&result, &args.out);
    Ok(())
}

fn cmd_enhance(args: EnhanceArgs) -> Result<()> {
    let net = load_unet(&args.ckpt)?;
    let inputs = if args.input.is_dir() {
        image_files_in(&args.input)?
    } else {
        vec![args.input.clone()]
    };
    if inputs.is_empty() {
        return Err(Error::EmptyDataset(args.input.display().to_string()));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for path in &inputs {
        let dark = load_image(path)?;
        let result = enhance(&net, &dark, args.lightness)?;
        let name = path
            .file_name()
            .ok_or_else(|| Error::InvalidConfig(format!("no filename in {}", path.display())))?;
        let mut out_path = args.out.join(name);
        out_path.set_extension("png");
        save_image(&result.output, &out_path)?;
    }
    println!(
        "enhanced {} images at lightness {:+.3} into {}",
        inputs.len(),
        args.lightness,
        args.out.display(),
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (report, warnings) = evaluate_dir(&args.pred, &args.gt)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = &args.out {
        ensure_parent(out)?;
        fs::write(out, report.to_csv()).map_err(|e| Error::io(out, e))?;
        let mut md_path = out.clone();
        md_path.set_extension("md");
        fs::write(&md_path, report.to_markdown()).map_err(|e| Error::io(&md_path, e))?;
    }
    println!(
        "{} images: psnr {:.3} dB, ssim_gray {:.4}, ssim_rgb {:.4}, delta_e {:.3}",
        report.rows.len(),
        report.mean.psnr,
        report.mean.ssim_gray,
        report.mean.ssim_rgb,
        report.mean.delta_e,
    );
    Ok(())
}

/// Parses "r,g,b,light,dark" into the five MDN inputs.
fn parse_probe(raw: &str) -> Result<[f64; 5]> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(Error::InvalidConfig(format!(
            "probe must be five comma-separated numbers \"r,g,b,light,dark\", got {raw:?}"
        )));
    }
    let mut probe = [0.0; 5];
    for (slot, part) in probe.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| {
            Error::InvalidConfig(format!("probe component {part:?} is not a number"))
        })?;
    }
    Ok(probe)
}

fn cmd_inspect_mdn(args: InspectMdnArgs) -> Result<()> {
    let params = load_mdn(&args.mdn)?;
    let probe = parse_probe(&args.probe)?;
    let mut csv = String::from("channel,value,density\n");
    for (channel, name) in ["r", "g", "b"].iter().enumerate() {
        // 201 dark-reflectance values centered on the probe's own value.
        let base = probe[channel];
        let grid: Vec<f64> = (0..=200).map(|i| base - 1.0 + i as f64 * 0.01).collect();
        let curve = mdn_pdf_curve(&params, probe, channel, &grid)?;
        for (value, density) in curve {
            csv.push_str(&format!("{name},{value:.6},{density:.9}\n"));
        }
    }
    match &args.out {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
            println!("wrote 3x201 density samples to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
