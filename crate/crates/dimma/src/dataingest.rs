//! Paired-dataset loading and filtered corpus manifests.
//!
//! [`load_paired`] reads the conventional `low/` + `high/` layout used by
//! paired low-light datasets, [`select_subset`] carves out the few-shot
//! pair lists, and [`build_corpus`] walks arbitrary photo collections,
//! applies per-root quality filters, and emits a manifest of accepted
//! images and the transforms to apply when loading them. Manifests record
//! paths rather than copied pixels, so corpora over several datasets stay
//! cheap.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::{self, FilterType};
use rayon::prelude::*;
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::imagecore::{tensor_from_rgb8, ImageTensor};

/// Filename-matched (light, dark) pairs from one dataset root.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub name: String,
    /// (light_path, dark_path) per pair, i.e. (`high/...`, `low/...`).
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && matches!(
            path.extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase())
                .as_deref(),
            Some("png" | "jpg" | "jpeg")
        )
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if is_image_file(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Loads a `low/` + `high/` paired dataset, matching files by name.
///
/// Pairs come back sorted by filename; files present in only one
/// subdirectory are skipped and reported in the returned warnings. Each
/// matched pair's pixel dimensions are verified from the image headers.
pub fn load_paired(root: &Path) -> Result<(PairedDataset, Vec<String>)> {
    let mut subdirs = [root.join("high"), root.join("low")].into_iter();
    let (high, low) = (subdirs.next().unwrap(), subdirs.next().unwrap());
    for (dir, name) in [(&high, "high"), (&low, "low")] {
        if !dir.is_dir() {
            return Err(Error::MissingSubdir {
                root: root.to_path_buf(),
                subdir: name.to_string(),
            });
        }
    }
    let lights = image_files(&high)?;
    let darks = image_files(&low)?;
    let mut warnings = Vec::new();
    for name in lights.keys() {
        if !darks.contains_key(name) {
            warnings.push(format!("high/{name} has no low/ counterpart; skipped"));
        }
    }
    for name in darks.keys() {
        if !lights.contains_key(name) {
            warnings.push(format!("low/{name} has no high/ counterpart; skipped"));
        }
    }
    let mut pairs = Vec::new();
    for (name, light_path) in &lights {
        let Some(dark_path) = darks.get(name) else {
            continue;
        };
        let light_dims = image::image_dimensions(light_path)
            .map_err(|e| Error::Decode {
                path: light_path.clone(),
                source: e,
            })?;
        let dark_dims = image::image_dimensions(dark_path).map_err(|e| Error::Decode {
            path: dark_path.clone(),
            source: e,
        })?;
        if light_dims != dark_dims {
            return Err(Error::DimensionMismatch {
                name: name.clone(),
                details: format!("high is {light_dims:?}, low is {dark_dims:?}"),
            });
        }
        pairs.push((light_path.clone(), dark_path.clone()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no matched low/high pairs under {}",
            root.display()
        )));
    }
    let name = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string();
    Ok((PairedDataset { name, pairs }, warnings))
}

/// Restricts a dataset to the named files, in the order given.
///
/// An empty list yields an empty dataset; a name the dataset does not
/// contain is an error.
pub fn select_subset(ds: &PairedDataset, filenames: &[String]) -> Result<PairedDataset> {
    let by_name: BTreeMap<&str, &(PathBuf, PathBuf)> = ds
        .pairs
        .iter()
        .filter_map(|pair| {
            pair.0
                .file_name()
                .and_then(|n| n.to_str())
                .map(|n| (n, pair))
        })
        .collect();
    let mut pairs = Vec::with_capacity(filenames.len());
    for name in filenames {
        match by_name.get(name.as_str()) {
            Some(pair) => pairs.push((*pair).clone()),
            None => return Err(Error::UnknownFilename(name.clone())),
        }
    }
    Ok(PairedDataset {
        name: ds.name.clone(),
        pairs,
    })
}

/// Reads a subset manifest: one filename per line, blank lines and `#`
/// comments ignored.
pub fn read_subset_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Quality gates and transforms applied to one corpus root.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFilter {
    /// Inclusive minimum source dimensions.
    pub min_width: usize,
    pub min_height: usize,
    /// Inclusive maximum source dimensions, unlimited when `None`.
    pub max_width: Option<usize>,
    pub max_height: Option<usize>,
    /// Uniform downscale recorded in the manifest, in (0,1].
    pub resize_factor: Option<f64>,
    /// Center crop (width, height) applied after any resize.
    pub center_crop: Option<(usize, usize)>,
    /// Reject images whose border frame is nearly white.
    pub reject_white_background: bool,
    /// Mean border lightness above which an image counts as white-backed.
    pub white_threshold: f64,
    /// Width in pixels of the border frame inspected.
    pub white_border: usize,
}

impl Default for CorpusFilter {
    fn default() -> Self {
        CorpusFilter {
            min_width: 1,
            min_height: 1,
            max_width: None,
            max_height: None,
            resize_factor: None,
            center_crop: None,
            reject_white_background: false,
            white_threshold: 0.95,
            white_border: 16,
        }
    }
}

impl CorpusFilter {
    pub fn validate(&self) -> Result<()> {
        if self.min_width == 0 || self.min_height == 0 {
            return Err(Error::InvalidConfig(
                "minimum dimensions must be positive".into(),
            ));
        }
        if self.max_width.is_some_and(|m| m < self.min_width)
            || self.max_height.is_some_and(|m| m < self.min_height)
        {
            return Err(Error::InvalidConfig(
                "maximum dimensions must not be below the minimums".into(),
            ));
        }
        if let Some(f) = self.resize_factor {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "resize_factor must lie in (0,1], got {f}"
                )));
            }
        }
        if let Some((w, h)) = self.center_crop {
            if w == 0 || h == 0 {
                return Err(Error::InvalidConfig(
                    "center_crop dimensions must be positive".into(),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.white_threshold) {
            return Err(Error::InvalidConfig(format!(
                "white_threshold must lie in [0,1], got {}",
                self.white_threshold
            )));
        }
        Ok(())
    }

    /// The transform a source of the given dimensions receives, or `None`
    /// when the image fails a gate.
    fn plan(&self, src_w: usize, src_h: usize) -> Option<Transform> {
        if src_w < self.min_width || src_h < self.min_height {
            return None;
        }
        if self.max_width.is_some_and(|m| src_w > m) || self.max_height.is_some_and(|m| src_h > m)
        {
            return None;
        }
        let resize = self.resize_factor.map(|f| {
            (
                ((src_w as f64 * f).round() as usize).max(1),
                ((src_h as f64 * f).round() as usize).max(1),
            )
        });
        let (mut w, mut h) = resize.unwrap_or((src_w, src_h));
        if let Some((cw, ch)) = self.center_crop {
            if cw > w || ch > h {
                return None;
            }
            (w, h) = (cw, ch);
        }
        let _ = (w, h);
        Some(Transform {
            resize,
            crop: self.center_crop,
        })
    }
}

/// The loading-time transform recorded for one corpus entry: an optional
/// resize to exact target dimensions, then an optional center crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    /// Target (width, height) of the resize step.
    pub resize: Option<(usize, usize)>,
    /// (width, height) of the center crop step.
    pub crop: Option<(usize, usize)>,
}

impl Transform {
    /// Output (width, height) for a source of the given dimensions.
    pub fn output_dims(&self, src_w: usize, src_h: usize) -> (usize, usize) {
        let (w, h) = self.resize.unwrap_or((src_w, src_h));
        self.crop.map_or((w, h), |(cw, ch)| (cw.min(w), ch.min(h)))
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some((w, h)) = self.resize {
            parts.push(format!("resize={w}x{h}"));
        }
        if let Some((w, h)) = self.crop {
            parts.push(format!("crop={w}x{h}"));
        }
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

fn parse_dims(text: &str) -> Option<(usize, usize)> {
    let (w, h) = text.split_once('x')?;
    Some((w.parse().ok()?, h.parse().ok()?))
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "none" {
            return Ok(Transform::default());
        }
        let mut transform = Transform::default();
        for part in s.split(',') {
            match part.split_once('=') {
                Some(("resize", dims)) => {
                    transform.resize =
                        Some(parse_dims(dims).ok_or_else(|| format!("bad resize spec {part:?}"))?);
                }
                Some(("crop", dims)) => {
                    transform.crop =
                        Some(parse_dims(dims).ok_or_else(|| format!("bad crop spec {part:?}"))?);
                }
                _ => return Err(format!("unknown transform {part:?}")),
            }
        }
        Ok(transform)
    }
}

/// One accepted corpus image and how to load it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub transform: Transform,
}

/// Center luminance of the border frame, for the white-background gate.
fn border_lightness(img: &ImageTensor, border: usize) -> f64 {
    let data = img.data();
    let (h, w, _) = data.dim();
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let on_border =
                y < border || x < border || y >= h.saturating_sub(border) || x >= w.saturating_sub(border);
            if on_border {
                sum += (data[[y, x, 0]] + data[[y, x, 1]] + data[[y, x, 2]]) / 3.0;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Applies a recorded transform while loading one corpus image.
pub fn load_corpus_entry(entry: &CorpusEntry) -> Result<ImageTensor> {
    let decoded = image::open(&entry.path).map_err(|e| Error::Decode {
        path: entry.path.clone(),
        source: e,
    })?;
    let mut rgb = decoded.to_rgb8();
    if let Some((w, h)) = entry.transform.resize {
        rgb = imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle);
    }
    if let Some((cw, ch)) = entry.transform.crop {
        let (w, h) = rgb.dimensions();
        let cw = (cw as u32).min(w);
        let ch = (ch as u32).min(h);
        let x0 = (w - cw) / 2;
        let y0 = (h - ch) / 2;
        rgb = imageops::crop_imm(&rgb, x0, y0, cw, ch).to_image();
    }
    tensor_from_rgb8(&rgb)
}

/// Walks each root, applies its filter, and returns accepted entries.
///
/// Ordering is deterministic: roots in the order given, files in sorted
/// walk order within each root. An empty result is valid.
pub fn build_corpus(roots: &[(PathBuf, CorpusFilter)]) -> Result<Vec<CorpusEntry>> {
    let mut entries = Vec::new();
    for (root, filter) in roots {
        filter.validate()?;
        let mut files = Vec::new();
        for item in WalkDir::new(root).sort_by_file_name() {
            let item = item.map_err(|e| {
                Error::io(
                    root,
                    e.into_io_error()
                        .unwrap_or_else(|| std::io::Error::other("walk error")),
                )
            })?;
            if is_image_file(item.path()) {
                files.push(item.path().to_path_buf());
            }
        }
        let accepted = files
            .par_iter()
            .map(|path| -> Result<Option<CorpusEntry>> {
                let Ok((w, h)) = image::image_dimensions(path) else {
                    return Ok(None);
                };
                let Some(transform) = filter.plan(w as usize, h as usize) else {
                    return Ok(None);
                };
                let entry = CorpusEntry {
                    path: path.clone(),
                    transform,
                };
                if filter.reject_white_background {
                    let img = load_corpus_entry(&entry)?;
                    if border_lightness(&img, filter.white_border) > filter.white_threshold {
                        return Ok(None);
                    }
                }
                Ok(Some(entry))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.extend(accepted.into_iter().flatten());
    }
    Ok(entries)
}

/// Renders corpus entries as manifest text, one `path transform` per line.
pub fn corpus_manifest(entries: &[CorpusEntry]) -> Result<String> {
    let mut out = String::new();
    for entry in entries {
        let text = entry.path.to_str().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "non-UTF-8 path {} in corpus manifest",
                entry.path.display()
            ))
        })?;
        if text.chars().any(char::is_whitespace) {
            return Err(Error::InvalidConfig(format!(
                "path {text:?} contains whitespace and cannot be recorded in the manifest"
            )));
        }
        out.push_str(text);
        out.push(' ');
        out.push_str(&entry.transform.to_string());
        out.push('\n');
    }
    Ok(out)
}

/// Parses manifest text produced by [`corpus_manifest`].
pub fn parse_corpus_manifest(text: &str, origin: &Path) -> Result<Vec<CorpusEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(path), Some(spec), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::ParseError {
                path: origin.to_path_buf(),
                details: format!("line {}: expected `path transform`", lineno + 1),
            });
        };
        let transform = spec.parse::<Transform>().map_err(|e| Error::ParseError {
            path: origin.to_path_buf(),
            details: format!("line {}: {e}", lineno + 1),
        })?;
        entries.push(CorpusEntry {
            path: PathBuf::from(path),
            transform,
        });
    }
    Ok(entries)
}

/// Loads every manifest entry into memory, applying its transform.
pub fn load_corpus_images(entries: &[CorpusEntry]) -> Result<Vec<ImageTensor>> {
    entries.par_iter().map(load_corpus_entry).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::save_image;
    use crate::synth::synth_scene;
    use ndarray::Array3;

    fn write_scene(path: &Path, seed: u64, h: usize, w: usize) {
        save_image(&synth_scene(seed, h, w), path).unwrap();
    }

    #[test]
    fn load_paired_matches_sorts_and_warns() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("lol");
        std::fs::create_dir_all(root.join("high")).unwrap();
        std::fs::create_dir_all(root.join("low")).unwrap();
        for name in ["2.png", "1.png"] {
            write_scene(&root.join("high").join(name), 1, 12, 12);
            write_scene(&root.join("low").join(name), 2, 12, 12);
        }
        write_scene(&root.join("high").join("3.png"), 3, 12, 12);
        let (ds, warnings) = load_paired(&root).unwrap();
        assert_eq!(ds.name, "lol");
        let names: Vec<String> = ds
            .pairs
            .iter()
            .map(|(l, _)| l.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, vec!["1.png", "2.png"]);
        for (light, dark) in &ds.pairs {
            assert!(light.starts_with(root.join("high")));
            assert!(dark.starts_with(root.join("low")));
        }
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("3.png"));
    }

    #[test]
    fn load_paired_error_contracts() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("ds");
        std::fs::create_dir_all(root.join("high")).unwrap();
        let err = load_paired(&root);
        assert!(
            matches!(err, Err(Error::MissingSubdir { ref subdir, .. }) if subdir == "low"),
            "{err:?}"
        );
        std::fs::create_dir_all(root.join("low")).unwrap();
        assert!(matches!(load_paired(&root), Err(Error::EmptyDataset(_))));
        write_scene(&root.join("high").join("a.png"), 1, 10, 12);
        write_scene(&root.join("low").join("a.png"), 2, 10, 14);
        let err = load_paired(&root);
        assert!(
            matches!(err, Err(Error::DimensionMismatch { ref name, .. }) if name == "a.png"),
            "{err:?}"
        );
    }

    #[test]
    fn select_subset_preserves_request_order() {
        let ds = PairedDataset {
            name: "ds".into(),
            pairs: (1..=6)
                .map(|i| {
                    (
                        PathBuf::from(format!("high/{i}.png")),
                        PathBuf::from(format!("low/{i}.png")),
                    )
                })
                .collect(),
        };
        let subset =
            select_subset(&ds, &["5.png".into(), "2.png".into(), "6.png".into()]).unwrap();
        let names: Vec<String> = subset
            .pairs
            .iter()
            .map(|(l, _)| l.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, vec!["5.png", "2.png", "6.png"]);
        assert!(select_subset(&ds, &[]).unwrap().pairs.is_empty());
        let err = select_subset(&ds, &["9.png".into()]);
        assert!(matches!(err, Err(Error::UnknownFilename(ref n)) if n == "9.png"));
    }

    #[test]
    fn subset_manifest_skips_blanks_and_comments() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("subset.txt");
        std::fs::write(&path, "# experiment 1\n2.png\n\n5.png\n 6.png \n").unwrap();
        assert_eq!(
            read_subset_manifest(&path).unwrap(),
            vec!["2.png", "5.png", "6.png"]
        );
    }

    #[test]
    fn corpus_gates_reject_small_large_and_white_images() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("photos");
        std::fs::create_dir_all(&root).unwrap();
        write_scene(&root.join("small.png"), 1, 20, 20);
        write_scene(&root.join("ok.png"), 2, 40, 60);
        write_scene(&root.join("big.png"), 3, 40, 300);
        let white =
            ImageTensor::from_array(Array3::from_elem((40, 60, 3), 0.97)).unwrap();
        save_image(&white, root.join("white.png")).unwrap();
        let filter = CorpusFilter {
            min_width: 30,
            min_height: 30,
            max_width: Some(200),
            reject_white_background: true,
            ..CorpusFilter::default()
        };
        let entries = build_corpus(&[(root.clone(), filter)]).unwrap();
        let names: Vec<&str> = entries
            .iter()
            .map(|e| e.path.file_name().unwrap().to_str().unwrap())
            .collect();
        assert_eq!(names, vec!["ok.png"]);
        assert_eq!(entries[0].transform, Transform::default());
    }

    #[test]
    fn transforms_are_recorded_with_target_dimensions() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("photos");
        std::fs::create_dir_all(&root).unwrap();
        write_scene(&root.join("a.png"), 4, 48, 64);
        let filter = CorpusFilter {
            resize_factor: Some(0.5),
            center_crop: Some((16, 16)),
            ..CorpusFilter::default()
        };
        let entries = build_corpus(&[(root.clone(), filter)]).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].transform.resize, Some((32, 24)));
        assert_eq!(entries[0].transform.crop, Some((16, 16)));
        assert_eq!(entries[0].transform.to_string(), "resize=32x24,crop=16x16");
        let loaded = load_corpus_entry(&entries[0]).unwrap();
        assert_eq!((loaded.width(), loaded.height()), (16, 16));

        // A crop larger than the post-resize image rejects the entry.
        let too_big = CorpusFilter {
            resize_factor: Some(0.5),
            center_crop: Some((100, 100)),
            ..CorpusFilter::default()
        };
        assert!(build_corpus(&[(root, too_big)]).unwrap().is_empty());
    }

    #[test]
    fn manifests_are_deterministic_and_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("photos");
        std::fs::create_dir_all(root.join("sub")).unwrap();
        write_scene(&root.join("b.png"), 5, 24, 24);
        write_scene(&root.join("a.png"), 6, 24, 24);
        write_scene(&root.join("sub").join("c.png"), 7, 24, 24);
        let filter = CorpusFilter::default();
        let first = build_corpus(&[(root.clone(), filter.clone())]).unwrap();
        let second = build_corpus(&[(root.clone(), filter)]).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.len(), 3);
        let text = corpus_manifest(&first).unwrap();
        let reparsed = parse_corpus_manifest(&text, Path::new("corpus.txt")).unwrap();
        assert_eq!(first, reparsed);
        let images = load_corpus_images(&first).unwrap();
        assert_eq!(images.len(), 3);
    }

    #[test]
    fn transform_spec_parsing_rejects_garbage() {
        assert_eq!("none".parse::<Transform>().unwrap(), Transform::default());
        let spec = "resize=300x240".parse::<Transform>().unwrap();
        assert_eq!(spec.resize, Some((300, 240)));
        assert!("sharpen=2".parse::<Transform>().is_err());
        assert!("resize=300".parse::<Transform>().is_err());
        let err = parse_corpus_manifest("a.png resize=banana\n", Path::new("m.txt"));
        assert!(matches!(err, Err(Error::ParseError { .. })));
        let err = parse_corpus_manifest("only-one-field\n", Path::new("m.txt"));
        assert!(matches!(err, Err(Error::ParseError { .. })));
    }

    #[test]
    fn filter_validation_rejects_contradictions() {
        let bad = CorpusFilter {
            min_width: 100,
            max_width: Some(50),
            ..CorpusFilter::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = CorpusFilter {
            resize_factor: Some(1.5),
            ..CorpusFilter::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
    }
}
