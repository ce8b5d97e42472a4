//! Canonical image tensors, dataset ingestion and reference/reconstruction
//! pairing.
//!
//! Images are held as planar RGB `f64` in `[0, 1]`. Quantization to 8 bits
//! happens only when an image is written to disk. Metrics therefore use a
//! peak value of `1.0`; multiply mean-squared errors by `255²` to get the
//! 8-bit convention (PSNR itself is scale free).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest canonical side accepted by [`load_dataset`].
pub const MIN_SIDE: usize = 32;
/// Default canonical side.
pub const DEFAULT_SIDE: usize = 256;

/// Channel order of every [`ImageTensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorLayout {
    Rgb,
}

/// A decoded image in canonical planar layout `(3, height, width)`.
#[derive(Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f64>,
    height: usize,
    width: usize,
    source_id: String,
}

impl fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageTensor")
            .field("source_id", &self.source_id)
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    /// Builds a tensor from planar data, rejecting non-finite or
    /// out-of-range values.
    pub fn new(
        source_id: impl Into<String>,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let source_id = source_id.into();
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image `{source_id}` has an empty dimension"
            )));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::ShapeMismatch(format!(
                "image `{source_id}`: {} values for shape (3, {height}, {width})",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image `{source_id}` ({v})")));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "image `{source_id}` has value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            data,
            height,
            width,
            source_id,
        })
    }

    /// Like [`ImageTensor::new`] but clamps into `[0, 1]` instead of
    /// rejecting. Non-finite values are still an error.
    pub fn from_clamped(
        source_id: impl Into<String>,
        height: usize,
        width: usize,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        for v in &mut data {
            if v.is_finite() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Self::new(source_id, height, width, data)
    }

    /// A constant image.
    pub fn filled(source_id: impl Into<String>, side: usize, value: f64) -> Result<Self> {
        Self::new(source_id, side, side, vec![value; Self::CHANNELS * side * side])
    }

    /// Builds a tensor from a single grayscale plane replicated into RGB.
    pub fn from_gray(
        source_id: impl Into<String>,
        height: usize,
        width: usize,
        plane: &[f64],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(plane);
        }
        Self::new(source_id, height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (Self::CHANNELS, self.height, self.width)
    }

    pub fn color_layout(&self) -> ColorLayout {
        ColorLayout::Rgb
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// One channel plane.
    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Same pixels under a different identifier.
    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    /// Maps every value, clamping the result into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_clamped(
            self.source_id.clone(),
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Mean absolute difference over all values.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        check_same_shape(self, other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Quantizes to 8-bit RGB.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let n = self.height * self.width;
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in out.pixels_mut().enumerate() {
            for c in 0..3 {
                px.0[c] = quantize_u8(self.data[c * n + i]);
            }
        }
        out
    }

    /// Converts an 8-bit RGB buffer without any geometric change.
    pub fn from_rgb8(source_id: impl Into<String>, img: &image::RgbImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let n = w * h;
        let mut data = vec![0.0; 3 * n];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = f64::from(px.0[c]) / 255.0;
            }
        }
        Self::new(source_id, h, w, data)
    }

    /// Writes an 8-bit PNG, creating parent directories as needed.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "`{}` is {:?} but `{}` is {:?}",
            a.source_id,
            a.shape(),
            b.source_id,
            b.shape()
        )));
    }
    Ok(())
}

/// A reference image `x` and its reconstruction `x̂`.
#[derive(Clone, Debug)]
pub struct ImagePair {
    reference: ImageTensor,
    reconstruction: ImageTensor,
}

impl ImagePair {
    pub fn new(reference: ImageTensor, reconstruction: ImageTensor) -> Result<Self> {
        if reference.source_id != reconstruction.source_id {
            return Err(Error::InvalidParameter(format!(
                "pair ids differ: `{}` vs `{}`",
                reference.source_id, reconstruction.source_id
            )));
        }
        check_same_shape(&reference, &reconstruction)?;
        Ok(Self {
            reference,
            reconstruction,
        })
    }

    pub fn reference(&self) -> &ImageTensor {
        &self.reference
    }

    pub fn reconstruction(&self) -> &ImageTensor {
        &self.reconstruction
    }

    pub fn source_id(&self) -> &str {
        &self.reference.source_id
    }

    /// Mean absolute reconstruction error over all channel values.
    pub fn mean_abs_error(&self) -> f64 {
        // shapes were checked on construction
        self.reference
            .mean_abs_diff(&self.reconstruction)
            .unwrap_or(f64::NAN)
    }
}

/// Geometric preprocessing applied on ingestion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Output side length; images are center-cropped to a square first.
    pub side: usize,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self { side: DEFAULT_SIDE }
    }
}

impl Preprocessing {
    /// Stable description used in cache keys and report metadata.
    pub fn stamp(&self) -> String {
        format!("center-crop+bilinear(half-pixel)@{}", self.side)
    }
}

/// Center crop to the largest square, then bilinear resize to `side`.
///
/// Sampling uses the half-pixel convention (corners not aligned):
/// `src = (dst + 0.5) * in / out - 0.5`, clamped to the valid range.
pub fn center_crop_resize(
    source_id: &str,
    img: &image::RgbImage,
    side: usize,
) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let s = w.min(h);
    if s == 0 {
        return Err(Error::ShapeMismatch(format!("`{source_id}` is empty")));
    }
    let x0 = (w - s) / 2;
    let y0 = (h - s) / 2;
    let raw = img.as_raw();
    let at = |c: usize, y: usize, x: usize| -> f64 {
        f64::from(raw[((y0 + y) * w + (x0 + x)) * 3 + c]) / 255.0
    };
    let n = side * side;
    let mut data = vec![0.0; 3 * n];
    if s == side {
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    data[c * n + y * side + x] = at(c, y, x);
                }
            }
        }
    } else {
        let scale = s as f64 / side as f64;
        let taps = |d: usize| -> (usize, usize, f64) {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(s - 1);
            (i0, i1, src - i0 as f64)
        };
        let cols: Vec<_> = (0..side).map(taps).collect();
        for y in 0..side {
            let (ya, yb, fy) = taps(y);
            for (x, &(xa, xb, fx)) in cols.iter().enumerate() {
                for c in 0..3 {
                    let top = at(c, ya, xa) * (1.0 - fx) + at(c, ya, xb) * fx;
                    let bottom = at(c, yb, xa) * (1.0 - fx) + at(c, yb, xb) * fx;
                    data[c * n + y * side + x] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
    }
    ImageTensor::from_clamped(source_id, side, side, data)
}

/// A file that could not be ingested.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFailure {
    pub path: PathBuf,
    pub message: String,
}

/// Result of [`load_dataset`].
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    /// Sorted by `source_id`.
    pub images: Vec<ImageTensor>,
    /// Files that failed to decode; the load continued without them.
    pub failures: Vec<FileFailure>,
    /// Path of each loaded image, parallel to `images`.
    pub paths: Vec<PathBuf>,
}

fn is_raster(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// The identifier of a file below `root`: its relative path without
/// extension, with `/` separators.
pub fn source_id_for(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let stem = rel.with_extension("");
    stem.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Lists raster files below `root` keyed by source id.
pub fn scan_dataset(root: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut files = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() && is_raster(entry.path()) {
            let id = source_id_for(root, entry.path());
            if files.insert(id.clone(), entry.path().to_path_buf()).is_some() {
                return Err(Error::DuplicateSourceId(id));
            }
        }
    }
    Ok(files)
}

/// Decodes one file into a canonical tensor.
pub fn load_image(path: &Path, source_id: &str, preprocessing: Preprocessing) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    center_crop_resize(source_id, &img.to_rgb8(), preprocessing.side)
}

/// Loads every PNG/JPEG below `root` (recursively), center-cropped and
/// resized to `preprocessing.side`, in lexicographic `source_id` order.
///
/// Undecodable files are collected in [`LoadedDataset::failures`]; an empty
/// directory (or one where nothing decodes) is an error.
pub fn load_dataset(root: &Path, preprocessing: Preprocessing) -> Result<LoadedDataset> {
    if preprocessing.side < MIN_SIDE {
        return Err(Error::InvalidParameter(format!(
            "side {} is below the minimum of {MIN_SIDE}",
            preprocessing.side
        )));
    }
    let files = scan_dataset(root)?;
    let decoded: Vec<(String, PathBuf, Result<ImageTensor>)> = files
        .into_par_iter()
        .map(|(id, path)| {
            let img = load_image(&path, &id, preprocessing);
            (id, path, img)
        })
        .collect();
    let mut images = Vec::new();
    let mut paths = Vec::new();
    let mut failures = Vec::new();
    for (_, path, result) in decoded {
        match result {
            Ok(img) => {
                images.push(img);
                paths.push(path);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                failures.push(FileFailure {
                    path,
                    message: e.to_string(),
                });
            }
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(LoadedDataset {
        images,
        failures,
        paths,
    })
}

/// Result of [`make_pairs`].
#[derive(Clone, Debug)]
pub struct Pairing {
    /// Ordered by source id.
    pub pairs: Vec<ImagePair>,
    pub unmatched_references: Vec<String>,
    pub unmatched_reconstructions: Vec<String>,
}

fn index_by_id(images: Vec<ImageTensor>) -> Result<BTreeMap<String, ImageTensor>> {
    let mut map = BTreeMap::new();
    for img in images {
        let id = img.source_id.clone();
        if map.insert(id.clone(), img).is_some() {
            return Err(Error::DuplicateSourceId(id));
        }
    }
    Ok(map)
}

/// Matches references with reconstructions by `source_id`.
pub fn make_pairs(references: Vec<ImageTensor>, reconstructions: Vec<ImageTensor>) -> Result<Pairing> {
    if references.is_empty() || reconstructions.is_empty() {
        return Err(Error::NoMatches);
    }
    let refs = index_by_id(references)?;
    let mut recons = index_by_id(reconstructions)?;
    let mut pairs = Vec::new();
    let mut unmatched_references = Vec::new();
    for (id, reference) in refs {
        match recons.remove(&id) {
            Some(recon) => pairs.push(ImagePair::new(reference, recon)?),
            None => unmatched_references.push(id),
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoMatches);
    }
    Ok(Pairing {
        pairs,
        unmatched_references,
        unmatched_reconstructions: recons.into_keys().collect(),
    })
}

/// One row of the pair manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub source_id: String,
    pub ref_path: String,
    pub recon_path: String,
}

/// Writes the pair manifest CSV (`source_id,ref_path,recon_path`), rows
/// sorted by source id.
pub fn write_pair_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_pair_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(id: &str, v: f64) -> ImageTensor {
        ImageTensor::filled(id, 4, v).unwrap()
    }

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(ImageTensor::new("a", 1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(ImageTensor::new("a", 1, 1, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(ImageTensor::new("a", 1, 2, vec![0.0; 3]).is_err());
        let c = ImageTensor::from_clamped("a", 1, 1, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(c.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn pairs_by_intersection() {
        let refs = vec![solid("a", 0.1), solid("b", 0.2), solid("c", 0.3)];
        let recons = vec![solid("d", 0.4), solid("c", 0.3), solid("b", 0.2)];
        let p = make_pairs(refs, recons).unwrap();
        let ids: Vec<_> = p.pairs.iter().map(|p| p.source_id().to_string()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!(p.unmatched_references, ["a"]);
        assert_eq!(p.unmatched_reconstructions, ["d"]);
    }

    #[test]
    fn identical_sequences_pair_fully() {
        let refs = vec![solid("x", 0.1), solid("y", 0.9)];
        let p = make_pairs(refs.clone(), refs).unwrap();
        assert_eq!(p.pairs.len(), 2);
        for pair in &p.pairs {
            assert_eq!(pair.reference(), pair.reconstruction());
        }
    }

    #[test]
    fn zero_matches_and_duplicates_are_fatal() {
        assert!(matches!(
            make_pairs(vec![solid("a", 0.0)], vec![solid("z", 0.0)]),
            Err(Error::NoMatches)
        ));
        assert!(matches!(
            make_pairs(vec![solid("a", 0.0), solid("a", 0.1)], vec![solid("a", 0.0)]),
            Err(Error::DuplicateSourceId(_))
        ));
    }

    #[test]
    fn pair_requires_equal_shape() {
        let a = ImageTensor::filled("a", 4, 0.0).unwrap();
        let b = ImageTensor::filled("a", 8, 0.0).unwrap();
        assert!(ImagePair::new(a, b).is_err());
    }

    #[test]
    fn crop_geometry_takes_central_square() {
        // 6x4 image: columns 0 and 5 are red, centre 4x4 is green.
        let mut img = image::RgbImage::new(6, 4);
        for (x, _, px) in img.enumerate_pixels_mut() {
            *px = if x == 0 || x == 5 {
                image::Rgb([255, 0, 0])
            } else {
                image::Rgb([0, 255, 0])
            };
        }
        let t = center_crop_resize("g", &img, 4).unwrap();
        assert!(t.plane(0).iter().all(|&v| v == 0.0));
        assert!(t.plane(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bilinear_downscale_of_checker_averages() {
        let mut img = image::RgbImage::new(4, 4);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let v = if (x + y) % 2 == 0 { 255 } else { 0 };
            *px = image::Rgb([v, v, v]);
        }
        // 4 -> 2: sample points fall exactly between source pixels.
        let t = center_crop_resize("c", &img, 2).unwrap();
        for &v in t.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn source_ids_use_relative_stems() {
        let root = Path::new("/data/val");
        assert_eq!(
            source_id_for(root, Path::new("/data/val/n01/img_1.JPEG")),
            "n01/img_1"
        );
    }
}
