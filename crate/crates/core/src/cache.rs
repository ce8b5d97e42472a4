//! Content-addressed store for per-image features and condition maps.
//!
//! An entry is keyed by `sha256(extractor id, source id, preprocessing
//! stamp)` and stored as `<root>/<k[0..2]>/<k>.bin`: a 32-byte sha256 of the
//! body followed by the body (two little-endian `u64` dims and the `f64`
//! values). Entries are written to a temporary file and renamed into place,
//! so readers never see partial writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::metrics::FeatureExtractor;
use crate::projectors::{Comparison, ConditionMap, Projector, ProjectorKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    /// Entries that failed their checksum and were recomputed.
    pub corrupt: usize,
}

#[derive(Debug)]
pub struct FeatureCache {
    root: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
    corrupt: AtomicUsize,
}

/// Decoded entry: `(height, width)` (`(0, len)` for vectors) and values.
type Entry = ((usize, usize), Vec<f64>);

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            corrupt: AtomicUsize::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            corrupt: self.corrupt.load(Ordering::Relaxed),
        }
    }

    pub fn key(extractor_id: &str, source_id: &str, preprocessing: &str) -> String {
        let mut h = Sha256::new();
        for part in [extractor_id, source_id, preprocessing] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.bin"))
    }

    fn read(&self, path: &Path) -> Option<std::result::Result<Entry, String>> {
        let bytes = fs::read(path).ok()?;
        Some(decode(&bytes))
    }

    fn write(&self, path: &Path, dims: (usize, usize), values: &[f64]) -> Result<()> {
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut body = Vec::with_capacity(16 + 8 * values.len());
        body.extend((dims.0 as u64).to_le_bytes());
        body.extend((dims.1 as u64).to_le_bytes());
        for v in values {
            body.extend(v.to_le_bytes());
        }
        let mut tmp = tempfile_in(dir)?;
        tmp.1.write_all(&Sha256::digest(&body)).map_err(|e| Error::io(&tmp.0, e))?;
        tmp.1.write_all(&body).map_err(|e| Error::io(&tmp.0, e))?;
        drop(tmp.1);
        fs::rename(&tmp.0, path).map_err(|e| Error::io(path, e))
    }

    fn get_or_compute_entry(&self, key: &str, compute: impl FnOnce() -> Result<Entry>) -> Result<Entry> {
        let path = self.entry_path(key);
        match self.read(&path) {
            Some(Ok(entry)) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(entry);
            }
            Some(Err(why)) => {
                log::warn!("cache entry {} is corrupt ({why}); recomputing", path.display());
                self.corrupt.fetch_add(1, Ordering::Relaxed);
            }
            None => {}
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let (dims, values) = compute()?;
        self.write(&path, dims, &values)?;
        Ok((dims, values))
    }

    /// Cached feature vector; `compute` runs only on a miss or a corrupt
    /// entry.
    pub fn get_or_compute(
        &self,
        extractor_id: &str,
        source_id: &str,
        preprocessing: &str,
        compute: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let key = Self::key(extractor_id, source_id, preprocessing);
        let (_, values) = self.get_or_compute_entry(&key, || compute().map(|v| ((0, v.len()), v)))?;
        Ok(values)
    }
}

/// Unique temporary file next to the final entry.
fn tempfile_in(dir: &Path) -> Result<(PathBuf, fs::File)> {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, file))
}

fn decode(bytes: &[u8]) -> std::result::Result<Entry, String> {
    if bytes.len() < 48 {
        return Err(format!("{} bytes is too short", bytes.len()));
    }
    let (digest, body) = bytes.split_at(32);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch".into());
    }
    let word = |i: usize| u64::from_le_bytes(body[8 * i..8 * i + 8].try_into().unwrap()) as usize;
    let (h, w) = (word(0), word(1));
    let n = (body.len() - 16) / 8;
    if (body.len() - 16) % 8 != 0 || n != if h == 0 { w } else { h * w } {
        return Err("length disagrees with header".into());
    }
    let values = body[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(((h, w), values))
}

/// Features of every image in order, served from `cache` when possible.
pub fn cache_features(
    images: &[ImageTensor],
    extractor: &dyn FeatureExtractor,
    cache: &FeatureCache,
    preprocessing: &str,
) -> Result<Vec<Vec<f64>>> {
    let id = extractor.id();
    images
        .par_iter()
        .map(|img| cache.get_or_compute(&id, img.source_id(), preprocessing, || extractor.extract(img)))
        .collect()
}

/// A projector whose outputs are memoized in a [`FeatureCache`], keyed by
/// the wrapped projector's stamp.
pub struct CachedProjector<'a> {
    inner: &'a dyn Projector,
    cache: &'a FeatureCache,
    preprocessing: String,
}

impl<'a> CachedProjector<'a> {
    pub fn new(inner: &'a dyn Projector, cache: &'a FeatureCache, preprocessing: impl Into<String>) -> Self {
        Self {
            inner,
            cache,
            preprocessing: preprocessing.into(),
        }
    }
}

impl Projector for CachedProjector<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn kind(&self) -> ProjectorKind {
        self.inner.kind()
    }

    fn comparison(&self) -> Comparison {
        self.inner.comparison()
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.inner.lipschitz_bound()
    }

    fn stamp(&self) -> String {
        self.inner.stamp()
    }

    /// Reconstructions share source ids with their references, so the
    /// content digest of the image is part of the key.
    fn apply(&self, image: &ImageTensor) -> Result<ConditionMap> {
        let mut h = Sha256::new();
        for v in image.data() {
            h.update(v.to_le_bytes());
        }
        let content = format!("{}#{}", image.source_id(), hex::encode(h.finalize()));
        let key = FeatureCache::key(&self.inner.stamp(), &content, &self.preprocessing);
        let ((height, width), values) = self.cache.get_or_compute_entry(&key, || {
            let map = self.inner.apply(image)?;
            Ok((map.dims().unwrap_or((0, map.values().len())), map.values().to_vec()))
        })?;
        if height == 0 {
            Ok(ConditionMap::vector(self.inner.name(), values))
        } else {
            ConditionMap::spatial(self.inner.name(), height, width, values)
        }
    }
}
