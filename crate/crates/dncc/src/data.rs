//! Dataset ingestion, synthesis, splitting, and batch iteration.
//!
//! Loaders: IDX (big-endian, magic-checked, pixels scaled to [0,1]) and
//! headered numeric CSV. [`synth_blobs`] generates seeded Gaussian clusters
//! as a stand-in for image data at desk scale. Splits are stratified 4:1 and
//! batch order is a pure function of (seed, epoch), so training runs are
//! replayable from their configuration alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A fixed classification dataset: row-major features and integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    num_features: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, num_features: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Contract("dataset needs at least one sample".into()));
        }
        if num_features == 0 || features.len() != labels.len() * num_features {
            return Err(Error::Dimension(format!(
                "{} feature values for {} samples of width {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Contract(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(i) = labels.iter().position(|&y| y >= num_classes) {
            return Err(Error::Contract(format!(
                "label {} at row {i} outside [0, {num_classes})",
                labels[i]
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature value at index {i}")));
        }
        Ok(Dataset { features, num_features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    /// Copy of the rows at `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch { features, labels, num_features: self.num_features }
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        let b = self.gather(indices);
        Dataset {
            features: b.features,
            num_features: self.num_features,
            labels: b.labels,
            num_classes: self.num_classes,
        }
    }
}

/// A contiguous slice of samples handed to the model.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub num_features: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

// ---- IDX -------------------------------------------------------------------

struct IdxCursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> IdxCursor<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        if self.offset + 4 > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte offset {}",
                self.offset
            )));
        }
        let v = u32::from_be_bytes(self.bytes[self.offset..self.offset + 4].try_into().unwrap());
        self.offset += 4;
        Ok(v)
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte offset {}",
                self.offset
            )));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }
}

/// Load an IDX image/label file pair (the MNIST container format).
///
/// Pixels are scaled to [0,1]; each image is flattened row-major, so
/// `D = rows * cols`. The class count is inferred as `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let mut cur = IdxCursor { bytes: &image_bytes, offset: 0 };
    let magic = cur.u32_be("image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x} at byte offset 0 (expected {IDX_IMAGES_MAGIC:#010x})"
        )));
    }
    let count = cur.u32_be("image count")? as usize;
    let rows = cur.u32_be("row count")? as usize;
    let cols = cur.u32_be("column count")? as usize;
    let pixels = cur.bytes(count * rows * cols, "pixel data")?;
    if cur.offset != image_bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after pixel data at byte offset {}",
            image_bytes.len() - cur.offset,
            cur.offset
        )));
    }

    let label_bytes = std::fs::read(labels_path)?;
    let mut cur = IdxCursor { bytes: &label_bytes, offset: 0 };
    let magic = cur.u32_be("label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x} at byte offset 0 (expected {IDX_LABELS_MAGIC:#010x})"
        )));
    }
    let label_count = cur.u32_be("label count")? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "label count {label_count} does not match image count {count} at byte offset 4"
        )));
    }
    let raw_labels = cur.bytes(count, "label data")?;

    let features: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, rows * cols, labels, num_classes.max(2))
}

// ---- CSV -------------------------------------------------------------------

/// Load a rectangular numeric CSV with a header row.
///
/// All columns except `label_column` become features, in header order; the
/// label column must hold non-negative integers.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::Config(format!(
                "label column {label_column:?} not found in header {:?}",
                headers.iter().collect::<Vec<_>>()
            ))
        })?;
    let num_features = headers.len().saturating_sub(1);
    if num_features == 0 {
        return Err(Error::Format("csv has no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_else(|| "?".into());
            Error::Format(format!("line {line}: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                let y: usize = cell.trim().parse().map_err(|_| {
                    Error::Format(format!(
                        "line {line}: label {cell:?} is not a non-negative integer"
                    ))
                })?;
                labels.push(y);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::Format(format!("line {line}: non-numeric cell {cell:?}"))
                })?;
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Format("csv has a header but no data rows".into()));
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, num_features, labels, num_classes.max(2))
}

// ---- synthetic blobs ---------------------------------------------------------

/// K isotropic Gaussian clusters with unit-norm random centers scaled by 3.
///
/// Samples are ordered class-major (all of class 0 first). Fully determined
/// by the seed.
pub fn synth_blobs(seed: u64, num_classes: usize, per_class_n: usize, dim: usize, spread: f64) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Contract(format!("need K >= 2 classes, got {num_classes}")));
    }
    if dim < 2 {
        return Err(Error::Contract(format!("need D >= 2 dimensions, got {dim}")));
    }
    if per_class_n == 0 {
        return Err(Error::Contract("need at least one sample per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut c: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut c {
            *v = *v / norm * 3.0;
        }
        centers.push(c);
    }
    let n = num_classes * per_class_n;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..per_class_n {
            for &c in center {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(c + spread * noise);
            }
            labels.push(k);
        }
    }
    Dataset::new(features, dim, labels, num_classes)
}

// ---- splitting ---------------------------------------------------------------

/// Result of a 4:1 split. `stratified` is false when some class had fewer
/// than 5 samples and the split fell back to a plain shuffle.
#[derive(Debug)]
pub struct SplitResult {
    pub train: Dataset,
    pub val: Dataset,
    pub stratified: bool,
}

/// Deterministic 4:1 train/validation partition, stratified per class when
/// every class has at least 5 samples.
pub fn train_val_split(ds: &Dataset, seed: u64) -> Result<SplitResult> {
    if ds.len() < 5 {
        return Err(Error::Contract(format!("need at least 5 samples to split 4:1, got {}", ds.len())));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, &y) in ds.labels().iter().enumerate() {
        per_class[y].push(i);
    }
    let stratified = per_class.iter().all(|ix| ix.is_empty() || ix.len() >= 5);

    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    if stratified {
        for (k, indices) in per_class.iter().enumerate() {
            if indices.is_empty() {
                continue;
            }
            let mut shuffled = indices.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, k as u64)));
            let val_n = shuffled.len() / 5;
            val_idx.extend_from_slice(&shuffled[..val_n]);
            train_idx.extend_from_slice(&shuffled[val_n..]);
        }
    } else {
        let mut shuffled: Vec<usize> = (0..ds.len()).collect();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, u64::MAX)));
        let val_n = shuffled.len() / 5;
        val_idx.extend_from_slice(&shuffled[..val_n]);
        train_idx.extend_from_slice(&shuffled[val_n..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok(SplitResult {
        train: ds.subset(&train_idx),
        val: ds.subset(&val_idx),
        stratified,
    })
}

/// splitmix64-style mixer; derives independent seeded streams from one seed.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---- batching ----------------------------------------------------------------

/// Seeded epoch-wise batch iteration.
///
/// Each epoch visits every sample exactly once; the permutation is a pure
/// function of (seed, epoch), so epoch 3 of a resumed run equals epoch 3 of an
/// uninterrupted one.
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Contract("batch size must be positive".into()));
        }
        Ok(BatchIterator { dataset, batch_size, seed })
    }

    /// Shuffled sample order for one epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.seed, epoch as u64 + 1)));
        order
    }

    /// Batches for one epoch, in order. The last batch may be short.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Batch> {
        let order = self.epoch_order(epoch);
        order
            .chunks(self.batch_size)
            .map(|chunk| self.dataset.gather(chunk))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod idx_fixture {
    //! Reference IDX writer used by loader tests.

    pub fn write_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        assert_eq!(pixels.len(), (count * rows * cols) as usize);
        let mut out = Vec::new();
        out.extend_from_slice(&super::IDX_IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&count.to_be_bytes());
        out.extend_from_slice(&rows.to_be_bytes());
        out.extend_from_slice(&cols.to_be_bytes());
        out.extend_from_slice(pixels);
        out
    }

    pub fn write_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&super::IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }
}
