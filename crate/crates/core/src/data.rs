//! Datasets: IDX and CSV ingestion plus seeded Gaussian blobs.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One row per instance.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset with every instance in the training split.
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dim(format!("row {i} has {} features, expected {dim}", row.len())));
            }
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::config(format!("row {i} contains NaN")));
            }
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(format!("label {bad} out of range for {num_classes} classes")));
        }
        let train = (0..features.len()).collect();
        Ok(Self {
            features,
            labels,
            num_classes,
            train,
            test: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Seeded random split; `test_fraction` of the instances go to the test set.
    pub fn split(mut self, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config(format!("test fraction must lie in [0, 1), got {test_fraction}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        self.test = idx[..n_test].to_vec();
        self.test.sort_unstable();
        self.train = idx[n_test..].to_vec();
        self.train.sort_unstable();
        Ok(self)
    }

    /// Rescales every feature column to `[0, 1]`; constant columns become 0.
    pub fn min_max_normalize(&mut self) {
        for c in 0..self.dim() {
            let (lo, hi) = self
                .features
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[c]), hi.max(r[c])));
            let span = hi - lo;
            for r in &mut self.features {
                r[c] = if span > 0.0 { (r[c] - lo) / span } else { 0.0 };
            }
        }
    }

    pub fn subset(&self, idx: &[usize]) -> (Vec<&[f64]>, Vec<usize>) {
        (
            idx.iter().map(|&i| self.features[i].as_slice()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn parse_err(source: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.display().to_string(),
        location,
        message: message.into(),
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            parse_err(
                path,
                format!("byte {offset}"),
                format!("expected 4 header bytes, file has {} bytes", bytes.len()),
            )
        })
}

/// Parses an IDX image file (magic `0x00000803`) into rows of pixel/255.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f64>>> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_err(
            path,
            "byte 0".into(),
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(bytes, 4, path)? as usize;
    let rows = read_u32_be(bytes, 8, path)? as usize;
    let cols = read_u32_be(bytes, 12, path)? as usize;
    let pixels = rows * cols;
    let expected = 16 + n * pixels;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            "byte 16".into(),
            format!("expected {expected} bytes for {n} images of {rows}x{cols}, found {}", bytes.len()),
        ));
    }
    Ok(bytes[16..]
        .chunks_exact(pixels.max(1))
        .take(n)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_err(
            path,
            "byte 0".into(),
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            "byte 8".into(),
            format!("expected {expected} bytes for {n} labels, found {}", bytes.len()),
        ));
    }
    Ok(bytes[8..].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX image/label pair. The class count is `max label + 1`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let features = parse_idx_images(&fs::read(images)?, images)?;
    let labels_v = parse_idx_labels(&fs::read(labels)?, labels)?;
    if features.len() != labels_v.len() {
        return Err(parse_err(
            labels,
            "byte 4".into(),
            format!("{} labels for {} images", labels_v.len(), features.len()),
        ));
    }
    let classes = labels_v.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels_v, classes)
}

/// Parses numeric CSV text. `label_column` holds the class index; every other
/// column is a feature.
pub fn parse_csv(text: &str, label_column: usize, has_header: bool, path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if label_column >= record.len() {
            return Err(parse_err(
                path,
                format!("line {line}"),
                format!("label column {label_column} missing ({} cells)", record.len()),
            ));
        }
        let mut row = Vec::with_capacity(record.len() - 1);
        for (c, cell) in record.iter().enumerate() {
            if c == label_column {
                let label: usize = cell.parse().map_err(|_| {
                    parse_err(path, format!("line {line}, column {c}"), format!("invalid class label {cell:?}"))
                })?;
                labels.push(label);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(path, format!("line {line}, column {c}"), format!("non-numeric cell {cell:?}"))
                })?;
                row.push(v);
            }
        }
        features.push(row);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, classes)
}

pub fn load_csv(path: &Path, label_column: usize, has_header: bool) -> Result<Dataset> {
    parse_csv(&fs::read_to_string(path)?, label_column, has_header, path)
}

/// Writes features followed by the label as the last column, no header.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for (row, label) in ds.features.iter().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Isotropic Gaussian clusters around class centers drawn uniformly in
/// `[0, 1]^dim`. Instances are ordered by class.
pub fn synth_blobs(classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::config("blob counts must all be at least 1"));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::config(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            features.push(center.iter().map(|&m| m + spread * noise.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    Dataset::new(features, labels, classes)
}
