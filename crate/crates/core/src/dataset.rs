//! Labeled datasets and their on-disk and synthetic sources.

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsflError};
use crate::model::InputShape;
use crate::rng::{self, Purpose};

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

/// Flat row-major samples with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub shape: InputShape,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, shape: InputShape, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(SsflError::invalid("a dataset needs at least two classes"));
        }
        if inputs.len() != labels.len() * shape.size() {
            return Err(SsflError::invalid(format!(
                "{} input values do not hold {} samples of size {}",
                inputs.len(),
                labels.len(),
                shape.size()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(SsflError::invalid(format!("label {bad} outside 0..{classes}")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(SsflError::invalid("dataset contains non-finite inputs"));
        }
        Ok(Self { inputs, labels, shape, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let size = self.shape.size();
        &self.inputs[i * size..(i + 1) * size]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    /// Copies the listed samples into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.shape.size());
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Dataset {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            classes: self.classes,
        }
    }
}

/// Train and test splits of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub test: Dataset,
}

fn default_cluster_std() -> f64 {
    1.0
}

fn default_center_std() -> f64 {
    1.0
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Gaussian clusters around random class centres; sample `i` has label
    /// `i mod classes`.
    SyntheticBlobs {
        classes: usize,
        dims: usize,
        samples: usize,
        test_samples: usize,
        seed: u64,
        #[serde(default = "default_center_std")]
        center_std: f64,
        #[serde(default = "default_cluster_std")]
        cluster_std: f64,
    },
    /// Concentric 2-d rings, class `c` at radius `c + 1`.
    SyntheticRings {
        classes: usize,
        samples: usize,
        test_samples: usize,
        seed: u64,
        noise: f64,
    },
    /// IDX-format image and label files, pixels scaled to `[0, 1]`.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
    /// Numeric CSV with a header row; all columns but the label are features.
    Csv {
        path: PathBuf,
        label_column: String,
        classes: usize,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSource {
    /// Seed of synthetic sources, if any.
    pub fn seed_mut(&mut self) -> Option<&mut u64> {
        match self {
            DatasetSource::SyntheticBlobs { seed, .. }
            | DatasetSource::SyntheticRings { seed, .. }
            | DatasetSource::Csv { seed, .. } => Some(seed),
            DatasetSource::Idx { .. } => None,
        }
    }
}

/// Loads or generates a dataset. Relative paths resolve against `base_dir`.
pub fn load_dataset(source: &DatasetSource, base_dir: &Path) -> Result<DataSplits> {
    match source {
        &DatasetSource::SyntheticBlobs { classes, dims, samples, test_samples, seed, center_std, cluster_std } => {
            synthetic_blobs(classes, dims, samples, test_samples, seed, center_std, cluster_std)
        }
        &DatasetSource::SyntheticRings { classes, samples, test_samples, seed, noise } => {
            synthetic_rings(classes, samples, test_samples, seed, noise)
        }
        DatasetSource::Idx { train_images, train_labels, test_images, test_labels, classes } => {
            let train = read_idx_pair(&base_dir.join(train_images), &base_dir.join(train_labels), *classes)?;
            let test = read_idx_pair(&base_dir.join(test_images), &base_dir.join(test_labels), Some(train.classes))?;
            Ok(DataSplits { train, test })
        }
        DatasetSource::Csv { path, label_column, classes, test_fraction, seed } => {
            read_csv(&base_dir.join(path), label_column, *classes, *test_fraction, *seed)
        }
    }
}

fn check_synthetic(classes: usize, samples: usize, test_samples: usize) -> Result<()> {
    if classes < 2 || samples == 0 || test_samples == 0 {
        return Err(SsflError::invalid("synthetic data needs two classes and non-empty splits"));
    }
    Ok(())
}

pub fn synthetic_blobs(
    classes: usize,
    dims: usize,
    samples: usize,
    test_samples: usize,
    seed: u64,
    center_std: f64,
    cluster_std: f64,
) -> Result<DataSplits> {
    check_synthetic(classes, samples, test_samples)?;
    if dims == 0 || !(center_std >= 0.0 && cluster_std >= 0.0) {
        return Err(SsflError::invalid("blobs need positive dims and non-negative spreads"));
    }
    let mut r = rng::stream(seed, Purpose::Dataset, &[0]);
    let centers: Vec<f64> = (0..classes * dims).map(|_| center_std * r.sample::<f64, _>(StandardNormal)).collect();
    let split = |n: usize, key: u64| -> Result<Dataset> {
        let mut r = rng::stream(seed, Purpose::Dataset, &[key]);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let mut inputs = Vec::with_capacity(n * dims);
        for &c in &labels {
            for d in 0..dims {
                inputs.push(centers[c * dims + d] + cluster_std * r.sample::<f64, _>(StandardNormal));
            }
        }
        Dataset::new(inputs, labels, InputShape::Vector { len: dims }, classes)
    };
    Ok(DataSplits { train: split(samples, 1)?, test: split(test_samples, 2)? })
}

pub fn synthetic_rings(classes: usize, samples: usize, test_samples: usize, seed: u64, noise: f64) -> Result<DataSplits> {
    check_synthetic(classes, samples, test_samples)?;
    if !(noise >= 0.0) {
        return Err(SsflError::invalid("ring noise must be non-negative"));
    }
    let split = |n: usize, key: u64| -> Result<Dataset> {
        let mut r = rng::stream(seed, Purpose::Dataset, &[key]);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let mut inputs = Vec::with_capacity(2 * n);
        for &c in &labels {
            let angle = r.random_range(0.0..std::f64::consts::TAU);
            let radius = (c + 1) as f64 + noise * r.sample::<f64, _>(StandardNormal);
            inputs.push(radius * angle.cos());
            inputs.push(radius * angle.sin());
        }
        Dataset::new(inputs, labels, InputShape::Vector { len: 2 }, classes)
    };
    Ok(DataSplits { train: split(samples, 1)?, test: split(test_samples, 2)? })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| SsflError::io(path, e))?;
    Ok(buf)
}

/// Parses an IDX header, returning the dimensions and the payload.
fn parse_idx<'a>(bytes: &'a [u8], magic: u32, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    let bad = |msg: &str| SsflError::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 4 {
        return Err(bad("truncated header"));
    }
    let found = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if found != magic {
        return Err(bad(&format!("magic {found}, expected {magic}")));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated dimensions"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    if bytes.len() - header != expected {
        return Err(bad(&format!("payload has {} bytes, header implies {expected}", bytes.len() - header)));
    }
    Ok((dims, &bytes[header..]))
}

pub fn read_idx_pair(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    let image_bytes = read_file(images)?;
    let label_bytes = read_file(labels)?;
    let (idims, pixels) = parse_idx(&image_bytes, IDX_IMAGES_MAGIC, images)?;
    let (ldims, raw_labels) = parse_idx(&label_bytes, IDX_LABELS_MAGIC, labels)?;
    if idims.len() != 3 || ldims.len() != 1 || idims[0] != ldims[0] {
        return Err(SsflError::Format(format!(
            "image dims {idims:?} and label dims {ldims:?} do not describe the same samples"
        )));
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    let inputs = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(inputs, labels, InputShape::Image { channels: 1, height: idims[1], width: idims[2] }, classes)
}

/// Writes an IDX image/label pair; used to produce fixtures.
pub fn write_idx_pair(images: &Path, labels: &Path, pixels: &[u8], label_bytes: &[u8], height: usize, width: usize) -> Result<()> {
    let n = label_bytes.len();
    if pixels.len() != n * height * width {
        return Err(SsflError::invalid("pixel count does not match labels and image size"));
    }
    let mut img = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, height, width] {
        img.extend((d as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    lab.extend((n as u32).to_be_bytes());
    lab.extend_from_slice(label_bytes);
    std::fs::write(images, img).map_err(|e| SsflError::io(images, e))?;
    std::fs::write(labels, lab).map_err(|e| SsflError::io(labels, e))?;
    Ok(())
}

fn read_csv(path: &Path, label_column: &str, classes: usize, test_fraction: f64, seed: u64) -> Result<DataSplits> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(SsflError::invalid("test fraction must lie in (0, 1)"));
    }
    let file = std::fs::File::open(path).map_err(|e| SsflError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(|e| SsflError::Format(e.to_string()))?.clone();
    let label_at = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| SsflError::invalid(format!("no column named {label_column}")))?;
    let features = headers.len() - 1;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SsflError::Format(e.to_string()))?;
        for (col, field) in record.iter().enumerate() {
            if col == label_at {
                let label: usize = field
                    .trim()
                    .parse()
                    .map_err(|_| SsflError::invalid(format!("row {}: label {field:?} is not a class index", row + 1)))?;
                labels.push(label);
            } else {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| SsflError::invalid(format!("row {}: {field:?} is not a number", row + 1)))?;
                inputs.push(v);
            }
        }
    }
    let all = Dataset::new(inputs, labels, InputShape::Vector { len: features }, classes)?;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::Split, &[]));
    let n_test = ((all.len() as f64 * test_fraction).round() as usize).clamp(1, all.len().saturating_sub(1).max(1));
    let (test, train) = order.split_at(n_test);
    if train.is_empty() {
        return Err(SsflError::invalid("CSV too small to split"));
    }
    Ok(DataSplits { train: all.subset(train), test: all.subset(test) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = synthetic_blobs(4, 3, 100, 20, 7, 1.0, 0.5).unwrap();
        let b = synthetic_blobs(4, 3, 100, 20, 7, 1.0, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.class_counts(), vec![25; 4]);
        assert_eq!(a.test.len(), 20);
        assert_ne!(a.train.inputs, synthetic_blobs(4, 3, 100, 20, 8, 1.0, 0.5).unwrap().train.inputs);
    }

    #[test]
    fn rings_have_expected_radius() {
        let d = synthetic_rings(3, 30, 3, 1, 0.0).unwrap();
        for i in 0..d.train.len() {
            let x = d.train.sample(i);
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            assert!((r - (d.train.labels[i] + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn idx_roundtrip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        let pixels: Vec<u8> = (0..3 * 2 * 2).map(|i| (i * 20) as u8).collect();
        write_idx_pair(&img, &lab, &pixels, &[0, 1, 2], 2, 2).unwrap();
        let d = read_idx_pair(&img, &lab, None).unwrap();
        assert_eq!(d.classes, 3);
        assert_eq!(d.shape, InputShape::Image { channels: 1, height: 2, width: 2 });
        assert_eq!(d.sample(1), &[80.0 / 255.0, 100.0 / 255.0, 120.0 / 255.0, 140.0 / 255.0]);
        assert!(matches!(read_idx_pair(&lab, &img, None), Err(SsflError::Format(_))));
        let missing = dir.path().join("nope");
        assert!(matches!(read_idx_pair(&missing, &lab, None), Err(SsflError::Io { .. })));
    }

    #[test]
    fn csv_loading_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut text = String::from("a,label,b\n");
        for i in 0..10 {
            text.push_str(&format!("{},{},{}\n", i, i % 2, -(i as f64)));
        }
        std::fs::write(&path, &text).unwrap();
        let s = read_csv(&path, "label", 2, 0.2, 0).unwrap();
        assert_eq!(s.train.len() + s.test.len(), 10);
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.train.shape, InputShape::Vector { len: 2 });
        for i in 0..s.train.len() {
            let x = s.train.sample(i);
            assert_eq!(x[1], -x[0]);
            assert_eq!(s.train.labels[i], x[0] as usize % 2);
        }
        std::fs::write(&path, "a,label\n1,x\n").unwrap();
        assert!(matches!(read_csv(&path, "label", 2, 0.2, 0), Err(SsflError::InvalidInput(_))));
        std::fs::write(&path, "a,label\n1,5\n2,0\n").unwrap();
        assert!(read_csv(&path, "label", 2, 0.2, 0).is_err());
    }

    #[test]
    fn source_parses_from_toml() {
        let src: DatasetSource = toml::from_str(
            "kind = \"synthetic_blobs\"\nclasses = 10\ndims = 16\nsamples = 1000\ntest_samples = 100\nseed = 3\n",
        )
        .unwrap();
        assert!(matches!(src, DatasetSource::SyntheticBlobs { cluster_std, .. } if cluster_std == 1.0));
    }
}
