//! Image classification datasets: the CIFAR-10 binary distribution, seeded
//! subsets, and synthetic Gaussian blobs for quick runs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_PIXELS: usize = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;

pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N × C × H × W`
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, name: impl Into<String>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample image shape `[C, H, W]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Images and labels for the given sample indices, in order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.gather_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            images,
            labels,
            classes: self.classes,
            name: self.name.clone(),
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn standardize(byte: u8, channel: usize) -> f64 {
    (byte as f64 / 255.0 - CIFAR_MEAN[channel]) / CIFAR_STD[channel]
}

/// Inverse of the per-channel standardization, back to a pixel byte.
pub fn destandardize(value: f64, channel: usize) -> u8 {
    ((value * CIFAR_STD[channel] + CIFAR_MEAN[channel]) * 255.0)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Parses CIFAR-10 binary records (label byte + 3072 channel-major pixels).
/// `source` only labels error messages.
pub fn parse_cifar_records(bytes: &[u8], source: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let io_err = |message: String| Error::Io {
        path: source.to_path_buf(),
        message,
    };
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let full = bytes.len() / CIFAR_RECORD;
        return Err(io_err(format!(
            "record {full} at offset {} incomplete: {} of {CIFAR_RECORD} bytes",
            full * CIFAR_RECORD,
            bytes.len() % CIFAR_RECORD
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0];
        if label as usize >= CIFAR_CLASSES {
            return Err(io_err(format!(
                "label byte {label} at offset {} out of range",
                r * CIFAR_RECORD
            )));
        }
        labels.push(label as usize);
        let plane = CIFAR_SIDE * CIFAR_SIDE;
        pixels.extend(
            record[1..]
                .iter()
                .enumerate()
                .map(|(i, &b)| standardize(b, i / plane)),
        );
    }
    Ok((labels, pixels))
}

/// Serializes sample `i` back into the 3073-byte record layout.
pub fn cifar_record_bytes(dataset: &Dataset, i: usize) -> Vec<u8> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(CIFAR_RECORD);
    out.push(dataset.labels[i] as u8);
    out.extend(
        dataset
            .images
            .row(i)
            .iter()
            .enumerate()
            .map(|(j, &v)| destandardize(v, j / plane)),
    );
    out
}

fn read_cifar_files(dir: &Path, files: &[&str], name: &str) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for file in files {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(|e| Error::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let (l, p) = parse_cifar_records(&bytes, &path)?;
        labels.extend(l);
        pixels.extend(p);
    }
    let n = labels.len();
    let images = Tensor::new(vec![n, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE], pixels)?;
    Dataset::new(images, labels, CIFAR_CLASSES, name)
}

/// Directory actually holding the batch files: `dir` itself or the
/// `cifar-10-batches-bin` folder the archive extracts to.
pub fn resolve_cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(CIFAR_TEST_FILE).exists() && nested.join(CIFAR_TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads the five training batches and the test batch.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = resolve_cifar_dir(dir);
    let train = read_cifar_files(&dir, &CIFAR_TRAIN_FILES, "cifar10-train")?;
    let test = read_cifar_files(&dir, &[CIFAR_TEST_FILE], "cifar10-test")?;
    Ok((train, test))
}

/// Uniform sample of `n` items without replacement, in draw order.
pub fn subset<R: Rng + ?Sized>(dataset: &Dataset, n: usize, rng: &mut R) -> Result<Dataset> {
    if n > dataset.len() {
        return Err(Error::Input(format!(
            "subset of {n} requested from {} samples",
            dataset.len()
        )));
    }
    let picked = index::sample(rng, dataset.len(), n).into_vec();
    Ok(dataset.select(&picked))
}

/// Gaussian blobs: class `c` images are a fixed random template plus
/// `spread`-scaled standard normal noise. Samples cycle through the classes.
pub fn synthetic_blobs<R: Rng + ?Sized>(
    n_classes: usize,
    n_per_class: usize,
    image_side: usize,
    channels: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n_classes == 0 || image_side == 0 || channels == 0 {
        return Err(Error::Input("synthetic dataset sizes must be positive".into()));
    }
    let pixels = channels * image_side * image_side;
    let templates: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..pixels).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let n = n_classes * n_per_class;
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (c, template) in templates.iter().enumerate() {
            labels.push(c);
            data.extend(
                template
                    .iter()
                    .map(|&t| t + spread * rng.sample::<f64, _>(StandardNormal)),
            );
        }
    }
    let images = Tensor::new(vec![n, channels, image_side, image_side], data)?;
    Dataset::new(images, labels, n_classes, "synthetic-blobs")
}
