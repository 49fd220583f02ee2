//! Dataset ingestion and sampling.
//!
//! Two on-disk layouts are read:
//!
//! - IDX (Fashion-MNIST): big-endian `u32` magic `0x00000803` for images and
//!   `0x00000801` for labels, then big-endian `u32` dims, then raw bytes.
//!   Files may be gzip-wrapped; gzip is detected from the first two bytes.
//! - CIFAR-10 binary: 3073-byte records, one label byte followed by the
//!   1024-byte R, G and B planes of a 32×32 image.
//!
//! Pixels are mapped to `byte / 255.0`. CIFAR images keep their plane
//! layout, so an input row is `[3, 32, 32]` in row-major order.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const CLASS_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const CIFAR: ImageShape = ImageShape {
        channels: 3,
        height: 32,
        width: 32,
    };

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `[n, input_dim]`.
    inputs: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
    image: ImageShape,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        labels: Vec<usize>,
        image: ImageShape,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        let input_dim = image.len();
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::Shape(format!(
                "{} labels need {} input values, got {}",
                labels.len(),
                labels.len() * input_dim,
                inputs.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            inputs,
            input_dim,
            labels,
            class_count,
            split,
            image,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Copies the rows at `indices` into a new dataset, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        Dataset {
            inputs,
            input_dim: self.input_dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split: self.split,
            image: self.image,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

pub fn one_hot(label: usize, classes: usize) -> Result<Tensor> {
    if label >= classes {
        return Err(Error::Input(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    Tensor::vector(v)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_error(path, offset, "file ends inside the header"))
}

/// Loads an IDX image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_error(images_path, 0, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(format_error(images_path, 8, format!("bad image dims {rows}x{cols}")));
    }
    let body = &images[16..];
    if body.len() != count * rows * cols {
        return Err(format_error(
            images_path,
            16 + body.len().min(count * rows * cols),
            format!(
                "expected {} pixel bytes for {count} images, found {}",
                count * rows * cols,
                body.len()
            ),
        ));
    }

    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_error(labels_path, 0, format!("bad label magic {magic:#010x}")));
    }
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    if label_count != count {
        return Err(format_error(
            labels_path,
            4,
            format!("{label_count} labels for {count} images"),
        ));
    }
    let label_body = &labels[8..];
    if label_body.len() != count {
        return Err(format_error(
            labels_path,
            8 + label_body.len().min(count),
            format!("expected {count} label bytes, found {}", label_body.len()),
        ));
    }
    if let Some(pos) = label_body.iter().position(|&l| l as usize >= CLASS_COUNT) {
        return Err(format_error(
            labels_path,
            8 + pos,
            format!("label {} >= 10", label_body[pos]),
        ));
    }

    let shape = ImageShape {
        channels: 1,
        height: rows,
        width: cols,
    };
    Dataset::new(
        body.iter().map(|&b| b as f64 / 255.0).collect(),
        label_body.iter().map(|&l| l as usize).collect(),
        shape,
        CLASS_COUNT,
        split,
    )
}

/// Loads and concatenates CIFAR-10 binary batch files in the given order.
pub fn load_cifar10_bin(paths: &[PathBuf], split: Split) -> Result<Dataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            let whole = bytes.len() / CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES;
            return Err(format_error(
                path,
                whole,
                format!("size {} is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
            ));
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            if record[0] as usize >= CLASS_COUNT {
                return Err(format_error(
                    path,
                    r * CIFAR_RECORD_BYTES,
                    format!("label {} >= 10", record[0]),
                ));
            }
            labels.push(record[0] as usize);
            inputs.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    Dataset::new(inputs, labels, ImageShape::CIFAR, CLASS_COUNT, split)
}

/// IDX image and label file contents for `n` images of `rows × cols` bytes.
pub fn encode_idx(pixels: &[u8], labels: &[u8], rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    assert_eq!(pixels.len(), n * rows * cols);
    let mut images = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (images, lab)
}

/// CIFAR-10 binary contents for `(label, 3072 plane-ordered pixels)` records.
pub fn encode_cifar10(records: &[(u8, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for (label, pixels) in records {
        assert_eq!(pixels.len(), CIFAR_RECORD_BYTES - 1);
        out.push(*label);
        out.extend_from_slice(pixels);
    }
    out
}

/// `count` rows drawn uniformly without replacement, kept in their original
/// order.
pub fn subsample_count<R: Rng + ?Sized>(dataset: &Dataset, count: usize, rng: &mut R) -> Result<Dataset> {
    if count > dataset.len() {
        return Err(Error::Config(format!(
            "cannot draw {count} samples from a dataset of {}",
            dataset.len()
        )));
    }
    if count == dataset.len() {
        return Ok(dataset.clone());
    }
    let mut picked = rand::seq::index::sample(rng, dataset.len(), count).into_vec();
    picked.sort_unstable();
    Ok(dataset.select(&picked))
}

/// `floor(ratio · n)` rows drawn uniformly without replacement.
pub fn subsample<R: Rng + ?Sized>(dataset: &Dataset, ratio: f64, rng: &mut R) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!(
            "subsample ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let count = (ratio * dataset.len() as f64).floor() as usize;
    subsample_count(dataset, count, rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub indices: Vec<usize>,
}

impl MiniBatch {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// One epoch of mini-batches: a fresh uniform shuffle of `0..n` cut into
/// consecutive batches. The final short batch is kept.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<MiniBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|c| MiniBatch { indices: c.to_vec() })
        .collect())
}

/// Zero-pads `pad` pixels on every side, crops the `height × width` window at
/// `(top, left)` of the padded image, then optionally mirrors horizontally.
pub fn pad_crop_flip(image: &[f64], shape: ImageShape, pad: usize, top: usize, left: usize, flip: bool) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    assert!(top <= 2 * pad && left <= 2 * pad);
    let mut out = vec![0.0; shape.len()];
    for c in 0..shape.channels {
        let plane = &image[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let sy = (y + top) as isize - pad as isize;
            for x in 0..w {
                let ox = if flip { w - 1 - x } else { x };
                let sx = (ox + left) as isize - pad as isize;
                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    out[c * h * w + y * w + x] = plane[sy as usize * w + sx as usize];
                }
            }
        }
    }
    out
}

/// Pad-4 random crop plus a horizontal flip with probability 1/2, on a
/// `[3, 32, 32]` image.
pub fn augment_pad_crop_flip<R: Rng + ?Sized>(image: &Tensor, rng: &mut R) -> Result<Tensor> {
    let shape = ImageShape::CIFAR;
    if image.dims() != [shape.channels, shape.height, shape.width] {
        return Err(Error::Shape(format!(
            "augmentation expects a [3, 32, 32] image, got {:?}",
            image.dims()
        )));
    }
    Tensor::new(image.dims().to_vec(), augment_slice(image.data(), shape, rng))
}

pub(crate) fn augment_slice<R: Rng + ?Sized>(image: &[f64], shape: ImageShape, rng: &mut R) -> Vec<f64> {
    const PAD: usize = 4;
    let top = rng.gen_range(0..=2 * PAD);
    let left = rng.gen_range(0..=2 * PAD);
    let flip = rng.gen_bool(0.5);
    pad_crop_flip(image, shape, PAD, top, left, flip)
}
