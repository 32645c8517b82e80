//! Dataset ingestion: MNIST IDX files, CIFAR-10/100 binary batches, seeded
//! mini-batching and synthetic class-separable datasets.
//!
//! Pixels are scaled by `1/255` into `[0, 1]` with no further centering.
//! Header-declared counts are authoritative; nothing assumes the canonical
//! 60 000 / 10 000 split sizes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR10_RECORD: usize = 1 + CIFAR_PIXELS;
pub const CIFAR100_RECORD: usize = 2 + CIFAR_PIXELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [Self::Mnist, Self::Cifar10, Self::Cifar100];

    /// Per-sample `[C, H, W]`.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Self::Mnist => [1, 28, 28],
            Self::Cifar10 | Self::Cifar100 => [3, 32, 32],
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Self::Mnist | Self::Cifar10 => 10,
            Self::Cifar100 => 100,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::Cifar10 => "cifar10",
            Self::Cifar100 => "cifar100",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Self::Mnist),
            "cifar10" => Ok(Self::Cifar10),
            "cifar100" => Ok(Self::Cifar100),
            _ => Err(Error::InvalidInput(format!(
                "unknown dataset {s:?}; expected mnist, cifar10 or cifar100"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T: Scalar = f64> {
    /// `[N, C, H, W]`, every value in `[0, 1]`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl<T: Scalar> LabeledDataset<T> {
    /// Checks the count, pixel-range and label-range invariants.
    pub fn new(images: Tensor<T>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(Error::mismatch("dataset", "[N, C, H, W] images", images.shape()));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(i) = images
            .data()
            .iter()
            .position(|&p| !(p >= T::zero() && p <= T::one()))
        {
            return Err(Error::Format(format!("pixel value {} outside [0, 1]", images.data()[i])));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelRange {
                label,
                num_classes,
                index,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn image(&self, index: usize) -> &[T] {
        let n = self.sample_len();
        &self.images.data()[index * n..(index + 1) * n]
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidInput(format!(
                "cannot take {n} samples from a dataset of {}",
                self.len()
            )));
        }
        let [c, h, w] = self.sample_shape();
        let images = Tensor::from_vec(
            &[n, c, h, w],
            self.images.data()[..n * c * h * w].to_vec(),
        )?;
        Ok(Self {
            images,
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
        })
    }

    /// Stacks the given samples into a `[B, C, H, W]` batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let [c, h, w] = self.sample_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidInput(format!("sample index {i} out of range")));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec(&[indices.len(), c, h, w], data)?, labels))
    }

    /// Seeded, shuffled mini-batches for one epoch.
    pub fn batches(
        &self,
        batch_size: usize,
        seed: u64,
        epoch: usize,
    ) -> Result<impl Iterator<Item = Result<(Tensor<T>, Vec<usize>)>> + '_> {
        let order = batch_indices(self.len(), batch_size, seed, epoch)?;
        Ok(order.into_iter().map(move |idx| self.gather(&idx)))
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// A permutation of `0..n` seeded by `(seed, epoch)`, cut into consecutive
/// batches of `batch_size`; the last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

fn pixel<T: Scalar>(byte: u8) -> T {
    T::cast(f64::from(byte) / 255.0)
}

fn to_byte<T: Scalar>(value: T) -> u8 {
    (value.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image file and its IDX label file (MNIST layout).
pub fn parse_idx<T: Scalar>(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<LabeledDataset<T>> {
    let magic = read_be_u32(image_bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic} (0x{magic:08x}), expected {IDX_IMAGES_MAGIC}"
        )));
    }
    let magic = read_be_u32(label_bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic} (0x{magic:08x}), expected {IDX_LABELS_MAGIC}"
        )));
    }
    let n = read_be_u32(image_bytes, 4)? as usize;
    let rows = read_be_u32(image_bytes, 8)? as usize;
    let cols = read_be_u32(image_bytes, 12)? as usize;
    let n_labels = read_be_u32(label_bytes, 4)? as usize;
    if n != n_labels {
        return Err(Error::Consistency(format!(
            "image file declares {n} images but label file declares {n_labels} labels"
        )));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty IDX payload ({n}x{rows}x{cols})")));
    }
    let pixels = n * rows * cols;
    let payload = image_bytes.get(16..16 + pixels).ok_or(Error::Length {
        expected: 16 + pixels,
        found: image_bytes.len(),
    })?;
    let labels = label_bytes.get(8..8 + n).ok_or(Error::Length {
        expected: 8 + n,
        found: label_bytes.len(),
    })?;
    let images = Tensor::from_vec(&[n, 1, rows, cols], payload.iter().map(|&b| pixel(b)).collect())?;
    LabeledDataset::new(
        images,
        labels.iter().map(|&l| usize::from(l)).collect(),
        DatasetKind::Mnist.num_classes(),
        split,
    )
}

/// Serializes a single-channel dataset as (IDX images, IDX labels).
pub fn encode_idx<T: Scalar>(dataset: &LabeledDataset<T>) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, h, w] = dataset.sample_shape();
    if c != 1 {
        return Err(Error::mismatch("encode_idx", "single-channel images", dataset.images.shape()));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.images.len());
    for v in [IDX_IMAGES_MAGIC, n, h as u32, w as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(dataset.images.data().iter().map(|&p| to_byte(p)));
    let mut labels = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS_MAGIC, n] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    for &l in &dataset.labels {
        labels.push(u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))?);
    }
    Ok((images, labels))
}

fn parse_cifar_records<T: Scalar>(
    files: &[&[u8]],
    record: usize,
    label_offset: usize,
    num_classes: usize,
    split: Split,
) -> Result<LabeledDataset<T>> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (f, bytes) in files.iter().enumerate() {
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Format(format!(
                "file {f}: length {} is not a positive multiple of the {record}-byte record",
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            let label = usize::from(rec[label_offset]);
            if label >= num_classes {
                return Err(Error::LabelRange {
                    label,
                    num_classes,
                    index: labels.len(),
                });
            }
            labels.push(label);
            data.extend(rec[record - CIFAR_PIXELS..].iter().map(|&b| pixel::<T>(b)));
        }
    }
    if labels.is_empty() {
        return Err(Error::Format("no CIFAR batches given".into()));
    }
    let images = Tensor::from_vec(&[labels.len(), 3, 32, 32], data)?;
    LabeledDataset::new(images, labels, num_classes, split)
}

/// Concatenates CIFAR-10 batch files (`<label> <3072 planar RGB bytes>`).
pub fn parse_cifar10<T: Scalar>(batches: &[&[u8]], split: Split) -> Result<LabeledDataset<T>> {
    parse_cifar_records(batches, CIFAR10_RECORD, 0, 10, split)
}

/// Parses a CIFAR-100 file (`<coarse> <fine> <3072 bytes>`), keeping the
/// fine label.
pub fn parse_cifar100<T: Scalar>(bytes: &[u8], split: Split) -> Result<LabeledDataset<T>> {
    parse_cifar_records(&[bytes], CIFAR100_RECORD, 1, 100, split)
}

fn encode_cifar<T: Scalar>(dataset: &LabeledDataset<T>, two_labels: bool) -> Result<Vec<u8>> {
    if dataset.sample_shape() != [3, 32, 32] {
        return Err(Error::mismatch("encode_cifar", [3, 32, 32], dataset.sample_shape()));
    }
    let mut out = Vec::with_capacity(dataset.len() * (CIFAR_PIXELS + 2));
    for i in 0..dataset.len() {
        let label = u8::try_from(dataset.labels[i])
            .map_err(|_| Error::Format(format!("label {} does not fit a byte", dataset.labels[i])))?;
        if two_labels {
            // coarse labels are not tracked
            out.push(0);
        }
        out.push(label);
        out.extend(dataset.image(i).iter().map(|&p| to_byte(p)));
    }
    Ok(out)
}

pub fn encode_cifar10<T: Scalar>(dataset: &LabeledDataset<T>) -> Result<Vec<u8>> {
    encode_cifar(dataset, false)
}

/// CIFAR-100 records with a zero coarse label.
pub fn encode_cifar100<T: Scalar>(dataset: &LabeledDataset<T>) -> Result<Vec<u8>> {
    encode_cifar(dataset, true)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// First existing candidate, or the first one (for the error message).
fn pick(dir: &Path, candidates: &[&str]) -> PathBuf {
    candidates
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.is_file())
        .unwrap_or_else(|| dir.join(candidates[0]))
}

/// Loads MNIST from `dir`, accepting both `train-images-idx3-ubyte` and
/// `train-images.idx3-ubyte` spellings.
pub fn load_mnist<T: Scalar>(dir: &Path, split: Split) -> Result<LabeledDataset<T>> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = pick(
        dir,
        &[
            &format!("{prefix}-images-idx3-ubyte"),
            &format!("{prefix}-images.idx3-ubyte"),
        ],
    );
    let labels = pick(
        dir,
        &[
            &format!("{prefix}-labels-idx1-ubyte"),
            &format!("{prefix}-labels.idx1-ubyte"),
        ],
    );
    parse_idx(&read_file(&images)?, &read_file(&labels)?, split)
}

fn cifar_dir(dir: &Path, sub: &str) -> PathBuf {
    let nested = dir.join(sub);
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads CIFAR-10 from `dir` or `dir/cifar-10-batches-bin`.
pub fn load_cifar10<T: Scalar>(dir: &Path, split: Split) -> Result<LabeledDataset<T>> {
    let dir = cifar_dir(dir, "cifar-10-batches-bin");
    let files: Vec<Vec<u8>> = match split {
        Split::Train => (1..=5)
            .map(|i| read_file(&dir.join(format!("data_batch_{i}.bin"))))
            .collect::<Result<_>>()?,
        Split::Test => vec![read_file(&dir.join("test_batch.bin"))?],
    };
    let refs: Vec<&[u8]> = files.iter().map(Vec::as_slice).collect();
    parse_cifar10(&refs, split)
}

/// Loads CIFAR-100 from `dir` or `dir/cifar-100-binary`.
pub fn load_cifar100<T: Scalar>(dir: &Path, split: Split) -> Result<LabeledDataset<T>> {
    let dir = cifar_dir(dir, "cifar-100-binary");
    let name = match split {
        Split::Train => "train.bin",
        Split::Test => "test.bin",
    };
    parse_cifar100(&read_file(&dir.join(name))?, split)
}

pub fn load<T: Scalar>(kind: DatasetKind, dir: &Path, split: Split) -> Result<LabeledDataset<T>> {
    let ds = match kind {
        DatasetKind::Mnist => load_mnist(dir, split)?,
        DatasetKind::Cifar10 => load_cifar10(dir, split)?,
        DatasetKind::Cifar100 => load_cifar100(dir, split)?,
    };
    if ds.sample_shape() != kind.input_shape() {
        return Err(Error::mismatch("load", kind.input_shape(), ds.sample_shape()));
    }
    Ok(ds)
}

/// Amplitude of the uniform noise added to synthetic images.
pub const SYNTH_NOISE: f64 = 0.1;

/// Synthetic dataset shaped like `kind`: each class lights up its own cell
/// of a `ceil(sqrt(K))` grid laid over the image, plus uniform noise of
/// amplitude [`SYNTH_NOISE`], clamped to `[0, 1]`. Samples cycle through the
/// classes so any prefix stays balanced.
pub fn synth_dataset<T: Scalar>(
    kind: DatasetKind,
    n_per_class: usize,
    seed: u64,
    split: Split,
) -> Result<LabeledDataset<T>> {
    if n_per_class == 0 {
        return Err(Error::InvalidInput("n_per_class must be at least 1".into()));
    }
    let k = kind.num_classes();
    let [c, h, w] = kind.input_shape();
    let grid = (1..).find(|g| g * g >= k).unwrap_or(1);
    let (cell_h, cell_w) = (h / grid, w / grid);
    let n = k * n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let (gy, gx) = (class / grid, class % grid);
        // one-pixel margin when the cell is large enough to afford it
        let margin = usize::from(cell_h >= 5 && cell_w >= 5);
        let (y0, y1) = (gy * cell_h + margin, (gy + 1) * cell_h - margin);
        let (x0, x1) = (gx * cell_w + margin, (gx + 1) * cell_w - margin);
        for _ in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let base = if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
                        1.0
                    } else {
                        0.0
                    };
                    let noise = rng.gen_range(-SYNTH_NOISE..=SYNTH_NOISE);
                    data.push(T::cast((base + noise).clamp(0.0, 1.0)));
                }
            }
        }
        labels.push(class);
    }
    let images = Tensor::from_vec(&[n, c, h, w], data)?;
    LabeledDataset::new(images, labels, k, split)
}
