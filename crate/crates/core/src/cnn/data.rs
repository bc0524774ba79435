//! Datasets: MNIST IDX files and a synthetic Gaussian-blob generator.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Mean and standard deviation of MNIST training pixels scaled to `[0, 1]`.
pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

/// A mini-batch of images `[b, h, w, c]` with class labels.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor4<T>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    images: Tensor4<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor4<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                len: classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor4<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `[height, width, channels]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let [_, h, w, c] = self.images.shape();
        [h, w, c]
    }

    /// Gathers the samples at `indices` into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch<T>> {
        let [n, h, w, c] = self.images.shape();
        let stride = h * w * c;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(Error::Index {
                    what: "sample",
                    index: i,
                    len: n,
                });
            }
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Ok(Batch {
            images: Tensor4::from_raw([indices.len(), h, w, c], data),
            labels,
        })
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let images = self
            .images
            .slice_outer(0..n)
            .expect("prefix of an existing tensor");
        Dataset {
            images,
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }
}

/// Sample order for one epoch: a seeded shuffle, distinct per epoch.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000 ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order
}

/// Pixel scaling applied after mapping bytes to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PixelNorm {
    /// Keep `[0, 1]`.
    Unit,
    /// `(x - mean) / std`
    Standardize { mean: f64, std: f64 },
}

impl Default for PixelNorm {
    fn default() -> Self {
        PixelNorm::Standardize {
            mean: MNIST_MEAN,
            std: MNIST_STD,
        }
    }
}

impl PixelNorm {
    pub fn apply(&self, byte: u8) -> f64 {
        let x = byte as f64 / 255.0;
        match *self {
            PixelNorm::Unit => x,
            PixelNorm::Standardize { mean, std } => (x - mean) / std,
        }
    }
}

/// Raw contents of an IDX image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse(format!("{}: truncated IDX header", path.display())))
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad IDX image magic {magic:#010x}",
            path.display()
        )));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = count * rows * cols;
    let pixels = &bytes[16..];
    if pixels.len() < need {
        return Err(Error::Parse(format!(
            "{}: expected {need} pixel bytes, found {}",
            path.display(),
            pixels.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: pixels[..need].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad IDX label magic {magic:#010x}",
            path.display()
        )));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let labels = &bytes[8..];
    if labels.len() < count {
        return Err(Error::Parse(format!(
            "{}: expected {count} labels, found {}",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels[..count].to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, path)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes, path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from `dir`.
pub fn load_mnist<T: Scalar>(
    dir: &Path,
    split: Split,
    limit: Option<usize>,
    norm: PixelNorm,
) -> Result<Dataset<T>> {
    let images = read_idx_images(&dir.join(format!("{}-images-idx3-ubyte", split.prefix())))?;
    let labels = read_idx_labels(&dir.join(format!("{}-labels-idx1-ubyte", split.prefix())))?;
    if labels.len() != images.count {
        return Err(Error::Parse(format!(
            "{}: {} images but {} labels",
            dir.display(),
            images.count,
            labels.len()
        )));
    }
    let n = limit.map_or(images.count, |l| l.min(images.count));
    let px = images.rows * images.cols;
    let lut: Vec<T> = (0..=255u8).map(|b| T::of(norm.apply(b))).collect();
    let data = images.pixels[..n * px]
        .iter()
        .map(|&b| lut[b as usize])
        .collect();
    let tensor = Tensor4::from_raw([n, images.rows, images.cols, 1], data);
    Dataset::new(
        tensor,
        labels[..n].iter().map(|&l| l as usize).collect(),
        10,
    )
}

/// Parameters of the Gaussian-blob dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// `[height, width, channels]`
    pub shape: [usize; 3],
    /// Standard deviation of the per-pixel noise.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            train_per_class: 100,
            test_per_class: 20,
            shape: [28, 28, 1],
            noise: 0.2,
        }
    }
}

/// Each class is a Gaussian bump at a class-specific location; samples add
/// pixel noise. Returns `(train, test)`, interleaved by class.
pub fn synthetic_blobs<T: Scalar>(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    let [h, w, c] = spec.shape;
    if spec.classes < 2 || h == 0 || w == 0 || c == 0 {
        return Err(Error::Invalid(format!("synthetic spec {spec:?}")));
    }
    let noise = Normal::new(0.0, spec.noise.max(0.0))
        .map_err(|e| Error::Invalid(format!("synthetic noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let cy = rng.random_range(0.2..0.8) * h as f64;
            let cx = rng.random_range(0.2..0.8) * w as f64;
            let sigma = rng.random_range(0.1..0.25) * h.min(w) as f64;
            let mut proto = Vec::with_capacity(h * w * c);
            for i in 0..h {
                for j in 0..w {
                    let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                    let v = (-d2 / (2.0 * sigma * sigma)).exp();
                    for _ in 0..c {
                        proto.push(v);
                    }
                }
            }
            proto
        })
        .collect();

    let mut make = |per_class: usize| -> Result<Dataset<T>> {
        let n = per_class * spec.classes;
        let mut data = Vec::with_capacity(n * h * w * c);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..per_class {
            for (label, proto) in prototypes.iter().enumerate() {
                data.extend(proto.iter().map(|&v| T::of(v + noise.sample(&mut rng))));
                labels.push(label);
            }
        }
        Dataset::new(Tensor4::from_raw([n, h, w, c], data), labels, spec.classes)
    };
    let train = make(spec.train_per_class)?;
    let test = make(spec.test_per_class)?;
    Ok((train, test))
}
