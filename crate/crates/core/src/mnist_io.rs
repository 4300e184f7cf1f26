//! MNIST IDX parsing, pixel normalization and seeded minibatching.
//!
//! IDX layout: a 4-byte big-endian magic (`0x00000803` for images,
//! `0x00000801` for labels), one 4-byte big-endian size per dimension, then
//! the row-major unsigned-byte payload.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

/// Unsigned-byte image stack, `count × rows × cols`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Images {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl Images {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// One decoded IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxFile {
    Images(Images),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("header truncated at byte {at}")))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    let magic = read_u32(bytes, 0).map_err(|_| Error::Format("missing IDX magic".into()))?;
    let ndim = match magic {
        IMAGE_MAGIC => 3,
        LABEL_MAGIC => 1,
        other => {
            return Err(Error::Format(format!(
                "bad magic 0x{other:08x}, expected 0x{IMAGE_MAGIC:08x} or 0x{LABEL_MAGIC:08x}"
            )))
        }
    };
    let dims = (0..ndim)
        .map(|d| read_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Length(format!(
            "header declares {dims:?} = {expected} bytes of payload, found {}",
            payload.len()
        )));
    }
    Ok(match ndim {
        3 => IdxFile::Images(Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload.to_vec(),
        }),
        _ => IdxFile::Labels(payload.to_vec()),
    })
}

pub fn encode_images(images: &Images) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<IdxFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Paired images and labels with the MNIST shape contract enforced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDataset {
    pub images: Images,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn new(images: Images, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        if images.rows != SIDE || images.cols != SIDE {
            return Err(Error::Format(format!(
                "expected {SIDE}×{SIDE} images, got {}×{}",
                images.rows, images.cols
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Format(format!("label {bad} outside 0..=9")));
        }
        Ok(Self { images, labels })
    }

    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = match read_file(images_path)? {
            IdxFile::Images(i) => i,
            IdxFile::Labels(_) => {
                return Err(Error::Format(format!(
                    "{} holds labels, expected images",
                    images_path.display()
                )))
            }
        };
        let labels = match read_file(labels_path)? {
            IdxFile::Labels(l) => l,
            IdxFile::Images(_) => {
                return Err(Error::Format(format!(
                    "{} holds images, expected labels",
                    labels_path.display()
                )))
            }
        };
        Self::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` items (or all of them if fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let px = self.images.rows * self.images.cols;
        Self {
            images: Images {
                count: n,
                rows: self.images.rows,
                cols: self.images.cols,
                pixels: self.images.pixels[..n * px].to_vec(),
            },
            labels: self.labels[..n].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationSpec {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            mean: 0.1307,
            std: 0.3081,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "mean {} / std {} (std must be positive and finite)",
                self.mean, self.std
            )));
        }
        Ok(())
    }

    pub fn normalize_value(&self, pixel: f64) -> f64 {
        (pixel / 255.0 - self.mean) / self.std
    }

    /// Inverse of [`normalize_value`](Self::normalize_value), in pixel units.
    pub fn denormalize_value(&self, value: f64) -> f64 {
        (value * self.std + self.mean) * 255.0
    }

    /// Denormalize and clip to a displayable byte.
    pub fn to_pixel(&self, value: f64) -> u8 {
        self.denormalize_value(value).round().clamp(0.0, 255.0) as u8
    }
}

/// Images as a `[n, 1, 28, 28]` network input.
pub fn normalize(images: &Images, spec: &NormalizationSpec) -> Result<Tensor> {
    spec.validate()?;
    let lut: Vec<f32> = (0..=255u8)
        .map(|p| spec.normalize_value(f64::from(p)) as f32)
        .collect();
    let data = images.pixels.iter().map(|&p| lut[p as usize]).collect();
    Tensor::from_vec(&[images.count, 1, images.rows, images.cols], data)
}

/// Seeded epoch permutations partitioned into minibatches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchStream {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl BatchStream {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        Self {
            batch_size,
            seed,
            drop_last: true,
        }
    }

    pub fn check(&self, dataset_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::Config(format!(
                "batch size {} invalid for a dataset of {dataset_len} items",
                self.batch_size
            )));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, dataset_len: usize) -> usize {
        if self.drop_last {
            dataset_len / self.batch_size
        } else {
            dataset_len.div_ceil(self.batch_size)
        }
    }

    /// Index batches for one epoch. Every epoch gets its own permutation,
    /// derived from `(seed, epoch)`.
    pub fn epoch(&self, dataset_len: usize, epoch: u64) -> Result<Vec<Vec<usize>>> {
        self.check(dataset_len)?;
        let mut order: Vec<usize> = (0..dataset_len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        let mut batches: Vec<Vec<usize>> = order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        if self.drop_last && batches.last().is_some_and(|b| b.len() < self.batch_size) {
            batches.pop();
        }
        Ok(batches)
    }

    pub fn cursor(&self, dataset_len: usize) -> Result<BatchCursor> {
        self.check(dataset_len)?;
        Ok(BatchCursor {
            stream: *self,
            dataset_len,
            epoch: 0,
            pending: Vec::new(),
            consumed: 0,
        })
    }
}

/// Endless batch iterator that walks successive epochs.
#[derive(Clone, Debug)]
pub struct BatchCursor {
    stream: BatchStream,
    dataset_len: usize,
    epoch: u64,
    pending: Vec<Vec<usize>>,
    consumed: u64,
}

impl BatchCursor {
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pending.is_empty() {
            let mut batches = self
                .stream
                .epoch(self.dataset_len, self.epoch)
                .expect("stream validated at construction");
            batches.reverse();
            self.pending = batches;
            self.epoch += 1;
        }
        self.consumed += 1;
        self.pending.pop().expect("an epoch holds at least one batch")
    }

    pub fn batches_consumed(&self) -> u64 {
        self.consumed
    }
}

/// Normalized dataset held in memory for repeated batching.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl PreparedData {
    pub fn new(raw: &RawDataset, spec: &NormalizationSpec) -> Result<Self> {
        Ok(Self {
            images: normalize(&raw.images, spec)?,
            labels: raw.labels.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<u8>) {
        (
            self.images.select(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// All batches of one epoch as `(images, labels)` pairs.
pub fn batch_stream(
    data: &PreparedData,
    cfg: &BatchStream,
    epoch: u64,
) -> Result<Vec<(Tensor, Vec<u8>)>> {
    Ok(cfg
        .epoch(data.len(), epoch)?
        .iter()
        .map(|idx| data.batch(idx))
        .collect())
}
