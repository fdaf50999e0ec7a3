//! Datasets: MNIST-style IDX files and small synthetic generators.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Images in `[0, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `N x C x H x W`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub split: String,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, split: impl Into<String>) -> Result<Self> {
        if inputs.shape().len() != 4 {
            return Err(Error::Dimension(format!(
                "dataset inputs must be N x C x H x W, got {:?}",
                inputs.shape()
            )));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if let Some(bad) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            inputs,
            labels,
            split: split.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one example.
    pub fn example_shape(&self) -> [usize; 3] {
        let s = self.inputs.shape();
        [s[1], s[2], s[3]]
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Example `i` with a leading batch extent of one.
    pub fn example(&self, i: usize) -> Result<(Tensor, usize)> {
        Ok((self.inputs.batch_item(i)?, self.labels[i]))
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let items = indices
            .iter()
            .map(|&i| self.inputs.batch_item(i))
            .collect::<Result<Vec<_>>>()?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::stack_batch(&items)?, labels))
    }

    /// The first `n` examples (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        if n == 0 {
            return Err(Error::InvalidArgument("cannot take zero examples".into()));
        }
        let idx: Vec<usize> = (0..n).collect();
        let (inputs, labels) = self.batch(&idx)?;
        Self::new(inputs, labels, self.split.clone())
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.classes()];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated IDX header at byte {offset}")))
}

/// Parses an IDX image file (magic `0x00000803`) into `N x 1 x rows x cols`,
/// dividing each byte by 255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty IDX image file ({count}x{rows}x{cols})")));
    }
    let payload = &bytes[16..];
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX image dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "IDX image payload has {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![count, 1, rows, cols], data)
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Format(format!(
            "IDX label payload has {} bytes, header declares {count}",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

/// Pairs an image file with a label file.
pub fn parse_idx_pair(images: &[u8], labels: &[u8], split: &str) -> Result<Dataset> {
    let inputs = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if inputs.shape()[0] != labels.len() {
        return Err(Error::Format(format!(
            "count mismatch: {} images, {} labels",
            inputs.shape()[0],
            labels.len()
        )));
    }
    Dataset::new(inputs, labels, split)
}

pub fn load_idx(images: &Path, labels: &Path, split: &str) -> Result<Dataset> {
    parse_idx_pair(&fs::read(images)?, &fs::read(labels)?, split)
}

/// Two-feature points rendered as `1 x 1 x 2` images.
///
/// Classes are spread along the first coordinate (centres evenly spaced in
/// `[0.3, 0.7]`, Gaussian spread `noise`), so that feature alone overlaps
/// between classes when `noise` is large. The second coordinate carries a
/// narrow but exact class code: class `c` sits in a band of width `margin`
/// centred at `0.5 + 3 * margin * (c - (classes - 1) / 2)`, leaving a gap of
/// at least `2 * margin` between neighbouring bands. The data is therefore
/// linearly separable, but only along a direction where the classes are
/// close together.
pub fn synth_blobs(n: usize, classes: usize, margin: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes {
        return Err(Error::InvalidArgument(format!(
            "need n >= classes >= 2, got n={n}, classes={classes}"
        )));
    }
    if !(margin > 0.0 && 3.0 * margin * (classes as f64) < 1.0) {
        return Err(Error::InvalidArgument(format!("margin {margin} does not fit in [0, 1]")));
    }
    let spread = Normal::new(0.0, noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = rng::stream(seed, &[0x626c_6f62]);
    let mid = (classes - 1) as f64 / 2.0;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let centre = 0.3 + 0.4 * c as f64 / (classes - 1) as f64;
        let x0 = (centre + spread.sample(&mut rng)).clamp(0.0, 1.0);
        let band = 0.5 + 3.0 * margin * (c as f64 - mid);
        let x1 = band + margin * (rng.random::<f64>() - 0.5);
        data.extend([x0, x1]);
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, 1, 1, 2], data)?, labels, "blobs")
}

/// Two concentric rings around `(0.5, 0.5)`: class 0 at radius 0.15,
/// class 1 at radius 0.35, each with radial jitter of +-0.03.
pub fn synth_rings(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument("rings need at least two points".into()));
    }
    let mut rng = rng::stream(seed, &[0x7269_6e67]);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let radius = if c == 0 { 0.15 } else { 0.35 } + rng.random_range(-0.03..0.03);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        data.extend([0.5 + radius * angle.cos(), 0.5 + radius * angle.sin()]);
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, 1, 1, 2], data)?, labels, "rings")
}
