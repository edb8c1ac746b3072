//! Datasets: IDX image files, binary digit subsets and a synthetic Gaussian
//! task with one uninformative feature.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// Default class-signal strength of [`synth_tsipras`].
pub const TSIPRAS_ETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One sample per row.
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: SplitTag,
    /// `(rows, cols)` for image data.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset inputs vs labels",
                expected: inputs.nrows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} >= K = {num_classes}")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs"));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split: SplitTag::Full,
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn sample(&self, i: usize) -> (Vector, usize) {
        (self.inputs.row(i).to_owned(), self.labels[i])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
            image_shape: self.image_shape,
        }
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Idx(format!("truncated {what}: {e}")))?;
    Ok(u32::from_be_bytes(b))
}

fn read_payload<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Idx(format!("truncated {what} payload: {e}")))?;
    Ok(buf)
}

/// Parses an IDX image stream into `(count, rows, cols, pixels)`.
pub fn parse_idx_images<R: Read>(mut r: R) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(&mut r, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx(format!("bad image magic {magic:#010x}")));
    }
    let n = read_u32(&mut r, "image count")? as usize;
    let rows = read_u32(&mut r, "row count")? as usize;
    let cols = read_u32(&mut r, "column count")? as usize;
    let pixels = read_payload(&mut r, n * rows * cols, "image")?;
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels<R: Read>(mut r: R) -> Result<Vec<u8>> {
    let magic = read_u32(&mut r, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!("bad label magic {magic:#010x}")));
    }
    let n = read_u32(&mut r, "label count")? as usize;
    read_payload(&mut r, n, "label")
}

/// Builds a dataset from IDX streams; pixels are divided by 255 and `K` is
/// `max(label) + 1` (at least 2).
pub fn idx_dataset<R1: Read, R2: Read>(images: R1, labels: R2) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Idx(format!("{n} images but {} labels", labels.len())));
    }
    let inputs = Array2::from_shape_vec((n, rows * cols), pixels.iter().map(|&p| p as f64 / 255.0).collect())
        .map_err(|e| Error::Idx(e.to_string()))?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let k = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let mut d = Dataset::new(inputs, labels, k)?;
    d.image_shape = Some((rows, cols));
    Ok(d)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = BufReader::new(File::open(images_path)?);
    let labels = BufReader::new(File::open(labels_path)?);
    idx_dataset(images, labels)
}

/// Writes pixels as `round(255 v)`; inputs must lie in `[0, 1]`.
pub fn write_idx_streams<W1: Write, W2: Write>(d: &Dataset, mut images: W1, mut labels: W2) -> Result<()> {
    let (rows, cols) = d.image_shape.unwrap_or((1, d.dim()));
    if rows * cols != d.dim() {
        return Err(Error::Idx(format!("image shape {rows}x{cols} does not match dim {}", d.dim())));
    }
    if d.inputs.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Idx("pixel values outside [0, 1]".into()));
    }
    if let Some(&bad) = d.labels.iter().find(|&&l| l > 255) {
        return Err(Error::Idx(format!("label {bad} does not fit in a byte")));
    }
    images.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for v in [d.len(), rows, cols] {
        images.write_all(&(v as u32).to_be_bytes())?;
    }
    let bytes: Vec<u8> = d.inputs.iter().map(|v| (v * 255.0).round() as u8).collect();
    images.write_all(&bytes)?;
    labels.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    labels.write_all(&(d.len() as u32).to_be_bytes())?;
    let lb: Vec<u8> = d.labels.iter().map(|&l| l as u8).collect();
    labels.write_all(&lb)?;
    images.flush()?;
    labels.flush()?;
    Ok(())
}

pub fn write_idx(d: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    write_idx_streams(
        d,
        BufWriter::new(File::create(images_path)?),
        BufWriter::new(File::create(labels_path)?),
    )
}

/// Keeps two digits; `pos` becomes class 0 (`y = +1`), `neg` class 1.
pub fn binary_subset(d: &Dataset, pos: usize, neg: usize) -> Result<Dataset> {
    if pos == neg {
        return Err(Error::InvalidArgument(format!("positive and negative digit are both {pos}")));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut seen = [false, false];
    for (i, &l) in d.labels.iter().enumerate() {
        let class = if l == pos {
            0
        } else if l == neg {
            1
        } else {
            continue;
        };
        seen[class] = true;
        inputs.push(i);
        labels.push(class);
    }
    if !seen[0] || !seen[1] {
        return Err(Error::InvalidArgument(format!(
            "digit {} not present",
            if seen[0] { neg } else { pos }
        )));
    }
    Ok(Dataset {
        inputs: d.inputs.select(Axis(0), &inputs),
        labels,
        num_classes: 2,
        split: d.split,
        image_shape: d.image_shape,
    })
}

/// `y` uniform on `±1`; feature 1 is standard normal independent of `y`,
/// features `2..dim` are `N(η y, 1)`. Class 0 is `y = +1`.
pub fn synth_tsipras(n: usize, dim: usize, eta: f64, seed: u64) -> Result<Dataset> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("synthetic data needs dim >= 2, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Matrix::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let positive = rng.random_bool(0.5);
        let y = if positive { 1.0 } else { -1.0 };
        inputs[[i, 0]] = rng.sample::<f64, _>(StandardNormal);
        for j in 1..dim {
            inputs[[i, j]] = eta * y + rng.sample::<f64, _>(StandardNormal);
        }
        labels.push(if positive { 0 } else { 1 });
    }
    Dataset::new(inputs, labels, 2)
}

/// Deterministic shuffled split with `round(fraction · N)` training samples.
pub fn split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * d.len() as f64).round() as usize;
    let mut train = d.subset(&idx[..n_train]);
    let mut test = d.subset(&idx[n_train..]);
    train.split = SplitTag::Train;
    test.split = SplitTag::Test;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_bytes(pixels: &[u8], labels: &[u8], rows: u32, cols: u32) -> (Vec<u8>, Vec<u8>) {
        let n = labels.len() as u32;
        let mut img = Vec::new();
        img.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        for v in [n, rows, cols] {
            img.extend(v.to_be_bytes());
        }
        img.extend_from_slice(pixels);
        let mut lab = Vec::new();
        lab.extend(IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend(n.to_be_bytes());
        lab.extend_from_slice(labels);
        (img, lab)
    }

    #[test]
    fn parses_byte_fixture() {
        let (img, lab) = fixture_bytes(&[0, 255, 128, 0], &[7], 2, 2);
        let d = idx_dataset(img.as_slice(), lab.as_slice()).unwrap();
        assert_eq!(d.len(), 1);
        let row = d.inputs.row(0);
        assert_eq!(row[0], 0.0);
        assert_eq!(row[1], 1.0);
        assert!((row[2] - 128.0 / 255.0).abs() < 1e-15);
        assert!((row[2] - 0.50196).abs() < 1e-5);
        assert_eq!(d.image_shape, Some((2, 2)));
    }

    #[test]
    fn empty_and_corrupt_files() {
        let (img, lab) = fixture_bytes(&[], &[], 28, 28);
        let d = idx_dataset(img.as_slice(), lab.as_slice()).unwrap();
        assert!(d.is_empty());
        let mut bad = img.clone();
        bad[3] = 0x01;
        assert!(matches!(idx_dataset(bad.as_slice(), lab.as_slice()), Err(Error::Idx(_))));
        let (img, lab) = fixture_bytes(&[1, 2, 3, 4], &[1], 2, 2);
        assert!(idx_dataset(&img[..img.len() - 1], lab.as_slice()).is_err());
        let (_, lab2) = fixture_bytes(&[], &[1, 2], 2, 2);
        assert!(idx_dataset(img.as_slice(), lab2.as_slice()).is_err());
    }

    #[test]
    fn idx_round_trip() {
        let (img, lab) = fixture_bytes(&[0, 255, 128, 0, 9, 10, 11, 12], &[3, 1], 2, 2);
        let d = idx_dataset(img.as_slice(), lab.as_slice()).unwrap();
        let (mut img2, mut lab2) = (Vec::new(), Vec::new());
        write_idx_streams(&d, &mut img2, &mut lab2).unwrap();
        assert_eq!(img, img2);
        assert_eq!(lab, lab2);
    }

    #[test]
    fn binary_subset_toy() {
        let d = Dataset::new(Matrix::zeros((4, 2)), vec![7, 1, 3, 7], 10).unwrap();
        let b = binary_subset(&d, 7, 1).unwrap();
        assert_eq!(b.labels, vec![0, 1, 0]);
        assert_eq!(b.num_classes, 2);
        assert!(binary_subset(&d, 7, 7).is_err());
        assert!(binary_subset(&d, 7, 5).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let inputs = Matrix::from_shape_fn((10, 1), |(i, _)| i as f64);
        let d = Dataset::new(inputs, (0..10).map(|i| i % 2).collect(), 2).unwrap();
        let (a, b) = split(&d, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a2, _) = split(&d, 0.5, 3).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<f64> = a.inputs.iter().chain(b.inputs.iter()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
        assert!(split(&d, 1.0, 0).is_err());
    }

    #[test]
    fn tsipras_statistics() {
        let n = 20_000;
        let d = synth_tsipras(n, 4, TSIPRAS_ETA, 5).unwrap();
        let sn = (n as f64).sqrt();
        let mut corr = 0.0;
        let mut sums = [[0.0; 4]; 2];
        let counts = d.class_counts();
        for i in 0..n {
            let y = if d.labels[i] == 0 { 1.0 } else { -1.0 };
            corr += y * d.inputs[[i, 0]];
            for j in 0..4 {
                sums[d.labels[i]][j] += d.inputs[[i, j]];
            }
        }
        assert!((corr / n as f64).abs() < 3.0 / sn);
        for (c, y) in [(0usize, 1.0), (1, -1.0)] {
            let m = counts[c] as f64;
            for j in 1..4 {
                assert!((sums[c][j] / m - TSIPRAS_ETA * y).abs() < 3.0 / m.sqrt());
            }
        }
        assert_eq!(d, synth_tsipras(n, 4, TSIPRAS_ETA, 5).unwrap());
        assert!(synth_tsipras(3, 1, 0.5, 0).is_err());
    }
}
