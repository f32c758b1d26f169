//! Datasets: file parsers, synthetic blobs, normalization, seeded split and batching.

mod cifar;
mod idx;

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

pub use cifar::{parse_cifar10_batch, write_cifar10_batch, CifarBatch, IMAGE_LEN as CIFAR_IMAGE_LEN, RECORD_LEN as CIFAR_RECORD_LEN};
pub use idx::{parse_idx, write_idx, IdxArray, IMAGES_MAGIC, LABELS_MAGIC};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

/// Per-channel affine normalization `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Labelled samples `{(xᵢ, yᵢ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    split: SplitTag,
    normalization: Option<Normalization>,
}

/// One mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    /// `inputs` has shape `[N × sample...]`.
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.ndim() < 2 {
            return Err(Error::dim("dataset inputs need a batch axis and a sample axis"));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::dim(format!(
                "{} inputs but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split: SplitTag::Full,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Input("selection is empty".into()));
        }
        let per = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!("index {i} out of range {}", self.len())));
            }
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        Ok(Dataset {
            inputs: Tensor::new(shape, data)?,
            labels,
            num_classes: self.num_classes,
            split: self.split,
            normalization: self.normalization.clone(),
        })
    }

    fn permutation(&self, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::rng(seed));
        idx
    }

    /// Seeded random subset of `n` samples (the whole set if `n >= len`).
    pub fn random_subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut idx = self.permutation(seed::derive(seed, seed::stream::SUBSET, 0));
        idx.truncate(n);
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Seeded disjoint, exhaustive train/test partition.
    pub fn split(&self, train_ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_ratio > 0.0 && train_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio {train_ratio} must lie strictly between 0 and 1"
            )));
        }
        let n_train = (self.len() as f64 * train_ratio).round() as usize;
        if n_train == 0 || n_train == self.len() {
            return Err(Error::Config(format!(
                "split ratio {train_ratio} leaves an empty side for {} samples",
                self.len()
            )));
        }
        let idx = self.permutation(seed::derive(seed, seed::stream::SPLIT, 0));
        let mut train = self.select(&idx[..n_train])?;
        let mut test = self.select(&idx[n_train..])?;
        train.split = SplitTag::Train;
        test.split = SplitTag::Test;
        Ok((train, test))
    }

    /// Channel axis: the leading sample axis for images, every feature otherwise.
    fn channel_layout(&self) -> (usize, usize) {
        let s = self.sample_shape();
        if s.len() == 3 {
            (s[0], s[1] * s[2])
        } else {
            (self.sample_len(), 1)
        }
    }

    /// Per-channel mean and standard deviation of this dataset.
    pub fn fit_normalization(&self) -> Normalization {
        let (channels, plane) = self.channel_layout();
        let per = self.sample_len();
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for sample in self.inputs.data().chunks(per) {
            for c in 0..channels {
                for &v in &sample[c * plane..(c + 1) * plane] {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let count = (self.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / count - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, std }
    }

    pub fn normalized(&self, norm: &Normalization) -> Result<Dataset> {
        let (channels, plane) = self.channel_layout();
        if norm.mean.len() != channels || norm.std.len() != channels {
            return Err(Error::dim(format!(
                "normalization has {} channels, dataset has {channels}",
                norm.mean.len()
            )));
        }
        let per = self.sample_len();
        let mut data = self.inputs.data().to_vec();
        for sample in data.chunks_mut(per) {
            for c in 0..channels {
                for v in &mut sample[c * plane..(c + 1) * plane] {
                    *v = (*v - norm.mean[c]) / norm.std[c];
                }
            }
        }
        Ok(Dataset {
            inputs: Tensor::new(self.inputs.shape(), data)?,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            split: self.split,
            normalization: Some(norm.clone()),
        })
    }

    /// Shuffled mini-batches for one epoch; the final short batch is kept.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Result<Batches<'_>> {
        if batch_size == 0 || batch_size > self.len() {
            return Err(Error::Config(format!(
                "batch_size {batch_size} invalid for a split of {} samples",
                self.len()
            )));
        }
        let order = self.permutation(seed::derive(seed, seed::stream::SHUFFLE, epoch as u64));
        Ok(Batches {
            data: self,
            order,
            batch_size,
            pos: 0,
        })
    }
}

/// Iterator over one epoch of mini-batches.
#[derive(Debug)]
pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    /// Sample indices in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let sel = self
            .data
            .select(&self.order[self.pos..end])
            .expect("indices come from a permutation of the dataset");
        self.pos = end;
        Some(Batch {
            inputs: sel.inputs,
            labels: sel.labels,
        })
    }
}

/// Train/test split with a fixed batch size and shuffle seed.
#[derive(Debug, Clone)]
pub struct SplitLoader {
    pub train: Dataset,
    pub test: Dataset,
    pub batch_size: usize,
    pub seed: u64,
}

impl SplitLoader {
    pub fn train_epoch(&self, epoch: usize) -> Result<Batches<'_>> {
        self.train.batches(self.batch_size, self.seed, epoch)
    }
}

pub fn split_shuffle_batch(dataset: &Dataset, split_ratio: f64, batch_size: usize, seed: u64) -> Result<SplitLoader> {
    let (train, test) = dataset.split(split_ratio, seed)?;
    if batch_size == 0 || batch_size > train.len() {
        return Err(Error::Config(format!(
            "batch_size {batch_size} exceeds train split of {}",
            train.len()
        )));
    }
    Ok(SplitLoader {
        train,
        test,
        batch_size,
        seed,
    })
}

/// Gaussian clusters around seeded centers drawn from `U(−10, 10)^dim`.
pub fn make_blobs(num_classes: usize, samples_per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || samples_per_class == 0 || dim == 0 || spread.is_nan() || spread < 0.0 {
        return Err(Error::Config("make_blobs needs positive sizes and spread >= 0".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, seed::stream::BLOBS, 0));
    let centers_dist = Uniform::new_inclusive(-10.0, 10.0);
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| centers_dist.sample(&mut rng)).collect())
        .collect();
    let n = num_classes * samples_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &c in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(c + spread * z);
            }
            labels.push(class);
        }
    }
    Dataset::new(Tensor::new([n, dim], data)?, labels, num_classes)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.exists())
        .ok_or_else(|| Error::Input(format!("{stem}[.gz] not found in {}", dir.display())))
}

/// Builds a dataset from parsed IDX image and label arrays.
pub fn mnist_from_idx(images: &IdxArray, labels: &IdxArray) -> Result<Dataset> {
    if images.dims.len() != 3 || labels.dims.len() != 1 {
        return Err(Error::Input("expected a 3-D image file and a 1-D label file".into()));
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::Input(format!(
            "{n} images but {} labels",
            labels.dims[0]
        )));
    }
    let inputs = Tensor::new([n, 1, images.dims[1], images.dims[2]], images.to_unit_floats())?;
    let labels = labels.data.iter().map(|&b| b as usize).collect();
    Dataset::new(inputs, labels, 10)
}

/// Loads `train-images-idx3-ubyte[.gz]` and `train-labels-idx1-ubyte[.gz]` from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let images = parse_idx(&read_maybe_gz(&find_file(dir, "train-images-idx3-ubyte")?)?)?;
    let labels = parse_idx(&read_maybe_gz(&find_file(dir, "train-labels-idx1-ubyte")?)?)?;
    mnist_from_idx(&images, &labels)
}

impl CifarBatch {
    /// `[N×3×32×32]` inputs scaled to `[0, 1]`.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let n = self.len();
        let inputs = Tensor::new(
            [n, 3, 32, 32],
            self.pixels.iter().map(|&b| b as f64 / 255.0).collect(),
        )?;
        Dataset::new(inputs, self.labels.iter().map(|&l| l as usize).collect(), 10)
    }
}

/// Loads every `data_batch_*.bin` in `dir`, in name order.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!("no data_batch_*.bin in {}", dir.display())));
    }
    let mut all = CifarBatch {
        labels: Vec::new(),
        pixels: Vec::new(),
    };
    for f in files {
        let b = parse_cifar10_batch(&std::fs::read(f)?)?;
        all.labels.extend(b.labels);
        all.pixels.extend(b.pixels);
    }
    all.to_dataset()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let data = (0..n * 2).map(|i| i as f64).collect();
        Dataset::new(Tensor::new([n, 2], data).unwrap(), (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn split_is_partition() {
        let d = toy(100);
        let (tr, te) = d.split(0.8, 4).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let mut firsts: Vec<i64> = tr
            .inputs()
            .data()
            .chunks(2)
            .chain(te.inputs().data().chunks(2))
            .map(|s| s[0] as i64)
            .collect();
        firsts.sort_unstable();
        assert_eq!(firsts, (0..100).map(|i| 2 * i).collect::<Vec<_>>());
        assert_eq!(tr.split_tag(), SplitTag::Train);
        assert!(d.split(1.0, 0).is_err());
        assert!(d.split(0.0, 0).is_err());
    }

    #[test]
    fn batches_deterministic_and_reshuffled() {
        let d = toy(50);
        let a: Vec<usize> = d.batches(8, 3, 0).unwrap().order().to_vec();
        let b: Vec<usize> = d.batches(8, 3, 0).unwrap().order().to_vec();
        let c: Vec<usize> = d.batches(8, 3, 1).unwrap().order().to_vec();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let sizes: Vec<usize> = d.batches(8, 3, 0).unwrap().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![8, 8, 8, 8, 8, 8, 2]);
    }

    #[test]
    fn batch_larger_than_split_is_config_error() {
        let d = toy(30);
        assert!(matches!(split_shuffle_batch(&d, 0.5, 16, 0), Err(Error::Config(_))));
        assert!(split_shuffle_batch(&d, 0.5, 15, 0).is_ok());
    }

    #[test]
    fn blobs_deterministic_and_collapsed() {
        let a = make_blobs(3, 10, 4, 0.5, 7).unwrap();
        assert_eq!(a, make_blobs(3, 10, 4, 0.5, 7).unwrap());
        let z = make_blobs(2, 5, 3, 0.0, 1).unwrap();
        let first = &z.inputs().data()[..3];
        for s in z.inputs().data()[..15].chunks(3) {
            assert_eq!(s, first);
        }
    }

    #[test]
    fn normalization_centers_train_split() {
        let d = make_blobs(2, 50, 3, 2.0, 5).unwrap();
        let norm = d.fit_normalization();
        let n = d.normalized(&norm).unwrap();
        let again = n.fit_normalization();
        for (m, s) in again.mean.iter().zip(&again.std) {
            assert!(m.abs() < 1e-10);
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mismatched_labels_rejected() {
        assert!(Dataset::new(Tensor::zeros([3, 2]), vec![0, 1], 2).is_err());
        assert!(matches!(
            Dataset::new(Tensor::zeros([2, 2]), vec![0, 2], 2),
            Err(Error::Input(_))
        ));
    }
}
