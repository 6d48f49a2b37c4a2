//! Datasets, labeled/unlabeled splitting, batching and noise.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::DatasetSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATA_ROOT_ENV: &str = "IPM_SSL_DATA_ROOT";

pub const SYNTHETIC_RADIUS: f64 = 4.0;
pub const SYNTHETIC_STD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(N, *sample_shape)`
    pub samples: Tensor,
    /// Class indices in `0..num_classes`.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.samples.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.iter().any(|&y| y >= self.num_classes) {
            return Err(Error::Format("label outside 0..K".into()));
        }
        let mut seen = vec![false; self.len()];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Format(format!("split index {i} repeated or out of range")));
            }
        }
        Ok(())
    }
}

/// Per-class (train, val, test) counts for a 70/15/15 split.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 70 / 100;
    let val = n * 15 / 100;
    (train, val, n - train - val)
}

/// K isotropic Gaussians with means evenly spaced on a circle of radius 4 in
/// the first two coordinates; every coordinate has std 0.5. Splits are
/// stratified 70/15/15 per class.
pub fn synthetic_mixture(classes: usize, n_per_class: usize, input_dim: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || input_dim < 2 {
        return Err(Error::Invalid(format!(
            "synthetic mixture needs K >= 2 and input_dim >= 2, got {classes} and {input_dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTHETIC_STD).expect("valid std");
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
        let center = [SYNTHETIC_RADIUS * angle.cos(), SYNTHETIC_RADIUS * angle.sin()];
        for _ in 0..n_per_class {
            for d in 0..input_dim {
                let mu = center.get(d).copied().unwrap_or(0.0);
                data.push(mu + noise.sample(&mut rng));
            }
            labels.push(k);
        }
    }
    let (n_train, n_val, _) = split_sizes(n_per_class);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..classes {
        let mut idx: Vec<usize> = (k * n_per_class..(k + 1) * n_per_class).collect();
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    train.shuffle(&mut rng);
    Ok(Dataset {
        samples: Tensor::new(vec![n, input_dim], data)?,
        labels,
        num_classes: classes,
        train,
        val,
        test,
    })
}

/// Writes `split,label,x0,x1,...` rows for inspection.
pub fn write_dataset_csv(ds: &Dataset, out: &mut impl Write) -> Result<()> {
    let d: usize = ds.sample_shape().iter().product();
    let cols: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    writeln!(out, "split,label,{}", cols.join(","))?;
    for (name, idx) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        for &i in idx {
            let vals: Vec<String> = ds.samples.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{name},{},{}", ds.labels[i], vals.join(","))?;
        }
    }
    Ok(())
}

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_PIXELS: usize = 3072;
pub const CIFAR_VAL_HOLDOUT: usize = 5000;

/// Parses CIFAR-10 binary records (1 label byte, 3072 channel-major pixel
/// bytes), scaling pixels to [−1, 1].
pub fn parse_cifar10_records(bytes: &[u8]) -> Result<(Tensor, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format(format!(
            "CIFAR-10 file of {} bytes is not a whole number of {CIFAR_RECORD}-byte records (truncated?)",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::Format(format!("CIFAR-10 label byte {} > 9", rec[0])));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 127.5 - 1.0));
    }
    Ok((Tensor::new(vec![n, 3, 32, 32], data)?, labels))
}

/// Inverse of [`parse_cifar10_records`].
pub fn encode_cifar10_records(images: &Tensor, labels: &[usize]) -> Result<Vec<u8>> {
    let n = labels.len();
    if images.shape() != [n, 3, 32, 32] {
        return Err(Error::Shape(format!("expected ({n}, 3, 32, 32), got {:?}", images.shape())));
    }
    let mut out = Vec::with_capacity(n * CIFAR_RECORD);
    for (i, &y) in labels.iter().enumerate() {
        out.push(u8::try_from(y).ok().filter(|&b| b <= 9).ok_or_else(|| {
            Error::Format(format!("label {y} does not fit CIFAR-10"))
        })?);
        out.extend(
            images
                .row(i)
                .iter()
                .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

/// Loads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`; the last
/// 5000 training images become the validation split (the last tenth when
/// fewer than 50000 training images are present).
pub fn load_cifar10_binary(dir: &Path) -> Result<Dataset> {
    let mut train_bytes = Vec::new();
    for i in 1..=5 {
        let p = dir.join(format!("data_batch_{i}.bin"));
        train_bytes.extend(fs::read(&p).map_err(|e| {
            Error::Format(format!("{}: {e}", p.display()))
        })?);
    }
    let test_path = dir.join("test_batch.bin");
    let test_bytes = fs::read(&test_path).map_err(|e| Error::Format(format!("{}: {e}", test_path.display())))?;
    let (train_x, train_y) = parse_cifar10_records(&train_bytes)?;
    let (test_x, test_y) = parse_cifar10_records(&test_bytes)?;
    let n_train = train_y.len();
    let n_test = test_y.len();
    let holdout = if n_train >= 10 * CIFAR_VAL_HOLDOUT {
        CIFAR_VAL_HOLDOUT
    } else {
        n_train / 10
    };
    let samples = Tensor::concat_rows(&[&train_x, &test_x])?;
    let mut labels = train_y;
    labels.extend(test_y);
    Ok(Dataset {
        samples,
        labels,
        num_classes: 10,
        train: (0..n_train - holdout).collect(),
        val: (n_train - holdout..n_train).collect(),
        test: (n_train..n_train + n_test).collect(),
    })
}

pub fn resolve_cifar_dir(path: Option<&str>) -> Result<PathBuf> {
    if let Some(p) = path {
        return Ok(PathBuf::from(p));
    }
    std::env::var_os(DATA_ROOT_ENV)
        .map(|root| PathBuf::from(root).join("cifar-10-batches-bin"))
        .ok_or_else(|| {
            Error::Config(format!(
                "no CIFAR-10 path in the config and ${DATA_ROOT_ENV} is unset"
            ))
        })
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Synthetic {
            classes,
            n_per_class,
            input_dim,
            seed,
        } => synthetic_mixture(*classes, *n_per_class, *input_dim, *seed),
        DatasetSpec::Cifar10 { path } => load_cifar10_binary(&resolve_cifar_dir(path.as_deref())?),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Picks a class-balanced labeled subset of the train split: every class gets
/// ⌊n/K⌋, and a seed-chosen n mod K classes get one more.
pub fn stratified_label_split(ds: &Dataset, n_labeled: usize, seed: u64) -> Result<LabeledSplit> {
    let k = ds.num_classes;
    if n_labeled < k || n_labeled > ds.train.len() {
        return Err(Error::Invalid(format!(
            "n_labeled must lie in [{k}, {}], got {n_labeled}",
            ds.train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in &ds.train {
        by_class[ds.labels[i]].push(i);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let mut quota = vec![n_labeled / k; k];
    for &c in order.iter().take(n_labeled % k) {
        quota[c] += 1;
    }
    let mut is_labeled = vec![false; ds.len()];
    let mut labeled = Vec::with_capacity(n_labeled);
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < quota[c] {
            return Err(Error::Invalid(format!(
                "class {c} has {} training samples, fewer than its quota {}",
                members.len(),
                quota[c]
            )));
        }
        members.shuffle(&mut rng);
        for &i in &members[..quota[c]] {
            is_labeled[i] = true;
            labeled.push(i);
        }
    }
    labeled.sort_unstable();
    let unlabeled = ds.train.iter().copied().filter(|&i| !is_labeled[i]).collect();
    Ok(LabeledSplit { labeled, unlabeled })
}

/// i.i.d. N(0, 1) noise of shape `(batch, dim)`.
pub fn noise_sampler(dim: usize, batch: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..dim * batch).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![batch, dim], data).expect("shape matches")
}

/// Endless reshuffling cycle over an index set.
#[derive(Clone, Debug)]
pub struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    pub fn new(indices: Vec<usize>) -> Self {
        let pos = indices.len();
        Self {
            order: indices,
            pos,
        }
    }

    pub fn next_batch(&mut self, size: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// One shuffled pass over `indices` in batches of `size`; a trailing partial
/// batch is dropped unless it is the only one.
pub fn epoch_batches(indices: &[usize], size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    if order.len() <= size {
        return if order.is_empty() { vec![] } else { vec![order] };
    }
    order.chunks_exact(size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_balanced_and_deterministic() {
        let a = synthetic_mixture(2, 100, 3, 7).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.labels.iter().filter(|&&y| y == 0).count(), 100);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (140, 30, 30));
        a.validate().unwrap();
        let b = synthetic_mixture(2, 100, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthetic_mixture(2, 100, 3, 8).unwrap());
    }

    #[test]
    fn cifar_truncation_and_scaling() {
        assert!(parse_cifar10_records(&[0u8; 3072]).is_err());
        let (x, y) = parse_cifar10_records(&[0u8; CIFAR_RECORD]).unwrap();
        assert_eq!(x.shape(), &[1, 3, 32, 32]);
        assert!(x.data().iter().all(|&v| v == -1.0));
        assert_eq!(y, vec![0]);
        let mut rec = vec![255u8; CIFAR_RECORD];
        rec[0] = 10;
        assert!(parse_cifar10_records(&rec).is_err());
        rec[0] = 9;
        let (x, _) = parse_cifar10_records(&rec).unwrap();
        assert!(x.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn label_quotas() {
        let ds = synthetic_mixture(10, 20, 2, 1).unwrap();
        let s = stratified_label_split(&ds, 11, 3).unwrap();
        let mut counts = vec![0; 10];
        for &i in &s.labeled {
            counts[ds.labels[i]] += 1;
        }
        counts.sort_unstable();
        assert_eq!(counts, vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 2]);
        let all = stratified_label_split(&ds, ds.train.len(), 3).unwrap();
        assert!(all.unlabeled.is_empty());
        assert!(stratified_label_split(&ds, 9, 3).is_err());
    }

    #[test]
    fn noise_shape_and_determinism() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let z = noise_sampler(64, 32, &mut a);
        assert_eq!(z.shape(), &[32, 64]);
        assert_eq!(z, noise_sampler(64, 32, &mut b));
    }

    #[test]
    fn cycler_reshuffles_and_covers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Cycler::new(vec![1, 2, 3]);
        let mut first = c.next_batch(3, &mut rng);
        first.sort_unstable();
        assert_eq!(first, vec![1, 2, 3]);
        assert_eq!(c.next_batch(5, &mut rng).len(), 5);
        assert_eq!(epoch_batches(&[1, 2, 3, 4, 5], 2, &mut rng).len(), 2);
        let mut only = epoch_batches(&[1, 2], 4, &mut rng);
        assert_eq!(only.len(), 1);
        only[0].sort_unstable();
        assert_eq!(only[0], vec![1, 2]);
    }
}
