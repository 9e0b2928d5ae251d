use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Error, Result};
use crate::model::Dataset;
use crate::tensor::Tensor;

pub const CIFAR10_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
pub const CIFAR100_MEAN: [f64; 3] = [0.5071, 0.4867, 0.4408];
pub const CIFAR100_STD: [f64; 3] = [0.2675, 0.2565, 0.2761];

const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    Synthetic,
    Cifar10 { path: PathBuf },
    Cifar100 { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetDescriptor {
    pub kind: DatasetKind,
    pub train: usize,
    pub test: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.test == 0 {
            return Err(config_err("dataset sizes must be positive"));
        }
        match &self.kind {
            DatasetKind::Synthetic => {
                if self.image_size != 8 && self.image_size != 16 {
                    return Err(config_err(format!(
                        "synthetic images are 8 or 16 pixels, got {}",
                        self.image_size
                    )));
                }
            }
            DatasetKind::Cifar10 { path } | DatasetKind::Cifar100 { path } => {
                if self.image_size != CIFAR_SIDE {
                    return Err(config_err("CIFAR images are 32 pixels"));
                }
                if !path.exists() {
                    return Err(config_err(format!("dataset path {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            DatasetKind::Synthetic => 2,
            DatasetKind::Cifar10 { .. } => 10,
            DatasetKind::Cifar100 { .. } => 100,
        }
    }

    pub fn load(&self) -> Result<Split> {
        self.validate()?;
        match &self.kind {
            DatasetKind::Synthetic => Ok(gen_synthetic(&SyntheticSpec {
                train: self.train,
                test: self.test,
                size: self.image_size,
                seed: self.seed,
            })),
            DatasetKind::Cifar10 { path } => cifar_split(path, self.train, self.test, 10),
            DatasetKind::Cifar100 { path } => cifar_split(path, self.train, self.test, 100),
        }
    }
}

/// CIFAR `path` is either a single binary file (train records first, then
/// test records) or a directory holding the standard batch files.
fn cifar_split(path: &Path, n_train: usize, n_test: usize, classes: usize) -> Result<Split> {
    if path.is_dir() {
        let (train_files, test_file) = if classes == 10 {
            (
                (1..=5).map(|i| path.join(format!("data_batch_{i}.bin"))).collect::<Vec<_>>(),
                path.join("test_batch.bin"),
            )
        } else {
            (vec![path.join("train.bin")], path.join("test.bin"))
        };
        let mut bytes = Vec::new();
        for f in &train_files {
            bytes.extend(fs::read(f)?);
        }
        let train = parse_cifar(&bytes, 0, n_train, classes)?;
        let test = parse_cifar(&fs::read(test_file)?, 0, n_test, classes)?;
        return Ok(Split { train, test });
    }
    let bytes = fs::read(path)?;
    let train = parse_cifar(&bytes, 0, n_train, classes)?;
    let test = parse_cifar(&bytes, n_train, n_test, classes)?;
    Ok(Split { train, test })
}

/// Reads the first `n` records of a CIFAR binary file.
pub fn load_cifar_binary(path: impl AsRef<Path>, n: usize, classes: usize) -> Result<Dataset> {
    parse_cifar(&fs::read(path)?, 0, n, classes)
}

/// Decodes records `skip..skip + n`. CIFAR-100 records carry a coarse and
/// a fine label byte; the fine one is used.
pub fn parse_cifar(bytes: &[u8], skip: usize, n: usize, classes: usize) -> Result<Dataset> {
    let (label_bytes, mean, std) = match classes {
        10 => (1, CIFAR10_MEAN, CIFAR10_STD),
        100 => (2, CIFAR100_MEAN, CIFAR100_STD),
        _ => return Err(config_err(format!("CIFAR has 10 or 100 classes, not {classes}"))),
    };
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.len() % record != 0 {
        let whole = bytes.len() / record * record;
        return Err(Error::Format {
            offset: whole as u64,
            message: format!(
                "{} trailing bytes do not form a {record}-byte record",
                bytes.len() - whole
            ),
        });
    }
    let available = bytes.len() / record;
    if skip + n > available {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "requested records {skip}..{} but only {available} are available",
                skip + n
            ),
        });
    }
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for r in skip..skip + n {
        let start = r * record;
        let label = bytes[start + label_bytes - 1] as usize;
        if label >= classes {
            return Err(Error::Format {
                offset: (start + label_bytes - 1) as u64,
                message: format!("label {label} out of range for {classes} classes"),
            });
        }
        let px = &bytes[start + label_bytes..start + record];
        let plane = CIFAR_SIDE * CIFAR_SIDE;
        let data = px
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let ch = i / plane;
                (b as f64 / 255.0 - mean[ch]) / std[ch]
            })
            .collect();
        images.push(Tensor::from_vec(&[3, CIFAR_SIDE, CIFAR_SIDE], data));
        labels.push(label);
    }
    Dataset::new(images, labels, classes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub train: usize,
    pub test: usize,
    pub size: usize,
    pub seed: u64,
}

const NOISE: f64 = 0.05;
const STRIPE_PERIOD: f64 = 4.0;

/// Two-class texture task. Every image is a horizontally striped texture
/// with random phase plus a 2x2 marker at a random position holding one hot
/// and one cold pixel on its anti-diagonal; class 1 mirrors the marker
/// across its main diagonal, swapping the two. Gaussian noise is added last.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = synthetic_set(spec.train, spec.size, &mut rng);
    let test = synthetic_set(spec.test, spec.size, &mut rng);
    Split { train, test }
}

fn synthetic_set(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let noise = Normal::new(0.0, NOISE).expect("valid sigma");
    let gains = [1.0, 0.8, 0.6];
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let r0 = rng.gen_range(0..size - 1);
        let c0 = rng.gen_range(0..size - 1);
        // Hot pixel at (0, 1) of the marker for class 0, (1, 0) for class 1.
        let (hot, cold) = if label == 0 {
            ((r0, c0 + 1), (r0 + 1, c0))
        } else {
            ((r0 + 1, c0), (r0, c0 + 1))
        };
        let mut data = vec![0.0; 3 * size * size];
        for (ch, g) in gains.iter().enumerate() {
            for r in 0..size {
                let stripe = 0.25 * g * (std::f64::consts::TAU * r as f64 / STRIPE_PERIOD + phase).sin();
                for c in 0..size {
                    let v = if (r, c) == hot {
                        1.0
                    } else if (r, c) == cold {
                        -1.0
                    } else {
                        stripe
                    };
                    data[(ch * size + r) * size + c] = v + noise.sample(rng);
                }
            }
        }
        images.push(Tensor::from_vec(&[3, size, size], data));
        labels.push(label);
    }
    Dataset::new(images, labels, 2).expect("labels in range")
}

/// Accuracy of the nearest class-mean classifier fit on `train`, on `test`.
pub fn centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let dim = train.images[0].len();
    let mut means = vec![vec![0.0; dim]; train.classes];
    let mut counts = vec![0usize; train.classes];
    for (img, &l) in train.images.iter().zip(&train.labels) {
        counts[l] += 1;
        for (m, v) in means[l].iter_mut().zip(img.data()) {
            *m += v;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= c.max(1) as f64;
        }
    }
    let hits = test
        .images
        .iter()
        .zip(&test.labels)
        .filter(|(img, &l)| {
            let dist = |m: &Vec<f64>| m.iter().zip(img.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..means.len())
                .min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])))
                .unwrap_or(0);
            best == l
        })
        .count();
    hits as f64 / test.len().max(1) as f64
}
