//! Datasets: IDX reader for MNIST 3-vs-8, synthetic separable blobs, and
//! shard partitioning.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    Magic { found: u32, expected: u32 },
    #[error("corrupt IDX data: {0}")]
    Corrupt(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Row-major samples with labels in {-1, +1} and a train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dim: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, dim: usize, train: Vec<usize>, val: Vec<usize>) -> Result<Self, DataError> {
        if dim == 0 || x.len() != y.len() * dim {
            return Err(DataError::Invalid(format!("{} values for {} rows of dim {dim}", x.len(), y.len())));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(DataError::Invalid("labels must be exactly +1 or -1".into()));
        }
        let mut seen = vec![0u8; y.len()];
        for &i in &train {
            *seen.get_mut(i).ok_or_else(|| DataError::Invalid(format!("train index {i} out of range")))? |= 1;
        }
        for &i in &val {
            let s = seen.get_mut(i).ok_or_else(|| DataError::Invalid(format!("validation index {i} out of range")))?;
            if *s & 1 == 1 {
                return Err(DataError::Invalid(format!("sample {i} is in both train and validation")));
            }
            *s |= 2;
        }
        Ok(Self { x, y, dim, train, val })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Gathers `(x, y)` for `indices` in order.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        (x, y)
    }

    /// Fraction of `indices` with `sign(w . x) == y` (a zero score counts as wrong).
    pub fn accuracy(&self, w: &[f64], indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        let hits = indices
            .iter()
            .filter(|&&i| {
                let s: f64 = self.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
                s * self.y[i] > 0.0
            })
            .count();
        hits as f64 / indices.len() as f64
    }
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Corrupt("truncated header".into()))
}

/// Parsed IDX image file: `count` images of `rows x cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::Magic {
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(DataError::Corrupt(format!(
            "{count} images of {rows}x{cols} need {} bytes, found {}",
            count * rows * cols,
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::Magic {
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(DataError::Corrupt(format!("{count} labels declared, {} present", body.len())));
    }
    Ok(body.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// 2x2 average pooling of one `rows x cols` byte image, scaled to [0, 1].
pub fn pool2x2(image: &[u8], rows: usize, cols: usize) -> Vec<f64> {
    let (pr, pc) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(pr * pc);
    for r in 0..pr {
        for c in 0..pc {
            let at = |dr: usize, dc: usize| image[(2 * r + dr) * cols + 2 * c + dc] as f64;
            out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / (4.0 * 255.0));
        }
    }
    out
}

/// Digit 3 maps to +1 and digit 8 to -1; other digits are dropped.
fn filter_3v8(images: &IdxImages, labels: &[u8]) -> Result<(Vec<f64>, Vec<f64>, usize), DataError> {
    if images.count != labels.len() {
        return Err(DataError::Corrupt(format!("{} images but {} labels", images.count, labels.len())));
    }
    let size = images.rows * images.cols;
    let dim = (images.rows / 2) * (images.cols / 2);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        let label = match l {
            3 => 1.0,
            8 => -1.0,
            _ => continue,
        };
        x.extend(pool2x2(&images.pixels[i * size..(i + 1) * size], images.rows, images.cols));
        y.push(label);
    }
    Ok((x, y, dim))
}

/// Standard MNIST: digits 3 and 8 of the training files become the training
/// split and those of the test files the validation split.
pub fn load_mnist_3v8(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
) -> Result<Dataset, DataError> {
    let (mut x, mut y, dim) = filter_3v8(&parse_idx_images(&read(train_images)?)?, &parse_idx_labels(&read(train_labels)?)?)?;
    let (xt, yt, dim_t) = filter_3v8(&parse_idx_images(&read(test_images)?)?, &parse_idx_labels(&read(test_labels)?)?)?;
    if dim != dim_t {
        return Err(DataError::Corrupt("train and test image sizes differ".into()));
    }
    let n_train = y.len();
    x.extend(xt);
    y.extend(yt);
    let train = (0..n_train).collect();
    let val = (n_train..y.len()).collect();
    Dataset::new(x, y, dim, train, val)
}

/// A single IDX image/label pair, split into train and validation under `seed`.
pub fn load_idx_split(images: &Path, labels: &Path, val_fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    let (x, y, dim) = filter_3v8(&parse_idx_images(&read(images)?)?, &parse_idx_labels(&read(labels)?)?)?;
    let (train, val) = random_split(y.len(), val_fraction, seed);
    Dataset::new(x, y, dim, train, val)
}

/// Seeded permutation of `0..n` cut into `(train, val)` with `round(n * val_fraction)`
/// validation samples.
pub fn random_split(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Two gaussian blobs separable through the origin: every sample sits at
/// least `margin / 2` from the hyperplane normal to a random unit direction,
/// with unit-variance noise in the orthogonal complement. A quarter of the
/// samples are held out for validation.
pub fn synth_dataset(n: usize, dim: usize, margin: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut u: Vec<f64> = (0..dim).map(|_| gauss(&mut rng)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);

    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut g: Vec<f64> = (0..dim).map(|_| gauss(&mut rng)).collect();
        let along: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        let offset = label * (margin / 2.0 + 0.5 * gauss(&mut rng).abs());
        for (v, d) in g.iter_mut().zip(&u) {
            *v += (offset - along) * d;
        }
        x.extend(g);
        y.push(label);
    }
    let (train, val) = random_split(n, 0.25, rng.random());
    Dataset::new(x, y, dim, train, val).expect("consistent synthetic data")
}

/// Splits `indices` into `workers` shards. With `skew = 0` this is a seeded
/// uniform split into near-equal, label-stratified shards; each sample is instead routed to a
/// shard reserved for its label with probability `skew`, so `skew = 1` gives
/// label-homogeneous shards whenever `workers >= 2`.
pub fn skewed_partition(ds: &Dataset, indices: &[usize], workers: usize, skew: f64, seed: u64) -> Vec<Vec<usize>> {
    assert!(workers >= 1, "at least one shard");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = indices.to_vec();
    order.shuffle(&mut rng);
    let mut shards = vec![Vec::new(); workers];
    if workers == 1 || skew <= 0.0 {
        // dealing the classes one after the other keeps every shard's label
        // ratio within one sample of the global one
        order.sort_by_key(|&i| ds.y[i] < 0.0);
        for (k, i) in order.into_iter().enumerate() {
            shards[k % workers].push(i);
        }
        return shards;
    }

    // positive labels own the first share of shards, proportional to class size
    let pos = order.iter().filter(|&&i| ds.y[i] > 0.0).count();
    let frac = pos as f64 / order.len().max(1) as f64;
    let pos_shards = ((workers as f64 * frac).round() as usize).clamp(1, workers - 1);
    let mut cursor = [0usize; 3];
    let mut uniform = Vec::new();
    for i in order {
        if rng.random::<f64>() < skew {
            let (slot, base, span) = if ds.y[i] > 0.0 {
                (0, 0, pos_shards)
            } else {
                (1, pos_shards, workers - pos_shards)
            };
            shards[base + cursor[slot] % span].push(i);
            cursor[slot] += 1;
        } else {
            uniform.push(i);
        }
    }
    for i in uniform {
        shards[cursor[2] % workers].push(i);
        cursor[2] += 1;
    }
    shards
}
