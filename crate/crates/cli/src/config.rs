//! Flat `key = value` experiment configuration.
//!
//! A config file holds one assignment per line; `#` starts a comment. Flags
//! on the command line are applied as further assignments after the file, so
//! the written manifest (every key, resolved) can be fed back in as a config.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dhe_core::approx::{LossKind, PolyApprox, DEFAULT_INTERVAL};
use dhe_core::engine::{Carrier, CentralConfig, TrainConfig};
use dhe_core::he::HeParams;
use dhe_core::transport::DEFAULT_MAX_PAYLOAD;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`, found {text:?}")]
    Syntax { path: PathBuf, line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key} = {value:?}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Constraint(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Lattice,
    Mock,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Lattice => "lattice",
            Backend::Mock => "mock",
        })
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lattice" => Ok(Backend::Lattice),
            "mock" => Ok(Backend::Mock),
            _ => Err("expected lattice or mock".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// One IDX image/label pair (`images-idx3-ubyte`, `labels-idx1-ubyte`)
    /// split into train and validation by `val_fraction`.
    Idx,
    /// The four standard MNIST files; t10k becomes the validation split.
    Mnist,
    /// Gaussian blobs, see [`dhe_core::data::synth_dataset`].
    Synth,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Idx => "idx",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Synth => "synth",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "idx" => Ok(DatasetKind::Idx),
            "mnist" => Ok(DatasetKind::Mnist),
            "synth" => Ok(DatasetKind::Synth),
            _ => Err("expected idx, mnist or synth".into()),
        }
    }
}

pub const IDX_IMAGES: &str = "images-idx3-ubyte";
pub const IDX_LABELS: &str = "labels-idx1-ubyte";
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Everything a run needs, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub loss: LossKind,
    pub eta: f64,
    pub lambda: f64,
    pub refresh_interval: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub workers: usize,
    pub seed: u64,
    /// Explicit polynomial coefficients; the loss's reference cubic if unset.
    pub poly: Option<[f64; 4]>,
    pub profile: String,
    /// Overrides the profile's depth.
    pub depth: Option<usize>,
    pub backend: Backend,
    pub carrier: Carrier,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub val_fraction: f64,
    pub synth_n: usize,
    pub synth_dim: usize,
    pub synth_margin: f64,
    pub skew: f64,
    pub bootstrap_every: usize,
    pub cost_factor: f64,
    pub latency_ms: u64,
    /// Largest accepted message payload.
    pub max_payload_mib: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::new(LossKind::BinomialDeviance);
        let c = CentralConfig::default();
        Self {
            loss: t.loss,
            eta: t.eta,
            lambda: t.lambda,
            refresh_interval: t.refresh_interval,
            iterations: t.iterations,
            batch_size: t.batch_size,
            workers: t.workers,
            seed: t.seed,
            poly: None,
            profile: "distributed".into(),
            depth: None,
            backend: Backend::Lattice,
            carrier: Carrier::InProc,
            dataset: DatasetKind::Idx,
            data_dir: PathBuf::from("data/mnist-3v8-subset"),
            val_fraction: 0.25,
            synth_n: 512,
            synth_dim: 16,
            synth_margin: 2.0,
            skew: 0.0,
            bootstrap_every: c.bootstrap_every,
            cost_factor: c.cost_factor,
            latency_ms: 0,
            max_payload_mib: DEFAULT_MAX_PAYLOAD >> 20,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn carrier_str(c: Carrier) -> &'static str {
    match c {
        Carrier::InProc => "inproc",
        Carrier::Tcp => "tcp",
    }
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 26] = [
        "loss",
        "eta",
        "lambda",
        "refresh_interval",
        "iterations",
        "batch_size",
        "workers",
        "seed",
        "poly",
        "profile",
        "depth",
        "backend",
        "carrier",
        "dataset",
        "data_dir",
        "val_fraction",
        "synth_n",
        "synth_dim",
        "synth_margin",
        "skew",
        "bootstrap_every",
        "cost_factor",
        "latency_ms",
        "max_payload_mib",
        "out",
        // kept last so a manifest lists the resolved coefficients after the loss
        "poly_interval",
    ];

    /// Assigns one key. An empty value resets `poly` and `depth`, and
    /// assigning `loss` resets `poly` to that loss's reference cubic.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "loss" => {
                self.loss = parse(key, value)?;
                self.poly = None;
            }
            "eta" => self.eta = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "refresh_interval" => self.refresh_interval = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "poly" => {
                self.poly = if value.is_empty() {
                    None
                } else {
                    Some(PolyApprox::<f64>::parse_coeffs(value).map_err(|e| ConfigError::BadValue {
                        key: key.into(),
                        value: value.into(),
                        reason: e.to_string(),
                    })?)
                }
            }
            "profile" => self.profile = value.to_string(),
            "depth" => self.depth = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "backend" => self.backend = parse(key, value)?,
            "carrier" => self.carrier = parse(key, value)?,
            "dataset" => self.dataset = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "synth_n" => self.synth_n = parse(key, value)?,
            "synth_dim" => self.synth_dim = parse(key, value)?,
            "synth_margin" => self.synth_margin = parse(key, value)?,
            "skew" => self.skew = parse(key, value)?,
            "bootstrap_every" => self.bootstrap_every = parse(key, value)?,
            "cost_factor" => self.cost_factor = parse(key, value)?,
            "latency_ms" => self.latency_ms = parse(key, value)?,
            "max_payload_mib" => self.max_payload_mib = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            // informational in manifests; the interval is fixed
            "poly_interval" => {}
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a `key=value` pair as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: pair.into(),
            value: String::new(),
            reason: "expected key=value".into(),
        })?;
        self.set(k, v)
    }

    /// Applies every assignment of a config file text.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        Some(match key {
            "loss" => self.loss.to_string(),
            "eta" => self.eta.to_string(),
            "lambda" => self.lambda.to_string(),
            "refresh_interval" => self.refresh_interval.to_string(),
            "iterations" => self.iterations.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "workers" => self.workers.to_string(),
            "seed" => self.seed.to_string(),
            "poly" => self.poly_approx().coeff_string(),
            "poly_interval" => format!("{},{}", DEFAULT_INTERVAL.0, DEFAULT_INTERVAL.1),
            "profile" => self.profile.clone(),
            "depth" => opt(self.depth.map(|d| d.to_string())),
            "backend" => self.backend.to_string(),
            "carrier" => carrier_str(self.carrier).into(),
            "dataset" => self.dataset.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "synth_n" => self.synth_n.to_string(),
            "synth_dim" => self.synth_dim.to_string(),
            "synth_margin" => self.synth_margin.to_string(),
            "skew" => self.skew.to_string(),
            "bootstrap_every" => self.bootstrap_every.to_string(),
            "cost_factor" => self.cost_factor.to_string(),
            "latency_ms" => self.latency_ms.to_string(),
            "max_payload_mib" => self.max_payload_mib.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// The polynomial the run will use.
    pub fn poly_approx(&self) -> PolyApprox<f64> {
        match self.poly {
            Some(c) => PolyApprox::new(self.loss, c, DEFAULT_INTERVAL),
            None => TrainConfig::new(self.loss).poly,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            lambda: self.lambda,
            refresh_interval: self.refresh_interval,
            iterations: self.iterations,
            batch_size: self.batch_size,
            poly: self.poly_approx(),
            workers: self.workers,
            seed: self.seed,
            ..TrainConfig::new(self.loss)
        }
    }

    pub fn central_config(&self) -> CentralConfig {
        CentralConfig {
            bootstrap_every: self.bootstrap_every,
            cost_factor: self.cost_factor,
        }
    }

    pub fn he_params(&self) -> Result<HeParams, ConfigError> {
        HeParams::profile(&self.profile, self.depth).ok_or_else(|| {
            ConfigError::Constraint(format!(
                "profile {:?} with depth {:?} is not a valid HE profile (distributed, centralized or toy)",
                self.profile, self.depth
            ))
        })
    }

    /// Checks everything that can be checked without running: value ranges,
    /// the HE profile, the level budget `refresh_interval * 4 + 1 <= depth`
    /// when `encrypted`, and the presence of dataset files.
    pub fn validate(&self, encrypted: bool) -> Result<Option<HeParams>, ConfigError> {
        let fail = |m: String| Err(ConfigError::Constraint(m));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return fail(format!("skew must lie in [0, 1], got {}", self.skew));
        }
        if self.synth_n == 0 || self.synth_dim == 0 {
            return fail("synth_n and synth_dim must be at least 1".into());
        }
        if self.max_payload_mib == 0 || self.max_payload_mib > 1 << 12 {
            return fail(format!("max_payload_mib must lie in [1, 4096], got {}", self.max_payload_mib));
        }
        if self.bootstrap_every == 0 {
            return fail("bootstrap_every must be at least 1".into());
        }
        if !(self.cost_factor >= 0.0 && self.cost_factor.is_finite()) {
            return fail(format!("cost_factor must be non-negative, got {}", self.cost_factor));
        }
        let params = if encrypted { Some(self.he_params()?) } else { None };
        self.train_config()
            .validate(params.as_ref())
            .map_err(|e| ConfigError::Constraint(e.to_string()))?;
        match self.dataset {
            DatasetKind::Synth => {}
            DatasetKind::Idx => self.require_files(&[IDX_IMAGES, IDX_LABELS])?,
            DatasetKind::Mnist => self.require_files(&MNIST_FILES)?,
        }
        Ok(params)
    }

    fn require_files(&self, names: &[&str]) -> Result<(), ConfigError> {
        for n in names {
            let p = self.data_dir.join(n);
            if !p.is_file() {
                return Err(ConfigError::Constraint(format!(
                    "dataset {} needs {} (data_dir = {})",
                    self.dataset,
                    p.display(),
                    self.data_dir.display()
                )));
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("loss", "huber").unwrap();
        c.set("depth", "9").unwrap();
        c.set("carrier", "tcp").unwrap();
        c.set("poly", "0.5, -0.1, 0, 0.001").unwrap();
        let mut back = ExperimentConfig::default();
        back.apply_text(&c.to_text(), Path::new("m")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn defaults_resolve_the_reference_cubic() {
        let mut c = ExperimentConfig::default();
        let text = c.to_text();
        assert!(text.contains("poly = 0.5,-0.0843,0,0.0002\n"), "{text}");
        // writing the resolved cubic back is the same run
        c.apply_text(&text, Path::new("m")).unwrap();
        assert_eq!(c.train_config().poly, TrainConfig::new(LossKind::BinomialDeviance).poly);
    }

    #[test]
    fn comments_blank_lines_and_errors() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# header\n\nworkers = 3 # trailing\n", Path::new("m")).unwrap();
        assert_eq!(c.workers, 3);
        assert!(matches!(
            c.apply_text("workers 3", Path::new("m")),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(c.set("worker", "3"), Err(ConfigError::UnknownKey(_))));
        c.set("poly", "1,2").unwrap();
        c.set("loss", "hinge").unwrap();
        assert_eq!(c.poly, None);
        let e = c.set("workers", "three").unwrap_err();
        assert!(e.to_string().starts_with("workers = \"three\""), "{e}");
        assert!(c.set_pair("backend=quantum").is_err());
    }

    #[test]
    fn constraints_name_the_violation() {
        let mut c = ExperimentConfig::default();
        c.dataset = DatasetKind::Synth;
        c.refresh_interval = 2;
        let e = c.validate(true).unwrap_err().to_string();
        assert!(e.contains("refresh interval 2"), "{e}");
        // the level budget only matters once encrypted
        assert!(c.validate(false).is_ok());

        c.refresh_interval = 1;
        c.profile = "huge".into();
        assert!(c.validate(true).unwrap_err().to_string().contains("profile"));

        let mut c = ExperimentConfig::default();
        c.data_dir = PathBuf::from("/nonexistent");
        assert!(c.validate(false).unwrap_err().to_string().contains(IDX_IMAGES));

        let mut c = ExperimentConfig::default();
        c.dataset = DatasetKind::Synth;
        c.skew = 1.5;
        assert!(c.validate(false).unwrap_err().to_string().contains("skew"));
    }
}
