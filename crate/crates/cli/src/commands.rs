//! The subcommands, independent of argument parsing.

use std::path::Path;
use std::time::{Duration, Instant};

use dhe_core::approx::{fit_poly_grad, table2_coeffs, LossKind, PolyApprox};
use dhe_core::data::{load_idx_split, load_mnist_3v8, synth_dataset, Dataset};
use dhe_core::engine::{
    centralized_baseline, partition, plain_distributed, run_distributed, CentralConfig, EngineError, RoundRow,
    RunMetrics,
};
use dhe_core::he::{HeBackend, HeParams, Lattice, Mock};
use dhe_core::packing::PackLayout;
use dhe_core::transport::Options;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::{Backend, ConfigError, DatasetKind, ExperimentConfig, IDX_IMAGES, IDX_LABELS, MNIST_FILES};
use crate::output;
use crate::CliError;

/// The four training modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainer {
    /// Distributed schedule in the clear.
    Plain,
    /// One encrypted party, refreshed by the key holder every `refresh_interval`
    /// iterations at no extra cost.
    Enc,
    /// Workers and parameter server exchanging ciphertexts.
    Dist,
    /// One encrypted party on a deep chain with a bootstrap stand-in every
    /// `bootstrap_every` iterations.
    Central,
}

impl Trainer {
    pub fn name(self) -> &'static str {
        match self {
            Trainer::Plain => "train-plain",
            Trainer::Enc => "train-enc",
            Trainer::Dist => "train-dist",
            Trainer::Central => "baseline-central",
        }
    }

    pub fn encrypted(self) -> bool {
        self != Trainer::Plain
    }

    /// Configuration every run of this mode starts from.
    pub fn defaults(self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        if self == Trainer::Central {
            cfg.profile = "centralized".into();
        }
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<RoundRow>,
    pub final_acc: f64,
    pub wall: Duration,
    /// Human-readable facts about the run, also written as manifest comments.
    pub notes: Vec<String>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let d = &cfg.data_dir;
    Ok(match cfg.dataset {
        DatasetKind::Idx => load_idx_split(&d.join(IDX_IMAGES), &d.join(IDX_LABELS), cfg.val_fraction, cfg.seed)?,
        DatasetKind::Mnist => {
            let [a, b, c, e] = MNIST_FILES.map(|f| d.join(f));
            load_mnist_3v8(&a, &b, &c, &e)?
        }
        DatasetKind::Synth => synth_dataset(cfg.synth_n, cfg.synth_dim, cfg.synth_margin, cfg.seed),
    })
}

/// Runs one training mode and writes `metrics.csv`, `manifest.txt` and
/// `plot.py` into `cfg.out`. `invocation` is recorded in the manifest.
pub fn train(mode: Trainer, cfg: &ExperimentConfig, invocation: &str) -> Result<RunReport, CliError> {
    let params = cfg.validate(mode.encrypted())?;
    let ds = load_dataset(cfg)?;
    let mut notes = vec![
        format!("dhe {}", mode.name()),
        format!("invocation: {invocation}"),
        format!(
            "dataset: {} train / {} val samples of dimension {}",
            ds.train.len(),
            ds.val.len(),
            ds.dim
        ),
    ];
    if let Some(p) = &params {
        notes.push(format!("profile: {} N={} L={}", p.name(), p.degree(), p.max_level()));
    }
    let report = match (mode, params) {
        (Trainer::Plain, _) => {
            let slots = cfg.he_params()?.slots();
            train_plain(&ds, cfg, slots)?
        }
        (_, None) => unreachable!("encrypted modes validate with parameters"),
        (Trainer::Dist, Some(p)) => match cfg.backend {
            Backend::Lattice => train_dist::<Lattice>(&ds, cfg, &p)?,
            Backend::Mock => train_dist::<Mock>(&ds, cfg, &p)?,
        },
        (Trainer::Enc | Trainer::Central, Some(p)) => {
            let central = if mode == Trainer::Enc {
                CentralConfig {
                    bootstrap_every: cfg.refresh_interval,
                    cost_factor: 0.0,
                }
            } else {
                cfg.central_config()
            };
            match cfg.backend {
                Backend::Lattice => train_central::<Lattice>(&ds, cfg, &p, &central)?,
                Backend::Mock => train_central::<Mock>(&ds, cfg, &p, &central)?,
            }
        }
    };
    notes.extend(report.notes);
    notes.push(format!(
        "final accuracy {:.2}% after {} iterations, training wall time {:.3} s",
        100.0 * report.final_acc,
        cfg.iterations,
        report.wall.as_secs_f64()
    ));

    output::create_dir(&cfg.out)?;
    output::write_metrics(&cfg.out, &report.rows)?;
    output::write_manifest(&cfg.out, cfg, &notes)?;
    output::write_plot_script(&cfg.out)?;
    Ok(RunReport { notes, ..report })
}

fn shards(ds: &Dataset, cfg: &ExperimentConfig) -> Vec<Vec<usize>> {
    partition(ds, cfg.workers, cfg.skew, cfg.seed)
}

fn train_plain(ds: &Dataset, cfg: &ExperimentConfig, slots: usize) -> Result<RunReport, CliError> {
    let rows_per_block = PackLayout::plan(1, ds.dim, slots)
        .map_err(|e| ConfigError::Constraint(e.to_string()))?
        .rows();
    let tc = cfg.train_config();
    let run = plain_distributed::<f64>(ds, &tc, &shards(ds, cfg), rows_per_block);
    let rows = run
        .acc
        .iter()
        .zip(&run.wall)
        .enumerate()
        .map(|(i, (&acc, wall))| RoundRow {
            round: i + 1,
            iter: ((i + 1) * tc.refresh_interval).min(tc.iterations),
            wall_ms: wall.as_secs_f64() * 1e3,
            acc,
            noise_est: 0.0,
            he_add: 0,
            he_mul: 0,
            rotations: 0,
            refreshes: 0,
            bytes_tx: 0,
            bytes_rx: 0,
        })
        .collect();
    Ok(RunReport {
        rows,
        final_acc: run.final_acc,
        wall: run.wall.last().copied().unwrap_or_default(),
        notes: Vec::new(),
    })
}

fn train_dist<B: HeBackend>(ds: &Dataset, cfg: &ExperimentConfig, params: &HeParams) -> Result<RunReport, CliError> {
    let opts = Options {
        latency: Duration::from_millis(cfg.latency_ms),
        max_payload: cfg.max_payload_mib << 20,
    };
    let m = run_distributed::<B>(ds, &cfg.train_config(), params, &shards(ds, cfg), cfg.carrier, opts)?;
    let notes = vec![
        format!(
            "traffic: {} messages, {} bytes sent and {} bytes received by the server",
            m.message_counts.iter().map(|(_, n)| n).sum::<u64>(),
            m.traffic.bytes_tx,
            m.traffic.bytes_rx
        ),
        comm_note(&m),
    ];
    Ok(report(m, notes))
}

fn comm_note(m: &RunMetrics) -> String {
    let compute = m.compute_nanos().max(1) as f64;
    format!(
        "communication {:.3} s against homomorphic compute {:.3} s ({:.1}%)",
        m.comm_nanos as f64 * 1e-9,
        compute * 1e-9,
        100.0 * m.comm_nanos as f64 / compute
    )
}

fn train_central<B: HeBackend>(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    params: &HeParams,
    central: &CentralConfig,
) -> Result<RunReport, CliError> {
    let m = centralized_baseline::<B>(ds, &cfg.train_config(), params, central)?;
    let notes = vec![format!(
        "refresh every {} iterations, stand-in cost factor {}",
        central.bootstrap_every, central.cost_factor
    )];
    Ok(report(m, notes))
}

fn report(m: RunMetrics, notes: Vec<String>) -> RunReport {
    RunReport {
        final_acc: m.final_acc,
        wall: m.wall,
        rows: m.rows,
        notes,
    }
}

/// One fitted approximation next to the reference cubic.
#[derive(Debug, Clone)]
pub struct FitRow {
    pub loss: LossKind,
    pub poly: PolyApprox<f64>,
    pub reference: PolyApprox<f64>,
}

pub const FIT_HEADER: [&str; 8] = ["loss", "c0", "c1", "c2", "c3", "sup_error", "reference_sup_error", "interval"];

impl FitRow {
    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![self.loss.to_string()];
        f.extend(self.poly.coeffs.iter().map(|c| format!("{c:.6e}")));
        f.push(format!("{:.6}", self.poly.residual));
        f.push(format!("{:.6}", self.reference.residual));
        f.push(format!("{},{}", self.poly.interval.0, self.poly.interval.1));
        f
    }
}

/// Least-squares fits of `-dL/dm` for each loss, writing `poly.csv` into
/// `out` when given.
pub fn fit_poly(
    losses: &[LossKind],
    degree: usize,
    samples: usize,
    interval: (f64, f64),
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<FitRow>, CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows = losses
        .iter()
        .map(|&loss| {
            Ok(FitRow {
                loss,
                poly: fit_poly_grad(loss, degree, interval, samples, &mut rng)?,
                reference: table2_coeffs(loss),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if let Some(dir) = out {
        output::create_dir(dir)?;
        output::write_csv(&dir.join("poly.csv"), &FIT_HEADER, rows.iter().map(|r| r.fields()))?;
    }
    Ok(rows)
}

/// Parses `name[:depth],...`.
pub fn parse_profiles(s: &str) -> Result<Vec<(String, Option<usize>)>, ConfigError> {
    s.split(',')
        .map(|item| {
            let item = item.trim();
            let (name, depth) = match item.split_once(':') {
                Some((n, d)) => (
                    n,
                    Some(d.parse().map_err(|_| ConfigError::BadValue {
                        key: "profiles".into(),
                        value: item.into(),
                        reason: "depth must be an integer".into(),
                    })?),
                ),
                None => (item, None),
            };
            Ok((name.to_string(), depth))
        })
        .collect()
}

/// Mean time of one primitive on one profile.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub profile: String,
    pub degree: usize,
    pub depth: usize,
    pub op: &'static str,
    pub reps: usize,
    pub mean_us: f64,
    /// Serialized size of a top-level ciphertext.
    pub ciphertext_bytes: usize,
}

pub const BENCH_HEADER: [&str; 7] = ["profile", "degree", "depth", "op", "reps", "mean_us", "ciphertext_bytes"];

impl BenchRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.profile.clone(),
            self.degree.to_string(),
            self.depth.to_string(),
            self.op.to_string(),
            self.reps.to_string(),
            format!("{:.1}", self.mean_us),
            self.ciphertext_bytes.to_string(),
        ]
    }
}

fn mean_us<T>(reps: usize, mut f: impl FnMut() -> T) -> f64 {
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(f());
    }
    start.elapsed().as_secs_f64() * 1e6 / reps as f64
}

/// Times the lattice primitives at the top level of each profile and writes
/// `bench.csv` into `out`.
pub fn bench_ops(profiles: &[(String, Option<usize>)], reps: usize, seed: u64, out: &Path) -> Result<Vec<BenchRow>, CliError> {
    if reps == 0 {
        return Err(ConfigError::Constraint("reps must be at least 1".into()).into());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (name, depth) in profiles {
        let params = HeParams::profile(name, *depth).ok_or_else(|| {
            ConfigError::Constraint(format!("profile {name:?} with depth {depth:?} is not a valid HE profile"))
        })?;
        let (he, sk) = Lattice::keygen(&params, &mut rng);
        let top = params.max_level();
        let v: Vec<f64> = (0..params.slots()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = he.encrypt(&v, top, &mut rng).map_err(EngineError::from)?;
        let b = he.encrypt(&v, top, &mut rng).map_err(EngineError::from)?;
        let bytes = he.to_bytes(&a).len();
        let mut timings = vec![("encrypt", mean_us(reps, || he.encrypt(&v, top, &mut rng)))];
        timings.push(("decrypt", mean_us(reps, || he.decrypt(&sk, &a))));
        timings.push(("add", mean_us(reps, || he.add(&a, &b))));
        timings.push(("mul_plain", mean_us(reps, || he.mul_plain(&a, &v))));
        timings.push(("mul", mean_us(reps, || he.mul(&a, &b))));
        timings.push(("rotate", mean_us(reps, || he.rotate(&a, 1))));
        timings.push(("serialize", mean_us(reps, || he.to_bytes(&a))));
        for (op, mean) in timings {
            rows.push(BenchRow {
                profile: params.name().to_string(),
                degree: params.degree(),
                depth: top,
                op,
                reps,
                mean_us: mean,
                ciphertext_bytes: bytes,
            });
        }
    }
    output::create_dir(out)?;
    output::write_csv(&out.join("bench.csv"), &BENCH_HEADER, rows.iter().map(|r| r.fields()))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_lists() {
        assert_eq!(
            parse_profiles("toy, centralized:12").unwrap(),
            vec![("toy".to_string(), None), ("centralized".to_string(), Some(12))]
        );
        assert!(parse_profiles("toy:x").is_err());
    }

    #[test]
    fn central_mode_defaults_to_the_deep_profile() {
        assert_eq!(Trainer::Central.defaults().profile, "centralized");
        assert_eq!(Trainer::Dist.defaults().profile, "distributed");
    }
}
