//! Training loops: the plaintext reference trainer, the encrypted local step,
//! the worker and parameter-server halves of the refresh protocol, and the
//! deep-chain centralized baseline.

mod central;
mod plain;
mod protocol;
mod server;
mod worker;

use std::time::Duration;

use thiserror::Error;

use crate::approx::{table2_coeffs, ApproxError, LossKind, PolyApprox};
use crate::he::{HeError, HeParams, OpKind, OpSnapshot};
use crate::packing::{PackError, D_ITER};
use crate::transport::{ChannelStats, Kind, TransportError};
use crate::wire::WireError;

pub use central::{centralized_baseline, CentralConfig};
pub use plain::{plain_distributed, plain_step, plain_train, PlainRun};
pub use protocol::{Payload, SpecWire};
pub use server::{partition, run_distributed, server_init, server_loop, Carrier, LogEntry, Server};
pub use worker::{enc_step, worker_run, EncShard, WorkerReport};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("aborted by peer: {0}")]
    Aborted(String),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

impl EngineError {
    pub fn is_config(&self) -> bool {
        matches!(self, EngineError::Config(_))
    }
}

/// Hyperparameters shared by every trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    /// L2 coefficient.
    pub lambda: f64,
    /// Local iterations between refreshes.
    pub refresh_interval: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Approximation of `-dL/dm` used in place of the exact gradient.
    pub poly: PolyApprox<f64>,
    pub workers: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Learning rate 1, batch 128, a refresh every iteration, the published
    /// polynomial for `loss`.
    pub fn new(loss: LossKind) -> Self {
        Self {
            eta: 1.0,
            lambda: 0.0,
            refresh_interval: 1,
            iterations: 30,
            batch_size: 128,
            loss,
            poly: table2_coeffs(loss),
            workers: 1,
            seed: 0,
        }
    }

    /// Checks the scalar fields, and the level budget when `params` is given:
    /// a refresh window of `l` steps must fit in `L - 1` levels.
    pub fn validate(&self, params: Option<&HeParams>) -> Result<(), EngineError> {
        let fail = |m: String| Err(EngineError::Config(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be positive and finite, got {}", self.eta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.refresh_interval == 0 {
            return fail("refresh interval must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("at least one worker is required".into());
        }
        if self.poly.coeffs.iter().any(|c| !c.is_finite()) {
            return fail("polynomial coefficients must be finite".into());
        }
        if let Some(p) = params {
            let need = self.refresh_interval * D_ITER;
            if need + 1 > p.max_level() {
                return fail(format!(
                    "refresh interval {} needs {need} levels plus one in reserve, profile '{}' has {}",
                    self.refresh_interval,
                    p.name(),
                    p.max_level()
                ));
            }
        }
        Ok(())
    }

    /// Refresh round trips per worker.
    pub fn rounds(&self) -> usize {
        self.iterations / self.refresh_interval
    }
}

/// Deterministic cyclic mini-batches over an ordered sample list grouped into
/// blocks of `rows` consecutive samples. A batch is `ceil(batch / rows)`
/// consecutive blocks, wrapping around.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batches {
    samples: usize,
    rows: usize,
    per_batch: usize,
}

impl Batches {
    pub fn new(samples: usize, rows: usize, batch_size: usize) -> Self {
        let blocks = samples.div_ceil(rows).max(1);
        Self {
            samples,
            rows,
            per_batch: batch_size.div_ceil(rows).clamp(1, blocks),
        }
    }

    pub fn blocks(&self) -> usize {
        self.samples.div_ceil(self.rows).max(1)
    }

    /// Block indices of batch `t`.
    pub fn blocks_of(&self, t: usize) -> Vec<usize> {
        let nb = self.blocks();
        (0..self.per_batch).map(|j| (t * self.per_batch + j) % nb).collect()
    }

    /// Positions (into the ordered sample list) of batch `t`.
    pub fn samples_of(&self, t: usize) -> Vec<usize> {
        self.blocks_of(t)
            .into_iter()
            .flat_map(|b| b * self.rows..((b + 1) * self.rows).min(self.samples))
            .collect()
    }
}

/// Synchronous average of the received parameter vectors.
pub fn aggregate(master: &mut [f64], received: &[Vec<f64>]) -> Result<(), EngineError> {
    if received.is_empty() {
        return Err(EngineError::Protocol("nothing to aggregate".into()));
    }
    if let Some(v) = received.iter().find(|v| v.len() != master.len()) {
        return Err(EngineError::Protocol(format!(
            "parameter of length {} against master of length {}",
            v.len(),
            master.len()
        )));
    }
    let inv = 1.0 / received.len() as f64;
    for (j, m) in master.iter_mut().enumerate() {
        *m = received.iter().map(|v| v[j]).sum::<f64>() * inv;
    }
    Ok(())
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub iter: usize,
    pub wall_ms: f64,
    pub acc: f64,
    pub noise_est: f64,
    pub he_add: u64,
    pub he_mul: u64,
    pub rotations: u64,
    pub refreshes: u64,
    pub bytes_tx: u64,
    pub bytes_rx: u64,
}

impl RoundRow {
    pub const HEADER: [&'static str; 11] = [
        "round",
        "iter",
        "wall_ms",
        "acc",
        "noise_est",
        "he_add",
        "he_mul",
        "rotations",
        "refreshes",
        "bytes_tx",
        "bytes_rx",
    ];

    fn new(round: usize, iter: usize, wall: Duration, acc: f64, noise_est: f64, ops: &OpSnapshot, io: &ChannelStats) -> Self {
        Self {
            round,
            iter,
            wall_ms: wall.as_secs_f64() * 1e3,
            acc,
            noise_est,
            he_add: ops.count(OpKind::Add),
            he_mul: ops.count(OpKind::Mul) + ops.count(OpKind::MulPlain),
            rotations: ops.count(OpKind::Rotate),
            refreshes: ops.count(OpKind::Refresh),
            bytes_tx: io.bytes_tx,
            bytes_rx: io.bytes_rx,
        }
    }

    pub fn fields(&self) -> [String; 11] {
        [
            self.round.to_string(),
            self.iter.to_string(),
            format!("{:.3}", self.wall_ms),
            format!("{:.6}", self.acc),
            format!("{:.6e}", self.noise_est),
            self.he_add.to_string(),
            self.he_mul.to_string(),
            self.rotations.to_string(),
            self.refreshes.to_string(),
            self.bytes_tx.to_string(),
            self.bytes_rx.to_string(),
        ]
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub rows: Vec<RoundRow>,
    /// Master parameters after each round, then the final average.
    pub trajectory: Vec<Vec<f64>>,
    /// Decrypted worker parameters per round (the Done round last), in worker order.
    pub received: Vec<Vec<Vec<f64>>>,
    /// Largest tracked noise of any parameter ciphertext received per round.
    pub noise: Vec<f64>,
    pub final_w: Vec<f64>,
    pub final_acc: f64,
    /// Training phase only: from the first local step to the final aggregate.
    pub wall: Duration,
    /// Operation counts and timings summed over every participant.
    pub ops: OpSnapshot,
    pub server_ops: OpSnapshot,
    /// Server-side traffic.
    pub traffic: ChannelStats,
    /// Send/receive plus ciphertext and key (de)serialization, all participants.
    pub comm_nanos: u64,
    pub server_comm_nanos: u64,
    pub workers: Vec<WorkerReport>,
    pub log: Vec<LogEntry>,
    /// Messages of each kind seen by the server, both directions.
    pub message_counts: Vec<(Kind, u64)>,
}

impl RunMetrics {
    /// Homomorphic evaluation time summed over every participant.
    pub fn compute_nanos(&self) -> u64 {
        self.ops.compute_nanos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cycle_over_blocks() {
        // 40 samples in blocks of 16: 16, 16, 8
        let b = Batches::new(40, 16, 20);
        assert_eq!(b.blocks(), 3);
        assert_eq!(b.blocks_of(0), vec![0, 1]);
        assert_eq!(b.blocks_of(1), vec![2, 0]);
        assert_eq!(b.samples_of(1), (32..40).chain(0..16).collect::<Vec<_>>());
        // a batch never repeats a block
        assert_eq!(Batches::new(10, 16, 128).blocks_of(5), vec![0]);
        assert_eq!(Batches::new(100, 1, 7).samples_of(15), (5..12).collect::<Vec<_>>());
    }

    #[test]
    fn aggregate_is_the_mean() {
        let mut m = vec![0.0; 3];
        aggregate(&mut m, &[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(m, vec![1.0, -2.0, 3.0]);
        aggregate(&mut m, &[vec![1.0, -2.0, 3.0], vec![-1.0, 2.0, -3.0]]).unwrap();
        assert_eq!(m, vec![0.0; 3]);
        aggregate(&mut m, &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 12.0]]).unwrap();
        assert_eq!(m, vec![4.0, 5.0, 7.0]);
        assert!(aggregate(&mut m, &[vec![1.0; 2]]).is_err());
        assert!(aggregate(&mut m, &[]).is_err());
    }

    #[test]
    fn config_validation() {
        let p = HeParams::profile("toy", None).unwrap();
        let mut c = TrainConfig::new(LossKind::BinomialDeviance);
        assert!(c.validate(Some(&p)).is_ok());
        c.refresh_interval = 2;
        let e = c.validate(Some(&p)).unwrap_err();
        assert!(e.is_config() && e.to_string().contains("refresh interval 2"), "{e}");
        assert!(c.validate(None).is_ok());
        for bad in [
            TrainConfig { eta: 0.0, ..TrainConfig::new(LossKind::Huber) },
            TrainConfig { iterations: 0, ..TrainConfig::new(LossKind::Huber) },
            TrainConfig { lambda: -1.0, ..TrainConfig::new(LossKind::Huber) },
            TrainConfig { workers: 0, ..TrainConfig::new(LossKind::Huber) },
        ] {
            assert!(bad.validate(None).unwrap_err().is_config());
        }
    }
}
