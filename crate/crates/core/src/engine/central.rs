use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::he::{HeBackend, HeParams, OpKind, OpSnapshot};
use crate::packing::{pack_matrix, PackLayout};
use crate::transport::{ChannelStats, Kind};

use super::{enc_step, partition, EncShard, EngineError, RoundRow, RunMetrics, TrainConfig};

/// Knobs of the single-party baseline that stands in for bootstrapping with a
/// trusted refresh plus synthetic latency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralConfig {
    /// Iterations between bootstrap stand-ins.
    pub bootstrap_every: usize,
    /// Each stand-in sleeps this multiple of the multiplication time measured
    /// since the previous one.
    pub cost_factor: f64,
}

impl Default for CentralConfig {
    fn default() -> Self {
        Self {
            bootstrap_every: 3,
            cost_factor: 10.0,
        }
    }
}

/// Trains on the whole training split as one encrypted party on the deep
/// profile `params`, replacing bootstrap every `bootstrap_every` iterations
/// with a key-holder refresh followed by a sleep of `cost_factor` times the
/// ciphertext and plaintext multiplication time of the window.
/// `cfg.refresh_interval` and `cfg.workers` are ignored.
pub fn centralized_baseline<B: HeBackend>(
    ds: &Dataset,
    cfg: &TrainConfig,
    params: &HeParams,
    central: &CentralConfig,
) -> Result<RunMetrics, EngineError> {
    let every = central.bootstrap_every;
    let probe = TrainConfig {
        refresh_interval: every,
        workers: 1,
        ..cfg.clone()
    };
    probe.validate(Some(params))?;
    if !(central.cost_factor >= 0.0 && central.cost_factor.is_finite()) {
        return Err(EngineError::Config(format!(
            "bootstrap cost factor must be non-negative, got {}",
            central.cost_factor
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (he, sk) = B::keygen(params, &mut rng);
    let top = params.max_level();
    let order = partition(ds, 1, 0.0, cfg.seed).swap_remove(0);
    let layout = PackLayout::plan(order.len(), ds.dim, params.slots())?;
    let (x, y) = ds.gather(&order);
    let packed = pack_matrix(&x, &y, &layout)?;
    let blocks = packed
        .data
        .iter()
        .map(|d| he.encrypt(d, top, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut shard = EncShard::new(&he, layout, blocks, cfg.batch_size)?;
    let mut w = he.encrypt(&layout.replicate(&vec![0.0; ds.dim])?, top, &mut rng)?;
    he.stats().reset();

    let mul_nanos = |s: &OpSnapshot| s.nanos(OpKind::Mul) + s.nanos(OpKind::MulPlain);
    let mut rows = Vec::new();
    let mut trajectory = Vec::new();
    let mut noise = Vec::new();
    let mut last_mul = 0u64;
    let started = Instant::now();
    for t in 0..cfg.iterations {
        w = enc_step(&he, &mut shard, &w, t, cfg)?;
        if (t + 1) % every == 0 {
            let worst = he.noise_estimate(&w);
            w = he.refresh(&sk, &w, top, &mut rng)?;
            let spent = mul_nanos(&he.stats().snapshot());
            let window = spent - last_mul;
            std::thread::sleep(Duration::from_nanos((central.cost_factor * window as f64) as u64));
            last_mul = spent;

            let mut v = he.decrypt(&sk, &w)?;
            v.truncate(ds.dim);
            let acc = ds.accuracy(&v, &ds.val);
            rows.push(RoundRow::new(
                rows.len() + 1,
                t + 1,
                started.elapsed(),
                acc,
                worst,
                &he.stats().snapshot(),
                &ChannelStats::default(),
            ));
            trajectory.push(v);
            noise.push(worst);
        }
    }
    let worst = he.noise_estimate(&w);
    let mut final_w = he.decrypt(&sk, &w)?;
    final_w.truncate(ds.dim);
    let wall = started.elapsed();
    let final_acc = ds.accuracy(&final_w, &ds.val);
    if cfg.iterations % every != 0 {
        rows.push(RoundRow::new(
            rows.len() + 1,
            cfg.iterations,
            wall,
            final_acc,
            worst,
            &he.stats().snapshot(),
            &ChannelStats::default(),
        ));
    }
    trajectory.push(final_w.clone());
    noise.push(worst);
    let ops = he.stats().snapshot();
    Ok(RunMetrics {
        rows,
        trajectory,
        received: Vec::new(),
        noise,
        final_w,
        final_acc,
        wall,
        ops,
        server_ops: ops,
        traffic: ChannelStats::default(),
        comm_nanos: 0,
        server_comm_nanos: 0,
        workers: Vec::new(),
        log: Vec::new(),
        message_counts: Kind::ALL.iter().map(|&k| (k, 0)).collect(),
    })
}

