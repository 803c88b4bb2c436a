use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::approx::eval_poly_weighted;
use crate::he::{HeBackend, HeError, HeParams};
use crate::packing::{enc_grad, enc_scores, PackLayout, D_ITER};
use crate::transport::{ChannelStats, Endpoint, Kind, Message};

use super::protocol::Payload;
use super::{Batches, EngineError, TrainConfig};

/// Lower levels kept per block besides the top one. One refresh window at
/// `l = 1` needs exactly two.
const CACHED_LEVELS: usize = 2;

/// A worker's encrypted training blocks plus its batch schedule.
pub struct EncShard<B: HeBackend> {
    layout: PackLayout,
    batches: Batches,
    top: Vec<B::Ciphertext>,
    top_level: usize,
    lower: VecDeque<(usize, Vec<Option<B::Ciphertext>>)>,
}

impl<B: HeBackend> EncShard<B> {
    pub fn new(he: &B, layout: PackLayout, blocks: Vec<B::Ciphertext>, batch_size: usize) -> Result<Self, EngineError> {
        if blocks.len() != layout.blocks() {
            return Err(EngineError::Protocol(format!(
                "{} blocks received, layout needs {}",
                blocks.len(),
                layout.blocks()
            )));
        }
        let top_level = blocks.first().map(|b| he.level(b)).unwrap_or(0);
        if blocks.iter().any(|b| he.level(b) != top_level) {
            return Err(EngineError::Protocol("shard blocks at different levels".into()));
        }
        Ok(Self {
            batches: Batches::new(layout.samples(), layout.rows(), batch_size),
            layout,
            top: blocks,
            top_level,
            lower: VecDeque::new(),
        })
    }

    pub fn layout(&self) -> &PackLayout {
        &self.layout
    }

    pub fn batches(&self) -> &Batches {
        &self.batches
    }

    /// Block `b` at `level`, dropping from the top copy on first use.
    fn block(&mut self, he: &B, b: usize, level: usize) -> Result<B::Ciphertext, HeError> {
        if level == self.top_level {
            return Ok(self.top[b].clone());
        }
        let pos = match self.lower.iter().position(|(l, _)| *l == level) {
            Some(p) => p,
            None => {
                if self.lower.len() == CACHED_LEVELS {
                    self.lower.pop_front();
                }
                self.lower.push_back((level, vec![None; self.top.len()]));
                self.lower.len() - 1
            }
        };
        let slot = &mut self.lower[pos].1[b];
        if slot.is_none() {
            *slot = Some(he.drop_to(&self.top[b], level)?);
        }
        Ok(slot.clone().expect("filled above"))
    }
}

/// One encrypted gradient step on batch `t`: scores, masked cubic scaled by
/// `eta / B`, aggregation, then `(1 - eta*lambda) w + G`. Uses `D_ITER`
/// levels.
pub fn enc_step<B: HeBackend>(
    he: &B,
    shard: &mut EncShard<B>,
    w: &B::Ciphertext,
    t: usize,
    cfg: &TrainConfig,
) -> Result<B::Ciphertext, EngineError> {
    let level = he.level(w);
    if level < D_ITER {
        return Err(HeError::DepthExhausted.into());
    }
    let layout = shard.layout.clone();
    let blocks = shard.batches.blocks_of(t);
    let count: usize = blocks.iter().map(|&b| layout.rows_in_block(b)).sum();
    let c = cfg.eta / count as f64;

    let mut coeffs = Vec::with_capacity(blocks.len());
    let mut low = Vec::with_capacity(blocks.len());
    for &b in &blocks {
        let data = shard.block(he, b, level)?;
        let scores = enc_scores(he, &data, w, &layout)?;
        let mut weights = vec![0.0; layout.slots()];
        for r in 0..layout.rows_in_block(b) {
            weights[layout.score_lane(r)] = c;
        }
        coeffs.push(eval_poly_weighted(he, &cfg.poly.coeffs, &scores, &weights)?);
        low.push(shard.block(he, b, level - 3)?);
    }
    let refs: Vec<&B::Ciphertext> = low.iter().collect();
    let g = enc_grad(he, &refs, &coeffs, &layout)?;
    let decayed = he.adjust_to(w, level - D_ITER, 1.0 - cfg.eta * cfg.lambda)?;
    Ok(he.add(&decayed, &g)?)
}

/// What a worker measured about its own run.
#[derive(Debug, Clone, Default)]
pub struct WorkerReport {
    pub id: u32,
    pub iterations: usize,
    pub refreshes: usize,
    pub ops: crate::he::OpSnapshot,
    pub io: ChannelStats,
    /// Ciphertext, key and payload (de)serialization.
    pub serde_nanos: u64,
    /// From receiving the shard to sending Done.
    pub wall: Duration,
}

struct Serde(u64);

impl Serde {
    fn time<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0 += start.elapsed().as_nanos() as u64;
        out
    }
}

/// Runs one worker to completion over `ep`: announce, receive the keys,
/// parameters and shard, then train with a refresh round trip every
/// `refresh_interval` local steps. Failures are reported to the server with
/// an Abort before being returned.
pub fn worker_run<B: HeBackend, E: Endpoint + ?Sized>(id: u32, ep: &mut E) -> Result<WorkerReport, EngineError> {
    let out = run::<B, E>(id, ep);
    if let Err(e) = &out {
        if !matches!(e, EngineError::Aborted(_) | EngineError::Transport(_)) {
            let reason = Payload::Abort { reason: e.to_string() }.encode();
            let _ = ep.send(&Message::new(Kind::Abort, id, 0, reason));
        }
    }
    out
}

fn recv_payload<E: Endpoint + ?Sized>(ep: &mut E, kind: Kind, serde: &mut Serde) -> Result<(Message, Payload), EngineError> {
    let msg = ep.recv()?;
    let payload = serde.time(|| Payload::decode(msg.kind, &msg.payload))?;
    if let Payload::Abort { reason } = payload {
        return Err(EngineError::Aborted(reason));
    }
    if msg.kind != kind {
        return Err(EngineError::Protocol(format!("expected {kind:?}, received {:?}", msg.kind)));
    }
    Ok((msg, payload))
}

fn run<B: HeBackend, E: Endpoint + ?Sized>(id: u32, ep: &mut E) -> Result<WorkerReport, EngineError> {
    let mut serde = Serde(0);
    ep.send(&Message::new(Kind::Hello, id, 0, Vec::new()))?;

    let (_, init) = recv_payload(ep, Kind::InitParams, &mut serde)?;
    let Payload::InitParams { spec, cfg, public, w } = init else {
        unreachable!("kind checked")
    };
    let params = HeParams::new(spec).map_err(HeError::from)?;
    cfg.validate(Some(&params))?;
    let he = serde.time(|| B::import_public(&params, &public))?;
    let mut w = serde.time(|| he.from_bytes(&w))?;

    let (_, shard) = recv_payload(ep, Kind::Shard, &mut serde)?;
    let Payload::Shard { samples, dim, blocks } = shard else {
        unreachable!("kind checked")
    };
    let layout = PackLayout::plan(samples as usize, dim as usize, params.slots())?;
    let blocks = serde.time(|| blocks.iter().map(|b| he.from_bytes(b)).collect::<Result<Vec<_>, _>>())?;
    let mut shard = EncShard::new(&he, layout, blocks, cfg.batch_size)?;

    let start = Instant::now();
    let l = cfg.refresh_interval;
    let mut t = 0;
    let mut refreshes = 0;
    for round in 0..cfg.rounds() {
        for _ in 0..l {
            w = enc_step(&he, &mut shard, &w, t, &cfg)?;
            t += 1;
        }
        let ct = serde.time(|| he.to_bytes(&w));
        let body = serde.time(|| {
            Payload::RefreshRequest {
                iter: t as u64,
                ops: he.stats().snapshot().counts(),
                ct,
            }
            .encode()
        });
        ep.send(&Message::new(Kind::RefreshRequest, id, round as u64, body))?;
        let (msg, reply) = recv_payload(ep, Kind::RefreshReply, &mut serde)?;
        if msg.round != round as u64 || msg.worker != id {
            return Err(EngineError::Protocol(format!(
                "reply for worker {} round {} while worker {id} waits on round {round}",
                msg.worker, msg.round
            )));
        }
        let Payload::RefreshReply { ct } = reply else {
            unreachable!("kind checked")
        };
        w = serde.time(|| he.from_bytes(&ct))?;
        refreshes += 1;
    }
    while t < cfg.iterations {
        w = enc_step(&he, &mut shard, &w, t, &cfg)?;
        t += 1;
    }
    let ct = serde.time(|| he.to_bytes(&w));
    let body = serde.time(|| {
        Payload::Done {
            iter: t as u64,
            ops: he.stats().snapshot().counts(),
            ct,
        }
        .encode()
    });
    ep.send(&Message::new(Kind::Done, id, cfg.rounds() as u64, body))?;
    Ok(WorkerReport {
        id,
        iterations: t,
        refreshes,
        ops: he.stats().snapshot(),
        io: ep.stats(),
        serde_nanos: serde.0,
        wall: start.elapsed(),
    })
}
