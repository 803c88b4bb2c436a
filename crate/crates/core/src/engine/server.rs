use std::hash::{DefaultHasher, Hasher};
use std::net::TcpListener;
use std::thread;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

use crate::data::{skewed_partition, Dataset};
use crate::he::{HeBackend, OpKind, OpSnapshot};
use crate::packing::{pack_matrix, PackLayout};
use crate::transport::{accept_workers, inproc_pair, ChannelStats, Endpoint, Kind, Message, Options, Tcp};

use super::protocol::Payload;
use super::{aggregate, worker_run, EngineError, RoundRow, RunMetrics, TrainConfig, WorkerReport};
use crate::he::HeParams;

/// Splits the training indices into `workers` shards (label skew as in
/// [`skewed_partition`]) and shuffles each shard under the seed. Shard
/// order is the batch order.
pub fn partition(ds: &Dataset, workers: usize, skew: f64, seed: u64) -> Vec<Vec<usize>> {
    let mut shards = skewed_partition(ds, &ds.train, workers, skew, seed);
    for (k, s) in shards.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1)));
        s.shuffle(&mut rng);
    }
    shards
}

/// One message as seen by the server, for comparing runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub outgoing: bool,
    pub kind: Kind,
    pub worker: u32,
    pub round: u64,
    pub len: usize,
    pub digest: u64,
}

impl LogEntry {
    fn new(outgoing: bool, m: &Message) -> Self {
        let mut h = DefaultHasher::new();
        h.write(&m.payload);
        Self {
            outgoing,
            kind: m.kind,
            worker: m.worker,
            round: m.round,
            len: m.payload.len(),
            digest: h.finish(),
        }
    }
}

/// Parameter-server state after initialization.
pub struct Server<B: HeBackend, E: Endpoint> {
    he: B,
    sk: B::SecretKey,
    rng: ChaCha20Rng,
    cfg: TrainConfig,
    dim: usize,
    endpoints: Vec<E>,
    log: Vec<LogEntry>,
    serde_nanos: u64,
    started: Instant,
}

impl<B: HeBackend, E: Endpoint> Server<B, E> {
    fn send(&mut self, worker: usize, kind: Kind, round: u64, payload: Vec<u8>) -> Result<(), EngineError> {
        let msg = Message::new(kind, worker as u32, round, payload);
        self.log.push(LogEntry::new(true, &msg));
        self.endpoints[worker].send(&msg)?;
        Ok(())
    }

    /// Receives from `worker` and checks the sender, kind and round.
    fn recv(&mut self, worker: usize, kind: Kind, round: u64) -> Result<Payload, EngineError> {
        let msg = self.endpoints[worker].recv()?;
        self.log.push(LogEntry::new(false, &msg));
        let start = Instant::now();
        let payload = Payload::decode(msg.kind, &msg.payload)?;
        self.serde_nanos += start.elapsed().as_nanos() as u64;
        if let Payload::Abort { reason } = payload {
            return Err(EngineError::Aborted(format!("worker {worker}: {reason}")));
        }
        if msg.kind != kind || msg.worker as usize != worker || msg.round != round {
            return Err(EngineError::Protocol(format!(
                "expected {kind:?} round {round} from worker {worker}, received {:?} round {} from worker {}",
                msg.kind, msg.round, msg.worker
            )));
        }
        Ok(payload)
    }

    /// Decrypts a received parameter ciphertext to its first row.
    fn open(&mut self, ct: &[u8]) -> Result<(Vec<f64>, f64), EngineError> {
        let start = Instant::now();
        let ct = self.he.from_bytes(ct)?;
        self.serde_nanos += start.elapsed().as_nanos() as u64;
        let noise = self.he.noise_estimate(&ct);
        let mut v = self.he.decrypt(&self.sk, &ct)?;
        v.truncate(self.dim);
        Ok((v, noise))
    }

    pub fn public(&self) -> &B {
        &self.he
    }

    pub fn secret(&self) -> &B::SecretKey {
        &self.sk
    }
}

/// Generates keys, waits for every worker's Hello, then sends each worker
/// the parameters, public keys, `Enc(0)` and its packed, encrypted shard.
pub fn server_init<B: HeBackend, E: Endpoint>(
    ds: &Dataset,
    cfg: &TrainConfig,
    params: &HeParams,
    shards: &[Vec<usize>],
    endpoints: Vec<E>,
) -> Result<Server<B, E>, EngineError> {
    cfg.validate(Some(params))?;
    if shards.len() != cfg.workers || endpoints.len() != cfg.workers {
        return Err(EngineError::Config(format!(
            "{} workers configured, {} shards and {} endpoints given",
            cfg.workers,
            shards.len(),
            endpoints.len()
        )));
    }
    if let Some(k) = shards.iter().position(|s| s.is_empty()) {
        return Err(EngineError::Config(format!("shard {k} is empty")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (he, sk) = B::keygen(params, &mut rng);
    let mut srv = Server {
        he,
        sk,
        rng,
        cfg: cfg.clone(),
        dim: ds.dim,
        endpoints,
        log: Vec::new(),
        serde_nanos: 0,
        started: Instant::now(),
    };
    for k in 0..cfg.workers {
        srv.recv(k, Kind::Hello, 0)?;
    }

    // everything is encrypted before the first send so that workers start
    // training at the same time
    let top = params.max_level();
    let slots = params.slots();
    let public = srv.he.export_public();
    let mut outgoing = Vec::with_capacity(cfg.workers);
    for shard in shards {
        let layout = PackLayout::plan(shard.len(), ds.dim, slots)?;
        let w0 = srv.he.encrypt(&layout.replicate(&vec![0.0; ds.dim])?, top, &mut srv.rng)?;
        let (x, y) = ds.gather(shard);
        let packed = pack_matrix(&x, &y, &layout)?;
        let mut blocks = Vec::with_capacity(packed.data.len());
        for data in &packed.data {
            blocks.push(srv.he.encrypt(data, top, &mut srv.rng)?);
        }
        let start = Instant::now();
        let init = Payload::InitParams {
            spec: params.spec().clone(),
            cfg: cfg.clone(),
            public: public.clone(),
            w: srv.he.to_bytes(&w0),
        }
        .encode();
        let shard = Payload::Shard {
            samples: shard.len() as u64,
            dim: ds.dim as u32,
            blocks: blocks.iter().map(|b| srv.he.to_bytes(b)).collect(),
        }
        .encode();
        srv.serde_nanos += start.elapsed().as_nanos() as u64;
        outgoing.push((init, shard));
    }
    srv.started = Instant::now();
    for (k, (init, shard)) in outgoing.into_iter().enumerate() {
        srv.send(k, Kind::InitParams, 0, init)?;
        srv.send(k, Kind::Shard, 0, shard)?;
    }
    Ok(srv)
}

/// Synchronous refresh rounds: collect every worker's parameters, average,
/// evaluate, re-encrypt once at the top level and reply to all. Finishes
/// with the workers' Done messages, whose average is the final model.
pub fn server_loop<B: HeBackend, E: Endpoint>(srv: &mut Server<B, E>, ds: &Dataset) -> Result<RunMetrics, EngineError> {
    let cfg = srv.cfg.clone();
    let w_count = cfg.workers;
    let l = cfg.refresh_interval;
    let top = srv.he.params().max_level();
    let layout = PackLayout::plan(1, srv.dim, srv.he.params().slots())?;
    let mut master = vec![0.0; srv.dim];
    let mut peer_ops = vec![[0u64; 7]; w_count];
    let mut rows = Vec::new();
    let mut trajectory = Vec::new();
    let mut noise = Vec::new();
    let mut history = Vec::new();

    let traffic = |srv: &Server<B, E>| {
        srv.endpoints.iter().fold(ChannelStats::default(), |a, e| a.merge(&e.stats()))
    };
    let all_ops = |srv: &Server<B, E>, peer: &[[u64; 7]]| {
        peer.iter()
            .fold(srv.he.stats().snapshot().counts_only(), |a, c| a.merge(&OpSnapshot::from_counts(*c)))
    };

    for round in 0..cfg.rounds() {
        let mut received = Vec::with_capacity(w_count);
        let mut worst = 0.0f64;
        for k in 0..w_count {
            let Payload::RefreshRequest { iter, ops, ct } = srv.recv(k, Kind::RefreshRequest, round as u64)? else {
                unreachable!("kind checked")
            };
            if iter as usize != (round + 1) * l {
                return Err(EngineError::Protocol(format!(
                    "worker {k} reports iteration {iter} in round {round}"
                )));
            }
            peer_ops[k] = ops;
            let (v, n) = srv.open(&ct)?;
            worst = worst.max(n);
            received.push(v);
        }
        aggregate(&mut master, &received)?;
        history.push(received);
        let acc = ds.accuracy(&master, &ds.val);

        let refresh_start = Instant::now();
        let fresh = srv.he.encrypt(&layout.replicate(&master)?, top, &mut srv.rng)?;
        srv.he
            .stats()
            .record(OpKind::Refresh, refresh_start.elapsed().as_nanos() as u64);
        let start = Instant::now();
        let body = Payload::RefreshReply {
            ct: srv.he.to_bytes(&fresh),
        }
        .encode();
        srv.serde_nanos += start.elapsed().as_nanos() as u64;
        for k in 0..w_count {
            srv.send(k, Kind::RefreshReply, round as u64, body.clone())?;
        }

        rows.push(RoundRow::new(
            round + 1,
            (round + 1) * l,
            srv.started.elapsed(),
            acc,
            worst,
            &all_ops(srv, &peer_ops),
            &traffic(srv),
        ));
        trajectory.push(master.clone());
        noise.push(worst);
    }

    let mut finals = Vec::with_capacity(w_count);
    let mut worst = 0.0f64;
    for k in 0..w_count {
        let Payload::Done { iter, ops, ct } = srv.recv(k, Kind::Done, cfg.rounds() as u64)? else {
            unreachable!("kind checked")
        };
        if iter as usize != cfg.iterations {
            return Err(EngineError::Protocol(format!(
                "worker {k} finished after {iter} of {} iterations",
                cfg.iterations
            )));
        }
        peer_ops[k] = ops;
        let (v, n) = srv.open(&ct)?;
        worst = worst.max(n);
        finals.push(v);
    }
    let mut final_w = master;
    aggregate(&mut final_w, &finals)?;
    history.push(finals);
    let wall = srv.started.elapsed();
    let final_acc = ds.accuracy(&final_w, &ds.val);
    if cfg.iterations % l != 0 {
        rows.push(RoundRow::new(
            cfg.rounds() + 1,
            cfg.iterations,
            wall,
            final_acc,
            worst,
            &all_ops(srv, &peer_ops),
            &traffic(srv),
        ));
    }
    trajectory.push(final_w.clone());
    noise.push(worst);

    let server_ops = srv.he.stats().snapshot();
    let io = traffic(srv);
    let mut message_counts: Vec<(Kind, u64)> = Kind::ALL.iter().map(|&k| (k, 0)).collect();
    for e in &srv.log {
        message_counts.iter_mut().find(|(k, _)| *k == e.kind).expect("listed kind").1 += 1;
    }
    Ok(RunMetrics {
        rows,
        trajectory,
        received: history,
        noise,
        final_w,
        final_acc,
        wall,
        ops: peer_ops
            .iter()
            .fold(server_ops, |a, c| a.merge(&OpSnapshot::from_counts(*c))),
        server_ops,
        traffic: io,
        comm_nanos: io.nanos() + srv.serde_nanos,
        server_comm_nanos: io.nanos() + srv.serde_nanos,
        workers: Vec::new(),
        log: std::mem::take(&mut srv.log),
        message_counts,
    })
}

/// Message carrier between the server and its workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Carrier {
    InProc,
    /// Loopback TCP on an ephemeral port.
    Tcp,
}

impl std::str::FromStr for Carrier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inproc" => Ok(Carrier::InProc),
            "tcp" => Ok(Carrier::Tcp),
            other => Err(format!("unknown carrier '{other}' (expected inproc or tcp)")),
        }
    }
}

/// Runs server and workers (as threads) to completion over `carrier` and
/// merges every participant's measurements into the returned metrics.
pub fn run_distributed<B: HeBackend>(
    ds: &Dataset,
    cfg: &TrainConfig,
    params: &HeParams,
    shards: &[Vec<usize>],
    carrier: Carrier,
    opts: Options,
) -> Result<RunMetrics, EngineError> {
    cfg.validate(Some(params))?;
    let (served, reports) = match carrier {
        Carrier::InProc => {
            let (ours, theirs): (Vec<_>, Vec<_>) = (0..cfg.workers).map(|_| inproc_pair(opts)).unzip();
            thread::scope(|s| {
                let handles: Vec<_> = theirs
                    .into_iter()
                    .enumerate()
                    .map(|(k, mut ep)| s.spawn(move || worker_run::<B, _>(k as u32, &mut ep)))
                    .collect();
                let served = serve::<B, _>(ds, cfg, params, shards, ours);
                (served, join(handles))
            })
        }
        Carrier::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0").map_err(crate::transport::TransportError::from)?;
            let addr = listener.local_addr().map_err(crate::transport::TransportError::from)?;
            thread::scope(|s| {
                let handles: Vec<_> = (0..cfg.workers)
                    .map(|k| {
                        s.spawn(move || {
                            let mut ep = Tcp::connect(addr, opts)?;
                            worker_run::<B, _>(k as u32, &mut ep)
                        })
                    })
                    .collect();
                let served = accept_workers(&listener, cfg.workers, opts)
                    .map_err(EngineError::from)
                    .and_then(|eps| serve::<B, _>(ds, cfg, params, shards, eps));
                (served, join(handles))
            })
        }
    };
    // a worker's own failure explains a server-side abort better, but a
    // worker that only saw its channel close is echoing the server's error
    let (mut m, reports) = match (served, reports) {
        (_, Err(e)) if !matches!(e, EngineError::Transport(_)) => return Err(e),
        (Err(e), _) | (Ok(_), Err(e)) => return Err(e),
        (Ok(m), Ok(r)) => (m, r),
    };
    m.ops = reports.iter().fold(m.server_ops, |a, r| a.merge(&r.ops));
    m.comm_nanos = m.server_comm_nanos + reports.iter().map(|r| r.io.nanos() + r.serde_nanos).sum::<u64>();
    m.workers = reports;
    Ok(m)
}

fn serve<B: HeBackend, E: Endpoint>(
    ds: &Dataset,
    cfg: &TrainConfig,
    params: &HeParams,
    shards: &[Vec<usize>],
    endpoints: Vec<E>,
) -> Result<RunMetrics, EngineError> {
    // dropping the server on error closes every channel and unblocks the workers
    let mut srv = server_init::<B, E>(ds, cfg, params, shards, endpoints)?;
    server_loop(&mut srv, ds)
}

fn join(handles: Vec<thread::ScopedJoinHandle<'_, Result<WorkerReport, EngineError>>>) -> Result<Vec<WorkerReport>, EngineError> {
    let mut out = Vec::with_capacity(handles.len());
    let mut errors = Vec::new();
    for h in handles {
        match h.join().expect("worker thread panicked") {
            Ok(r) => out.push(r),
            Err(e) => errors.push(e),
        }
    }
    // a closed channel is usually the echo of another worker's failure
    let pick = errors.iter().position(|e| !matches!(e, EngineError::Transport(_))).unwrap_or(0);
    match errors.len() {
        0 => Ok(out),
        _ => Err(errors.swap_remove(pick)),
    }
}
