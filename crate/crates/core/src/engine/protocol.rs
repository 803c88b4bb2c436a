//! Payload bodies of the protocol messages.

use crate::approx::{LossKind, PolyApprox};
use crate::he::ParamSpec;
use crate::transport::Kind;
use crate::wire::{Reader, WireError, Writer};

use super::TrainConfig;

/// Serialization of [`ParamSpec`], so workers rebuild the same chain.
pub struct SpecWire;

impl SpecWire {
    pub fn write(w: &mut Writer, s: &ParamSpec) {
        w.bytes(s.name.as_bytes())
            .u64(s.degree as u64)
            .u64(s.depth as u64)
            .u32(s.log_scale)
            .u32(s.base_bits)
            .u32(s.special_bits)
            .f64(s.sigma)
            .f64(s.slot_bound);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<ParamSpec, WireError> {
        let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|e| WireError::invalid("profile name", e.to_string()))?;
        Ok(ParamSpec {
            name,
            degree: r.u64()? as usize,
            depth: r.u64()? as usize,
            log_scale: r.u32()?,
            base_bits: r.u32()?,
            special_bits: r.u32()?,
            sigma: r.f64()?,
            slot_bound: r.f64()?,
        })
    }
}

fn write_cfg(w: &mut Writer, c: &TrainConfig) {
    let loss = LossKind::ALL.iter().position(|k| *k == c.loss).expect("listed loss") as u8;
    w.f64(c.eta)
        .f64(c.lambda)
        .u64(c.refresh_interval as u64)
        .u64(c.iterations as u64)
        .u64(c.batch_size as u64)
        .u8(loss);
    for a in c.poly.coeffs {
        w.f64(a);
    }
    w.f64(c.poly.interval.0)
        .f64(c.poly.interval.1)
        .f64(c.poly.residual)
        .u64(c.workers as u64)
        .u64(c.seed);
}

fn read_cfg(r: &mut Reader<'_>) -> Result<TrainConfig, WireError> {
    let eta = r.f64()?;
    let lambda = r.f64()?;
    let refresh_interval = r.u64()? as usize;
    let iterations = r.u64()? as usize;
    let batch_size = r.u64()? as usize;
    let tag = r.u8()?;
    let loss = *LossKind::ALL
        .get(tag as usize)
        .ok_or_else(|| WireError::invalid("loss", tag.to_string()))?;
    let coeffs = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let interval = (r.f64()?, r.f64()?);
    let residual = r.f64()?;
    Ok(TrainConfig {
        eta,
        lambda,
        refresh_interval,
        iterations,
        batch_size,
        loss,
        poly: PolyApprox {
            coeffs,
            interval,
            residual,
        },
        workers: r.u64()? as usize,
        seed: r.u64()?,
    })
}

/// Decoded message body. Ciphertexts and keys travel as opaque backend bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello,
    InitParams {
        spec: ParamSpec,
        cfg: TrainConfig,
        public: Vec<u8>,
        /// Encrypted initial parameters.
        w: Vec<u8>,
    },
    Shard {
        samples: u64,
        dim: u32,
        blocks: Vec<Vec<u8>>,
    },
    RefreshRequest {
        /// Local iterations completed so far.
        iter: u64,
        /// Cumulative operation counts of the sender.
        ops: [u64; 7],
        ct: Vec<u8>,
    },
    RefreshReply {
        ct: Vec<u8>,
    },
    Done {
        iter: u64,
        ops: [u64; 7],
        ct: Vec<u8>,
    },
    Abort {
        reason: String,
    },
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Hello => Kind::Hello,
            Payload::InitParams { .. } => Kind::InitParams,
            Payload::Shard { .. } => Kind::Shard,
            Payload::RefreshRequest { .. } => Kind::RefreshRequest,
            Payload::RefreshReply { .. } => Kind::RefreshReply,
            Payload::Done { .. } => Kind::Done,
            Payload::Abort { .. } => Kind::Abort,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Payload::Hello => {}
            Payload::InitParams { spec, cfg, public, w: ct } => {
                SpecWire::write(&mut w, spec);
                write_cfg(&mut w, cfg);
                w.bytes(public).bytes(ct);
            }
            Payload::Shard { samples, dim, blocks } => {
                w.u64(*samples).u32(*dim).u32(blocks.len() as u32);
                for b in blocks {
                    w.bytes(b);
                }
            }
            Payload::RefreshRequest { iter, ops, ct } | Payload::Done { iter, ops, ct } => {
                w.u64(*iter).u64_slice(ops).bytes(ct);
            }
            Payload::RefreshReply { ct } => {
                w.bytes(ct);
            }
            Payload::Abort { reason } => {
                w.bytes(reason.as_bytes());
            }
        }
        w.finish()
    }

    pub fn decode(kind: Kind, bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let out = match kind {
            Kind::Hello => Payload::Hello,
            Kind::InitParams => Payload::InitParams {
                spec: SpecWire::read(&mut r)?,
                cfg: read_cfg(&mut r)?,
                public: r.bytes()?.to_vec(),
                w: r.bytes()?.to_vec(),
            },
            Kind::Shard => {
                let samples = r.u64()?;
                let dim = r.u32()?;
                let count = r.u32()? as usize;
                let mut blocks = Vec::with_capacity(count.min(1 << 16));
                for _ in 0..count {
                    blocks.push(r.bytes()?.to_vec());
                }
                Payload::Shard { samples, dim, blocks }
            }
            Kind::RefreshRequest | Kind::Done => {
                let iter = r.u64()?;
                let ops: [u64; 7] = r.u64_vec(7)?.try_into().expect("seven counts");
                let ct = r.bytes()?.to_vec();
                if kind == Kind::Done {
                    Payload::Done { iter, ops, ct }
                } else {
                    Payload::RefreshRequest { iter, ops, ct }
                }
            }
            Kind::RefreshReply => Payload::RefreshReply {
                ct: r.bytes()?.to_vec(),
            },
            Kind::Abort => Payload::Abort {
                reason: String::from_utf8_lossy(r.bytes()?).into_owned(),
            },
        };
        r.finish()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payloads_round_trip() {
        let cfg = TrainConfig::new(LossKind::Huber);
        let cases = vec![
            Payload::Hello,
            Payload::InitParams {
                spec: ParamSpec::new("toy", 1024, 6),
                cfg,
                public: vec![1, 2, 3],
                w: vec![9; 40],
            },
            Payload::Shard {
                samples: 17,
                dim: 5,
                blocks: vec![vec![1], vec![], vec![2, 3]],
            },
            Payload::RefreshRequest {
                iter: 4,
                ops: [1, 2, 3, 4, 5, 6, 7],
                ct: vec![0xab; 12],
            },
            Payload::RefreshReply { ct: vec![7; 3] },
            Payload::Done {
                iter: 9,
                ops: [0; 7],
                ct: vec![],
            },
            Payload::Abort { reason: "depth".into() },
        ];
        for p in cases {
            let bytes = p.encode();
            assert_eq!(Payload::decode(p.kind(), &bytes).unwrap(), p);
            if !bytes.is_empty() {
                assert!(Payload::decode(p.kind(), &bytes[..bytes.len() - 1]).is_err());
            }
        }
        assert!(Payload::decode(Kind::Hello, &[0]).is_err());
    }
}
