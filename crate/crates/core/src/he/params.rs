use std::fmt;
use std::sync::Arc;

use crate::arith::{ntt_primes_below, ntt_primes_near};
use crate::ring::{ModulusChain, RingContext, RingError};

/// Inputs for building a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    /// Ring degree N (power of two).
    pub degree: usize,
    /// Multiplicative depth L; the chain holds L + 1 primes.
    pub depth: usize,
    /// log2 of the encoding scale.
    pub log_scale: u32,
    /// Bit size of the base prime that survives to level 0.
    pub base_bits: u32,
    /// Bit size of each key-switching prime.
    pub special_bits: u32,
    pub sigma: f64,
    /// Largest slot magnitude accepted by the encoder.
    pub slot_bound: f64,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, degree: usize, depth: usize) -> Self {
        Self {
            name: name.into(),
            degree,
            depth,
            log_scale: 30,
            base_bits: 50,
            special_bits: 60,
            sigma: 3.2,
            slot_bound: 64.0,
        }
    }
}

/// Ring degree, modulus chain, scales and noise parameters.
///
/// Every level `l` has a canonical scale `scale_at(l)`: the top level uses
/// exactly `2^log_scale` and each lower level is `scale_at(l)^2 / q_l`, so
/// that multiplying two level-`l` ciphertexts and rescaling lands exactly on
/// the next canonical scale. Primes are chosen greedily to keep these near
/// `2^log_scale`; the drift grows with depth and reaches about 0.2% at the
/// bottom of a depth-24 chain.
#[derive(Clone)]
pub struct HeParams {
    spec: ParamSpec,
    ctx: Arc<RingContext>,
    scales: Vec<f64>,
}

impl fmt::Debug for HeParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HeParams")
            .field("name", &self.spec.name)
            .field("degree", &self.spec.degree)
            .field("depth", &self.spec.depth)
            .field("log_scale", &self.spec.log_scale)
            .field("chain_bits", &self.ctx.chain().total_bits())
            .field("special_primes", &self.ctx.special_primes().len())
            .finish()
    }
}

impl HeParams {
    pub fn new(spec: ParamSpec) -> Result<Self, RingError> {
        let n = spec.degree;
        if spec.depth == 0 {
            return Err(RingError::InvalidChain("depth must be at least 1".into()));
        }
        if spec.sigma <= 0.0 {
            return Err(RingError::InvalidChain("sigma must be positive".into()));
        }
        let delta = 2f64.powi(spec.log_scale as i32);
        let base = ntt_primes_below(spec.base_bits, n, 1, &[])[0];
        let mut used = vec![base];
        let mut rescale = vec![0u64; spec.depth + 1];
        let mut scales = vec![0f64; spec.depth + 1];
        scales[spec.depth] = delta;
        for l in (1..=spec.depth).rev() {
            // pick q_l so that the next scale s_l^2 / q_l lands back near delta
            let target = scales[l] * scales[l] / delta;
            let q = ntt_primes_near(target.round() as u64, n, 1, &used)[0];
            used.push(q);
            rescale[l] = q;
            scales[l - 1] = scales[l] * scales[l] / q as f64;
        }
        let mut primes = vec![base];
        primes.extend_from_slice(&rescale[1..]);
        let chain = ModulusChain::new(primes, n)?;
        let q_bits = chain.total_bits();
        let per = (spec.special_bits - 1) as f64;
        let count = ((q_bits + 4.0) / per).ceil() as usize;
        let special = ntt_primes_below(spec.special_bits, n, count, &used);
        let ctx = RingContext::new(n, chain, special)?;
        Ok(Self { spec, ctx, scales })
    }

    /// N = 8192, depth 6: the bootstrap-free distributed profile.
    pub fn distributed() -> Self {
        Self::new(ParamSpec::new("distributed-L6", 8192, 6)).expect("valid profile")
    }

    /// N = 8192, depth 24: the deep-modulus centralized profile.
    pub fn centralized() -> Self {
        Self::new(ParamSpec::new("centralized-L24", 8192, 24)).expect("valid profile")
    }

    /// Named profile lookup (`distributed`, `centralized`, `toy`), optionally
    /// overriding the depth.
    pub fn profile(name: &str, depth: Option<usize>) -> Option<Self> {
        let spec = match name {
            "distributed" => ParamSpec::new("distributed", 8192, depth.unwrap_or(6)),
            "centralized" => ParamSpec::new("centralized", 8192, depth.unwrap_or(24)),
            "toy" => ParamSpec::new("toy", 1024, depth.unwrap_or(6)),
            _ => return None,
        };
        Self::new(spec).ok()
    }

    pub fn spec(&self) -> &ParamSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn ring(&self) -> &Arc<RingContext> {
        &self.ctx
    }

    pub fn degree(&self) -> usize {
        self.spec.degree
    }

    pub fn slots(&self) -> usize {
        self.spec.degree / 2
    }

    pub fn max_level(&self) -> usize {
        self.spec.depth
    }

    /// Nominal scale `2^log_scale`.
    pub fn scale(&self) -> f64 {
        self.scales[self.spec.depth]
    }

    pub fn scale_at(&self, level: usize) -> f64 {
        self.scales[level]
    }

    pub fn sigma(&self) -> f64 {
        self.spec.sigma
    }

    pub fn slot_bound(&self) -> f64 {
        self.spec.slot_bound
    }

    pub fn prime(&self, level: usize) -> u64 {
        self.ctx.chain().primes()[level]
    }

    pub fn chain_bits(&self) -> f64 {
        self.ctx.chain().total_bits()
    }

    pub fn special_count(&self) -> usize {
        self.ctx.special_primes().len()
    }
}
