//! Canonical-embedding encoder.
//!
//! Slot `j` of a plaintext polynomial `m` is `m(zeta^(5^j))` with
//! `zeta = exp(i*pi/N)`, so the automorphism `X -> X^5` rotates slots left by
//! one. Both directions run as one length-N complex FFT plus a twist.

use std::sync::Arc;

use num_traits::Zero;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{HeError, HeParams, Plaintext};
use crate::ring::Form;

pub struct Encoder {
    params: HeParams,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    // zeta^k for k in 0..N
    twist: Vec<Complex64>,
    // FFT bin holding slot j, and the bin holding its conjugate
    slot_bin: Vec<usize>,
    conj_bin: Vec<usize>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder").field("degree", &self.params.degree()).finish()
    }
}

impl Encoder {
    pub fn new(params: &HeParams) -> Self {
        let n = params.degree();
        let two_n = 2 * n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let twist = (0..n)
            .map(|k| Complex64::from_polar(1.0, std::f64::consts::PI * k as f64 / n as f64))
            .collect();
        let mut slot_bin = Vec::with_capacity(n / 2);
        let mut conj_bin = Vec::with_capacity(n / 2);
        let mut g = 1usize;
        for _ in 0..n / 2 {
            slot_bin.push((g - 1) / 2);
            conj_bin.push((two_n - g - 1) / 2);
            g = g * 5 % two_n;
        }
        Self {
            params: params.clone(),
            fwd,
            inv,
            twist,
            slot_bin,
            conj_bin,
        }
    }

    pub fn slots(&self) -> usize {
        self.params.slots()
    }

    /// Real coefficients (before scaling) whose canonical embedding is `values`,
    /// zero-padded to the slot count.
    pub fn embed_inverse(&self, values: &[Complex64]) -> Vec<f64> {
        let n = self.params.degree();
        let mut buf = vec![Complex64::zero(); n];
        for (j, &z) in values.iter().enumerate() {
            buf[self.slot_bin[j]] = z;
            buf[self.conj_bin[j]] = z.conj();
        }
        self.fwd.process(&mut buf);
        let inv_n = 1.0 / n as f64;
        buf.iter()
            .zip(&self.twist)
            .map(|(b, t)| (b * t.conj()).re * inv_n)
            .collect()
    }

    /// Canonical embedding of real coefficients.
    pub fn embed(&self, coeffs: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = coeffs
            .iter()
            .zip(&self.twist)
            .map(|(&c, t)| t * c)
            .collect();
        self.inv.process(&mut buf);
        self.slot_bin.iter().map(|&b| buf[b]).collect()
    }

    /// Encodes real slot values at `level` with that level's canonical scale.
    pub fn encode(&self, values: &[f64], level: usize) -> Result<Plaintext, HeError> {
        let complex: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.encode_complex(&complex, level, self.params.scale_at(level))
    }

    pub fn encode_complex(&self, values: &[Complex64], level: usize, scale: f64) -> Result<Plaintext, HeError> {
        if values.len() > self.slots() {
            return Err(HeError::TooManySlots {
                got: values.len(),
                slots: self.slots(),
            });
        }
        if level > self.params.max_level() {
            return Err(HeError::LevelOutOfRange {
                level,
                max: self.params.max_level(),
            });
        }
        let bound = self.params.slot_bound();
        if let Some(v) = values.iter().find(|z| !(z.norm() <= bound)) {
            return Err(HeError::EncodingOverflow(format!("slot value {v} exceeds bound {bound}")));
        }
        let ctx = self.params.ring();
        let half_q0 = ctx.modulus(0).value() as f64 / 2.0;
        let coeffs = self.embed_inverse(values);
        let mut ints = Vec::with_capacity(coeffs.len());
        for c in coeffs {
            let x = (c * scale).round();
            if !(x.abs() < half_q0) {
                return Err(HeError::EncodingOverflow(format!(
                    "coefficient {x:e} exceeds half the base modulus"
                )));
            }
            ints.push(x as i64);
        }
        let poly = ctx.ntt_forward(&ctx.from_signed(&ints, level)?)?;
        let max_abs = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Ok(Plaintext {
            poly,
            scale,
            level,
            magnitude: max_abs,
        })
    }

    /// Decodes the real parts of all slots.
    pub fn decode(&self, pt: &Plaintext) -> Vec<f64> {
        self.decode_complex(pt).into_iter().map(|z| z.re).collect()
    }

    pub fn decode_complex(&self, pt: &Plaintext) -> Vec<Complex64> {
        let ctx = self.params.ring();
        let ints = ctx.centered_base(&pt.poly);
        let inv_scale = 1.0 / pt.scale;
        let coeffs: Vec<f64> = ints.iter().map(|&c| c as f64 * inv_scale).collect();
        self.embed(&coeffs)
    }

    /// Plaintext polynomial whose every coefficient is zero, for comparisons.
    pub fn is_zero(pt: &Plaintext) -> bool {
        pt.poly.is_zero() && pt.poly.form() == Form::Evaluation
    }
}
