//! Analytic upper bounds on decryption error, in slot units.
//!
//! A noise polynomial whose coefficients have variance `V` contributes a slot
//! error with variance `N * V`. Sums of independent rounding terms are close to
//! gaussian in every slot and get `6 * sqrt(N * V)`. A ring product of two
//! small polynomials (`v * e`, `e1 * s`, key error times digits) is, per slot,
//! a product of two near-gaussian values whose tail decays like `exp(-t)`
//! instead of `exp(-t^2 / 2)`; those terms get `11 * sqrt(N * V)`, which keeps
//! the per-slot failure probability near `1e-9`. Bounds are divided by the
//! scale they live at. Per-slot bounds propagate through ciphertext arithmetic
//! in [`SlotBounds`].

use super::{HeError, HeParams};

const GAUSS_TAIL: f64 = 6.0;
const PRODUCT_TAIL: f64 = 11.0;

/// Primitive noise terms for one parameter set.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    n: f64,
    sigma: f64,
    special_count: f64,
    /// log2(Q_l / P) for each level.
    log_ratio: Vec<f64>,
}

impl NoiseModel {
    pub fn new(params: &HeParams) -> Self {
        let primes = params.ring().chain().primes();
        let log_p: f64 = params.ring().special_primes().iter().map(|&p| (p as f64).log2()).sum();
        let mut acc = 0.0;
        let log_ratio = primes
            .iter()
            .map(|&q| {
                acc += (q as f64).log2();
                acc - log_p
            })
            .collect();
        Self {
            n: params.degree() as f64,
            sigma: params.sigma(),
            special_count: params.special_count() as f64,
            log_ratio,
        }
    }

    fn bound(&self, var: f64, scale: f64) -> f64 {
        GAUSS_TAIL * (self.n * var).sqrt() / scale
    }

    fn product_bound(&self, var: f64, scale: f64) -> f64 {
        PRODUCT_TAIL * (self.n * var).sqrt() / scale
    }

    /// Fresh public-key encryption at `scale`, including encoding round-off.
    pub fn fresh(&self, scale: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        // v*e + e1*s with ternary v, s (variance 2/3), then e0 and encoding
        self.product_bound(4.0 / 3.0 * self.n * s2, scale) + self.bound(s2 + 1.0 / 12.0, scale)
    }

    /// Rounding a real coefficient vector to integers at `scale`.
    pub fn encode(&self, scale: f64) -> f64 {
        self.bound(1.0 / 12.0, scale)
    }

    /// Rounding during a rescale, expressed at the output scale.
    pub fn rescale(&self, scale: f64) -> f64 {
        // r0 + r1*s with r0, r1 uniform in [-1/2, 1/2]
        self.bound(1.0 / 12.0, scale) + self.product_bound(2.0 * self.n / 3.0 / 12.0, scale)
    }

    /// Key switching at `level`, expressed at the ciphertext scale at that point.
    pub fn key_switch(&self, level: usize, scale: f64) -> f64 {
        let k = level as f64 + 2.0;
        let ratio = 2f64.powf(self.log_ratio[level]);
        // fast base conversion leaves an input in [0, (l+2) Q); its product with the
        // key error is divided by P. ModDown then leaves an error in [0, K] per part.
        let var_prod = self.n * (k * ratio).powi(2) * self.sigma * self.sigma / 3.0;
        let var_round = (1.0 + 2.0 * self.n / 3.0) * self.special_count * self.special_count;
        self.product_bound(var_prod + var_round, scale)
    }
}

/// Per-slot upper bounds on the error and on the magnitude of the exact value.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBounds {
    pub noise: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl SlotBounds {
    pub fn uniform(slots: usize, noise: f64, magnitude: f64) -> Self {
        Self {
            noise: vec![noise; slots],
            magnitude: vec![magnitude; slots],
        }
    }

    /// Bounds for freshly encoded `values` (zero-padded to `slots`).
    pub fn fresh(slots: usize, values: &[f64], noise: f64) -> Self {
        let mut magnitude = vec![0.0; slots];
        for (m, v) in magnitude.iter_mut().zip(values) {
            *m = v.abs();
        }
        Self {
            noise: vec![noise; slots],
            magnitude,
        }
    }

    pub fn max_noise(&self) -> f64 {
        self.noise.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude.iter().copied().fold(0.0, f64::max)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            noise: zip_map(&self.noise, &other.noise, |a, b| a + b),
            magnitude: zip_map(&self.magnitude, &other.magnitude, |a, b| a + b),
        }
    }

    pub fn mul(&self, other: &Self, extra: f64) -> Self {
        let noise = (0..self.noise.len())
            .map(|j| {
                let (ea, eb) = (self.noise[j], other.noise[j]);
                let (ma, mb) = (self.magnitude[j], other.magnitude[j]);
                ma * eb + mb * ea + ea * eb + extra
            })
            .collect();
        Self {
            noise,
            magnitude: zip_map(&self.magnitude, &other.magnitude, |a, b| a * b),
        }
    }

    /// Product with plaintext `values` encoded with error `encode_err`.
    pub fn mul_plain(&self, values: &[f64], encode_err: f64, extra: f64) -> Self {
        let p = |j: usize| values.get(j).map_or(0.0, |v| v.abs());
        let noise = (0..self.noise.len())
            .map(|j| p(j) * self.noise[j] + (self.magnitude[j] + self.noise[j]) * encode_err + extra)
            .collect();
        let magnitude = (0..self.noise.len()).map(|j| self.magnitude[j] * p(j)).collect();
        Self { noise, magnitude }
    }

    /// Product with a scalar represented with error at most `delta`.
    pub fn mul_scalar(&self, c: f64, delta: f64, extra: f64) -> Self {
        Self {
            noise: self
                .noise
                .iter()
                .zip(&self.magnitude)
                .map(|(e, m)| c.abs() * e + (m + e) * delta + extra)
                .collect(),
            magnitude: self.magnitude.iter().map(|m| m * c.abs()).collect(),
        }
    }

    /// Adds plaintext `values` carrying error `err`.
    pub fn add_plain(&self, values: &[f64], err: f64) -> Self {
        let p = |j: usize| values.get(j).map_or(0.0, |v| v.abs());
        Self {
            noise: self.noise.iter().map(|e| e + err).collect(),
            magnitude: self.magnitude.iter().enumerate().map(|(j, m)| m + p(j)).collect(),
        }
    }

    pub fn add_noise(&mut self, extra: f64) {
        for e in &mut self.noise {
            *e += extra;
        }
    }

    /// Slot j of the result is slot j + k of the input.
    pub fn rotate(&self, k: isize) -> Self {
        let s = self.noise.len() as isize;
        let src = |j: usize| (j as isize + k).rem_euclid(s) as usize;
        Self {
            noise: (0..s as usize).map(|j| self.noise[src(j)]).collect(),
            magnitude: (0..s as usize).map(|j| self.magnitude[src(j)]).collect(),
        }
    }
}

/// Noise and level bookkeeping shared by both backends, so that they agree on
/// every bound and every rounded constant.
#[derive(Debug, Clone)]
pub(crate) struct Tracker {
    pub(crate) params: HeParams,
    pub(crate) model: NoiseModel,
}

impl Tracker {
    pub(crate) fn new(params: &HeParams) -> Self {
        Self {
            params: params.clone(),
            model: NoiseModel::new(params),
        }
    }

    pub(crate) fn slots(&self) -> usize {
        self.params.slots()
    }

    pub(crate) fn check_pair(&self, la: usize, sa: f64, lb: usize, sb: f64) -> Result<(), HeError> {
        if la != lb {
            return Err(HeError::LevelMismatch(la, lb));
        }
        if sa != sb {
            return Err(HeError::ScaleMismatch(sa, sb));
        }
        Ok(())
    }

    pub(crate) fn check_values(&self, values: &[f64]) -> Result<(), HeError> {
        if values.len() > self.slots() {
            return Err(HeError::TooManySlots {
                got: values.len(),
                slots: self.slots(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_level(&self, level: usize) -> Result<(), HeError> {
        if level > self.params.max_level() {
            return Err(HeError::LevelOutOfRange {
                level,
                max: self.params.max_level(),
            });
        }
        Ok(())
    }

    pub(crate) fn fresh(&self, values: &[f64], level: usize) -> SlotBounds {
        SlotBounds::fresh(self.slots(), values, self.model.fresh(self.params.scale_at(level)))
    }

    pub(crate) fn mul(&self, a: &SlotBounds, b: &SlotBounds, level: usize) -> SlotBounds {
        let s = self.params.scale_at(level);
        let extra = self.model.key_switch(level, s * s) + self.model.rescale(self.params.scale_at(level - 1));
        a.mul(b, extra)
    }

    pub(crate) fn mul_plain(&self, a: &SlotBounds, values: &[f64], level: usize) -> SlotBounds {
        let s = self.params.scale_at(level);
        a.mul_plain(values, self.model.encode(s), self.model.rescale(self.params.scale_at(level - 1)))
    }

    pub(crate) fn add_plain(&self, a: &SlotBounds, values: &[f64], level: usize) -> SlotBounds {
        a.add_plain(values, self.model.encode(self.params.scale_at(level)))
    }

    /// Integer multiplier for a constant at `level` and the value it represents.
    pub(crate) fn const_int(&self, c: f64, level: usize) -> (i128, f64) {
        let s = self.params.scale_at(level);
        let ci = (c * s).round();
        (ci as i128, ci / s)
    }

    pub(crate) fn mul_const(&self, a: &SlotBounds, c: f64, effective: f64, level: usize) -> SlotBounds {
        a.mul_scalar(c, (c - effective).abs(), self.model.rescale(self.params.scale_at(level - 1)))
    }

    pub(crate) fn add_const(&self, a: &SlotBounds, c: f64, effective: f64) -> SlotBounds {
        a.add_plain(&vec![c; self.slots()], (c - effective).abs())
    }

    pub(crate) fn rotate_step(&self, a: &SlotBounds, step: isize, level: usize) -> SlotBounds {
        let mut out = a.rotate(step);
        out.add_noise(self.model.key_switch(level, self.params.scale_at(level)));
        out
    }

    /// Integer multiplier used to move from `from` to `to` (< from) scaled by
    /// `factor`, and the factor it actually realizes.
    pub(crate) fn adjust_int(&self, from: usize, to: usize, factor: f64) -> (i128, f64) {
        let q = self.params.prime(to + 1) as f64;
        let ratio = q * self.params.scale_at(to) / self.params.scale_at(from);
        let ci = (factor * ratio).round();
        (ci as i128, ci / ratio)
    }

    pub(crate) fn adjust(&self, a: &SlotBounds, to: usize, factor: f64, effective: f64) -> SlotBounds {
        a.mul_scalar(factor, (factor - effective).abs(), self.model.rescale(self.params.scale_at(to)))
    }

    /// New scalar estimate: never below any input estimate.
    pub(crate) fn estimate(bounds: &SlotBounds, inputs: &[f64]) -> f64 {
        inputs.iter().copied().fold(bounds.max_noise(), f64::max)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
