//! Margin losses, their exact gradients and cubic least-squares
//! approximations of the negative gradient.
//!
//! A [`PolyApprox`] models `g(m) = -dL/dm`, so a descent step adds
//! `eta * g(m_i) * y_i x_i`. Evaluation under encryption costs two levels.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::he::{HeBackend, HeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("degree {0} unsupported (at most 3)")]
    Degree(usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("empty fit interval")]
    Interval,
    #[error("fit failed: normal equations are rank deficient")]
    FitFailed,
    #[error("unknown loss '{0}'")]
    UnknownLoss(String),
    #[error("bad coefficient list '{0}'")]
    Coefficients(String),
    #[error(transparent)]
    He(#[from] HeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `log(1 + exp(-m))`.
    BinomialDeviance,
    /// `[1 - m]_+`.
    SvmHinge,
    /// `-4m` for `m < -1`, else `[1 - m]_+^2`.
    Huber,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::BinomialDeviance, LossKind::SvmHinge, LossKind::Huber];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::BinomialDeviance => "deviance",
            LossKind::SvmHinge => "hinge",
            LossKind::Huber => "huber",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = ApproxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deviance" | "logistic" | "binomial-deviance" => Ok(LossKind::BinomialDeviance),
            "hinge" | "svm" | "svm-hinge" => Ok(LossKind::SvmHinge),
            "huber" => Ok(LossKind::Huber),
            other => Err(ApproxError::UnknownLoss(other.to_string())),
        }
    }
}

fn c<T: Float>(v: f64) -> T {
    T::from(v).expect("representable constant")
}

pub fn loss_value<T: Float>(kind: LossKind, m: T) -> T {
    let one = T::one();
    match kind {
        // log(1 + e^-m) without overflow for very negative m
        LossKind::BinomialDeviance => {
            if m < T::zero() {
                -m + (one + m.exp()).ln()
            } else {
                (-m).exp().ln_1p()
            }
        }
        LossKind::SvmHinge => (one - m).max(T::zero()),
        LossKind::Huber => {
            if m < -one {
                c::<T>(-4.0) * m
            } else {
                let h = (one - m).max(T::zero());
                h * h
            }
        }
    }
}

/// `dL/dm`; at the hinge kink `m = 1` the left limit is used.
pub fn loss_grad_exact<T: Float>(kind: LossKind, m: T) -> T {
    let one = T::one();
    match kind {
        LossKind::BinomialDeviance => {
            if m >= T::zero() {
                let e = (-m).exp();
                -e / (one + e)
            } else {
                -one / (one + m.exp())
            }
        }
        LossKind::SvmHinge => {
            if m <= one {
                -one
            } else {
                T::zero()
            }
        }
        LossKind::Huber => {
            if m <= -one {
                c(-4.0)
            } else if m <= one {
                c::<T>(-2.0) * (one - m)
            } else {
                T::zero()
            }
        }
    }
}

/// Cubic (or lower) polynomial in the margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyApprox<T> {
    /// `alpha_0 .. alpha_3`, constant term first.
    pub coeffs: [T; 4],
    pub interval: (T, T),
    /// Max abs error against `-dL/dm` on a dense grid over `interval`.
    pub residual: T,
}

/// Points of the dense grid used for residuals.
pub const RESIDUAL_GRID: usize = 20_001;

/// Default fit interval.
pub const DEFAULT_INTERVAL: (f64, f64) = (-8.0, 8.0);

/// Default number of fit samples.
pub const DEFAULT_SAMPLES: usize = 4_000;

impl<T: Float> PolyApprox<T> {
    /// Wraps coefficients for `kind`, computing the residual over `interval`.
    pub fn new(kind: LossKind, coeffs: [T; 4], interval: (T, T)) -> Self {
        let mut p = Self {
            coeffs,
            interval,
            residual: T::zero(),
        };
        p.residual = p.sup_error(kind, interval, RESIDUAL_GRID);
        p
    }

    pub fn eval(&self, x: T) -> T {
        eval_poly_plain(self, x)
    }

    /// Max `|p(x) + dL/dx|` over `points` evenly spaced points of `[a, b]`.
    pub fn sup_error(&self, kind: LossKind, (a, b): (T, T), points: usize) -> T {
        let steps = c::<T>((points.max(2) - 1) as f64);
        (0..points.max(2))
            .map(|k| {
                let x = a + (b - a) * c::<T>(k as f64) / steps;
                (self.eval(x) + loss_grad_exact(kind, x)).abs()
            })
            .fold(T::zero(), T::max)
    }

    pub fn to_f64(&self) -> PolyApprox<f64> {
        let f = |v: T| v.to_f64().expect("finite");
        PolyApprox {
            coeffs: self.coeffs.map(f),
            interval: (f(self.interval.0), f(self.interval.1)),
            residual: f(self.residual),
        }
    }

    /// Coefficients as a comma separated decimal list.
    pub fn coeff_string(&self) -> String {
        self.coeffs
            .iter()
            .map(|v| format!("{}", v.to_f64().expect("finite")))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses a [`coeff_string`](Self::coeff_string) list of up to four values.
    pub fn parse_coeffs(s: &str) -> Result<[T; 4], ApproxError> {
        let bad = || ApproxError::Coefficients(s.to_string());
        let vals: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        if vals.is_empty() || vals.len() > 4 || vals.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        let mut out = [T::zero(); 4];
        for (o, v) in out.iter_mut().zip(vals) {
            *o = c(v);
        }
        Ok(out)
    }
}

pub fn eval_poly_plain<T: Float>(p: &PolyApprox<T>, x: T) -> T {
    let [a0, a1, a2, a3] = p.coeffs;
    ((a3 * x + a2) * x + a1) * x + a0
}

/// Published cubic coefficients for each loss.
pub fn table2_coeffs<T: Float>(kind: LossKind) -> PolyApprox<T> {
    let coeffs = match kind {
        LossKind::BinomialDeviance => [0.5, -0.0843, 0.0, 0.0002],
        LossKind::SvmHinge => [0.5875, -0.1005, 0.0008, -0.00039],
        LossKind::Huber => [2.0, -0.1311, 0.0, 0.00005],
    };
    PolyApprox::new(kind, coeffs.map(c), (c(DEFAULT_INTERVAL.0), c(DEFAULT_INTERVAL.1)))
}

const RIDGE: f64 = 1e-9;

/// Least-squares fit of `-dL/dm` by a polynomial of `degree` on `n_samples`
/// jittered uniform points of `interval`.
pub fn fit_poly_grad<T: Float, R: Rng + ?Sized>(
    kind: LossKind,
    degree: usize,
    interval: (T, T),
    n_samples: usize,
    rng: &mut R,
) -> Result<PolyApprox<T>, ApproxError> {
    let xs: Vec<T> = {
        let (a, b) = interval;
        if !(b > a) {
            return Err(ApproxError::Interval);
        }
        // one uniform draw per equal-width cell: still uniform on the interval,
        // with far less variance between seeds than independent draws
        let n = c::<T>(n_samples as f64);
        (0..n_samples)
            .map(|k| a + (b - a) * (c::<T>(k as f64) + c::<T>(rng.random::<f64>())) / n)
            .collect()
    };
    let ys: Vec<T> = xs.iter().map(|&x| -loss_grad_exact(kind, x)).collect();
    let coeffs = fit_points(&xs, &ys, degree, interval)?;
    Ok(PolyApprox::new(kind, coeffs, interval))
}

/// Least-squares polynomial through `(xs, ys)`. Monomials are taken in the
/// variable rescaled to `[-1, 1]` over `interval`, which keeps the normal
/// equations well conditioned, then mapped back.
pub fn fit_points<T: Float>(xs: &[T], ys: &[T], degree: usize, interval: (T, T)) -> Result<[T; 4], ApproxError> {
    if degree > 3 {
        return Err(ApproxError::Degree(degree));
    }
    let k = degree + 1;
    let need = 10 * k;
    if xs.len() < need {
        return Err(ApproxError::TooFewSamples { need, got: xs.len() });
    }
    let (a, b) = interval;
    let two = c::<T>(2.0);
    let mid = (a + b) / two;
    let half = (b - a) / two;
    if !(half > T::zero()) {
        return Err(ApproxError::Interval);
    }

    let mut ata = vec![vec![T::zero(); k]; k];
    let mut aty = vec![T::zero(); k];
    for (&x, &y) in xs.iter().zip(ys) {
        let t = (x - mid) / half;
        let mut pow = [T::one(); 4];
        for j in 1..k {
            pow[j] = pow[j - 1] * t;
        }
        for r in 0..k {
            aty[r] = aty[r] + pow[r] * y;
            for s in 0..k {
                ata[r][s] = ata[r][s] + pow[r] * pow[s];
            }
        }
    }
    let scale = ata.iter().enumerate().map(|(i, r)| r[i]).fold(T::zero(), T::max);
    for (i, row) in ata.iter_mut().enumerate() {
        row[i] = row[i] + c::<T>(RIDGE);
    }
    let beta = solve(ata, aty, scale)?;

    // expand sum beta_j ((x - mid)/half)^j into monomials of x
    let mut out = [T::zero(); 4];
    let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
    for (j, &bj) in beta.iter().enumerate() {
        let coef = bj / half.powi(j as i32);
        for i in 0..=j {
            let term = c::<T>(binom[j][i]) * (-mid).powi((j - i) as i32);
            out[i] = out[i] + coef * term;
        }
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting; pivots below `1e-10 * scale`
/// count as rank deficiency.
fn solve<T: Float>(mut m: Vec<Vec<T>>, mut v: Vec<T>, scale: T) -> Result<Vec<T>, ApproxError> {
    let k = v.len();
    let tol = c::<T>(1e-10) * scale;
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).expect("finite"))
            .expect("non-empty");
        if !(m[piv][col].abs() > tol) {
            return Err(ApproxError::FitFailed);
        }
        m.swap(col, piv);
        v.swap(col, piv);
        for r in col + 1..k {
            let f = m[r][col] / m[col][col];
            for s in col..k {
                m[r][s] = m[r][s] - f * m[col][s];
            }
            v[r] = v[r] - f * v[col];
        }
    }
    let mut x = vec![T::zero(); k];
    for r in (0..k).rev() {
        let tail = (r + 1..k).fold(T::zero(), |acc, s| acc + m[r][s] * x[s]);
        x[r] = (v[r] - tail) / m[r][r];
    }
    Ok(x)
}

/// Encrypted evaluation of `p` on every slot. Consumes two levels.
pub fn eval_poly_enc<B: HeBackend>(he: &B, p: &PolyApprox<f64>, ct: &B::Ciphertext) -> Result<B::Ciphertext, ApproxError> {
    let ones = vec![1.0; he.params().slots()];
    eval_poly_weighted(he, &p.coeffs, ct, &ones)
}

/// Evaluates `w_j * p(x_j)` slotwise as `(a3 x + a2) x^2 + a1 x + a0` with the
/// weights riding on the plaintext coefficient vectors, so masking and
/// scaling cost no extra level. Consumes two levels.
pub fn eval_poly_weighted<B: HeBackend>(
    he: &B,
    coeffs: &[f64; 4],
    ct: &B::Ciphertext,
    weights: &[f64],
) -> Result<B::Ciphertext, ApproxError> {
    let level = he.level(ct);
    if level < 2 {
        return Err(HeError::DepthExhausted.into());
    }
    let scaled = |a: f64| weights.iter().map(|w| w * a).collect::<Vec<f64>>();
    let [a0, a1, a2, a3] = *coeffs;

    let sq = he.mul(ct, ct)?;
    let lead = he.mul_plain(ct, &scaled(a3))?;
    let lead = he.add_plain(&lead, &scaled(a2))?;
    let high = he.mul(&lead, &sq)?;
    let lin = he.mul_plain(ct, &scaled(a1))?;
    let lin = he.drop_to(&lin, level - 2)?;
    let out = he.add(&high, &lin)?;
    Ok(he.add_plain(&out, &scaled(a0))?)
}
