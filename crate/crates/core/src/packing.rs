//! Block packing of a sample matrix into ciphertext slots, and the encrypted
//! kernels for margins and gradient aggregation.
//!
//! A ciphertext with `S` slots holds `l` rows of `h` lanes, `h` being the
//! feature count rounded up to a power of two and `l = S / h`. Sample `i` of a
//! block lives in row `i mod l`. Labels are folded into the data: the packed row
//! is `z_i = y_i x_i`, so the margin is `w . z_i` and the gradient term is
//! `p(m_i) z_i`. The weight vector is replicated in every row.

use thiserror::Error;

use crate::he::{HeBackend, HeError};

/// Levels consumed by one encrypted gradient step: scores (1), cubic (2),
/// gradient product (1).
pub const D_ITER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PackError {
    #[error("layout infeasible: dimension {dim} exceeds {slots} slots")]
    Infeasible { dim: usize, slots: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    He(#[from] HeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackLayout {
    samples: usize,
    dim: usize,
    slots: usize,
    rows: usize,
    cols: usize,
}

impl PackLayout {
    pub fn plan(samples: usize, dim: usize, slots: usize) -> Result<Self, PackError> {
        if dim == 0 || dim > slots || !slots.is_power_of_two() {
            return Err(PackError::Infeasible { dim, slots });
        }
        let cols = dim.next_power_of_two();
        Ok(Self {
            samples,
            dim,
            slots,
            rows: slots / cols,
            cols,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Block rows `l`: samples per ciphertext.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Block columns `h`: lanes per sample.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn blocks(&self) -> usize {
        self.samples.div_ceil(self.rows)
    }

    /// Same geometry for a different sample count.
    pub fn with_samples(&self, samples: usize) -> Self {
        Self { samples, ..*self }
    }

    /// `(ciphertext, slot)` holding feature `feature` of sample `sample`.
    pub fn slot_of(&self, sample: usize, feature: usize) -> (usize, usize) {
        debug_assert!(sample < self.samples && feature < self.dim);
        (sample / self.rows, (sample % self.rows) * self.cols + feature)
    }

    /// Live rows of block `b`.
    pub fn rows_in_block(&self, b: usize) -> usize {
        self.samples.saturating_sub(b * self.rows).min(self.rows)
    }

    /// Slot where a row sum lands after [`row_sums`]: the last lane of the row.
    pub fn score_lane(&self, row: usize) -> usize {
        row * self.cols + self.cols - 1
    }

    /// Indicator of the score lanes of every row.
    pub fn score_mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.slots];
        for r in 0..self.rows {
            m[self.score_lane(r)] = 1.0;
        }
        m
    }

    /// `w` copied into every row, zero-padded to `h` lanes.
    pub fn replicate(&self, w: &[f64]) -> Result<Vec<f64>, PackError> {
        if w.len() != self.dim {
            return Err(PackError::Shape(format!("weights have {} entries, layout dim {}", w.len(), self.dim)));
        }
        let mut out = vec![0.0; self.slots];
        for row in out.chunks_mut(self.cols) {
            row[..self.dim].copy_from_slice(w);
        }
        Ok(out)
    }

    /// First row of a replicated vector.
    pub fn extract(&self, slots: &[f64]) -> Vec<f64> {
        slots[..self.dim].to_vec()
    }
}

/// Packed plaintext slot vectors of one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Packed {
    /// `y_i x_i` per block.
    pub data: Vec<Vec<f64>>,
    /// `y_i` replicated over the live feature lanes of each row.
    pub labels: Vec<Vec<f64>>,
}

/// Packs row-major `x` (`samples x dim`) with labels `y` into slot vectors.
pub fn pack_matrix(x: &[f64], y: &[f64], layout: &PackLayout) -> Result<Packed, PackError> {
    let (n, d) = (layout.samples, layout.dim);
    if x.len() != n * d || y.len() != n {
        return Err(PackError::Shape(format!(
            "expected {n}x{d} matrix and {n} labels, got {} values and {} labels",
            x.len(),
            y.len()
        )));
    }
    let mut data = vec![vec![0.0; layout.slots]; layout.blocks()];
    let mut labels = data.clone();
    for i in 0..n {
        let yi = y[i];
        for f in 0..d {
            let (b, s) = layout.slot_of(i, f);
            data[b][s] = yi * x[i * d + f];
            labels[b][s] = yi;
        }
    }
    Ok(Packed { data, labels })
}

/// Inverse of [`pack_matrix`]: returns `(x, y)`.
pub fn unpack(packed: &Packed, layout: &PackLayout) -> Result<(Vec<f64>, Vec<f64>), PackError> {
    if packed.data.len() != layout.blocks() || packed.labels.len() != layout.blocks() {
        return Err(PackError::Shape(format!("expected {} blocks", layout.blocks())));
    }
    let (n, d) = (layout.samples, layout.dim);
    let mut x = vec![0.0; n * d];
    let mut y = vec![0.0; n];
    for i in 0..n {
        let (b, s0) = layout.slot_of(i, 0);
        y[i] = packed.labels[b][s0];
        for f in 0..d {
            let (b, s) = layout.slot_of(i, f);
            // labels are exactly +-1, so dividing recovers x bit for bit
            x[i * d + f] = packed.data[b][s] * y[i];
        }
    }
    Ok((x, y))
}

/// Sums each row into its last lane by right rotations `1, 2, ..., h/2`.
/// Other lanes hold partial sums.
pub fn row_sums<B: HeBackend>(he: &B, ct: &B::Ciphertext, layout: &PackLayout) -> Result<B::Ciphertext, HeError> {
    let mut acc = ct.clone();
    let mut step = 1;
    while step < layout.cols {
        let r = he.rotate(&acc, -(step as isize))?;
        acc = he.add(&acc, &r)?;
        step *= 2;
    }
    Ok(acc)
}

/// Copies the last lane of each row to the whole row. Lanes other than the
/// score lanes must be zero on input.
pub fn broadcast_rows<B: HeBackend>(he: &B, ct: &B::Ciphertext, layout: &PackLayout) -> Result<B::Ciphertext, HeError> {
    let mut acc = ct.clone();
    let mut step = 1;
    while step < layout.cols {
        let r = he.rotate(&acc, step as isize)?;
        acc = he.add(&acc, &r)?;
        step *= 2;
    }
    Ok(acc)
}

/// Adds the rows together, leaving the sum replicated in every row.
pub fn fold_rows<B: HeBackend>(he: &B, ct: &B::Ciphertext, layout: &PackLayout) -> Result<B::Ciphertext, HeError> {
    let mut acc = ct.clone();
    let mut step = layout.cols;
    while step < layout.slots {
        let r = he.rotate(&acc, step as isize)?;
        acc = he.add(&acc, &r)?;
        step *= 2;
    }
    Ok(acc)
}

/// Margins `w . z_i` of one block; the margin of row `r` lands in
/// [`PackLayout::score_lane`]. Consumes one level.
pub fn enc_scores<B: HeBackend>(
    he: &B,
    block: &B::Ciphertext,
    w: &B::Ciphertext,
    layout: &PackLayout,
) -> Result<B::Ciphertext, PackError> {
    let prod = he.mul(block, w)?;
    Ok(row_sums(he, &prod, layout)?)
}

/// `sum_i q_i z_i` replicated in every row, where `q_i` is the value in the
/// score lane of row `i` of the matching `coeffs` ciphertext (zero elsewhere).
/// Each block must sit at its coefficient ciphertext's level. Consumes one
/// level. Any batch normalization is expected to be folded into `coeffs`.
pub fn enc_grad<B: HeBackend>(
    he: &B,
    blocks: &[&B::Ciphertext],
    coeffs: &[B::Ciphertext],
    layout: &PackLayout,
) -> Result<B::Ciphertext, PackError> {
    if blocks.is_empty() || blocks.len() != coeffs.len() {
        return Err(PackError::Shape(format!(
            "{} blocks against {} coefficient ciphertexts",
            blocks.len(),
            coeffs.len()
        )));
    }
    let mut sum: Option<B::Ciphertext> = None;
    for (block, c) in blocks.iter().zip(coeffs) {
        let wide = broadcast_rows(he, c, layout)?;
        let term = he.mul(&wide, block)?;
        sum = Some(match sum {
            None => term,
            Some(s) => he.add(&s, &term)?,
        });
    }
    Ok(fold_rows(he, &sum.expect("non-empty"), layout)?)
}
