//! Bit-exact polynomial encoding.
//!
//! ```text
//! u32 N | u32 level | u8 form (0 = coefficient, 1 = evaluation)
//! u32 prime count | prime count x u64 primes
//! N x (level + 1) x u64 residues, coefficient-major then prime-major
//! ```
//! All integers little-endian.

use super::{Form, RingContext, RingPoly};
use crate::wire::{Reader, WireError, Writer};

impl RingPoly {
    pub fn write(&self, ctx: &RingContext, w: &mut Writer) {
        let n = self.degree();
        let k = self.level + 1;
        w.u32(n as u32).u32(self.level as u32).u8(match self.form {
            Form::Coefficient => 0,
            Form::Evaluation => 1,
        });
        w.u32(k as u32);
        for i in 0..k {
            w.u64(ctx.modulus(i).value());
        }
        let mut flat = Vec::with_capacity(n * k);
        for c in 0..n {
            for r in &self.residues {
                flat.push(r[c]);
            }
        }
        w.u64_slice(&flat);
    }

    pub fn to_bytes(&self, ctx: &RingContext) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.serialized_len());
        self.write(ctx, &mut w);
        w.finish()
    }

    pub fn serialized_len(&self) -> usize {
        let k = self.level + 1;
        4 + 4 + 1 + 4 + 8 * k + 8 * k * self.degree()
    }

    pub fn read(ctx: &RingContext, r: &mut Reader<'_>) -> Result<Self, WireError> {
        let n = r.u32()? as usize;
        if n != ctx.degree() {
            return Err(WireError::invalid("ring degree", format!("{n} != {}", ctx.degree())));
        }
        let level = r.u32()? as usize;
        let form = match r.u8()? {
            0 => Form::Coefficient,
            1 => Form::Evaluation,
            f => return Err(WireError::invalid("form", f.to_string())),
        };
        let k = r.u32()? as usize;
        if k != level + 1 || level > ctx.max_level() {
            return Err(WireError::invalid("prime count", format!("{k} primes at level {level}")));
        }
        for i in 0..k {
            let p = r.u64()?;
            if p != ctx.modulus(i).value() {
                return Err(WireError::invalid("prime", format!("index {i}: {p}")));
            }
        }
        let flat = r.u64_vec(n * k)?;
        let mut residues = vec![Vec::with_capacity(n); k];
        for chunk in flat.chunks_exact(k) {
            for (i, &x) in chunk.iter().enumerate() {
                if x >= ctx.modulus(i).value() {
                    return Err(WireError::invalid("residue", format!("{x} >= prime {i}")));
                }
                residues[i].push(x);
            }
        }
        Ok(RingPoly { level, form, residues })
    }

    pub fn from_bytes(ctx: &RingContext, bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let p = Self::read(ctx, &mut r)?;
        r.finish()?;
        Ok(p)
    }
}
