//! Random arithmetic circuits over packed slots, evaluated both in the clear
//! and under a backend.

use dhe_core::he::{HeBackend, HeError};
use rand::Rng;

#[derive(Debug, Clone)]
pub enum Op {
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulPlain(usize, Vec<f64>),
    MulConst(usize, f64),
    AddPlain(usize, Vec<f64>),
    AddConst(usize, f64),
    Rotate(usize, isize),
    /// Drop to the given level while scaling.
    Adjust(usize, usize, f64),
}

#[derive(Debug, Clone)]
pub struct Circuit {
    pub inputs: Vec<Vec<f64>>,
    pub ops: Vec<Op>,
    pub level: usize,
}

#[derive(Clone)]
struct Node {
    level: usize,
    depth: usize,
}

/// Brings two operands to a common level by dropping the higher one.
fn align(nodes: &mut Vec<Node>, out: &mut Vec<Op>, a: usize, b: usize) -> (usize, usize) {
    let (la, lb) = (nodes[a].level, nodes[b].level);
    if la == lb {
        return (a, b);
    }
    let (hi, lo_level) = if la > lb { (a, lb) } else { (b, la) };
    let depth = nodes[hi].depth + (nodes[hi].level - lo_level);
    out.push(Op::Adjust(hi, lo_level, 1.0));
    nodes.push(Node { level: lo_level, depth });
    let fresh = nodes.len() - 1;
    if la > lb {
        (fresh, b)
    } else {
        (a, fresh)
    }
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Random circuit over `inputs` fresh ciphertexts at `level` with
/// multiplicative depth at most `max_depth` and about `ops` operations.
pub fn random_circuit(rng: &mut impl Rng, slots: usize, level: usize, max_depth: usize, ops: usize) -> Circuit {
    let n_inputs = rng.random_range(1..=3);
    let inputs = (0..n_inputs).map(|_| uniform(rng, slots, -1.0, 1.0)).collect();
    let mut nodes = vec![Node { level, depth: 0 }; n_inputs];
    let mut out = Vec::new();
    let floor = level.saturating_sub(max_depth);

    while out.len() < ops {
        let a = rng.random_range(0..nodes.len());
        let b = rng.random_range(0..nodes.len());
        let can_mul = |n: &Node| n.level > floor && n.depth < max_depth;
        let kind = rng.random_range(0..9);
        match kind {
            0 | 1 => {
                let (a, b) = align(&mut nodes, &mut out, a, b);
                let n = nodes[a].clone();
                out.push(if kind == 0 { Op::Add(a, b) } else { Op::Sub(a, b) });
                nodes.push(Node {
                    level: n.level,
                    depth: n.depth.max(nodes[b].depth),
                });
            }
            2 => {
                let (a, b) = align(&mut nodes, &mut out, a, b);
                if !can_mul(&nodes[a]) || !can_mul(&nodes[b]) {
                    continue;
                }
                let n = nodes[a].clone();
                out.push(Op::Mul(a, b));
                nodes.push(Node {
                    level: n.level - 1,
                    depth: n.depth.max(nodes[b].depth) + 1,
                });
            }
            3 | 4 | 5 => {
                let n = nodes[a].clone();
                if !can_mul(&n) {
                    continue;
                }
                out.push(match kind {
                    3 => Op::MulPlain(a, uniform(rng, slots, -1.0, 1.0)),
                    4 => Op::MulConst(a, rng.random_range(-1.5..=1.5)),
                    _ => Op::Adjust(a, n.level - 1, rng.random_range(-1.5..=1.5)),
                });
                nodes.push(Node {
                    level: n.level - 1,
                    depth: n.depth + 1,
                });
            }
            6 | 7 => {
                let n = nodes[a].clone();
                out.push(if kind == 6 {
                    Op::AddPlain(a, uniform(rng, slots, -1.0, 1.0))
                } else {
                    Op::AddConst(a, rng.random_range(-1.0..=1.0))
                });
                nodes.push(n);
            }
            _ => {
                let k = rng.random_range(-(slots as i64) + 1..slots as i64) as isize;
                out.push(Op::Rotate(a, k));
                let n = nodes[a].clone();
                nodes.push(n);
            }
        }
    }
    Circuit { inputs, ops: out, level }
}

fn rotate(v: &[f64], k: isize) -> Vec<f64> {
    let s = v.len() as isize;
    (0..s).map(|j| v[(j + k).rem_euclid(s) as usize]).collect()
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

impl Circuit {
    /// Plain value of every node, inputs first.
    pub fn eval_plain(&self) -> Vec<Vec<f64>> {
        let mut vals = self.inputs.clone();
        for op in &self.ops {
            let v = match op {
                Op::Add(a, b) => zip(&vals[*a], &vals[*b], |x, y| x + y),
                Op::Sub(a, b) => zip(&vals[*a], &vals[*b], |x, y| x - y),
                Op::Mul(a, b) => zip(&vals[*a], &vals[*b], |x, y| x * y),
                Op::MulPlain(a, p) => zip(&vals[*a], p, |x, y| x * y),
                Op::AddPlain(a, p) => zip(&vals[*a], p, |x, y| x + y),
                Op::MulConst(a, c) | Op::Adjust(a, _, c) => vals[*a].iter().map(|x| x * c).collect(),
                Op::AddConst(a, c) => vals[*a].iter().map(|x| x + c).collect(),
                Op::Rotate(a, k) => rotate(&vals[*a], *k),
            };
            vals.push(v);
        }
        vals
    }

    /// Ciphertext of every node, inputs first.
    pub fn eval_enc<B: HeBackend>(&self, he: &B, rng: &mut impl Rng) -> Result<Vec<B::Ciphertext>, HeError> {
        let mut cts = Vec::new();
        for v in &self.inputs {
            cts.push(he.encrypt(v, self.level, rng)?);
        }
        for op in &self.ops {
            let ct = match op {
                Op::Add(a, b) => he.add(&cts[*a], &cts[*b])?,
                Op::Sub(a, b) => he.sub(&cts[*a], &cts[*b])?,
                Op::Mul(a, b) => he.mul(&cts[*a], &cts[*b])?,
                Op::MulPlain(a, p) => he.mul_plain(&cts[*a], p)?,
                Op::MulConst(a, c) => he.mul_const(&cts[*a], *c)?,
                Op::AddPlain(a, p) => he.add_plain(&cts[*a], p)?,
                Op::AddConst(a, c) => he.add_const(&cts[*a], *c)?,
                Op::Rotate(a, k) => he.rotate(&cts[*a], *k)?,
                Op::Adjust(a, l, c) => he.adjust_to(&cts[*a], *l, *c)?,
            };
            cts.push(ct);
        }
        Ok(cts)
    }
}

/// Outcome of checking one circuit.
#[derive(Debug, Clone, Copy)]
pub struct Check {
    /// Largest measured error over all nodes, relative to that node's estimate.
    pub worst_ratio: f64,
    /// Every node decrypts within its scalar estimate and per-slot bounds.
    pub sound: bool,
}

pub fn check_circuit<B: HeBackend>(he: &B, sk: &B::SecretKey, c: &Circuit, rng: &mut impl Rng) -> Result<Check, HeError> {
    let plain = c.eval_plain();
    let cts = c.eval_enc(he, rng)?;
    let mut worst: f64 = 0.0;
    let mut sound = true;
    for (ct, want) in cts.iter().zip(&plain) {
        let err = he.measured_error(sk, ct, want)?;
        let est = he.noise_estimate(ct);
        worst = worst.max(err / est);
        sound &= err <= est && he.within_bounds(sk, ct, want)?;
    }
    Ok(Check {
        worst_ratio: worst,
        sound,
    })
}
