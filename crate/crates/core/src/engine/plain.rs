use std::time::{Duration, Instant};

use num_traits::Float;

use crate::approx::PolyApprox;
use crate::data::Dataset;

use super::{Batches, TrainConfig};

/// One plaintext step on a mini-batch of labelled rows:
/// `w' = (1 - eta*lambda) w + (eta/B) sum_i p(y_i w.x_i) y_i x_i`.
///
/// `p` approximates `-dL/dm`, so this is gradient descent on the
/// approximated loss plus the L2 term.
pub fn plain_step<T: Float>(w: &[T], x: &[T], y: &[T], p: &PolyApprox<T>, eta: T, lambda: T) -> Vec<T> {
    let d = w.len();
    assert_eq!(x.len(), y.len() * d, "batch shape");
    let mut out: Vec<T> = w.iter().map(|&v| v * (T::one() - eta * lambda)).collect();
    if y.is_empty() {
        return out;
    }
    let c = eta / T::from(y.len()).expect("batch size fits the scalar");
    for (row, &yi) in x.chunks_exact(d).zip(y) {
        let m = row.iter().zip(w).fold(T::zero(), |acc, (&a, &b)| acc + a * b) * yi;
        let g = p.eval(m) * yi * c;
        for (o, &a) in out.iter_mut().zip(row) {
            *o = *o + g * a;
        }
    }
    out
}

/// Plaintext training outcome.
#[derive(Debug, Clone)]
pub struct PlainRun<T> {
    pub w: Vec<T>,
    /// Master parameters after each averaging round, then the final average.
    pub trajectory: Vec<Vec<T>>,
    /// Validation accuracy per round.
    pub acc: Vec<f64>,
    /// Time since the start of training at the end of each round, then at the end.
    pub wall: Vec<Duration>,
    pub final_acc: f64,
}

struct Local<T> {
    x: Vec<T>,
    y: Vec<T>,
    batches: Batches,
}

/// Simulates the refresh protocol in the clear: every worker runs
/// `refresh_interval` local steps from the master, the master becomes the
/// mean, repeated for `iterations / refresh_interval` rounds; a trailing
/// partial window is averaged once more at the end.
///
/// `shards` are ordered sample lists (the batch order) and `rows` is the
/// block granularity of the packed layout, so the batches are exactly the
/// ones the encrypted workers see.
pub fn plain_distributed<T: Float>(ds: &Dataset, cfg: &TrainConfig, shards: &[Vec<usize>], rows: usize) -> PlainRun<T> {
    let cast = |v: f64| T::from(v).expect("finite value");
    let p = PolyApprox {
        coeffs: cfg.poly.coeffs.map(cast),
        interval: (cast(cfg.poly.interval.0), cast(cfg.poly.interval.1)),
        residual: cast(cfg.poly.residual),
    };
    let (eta, lambda) = (cast(cfg.eta), cast(cfg.lambda));
    let locals: Vec<Local<T>> = shards
        .iter()
        .map(|s| {
            let (x, y) = ds.gather(s);
            Local {
                x: x.into_iter().map(cast).collect(),
                y: y.into_iter().map(cast).collect(),
                batches: Batches::new(s.len(), rows, cfg.batch_size),
            }
        })
        .collect();
    let d = ds.dim;
    let to_f64 = |w: &[T]| -> Vec<f64> { w.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect() };

    let local_window = |master: &[T], start: usize, steps: usize| -> Vec<Vec<T>> {
        locals
            .iter()
            .map(|l| {
                let mut w = master.to_vec();
                for t in start..start + steps {
                    let idx = l.batches.samples_of(t);
                    let mut bx = Vec::with_capacity(idx.len() * d);
                    let mut by = Vec::with_capacity(idx.len());
                    for &i in &idx {
                        bx.extend_from_slice(&l.x[i * d..(i + 1) * d]);
                        by.push(l.y[i]);
                    }
                    w = plain_step(&w, &bx, &by, &p, eta, lambda);
                }
                w
            })
            .collect()
    };
    let mean = |ws: Vec<Vec<T>>| -> Vec<T> {
        let inv = T::one() / T::from(ws.len()).expect("worker count");
        (0..d).map(|j| ws.iter().fold(T::zero(), |a, w| a + w[j]) * inv).collect()
    };

    let started = Instant::now();
    let mut master = vec![T::zero(); d];
    let mut trajectory = Vec::new();
    let mut acc = Vec::new();
    let mut wall = Vec::new();
    let l = cfg.refresh_interval;
    for r in 0..cfg.rounds() {
        master = mean(local_window(&master, r * l, l));
        wall.push(started.elapsed());
        acc.push(ds.accuracy(&to_f64(&master), &ds.val));
        trajectory.push(master.clone());
    }
    let done = cfg.rounds() * l;
    let w = mean(local_window(&master, done, cfg.iterations - done));
    wall.push(started.elapsed());
    trajectory.push(w.clone());
    let final_acc = ds.accuracy(&to_f64(&w), &ds.val);
    PlainRun {
        w,
        trajectory,
        acc,
        wall,
        final_acc,
    }
}

/// Single-party plaintext trainer over the whole training split in the
/// seeded batch order.
pub fn plain_train<T: Float>(ds: &Dataset, cfg: &TrainConfig, rows: usize) -> PlainRun<T> {
    let shards = super::partition(ds, 1, 0.0, cfg.seed);
    plain_distributed(ds, cfg, &shards, rows)
}
