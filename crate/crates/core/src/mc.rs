//! Deterministic Monte Carlo means.
//!
//! Draws are split into fixed-size chunks. Chunk `k` uses a ChaCha8 generator
//! seeded with the caller's seed on stream `k`, and chunk summaries are merged
//! in chunk order, so results do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Draws per chunk.
pub const CHUNK: usize = 1 << 16;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// Sample mean.
    #[serde(with = "crate::ext_float")]
    pub estimate: f64,
    /// Standard error of the mean.
    #[serde(with = "crate::ext_float")]
    pub standard_error: f64,
    /// Number of draws.
    pub n: usize,
}

/// Generator for chunk or path `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        let mean = if delta == 0.0 {
            self.mean
        } else {
            (self.n * self.mean + o.n * o.mean) / n
        };
        let m2 = self.m2 + o.m2 + delta * delta * self.n * o.n / n;
        Moments { n, mean, m2 }
    }
}

/// Mean and standard error of `n` draws of `draw`.
pub fn mean_estimate<F>(n: usize, seed: u64, draw: F) -> McEstimate
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            let len = CHUNK.min(n - k * CHUNK);
            let mut m = Moments {
                n: 0.0,
                mean: 0.0,
                m2: 0.0,
            };
            for _ in 0..len {
                let x = draw(&mut rng);
                m.n += 1.0;
                let delta = x - m.mean;
                if delta != 0.0 {
                    m.mean += delta / m.n;
                    m.m2 += delta * (x - m.mean);
                }
            }
            m
        })
        .collect();
    let total = parts.into_iter().fold(
        Moments {
            n: 0.0,
            mean: 0.0,
            m2: 0.0,
        },
        Moments::merge,
    );
    let var = if total.n > 1.0 { total.m2 / (total.n - 1.0) } else { 0.0 };
    McEstimate {
        estimate: total.mean,
        standard_error: (var.max(0.0) / total.n.max(1.0)).sqrt(),
        n,
    }
}
