//! Seeded random streams, one per (node, purpose).
//!
//! Each stream is a ChaCha8 generator keyed by the run seed and placed on its
//! own ChaCha stream number, so the sequence depends only on
//! `(seed, node, purpose)` and is identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    BitErrors,
    Impairment,
    Traffic(u16),
    Sensing,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::BitErrors => 1,
            Purpose::Impairment => 2,
            Purpose::Sensing => 3,
            Purpose::Traffic(flow) => 0x1_0000 + flow as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub node: u32,
    pub purpose: Purpose,
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, node: u32, purpose: Purpose) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((node as u64) << 32) | purpose.tag());
        RandomStream {
            id: StreamId { node, purpose },
            rng,
        }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Next value in `[0, 1)`.
    pub fn draw_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// `true` with probability `p` (values outside `[0, 1]` saturate).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.draw_uniform() < p
    }

    /// Exponential variate with the given rate (events per second), in seconds.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        // 1 - u lies in (0, 1], so the log is finite.
        -(1.0 - self.draw_uniform()).ln() / rate
    }
}
