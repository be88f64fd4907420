//! Seeded random streams.
//!
//! One master seed feeds several independent ChaCha streams, each keyed by a
//! fixed label, so enabling or disabling one subsystem leaves the random
//! sequence of every other subsystem untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batching = 2,
    Gumbel = 3,
    Augmentation = 4,
    Synthetic = 5,
    Triplets = 6,
    Split = 7,
    Diagnostics = 8,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Standard Gumbel(0, 1) draw, `-ln(-ln U)` with `U` uniform on the open interval (0, 1).
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    -(-u.ln()).ln()
}
