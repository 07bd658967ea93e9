//! Seeded random streams.
//!
//! Every random draw in an experiment comes from a ChaCha8 generator keyed by
//! the master seed. ChaCha is counter-based: besides the 256-bit key it takes
//! a 64-bit stream id, and distinct stream ids give independent sequences.
//! We split the master seed into purpose-specific streams by packing
//!
//! ```text
//! stream id = purpose (8 bits) << 56 | round (24 bits) << 32 | client (32 bits)
//! ```
//!
//! so a client's training randomness depends only on (seed, round, client id),
//! never on scheduling or on how many other draws happened before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Subset = 2,
    Partition = 3,
    Noise = 4,
    Sampling = 5,
    ClientTrain = 6,
    Synthetic = 7,
}

pub fn stream(seed: u64, purpose: Purpose, round: u32, client: u32) -> StreamRng {
    debug_assert!(round < (1 << 24));
    let id = ((purpose as u64) << 56) | (((round as u64) & 0xff_ffff) << 32) | client as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stream for a purpose that is not tied to a round or client.
pub fn purpose_stream(seed: u64, purpose: Purpose) -> StreamRng {
    stream(seed, purpose, 0, 0)
}
