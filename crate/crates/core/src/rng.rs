//! Seeded, keyed random streams. Every independent unit of work (a cell, a
//! voxel, a generation chunk) draws from `ChaCha8(seed)` on its own stream,
//! so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep streams of different consumers apart.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Domain {
    CellDraw = 1,
    Baseline = 2,
    Synth = 3,
}

pub fn stream(seed: u64, domain: Domain, key: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(key);
    rng
}
