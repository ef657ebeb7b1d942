//! Seeded randomness. Every consumer draws from a ChaCha8 generator keyed by
//! `(seed, stream)` so subsystems stay decoupled: reordering data never
//! changes weight init, and adding a module never shifts another module's
//! draws.

use crate::geometry::Box;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids, one per purpose.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA_ORDER: u64 = 2;
    pub const GUMBEL: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const TEACHER: u64 = 5;
}

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random non-degenerate box for tests and oracles: center in `[0.1, 0.9]`,
/// size in `[0.05, 0.5]`.
pub fn random_box(rng: &mut impl Rng) -> Box {
    Box::new(
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.05..0.5),
        rng.random_range(0.05..0.5),
    )
    .expect("sampled box is valid")
}

/// Serializable snapshot of a ChaCha8 generator, for checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

pub fn save_state(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn restore_state(state: &RngState) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}
