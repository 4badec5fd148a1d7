//! Seeded random streams.
//!
//! Every independent unit of work (a record chunk, a bootstrap replica, a
//! Monte-Carlo sample block) draws from its own ChaCha20 stream: the key is
//! derived from the master seed and the stream id is the unit's index. Results
//! therefore do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// RNG for substream `stream` of `master_seed`.
pub fn substream(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
