//! Seed derivation for reproducible parallel work.
//!
//! Every independent job gets its own ChaCha stream of the master seed,
//! so ensembles are bit-stable regardless of scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Streams reserved for in-run stationarity probes.
pub const PROBE_STREAM: u64 = 1 << 63;
/// Streams reserved for post-run ensemble measurements.
pub const MEASURE_STREAM: u64 = 1 << 62;

/// ChaCha generator on the given stream of the master seed.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
