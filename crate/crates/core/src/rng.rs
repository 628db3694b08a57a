use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator on a named stream. Streams keep independent consumers
/// (folds, bootstrap resamples, dropout) reproducible regardless of the order
/// in which they run.
pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
