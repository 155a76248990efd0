//! Seedable, stream-split randomness for reproducible trials.
//!
//! All randomness comes from ChaCha8 seeded through `seed_from_u64`. Four
//! fixed streams keep draw ordering independent of configuration:
//!
//! - `Scene`: pose and scale sampling inside scene generation,
//! - `Pixel`: per-landmark pixel noise (2 draws per landmark per view),
//! - `Depth`: per-landmark depth noise (1 draw per RGB-D landmark),
//! - `Dropout`: per-landmark dropout decisions (1 draw per landmark per view).
//!
//! Streams are derived by XOR-ing the base seed with the stream index times a
//! splitmix constant. Draws are consumed in ascending landmark-id order, RGB-D
//! view before headset view, and are consumed even when a sigma is zero or a
//! landmark is dropped, so counts match across configurations and ports.

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Scene = 0,
    Pixel = 1,
    Depth = 2,
    Dropout = 3,
}

const STREAM_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (stream as u64).wrapping_mul(STREAM_MIX))
}

/// Uniform in [0, 1) from the top 53 bits of one `next_u64` draw.
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Uniform in [lo, hi).
pub fn range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + uniform(rng) * (hi - lo)
}

/// Standard normal via the Box-Muller cosine branch; consumes exactly two
/// uniform draws per sample.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - uniform(rng); // (0, 1], keeps ln finite
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
